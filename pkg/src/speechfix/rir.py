"""Image-source room impulse responses for shoebox rooms."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import signal as sps

SPEED_OF_SOUND = 343.0
SINC_HALF_WIDTH = 20  # fractional-delay taps on each side of the arrival
REFLECTION_HIGHPASS_HZ = 50.0
SABINE_CONSTANT = 0.161  # s/m


@dataclass(frozen=True)
class RoomSpec:
    dimensions: tuple[float, float, float]
    source_pos: tuple[float, float, float]
    mic_pos: tuple[float, float, float]
    rt60: float
    max_order: int | None = None  # None: every image arriving within the RIR length

    def __post_init__(self):
        dims = np.asarray(self.dimensions, dtype=float)
        if dims.shape != (3,) or np.any(dims <= 0):
            raise ValueError(f"invalid room dimensions {self.dimensions}")
        for name in ("source_pos", "mic_pos"):
            p = np.asarray(getattr(self, name), dtype=float)
            if p.shape != (3,) or np.any(p <= 0) or np.any(p >= dims):
                raise ValueError(f"{name} {tuple(p)} not strictly inside room {tuple(dims)}")
        if not self.rt60 > 0:
            raise ValueError("rt60 must be positive")

    @property
    def volume(self) -> float:
        return float(np.prod(self.dimensions))

    @property
    def surface(self) -> float:
        x, y, z = self.dimensions
        return 2.0 * (x * y + y * z + x * z)

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "RoomSpec":
        return cls(
            tuple(d["dimensions"]), tuple(d["source_pos"]), tuple(d["mic_pos"]),
            float(d["rt60"]), d.get("max_order"),
        )


def sabine_absorption(room: RoomSpec) -> float:
    """Uniform wall absorption giving ``room.rt60`` by Sabine's formula."""
    return SABINE_CONSTANT * room.volume / (room.rt60 * room.surface)


def _fractional_delay_taps(frac: np.ndarray) -> np.ndarray:
    """Hann-windowed sinc taps, shape (len(frac), 2 * SINC_HALF_WIDTH + 1)."""
    k = np.arange(-SINC_HALF_WIDTH, SINC_HALF_WIDTH + 1)
    t = k[None, :] - frac[:, None]
    window = 0.5 + 0.5 * np.cos(np.pi * t / (SINC_HALF_WIDTH + 1))
    return np.sinc(t) * window


def _image_slices(room: RoomSpec, max_dist: float):
    """Yield (distance, reflection order, lattice key) for image sources in slices.

    Images are enumerated on the 3-D lattice; the y axis is looped over and the
    x/z axes are vectorised, so memory stays bounded for long responses.
    """
    dims = np.asarray(room.dimensions, dtype=float)
    src = np.asarray(room.source_pos, dtype=float)
    mic = np.asarray(room.mic_pos, dtype=float)
    coords, counts = [], []
    for axis in range(3):
        big = int(np.ceil(max_dist / (2 * dims[axis]))) + 1
        n = np.arange(-big, big + 1)
        # even images sit at 2nL + s (|2n| reflections), odd at 2nL - s (|2n - 1|)
        coords.append(np.concatenate([2 * n * dims[axis] + src[axis], 2 * n * dims[axis] - src[axis]]) - mic[axis])
        counts.append(np.concatenate([np.abs(2 * n), np.abs(2 * n - 1)]))
    dx2 = coords[0] ** 2
    dz2 = coords[2] ** 2
    for iy, dy in enumerate(coords[1]):
        d2 = dx2[:, None] + dy**2 + dz2[None, :]
        order = counts[0][:, None] + counts[1][iy] + counts[2][None, :]
        keep = d2 <= max_dist**2
        if room.max_order is not None:
            keep &= order <= room.max_order
        if np.any(keep):
            yield iy, np.sqrt(d2[keep]), order[keep]


def _energy_histogram(room, max_dist, sample_rate, bin_size):
    num_bins = int(np.ceil(max_dist / SPEED_OF_SOUND * sample_rate / bin_size)) + 1
    rows = []
    max_order = 0
    for _, dist, order in _image_slices(room, max_dist):
        b = (dist / SPEED_OF_SOUND * sample_rate / bin_size).astype(np.int64)
        rows.append((b, order, 1.0 / (4.0 * np.pi * dist) ** 2))
        max_order = max(max_order, int(order.max()))
    hist = np.zeros((num_bins, max_order + 1))
    for b, order, e in rows:
        np.add.at(hist, (b, order), e)
    return hist


def _decay_rt60(hist: np.ndarray, beta: float, bin_rate: float) -> float:
    energy = hist @ (beta ** (2.0 * np.arange(hist.shape[1])))
    edc = np.cumsum(energy[::-1])[::-1]
    if edc[-1] / edc[0] > 10 ** (-2.5):
        return np.inf  # never reaches -25 dB within the response
    try:
        return schroeder_rt60(energy, bin_rate, energy_input=True)
    except ValueError:
        return 0.0  # drops through the whole fit range within one bin


def calibrate_absorption(room: RoomSpec, sample_rate: int = 44100, bin_size: int = 22) -> float:
    """Per-reflection absorption whose image-source decay matches ``room.rt60``.

    Sabine's formula assumes a diffuse field; the image lattice of a shoebox is
    not diffuse (axial paths decay slowest), so its Schroeder decay can miss the
    Sabine target by tens of percent. Starting from the Sabine value, bisect on
    the absorption until the lattice's own energy decay gives the target RT60.
    """
    alpha_sabine = sabine_absorption(room)
    if alpha_sabine > 1.0:
        raise ValueError(
            f"infeasible RT60: {room.rt60} s needs absorption {alpha_sabine:.3f} > 1 in this room"
        )
    max_dist = _response_length(room, sample_rate) / sample_rate * SPEED_OF_SOUND
    hist = _energy_histogram(room, max_dist, sample_rate, bin_size)
    bin_rate = sample_rate / bin_size

    # search on log(1 - alpha), i.e. on the per-reflection energy loss
    lo, hi = np.log(1e-6), np.log(1.0 - 1e-9)  # strong absorption .. none
    x0 = np.log(max(1.0 - alpha_sabine, 1e-6))
    for _ in range(60):
        rt = _decay_rt60(hist, np.exp(0.5 * x0), bin_rate)
        if abs(rt - room.rt60) <= 1e-3 * room.rt60:
            break
        if rt > room.rt60:
            hi = x0
        else:
            lo = x0
        x0 = 0.5 * (lo + hi)
    return float(1.0 - np.exp(x0))


def _response_length(room: RoomSpec, sample_rate: int) -> int:
    direct = np.linalg.norm(np.subtract(room.source_pos, room.mic_pos))
    return int(np.ceil(room.rt60 * sample_rate + direct / SPEED_OF_SOUND * sample_rate))


def simulate_rir(
    room: RoomSpec,
    sample_rate: int = 44100,
    seed: int = 0,
    absorption: float | None = None,
) -> np.ndarray:
    """Impulse response from source to an omnidirectional microphone.

    Each image source contributes ``beta**n / (4 pi d)`` at delay ``d / c``
    where ``n`` counts wall reflections and ``beta = sqrt(1 - absorption)``.
    Without an explicit ``absorption`` it is derived from ``room.rt60`` (see
    :func:`calibrate_absorption`). ``seed`` drives a sub-millimetre jitter of
    reflected image positions that breaks the perfectly periodic arrival
    pattern of the lattice.
    """
    if absorption is None:
        alpha = calibrate_absorption(room, sample_rate)
    else:
        alpha = float(absorption)
        if not 0.0 <= alpha <= 1.0:
            raise ValueError(f"absorption {alpha} outside [0, 1]")
    beta = np.sqrt(1.0 - alpha)

    length = _response_length(room, sample_rate) + 2 * SINC_HALF_WIDTH + 1
    max_dist = length / sample_rate * SPEED_OF_SOUND
    rng = np.random.default_rng(seed)
    pad = SINC_HALF_WIDTH
    direct = np.zeros(length + 2 * pad + 1)
    reflected = np.zeros_like(direct)
    offsets = np.arange(-pad, pad + 1)
    for _, dist, order in _image_slices(room, max_dist):
        if beta == 0.0:
            amp = (order == 0).astype(float)
        else:
            amp = beta ** order.astype(float)
        live = amp > 0
        if not np.any(live):
            continue
        dist, order, amp = dist[live], order[live], amp[live] / (4.0 * np.pi * dist[live])
        jitter = np.where(order == 0, 0.0, rng.uniform(-5e-4, 5e-4, size=dist.size))
        delay = (dist + jitter) / SPEED_OF_SOUND * sample_rate
        whole = np.floor(delay).astype(np.int64)
        taps = _fractional_delay_taps(delay - whole) * amp[:, None]
        idx = whole[:, None] + offsets[None, :] + pad
        first = order == 0
        if np.any(first):
            direct += np.bincount(idx[first].ravel(), weights=taps[first].ravel(), minlength=direct.size)
        reflected += np.bincount(
            idx[~first].ravel(), weights=taps[~first].ravel(), minlength=reflected.size
        )
    # dense all-positive late arrivals pile up below ~1/rt60 Hz; high-pass them
    # as in Allen & Berkley so the decay follows the image energies
    sos = sps.butter(2, REFLECTION_HIGHPASS_HZ, "highpass", fs=sample_rate, output="sos")
    out = direct + sps.sosfilt(sos, reflected)
    return out[pad : pad + length]


def schroeder_rt60(
    rir: np.ndarray, sample_rate: float, fit_range=(-5.0, -25.0), energy_input: bool = False
) -> float:
    """RT60 from a linear fit (T20 by default) to the Schroeder decay curve."""
    energy = np.asarray(rir, dtype=float)
    if not energy_input:
        energy = energy**2
    edc = np.cumsum(energy[::-1])[::-1]
    edc_db = 10.0 * np.log10(edc / edc[0] + 1e-300)
    hi, lo = fit_range
    start = np.argmax(edc_db <= hi)
    stop = np.argmax(edc_db <= lo)
    if stop <= start:
        raise ValueError("decay curve does not span the fit range")
    t = np.arange(start, stop) / sample_rate
    slope, _ = np.polyfit(t, edc_db[start:stop], 1)
    return -60.0 / slope


def sample_room(seed: int, rt60_range=(0.05, 1.0), dim_range=(3.0, 10.0), margin=0.5) -> RoomSpec:
    """Draw a feasible random room; infeasible draws are redrawn.

    The smallest volume-to-surface ratio a box can have is ``dim_range[0] / 6``
    (the smallest cube), so RT60 values below ``SABINE_CONSTANT * dim_range[0] / 6`` are
    never reachable. A range lying entirely below that bound raises ValueError.
    """
    shortest = SABINE_CONSTANT * dim_range[0] / 6.0
    if rt60_range[1] < shortest:
        raise ValueError(f"infeasible RT60 range {tuple(rt60_range)}: rooms of at least "
                         f"{dim_range[0]} m cannot decay faster than {shortest:.4f} s")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x524F4F4D]))
    while True:
        dims = rng.uniform(*dim_range, size=3)
        rt60 = float(rng.uniform(*rt60_range))
        src = rng.uniform(margin, dims - margin)
        mic = rng.uniform(margin, dims - margin)
        room = RoomSpec(tuple(dims.tolist()), tuple(src.tolist()), tuple(mic.tolist()), rt60)
        if sabine_absorption(room) <= 1.0 and np.linalg.norm(src - mic) > 0.1:
            return room
