"""Two-stage speech restoration at desk scale: degradation simulation, mel-domain
mask estimation, mel inversion with Griffin-Lim, and objective metrics."""

__version__ = "0.1.0"
