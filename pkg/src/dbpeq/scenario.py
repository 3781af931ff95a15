"""Reproducible experiment instances.

Generates everything one Monte-Carlo trial needs: the system
configuration, channel matrices, colored-noise pilot samples, QAM
symbol blocks, and the balanced antenna-cluster partition. Each trial
draws from its own RNG substream, so trials are order-independent and
safe to run in parallel.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .numerics import hermitize

MODULATIONS = ("qpsk", "qam16")
CHANNEL_MODELS = ("rayleigh", "one_ring")

# Substream tags, so channel / pilot-noise / symbol / data-noise draws
# stay decoupled from each other.
_STREAM_CHANNEL = 0
_STREAM_SYMBOLS = 1


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SystemConfig:
    """All scenario scalars for one experiment."""

    M: int
    K: int
    C: int
    N: int
    Es: float = 1.0
    snr_db: float = 10.0
    iot_db: float = 10.0
    n_interf: Optional[int] = None
    n_coh: int = 480
    modulation: str = "qam16"
    channel_model: str = "rayleigh"
    seed: int = 0

    def __post_init__(self):
        if self.n_interf is None:
            object.__setattr__(self, "n_interf", self.K)
        if not (self.M > self.K >= 1):
            raise ConfigError(f"need M > K >= 1, got M={self.M}, K={self.K}")
        if not (1 <= self.C <= self.M):
            raise ConfigError(f"need 1 <= C <= M, got C={self.C}")
        if self.N <= self.K:
            raise ConfigError(f"need N > K, got N={self.N}, K={self.K}")
        if self.Es <= 0:
            raise ConfigError("Es must be positive")
        if self.iot_db < 0:
            raise ConfigError("iot_db must be >= 0 (0 dB means pure AWGN)")
        if self.n_coh < 1:
            raise ConfigError("n_coh must be >= 1")
        if self.n_interf < 0:
            raise ConfigError("n_interf must be >= 0")
        if self.modulation not in MODULATIONS:
            raise ConfigError(f"unknown modulation {self.modulation!r}")
        if self.channel_model not in CHANNEL_MODELS:
            raise ConfigError(f"unknown channel model {self.channel_model!r}")

    def with_updates(self, **kw) -> "SystemConfig":
        return replace(self, **kw)


def derive_powers(cfg: SystemConfig) -> tuple[float, float]:
    """Background-noise power N0 and interference power factor beta.

    SNR = 10 log10(Es/N0) and IoT = 10 log10((beta*Es + N0)/N0); this
    inverts both definitions.
    """
    n0 = cfg.Es / 10.0 ** (cfg.snr_db / 10.0)
    beta = n0 * (10.0 ** (cfg.iot_db / 10.0) - 1.0) / cfg.Es
    return n0, beta


@dataclass(frozen=True)
class ClusterPartition:
    """Balanced row partition of the M antennas into C clusters."""

    sizes: tuple[int, ...]
    offsets: tuple[int, ...]

    @property
    def C(self) -> int:
        return len(self.sizes)

    def rows(self, c: int) -> slice:
        return slice(self.offsets[c], self.offsets[c] + self.sizes[c])

    def split(self, a: np.ndarray) -> list[np.ndarray]:
        """Split an array along axis 0 into per-cluster blocks."""
        return [a[self.rows(c)] for c in range(self.C)]


def balanced_partition(m: int, c: int) -> ClusterPartition:
    """First m % c clusters get ceil(m/c) rows, the rest floor(m/c)."""
    base, extra = divmod(m, c)
    sizes = tuple(base + 1 if i < extra else base for i in range(c))
    offsets = tuple(int(x) for x in np.cumsum((0,) + sizes[:-1]))
    return ClusterPartition(sizes=sizes, offsets=offsets)


@dataclass(frozen=True)
class Realization:
    """One channel draw: target channel, interference channel, pilot noise."""

    H: np.ndarray        # M x K
    Hbar: np.ndarray     # M x n_interf
    noise: np.ndarray    # M x N pilot noise samples (columns)
    partition: ClusterPartition

    def H_blocks(self) -> list[np.ndarray]:
        return self.partition.split(self.H)

    def noise_blocks(self) -> list[np.ndarray]:
        return self.partition.split(self.noise)


@dataclass(frozen=True)
class SymbolBlock:
    """Transmitted constellation symbols and the received signals."""

    S: np.ndarray  # K x n_coh
    Y: np.ndarray  # M x n_coh


def _substream(seed: int, trial: int, tag: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(trial), int(tag)]))


def _cn(rng: np.random.Generator, *shape) -> np.ndarray:
    """Standard circularly-symmetric complex Gaussian draws."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def _steering(m: int, angles: np.ndarray) -> np.ndarray:
    """ULA steering vectors (half-wavelength spacing), one column per angle."""
    k = np.arange(m)[:, None]
    return np.exp(1j * np.pi * k * np.sin(angles)[None, :])


def _one_ring_channel(rng: np.random.Generator, m: int, n_ue: int) -> np.ndarray:
    # Per-UE local scattering: mean angle uniform in a 120 deg sector,
    # 20 subpaths with ~2 deg angular spread, unit average entry power.
    n_paths = 20
    spread = np.deg2rad(2.0)
    h = np.zeros((m, n_ue), dtype=np.complex128)
    for u in range(n_ue):
        theta = rng.uniform(-np.pi / 3, np.pi / 3)
        deltas = theta + spread * rng.standard_normal(n_paths)
        gains = _cn(rng, n_paths)
        h[:, u] = _steering(m, deltas) @ gains / np.sqrt(n_paths)
    return h


def gen_realization(cfg: SystemConfig, trial: int) -> Realization:
    """Deterministic channel + pilot-noise draw for (cfg.seed, trial).

    Pilot noise column i is sqrt(beta*Es)*Hbar@w_i + sqrt(N0)*z_i, so the
    sample covariance converges to beta*Es*Hbar@Hbar^H + N0*I.
    """
    rng = _substream(cfg.seed, trial, _STREAM_CHANNEL)
    n0, beta = derive_powers(cfg)
    if cfg.channel_model == "rayleigh":
        h = _cn(rng, cfg.M, cfg.K)
        hbar = _cn(rng, cfg.M, cfg.n_interf)
    else:
        h = _one_ring_channel(rng, cfg.M, cfg.K)
        hbar = _one_ring_channel(rng, cfg.M, cfg.n_interf)
    w = _cn(rng, cfg.n_interf, cfg.N)
    z = _cn(rng, cfg.M, cfg.N)
    noise = np.sqrt(beta * cfg.Es) * (hbar @ w) + np.sqrt(n0) * z
    return Realization(
        H=h, Hbar=hbar, noise=noise, partition=balanced_partition(cfg.M, cfg.C)
    )


def gen_symbol_block(cfg: SystemConfig, realization: Realization, trial: int) -> SymbolBlock:
    """Draw n_coh data symbols and the corresponding received signals."""
    rng = _substream(cfg.seed, trial, _STREAM_SYMBOLS)
    n0, beta = derive_powers(cfg)
    points = constellation(cfg.modulation, cfg.Es)
    idx = rng.integers(0, points.size, size=(cfg.K, cfg.n_coh))
    s = points[idx]
    w = _cn(rng, cfg.n_interf, cfg.n_coh)
    z = _cn(rng, cfg.M, cfg.n_coh)
    y = realization.H @ s + np.sqrt(beta * cfg.Es) * (realization.Hbar @ w) + np.sqrt(n0) * z
    return SymbolBlock(S=s, Y=y)


def sample_covariance(noise: np.ndarray) -> np.ndarray:
    """(1/N) * noise @ noise^H, hermitized."""
    noise = np.asarray(noise)
    n = noise.shape[1]
    return hermitize(noise @ noise.conj().T / n)


def _axis_levels(modulation: str, es: float) -> np.ndarray:
    if modulation == "qpsk":
        return np.array([-1.0, 1.0]) * np.sqrt(es / 2.0)
    return np.array([-3.0, -1.0, 1.0, 3.0]) * np.sqrt(es / 10.0)


def constellation(modulation: str, es: float) -> np.ndarray:
    """Gray-mapped square constellation with average energy Es.

    Points are ordered lexicographically by (real, imag).
    """
    if modulation not in MODULATIONS:
        raise ConfigError(f"unknown modulation {modulation!r}")
    lv = _axis_levels(modulation, es)
    re, im = np.meshgrid(lv, lv, indexing="ij")
    return (re + 1j * im).ravel()


def modulate(indices: np.ndarray, modulation: str, es: float) -> np.ndarray:
    points = constellation(modulation, es)
    return points[np.asarray(indices)]


def slice_symbols(x: np.ndarray, modulation: str, es: float) -> np.ndarray:
    """Quantize to the Euclidean-nearest constellation point.

    The decision is per axis; a value exactly on a decision boundary is
    mapped to the higher level (half-open decision regions), so slicing
    is deterministic.
    """
    lv = _axis_levels(modulation, es)
    bounds = 0.5 * (lv[:-1] + lv[1:])
    x = np.asarray(x)
    re = lv[np.digitize(x.real, bounds)]
    im = lv[np.digitize(x.imag, bounds)]
    return re + 1j * im
