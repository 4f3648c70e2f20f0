"""OFDM baseband waveform generation and PAPR measurement."""

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError, DomainError

MODULATIONS = ("QPSK", "QAM16", "QAM64")


@dataclass(frozen=True)
class IQFrame:
    """Complex baseband samples with their sample rate."""

    samples: np.ndarray
    sample_rate_hz: float

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.complex128)
        if s.ndim != 1:
            raise DomainError(f"IQFrame samples must be 1-D, got shape {s.shape}")
        if not np.all(np.isfinite(s)):
            raise DomainError("IQFrame samples must be finite")
        if not self.sample_rate_hz > 0:
            raise DomainError("sample_rate_hz must be positive")
        object.__setattr__(self, "samples", s)

    def __len__(self):
        return self.samples.size

    @property
    def power(self):
        if self.samples.size == 0:
            return 0.0
        return float(np.mean(np.abs(self.samples) ** 2))

    def with_samples(self, samples):
        return IQFrame(samples, self.sample_rate_hz)


@dataclass(frozen=True)
class OfdmConfig:
    """OFDM numerology.

    Defaults follow a 10 MHz LTE-like downlink: 1024-point symbols with 600
    active subcarriers around an unused DC bin and a 72-sample cyclic prefix.
    """

    n_subcarriers: int = 1024
    n_active: int = 600
    cp_len: int = 72
    n_symbols: int = 100
    modulation: str = "QAM64"
    sample_rate_hz: float = 15.36e6
    seed: int = 0

    def validate(self):
        if int(self.n_subcarriers) != self.n_subcarriers or self.n_subcarriers < 1:
            raise ConfigError("n_subcarriers", "must be a positive integer")
        if int(self.n_active) != self.n_active or self.n_active < 1:
            raise ConfigError("n_active", "must be a positive integer")
        if self.n_active > self.n_subcarriers:
            raise ConfigError("n_active", f"must be <= n_subcarriers ({self.n_subcarriers})")
        if int(self.cp_len) != self.cp_len or not 0 <= self.cp_len < self.n_subcarriers:
            raise ConfigError("cp_len", "must be an integer in [0, n_subcarriers)")
        if int(self.n_symbols) != self.n_symbols or self.n_symbols < 1:
            raise ConfigError("n_symbols", "must be a positive integer")
        if self.modulation not in MODULATIONS:
            raise ConfigError("modulation", f"must be one of {MODULATIONS}, got {self.modulation!r}")
        if not self.sample_rate_hz > 0:
            raise ConfigError("sample_rate_hz", "must be positive")
        if int(self.seed) != self.seed or not 0 <= self.seed < 2**64:
            raise ConfigError("seed", "must be a 64-bit unsigned integer")
        return self

    @property
    def symbol_len(self):
        return self.n_subcarriers + self.cp_len

    @property
    def frame_len(self):
        return self.n_symbols * self.symbol_len

    def to_dict(self):
        return asdict(self)


def constellation(modulation):
    """Square QAM constellation with unit average energy."""
    m = {"QPSK": 4, "QAM16": 16, "QAM64": 64}[modulation]
    side = int(round(np.sqrt(m)))
    levels = np.arange(-(side - 1), side, 2, dtype=float)
    points = (levels[:, None] + 1j * levels[None, :]).ravel()
    return points / np.sqrt(np.mean(np.abs(points) ** 2))


def active_bins(n_subcarriers, n_active):
    """FFT bin indices of the active subcarriers; DC stays empty unless every bin is used."""
    if n_active == n_subcarriers:
        return np.arange(n_subcarriers)
    n_pos = (n_active + 1) // 2
    n_neg = n_active - n_pos
    pos = np.arange(1, n_pos + 1)
    neg = np.arange(n_subcarriers - n_neg, n_subcarriers)
    return np.concatenate([pos, neg])


def subcarrier_grid(config):
    """Frequency-domain grid (n_symbols x n_subcarriers) behind `generate_ofdm`.

    The grid is scaled so that ``ifft(grid, norm="ortho")`` plus cyclic prefix
    has unit mean power, i.e. it is exactly the grid the time samples encode.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    points = constellation(config.modulation)
    bins = active_bins(config.n_subcarriers, config.n_active)
    idx = rng.integers(0, points.size, size=(config.n_symbols, bins.size))
    grid = np.zeros((config.n_symbols, config.n_subcarriers), dtype=np.complex128)
    grid[:, bins] = points[idx]
    body = np.fft.ifft(grid, axis=1, norm="ortho")
    if config.cp_len:
        body = np.concatenate([body[:, -config.cp_len:], body], axis=1)
    scale = 1.0 / np.sqrt(np.mean(np.abs(body) ** 2))
    return grid * scale


def generate_ofdm(config):
    """Generate an OFDM frame of ``n_symbols * (n_subcarriers + cp_len)`` samples.

    The frame has unit mean power and depends only on `config` (including its
    seed).
    """
    grid = subcarrier_grid(config)
    body = np.fft.ifft(grid, axis=1, norm="ortho")
    if config.cp_len:
        body = np.concatenate([body[:, -config.cp_len:], body], axis=1)
    samples = body.ravel()
    # scale is already folded into the grid; this only removes rounding drift
    samples = samples / np.sqrt(np.mean(np.abs(samples) ** 2))
    return IQFrame(samples, float(config.sample_rate_hz))


def papr_db(frame):
    """Peak-to-average power ratio in dB."""
    s = frame.samples if isinstance(frame, IQFrame) else np.asarray(frame)
    if s.size == 0:
        raise DomainError("PAPR of an empty frame is undefined")
    p = np.abs(s) ** 2
    mean = p.mean()
    if mean == 0:
        raise DomainError("PAPR of an all-zero frame is undefined")
    return max(0.0, float(10 * np.log10(p.max() / mean)))
