"""Binary quanta-sensor forward model.

A single-photon pixel reports one bit per readout cycle: whether at least
one photon (or dark count) fired during the cycle.  Arrivals are Poisson
with per-frame rate ``pdp * flux + dark_rate / frame_rate``, so the hit
probability is ``p = 1 - exp(-rate)`` and only that Bernoulli outcome
needs to be sampled; the full Poisson count is never observed.

Randomness is counter-based (Philox keyed by ``(seed, frame_index)``), so
any frame of a stream can be generated independently of evaluation order.
"""

from dataclasses import dataclass
from typing import Callable, Iterable, Iterator

import numpy as np

from .errors import ConfigError


def _as_flux_array(data) -> np.ndarray:
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.size == 0:
        raise ValueError("flux frame must be a non-empty 2-D array")
    if not np.all(np.isfinite(data)):
        raise ValueError("flux values must be finite")
    if np.any(data < 0.0):
        raise ValueError("flux values must be non-negative")
    return data


@dataclass(frozen=True)
class FluxFrame:
    """Latent per-pixel photon rate, in photons per frame."""

    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "data", _as_flux_array(self.data))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape


@dataclass(frozen=True)
class BitPlane:
    """One binary frame: 1 where the pixel detected at least one photon."""

    bits: np.ndarray
    timestamp: int = 0

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if bits.ndim != 2 or bits.size == 0:
            raise ValueError("bitplane must be a non-empty 2-D array")
        if bits.dtype != np.uint8:
            bits = bits.astype(np.uint8)
        if bits.max(initial=0) > 1:
            raise ValueError("bitplane values must be 0 or 1")
        if self.timestamp < 0:
            raise ValueError("frame index must be non-negative")
        object.__setattr__(self, "bits", bits)

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.bits.shape


@dataclass(frozen=True)
class HotPixelMask:
    """Boolean map of pixels with anomalously high dark counts."""

    flags: np.ndarray

    def __post_init__(self):
        flags = np.asarray(self.flags, dtype=bool)
        if flags.ndim != 2 or flags.size == 0:
            raise ValueError("hot-pixel mask must be a non-empty 2-D array")
        object.__setattr__(self, "flags", flags)

    @property
    def shape(self) -> tuple[int, int]:
        return self.flags.shape

    @property
    def count(self) -> int:
        return int(np.count_nonzero(self.flags))


@dataclass(frozen=True)
class SensorConfig:
    """Detector parameters of the simulated sensor.

    ``pdp`` is the photon detection probability; by convention flux values
    are usually pre-scaled by it, so the default is 1.  Hot pixels fire
    with ``hot_dark_factor`` times the nominal dark rate.
    """

    pdp: float = 1.0
    dark_rate: float = 7.5            # counts per second per pixel
    frame_rate: float = 20_000.0      # binary frames per second
    hot_pixel_mask: HotPixelMask | None = None
    hot_dark_factor: float = 100.0

    def __post_init__(self):
        if not 0.0 < self.pdp <= 1.0:
            raise ConfigError("sensor.pdp must be in (0, 1]")
        if self.dark_rate < 0.0 or not np.isfinite(self.dark_rate):
            raise ConfigError("sensor.dark_rate must be finite and >= 0")
        if not 1e4 <= self.frame_rate <= 1e5:
            raise ConfigError("sensor.frame_rate must be in [1e4, 1e5] frames/s")
        if self.hot_dark_factor < 1.0:
            raise ConfigError("sensor.hot_dark_factor must be >= 1")
        if self.dark_per_frame * self.hot_dark_factor >= 1.0:
            raise ConfigError("per-frame dark count must stay below 1")

    @property
    def dark_per_frame(self) -> float:
        return self.dark_rate / self.frame_rate


def detection_probability(flux, dark_per_frame=0.0):
    """Probability that a pixel with ``flux`` photons/frame fires.

    ``p = 1 - exp(-(flux + dark_per_frame))``, evaluated with expm1 so the
    inverse (``recon.invert_response``) round-trips to ~1 ulp.
    """
    lam = np.asarray(flux, dtype=np.float64)
    d = np.asarray(dark_per_frame, dtype=np.float64)
    if not (np.all(np.isfinite(lam)) and np.all(np.isfinite(d))):
        raise ValueError("flux and dark rate must be finite")
    if np.any(lam < 0.0) or np.any(d < 0.0):
        raise ValueError("flux and dark rate must be non-negative")
    p = -np.expm1(-(lam + d))
    return float(p) if p.ndim == 0 else p


def frame_rng(seed: int, t: int) -> np.random.Generator:
    """Counter-based generator for frame ``t`` of a stream seeded ``seed``."""
    if t < 0:
        raise ValueError("frame index must be non-negative")
    key = np.array([seed % (1 << 64), t], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _per_frame_rate(flux: FluxFrame, cfg: SensorConfig) -> np.ndarray:
    rate = cfg.pdp * flux.data + cfg.dark_per_frame
    mask = cfg.hot_pixel_mask
    if mask is not None:
        if mask.shape != flux.shape:
            raise ValueError(
                f"hot-pixel mask shape {mask.shape} does not match flux {flux.shape}"
            )
        rate = rate + mask.flags * (cfg.hot_dark_factor - 1.0) * cfg.dark_per_frame
    return rate


def simulate_bitplane(flux: FluxFrame, cfg: SensorConfig, seed: int, t: int = 0) -> BitPlane:
    """Draw one binary frame from the soft-saturating forward model.

    Identical ``(seed, t)`` always yields the identical bitplane.
    """
    rate = _per_frame_rate(flux, cfg)
    p = -np.expm1(-rate)
    u = frame_rng(seed, t).random(flux.shape)
    return BitPlane((u < p).astype(np.uint8), timestamp=t)


def simulate_sequence(
    flux_provider: Callable[[int], FluxFrame],
    cfg: SensorConfig,
    n_frames: int,
    seed: int,
) -> Iterator[BitPlane]:
    """Yield ``n_frames`` bitplanes driven by a per-frame flux provider."""
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    shape = None
    for t in range(n_frames):
        flux = flux_provider(t)
        if shape is None:
            shape = flux.shape
        elif flux.shape != shape:
            raise ValueError(
                f"flux provider changed shape from {shape} to {flux.shape} at frame {t}"
            )
        yield simulate_bitplane(flux, cfg, seed, t)


def calibrate_hot_pixels(dark_frames: Iterable[BitPlane], z_threshold: float = 6.0) -> HotPixelMask:
    """Flag pixels whose dark count is an outlier of the per-pixel distribution.

    A pixel is hot iff its count over the capture exceeds
    ``mean + z_threshold * std`` of all per-pixel counts.  Requires at
    least 256 zero-flux frames for the count statistics to be usable.
    """
    counts = None
    n = 0
    for frame in dark_frames:
        if counts is None:
            counts = np.zeros(frame.shape, dtype=np.int64)
        elif frame.shape != counts.shape:
            raise ValueError("dark frames must share one shape")
        counts += frame.bits
        n += 1
    if counts is None:
        raise ValueError("no dark frames supplied")
    if n < 256:
        raise ValueError(f"hot-pixel calibration needs >= 256 dark frames, got {n}")
    mean = counts.mean()
    std = counts.std()
    return HotPixelMask(counts > mean + z_threshold * std)
