"""Streaming multi-exposure exponential means over a binary frame feed.

Each channel k maintains the aged mean

    R_k(t) = (1 - a_k) * R_k(t-1) + a_k * B(t),        a_k = 1 / W_k,

where W_k is the effective exposure window in frames.  A ladder of
geometrically spaced windows turns the photon bit-stream into a virtual
multi-exposure stack that is updated in one multiply (plus one add when
the bit is set) per pixel per channel, and can be polled at any time for
an 8-bit snapshot.

Snapshot contract: a single writer feeds ``update``; any number of
readers call ``poll`` concurrently.  Consistency is enforced with a
seqlock — the writer bumps a version counter to odd before mutating and
back to even after, and readers retry the copy until they observe the
same even version on both sides.  Writers never block; readers never
observe channels from two different frame indices.
"""

import threading
import time
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, SequenceError
from .sensor import BitPlane

DEFAULT_CHANNELS = 8
DEFAULT_W_MIN = 16.0
DEFAULT_W_MAX = 4096.0


@dataclass(frozen=True)
class ExposureLadder:
    """Effective exposure windows, in frames, longest first."""

    windows: tuple[float, ...]

    def __post_init__(self):
        ws = tuple(float(w) for w in self.windows)
        if len(ws) < 1:
            raise ConfigError("ladder needs at least one window")
        if any(w < 1.0 or not np.isfinite(w) for w in ws):
            raise ConfigError("window lengths must be finite and >= 1 frame")
        if any(a <= b for a, b in zip(ws, ws[1:])):
            raise ConfigError("windows must be strictly decreasing (longest first)")
        object.__setattr__(self, "windows", ws)

    @property
    def channels(self) -> int:
        return len(self.windows)

    @property
    def alphas(self) -> tuple[float, ...]:
        return tuple(1.0 / w for w in self.windows)

    @classmethod
    def geometric(
        cls,
        channels: int = DEFAULT_CHANNELS,
        w_min: float = DEFAULT_W_MIN,
        w_max: float = DEFAULT_W_MAX,
    ) -> "ExposureLadder":
        """Geometrically spaced windows spanning [w_min, w_max]."""
        if channels == 1:
            if w_min != w_max:
                raise ConfigError("single-channel ladder requires w_min == w_max")
            return cls((float(w_max),))
        if not 1.0 <= w_min < w_max:
            raise ConfigError("need 1 <= w_min < w_max")
        ratio = (w_max / w_min) ** (1.0 / (channels - 1))
        ws = [w_min * ratio**k for k in range(channels)]
        ws[-1] = float(w_max)  # kill accumulation error at the top end
        return cls(tuple(reversed(ws)))

    @classmethod
    def dyadic(cls, min_exp: int = 4, max_exp: int = 12) -> "ExposureLadder":
        """Power-of-two windows 2**max_exp .. 2**min_exp (9 channels by default)."""
        if min_exp >= max_exp:
            raise ConfigError("need min_exp < max_exp")
        return cls(tuple(float(2**e) for e in range(max_exp, min_exp - 1, -1)))

    @classmethod
    def default(cls) -> "ExposureLadder":
        return cls.geometric()


def effective_window(alpha: float) -> float:
    """Window length (frames) equivalent to an aging factor: W = 1/alpha."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError("aging factor must be in (0, 1]")
    return 1.0 / alpha


def quantize_u8(values: np.ndarray) -> np.ndarray:
    """Quantize [0, 1] floats to 8 bits, rounding half away from zero."""
    return np.floor(values * 255.0 + 0.5).astype(np.uint8)


class ExposureStack:
    """A consistent snapshot of all channels at one frame index.

    Quantization is deferred to first access: the snapshot copy is the
    consistency-critical step, and pollers should return as fast as
    possible.  ``raw`` is None unless the poll requested full precision.
    """

    __slots__ = ("timestamp", "windows", "_quantized", "_raw", "_expose_raw")

    def __init__(self, timestamp: int, windows: tuple[float, ...],
                 quantized: np.ndarray | None = None, raw: np.ndarray | None = None,
                 expose_raw: bool | None = None):
        if quantized is None and raw is None:
            raise ValueError("a stack needs quantized or raw planes")
        self.timestamp = timestamp
        self.windows = tuple(windows)
        self._quantized = quantized
        self._raw = raw
        self._expose_raw = raw is not None if expose_raw is None else expose_raw

    @property
    def quantized(self) -> np.ndarray:
        if self._quantized is None:
            self._quantized = quantize_u8(self._raw)
        return self._quantized

    @property
    def raw(self) -> np.ndarray | None:
        return self._raw if self._expose_raw else None

    @property
    def channels(self) -> int:
        planes = self._quantized if self._quantized is not None else self._raw
        return planes.shape[0]

    @property
    def height(self) -> int:
        planes = self._quantized if self._quantized is not None else self._raw
        return planes.shape[1]

    @property
    def width(self) -> int:
        planes = self._quantized if self._quantized is not None else self._raw
        return planes.shape[2]

    def values(self) -> np.ndarray:
        """Channel values in [0, 1]: raw if available, else dequantized."""
        if self.raw is not None:
            return self.raw
        return self.quantized / 255.0


class Sketch:
    """Online multi-exposure state for one sensor.

    State is kept in float64 by default; aging factors as small as 1/4096
    leave float32 recursions a few 1e-6 away from the exact exponential
    sum over long streams, which is outside this module's accuracy
    contract.  Pass ``dtype=np.float32`` to halve memory when that
    tolerance is acceptable.
    """

    def __init__(self, ladder: ExposureLadder, width: int, height: int,
                 r0: float = 0.0, dtype=np.float64):
        if width < 1 or height < 1:
            raise ConfigError("sketch dimensions must be positive")
        if not 0.0 <= r0 <= 1.0:
            raise ConfigError("initial value must be in [0, 1]")
        self.ladder = ladder
        self._alpha = np.asarray(ladder.alphas, dtype=dtype)
        self._alpha_col = self._alpha[:, None]
        self._alpha_cube = self._alpha[:, None, None]
        self._decay_cube = np.asarray(1.0, dtype=dtype) - self._alpha_cube
        self._state = np.full((ladder.channels, height, width), r0, dtype=dtype)
        self._flat = self._state.reshape(ladder.channels, -1)  # shared buffer
        self._t = 0
        self._ops = 0
        self._version = 0   # seqlock: odd while an update is in flight
        self._write_lock = threading.Lock()  # guards against accidental double writers

    @property
    def channels(self) -> int:
        return self.ladder.channels

    @property
    def height(self) -> int:
        return self._state.shape[1]

    @property
    def width(self) -> int:
        return self._state.shape[2]

    @property
    def pixels(self) -> int:
        return self._state.shape[1] * self._state.shape[2]

    @property
    def t(self) -> int:
        """Number of frames absorbed so far."""
        return self._t

    @property
    def op_counter(self) -> int:
        """Exact count of floating-point operations spent in updates."""
        return self._ops

    def update(self, bitplane: BitPlane) -> None:
        """Absorb the next binary frame.

        The feed is strictly monotone: the bitplane's timestamp must equal
        the number of frames already absorbed.
        """
        bits = bitplane.bits
        if bits.shape != self._state.shape[1:]:
            raise ValueError(
                f"bitplane shape {bits.shape} does not match sketch {self._state.shape[1:]}"
            )
        if bitplane.timestamp != self._t:
            raise SequenceError(
                f"expected frame {self._t}, got {bitplane.timestamp} (feed must be in order)"
            )
        ones = int(np.count_nonzero(bits))
        state = self._state
        with self._write_lock:
            self._version += 1
            state *= self._decay_cube                      # 1 multiply / pixel / channel
            if ones == bits.size:
                state += self._alpha_cube                  # 1 add / pixel / channel
            elif ones:
                # 1 add per set pixel per channel
                self._flat[:, np.flatnonzero(bits)] += self._alpha_col
            self._t += 1
            self._ops += self.channels * (bits.size + ones)
            self._version += 1

    def poll(self, include_raw: bool = False) -> ExposureStack:
        """Return an 8-bit snapshot consistent to a single frame index.

        Lock-free for the writer: readers retry until a copy completes
        without an intervening update, yielding the GIL between attempts
        so the writer can finish (spinning would hold it and livelock).
        """
        while True:
            v1 = self._version
            if v1 & 1:
                time.sleep(0)   # writer mid-update
                continue
            raw = self._state.copy()
            t = self._t
            if self._version == v1:
                break
            time.sleep(0)       # torn copy: let the writer get ahead
        return ExposureStack(t, self.ladder.windows, raw=raw, expose_raw=include_raw)


def new_sketch(ladder: ExposureLadder, width: int, height: int, r0: float = 0.0) -> Sketch:
    """Create a sketch with every channel initialized to ``r0``."""
    return Sketch(ladder, width, height, r0=r0)


def flop_budget(sketch: Sketch, frames: int) -> float:
    """Floating-point operations per pixel per frame spent so far."""
    if frames < 1:
        raise ValueError("frames must be >= 1")
    return sketch.op_counter / (sketch.pixels * frames)
