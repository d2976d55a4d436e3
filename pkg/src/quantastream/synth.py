"""Clean high-frame-rate flux synthesis.

Procedural test cards, arc-length-parameterized motion trajectories,
subpixel compositing, flux-level scaling, the two-segment HDR transfer,
and the training-pair generator that ties rendering, sensor simulation,
and the streaming sketch together.
"""

import math
from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np
from scipy import ndimage

from .sensor import FluxFrame, SensorConfig, simulate_bitplane
from .sketch import ExposureLadder, ExposureStack, Sketch, quantize_u8

TRAJECTORY_KINDS = ("piecewise-linear", "piecewise-bezier")
_DENSE_PER_SEGMENT = 512  # polyline resolution used for arc-length parameterization


@dataclass(frozen=True)
class Trajectory:
    """Continuous 2-D path sampled at frame resolution.

    ``positions[t]`` is the (x, y) location at frame t; consecutive frames
    are one ``speed / frame_rate`` arc-length step apart.
    """

    kind: str
    speed: float
    frame_rate: float
    segments: int
    positions: np.ndarray   # (duration, 2) float64

    @property
    def duration(self) -> int:
        return self.positions.shape[0]

    def position(self, t: int) -> tuple[float, float]:
        return float(self.positions[t, 0]), float(self.positions[t, 1])


def _quadratic_bezier(p0, c, p1, s):
    s = s[:, None]
    return (1 - s) ** 2 * p0 + 2 * (1 - s) * s * c + s**2 * p1


def _dense_path(kind: str, rng: np.random.Generator, bounds, n_segments: int) -> np.ndarray:
    w, h = bounds
    pts = rng.uniform([0.0, 0.0], [w, h], size=(n_segments + 1, 2))
    s = np.linspace(0.0, 1.0, _DENSE_PER_SEGMENT, endpoint=False)
    pieces = []
    for i in range(n_segments):
        if kind == "piecewise-linear":
            pieces.append(pts[i] + s[:, None] * (pts[i + 1] - pts[i]))
        else:
            ctrl = rng.uniform([0.0, 0.0], [w, h], size=2)
            pieces.append(_quadratic_bezier(pts[i], ctrl, pts[i + 1], s))
    pieces.append(pts[-1:])
    return np.concatenate(pieces)


def sample_trajectory(
    kind: str,
    seed: int,
    bounds: tuple[float, float],
    speed: float,
    frame_rate: float,
    duration_frames: int,
    n_segments: int | None = None,
) -> Trajectory:
    """Draw a random path and walk it at constant per-frame arc length.

    The path has 5-10 segments with endpoints (and, for Bezier, one
    control point per segment) sampled inside ``bounds = (width, height)``.
    When the walk reaches the end of the path it folds back (ping-pong),
    keeping the position continuous.
    """
    if kind not in TRAJECTORY_KINDS:
        raise ValueError(f"unknown trajectory kind {kind!r}")
    if speed < 0:
        raise ValueError("speed must be >= 0")
    if duration_frames < 1:
        raise ValueError("duration must be >= 1 frame")
    if bounds[0] <= 0 or bounds[1] <= 0:
        raise ValueError("bounds must be positive")
    rng = np.random.default_rng(seed)
    if n_segments is None:
        n_segments = int(rng.integers(5, 11))
    if not 1 <= n_segments:
        raise ValueError("need at least one segment")
    path = _dense_path(kind, rng, bounds, n_segments)
    step = speed / frame_rate
    if step == 0.0:
        positions = np.repeat(path[:1], duration_frames, axis=0)
        return Trajectory(kind, speed, frame_rate, n_segments, positions)
    seg_len = np.linalg.norm(np.diff(path, axis=0), axis=1)
    arc = np.concatenate([[0.0], np.cumsum(seg_len)])
    total = arc[-1]
    # fold the requested arc length back and forth along the path
    want = step * np.arange(duration_frames)
    folded = np.abs((want + total) % (2.0 * total) - total)
    x = np.interp(folded, arc, path[:, 0])
    y = np.interp(folded, arc, path[:, 1])
    return Trajectory(kind, speed, frame_rate, n_segments, np.stack([x, y], axis=1))


@dataclass(frozen=True)
class MotionScene:
    """A background with either global translation or a moving sprite."""

    background: np.ndarray
    trajectory: Trajectory
    duration: int
    sprite: np.ndarray | None = None
    sprite_alpha: np.ndarray | None = None

    def __post_init__(self):
        bg = np.asarray(self.background, dtype=np.float64)
        if bg.ndim != 2 or np.any(bg < 0):
            raise ValueError("background must be a non-negative 2-D array")
        object.__setattr__(self, "background", bg)
        if self.duration < 1:
            raise ValueError("duration must be >= 1")
        if self.sprite is not None:
            spr = np.asarray(self.sprite, dtype=np.float64)
            if spr.ndim != 2 or np.any(spr < 0):
                raise ValueError("sprite must be a non-negative 2-D array")
            alpha = self.sprite_alpha
            alpha = np.ones_like(spr) if alpha is None else np.asarray(alpha, dtype=np.float64)
            if alpha.shape != spr.shape or np.any(alpha < 0) or np.any(alpha > 1):
                raise ValueError("sprite alpha must match the sprite and lie in [0, 1]")
            object.__setattr__(self, "sprite", spr)
            object.__setattr__(self, "sprite_alpha", alpha)

    @property
    def shape(self) -> tuple[int, int]:
        return self.background.shape


def _bilinear_shift(img: np.ndarray, dx: float, dy: float, wrap: bool = False) -> np.ndarray:
    # content moves by (+dx, +dy); vacated borders fill with zero, or the
    # plane is treated as periodic (global panning must stay in view)
    mode = "grid-wrap" if wrap else "constant"
    return ndimage.shift(img, (dy, dx), order=1, mode=mode, cval=0.0, prefilter=False)


def render_frame(scene: MotionScene, t: int) -> FluxFrame:
    """Composite the scene at frame t with bilinear subpixel sampling.

    Global mode pans a periodic background (content never leaves the
    frame, so long streams keep their photon statistics); sprite mode
    composites over a static background with zero fill at the canvas
    edge.
    """
    if not 0 <= t < scene.duration:
        raise ValueError(f"frame index {t} outside scene duration {scene.duration}")
    x0, y0 = scene.trajectory.position(0)
    x, y = scene.trajectory.position(t)
    dx, dy = x - x0, y - y0
    if scene.sprite is None:
        out = _bilinear_shift(scene.background, dx, dy, wrap=True)
    else:
        h, w = scene.shape
        sh, sw = scene.sprite.shape
        layer = np.zeros((h, w))
        alpha = np.zeros((h, w))
        iy, ix = int(math.floor(y)), int(math.floor(x))
        ty0, tx0 = max(0, iy), max(0, ix)
        ty1, tx1 = min(h, iy + sh), min(w, ix + sw)
        if ty1 > ty0 and tx1 > tx0:
            sy0, sx0 = ty0 - iy, tx0 - ix
            layer[ty0:ty1, tx0:tx1] = scene.sprite[sy0:sy0 + ty1 - ty0, sx0:sx0 + tx1 - tx0]
            alpha[ty0:ty1, tx0:tx1] = scene.sprite_alpha[sy0:sy0 + ty1 - ty0, sx0:sx0 + tx1 - tx0]
        fy, fx = y - iy, x - ix
        if fy or fx:
            layer = _bilinear_shift(layer, fx, fy)
            alpha = _bilinear_shift(alpha, fx, fy)
        out = scene.background * (1.0 - alpha) + layer
    return FluxFrame(np.maximum(out, 0.0))


@dataclass(frozen=True)
class HdrAugmentConfig:
    """Two-segment piecewise-linear flux transfer.

    Below ``threshold * max`` the frame is scaled into the dim range
    topped by ``lam_low``; above the knee a steeper segment pushes the
    brightest pixels toward high flux.  ``lam_low == lam_high`` collapses
    to plain linear scaling.
    """

    lam_low: float
    lam_high: float
    threshold: float = 0.8

    def __post_init__(self):
        if not 0 < self.lam_low <= self.lam_high:
            raise ValueError("need 0 < lam_low <= lam_high")
        if not 0 < self.threshold < 1:
            raise ValueError("threshold must be in (0, 1)")

    @classmethod
    def sample(cls, rng: np.random.Generator, threshold: float = 0.8) -> "HdrAugmentConfig":
        """Draw the training distribution: low ~ U(0.01, 0.1), high ~ U(0.2, 10)."""
        return cls(rng.uniform(0.01, 0.1), rng.uniform(0.2, 10.0), threshold)


def hdr_augment(frame: FluxFrame, cfg: HdrAugmentConfig) -> FluxFrame:
    """Apply the two-segment transfer; continuous at the knee, monotone."""
    data = frame.data
    m = float(data.max())
    if m <= 0:
        raise ValueError("frame must have positive maximum")
    knee = cfg.threshold * m
    base = cfg.lam_low * data / m
    out = np.where(data < knee, base, base + (cfg.lam_high - cfg.lam_low) * (data - knee) / m)
    return FluxFrame(out)


def scale_to_photon_level(frame: FluxFrame, max_photons_per_frame: float) -> FluxFrame:
    """Linearly rescale so the frame maximum equals the target flux."""
    m = float(frame.data.max())
    if m <= 0:
        raise ValueError("frame must have positive maximum")
    if max_photons_per_frame <= 0:
        raise ValueError("target flux must be positive")
    return FluxFrame(frame.data * (max_photons_per_frame / m))


def checkerboard(height: int, width: int, period: int = 16,
                 low: float = 0.1, high: float = 1.0) -> np.ndarray:
    """High-contrast test card with cell size ``period`` pixels."""
    yy, xx = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    cells = ((yy // period) + (xx // period)) % 2
    return np.where(cells == 0, low, high).astype(np.float64)


def radial_sine(height: int, width: int, period: float = 24.0,
                low: float = 0.05, high: float = 1.0) -> np.ndarray:
    """Concentric sinusoid test card, frequency rising toward the rim."""
    yy, xx = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    r = np.hypot(yy - (height - 1) / 2.0, xx - (width - 1) / 2.0)
    v = 0.5 * (1.0 + np.sin(2.0 * np.pi * r / period))
    return (low + (high - low) * v).astype(np.float64)


def fill_hot_pixels(stack: ExposureStack, flags: np.ndarray, mode: str = "median") -> ExposureStack:
    """Replace hot-pixel entries in every channel before export.

    ``median`` substitutes the 3x3 neighborhood median; ``zero`` blanks
    the pixel.
    """
    if mode not in ("median", "zero"):
        raise ValueError("fill mode must be 'median' or 'zero'")
    flags = np.asarray(flags, dtype=bool)
    raw = stack.raw.copy() if stack.raw is not None else None
    if raw is not None:
        for ch in raw:
            ch[flags] = 0.0 if mode == "zero" else ndimage.median_filter(ch, size=3)[flags]
        quantized = quantize_u8(raw)
    else:
        quantized = stack.quantized.copy()
        for ch in quantized:
            ch[flags] = 0 if mode == "zero" else ndimage.median_filter(ch, size=3)[flags]
    return ExposureStack(stack.timestamp, stack.windows, quantized, raw)


def disk_sprite(size: int, intensity: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Soft-edged bright disk plus its alpha, for local-motion scenes."""
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    r = np.hypot(yy - (size - 1) / 2.0, xx - (size - 1) / 2.0)
    alpha = np.clip((size / 2.0 - 1.0) - r + 1.0, 0.0, 1.0)
    return intensity * alpha, alpha


def scene_from_config(scene_cfg, duration: int, frame_rate: float, seed: int) -> MotionScene:
    """Build a scene from a parsed ``scene`` config section."""
    if scene_cfg.kind == "checkerboard":
        background = checkerboard(scene_cfg.height, scene_cfg.width, scene_cfg.period)
    elif scene_cfg.kind == "radial":
        background = radial_sine(scene_cfg.height, scene_cfg.width, float(scene_cfg.period))
    elif scene_cfg.kind == "pgm":
        from .formats import read_pgm  # local import keeps formats optional here

        if scene_cfg.path is None:
            raise ValueError("scene.path required for a pgm background")
        background = read_pgm(scene_cfg.path).astype(np.float64) / 255.0
    else:
        raise ValueError(f"unknown scene kind {scene_cfg.kind!r}")
    tr = scene_cfg.trajectory
    speed = 0.0 if scene_cfg.mode == "static" else tr.speed
    trajectory = sample_trajectory(
        tr.kind, seed, (background.shape[1], background.shape[0]),
        speed, frame_rate, duration, tr.segments,
    )
    sprite = alpha = None
    if scene_cfg.mode == "sprite":
        sprite, alpha = disk_sprite(scene_cfg.sprite_size)
    return MotionScene(background, trajectory, duration, sprite, alpha)


def flux_transform_from_config(run_cfg, frame_rate: float, seed: int) -> Callable[[FluxFrame], FluxFrame]:
    """Flux-level mapping for a run: HDR transfer if configured, else scaling."""
    if run_cfg.hdr is not None:
        rng = np.random.default_rng(seed)
        sampled = HdrAugmentConfig.sample(rng, run_cfg.hdr.threshold)
        cfg = HdrAugmentConfig(
            run_cfg.hdr.lam_low if run_cfg.hdr.lam_low is not None else sampled.lam_low,
            run_cfg.hdr.lam_high if run_cfg.hdr.lam_high is not None else sampled.lam_high,
            run_cfg.hdr.threshold,
        )
        return lambda frame: hdr_augment(frame, cfg)
    target = run_cfg.photons_per_second_max / frame_rate
    return lambda frame: scale_to_photon_level(frame, target)


def make_training_pair(
    scene: MotionScene,
    sensor_cfg: SensorConfig,
    ladder: ExposureLadder,
    stride: int,
    seed: int,
    flux_transform: Callable[[FluxFrame], FluxFrame] | None = None,
    hot_fill: str = "median",
) -> Iterator[tuple[ExposureStack, FluxFrame]]:
    """Stream the scene through the sensor and sketch, emitting pairs.

    Every ``stride`` frames this yields ``(exposure stack, ground-truth
    flux)`` where the ground truth is the (transformed) flux of the most
    recently absorbed frame, i.e. the state at the stack's timestamp.
    Only the sensor noise depends on the seed; ground truths do not.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    h, w = scene.shape
    sketch = Sketch(ladder, w, h)
    hot = sensor_cfg.hot_pixel_mask
    for t in range(scene.duration):
        flux = render_frame(scene, t)
        if flux_transform is not None:
            flux = flux_transform(flux)
        sketch.update(simulate_bitplane(flux, sensor_cfg, seed, t))
        if (t + 1) % stride == 0:
            stack = sketch.poll(include_raw=True)
            if hot is not None and hot.count:
                stack = fill_hot_pixels(stack, hot.flags, hot_fill)
            yield stack, flux
