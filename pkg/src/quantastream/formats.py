"""Bit-exact file formats and the JSON pipeline configuration.

Two custom little-endian binary containers keep downstream readers tiny:

QSB1, a bit-packed binary frame stream::

    magic   "QSB1"   4 bytes
    version u32
    width   u32
    height  u32
    frame_count   u64
    frame_rate_hz f64
    reserved      u64 (zero)            -> 40-byte header
    payload: frame_count x ceil(width*height/8) bytes,
             bits MSB-first within each byte, row-major per frame

QSX1, an exposure-stack snapshot::

    magic   "QSX1"   4 bytes
    version u32
    width   u32
    height  u32
    channels u32
    dtype   u8 (0 = quantized uint8, 1 = float32)
    timestamp u64
    windows  channels x f64 (longest window first)
    payload: planar channels in window order

Plus binary PGM (P5) for viewer-compatible previews and a strict JSON
config with defaults for every section.
"""

import json
import math
import os
import struct
from dataclasses import dataclass, field, fields
from typing import Iterable, Iterator

import numpy as np

from .errors import ConfigError, FormatError
from .sensor import BitPlane
from .sketch import DEFAULT_CHANNELS, DEFAULT_W_MAX, DEFAULT_W_MIN, ExposureLadder, ExposureStack

FORMAT_VERSION = 1
QSB_MAGIC = b"QSB1"
QSX_MAGIC = b"QSX1"
_QSB_HEADER = struct.Struct("<4sIIIQdQ")   # 40 bytes
_QSX_FIXED = struct.Struct("<4sIIIIBQ")    # 29 bytes + 8 * channels
_MAX_SIDE = 65535
_MAX_ELEMENTS = 1 << 28

STACK_DTYPE_U8 = 0
STACK_DTYPE_F32 = 1


def _frame_bytes(width: int, height: int) -> int:
    return (width * height + 7) // 8


def _check_dims(width: int, height: int, offset: int) -> None:
    if not (0 < width <= _MAX_SIDE and 0 < height <= _MAX_SIDE):
        raise FormatError(f"bad dimensions {width}x{height} in header at byte {offset}")
    if width * height > _MAX_ELEMENTS:
        raise FormatError(f"dimension overflow {width}x{height} in header at byte {offset}")


def pack_bits(bits: np.ndarray) -> bytes:
    """Row-major bit packing, MSB first within each byte."""
    return np.packbits(bits.reshape(-1)).tobytes()


def unpack_bits(payload: bytes, width: int, height: int) -> np.ndarray:
    flat = np.unpackbits(np.frombuffer(payload, dtype=np.uint8), count=width * height)
    return flat.reshape(height, width)


@dataclass(frozen=True)
class BitplaneFileHeader:
    width: int
    height: int
    frame_count: int
    frame_rate_hz: float
    version: int = FORMAT_VERSION


def write_bitplanes(path, planes: Iterable[BitPlane], frame_rate_hz: float) -> BitplaneFileHeader:
    """Stream bitplanes to disk; the count is backpatched after the last frame."""
    count = 0
    width = height = None
    with open(path, "wb") as fh:
        fh.write(_QSB_HEADER.pack(QSB_MAGIC, FORMAT_VERSION, 0, 0, 0, float(frame_rate_hz), 0))
        for plane in planes:
            if width is None:
                height, width = plane.shape
            elif plane.shape != (height, width):
                raise FormatError(
                    f"frame {count} shape {plane.shape} differs from stream shape {(height, width)}"
                )
            fh.write(pack_bits(plane.bits))
            count += 1
        if width is None:
            raise FormatError("refusing to write an empty bitplane stream")
        fh.seek(0)
        fh.write(_QSB_HEADER.pack(
            QSB_MAGIC, FORMAT_VERSION, width, height, count, float(frame_rate_hz), 0
        ))
    return BitplaneFileHeader(width, height, count, float(frame_rate_hz))


def read_bitplane_header(path) -> BitplaneFileHeader:
    size = os.path.getsize(path)
    with open(path, "rb") as fh:
        blob = fh.read(_QSB_HEADER.size)
    if len(blob) < _QSB_HEADER.size:
        raise FormatError(f"file ends inside the header at byte {len(blob)}")
    magic, version, width, height, count, rate, _ = _QSB_HEADER.unpack(blob)
    if magic != QSB_MAGIC:
        raise FormatError(f"bad magic {magic!r} at byte 0 (expected {QSB_MAGIC!r})")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported version {version} at byte 4")
    _check_dims(width, height, 8)
    expected = _QSB_HEADER.size + count * _frame_bytes(width, height)
    if size < expected:
        missing = (size - _QSB_HEADER.size) // _frame_bytes(width, height)
        raise FormatError(
            f"truncated stream: frame {missing} of {count} missing (file is {size} bytes, need {expected})"
        )
    return BitplaneFileHeader(width, height, count, rate, version)


def read_bitplanes(path) -> Iterator[BitPlane]:
    """Validate the header, then lazily yield every frame in order."""
    header = read_bitplane_header(path)
    nbytes = _frame_bytes(header.width, header.height)
    with open(path, "rb") as fh:
        fh.seek(_QSB_HEADER.size)
        for t in range(header.frame_count):
            payload = fh.read(nbytes)
            if len(payload) < nbytes:
                raise FormatError(f"truncated stream: frame {t} missing")
            yield BitPlane(unpack_bits(payload, header.width, header.height), timestamp=t)


@dataclass(frozen=True)
class StackFile:
    """Decoded QSX1 contents; ``planes`` is (channels, height, width)."""

    width: int
    height: int
    channels: int
    dtype: str            # "u8" | "f32"
    timestamp: int
    windows: tuple[float, ...]
    planes: np.ndarray


def write_stack_arrays(path, planes: np.ndarray, windows, timestamp: int,
                       dtype: str = "u8") -> None:
    planes = np.asarray(planes)
    if planes.ndim != 3:
        raise FormatError("stack payload must be (channels, height, width)")
    channels, height, width = planes.shape
    windows = tuple(float(w) for w in windows)
    if len(windows) != channels:
        raise FormatError(f"{channels} channels but {len(windows)} window values")
    if any(a <= b for a, b in zip(windows, windows[1:])):
        raise FormatError("window metadata must be strictly decreasing (longest first)")
    if dtype == "u8":
        flag, payload = STACK_DTYPE_U8, planes.astype(np.uint8).tobytes()
    elif dtype == "f32":
        flag, payload = STACK_DTYPE_F32, planes.astype("<f4").tobytes()
    else:
        raise FormatError(f"unknown stack dtype {dtype!r}")
    with open(path, "wb") as fh:
        fh.write(_QSX_FIXED.pack(QSX_MAGIC, FORMAT_VERSION, width, height,
                                 channels, flag, int(timestamp)))
        fh.write(struct.pack(f"<{channels}d", *windows))
        fh.write(payload)


def write_stack(path, stack: ExposureStack, dtype: str = "u8") -> None:
    """Serialize a polled snapshot; f32 requires the raw planes."""
    if dtype == "f32":
        if stack.raw is None:
            raise FormatError("f32 export needs a stack polled with include_raw=True")
        planes = stack.raw
    else:
        planes = stack.quantized
    write_stack_arrays(path, planes, stack.windows, stack.timestamp, dtype)


def read_stack(path) -> StackFile:
    size = os.path.getsize(path)
    with open(path, "rb") as fh:
        fixed = fh.read(_QSX_FIXED.size)
        if len(fixed) < _QSX_FIXED.size:
            raise FormatError(f"file ends inside the header at byte {len(fixed)}")
        magic, version, width, height, channels, flag, timestamp = _QSX_FIXED.unpack(fixed)
        if magic != QSX_MAGIC:
            raise FormatError(f"bad magic {magic!r} at byte 0 (expected {QSX_MAGIC!r})")
        if version != FORMAT_VERSION:
            raise FormatError(f"unsupported version {version} at byte 4")
        _check_dims(width, height, 8)
        if not 0 < channels <= 256:
            raise FormatError(f"bad channel count {channels} at byte 16")
        if flag not in (STACK_DTYPE_U8, STACK_DTYPE_F32):
            raise FormatError(f"unknown dtype flag {flag} at byte 20")
        wblob = fh.read(8 * channels)
        if len(wblob) < 8 * channels:
            raise FormatError(f"file ends inside window metadata at byte {_QSX_FIXED.size + len(wblob)}")
        windows = struct.unpack(f"<{channels}d", wblob)
        item = 1 if flag == STACK_DTYPE_U8 else 4
        need = channels * width * height * item
        offset = _QSX_FIXED.size + 8 * channels
        if size < offset + need:
            raise FormatError(
                f"truncated payload at byte {size} (need {offset + need} bytes)"
            )
        payload = fh.read(need)
    if flag == STACK_DTYPE_U8:
        planes = np.frombuffer(payload, dtype=np.uint8)
        dtype = "u8"
    else:
        planes = np.frombuffer(payload, dtype="<f4")
        dtype = "f32"
    return StackFile(width, height, channels, dtype, timestamp, windows,
                     planes.reshape(channels, height, width).copy())


def write_flux(path, flux_data: np.ndarray, timestamp: int = 0) -> None:
    """Store a ground-truth flux frame as a 1-channel float32 stack."""
    write_stack_arrays(path, np.asarray(flux_data, dtype=np.float64)[None],
                       windows=(0.0,), timestamp=timestamp, dtype="f32")


def read_flux(path) -> tuple[np.ndarray, int]:
    sf = read_stack(path)
    if sf.channels != 1 or sf.dtype != "f32":
        raise FormatError("not a flux file (expected 1 float32 channel)")
    return sf.planes[0].astype(np.float64), sf.timestamp


def write_pgm(path, image: np.ndarray, peak: float = 1.0) -> None:
    """Binary PGM (P5), maxval 255, row-major."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("PGM image must be 2-D")
    if peak <= 0:
        raise ValueError("peak must be positive")
    if np.any(img < 0) or np.any(img > peak):
        raise ValueError(f"image values must lie in [0, {peak}]")
    data = np.floor(img / peak * 255.0 + 0.5).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    parts = blob.split(b"\n", 3)
    if len(parts) < 4 or parts[0] != b"P5":
        raise FormatError("not a binary PGM (P5) file")
    try:
        width, height = (int(v) for v in parts[1].split())
        maxval = int(parts[2])
    except ValueError as exc:
        raise FormatError(f"bad PGM header: {exc}") from None
    if maxval != 255:
        raise FormatError(f"unsupported PGM maxval {maxval}")
    data = np.frombuffer(parts[3][: width * height], dtype=np.uint8)
    if data.size < width * height:
        raise FormatError("truncated PGM payload")
    return data.reshape(height, width).copy()


# --------------------------- pipeline config ---------------------------

@dataclass(frozen=True)
class LadderSection:
    preset: str = "geometric"          # "geometric" | "dyadic"
    channels: int = DEFAULT_CHANNELS
    w_min: float = DEFAULT_W_MIN
    w_max: float = DEFAULT_W_MAX
    windows: tuple[float, ...] | None = None   # explicit override


@dataclass(frozen=True)
class SensorSection:
    pdp: float = 1.0
    dark_rate: float = 7.5
    frame_rate: float = 20_000.0
    hot_fraction: float = 0.0
    hot_dark_factor: float = 100.0
    hot_fill: str = "median"           # "median" | "zero"


@dataclass(frozen=True)
class TrajectorySection:
    kind: str = "piecewise-linear"
    speed: float = 1000.0              # pixels per second
    segments: int | None = None        # None: sampled uniformly from 5..10


@dataclass(frozen=True)
class SceneSection:
    kind: str = "checkerboard"         # "checkerboard" | "radial" | "pgm"
    width: int = 128
    height: int = 128
    period: int = 16
    path: str | None = None            # source image for kind == "pgm"
    mode: str = "global"               # "global" | "sprite" | "static"
    sprite_size: int = 32
    trajectory: TrajectorySection = field(default_factory=TrajectorySection)


@dataclass(frozen=True)
class HdrSection:
    lam_low: float | None = None       # None: sampled from U(0.01, 0.1)
    lam_high: float | None = None      # None: sampled from U(0.2, 10)
    threshold: float = 0.8


@dataclass(frozen=True)
class RunSection:
    frames: int = 4096
    stride: int = 100
    seed: int = 0
    photons_per_second_max: float = 1000.0
    hdr: HdrSection | None = None


@dataclass(frozen=True)
class StreamSection:
    width: int = 32
    height: int = 32
    fps: float = 20_000.0
    frames: int = 200_000
    poll_rates: tuple[float, ...] = (10.0, 100.0, 1000.0)


@dataclass(frozen=True)
class PipelineConfig:
    ladder: LadderSection = field(default_factory=LadderSection)
    sensor: SensorSection = field(default_factory=SensorSection)
    scene: SceneSection = field(default_factory=SceneSection)
    run: RunSection = field(default_factory=RunSection)
    stream: StreamSection = field(default_factory=StreamSection)


_NUMERIC = (int, float)


def _build_section(cls, raw: dict, path: str):
    known = {f.name for f in fields(cls)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"{path}.{sorted(unknown)[0]}: unknown key")
    return raw


def _require(cond: bool, path: str, message: str) -> None:
    if not cond:
        raise ConfigError(f"{path}: {message}")


def _num(raw, path: str, minimum=None, maximum=None, strict_min=False) -> float:
    _require(isinstance(raw, _NUMERIC) and not isinstance(raw, bool), path, "must be a number")
    v = float(raw)
    _require(math.isfinite(v), path, "must be finite")
    if minimum is not None:
        if strict_min:
            _require(v > minimum, path, f"must be > {minimum}")
        else:
            _require(v >= minimum, path, f"must be >= {minimum}")
    if maximum is not None:
        _require(v <= maximum, path, f"must be <= {maximum}")
    return v


def _integer(raw, path: str, minimum=None) -> int:
    _require(isinstance(raw, int) and not isinstance(raw, bool), path, "must be an integer")
    if minimum is not None:
        _require(raw >= minimum, path, f"must be >= {minimum}")
    return raw


def _choice(raw, path: str, options) -> str:
    _require(isinstance(raw, str) and raw in options, path, f"must be one of {sorted(options)}")
    return raw


def _parse_ladder(raw: dict) -> LadderSection:
    raw = _build_section(LadderSection, raw, "ladder")
    out = {}
    if "preset" in raw:
        out["preset"] = _choice(raw["preset"], "ladder.preset", ("geometric", "dyadic"))
    if "channels" in raw:
        out["channels"] = _integer(raw["channels"], "ladder.channels", minimum=1)
    if "w_min" in raw:
        out["w_min"] = _num(raw["w_min"], "ladder.w_min", minimum=1.0)
    if "w_max" in raw:
        out["w_max"] = _num(raw["w_max"], "ladder.w_max", minimum=1.0)
    if "windows" in raw and raw["windows"] is not None:
        ws = raw["windows"]
        _require(isinstance(ws, list) and len(ws) >= 1, "ladder.windows", "must be a non-empty list")
        out["windows"] = tuple(
            _num(w, f"ladder.windows[{i}]", minimum=1.0) for i, w in enumerate(ws)
        )
    return LadderSection(**out)


def _parse_sensor(raw: dict) -> SensorSection:
    raw = _build_section(SensorSection, raw, "sensor")
    out = {}
    if "pdp" in raw:
        out["pdp"] = _num(raw["pdp"], "sensor.pdp", minimum=0.0, maximum=1.0, strict_min=True)
    if "dark_rate" in raw:
        out["dark_rate"] = _num(raw["dark_rate"], "sensor.dark_rate", minimum=0.0)
    if "frame_rate" in raw:
        out["frame_rate"] = _num(raw["frame_rate"], "sensor.frame_rate", minimum=1e4, maximum=1e5)
    if "hot_fraction" in raw:
        out["hot_fraction"] = _num(raw["hot_fraction"], "sensor.hot_fraction", minimum=0.0, maximum=0.5)
    if "hot_dark_factor" in raw:
        out["hot_dark_factor"] = _num(raw["hot_dark_factor"], "sensor.hot_dark_factor", minimum=1.0)
    if "hot_fill" in raw:
        out["hot_fill"] = _choice(raw["hot_fill"], "sensor.hot_fill", ("median", "zero"))
    return SensorSection(**out)


def _parse_trajectory(raw: dict) -> TrajectorySection:
    raw = _build_section(TrajectorySection, raw, "scene.trajectory")
    out = {}
    if "kind" in raw:
        out["kind"] = _choice(raw["kind"], "scene.trajectory.kind",
                              ("piecewise-linear", "piecewise-bezier"))
    if "speed" in raw:
        out["speed"] = _num(raw["speed"], "scene.trajectory.speed", minimum=0.0)
    if "segments" in raw and raw["segments"] is not None:
        out["segments"] = _integer(raw["segments"], "scene.trajectory.segments", minimum=1)
    return TrajectorySection(**out)


def _parse_scene(raw: dict) -> SceneSection:
    raw = _build_section(SceneSection, raw, "scene")
    out = {}
    if "kind" in raw:
        out["kind"] = _choice(raw["kind"], "scene.kind", ("checkerboard", "radial", "pgm"))
    if "width" in raw:
        out["width"] = _integer(raw["width"], "scene.width", minimum=8)
    if "height" in raw:
        out["height"] = _integer(raw["height"], "scene.height", minimum=8)
    if "period" in raw:
        out["period"] = _integer(raw["period"], "scene.period", minimum=2)
    if "path" in raw and raw["path"] is not None:
        _require(isinstance(raw["path"], str), "scene.path", "must be a string")
        out["path"] = raw["path"]
    if "mode" in raw:
        out["mode"] = _choice(raw["mode"], "scene.mode", ("global", "sprite", "static"))
    if "sprite_size" in raw:
        out["sprite_size"] = _integer(raw["sprite_size"], "scene.sprite_size", minimum=4)
    if "trajectory" in raw:
        _require(isinstance(raw["trajectory"], dict), "scene.trajectory", "must be an object")
        out["trajectory"] = _parse_trajectory(raw["trajectory"])
    return SceneSection(**out)


def _parse_hdr(raw: dict) -> HdrSection:
    raw = _build_section(HdrSection, raw, "run.hdr")
    out = {}
    if "lam_low" in raw and raw["lam_low"] is not None:
        out["lam_low"] = _num(raw["lam_low"], "run.hdr.lam_low", minimum=0.0, strict_min=True)
    if "lam_high" in raw and raw["lam_high"] is not None:
        out["lam_high"] = _num(raw["lam_high"], "run.hdr.lam_high", minimum=0.0, strict_min=True)
    if "threshold" in raw:
        out["threshold"] = _num(raw["threshold"], "run.hdr.threshold", minimum=0.0, maximum=1.0)
        _require(0.0 < out["threshold"] < 1.0, "run.hdr.threshold", "must be in (0, 1)")
    return HdrSection(**out)


def _parse_run(raw: dict) -> RunSection:
    raw = _build_section(RunSection, raw, "run")
    out = {}
    if "frames" in raw:
        out["frames"] = _integer(raw["frames"], "run.frames", minimum=1)
    if "stride" in raw:
        out["stride"] = _integer(raw["stride"], "run.stride", minimum=1)
    if "seed" in raw:
        out["seed"] = _integer(raw["seed"], "run.seed", minimum=0)
    if "photons_per_second_max" in raw:
        out["photons_per_second_max"] = _num(
            raw["photons_per_second_max"], "run.photons_per_second_max",
            minimum=0.0, strict_min=True,
        )
    if "hdr" in raw and raw["hdr"] is not None:
        _require(isinstance(raw["hdr"], dict), "run.hdr", "must be an object")
        out["hdr"] = _parse_hdr(raw["hdr"])
    return RunSection(**out)


def _parse_stream(raw: dict) -> StreamSection:
    raw = _build_section(StreamSection, raw, "stream")
    out = {}
    if "width" in raw:
        out["width"] = _integer(raw["width"], "stream.width", minimum=1)
    if "height" in raw:
        out["height"] = _integer(raw["height"], "stream.height", minimum=1)
    if "fps" in raw:
        out["fps"] = _num(raw["fps"], "stream.fps", minimum=1e4, maximum=1e5)
    if "frames" in raw:
        out["frames"] = _integer(raw["frames"], "stream.frames", minimum=1)
    if "poll_rates" in raw:
        rates = raw["poll_rates"]
        _require(isinstance(rates, list) and len(rates) >= 1, "stream.poll_rates",
                 "must be a non-empty list")
        out["poll_rates"] = tuple(
            _num(r, f"stream.poll_rates[{i}]", minimum=0.0, strict_min=True)
            for i, r in enumerate(rates)
        )
    return StreamSection(**out)


def parse_config_dict(raw: dict) -> PipelineConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    known = {"ladder", "sensor", "scene", "run", "stream"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"{sorted(unknown)[0]}: unknown key")
    for key in raw:
        if not isinstance(raw[key], dict):
            raise ConfigError(f"{key}: must be an object")
    return PipelineConfig(
        ladder=_parse_ladder(raw.get("ladder", {})),
        sensor=_parse_sensor(raw.get("sensor", {})),
        scene=_parse_scene(raw.get("scene", {})),
        run=_parse_run(raw.get("run", {})),
        stream=_parse_stream(raw.get("stream", {})),
    )


def parse_config(path) -> PipelineConfig:
    """Load and validate a pipeline config; defaults fill missing keys."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    return parse_config_dict(raw)


def config_to_dict(cfg: PipelineConfig) -> dict:
    """Serialize a config back to the JSON schema (round-trips parse)."""
    def section(obj):
        out = {}
        for f in fields(obj):
            v = getattr(obj, f.name)
            if isinstance(v, tuple):
                v = list(v)
            elif hasattr(v, "__dataclass_fields__"):
                v = section(v)
            out[f.name] = v
        return out

    return {
        "ladder": section(cfg.ladder),
        "sensor": section(cfg.sensor),
        "scene": section(cfg.scene),
        "run": section(cfg.run),
        "stream": section(cfg.stream),
    }


def build_ladder(section: LadderSection) -> ExposureLadder:
    if section.windows is not None:
        return ExposureLadder(tuple(sorted(section.windows, reverse=True)))
    if section.preset == "dyadic":
        return ExposureLadder.dyadic()
    return ExposureLadder.geometric(section.channels, section.w_min, section.w_max)
