"""Bandwidth accounting, update benchmarking, and the streaming demo.

The demo is the one concurrent piece of the package: a paced producer
thread feeds uniform bitplanes into a sketch while independent poller
threads snapshot it at their own rates.  Because every pixel of a uniform
feed follows the identical scalar recursion, each polled stack can be
checked exactly against a precomputed per-channel reference at its
timestamp — any torn snapshot (channels from two different frame
indices) shows up as a value mismatch.
"""

import sys
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from .sensor import BitPlane
from .sketch import ExposureLadder, Sketch, quantize_u8


@dataclass(frozen=True)
class BandwidthReport:
    """Raw-readout versus polled-sketch data and memory rates, per pixel."""

    raw_bits_per_pixel_per_s: float
    sketch_bits_per_pixel_per_s: float
    reduction_ratio: float
    memory_raw_bytes_per_pixel: float
    memory_sketch_bytes_per_pixel: float

    @property
    def memory_reduction_ratio(self) -> float:
        return self.memory_raw_bytes_per_pixel / self.memory_sketch_bytes_per_pixel


def bandwidth_report(
    sensor_fps: float = 100_000.0,
    poll_fps: float = 30.0,
    channels: int = 8,
    bits_per_channel: int = 8,
    window_frames: int = 4096,
) -> BandwidthReport:
    """Account for the readout saved by polling the sketch instead of raw bits.

    Raw readout moves one bit per pixel per sensor frame; the polled
    representation moves ``channels * bits_per_channel`` bits per poll.
    The memory comparison is the raw bit window a batch method would
    buffer versus the stored channel planes.  The reduction is explicitly
    poll-rate dependent.
    """
    if min(sensor_fps, poll_fps, channels, bits_per_channel, window_frames) <= 0:
        raise ValueError("all report parameters must be positive")
    raw = float(sensor_fps)
    sketch = float(poll_fps * channels * bits_per_channel)
    return BandwidthReport(
        raw_bits_per_pixel_per_s=raw,
        sketch_bits_per_pixel_per_s=sketch,
        reduction_ratio=raw / sketch,
        memory_raw_bytes_per_pixel=window_frames / 8.0,
        memory_sketch_bytes_per_pixel=channels * bits_per_channel / 8.0,
    )


@dataclass(frozen=True)
class BenchResult:
    pixels: int
    frames: int
    wall_seconds: float
    updates_per_second: float
    flops_per_pixel_per_frame: float
    poll_latency_us_p50: float
    poll_latency_us_p99: float


def bench_update(width: int, height: int, n_frames: int,
                 ladder: ExposureLadder | None = None,
                 seed: int = 0, n_polls: int = 1000) -> BenchResult:
    """Drive random bitplanes through ``update`` and measure throughput.

    Wall-clock numbers are machine-dependent and only reported; the FLOP
    count is a logical counter and is what the budget tests assert.
    """
    if n_frames < 100:
        raise ValueError("benchmark needs at least 100 frames")
    ladder = ladder or ExposureLadder.geometric()
    sketch = Sketch(ladder, width, height)
    rng = np.random.default_rng(seed)
    pool = [
        BitPlane(rng.integers(0, 2, size=(height, width), dtype=np.uint8), timestamp=0)
        for _ in range(32)
    ]
    t0 = time.perf_counter()
    for t in range(n_frames):
        sketch.update(BitPlane(pool[t % len(pool)].bits, timestamp=t))
    wall = time.perf_counter() - t0
    lat = np.empty(n_polls)
    for i in range(n_polls):
        p0 = time.perf_counter()
        sketch.poll()
        lat[i] = time.perf_counter() - p0
    return BenchResult(
        pixels=sketch.pixels,
        frames=n_frames,
        wall_seconds=wall,
        updates_per_second=n_frames / wall if wall > 0 else float("inf"),
        flops_per_pixel_per_frame=sketch.op_counter / (sketch.pixels * n_frames),
        poll_latency_us_p50=float(np.percentile(lat, 50) * 1e6),
        poll_latency_us_p99=float(np.percentile(lat, 99) * 1e6),
    )


@dataclass
class PollerStats:
    rate_hz: float
    polls: int = 0
    violations: int = 0
    staleness_frames: list = field(default_factory=list)

    @property
    def staleness_p50(self) -> float:
        return float(np.percentile(self.staleness_frames, 50)) if self.staleness_frames else 0.0

    @property
    def staleness_p99(self) -> float:
        return float(np.percentile(self.staleness_frames, 99)) if self.staleness_frames else 0.0

    @property
    def staleness_max(self) -> int:
        return int(max(self.staleness_frames)) if self.staleness_frames else 0


@dataclass
class StreamDemoResult:
    frames: int
    fps_requested: float
    wall_seconds: float
    pollers: list

    @property
    def effective_fps(self) -> float:
        return self.frames / self.wall_seconds if self.wall_seconds > 0 else float("inf")

    @property
    def total_violations(self) -> int:
        return sum(p.violations for p in self.pollers)

    @property
    def ok(self) -> bool:
        return self.total_violations == 0


def _pace(deadline: float) -> None:
    # busy spin: frame intervals (10-100 us) sit below sleep granularity,
    # and voluntarily yielding convoys with waking pollers.  The interpreter
    # force-drops the GIL at the switch interval, so waiting pollers still
    # get in promptly.
    while time.perf_counter() < deadline:
        pass


def run_stream_demo(
    width: int = 32,
    height: int = 32,
    ladder: ExposureLadder | None = None,
    sensor_fps: float = 20_000.0,
    poll_rates: tuple[float, ...] = (10.0, 100.0, 1000.0),
    n_frames: int = 200_000,
    seed: int = 0,
) -> StreamDemoResult:
    """One producer at ``sensor_fps`` against independent pollers.

    Every polled stack is verified exactly against the scalar reference
    recursion at its timestamp (both raw and quantized planes), and its
    staleness — producer frames that elapsed past the snapshot — is
    recorded.  Termination is bounded by the frame budget.
    """
    ladder = ladder or ExposureLadder.geometric()
    sketch = Sketch(ladder, width, height)
    channels = ladder.channels
    rng = np.random.default_rng(seed)
    bit_seq = rng.integers(0, 2, size=n_frames, dtype=np.uint8)

    # scalar reference: same dtype and op order as Sketch.update, so a
    # consistent snapshot matches it bit-for-bit at every timestamp
    alphas = np.asarray(ladder.alphas)
    decay = 1.0 - alphas
    ref = np.empty((n_frames + 1, channels))
    r = np.zeros(channels)
    ref[0] = r
    for t in range(n_frames):
        r = r * decay
        if bit_seq[t]:
            r = r + alphas
        ref[t + 1] = r
    ref_q = quantize_u8(ref)

    ones = np.ones((height, width), dtype=np.uint8)
    zeros = np.zeros((height, width), dtype=np.uint8)
    done = threading.Event()
    stats = [PollerStats(rate_hz=rate) for rate in poll_rates]
    start = time.perf_counter()
    frame_interval = 1.0 / sensor_fps

    def produce():
        for t in range(n_frames):
            sketch.update(BitPlane(ones if bit_seq[t] else zeros, timestamp=t))
            _pace(start + (t + 1) * frame_interval)
        done.set()

    def poll_loop(st: PollerStats):
        interval = 1.0 / st.rate_hz
        next_t = start + interval
        while not done.is_set():
            now = time.perf_counter()
            if now < next_t:
                time.sleep(min(next_t - now, 0.005))
                continue
            next_t = max(next_t + interval, now)  # skip missed slots, never burst
            stack = sketch.poll(include_raw=True)
            live_t = sketch.t
            st.polls += 1
            st.staleness_frames.append(max(live_t - stack.timestamp, 0))
            expect = ref[stack.timestamp]
            if not (
                (stack.raw == expect[:, None, None]).all()
                and (stack.quantized == ref_q[stack.timestamp][:, None, None]).all()
            ):
                st.violations += 1

    old_switch = sys.getswitchinterval()
    sys.setswitchinterval(5e-5)   # keep GIL handoffs well below one frame interval
    try:
        producer = threading.Thread(target=produce, name="producer")
        pollers = [
            threading.Thread(target=poll_loop, args=(st,), name=f"poller-{st.rate_hz:g}Hz")
            for st in stats
        ]
        producer.start()
        for th in pollers:
            th.start()
        producer.join()
        for th in pollers:
            th.join()
    finally:
        sys.setswitchinterval(old_switch)
    wall = time.perf_counter() - start
    return StreamDemoResult(n_frames, sensor_fps, wall, stats)
