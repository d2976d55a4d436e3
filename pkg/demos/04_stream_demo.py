"""Producer/poller streaming demonstration.

One thread feeds the sketch at 20 kFPS while pollers snapshot it at
10/100/1000 Hz.  Every polled stack is verified against the exact scalar
recursion at its own timestamp — a single torn snapshot would fail the
check — and staleness (producer frames the snapshot lags by) is logged.
"""

from quantastream import run_stream_demo

result = run_stream_demo(
    width=32, height=32,
    sensor_fps=20_000.0,
    poll_rates=(10.0, 100.0, 1000.0),
    n_frames=200_000,
    seed=0,
)

print(f"producer: {result.frames} frames in {result.wall_seconds:.2f}s "
      f"({result.effective_fps:,.0f} fps effective)")
for poller in result.pollers:
    print(f"poller {poller.rate_hz:6.1f} Hz: {poller.polls:6d} polls, "
          f"{poller.violations} violations, staleness p50/p99/max = "
          f"{poller.staleness_p50:.0f}/{poller.staleness_p99:.0f}/{poller.staleness_max} frames")

print("consistent" if result.ok else "VIOLATIONS OBSERVED")
