"""quantastream: streaming multi-exposure sketches for binary quanta sensors.

Simulate single-photon binary frames, maintain the online multi-exposure
exponential-mean representation with a strict per-pixel operation budget,
characterize achievable dynamic range, reconstruct flux classically, and
export training pairs for a learned reconstructor.
"""

from .characterize import DynamicRange, SnrCurvePoint, dynamic_range, response_curve, snr_at
from .errors import ConfigError, ConsistencyError, FormatError, QuantaError, SequenceError
from .pipeline import BandwidthReport, BenchResult, bandwidth_report, bench_update, run_stream_demo
from .recon import (
    FluxEstimate,
    LossConfig,
    ToneMapConfig,
    fuse_longest_unsaturated,
    invert_response,
    mu_law,
    naive_integration,
    paper_loss,
    psnr,
    ssim,
)
from .sensor import (
    BitPlane,
    FluxFrame,
    HotPixelMask,
    SensorConfig,
    calibrate_hot_pixels,
    detection_probability,
    simulate_bitplane,
    simulate_sequence,
)
from .sketch import (
    ExposureLadder,
    ExposureStack,
    Sketch,
    effective_window,
    flop_budget,
    new_sketch,
)
from .synth import (
    HdrAugmentConfig,
    MotionScene,
    Trajectory,
    checkerboard,
    hdr_augment,
    make_training_pair,
    radial_sine,
    render_frame,
    sample_trajectory,
    scale_to_photon_level,
)

__version__ = "0.1.0"
