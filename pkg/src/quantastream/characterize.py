"""Flux-estimation SNR and dynamic range for a given bit budget.

Accumulating N binary frames at flux L gives a detected fraction that is
Binomial(N, p)/N with p = 1 - exp(-L).  Pushing p plus/minus one standard
deviation of that proportion back through the inverse response yields a
flux uncertainty band [L-, L+]; the estimation error is the wider half
and SNR_dB = 20 log10(L / err).  The observable dynamic range for a
threshold is the outermost flux interval where the SNR stays at or above
it (the curve is a single plateau, rising from the shot-noise-starved low
end and collapsing at soft saturation).
"""

import csv
import math
from dataclasses import dataclass

import numpy as np

SATURATION_CLAMP = 1e-12  # p + sigma is clamped to 1 - this before the log


@dataclass(frozen=True)
class SnrCurvePoint:
    """One point of the SNR-versus-flux curve for a fixed bit budget."""

    lam: float
    p: float
    lam_minus: float
    lam_plus: float
    epsilon: float
    snr_db: float
    saturated: bool = False


@dataclass(frozen=True)
class DynamicRange:
    """Flux interval where the SNR meets the threshold for N frames."""

    n_frames: int
    snr_threshold_db: float
    lam_lo: float
    lam_hi: float


def snr_at(lam: float, n_frames: int) -> SnrCurvePoint:
    """Evaluate the flux-estimation SNR at one flux point.

    When p + sigma reaches 1 the upper flux bound is unresolvable; the
    point is marked saturated and its SNR is -inf by convention.
    """
    if not lam > 0 or not math.isfinite(lam):
        raise ValueError("flux must be positive and finite")
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    p = -math.expm1(-lam)
    sigma = math.sqrt(p * (1.0 - p) / n_frames)
    hi = p + sigma
    saturated = hi >= 1.0
    hi = min(hi, 1.0 - SATURATION_CLAMP)
    lo = min(p - sigma, 1.0 - SATURATION_CLAMP)  # p collapses to 1.0 at extreme flux
    lam_plus = -math.log1p(-hi)
    lam_minus = -math.log1p(-lo)            # may go negative at tiny flux
    eps = max(lam_plus - lam, lam - lam_minus)
    if saturated:
        snr = -math.inf
    elif eps == 0.0:
        snr = math.inf
    else:
        snr = 20.0 * math.log10(lam / eps)
    return SnrCurvePoint(lam, p, lam_minus, lam_plus, eps, snr, saturated)


def response_curve(lam_grid, n_frames: int) -> list[SnrCurvePoint]:
    """Evaluate ``snr_at`` over a sorted, positive flux grid."""
    grid = np.asarray(lam_grid, dtype=np.float64)
    if grid.ndim != 1 or grid.size == 0:
        raise ValueError("flux grid must be a non-empty 1-D array")
    if np.any(grid <= 0):
        raise ValueError("flux grid must be positive")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("flux grid must be strictly increasing")
    return [snr_at(float(lam), n_frames) for lam in grid]


def _bisect_threshold(lam_ok: float, lam_bad: float, n_frames: int,
                      threshold_db: float, rel_tol: float) -> float:
    """Log-space bisection for the threshold crossing.

    ``lam_ok`` meets the threshold, ``lam_bad`` does not; returns the
    meeting-side endpoint once the bracket is within ``rel_tol`` relative.
    """
    while abs(lam_ok - lam_bad) > rel_tol * min(lam_ok, lam_bad):
        mid = math.sqrt(lam_ok * lam_bad)
        if snr_at(mid, n_frames).snr_db >= threshold_db:
            lam_ok = mid
        else:
            lam_bad = mid
    return lam_ok


def dynamic_range(
    n_frames: int,
    threshold_db: float = 20.0,
    search_bounds: tuple[float, float] = (1e-3, 1e2),
    grid_points: int = 200,
    rel_tol: float = 0.005,
) -> DynamicRange:
    """Locate the outermost flux points whose SNR meets the threshold.

    Deterministic: a log-spaced coarse scan finds the plateau, then
    bisection refines each endpoint to ``rel_tol`` relative accuracy.
    Raises ValueError if the threshold is never reached inside the bounds
    (the dynamic range is empty), or if it is already met at a bound
    (widen the bounds).
    """
    if n_frames < 16:
        raise ValueError("n_frames must be >= 16")
    lo, hi = search_bounds
    if not 0 < lo < hi:
        raise ValueError("search bounds must satisfy 0 < lo < hi")
    grid = np.geomspace(lo, hi, grid_points)
    ok = np.array([snr_at(float(lam), n_frames).snr_db >= threshold_db for lam in grid])
    if not ok.any():
        raise ValueError(
            f"SNR never reaches {threshold_db} dB in [{lo}, {hi}] for N={n_frames}: empty range"
        )
    i_lo = int(np.argmax(ok))
    i_hi = len(ok) - 1 - int(np.argmax(ok[::-1]))
    if i_lo == 0 or i_hi == len(ok) - 1:
        raise ValueError("threshold met at a search bound; widen search_bounds")
    lam_lo = _bisect_threshold(grid[i_lo], grid[i_lo - 1], n_frames, threshold_db, rel_tol)
    lam_hi = _bisect_threshold(grid[i_hi], grid[i_hi + 1], n_frames, threshold_db, rel_tol)
    return DynamicRange(n_frames, threshold_db, float(lam_lo), float(lam_hi))


def write_response_csv(path, points: list[SnrCurvePoint]) -> None:
    """Export a response curve for external plotting."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lambda", "p", "lambda_minus", "lambda_plus", "epsilon", "snr_db"])
        for pt in points:
            writer.writerow([
                f"{pt.lam:.9g}", f"{pt.p:.9g}", f"{pt.lam_minus:.9g}",
                f"{pt.lam_plus:.9g}", f"{pt.epsilon:.9g}", f"{pt.snr_db:.6g}",
            ])
