"""Classical flux recovery and image-quality metrics.

Inversion of the soft-saturating response, naive integration over a bit
window, a longest-unsaturated multi-exposure fusion baseline, the mu-law
tone map, the L1-plus-gradient training loss, PSNR, and SSIM.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .sketch import ExposureStack


@dataclass(frozen=True)
class ToneMapConfig:
    """Differentiable mu-law compressor: log(relu(1 + mu*x) + zeta) / log(1 + mu)."""

    mu: float = 1e3
    zeta: float = 1e-7

    def __post_init__(self):
        if self.mu <= 0 or self.zeta <= 0:
            raise ValueError("mu and zeta must be positive")


@dataclass(frozen=True)
class LossConfig:
    """Weight of the gradient L1 terms relative to the intensity L1 term."""

    sigma: float = 0.1

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")


@dataclass
class FluxEstimate:
    """Recovered per-pixel flux plus the bit budget that produced it.

    ``n_frames_used`` is a scalar for naive integration and a per-pixel
    array for multi-exposure fusion.  Saturated pixels carry the clamped
    inversion value and are flagged, never silently dropped.
    """

    lambda_hat: np.ndarray
    n_frames_used: np.ndarray | float
    saturated_mask: np.ndarray


def invert_response(p_hat, dark_per_frame=0.0, n_frames=None):
    """Invert p = 1 - exp(-(lam + d)) to a non-negative flux estimate.

    With a bit budget ``n_frames``, probabilities at or beyond
    ``1 - 1/(2N)`` are indistinguishable from saturation; they are clamped
    to that ceiling so the returned flux stays finite (callers flag them
    via ``saturation_mask``).
    """
    p = np.asarray(p_hat, dtype=np.float64)
    if np.any(p < 0.0) or np.any(p > 1.0):
        raise ValueError("probabilities must lie in [0, 1]")
    if n_frames is not None:
        p = np.minimum(p, 1.0 - 1.0 / (2.0 * np.asarray(n_frames, dtype=np.float64)))
    lam = np.maximum(-np.log1p(-p) - dark_per_frame, 0.0)
    return float(lam) if lam.ndim == 0 else lam


def saturation_mask(p_hat, n_frames) -> np.ndarray:
    """Pixels whose detected fraction is too close to 1 to invert."""
    return np.asarray(p_hat, dtype=np.float64) >= 1.0 - 1.0 / (2.0 * np.asarray(n_frames, dtype=np.float64))


def naive_integration(bits_or_channel, n_effective=None, dark_per_frame=0.0) -> FluxEstimate:
    """Average bits over a window and invert the response.

    Accepts a sequence of bitplanes, a (T, H, W) bit array, or a single
    (H, W) channel mean in [0, 1] (then ``n_effective`` is required).
    """
    data = bits_or_channel
    if isinstance(data, (list, tuple)):
        if len(data) == 0:
            raise ValueError("no bitplanes supplied")
        data = np.stack([bp.bits for bp in data])
    data = np.asarray(data, dtype=np.float64)
    if data.size == 0:
        raise ValueError("empty input")
    if data.ndim == 3:
        p_hat = data.mean(axis=0)
        if n_effective is None:
            n_effective = data.shape[0]
    elif data.ndim == 2:
        if n_effective is None:
            raise ValueError("a channel mean needs an explicit n_effective")
        p_hat = data
    else:
        raise ValueError("expected bitplanes (T, H, W) or a channel mean (H, W)")
    if n_effective < 1:
        raise ValueError("n_effective must be >= 1")
    sat = saturation_mask(p_hat, n_effective)
    lam = invert_response(p_hat, dark_per_frame, n_frames=n_effective)
    return FluxEstimate(lam, float(n_effective), sat)


def fuse_longest_unsaturated(stack: ExposureStack, sat_threshold: float = 0.95,
                             dark_per_frame: float = 0.0) -> FluxEstimate:
    """Per pixel, invert the longest-window channel that is not saturated.

    Channels are ordered longest window first, so the first channel below
    the threshold wins; if every channel reads at or above the threshold,
    the shortest window is used and the pixel is flagged saturated.
    """
    values = stack.values()
    windows = np.asarray(stack.windows, dtype=np.float64)
    usable = values < sat_threshold
    idx = np.argmax(usable, axis=0)
    none_usable = ~usable.any(axis=0)
    idx[none_usable] = values.shape[0] - 1
    chosen = np.take_along_axis(values, idx[None], axis=0)[0]
    chosen_w = windows[idx]
    lam = invert_response(chosen, dark_per_frame, n_frames=chosen_w)
    return FluxEstimate(lam, chosen_w, none_usable)


def mu_law(x, cfg: ToneMapConfig = ToneMapConfig()):
    """Tone-map intensities for wide-flux-range comparison.

    Total on all reals: negative inputs bottom out at the ReLU floor
    log(zeta)/log(1 + mu).
    """
    arr = np.asarray(x, dtype=np.float64)
    out = np.log(np.maximum(1.0 + cfg.mu * arr, 0.0) + cfg.zeta) / math.log1p(cfg.mu)
    return float(out) if out.ndim == 0 else out


def _grad_x(img: np.ndarray) -> np.ndarray:
    # forward difference, replicate boundary (zero at the last column)
    out = np.zeros_like(img)
    out[:, :-1] = img[:, 1:] - img[:, :-1]
    return out


def _grad_y(img: np.ndarray) -> np.ndarray:
    out = np.zeros_like(img)
    out[:-1, :] = img[1:, :] - img[:-1, :]
    return out


def paper_loss(pred, gt, loss_cfg: LossConfig = LossConfig(),
               tone_cfg: ToneMapConfig = ToneMapConfig()) -> float:
    """L1 between tone-mapped images plus weighted L1 of their gradients."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    tp = mu_law(pred, tone_cfg)
    tg = mu_law(gt, tone_cfg)
    loss = np.abs(tp - tg).mean()
    loss += loss_cfg.sigma * np.abs(_grad_x(tp) - _grad_x(tg)).mean()
    loss += loss_cfg.sigma * np.abs(_grad_y(tp) - _grad_y(tg)).mean()
    return float(loss)


PSNR_CAP_DB = 99.0


def psnr(pred, gt, peak: float) -> float:
    """Peak SNR in dB, capped at 99 (identical images would be infinite)."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    if peak <= 0:
        raise ValueError("peak must be positive")
    mse = np.mean((pred - gt) ** 2)
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * math.log10(peak * peak / mse), PSNR_CAP_DB)


_SSIM_WIN = 11
_SSIM_SIGMA = 1.5
_SSIM_K1 = 0.01
_SSIM_K2 = 0.03


def _ssim_filter(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    out = ndimage.correlate1d(img, kernel, axis=0, mode="reflect")
    return ndimage.correlate1d(out, kernel, axis=1, mode="reflect")


def ssim(a, b, data_range: float = 1.0) -> float:
    """Structural similarity with the reference configuration.

    11-tap Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03, population
    local moments, averaged over the interior (a half-window border is
    cropped so boundary handling never enters the score).  Inputs are
    expected on [0, data_range].
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    radius = _SSIM_WIN // 2
    if min(a.shape) < _SSIM_WIN + 2 * radius:
        raise ValueError(f"images must be at least {_SSIM_WIN + 2 * radius} pixels per side")
    offsets = np.arange(_SSIM_WIN) - radius
    kernel = np.exp(-0.5 * (offsets / _SSIM_SIGMA) ** 2)
    kernel /= kernel.sum()
    mu_a = _ssim_filter(a, kernel)
    mu_b = _ssim_filter(b, kernel)
    var_a = _ssim_filter(a * a, kernel) - mu_a * mu_a
    var_b = _ssim_filter(b * b, kernel) - mu_b * mu_b
    cov = _ssim_filter(a * b, kernel) - mu_a * mu_b
    c1 = (_SSIM_K1 * data_range) ** 2
    c2 = (_SSIM_K2 * data_range) ** 2
    score = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
        (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    )
    interior = score[radius:-radius, radius:-radius]
    return float(interior.mean())


def metrics_record(pred_flux, gt_flux, n_frames, domain: str = "tone",
                   tone_cfg: ToneMapConfig = ToneMapConfig(),
                   loss_cfg: LossConfig = LossConfig()) -> dict:
    """PSNR/SSIM/loss record for a reconstruction, as emitted by the CLI.

    ``domain="tone"`` evaluates PSNR/SSIM on mu-law images normalized by
    the tone-mapped ground-truth peak (the HDR-appropriate choice);
    ``domain="linear"`` stays in flux units with the ground-truth maximum
    as the peak.
    """
    pred = np.asarray(pred_flux, dtype=np.float64)
    gt = np.asarray(gt_flux, dtype=np.float64)
    if domain == "tone":
        tp, tg = mu_law(pred, tone_cfg), mu_law(gt, tone_cfg)
        peak = float(tg.max())
        peak = peak if peak > 0 else 1.0
        p_img, g_img = tp / peak, tg / peak
    elif domain == "linear":
        peak = float(gt.max())
        peak = peak if peak > 0 else 1.0
        p_img, g_img = pred / peak, gt / peak
    else:
        raise ValueError("domain must be 'tone' or 'linear'")
    return {
        "psnr_db": psnr(p_img, g_img, peak=1.0),
        "ssim": ssim(np.clip(p_img, 0.0, 1.0), np.clip(g_img, 0.0, 1.0)),
        "loss": paper_loss(pred, gt, loss_cfg, tone_cfg),
        "n_frames": float(np.max(n_frames)),
        "domain": domain,
    }
