/** PSNR and SSIM, matching the exporter's metric definitions.
 *
 * SSIM: 11-tap Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03,
 * population moments, mean over the interior (half-window border crop).
 * Tone-domain evaluation normalizes by the tone-mapped ground-truth peak.
 */

import { DEFAULT_TONE, ToneConfig, toneMap } from "./loss.js";

export const PSNR_CAP_DB = 99.0;

export function psnr(pred: Float64Array, gt: Float64Array, peak: number): number {
  if (pred.length !== gt.length) throw new Error("shape mismatch");
  if (peak <= 0) throw new Error("peak must be positive");
  let mse = 0;
  for (let i = 0; i < pred.length; i++) {
    const d = pred[i] - gt[i];
    mse += d * d;
  }
  mse /= pred.length;
  if (mse === 0) return PSNR_CAP_DB;
  return Math.min(10 * Math.log10((peak * peak) / mse), PSNR_CAP_DB);
}

const SSIM_WIN = 11;
const SSIM_SIGMA = 1.5;
const SSIM_K1 = 0.01;
const SSIM_K2 = 0.03;

function gaussianKernel(): Float64Array {
  const radius = (SSIM_WIN - 1) / 2;
  const k = new Float64Array(SSIM_WIN);
  let sum = 0;
  for (let i = 0; i < SSIM_WIN; i++) {
    const x = (i - radius) / SSIM_SIGMA;
    k[i] = Math.exp(-0.5 * x * x);
    sum += k[i];
  }
  for (let i = 0; i < SSIM_WIN; i++) k[i] /= sum;
  return k;
}

function reflectIndex(i: number, n: number): number {
  // scipy 'reflect': (d c b a | a b c d | d c b a)
  if (n === 1) return 0;
  const period = 2 * n;
  let m = ((i % period) + period) % period;
  if (m >= n) m = period - 1 - m;
  return m;
}

function filterSeparable(img: Float64Array, h: number, w: number, k: Float64Array): Float64Array {
  const radius = (k.length - 1) / 2;
  const tmp = new Float64Array(h * w);
  for (let i = 0; i < h; i++) {
    for (let j = 0; j < w; j++) {
      let acc = 0;
      for (let t = 0; t < k.length; t++) {
        acc += k[t] * img[reflectIndex(i + t - radius, h) * w + j];
      }
      tmp[i * w + j] = acc;
    }
  }
  const out = new Float64Array(h * w);
  for (let i = 0; i < h; i++) {
    for (let j = 0; j < w; j++) {
      let acc = 0;
      for (let t = 0; t < k.length; t++) {
        acc += k[t] * tmp[i * w + reflectIndex(j + t - radius, w)];
      }
      out[i * w + j] = acc;
    }
  }
  return out;
}

export function ssim(a: Float64Array, b: Float64Array, h: number, w: number,
                     dataRange = 1.0): number {
  if (a.length !== b.length || a.length !== h * w) throw new Error("shape mismatch");
  const radius = (SSIM_WIN - 1) / 2;
  if (Math.min(h, w) < SSIM_WIN + 2 * radius) {
    throw new Error(`images must be at least ${SSIM_WIN + 2 * radius} pixels per side`);
  }
  const k = gaussianKernel();
  const n = h * w;
  const aa = new Float64Array(n);
  const bb = new Float64Array(n);
  const ab = new Float64Array(n);
  for (let i = 0; i < n; i++) {
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  const muA = filterSeparable(a, h, w, k);
  const muB = filterSeparable(b, h, w, k);
  const mAA = filterSeparable(aa, h, w, k);
  const mBB = filterSeparable(bb, h, w, k);
  const mAB = filterSeparable(ab, h, w, k);
  const c1 = (SSIM_K1 * dataRange) ** 2;
  const c2 = (SSIM_K2 * dataRange) ** 2;
  let sum = 0;
  let count = 0;
  for (let i = radius; i < h - radius; i++) {
    for (let j = radius; j < w - radius; j++) {
      const idx = i * w + j;
      const va = mAA[idx] - muA[idx] * muA[idx];
      const vb = mBB[idx] - muB[idx] * muB[idx];
      const cov = mAB[idx] - muA[idx] * muB[idx];
      sum += ((2 * muA[idx] * muB[idx] + c1) * (2 * cov + c2)) /
        ((muA[idx] * muA[idx] + muB[idx] * muB[idx] + c1) * (va + vb + c2));
      count += 1;
    }
  }
  return sum / count;
}

export interface MetricsRecord {
  psnr_db: number;
  ssim: number;
}

/** Tone-domain PSNR/SSIM normalized by the tone-mapped ground-truth peak. */
export function toneDomainMetrics(
  predFlux: Float64Array, gtFlux: Float64Array, h: number, w: number,
  tone: ToneConfig = DEFAULT_TONE,
): MetricsRecord {
  const n = h * w;
  const tp = new Float64Array(n);
  const tg = new Float64Array(n);
  let peak = 0;
  for (let i = 0; i < n; i++) {
    tp[i] = toneMap(predFlux[i], tone);
    tg[i] = toneMap(gtFlux[i], tone);
    if (tg[i] > peak) peak = tg[i];
  }
  if (peak <= 0) peak = 1;
  const pn = new Float64Array(n);
  const gn = new Float64Array(n);
  for (let i = 0; i < n; i++) {
    pn[i] = tp[i] / peak;
    gn[i] = tg[i] / peak;
  }
  const clip = (x: number) => Math.min(Math.max(x, 0), 1);
  const pc = Float64Array.from(pn, clip);
  const gc = Float64Array.from(gn, clip);
  return { psnr_db: psnr(pn, gn, 1.0), ssim: ssim(pc, gc, h, w) };
}
