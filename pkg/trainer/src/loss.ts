/** Tone-mapped L1-plus-gradient objective.
 *
 * T(x) = log(relu(1 + mu x) + zeta) / log(1 + mu)
 * loss = mean|T(p) - T(g)| + sigma (mean|Dx T(p) - Dx T(g)| + mean|Dy ...|)
 *
 * Dx/Dy are forward differences with replicate boundary (zero in the last
 * column/row).  Values must agree with the exporter's reference
 * implementation to 1e-6 (tone map) and 1e-5 (loss); everything here runs
 * in float64.
 */

import { Tensor4, like } from "./tensor.js";

export interface ToneConfig {
  mu: number;
  zeta: number;
}

export interface LossConfig {
  sigma: number;
}

export const DEFAULT_TONE: ToneConfig = { mu: 1e3, zeta: 1e-7 };
export const DEFAULT_LOSS: LossConfig = { sigma: 0.1 };

export function toneMap(x: number, tone: ToneConfig = DEFAULT_TONE): number {
  return Math.log(Math.max(1 + tone.mu * x, 0) + tone.zeta) / Math.log1p(tone.mu);
}

/** dT/dx; zero on the ReLU floor. */
export function toneMapGrad(x: number, tone: ToneConfig = DEFAULT_TONE): number {
  const arg = 1 + tone.mu * x;
  if (arg <= 0) return 0;
  return tone.mu / ((arg + tone.zeta) * Math.log1p(tone.mu));
}

function forwardDiffX(src: Float64Array, dst: Float64Array, h: number, w: number, off: number): void {
  for (let i = 0; i < h; i++) {
    const row = off + i * w;
    for (let j = 0; j < w - 1; j++) dst[row + j] = src[row + j + 1] - src[row + j];
    dst[row + w - 1] = 0;
  }
}

function forwardDiffY(src: Float64Array, dst: Float64Array, h: number, w: number, off: number): void {
  for (let i = 0; i < h - 1; i++) {
    const row = off + i * w;
    for (let j = 0; j < w; j++) dst[row + j] = src[row + w + j] - src[row + j];
  }
  dst.fill(0, off + (h - 1) * w, off + h * w);
}

/** Reference loss on a single image pair, matching the exporter. */
export function paperLoss(
  pred: number[][] | Float64Array, gt: number[][] | Float64Array,
  height?: number, width?: number,
  loss: LossConfig = DEFAULT_LOSS, tone: ToneConfig = DEFAULT_TONE,
): number {
  let p: Float64Array;
  let g: Float64Array;
  let h: number;
  let w: number;
  if (Array.isArray(pred) && Array.isArray(gt)) {
    h = pred.length;
    w = pred[0].length;
    p = Float64Array.from(pred.flat());
    g = Float64Array.from(gt.flat());
  } else {
    if (height === undefined || width === undefined) {
      throw new Error("flat inputs need height and width");
    }
    h = height;
    w = width;
    p = pred as Float64Array;
    g = gt as Float64Array;
  }
  const n = h * w;
  const tp = new Float64Array(n);
  const tg = new Float64Array(n);
  for (let i = 0; i < n; i++) {
    tp[i] = toneMap(p[i], tone);
    tg[i] = toneMap(g[i], tone);
  }
  let base = 0;
  for (let i = 0; i < n; i++) base += Math.abs(tp[i] - tg[i]);
  const dp = new Float64Array(n);
  const dg = new Float64Array(n);
  let gradX = 0;
  forwardDiffX(tp, dp, h, w, 0);
  forwardDiffX(tg, dg, h, w, 0);
  for (let i = 0; i < n; i++) gradX += Math.abs(dp[i] - dg[i]);
  let gradY = 0;
  forwardDiffY(tp, dp, h, w, 0);
  forwardDiffY(tg, dg, h, w, 0);
  for (let i = 0; i < n; i++) gradY += Math.abs(dp[i] - dg[i]);
  return base / n + loss.sigma * (gradX / n + gradY / n);
}

function sign(x: number): number {
  return x > 0 ? 1 : x < 0 ? -1 : 0;
}

/** Training objective over a batch: value plus gradient w.r.t. pred.
 *
 * The batch loss is the mean of per-image losses (images share a shape,
 * so it equals a global mean).
 */
export function lossAndGrad(
  pred: Tensor4, gt: Tensor4,
  loss: LossConfig = DEFAULT_LOSS, tone: ToneConfig = DEFAULT_TONE,
): { value: number; grad: Tensor4 } {
  if (pred.c !== 1 || gt.c !== 1 || pred.b !== gt.b || pred.h !== gt.h || pred.w !== gt.w) {
    throw new Error("pred and gt must both be (B, H, W, 1)");
  }
  const { b, h, w } = pred;
  const n = h * w;
  const total = b * n;
  const tp = new Float64Array(total);
  const tg = new Float64Array(total);
  for (let i = 0; i < total; i++) {
    tp[i] = toneMap(pred.data[i], tone);
    tg[i] = toneMap(gt.data[i], tone);
  }
  const dTone = like(pred);   // dLoss / dT(pred)
  let value = 0;
  for (let i = 0; i < total; i++) {
    const d = tp[i] - tg[i];
    value += Math.abs(d);
    dTone.data[i] = sign(d) / total;
  }
  const dp = new Float64Array(total);
  const dg = new Float64Array(total);
  const s = new Float64Array(n);
  for (const axis of ["x", "y"] as const) {
    const diff = axis === "x" ? forwardDiffX : forwardDiffY;
    for (let img = 0; img < b; img++) {
      const off = img * n;
      diff(tp, dp, h, w, off);
      diff(tg, dg, h, w, off);
      for (let i = 0; i < n; i++) {
        const d = dp[off + i] - dg[off + i];
        value += loss.sigma * Math.abs(d);
        s[i] = sign(d);
      }
      // adjoint of the forward difference: u[i,j] enters D[i,j-1] with +1
      // and D[i,j] with -1 (same along y)
      const scale = loss.sigma / total;
      if (axis === "x") {
        for (let i = 0; i < h; i++) {
          const row = off + i * w;
          const srow = i * w;
          for (let j = 0; j < w; j++) {
            let v = 0;
            if (j > 0) v += s[srow + j - 1];
            if (j < w - 1) v -= s[srow + j];
            dTone.data[row + j] += scale * v;
          }
        }
      } else {
        for (let i = 0; i < h; i++) {
          const row = off + i * w;
          const srow = i * w;
          for (let j = 0; j < w; j++) {
            let v = 0;
            if (i > 0) v += s[srow - w + j];
            if (i < h - 1) v -= s[srow + j];
            dTone.data[row + j] += scale * v;
          }
        }
      }
    }
  }
  const grad = like(pred);
  for (let i = 0; i < total; i++) {
    grad.data[i] = dTone.data[i] * toneMapGrad(pred.data[i], tone);
  }
  return { value: value / total, grad };
}
