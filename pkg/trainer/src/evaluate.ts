/** Evaluation: learned reconstruction versus naive integration.
 *
 * The naive baseline inverts the longest-window channel of the stack
 * (soft saturation clamped at 1 - 1/(2W), dark counts subtracted), which
 * is the strongest classical estimate for a static scene and badly
 * blurred for a moving one.
 */

import { Manifest } from "./formats.js";
import { Pair, pairToTensors } from "./data.js";
import { DEFAULT_TONE, ToneConfig } from "./loss.js";
import { MetricsRecord, toneDomainMetrics } from "./metrics.js";
import { UNet } from "./model.js";

export function naiveFromStack(pair: Pair, windowFrames: number, darkPerFrame: number): Float64Array {
  const plane = pair.width * pair.height;
  const channel = pair.stack.subarray(0, plane);   // longest window first
  const ceiling = 1 - 1 / (2 * windowFrames);
  const out = new Float64Array(plane);
  for (let i = 0; i < plane; i++) {
    const p = Math.min(channel[i], ceiling);
    out[i] = Math.max(-Math.log1p(-p) - darkPerFrame, 0);
  }
  return out;
}

export function reconstruct(model: UNet, pair: Pair): Float64Array {
  const { x } = pairToTensors(pair);
  const pred = model.forward(x);
  return Float64Array.from(pred.data);
}

export interface EvalRow {
  t: number;
  speedPxPerFrame: number;
  model: MetricsRecord;
  naive: MetricsRecord;
}

export interface EvalTable {
  rows: EvalRow[];
  meanModelPsnr: number;
  meanNaivePsnr: number;
  meanModelSsim: number;
  meanNaiveSsim: number;
}

export function evaluatePairs(
  model: UNet, pairs: Pair[], manifest: Manifest,
  tone: ToneConfig = DEFAULT_TONE,
): EvalTable {
  const rows: EvalRow[] = [];
  for (const pair of pairs) {
    const pred = reconstruct(model, pair);
    const naive = naiveFromStack(pair, manifest.windows[0], manifest.sensor.dark_per_frame);
    rows.push({
      t: pair.t,
      speedPxPerFrame: pair.speedPxPerFrame,
      model: toneDomainMetrics(pred, pair.gt, pair.height, pair.width, tone),
      naive: toneDomainMetrics(naive, pair.gt, pair.height, pair.width, tone),
    });
  }
  const mean = (f: (r: EvalRow) => number) =>
    rows.reduce((acc, r) => acc + f(r), 0) / rows.length;
  return {
    rows,
    meanModelPsnr: mean((r) => r.model.psnr_db),
    meanNaivePsnr: mean((r) => r.naive.psnr_db),
    meanModelSsim: mean((r) => r.model.ssim),
    meanNaiveSsim: mean((r) => r.naive.ssim),
  };
}
