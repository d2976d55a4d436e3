/** Training loop: Adam on the tone-mapped L1-plus-gradient objective. */

import { writeFileSync } from "node:fs";
import { Dataset, makeBatch } from "./data.js";
import { DEFAULT_LOSS, DEFAULT_TONE, LossConfig, ToneConfig, lossAndGrad } from "./loss.js";
import { Adam, UNet } from "./model.js";
import { mulberry32 } from "./rng.js";

export interface TrainConfig {
  lr: number;
  batch: number;
  epochs: number;
  crop: number;
  flips: boolean;
  seed: number;
  /** overrides epochs x pairs / batch when set */
  steps?: number;
  logEvery?: number;
}

export const DEFAULT_TRAIN: TrainConfig = {
  lr: 3e-4,
  batch: 8,
  epochs: 20,
  crop: 128,
  flips: true,
  seed: 0,
};

export interface TrainResult {
  lossCurve: number[];
  steps: number;
}

export function train(
  model: UNet, dataset: Dataset, cfg: Partial<TrainConfig> = {},
  tone: ToneConfig = DEFAULT_TONE, loss: LossConfig = DEFAULT_LOSS,
): TrainResult {
  const c: TrainConfig = { ...DEFAULT_TRAIN, ...cfg };
  const steps = c.steps ?? Math.max(1, Math.round((c.epochs * dataset.pairs.length) / c.batch));
  const rng = mulberry32(c.seed === 0 ? 0xdada : c.seed);
  const opt = new Adam(c.lr);
  const lossCurve: number[] = [];
  for (let step = 0; step < steps; step++) {
    const batch = makeBatch(dataset.pairs, c.batch, c.crop, rng, c.flips);
    const pred = model.forward(batch.x);
    const { value, grad } = lossAndGrad(pred, batch.y, loss, tone);
    model.zeroGrads();
    model.backward(grad);
    opt.step(model.params());
    lossCurve.push(value);
    if (c.logEvery && (step + 1) % c.logEvery === 0) {
      const window = lossCurve.slice(-c.logEvery);
      const mean = window.reduce((a, b) => a + b, 0) / window.length;
      console.log(`step ${step + 1}/${steps}: loss ${mean.toFixed(6)}`);
    }
  }
  return { lossCurve, steps };
}

/** Moving average used for the monotone-trend check on loss curves. */
export function smooth(curve: number[], window = 10): number[] {
  const out: number[] = [];
  for (let i = 0; i < curve.length; i++) {
    const lo = Math.max(0, i - window + 1);
    const slice = curve.slice(lo, i + 1);
    out.push(slice.reduce((a, b) => a + b, 0) / slice.length);
  }
  return out;
}

export function writeLossCurveCsv(path: string, curve: number[]): void {
  const lines = ["step,loss", ...curve.map((v, i) => `${i + 1},${v}`)];
  writeFileSync(path, lines.join("\n") + "\n");
}
