/** Pair loading, cropping, and flip augmentation. */

import { join } from "node:path";
import { Manifest, readFlux, readManifest, readStack } from "./formats.js";
import { Rng, randInt } from "./rng.js";
import { Tensor4, zeros4 } from "./tensor.js";

export interface Pair {
  /** planar (C, H, W) channel values in [0, 1] */
  stack: Float64Array;
  /** (H, W) ground-truth flux, photons/frame */
  gt: Float64Array;
  width: number;
  height: number;
  channels: number;
  t: number;
  speedPxPerFrame: number;
}

export interface Dataset {
  manifest: Manifest;
  pairs: Pair[];
}

/** Combine datasets with identical geometry (e.g. moving plus static). */
export function mergeDatasets(datasets: Dataset[]): Dataset {
  const first = datasets[0];
  for (const d of datasets.slice(1)) {
    if (d.manifest.width !== first.manifest.width ||
        d.manifest.height !== first.manifest.height ||
        d.manifest.channels !== first.manifest.channels) {
      throw new Error("datasets disagree on geometry");
    }
  }
  return { manifest: first.manifest, pairs: datasets.flatMap((d) => d.pairs) };
}

export function loadDataset(dir: string, opts: { minT?: number } = {}): Dataset {
  const manifest = readManifest(dir);
  const pairs: Pair[] = [];
  for (const entry of manifest.pairs) {
    if (opts.minT !== undefined && entry.t < opts.minT) continue;
    const sf = readStack(join(dir, entry.stack));
    const flux = readFlux(join(dir, entry.gt));
    pairs.push({
      stack: sf.planes,
      gt: flux.data,
      width: sf.width,
      height: sf.height,
      channels: sf.channels,
      t: sf.timestamp,
      speedPxPerFrame: entry.speed_px_per_frame,
    });
  }
  if (pairs.length === 0) throw new Error(`no pairs in ${dir} after filtering`);
  return { manifest, pairs };
}

/** Copy a window into NHWC order with optional horizontal/vertical flips. */
function fillSample(
  pair: Pair, x: Tensor4, y: Tensor4, sample: number,
  top: number, left: number, flipH: boolean, flipV: boolean,
): void {
  const outH = x.h;
  const outW = x.w;
  const { width, height, channels } = pair;
  const plane = width * height;
  for (let i = 0; i < outH; i++) {
    const sy = top + (flipV ? outH - 1 - i : i);
    for (let j = 0; j < outW; j++) {
      const sx = left + (flipH ? outW - 1 - j : j);
      const dst = ((sample * outH + i) * outW + j) * channels;
      for (let c = 0; c < channels; c++) {
        x.data[dst + c] = pair.stack[c * plane + sy * width + sx];
      }
      y.data[(sample * outH + i) * outW + j] = pair.gt[sy * width + sx];
    }
  }
}

export interface Batch {
  x: Tensor4;        // (B, crop, crop, C)
  y: Tensor4;        // (B, crop, crop, 1)
}

export function makeBatch(
  pairs: Pair[], batch: number, crop: number, rng: Rng, flips: boolean,
): Batch {
  const channels = pairs[0].channels;
  const x = zeros4(batch, crop, crop, channels);
  const y = zeros4(batch, crop, crop, 1);
  for (let s = 0; s < batch; s++) {
    const pair = pairs[randInt(rng, pairs.length)];
    if (pair.width < crop || pair.height < crop) {
      throw new Error(`crop ${crop} exceeds pair size ${pair.width}x${pair.height}`);
    }
    const top = randInt(rng, pair.height - crop + 1);
    const left = randInt(rng, pair.width - crop + 1);
    const flipH = flips && rng() < 0.5;
    const flipV = flips && rng() < 0.5;
    fillSample(pair, x, y, s, top, left, flipH, flipV);
  }
  return { x, y };
}

/** Whole-image input for evaluation (B = 1). */
export function pairToTensors(pair: Pair): Batch {
  const x = zeros4(1, pair.height, pair.width, pair.channels);
  const y = zeros4(1, pair.height, pair.width, 1);
  fillSample(pair, x, y, 0, 0, 0, false, false);
  return { x, y };
}
