/** Small U-Net for exposure-stack-to-flux reconstruction.
 *
 * Residual blocks of two 3x3 convolutions at every scale, pixel-shuffle
 * style downsampling (space-to-depth followed by a 1x1 convolution), and
 * bilinear upsampling in the decoder with skip connections between
 * matching scales.  Convolutions run as im2col matmuls with hand-written
 * backward passes; everything is float64 and fully deterministic for a
 * fixed seed.
 */

import { readFileSync, writeFileSync } from "node:fs";
import { gaussian, mulberry32 } from "./rng.js";
import {
  Tensor4, matmulABTAcc, matmulATBAcc, matmulAcc, zeros4,
} from "./tensor.js";

export interface UNetConfig {
  inChannels: number;
  outChannels: number;
  scales: number;
  baseWidth: number;
}

export const DEFAULT_UNET: UNetConfig = {
  inChannels: 8,
  outChannels: 1,
  scales: 4,
  baseWidth: 32,
};

export interface Param {
  name: string;
  shape: number[];
  data: Float64Array;
  grad: Float64Array;
}

function makeParam(name: string, shape: number[], init: (i: number) => number): Param {
  const size = shape.reduce((a, b) => a * b, 1);
  const data = new Float64Array(size);
  for (let i = 0; i < size; i++) data[i] = init(i);
  return { name, shape, data, grad: new Float64Array(size) };
}

interface Layer {
  params(): Param[];
  forward(x: Tensor4): Tensor4;
  backward(dy: Tensor4): Tensor4;
}

class Conv implements Layer {
  readonly k: number;
  readonly cin: number;
  readonly cout: number;
  private w: Param;
  private bias: Param;
  private cols: Float64Array | null = null;
  private inShape: Tensor4 | null = null;

  constructor(name: string, k: number, cin: number, cout: number, rng: () => number) {
    this.k = k;
    this.cin = cin;
    this.cout = cout;
    const std = Math.sqrt(2.0 / (k * k * cin));
    this.w = makeParam(`${name}.w`, [k * k * cin, cout], () => rng() * std);
    this.bias = makeParam(`${name}.b`, [cout], () => 0);
  }

  params(): Param[] {
    return [this.w, this.bias];
  }

  private im2col(x: Tensor4): Float64Array {
    // zero-padded 3x3 neighborhoods as rows: cols[m, (ky*3+kx)*cin + c]
    const { b, h, w, c } = x;
    const cols = new Float64Array(b * h * w * 9 * c);
    const rowLen = 9 * c;
    for (let bi = 0; bi < b; bi++) {
      const xb = bi * h * w * c;
      for (let y = 0; y < h; y++) {
        for (let xx = 0; xx < w; xx++) {
          const m = ((bi * h + y) * w + xx) * rowLen;
          for (let ky = 0; ky < 3; ky++) {
            const sy = y + ky - 1;
            if (sy < 0 || sy >= h) continue;
            for (let kx = 0; kx < 3; kx++) {
              const sx = xx + kx - 1;
              if (sx < 0 || sx >= w) continue;
              const src = xb + (sy * w + sx) * c;
              const dst = m + (ky * 3 + kx) * c;
              for (let ci = 0; ci < c; ci++) cols[dst + ci] = x.data[src + ci];
            }
          }
        }
      }
    }
    return cols;
  }

  private col2im(dcols: Float64Array, shape: Tensor4): Tensor4 {
    const { b, h, w, c } = shape;
    const dx = zeros4(b, h, w, c);
    const rowLen = 9 * c;
    for (let bi = 0; bi < b; bi++) {
      const xb = bi * h * w * c;
      for (let y = 0; y < h; y++) {
        for (let xx = 0; xx < w; xx++) {
          const m = ((bi * h + y) * w + xx) * rowLen;
          for (let ky = 0; ky < 3; ky++) {
            const sy = y + ky - 1;
            if (sy < 0 || sy >= h) continue;
            for (let kx = 0; kx < 3; kx++) {
              const sx = xx + kx - 1;
              if (sx < 0 || sx >= w) continue;
              const dst = xb + (sy * w + sx) * c;
              const src = m + (ky * 3 + kx) * c;
              for (let ci = 0; ci < c; ci++) dx.data[dst + ci] += dcols[src + ci];
            }
          }
        }
      }
    }
    return dx;
  }

  forward(x: Tensor4): Tensor4 {
    if (x.c !== this.cin) throw new Error(`${this.w.name}: got ${x.c} channels, want ${this.cin}`);
    const m = x.b * x.h * x.w;
    const y = zeros4(x.b, x.h, x.w, this.cout);
    this.inShape = x;
    if (this.k === 3) {
      this.cols = this.im2col(x);
      matmulAcc(this.cols, this.w.data, y.data, m, 9 * this.cin, this.cout);
    } else {
      this.cols = x.data;
      matmulAcc(x.data, this.w.data, y.data, m, this.cin, this.cout);
    }
    for (let i = 0; i < m; i++) {
      const off = i * this.cout;
      for (let co = 0; co < this.cout; co++) y.data[off + co] += this.bias.data[co];
    }
    return y;
  }

  backward(dy: Tensor4): Tensor4 {
    const x = this.inShape!;
    const cols = this.cols!;
    const m = x.b * x.h * x.w;
    const kk = this.k === 3 ? 9 * this.cin : this.cin;
    matmulATBAcc(cols, dy.data, this.w.grad, m, kk, this.cout);
    for (let i = 0; i < m; i++) {
      const off = i * this.cout;
      for (let co = 0; co < this.cout; co++) this.bias.grad[co] += dy.data[off + co];
    }
    const dcols = new Float64Array(m * kk);
    matmulABTAcc(dy.data, this.w.data, dcols, m, kk, this.cout);
    if (this.k === 3) return this.col2im(dcols, x);
    return { data: dcols, b: x.b, h: x.h, w: x.w, c: this.cin };
  }
}

class ReLU implements Layer {
  private mask: Uint8Array | null = null;

  params(): Param[] {
    return [];
  }

  forward(x: Tensor4): Tensor4 {
    const y = zeros4(x.b, x.h, x.w, x.c);
    this.mask = new Uint8Array(x.data.length);
    for (let i = 0; i < x.data.length; i++) {
      if (x.data[i] > 0) {
        y.data[i] = x.data[i];
        this.mask[i] = 1;
      }
    }
    return y;
  }

  backward(dy: Tensor4): Tensor4 {
    const dx = zeros4(dy.b, dy.h, dy.w, dy.c);
    const mask = this.mask!;
    for (let i = 0; i < dy.data.length; i++) if (mask[i]) dx.data[i] = dy.data[i];
    return dx;
  }
}

class ResBlock implements Layer {
  private conv1: Conv;
  private conv2: Conv;
  private relu1 = new ReLU();
  private outMask: Uint8Array | null = null;

  constructor(name: string, channels: number, rng: () => number) {
    this.conv1 = new Conv(`${name}.conv1`, 3, channels, channels, rng);
    this.conv2 = new Conv(`${name}.conv2`, 3, channels, channels, rng);
  }

  params(): Param[] {
    return [...this.conv1.params(), ...this.conv2.params()];
  }

  forward(x: Tensor4): Tensor4 {
    const h = this.conv2.forward(this.relu1.forward(this.conv1.forward(x)));
    const y = zeros4(x.b, x.h, x.w, x.c);
    this.outMask = new Uint8Array(x.data.length);
    for (let i = 0; i < x.data.length; i++) {
      const v = x.data[i] + h.data[i];
      if (v > 0) {
        y.data[i] = v;
        this.outMask[i] = 1;
      }
    }
    return y;
  }

  backward(dy: Tensor4): Tensor4 {
    const mask = this.outMask!;
    const dsum = zeros4(dy.b, dy.h, dy.w, dy.c);
    for (let i = 0; i < dy.data.length; i++) if (mask[i]) dsum.data[i] = dy.data[i];
    const dh = this.conv1.backward(this.relu1.backward(this.conv2.backward(dsum)));
    for (let i = 0; i < dh.data.length; i++) dh.data[i] += dsum.data[i];
    return dh;
  }
}

class SpaceToDepth implements Layer {
  params(): Param[] {
    return [];
  }

  forward(x: Tensor4): Tensor4 {
    const { b, h, w, c } = x;
    const y = zeros4(b, h / 2, w / 2, 4 * c);
    for (let bi = 0; bi < b; bi++) {
      for (let yy = 0; yy < h / 2; yy++) {
        for (let xx = 0; xx < w / 2; xx++) {
          const dst = ((bi * (h / 2) + yy) * (w / 2) + xx) * 4 * c;
          for (let dy = 0; dy < 2; dy++) {
            for (let dx = 0; dx < 2; dx++) {
              const src = ((bi * h + 2 * yy + dy) * w + 2 * xx + dx) * c;
              const blk = dst + (dy * 2 + dx) * c;
              for (let ci = 0; ci < c; ci++) y.data[blk + ci] = x.data[src + ci];
            }
          }
        }
      }
    }
    return y;
  }

  backward(dy: Tensor4): Tensor4 {
    const { b } = dy;
    const h = dy.h * 2;
    const w = dy.w * 2;
    const c = dy.c / 4;
    const dx = zeros4(b, h, w, c);
    for (let bi = 0; bi < b; bi++) {
      for (let yy = 0; yy < dy.h; yy++) {
        for (let xx = 0; xx < dy.w; xx++) {
          const src = ((bi * dy.h + yy) * dy.w + xx) * dy.c;
          for (let oy = 0; oy < 2; oy++) {
            for (let ox = 0; ox < 2; ox++) {
              const dst = ((bi * h + 2 * yy + oy) * w + 2 * xx + ox) * c;
              const blk = src + (oy * 2 + ox) * c;
              for (let ci = 0; ci < c; ci++) dx.data[dst + ci] = dy.data[blk + ci];
            }
          }
        }
      }
    }
    return dx;
  }
}

/** 2x bilinear upsampling with half-pixel centers. */
class BilinearUp2 implements Layer {
  private inShape: Tensor4 | null = null;

  params(): Param[] {
    return [];
  }

  private static taps(nOut: number, nIn: number): Array<[number, number, number, number]> {
    const taps: Array<[number, number, number, number]> = [];
    for (let i = 0; i < nOut; i++) {
      const src = (i + 0.5) / 2 - 0.5;
      let i0 = Math.floor(src);
      let f = src - i0;
      if (i0 < 0) {
        i0 = 0;
        f = 0;
      }
      let i1 = i0 + 1;
      if (i1 >= nIn) {
        i1 = nIn - 1;
        f = 0;
      }
      taps.push([i0, i1, 1 - f, f]);
    }
    return taps;
  }

  forward(x: Tensor4): Tensor4 {
    this.inShape = x;
    const { b, h, w, c } = x;
    const ty = BilinearUp2.taps(2 * h, h);
    const tx = BilinearUp2.taps(2 * w, w);
    const y = zeros4(b, 2 * h, 2 * w, c);
    for (let bi = 0; bi < b; bi++) {
      for (let i = 0; i < 2 * h; i++) {
        const [y0, y1, wy0, wy1] = ty[i];
        for (let j = 0; j < 2 * w; j++) {
          const [x0, x1, wx0, wx1] = tx[j];
          const dst = ((bi * 2 * h + i) * 2 * w + j) * c;
          const s00 = ((bi * h + y0) * w + x0) * c;
          const s01 = ((bi * h + y0) * w + x1) * c;
          const s10 = ((bi * h + y1) * w + x0) * c;
          const s11 = ((bi * h + y1) * w + x1) * c;
          for (let ci = 0; ci < c; ci++) {
            y.data[dst + ci] =
              wy0 * (wx0 * x.data[s00 + ci] + wx1 * x.data[s01 + ci]) +
              wy1 * (wx0 * x.data[s10 + ci] + wx1 * x.data[s11 + ci]);
          }
        }
      }
    }
    return y;
  }

  backward(dy: Tensor4): Tensor4 {
    const x = this.inShape!;
    const { b, h, w, c } = x;
    const ty = BilinearUp2.taps(2 * h, h);
    const tx = BilinearUp2.taps(2 * w, w);
    const dx = zeros4(b, h, w, c);
    for (let bi = 0; bi < b; bi++) {
      for (let i = 0; i < 2 * h; i++) {
        const [y0, y1, wy0, wy1] = ty[i];
        for (let j = 0; j < 2 * w; j++) {
          const [x0, x1, wx0, wx1] = tx[j];
          const src = ((bi * 2 * h + i) * 2 * w + j) * c;
          const s00 = ((bi * h + y0) * w + x0) * c;
          const s01 = ((bi * h + y0) * w + x1) * c;
          const s10 = ((bi * h + y1) * w + x0) * c;
          const s11 = ((bi * h + y1) * w + x1) * c;
          for (let ci = 0; ci < c; ci++) {
            const g = dy.data[src + ci];
            dx.data[s00 + ci] += wy0 * wx0 * g;
            dx.data[s01 + ci] += wy0 * wx1 * g;
            dx.data[s10 + ci] += wy1 * wx0 * g;
            dx.data[s11 + ci] += wy1 * wx1 * g;
          }
        }
      }
    }
    return dx;
  }
}

function concatC(a: Tensor4, b: Tensor4): Tensor4 {
  const y = zeros4(a.b, a.h, a.w, a.c + b.c);
  const m = a.b * a.h * a.w;
  for (let i = 0; i < m; i++) {
    y.data.set(a.data.subarray(i * a.c, (i + 1) * a.c), i * y.c);
    y.data.set(b.data.subarray(i * b.c, (i + 1) * b.c), i * y.c + a.c);
  }
  return y;
}

function splitC(dy: Tensor4, ca: number): [Tensor4, Tensor4] {
  const cb = dy.c - ca;
  const a = zeros4(dy.b, dy.h, dy.w, ca);
  const b = zeros4(dy.b, dy.h, dy.w, cb);
  const m = dy.b * dy.h * dy.w;
  for (let i = 0; i < m; i++) {
    a.data.set(dy.data.subarray(i * dy.c, i * dy.c + ca), i * ca);
    b.data.set(dy.data.subarray(i * dy.c + ca, (i + 1) * dy.c), i * cb);
  }
  return [a, b];
}

export class UNet {
  readonly config: UNetConfig;
  private stem: Conv;
  private encBlocks: ResBlock[] = [];
  private downS2D: SpaceToDepth[] = [];
  private downConv: Conv[] = [];
  private bottleneck: ResBlock;
  private upSample: BilinearUp2[] = [];
  private upConv: Conv[] = [];
  private mergeConv: Conv[] = [];
  private decBlocks: ResBlock[] = [];
  private head: Conv;
  private skips: Tensor4[] = [];

  constructor(config: Partial<UNetConfig> = {}, seed = 0) {
    this.config = { ...DEFAULT_UNET, ...config };
    const { inChannels, outChannels, scales, baseWidth } = this.config;
    const g = gaussian(mulberry32(seed === 0 ? 0x5eed : seed));
    const width = (s: number) => baseWidth << s;
    this.stem = new Conv("stem", 3, inChannels, width(0), g);
    for (let s = 0; s < scales; s++) {
      this.encBlocks.push(new ResBlock(`enc${s}`, width(s), g));
      this.downS2D.push(new SpaceToDepth());
      this.downConv.push(new Conv(`down${s}`, 1, 4 * width(s), width(s + 1), g));
    }
    this.bottleneck = new ResBlock("bottleneck", width(scales), g);
    for (let s = scales - 1; s >= 0; s--) {
      this.upSample.push(new BilinearUp2());
      this.upConv.push(new Conv(`up${s}`, 1, width(s + 1), width(s), g));
      this.mergeConv.push(new Conv(`merge${s}`, 1, 2 * width(s), width(s), g));
      this.decBlocks.push(new ResBlock(`dec${s}`, width(s), g));
    }
    this.head = new Conv("head", 3, width(0), outChannels, g);
  }

  layers(): Layer[] {
    return [
      this.stem, ...this.encBlocks, ...this.downConv, this.bottleneck,
      ...this.upConv, ...this.mergeConv, ...this.decBlocks, this.head,
    ];
  }

  params(): Param[] {
    return this.layers().flatMap((l) => l.params());
  }

  paramCount(): number {
    return this.params().reduce((acc, p) => acc + p.data.length, 0);
  }

  zeroGrads(): void {
    for (const p of this.params()) p.grad.fill(0);
  }

  forward(x: Tensor4): Tensor4 {
    const div = 1 << this.config.scales;
    if (x.h % div !== 0 || x.w % div !== 0) {
      throw new Error(`spatial size ${x.h}x${x.w} not divisible by ${div}`);
    }
    if (x.c !== this.config.inChannels) {
      throw new Error(`got ${x.c} channels, model expects ${this.config.inChannels}`);
    }
    this.skips = [];
    let t = this.stem.forward(x);
    for (let s = 0; s < this.config.scales; s++) {
      t = this.encBlocks[s].forward(t);
      this.skips.push(t);
      t = this.downConv[s].forward(this.downS2D[s].forward(t));
    }
    t = this.bottleneck.forward(t);
    for (let d = 0; d < this.config.scales; d++) {
      t = this.upConv[d].forward(this.upSample[d].forward(t));
      t = this.mergeConv[d].forward(concatC(t, this.skips[this.config.scales - 1 - d]));
      t = this.decBlocks[d].forward(t);
    }
    return this.head.forward(t);
  }

  /** Accumulate parameter gradients; returns the input gradient. */
  backward(dy: Tensor4): Tensor4 {
    let t = this.head.backward(dy);
    const skipGrads: Tensor4[] = [];
    for (let d = this.config.scales - 1; d >= 0; d--) {
      t = this.decBlocks[d].backward(t);
      const merged = this.mergeConv[d].backward(t);
      const [dt, dskip] = splitC(merged, t.c);
      skipGrads[this.config.scales - 1 - d] = dskip;
      t = this.upSample[d].backward(this.upConv[d].backward(dt));
    }
    t = this.bottleneck.backward(t);
    for (let s = this.config.scales - 1; s >= 0; s--) {
      t = this.downS2D[s].backward(this.downConv[s].backward(t));
      for (let i = 0; i < t.data.length; i++) t.data[i] += skipGrads[s].data[i];
      t = this.encBlocks[s].backward(t);
    }
    return this.stem.backward(t);
  }
}

export class Adam {
  readonly lr: number;
  private beta1 = 0.9;
  private beta2 = 0.999;
  private eps = 1e-8;
  private t = 0;
  private m = new Map<string, Float64Array>();
  private v = new Map<string, Float64Array>();

  constructor(lr = 3e-4) {
    this.lr = lr;
  }

  step(params: Param[]): void {
    this.t += 1;
    const c1 = 1 - this.beta1 ** this.t;
    const c2 = 1 - this.beta2 ** this.t;
    for (const p of params) {
      let m = this.m.get(p.name);
      let v = this.v.get(p.name);
      if (!m) {
        m = new Float64Array(p.data.length);
        v = new Float64Array(p.data.length);
        this.m.set(p.name, m);
        this.v.set(p.name, v!);
      }
      for (let i = 0; i < p.data.length; i++) {
        const g = p.grad[i];
        m[i] = this.beta1 * m[i] + (1 - this.beta1) * g;
        v![i] = this.beta2 * v![i] + (1 - this.beta2) * g * g;
        p.data[i] -= (this.lr * (m[i] / c1)) / (Math.sqrt(v![i] / c2) + this.eps);
      }
    }
  }
}

interface CheckpointJson {
  config: UNetConfig;
  params: { name: string; shape: number[]; data: string }[];
}

export function saveCheckpoint(path: string, model: UNet): void {
  const out: CheckpointJson = {
    config: model.config,
    params: model.params().map((p) => ({
      name: p.name,
      shape: p.shape,
      data: Buffer.from(p.data.buffer, p.data.byteOffset, p.data.byteLength).toString("base64"),
    })),
  };
  writeFileSync(path, JSON.stringify(out));
}

export function loadCheckpoint(path: string): UNet {
  const raw = JSON.parse(readFileSync(path, "utf-8")) as CheckpointJson;
  const model = new UNet(raw.config);
  const byName = new Map(raw.params.map((p) => [p.name, p]));
  for (const p of model.params()) {
    const stored = byName.get(p.name);
    if (!stored) throw new Error(`checkpoint missing parameter ${p.name}`);
    const buf = Buffer.from(stored.data, "base64");
    p.data.set(new Float64Array(buf.buffer, buf.byteOffset, buf.byteLength / 8));
  }
  return model;
}
