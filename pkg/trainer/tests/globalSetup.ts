/** Generate test fixtures through the exporter CLI (the only interface
 * this package consumes).  Datasets are cached on disk: delete
 * .fixtures/ to regenerate.
 */

import { execFileSync } from "node:child_process";
import { existsSync, mkdirSync, rmSync, writeFileSync } from "node:fs";
import { join } from "node:path";

const ROOT = new URL("..", import.meta.url).pathname;
export const FIXTURES = join(ROOT, ".fixtures");

interface SceneSpec {
  name: string;
  scenes: number;
  frames: number;
  stride: number;
  seed: number;
  width: number;
  height: number;
  mode: "global" | "static";
  speed: number;
  photonsPerSecondMax: number;
}

const SPECS: SceneSpec[] = [
  { name: "small", scenes: 2, frames: 400, stride: 200, seed: 5,
    width: 24, height: 24, mode: "global", speed: 1000, photonsPerSecondMax: 2000 },
  // training: 0.05 px/frame at 20 kFPS, <= 0.1 photons/frame
  { name: "train_moving", scenes: 14, frames: 12288, stride: 4096, seed: 100,
    width: 64, height: 64, mode: "global", speed: 1000, photonsPerSecondMax: 2000 },
  { name: "train_static", scenes: 8, frames: 12288, stride: 4096, seed: 150,
    width: 64, height: 64, mode: "static", speed: 0, photonsPerSecondMax: 2000 },
  // held-out evaluation at t = 4 W_max so the naive baseline is converged
  { name: "eval_moving", scenes: 4, frames: 16384, stride: 16384, seed: 300,
    width: 64, height: 64, mode: "global", speed: 1000, photonsPerSecondMax: 2000 },
  { name: "eval_static", scenes: 4, frames: 16384, stride: 16384, seed: 400,
    width: 64, height: 64, mode: "static", speed: 0, photonsPerSecondMax: 2000 },
];

function generate(spec: SceneSpec): void {
  const dir = join(FIXTURES, spec.name);
  if (existsSync(join(dir, "manifest.json"))) return;
  rmSync(dir, { recursive: true, force: true });
  mkdirSync(dir, { recursive: true });
  const configPath = join(FIXTURES, `${spec.name}.config.json`);
  writeFileSync(configPath, JSON.stringify({
    scene: {
      width: spec.width,
      height: spec.height,
      period: 12,
      mode: spec.mode,
      trajectory: { kind: "piecewise-linear", speed: spec.speed },
    },
    run: {
      frames: spec.frames,
      stride: spec.stride,
      seed: spec.seed,
      photons_per_second_max: spec.photonsPerSecondMax,
    },
  }));
  console.log(`[fixtures] generating ${spec.name} (${spec.scenes} scenes x ${spec.frames} frames)`);
  execFileSync("quantastream", [
    "pairs", "--config", configPath, "--out", dir,
    "--scenes", String(spec.scenes), "--dtype", "u8",
  ], { stdio: "inherit" });
}

export default function setup(): void {
  mkdirSync(FIXTURES, { recursive: true });
  for (const spec of SPECS) generate(spec);
}

if (process.argv[1] === new URL(import.meta.url).pathname) {
  setup();
}
