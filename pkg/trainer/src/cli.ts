/** Command line: train a reconstructor on a pairs export, or evaluate
 * a checkpoint against a held-out set.
 *
 *   node dist/cli.js train    --pairs DIR --out DIR [--steps N] [--batch N]
 *                             [--crop N] [--scales N] [--base N] [--lr X]
 *                             [--seed N] [--min-t N]
 *   node dist/cli.js evaluate --pairs DIR --checkpoint FILE [--min-t N]
 */

import { mkdirSync } from "node:fs";
import { join } from "node:path";
import { loadDataset } from "./data.js";
import { evaluatePairs } from "./evaluate.js";
import { UNet, loadCheckpoint, saveCheckpoint } from "./model.js";
import { train, writeLossCurveCsv } from "./train.js";

function parseArgs(argv: string[]): Map<string, string> {
  const out = new Map<string, string>();
  for (let i = 0; i < argv.length; i += 2) {
    const key = argv[i];
    if (!key.startsWith("--") || i + 1 >= argv.length) {
      throw new Error(`expected --flag value pairs, got ${key}`);
    }
    out.set(key.slice(2), argv[i + 1]);
  }
  return out;
}

function num(args: Map<string, string>, key: string, fallback: number): number {
  const raw = args.get(key);
  return raw === undefined ? fallback : Number(raw);
}

function cmdTrain(args: Map<string, string>): number {
  const pairsDir = args.get("pairs");
  const outDir = args.get("out");
  if (!pairsDir || !outDir) {
    console.error("train needs --pairs DIR and --out DIR");
    return 2;
  }
  mkdirSync(outDir, { recursive: true });
  const dataset = loadDataset(pairsDir, { minT: num(args, "min-t", 0) });
  const model = new UNet(
    {
      inChannels: dataset.manifest.channels,
      scales: num(args, "scales", 4),
      baseWidth: num(args, "base", 32),
    },
    num(args, "seed", 0),
  );
  console.log(`training on ${dataset.pairs.length} pairs, ${model.paramCount()} parameters`);
  const result = train(model, dataset, {
    lr: num(args, "lr", 3e-4),
    batch: num(args, "batch", 8),
    epochs: num(args, "epochs", 20),
    crop: num(args, "crop", 128),
    steps: args.has("steps") ? num(args, "steps", 0) : undefined,
    seed: num(args, "seed", 0),
    logEvery: num(args, "log-every", 50),
  }, {
    mu: dataset.manifest.tone.mu,
    zeta: dataset.manifest.tone.zeta,
  }, {
    sigma: dataset.manifest.loss.sigma,
  });
  const ckpt = join(outDir, "checkpoint.json");
  saveCheckpoint(ckpt, model);
  writeLossCurveCsv(join(outDir, "loss_curve.csv"), result.lossCurve);
  const last = result.lossCurve.slice(-10);
  console.log(JSON.stringify({
    checkpoint: ckpt,
    steps: result.steps,
    final_loss: last.reduce((a, b) => a + b, 0) / last.length,
  }));
  return 0;
}

function cmdEvaluate(args: Map<string, string>): number {
  const pairsDir = args.get("pairs");
  const ckpt = args.get("checkpoint");
  if (!pairsDir || !ckpt) {
    console.error("evaluate needs --pairs DIR and --checkpoint FILE");
    return 2;
  }
  const dataset = loadDataset(pairsDir, { minT: num(args, "min-t", 0) });
  const model = loadCheckpoint(ckpt);
  const table = evaluatePairs(model, dataset.pairs, dataset.manifest);
  for (const row of table.rows) {
    console.log(JSON.stringify({
      t: row.t,
      speed_px_per_frame: row.speedPxPerFrame,
      model_psnr_db: row.model.psnr_db,
      model_ssim: row.model.ssim,
      naive_psnr_db: row.naive.psnr_db,
      naive_ssim: row.naive.ssim,
    }));
  }
  console.log(JSON.stringify({
    mean_model_psnr_db: table.meanModelPsnr,
    mean_naive_psnr_db: table.meanNaivePsnr,
    mean_model_ssim: table.meanModelSsim,
    mean_naive_ssim: table.meanNaiveSsim,
    pairs: table.rows.length,
  }));
  return 0;
}

function main(): number {
  const [command, ...rest] = process.argv.slice(2);
  try {
    if (command === "train") return cmdTrain(parseArgs(rest));
    if (command === "evaluate") return cmdEvaluate(parseArgs(rest));
  } catch (err) {
    console.error(err instanceof Error ? err.message : String(err));
    return 1;
  }
  console.error("usage: cli.js <train|evaluate> --flag value ...");
  return 2;
}

process.exit(main());
