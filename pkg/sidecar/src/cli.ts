#!/usr/bin/env node
/**
 * Entry point: `finetune` trains a checkpoint from a pair file, `serve`
 * speaks the scoring protocol on stdin/stdout using a checkpoint.
 */

import * as fs from "fs";
import * as readline from "readline";
import { readPairFile } from "./dataset";
import { PairScorer, ScorerConfig } from "./model";
import { handleLine } from "./protocol";

function parseFlags(argv: string[]): Map<string, string> {
  const flags = new Map<string, string>();
  for (let i = 0; i < argv.length; i += 2) {
    const key = argv[i];
    const value = argv[i + 1];
    if (!key.startsWith("--") || value === undefined) {
      throw new Error(`expected --flag value pairs, got ${key}`);
    }
    flags.set(key.slice(2), value);
  }
  return flags;
}

function finetune(argv: string[]): number {
  const flags = parseFlags(argv);
  const pairsPath = flags.get("pairs");
  const outPath = flags.get("out");
  if (!pairsPath || !outPath) {
    process.stderr.write("usage: finetune --pairs FILE --out CHECKPOINT "
      + "[--seed N] [--epochs N] [--batch-size N] [--learning-rate X] "
      + "[--min-pairs N]\n");
    return 1;
  }
  const minPairs = Number(flags.get("min-pairs") ?? 100);
  const pairs = readPairFile(pairsPath);
  if (pairs.length < minPairs) {
    process.stderr.write(
      `refusing to train: ${pairs.length} pairs below minimum ${minPairs}\n`);
    return 2;
  }
  const config: Partial<ScorerConfig> = { seed: Number(flags.get("seed") ?? 0) };
  if (flags.has("epochs")) config.maxEpochs = Number(flags.get("epochs"));
  if (flags.has("batch-size")) config.batchSize = Number(flags.get("batch-size"));
  if (flags.has("learning-rate")) {
    config.learningRate = Number(flags.get("learning-rate"));
  }
  const scorer = new PairScorer(config);
  const report = scorer.train(pairs);
  fs.writeFileSync(outPath, JSON.stringify(scorer.toJSON()) + "\n");
  process.stdout.write(JSON.stringify(report) + "\n");
  return 0;
}

function serve(argv: string[]): number {
  const flags = parseFlags(argv);
  const checkpointPath = flags.get("checkpoint");
  if (!checkpointPath) {
    process.stderr.write("usage: serve --checkpoint FILE\n");
    return 1;
  }
  const scorer = PairScorer.fromJSON(
    JSON.parse(fs.readFileSync(checkpointPath, "utf-8")));
  const reader = readline.createInterface({ input: process.stdin });
  reader.on("line", (line) => {
    if (!line.trim()) return;
    const { replies, done } = handleLine(line, scorer);
    for (const reply of replies) {
      process.stdout.write(JSON.stringify(reply) + "\n");
    }
    if (done) {
      reader.close();
      process.exit(0);
    }
  });
  reader.on("close", () => process.exit(0));
  return 0;
}

function main(): void {
  const [command, ...rest] = process.argv.slice(2);
  try {
    if (command === "finetune") {
      process.exitCode = finetune(rest);
    } else if (command === "serve") {
      const code = serve(rest);
      if (code !== 0) process.exitCode = code;
    } else {
      process.stderr.write("usage: cli.js finetune|serve ...\n");
      process.exitCode = 1;
    }
  } catch (error) {
    process.stderr.write(`error: ${(error as Error).message}\n`);
    process.exitCode = 2;
  }
}

main();
