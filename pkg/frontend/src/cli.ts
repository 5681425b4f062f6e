#!/usr/bin/env node
/**
 * Export detector predictions for a benchmark file.
 *
 *   fgovd-bridge --benchmark benchmark_hard.json --model gt-echo \
 *       --mode vector --out preds.jsonl
 */

import yargs from "yargs";
import { hideBin } from "yargs/helpers";

import { runAdapter, writePredictions } from "./adapter.js";
import { createDetector } from "./detectors.js";
import { loadBenchmark } from "./schema.js";

async function main(): Promise<void> {
  const argv = await yargs(hideBin(process.argv))
    .option("benchmark", { type: "string", demandOption: true,
      describe: "Benchmark JSON produced by the builder" })
    .option("out", { type: "string", demandOption: true,
      describe: "Destination predictions JSONL" })
    .option("model", { type: "string", default: "gt-echo",
      describe: "gt-echo or a model id served behind --endpoint" })
    .option("mode", {
      choices: ["vector", "per_caption"] as const,
      default: "vector" as const,
      describe: "One inference per vocabulary, or one per caption",
    })
    .option("endpoint", { type: "string",
      describe: "HTTP inference endpoint for non-toy models" })
    .option("device", { type: "string", default: "cpu" })
    .option("batch-size", { type: "number", default: 1 })
    .option("score-floor", { type: "number", default: 0,
      describe: "Drop detections scoring below this value" })
    .option("token-limit", { type: "number",
      describe: "Skip groups whose captions exceed this word count" })
    .option("prompt-template", { type: "string",
      describe: "Caption wrapper with {caption}; default sends it raw" })
    .strict()
    .help()
    .parse();

  const benchmark = loadBenchmark(argv.benchmark);
  const detector = createDetector(
    {
      model: argv.model,
      endpoint: argv.endpoint,
      device: argv.device,
      batchSize: argv["batch-size"],
      tokenLimit: argv["token-limit"],
    },
    benchmark,
  );
  const run = await runAdapter(benchmark, detector, {
    mode: argv.mode,
    scoreFloor: argv["score-floor"],
    promptTemplate: argv["prompt-template"],
    tokenLimit: argv["token-limit"],
  });
  writePredictions(argv.out, run);
  console.log(
    `${detector.name}: ${run.inferences} inferences, ` +
      `${run.records.length} predictions, ` +
      `${run.skippedGroups.length} groups skipped -> ${argv.out}`,
  );
}

main().catch((error) => {
  console.error(error instanceof Error ? error.message : error);
  process.exit(1);
});
