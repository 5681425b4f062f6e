/**
 * Benchmark and prediction file schemas shared with the Python evaluator.
 * Everything crossing the process boundary is validated here.
 */

import { readFileSync } from "node:fs";
import { z } from "zod";

const bboxSchema = z.array(z.number()).length(4);

export const benchmarkObjectSchema = z
  .object({
    object_id: z.number().int(),
    category: z.string().optional().default(""),
    bbox: bboxSchema,
  })
  .passthrough();

export const benchmarkImageSchema = z
  .object({
    image_id: z.number().int(),
    width: z.number().int().optional().default(0),
    height: z.number().int().optional().default(0),
    file_ref: z.string().optional().default(""),
    objects: z.array(benchmarkObjectSchema).default([]),
  })
  .passthrough();

export const benchmarkGroupSchema = z
  .object({
    group_id: z.number().int(),
    image_id: z.number().int(),
    object_ids: z.array(z.number().int()).min(1),
    positive: z.string().min(1),
    negatives: z.array(z.string()).default([]),
  })
  .passthrough();

export const benchmarkFileSchema = z
  .object({
    meta: z.record(z.string(), z.unknown()).default({}),
    images: z.array(benchmarkImageSchema),
    groups: z.array(benchmarkGroupSchema),
  })
  .passthrough();

export type BenchmarkObject = z.infer<typeof benchmarkObjectSchema>;
export type BenchmarkImage = z.infer<typeof benchmarkImageSchema>;
export type BenchmarkGroup = z.infer<typeof benchmarkGroupSchema>;
export type Benchmark = z.infer<typeof benchmarkFileSchema>;

export const vectorRecordSchema = z.object({
  image_id: z.number().int(),
  group_id: z.number().int(),
  bbox: bboxSchema,
  scores: z.array(z.number()).min(1),
});

export const perCaptionRecordSchema = z.object({
  image_id: z.number().int(),
  group_id: z.number().int(),
  caption_index: z.number().int().min(0),
  bbox: bboxSchema,
  confidence: z.number(),
});

export type VectorRecord = z.infer<typeof vectorRecordSchema>;
export type PerCaptionRecord = z.infer<typeof perCaptionRecordSchema>;

export type PredictionMode = "vector" | "per_caption";

export function loadBenchmark(path: string): Benchmark {
  const raw = JSON.parse(readFileSync(path, "utf-8"));
  return benchmarkFileSchema.parse(raw);
}

/** All captions of a group, positive first (score index 0). */
export function vocabulary(group: BenchmarkGroup): string[] {
  return [group.positive, ...group.negatives];
}

export function imageIndex(benchmark: Benchmark): Map<number, BenchmarkImage> {
  return new Map(benchmark.images.map((image) => [image.image_id, image]));
}

/** Serialize records into the evaluator's JSONL shape (mode header first). */
export function toJsonl(
  mode: PredictionMode,
  records: Array<VectorRecord | PerCaptionRecord>,
): string {
  const lines = [JSON.stringify({ mode })];
  for (const record of records) {
    lines.push(JSON.stringify(record));
  }
  return lines.join("\n") + "\n";
}
