/**
 * Drives a detector over every object group of a benchmark and collects
 * evaluator-ready prediction records: one vocabulary inference per group
 * in vector mode, one inference per caption in per-caption mode.
 */

import { mkdirSync, writeFileSync } from "node:fs";
import { dirname } from "node:path";

import type { DetectorBackend, InferenceContext } from "./detectors.js";
import {
  type Benchmark,
  type PerCaptionRecord,
  type PredictionMode,
  type VectorRecord,
  imageIndex,
  toJsonl,
  vocabulary,
} from "./schema.js";

export interface AdapterConfig {
  mode: PredictionMode;
  /** Detections scoring below the floor are not exported. */
  scoreFloor?: number;
  /**
   * Applied to each caption before inference; `{caption}` is replaced.
   * The default sends the raw caption with no pre-appended prompt.
   */
  promptTemplate?: string;
  /** Overrides the detector's own token limit when set. */
  tokenLimit?: number;
}

export interface AdapterRun {
  mode: PredictionMode;
  records: Array<VectorRecord | PerCaptionRecord>;
  /** group_ids skipped because a caption exceeded the token limit. */
  skippedGroups: number[];
  inferences: number;
}

export function wordCount(text: string): number {
  return text.split(/\s+/).filter(Boolean).length;
}

function applyTemplate(template: string | undefined, caption: string): string {
  if (!template) {
    return caption;
  }
  return template.replaceAll("{caption}", caption);
}

export async function runAdapter(
  benchmark: Benchmark,
  detector: DetectorBackend,
  config: AdapterConfig,
  warn: (message: string) => void = (message) => console.warn(message),
): Promise<AdapterRun> {
  const images = imageIndex(benchmark);
  const floor = config.scoreFloor ?? 0;
  const tokenLimit = config.tokenLimit ?? detector.tokenLimit;
  const records: Array<VectorRecord | PerCaptionRecord> = [];
  const skippedGroups: number[] = [];
  let inferences = 0;

  for (const group of benchmark.groups) {
    const image = images.get(group.image_id);
    if (!image) {
      throw new Error(`group ${group.group_id}: unknown image ${group.image_id}`);
    }
    const captions = vocabulary(group).map((caption) =>
      applyTemplate(config.promptTemplate, caption),
    );
    if (tokenLimit !== undefined) {
      const over = captions.find((caption) => wordCount(caption) > tokenLimit);
      if (over !== undefined) {
        warn(
          `skipping group ${group.group_id}: caption exceeds ` +
            `${tokenLimit}-token limit (${JSON.stringify(over)})`,
        );
        skippedGroups.push(group.group_id);
        continue;
      }
    }
    const ctx: InferenceContext = {
      imageId: group.image_id,
      groupId: group.group_id,
      fileRef: image.file_ref,
    };
    if (config.mode === "vector") {
      const detections = await detector.detectVocabulary(ctx, captions);
      inferences += 1;
      for (const det of detections) {
        if (det.scores.length !== captions.length) {
          throw new Error(
            `group ${group.group_id}: detector returned ${det.scores.length} ` +
              `scores for ${captions.length} captions`,
          );
        }
        if (Math.max(...det.scores) < floor) {
          continue;
        }
        records.push({
          image_id: group.image_id,
          group_id: group.group_id,
          bbox: det.bbox,
          scores: det.scores,
        });
      }
    } else {
      for (let j = 0; j < captions.length; j += 1) {
        const detections = await detector.detectCaption(ctx, captions[j], j);
        inferences += 1;
        for (const det of detections) {
          if (det.confidence < floor) {
            continue;
          }
          records.push({
            image_id: group.image_id,
            group_id: group.group_id,
            caption_index: j,
            bbox: det.bbox,
            confidence: det.confidence,
          });
        }
      }
    }
  }
  return { mode: config.mode, records, skippedGroups, inferences };
}

export function writePredictions(path: string, run: AdapterRun): void {
  mkdirSync(dirname(path), { recursive: true });
  writeFileSync(path, toJsonl(run.mode, run.records), "utf-8");
}
