/**
 * Detector backends. A backend answers one inference at a time: either a
 * whole vocabulary (score vector per detection) or a single caption
 * (confidence per detection). Scores come back raw; NMS, thresholding and
 * every other protocol step live in the evaluator.
 */

import type { Benchmark } from "./schema.js";
import { imageIndex } from "./schema.js";

export interface InferenceContext {
  imageId: number;
  groupId: number;
  fileRef: string;
}

export interface VectorDetection {
  bbox: [number, number, number, number];
  scores: number[];
}

export interface CaptionDetection {
  bbox: [number, number, number, number];
  confidence: number;
}

export interface DetectorBackend {
  readonly name: string;
  /** Word limit of the model's text encoder, when it has one. */
  readonly tokenLimit?: number;
  detectVocabulary(
    ctx: InferenceContext,
    captions: string[],
  ): Promise<VectorDetection[]>;
  detectCaption(
    ctx: InferenceContext,
    caption: string,
    captionIndex: number,
  ): Promise<CaptionDetection[]>;
}

/**
 * Deterministic toy detector that echoes ground truth: one detection per
 * group member, full confidence on the positive caption. Exists to
 * validate the export pipeline end to end.
 */
export class GtEchoDetector implements DetectorBackend {
  readonly name = "gt-echo";
  private boxes = new Map<number, [number, number, number, number][]>();

  constructor(benchmark: Benchmark) {
    const images = imageIndex(benchmark);
    for (const group of benchmark.groups) {
      const image = images.get(group.image_id);
      if (!image) {
        throw new Error(`group ${group.group_id}: unknown image ${group.image_id}`);
      }
      const byId = new Map(image.objects.map((o) => [o.object_id, o]));
      const gt: [number, number, number, number][] = [];
      for (const objectId of group.object_ids) {
        const obj = byId.get(objectId);
        if (!obj) {
          throw new Error(
            `group ${group.group_id}: object ${objectId} missing from image`,
          );
        }
        gt.push(obj.bbox as [number, number, number, number]);
      }
      this.boxes.set(group.group_id, gt);
    }
  }

  async detectVocabulary(
    ctx: InferenceContext,
    captions: string[],
  ): Promise<VectorDetection[]> {
    const gt = this.boxes.get(ctx.groupId) ?? [];
    return gt.map((bbox) => ({
      bbox,
      scores: captions.map((_, j) => (j === 0 ? 1.0 : 0.0)),
    }));
  }

  async detectCaption(
    ctx: InferenceContext,
    _caption: string,
    captionIndex: number,
  ): Promise<CaptionDetection[]> {
    if (captionIndex !== 0) {
      return [];
    }
    const gt = this.boxes.get(ctx.groupId) ?? [];
    return gt.map((bbox) => ({ bbox, confidence: 1.0 }));
  }
}

export interface HttpDetectorOptions {
  endpoint: string;
  model?: string;
  device?: string;
  batchSize?: number;
  tokenLimit?: number;
  timeoutMs?: number;
}

/**
 * Generic HTTP inference client. The service receives the image
 * reference plus caption(s) and must answer
 * `{detections: [{bbox: [x,y,w,h], scores: [...]}]}` in vector mode or
 * `{detections: [{bbox: [x,y,w,h], confidence: h}]}` in per-caption mode.
 */
export class HttpDetector implements DetectorBackend {
  readonly name: string;
  readonly tokenLimit?: number;

  constructor(private options: HttpDetectorOptions) {
    this.name = options.model ? `http:${options.model}` : "http";
    this.tokenLimit = options.tokenLimit;
  }

  private async post(body: Record<string, unknown>): Promise<any> {
    const controller = new AbortController();
    const timer = setTimeout(
      () => controller.abort(),
      this.options.timeoutMs ?? 120_000,
    );
    try {
      const response = await fetch(this.options.endpoint, {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify({
          model: this.options.model,
          device: this.options.device,
          batch_size: this.options.batchSize,
          ...body,
        }),
        signal: controller.signal,
      });
      if (!response.ok) {
        throw new Error(`detector endpoint answered ${response.status}`);
      }
      return await response.json();
    } finally {
      clearTimeout(timer);
    }
  }

  async detectVocabulary(
    ctx: InferenceContext,
    captions: string[],
  ): Promise<VectorDetection[]> {
    const payload = await this.post({ image: ctx.fileRef, captions });
    return (payload.detections ?? []) as VectorDetection[];
  }

  async detectCaption(
    ctx: InferenceContext,
    caption: string,
    captionIndex: number,
  ): Promise<CaptionDetection[]> {
    const payload = await this.post({
      image: ctx.fileRef,
      caption,
      caption_index: captionIndex,
    });
    return (payload.detections ?? []) as CaptionDetection[];
  }
}

export interface DetectorSelection {
  model: string;
  endpoint?: string;
  device?: string;
  batchSize?: number;
  tokenLimit?: number;
}

/** Model loading failures are fatal by design. */
export function createDetector(
  selection: DetectorSelection,
  benchmark: Benchmark,
): DetectorBackend {
  if (selection.model === "gt-echo") {
    return new GtEchoDetector(benchmark);
  }
  if (selection.model === "http" || selection.endpoint) {
    if (!selection.endpoint) {
      throw new Error("http detector needs --endpoint");
    }
    return new HttpDetector({
      endpoint: selection.endpoint,
      model: selection.model === "http" ? undefined : selection.model,
      device: selection.device,
      batchSize: selection.batchSize,
      tokenLimit: selection.tokenLimit,
    });
  }
  throw new Error(
    `unknown model '${selection.model}'; use gt-echo or an --endpoint ` +
      "backed model id",
  );
}
