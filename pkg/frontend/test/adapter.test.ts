import { describe, expect, it } from "vitest";

import { runAdapter, wordCount } from "../src/adapter.js";
import {
  GtEchoDetector,
  createDetector,
  type CaptionDetection,
  type DetectorBackend,
  type InferenceContext,
  type VectorDetection,
} from "../src/detectors.js";
import {
  benchmarkFileSchema,
  perCaptionRecordSchema,
  toJsonl,
  vectorRecordSchema,
  vocabulary,
} from "../src/schema.js";

const NEGATIVES = [
  "A red chair.",
  "A blue chair.",
  "A green chair.",
  "A white chair.",
  "A black chair.",
];

function fixtureBenchmark(extraGroup = false) {
  const images = [
    {
      image_id: 1,
      width: 640,
      height: 480,
      file_ref: "img1.jpg",
      objects: [
        { object_id: 10, category: "chair", bbox: [10, 10, 100, 80] },
        { object_id: 11, category: "chair", bbox: [300, 200, 90, 70] },
      ],
    },
  ];
  const groups = [
    {
      group_id: 0,
      image_id: 1,
      object_ids: [10, 11],
      positive: "A brown chair.",
      negatives: NEGATIVES,
    },
  ];
  if (extraGroup) {
    images.push({
      image_id: 2,
      width: 640,
      height: 480,
      file_ref: "img2.jpg",
      objects: [{ object_id: 20, category: "lamp", bbox: [5, 5, 50, 50] }],
    });
    groups.push({
      group_id: 1,
      image_id: 2,
      object_ids: [20],
      positive:
        "A lamp described with a deliberately very long caption that " +
        "runs well past sixteen words to trip the token limit check.",
      negatives: ["A short lamp."],
    });
  }
  return benchmarkFileSchema.parse({ meta: {}, images, groups });
}

class CountingDetector implements DetectorBackend {
  readonly name = "counting";
  vocabularyCalls = 0;
  captionCalls = 0;
  seenCaptions: string[] = [];

  constructor(private inner: DetectorBackend) {}

  async detectVocabulary(ctx: InferenceContext, captions: string[]) {
    this.vocabularyCalls += 1;
    this.seenCaptions.push(...captions);
    return this.inner.detectVocabulary(ctx, captions);
  }

  async detectCaption(ctx: InferenceContext, caption: string, j: number) {
    this.captionCalls += 1;
    this.seenCaptions.push(caption);
    return this.inner.detectCaption(ctx, caption, j);
  }
}

describe("gt-echo adapter runs", () => {
  it("vector mode: one inference per group, one record per member", async () => {
    const benchmark = fixtureBenchmark();
    const detector = new CountingDetector(new GtEchoDetector(benchmark));
    const run = await runAdapter(benchmark, detector, { mode: "vector" });
    expect(detector.vocabularyCalls).toBe(1);
    expect(run.inferences).toBe(1);
    expect(run.records).toHaveLength(2);
    for (const record of run.records) {
      const parsed = vectorRecordSchema.parse(record);
      expect(parsed.scores).toHaveLength(6);
      expect(parsed.scores[0]).toBe(1.0);
      expect(parsed.scores.slice(1).every((s) => s === 0)).toBe(true);
    }
  });

  it("per-caption mode: one inference per caption", async () => {
    const benchmark = fixtureBenchmark();
    const detector = new CountingDetector(new GtEchoDetector(benchmark));
    const run = await runAdapter(benchmark, detector, { mode: "per_caption" });
    expect(detector.captionCalls).toBe(vocabulary(benchmark.groups[0]).length);
    expect(detector.captionCalls).toBe(6);
    // gt-echo only fires on the positive caption.
    expect(run.records).toHaveLength(2);
    for (const record of run.records) {
      const parsed = perCaptionRecordSchema.parse(record);
      expect(parsed.caption_index).toBe(0);
      expect(parsed.confidence).toBe(1.0);
    }
  });

  it("skips groups whose captions exceed the token limit, with a warning", async () => {
    const benchmark = fixtureBenchmark(true);
    const warnings: string[] = [];
    const run = await runAdapter(
      benchmark,
      new GtEchoDetector(benchmark),
      { mode: "vector", tokenLimit: 16 },
      (message) => warnings.push(message),
    );
    expect(run.skippedGroups).toEqual([1]);
    expect(warnings).toHaveLength(1);
    expect(warnings[0]).toContain("16-token limit");
    expect(run.records.every((r) => r.group_id === 0)).toBe(true);
  });

  it("applies the prompt template before inference", async () => {
    const benchmark = fixtureBenchmark();
    const detector = new CountingDetector(new GtEchoDetector(benchmark));
    await runAdapter(benchmark, detector, {
      mode: "vector",
      promptTemplate: "a photo of {caption}",
    });
    expect(detector.seenCaptions[0]).toBe("a photo of A brown chair.");
  });

  it("drops detections below the score floor", async () => {
    const quiet: DetectorBackend = {
      name: "quiet",
      async detectVocabulary(_ctx, captions): Promise<VectorDetection[]> {
        return [
          { bbox: [1, 1, 5, 5], scores: captions.map(() => 0.05) },
          { bbox: [2, 2, 5, 5], scores: captions.map((_c, j) => (j === 0 ? 0.9 : 0)) },
        ];
      },
      async detectCaption(): Promise<CaptionDetection[]> {
        return [{ bbox: [1, 1, 5, 5], confidence: 0.05 }];
      },
    };
    const benchmark = fixtureBenchmark();
    const vector = await runAdapter(benchmark, quiet, {
      mode: "vector",
      scoreFloor: 0.1,
    });
    expect(vector.records).toHaveLength(1);
    const perCaption = await runAdapter(benchmark, quiet, {
      mode: "per_caption",
      scoreFloor: 0.1,
    });
    expect(perCaption.records).toHaveLength(0);
  });

  it("rejects score vectors of the wrong length", async () => {
    const broken: DetectorBackend = {
      name: "broken",
      async detectVocabulary(): Promise<VectorDetection[]> {
        return [{ bbox: [1, 1, 5, 5], scores: [0.5, 0.5] }];
      },
      async detectCaption(): Promise<CaptionDetection[]> {
        return [];
      },
    };
    const benchmark = fixtureBenchmark();
    await expect(
      runAdapter(benchmark, broken, { mode: "vector" }),
    ).rejects.toThrow(/2 scores for 6 captions/);
  });
});

describe("schema helpers", () => {
  it("jsonl starts with the mode header", () => {
    const text = toJsonl("vector", [
      { image_id: 1, group_id: 0, bbox: [1, 2, 3, 4], scores: [1, 0] },
    ]);
    const lines = text.trim().split("\n");
    expect(JSON.parse(lines[0])).toEqual({ mode: "vector" });
    expect(lines).toHaveLength(2);
  });

  it("word count is whitespace based", () => {
    expect(wordCount("A brown  chair.")).toBe(3);
    expect(wordCount("")).toBe(0);
  });

  it("createDetector refuses unknown models and missing endpoints", () => {
    const benchmark = fixtureBenchmark();
    expect(() => createDetector({ model: "nonsense" }, benchmark)).toThrow(
      /unknown model/,
    );
    expect(() => createDetector({ model: "http" }, benchmark)).toThrow(
      /--endpoint/,
    );
  });

  it("gt-echo refuses groups pointing at missing objects", () => {
    const doc = fixtureBenchmark();
    const broken = benchmarkFileSchema.parse({
      meta: {},
      images: doc.images,
      groups: [{ ...doc.groups[0], object_ids: [999] }],
    });
    expect(() => new GtEchoDetector(broken)).toThrow(/object 999/);
  });
});
