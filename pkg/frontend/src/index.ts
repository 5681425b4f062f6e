export { runAdapter, writePredictions, wordCount } from "./adapter.js";
export type { AdapterConfig, AdapterRun } from "./adapter.js";
export {
  GtEchoDetector,
  HttpDetector,
  createDetector,
} from "./detectors.js";
export type {
  CaptionDetection,
  DetectorBackend,
  InferenceContext,
  VectorDetection,
} from "./detectors.js";
export {
  benchmarkFileSchema,
  loadBenchmark,
  perCaptionRecordSchema,
  toJsonl,
  vectorRecordSchema,
  vocabulary,
} from "./schema.js";
export type {
  Benchmark,
  BenchmarkGroup,
  PerCaptionRecord,
  PredictionMode,
  VectorRecord,
} from "./schema.js";
