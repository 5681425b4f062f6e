"""Evaluation protocol: IoU, class-agnostic NMS, COCO-style mAP over
dynamic vocabularies, median rank, and per-caption prediction merging.

Every vocabulary keeps its positive caption at score index 0. A kept
prediction counts toward precision/recall only when its argmax label is
the positive; wrong-label predictions act solely through class-agnostic
NMS, where a higher-confidence wrong label suppresses a lower-confidence
correct one.
"""

from __future__ import annotations

import json
import math
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .benchkit import Benchmark, ObjectGroup
from .errors import InputValidationError

IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
# 101-point recall grid; i/100 keeps boundary recalls representable exactly.
RECALL_THRESHOLDS = np.array([i / 100.0 for i in range(101)])

# Object-size segmentation by ground-truth box area (pixels^2):
# small < 32^2, medium within [32^2, 96^2], large > 96^2.
_SMALL_MAX = 32.0**2
_LARGE_MIN = 96.0**2

AREA_RANGES: dict[str, Callable[[float], bool]] = {
    "all": lambda area: True,
    "small": lambda area: area < _SMALL_MAX,
    "medium": lambda area: _SMALL_MAX <= area <= _LARGE_MIN,
    "large": lambda area: area > _LARGE_MIN,
}


@dataclass(frozen=True)
class Prediction:
    """Detector output over one group's vocabulary (positive at index 0)."""

    image_id: int
    group_id: int
    bbox: tuple[float, float, float, float]
    scores: tuple[float, ...]

    @property
    def confidence(self) -> float:
        return max(self.scores)

    @property
    def label(self) -> int:
        return int(np.argmax(self.scores))


@dataclass(frozen=True)
class PerCaptionPrediction:
    """Single-caption detector output (REC-style models)."""

    image_id: int
    group_id: int
    caption_index: int
    bbox: tuple[float, float, float, float]
    confidence: float


@dataclass
class ApStats:
    map: float | None
    ap50: float | None
    map_small: float | None
    map_medium: float | None
    map_large: float | None
    per_iou: dict[float, float | None] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "map": self.map,
            "ap50": self.ap50,
            "map_small": self.map_small,
            "map_medium": self.map_medium,
            "map_large": self.map_large,
            "per_iou": {f"{t:.2f}": v for t, v in self.per_iou.items()},
        }


@dataclass
class RankStats:
    median: float | None
    ranks: list[tuple[int, int, int, int]]  # (image_id, group_id, object_id, rank)
    evaluated: int
    skipped: int

    def to_dict(self) -> dict:
        return {
            "median": self.median,
            "evaluated": self.evaluated,
            "skipped": self.skipped,
            "ranks": [list(r) for r in self.ranks],
        }


@dataclass
class EvalReport:
    ap: ApStats
    rank: RankStats
    n_images: int
    n_groups: int
    n_objects: int
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "ap": self.ap.to_dict(),
            "rank": self.rank.to_dict(),
            "n_images": self.n_images,
            "n_groups": self.n_groups,
            "n_objects": self.n_objects,
            "meta": self.meta,
        }


# ---------------------------------------------------------------------------
# Geometry
# ---------------------------------------------------------------------------


def iou_matrix(boxes_a, boxes_b) -> np.ndarray:
    """Pairwise IoU for xywh boxes; areas in pixels^2."""
    a = np.asarray(boxes_a, dtype=float).reshape(-1, 4)
    b = np.asarray(boxes_b, dtype=float).reshape(-1, 4)
    ax1, ay1 = a[:, 0], a[:, 1]
    ax2, ay2 = a[:, 0] + a[:, 2], a[:, 1] + a[:, 3]
    bx1, by1 = b[:, 0], b[:, 1]
    bx2, by2 = b[:, 0] + b[:, 2], b[:, 1] + b[:, 3]
    inter_w = np.maximum(
        0.0, np.minimum(ax2[:, None], bx2[None, :]) - np.maximum(ax1[:, None], bx1[None, :])
    )
    inter_h = np.maximum(
        0.0, np.minimum(ay2[:, None], by2[None, :]) - np.maximum(ay1[:, None], by1[None, :])
    )
    inter = inter_w * inter_h
    union = (a[:, 2] * a[:, 3])[:, None] + (b[:, 2] * b[:, 3])[None, :] - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(union > 0, inter / union, 0.0)
    return np.clip(out, 0.0, 1.0)


def iou(box_a: Sequence[float], box_b: Sequence[float]) -> float:
    return float(iou_matrix([box_a], [box_b])[0, 0])


# ---------------------------------------------------------------------------
# Class-agnostic NMS
# ---------------------------------------------------------------------------


def class_agnostic_nms(
    preds: Sequence[Prediction], iou_thr: float = 0.5
) -> list[Prediction]:
    """Greedy suppression ignoring labels.

    Sorted by max score descending (stable); a kept box suppresses every
    remaining box with IoU strictly greater than iou_thr.
    """
    if not preds:
        return []
    conf = np.array([p.confidence for p in preds])
    order = np.argsort(-conf, kind="stable")
    boxes = np.array([preds[i].bbox for i in order], dtype=float)
    ious = iou_matrix(boxes, boxes)
    suppressed = np.zeros(len(order), dtype=bool)
    kept: list[Prediction] = []
    for pos in range(len(order)):
        if suppressed[pos]:
            continue
        kept.append(preds[order[pos]])
        suppressed |= ious[pos] > iou_thr
        suppressed[pos] = True
    return kept


# ---------------------------------------------------------------------------
# Validation and grouping helpers
# ---------------------------------------------------------------------------


def validate_predictions(
    benchmark: Benchmark, preds: Sequence[Prediction]
) -> None:
    groups = benchmark.group_index()
    for idx, pred in enumerate(preds):
        group = groups.get(pred.group_id)
        if group is None:
            raise InputValidationError(
                f"prediction {idx}: unknown group_id {pred.group_id}"
            )
        if pred.image_id != group.image_id:
            raise InputValidationError(
                f"prediction {idx}: image_id {pred.image_id} does not match "
                f"group {pred.group_id} (expected {group.image_id})"
            )
        expected = group.vocabulary.size
        if len(pred.scores) != expected:
            raise InputValidationError(
                f"prediction {idx}: scores length {len(pred.scores)} != "
                f"vocabulary size {expected}"
            )
        if not all(math.isfinite(s) for s in pred.scores):
            raise InputValidationError(f"prediction {idx}: non-finite score")
        if pred.bbox[2] <= 0 or pred.bbox[3] <= 0:
            raise InputValidationError(f"prediction {idx}: degenerate bbox")


def _by_group(preds: Iterable) -> dict[tuple[int, int], list]:
    grouped: dict[tuple[int, int], list] = {}
    for pred in preds:
        grouped.setdefault((pred.image_id, pred.group_id), []).append(pred)
    return grouped


def _group_gt(
    benchmark: Benchmark, group: ObjectGroup
) -> list[tuple[int, tuple[float, float, float, float], float]]:
    objects = benchmark.object_index()
    out = []
    for object_id in group.object_ids:
        obj = objects[(group.image_id, object_id)]
        out.append((object_id, obj.bbox, obj.bbox[2] * obj.bbox[3]))
    return out


# ---------------------------------------------------------------------------
# COCO-style mAP
# ---------------------------------------------------------------------------


def _match_group(
    dets: list[tuple[float, tuple, float]],
    gts: list[tuple[tuple, float]],
    thr: float,
    in_range: Callable[[float], bool],
) -> list[tuple[float, bool, bool]]:
    """Greedy matching inside one group at one IoU threshold.

    dets: (confidence, bbox, area), already sorted by confidence desc.
    gts: (bbox, area). Ground truth outside the area range is ignored:
    it does not count toward recall, and detections matched to it (or
    unmatched detections themselves outside the range) are ignored too.
    Returns (confidence, is_tp, is_ignored) per detection.
    """
    gt_ignore = [not in_range(area) for _, area in gts]
    gt_matched = [False] * len(gts)
    if dets and gts:
        ious = iou_matrix([d[1] for d in dets], [g[0] for g in gts])
    else:
        ious = np.zeros((len(dets), len(gts)))
    out = []
    for i, (conf, _bbox, det_area) in enumerate(dets):
        best_j = -1
        best_iou = thr
        for j in range(len(gts)):
            if gt_matched[j] or gt_ignore[j]:
                continue
            if ious[i, j] >= best_iou:
                best_iou = ious[i, j]
                best_j = j
        if best_j < 0:
            # No live ground truth: fall back to an ignored one.
            for j in range(len(gts)):
                if gt_matched[j] or not gt_ignore[j]:
                    continue
                if ious[i, j] >= best_iou:
                    best_iou = ious[i, j]
                    best_j = j
            if best_j >= 0:
                gt_matched[best_j] = True
                out.append((conf, False, True))
            else:
                out.append((conf, False, not in_range(det_area)))
            continue
        gt_matched[best_j] = True
        out.append((conf, True, False))
    return out


def _average_precision(entries: list[tuple[float, bool, bool, int]], n_gt: int) -> float | None:
    """101-point interpolated AP over pooled detections.

    entries: (confidence, is_tp, is_ignored, order_key); ignored entries
    do not advance the sweep.
    """
    if n_gt == 0:
        return None
    live = [(conf, tp) for conf, tp, ignored, _ in sorted(
        entries, key=lambda e: (-e[0], e[3])
    ) if not ignored]
    if not live:
        return 0.0
    tp = np.array([1.0 if is_tp else 0.0 for _, is_tp in live])
    tp_cum = np.cumsum(tp)
    fp_cum = np.cumsum(1.0 - tp)
    recall = tp_cum / n_gt
    precision = tp_cum / np.maximum(tp_cum + fp_cum, np.finfo(float).eps)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    indices = np.searchsorted(recall, RECALL_THRESHOLDS, side="left")
    sampled = np.zeros(len(RECALL_THRESHOLDS))
    valid = indices < len(envelope)
    sampled[valid] = envelope[indices[valid]]
    return float(sampled.mean())


def coco_map(
    benchmark: Benchmark,
    preds: Sequence[Prediction],
    *,
    nms_iou: float = 0.5,
    iou_thresholds: Sequence[float] = IOU_THRESHOLDS,
    area_ranges: Mapping[str, Callable[[float], bool]] = AREA_RANGES,
    max_dets: int | None = None,
    apply_nms: bool = True,
) -> ApStats:
    """COCO-style AP over dynamic vocabularies.

    Per group the predicted label is the argmax of each score vector; a
    prediction is a true positive when it overlaps an unmatched member
    of its group at the IoU threshold and its argmax is the positive
    caption. Detections are pooled over the whole benchmark for the
    precision/recall sweep, then averaged over the IoU grid.
    """
    validate_predictions(benchmark, preds)
    # Each forward pass covers one (image, group) vocabulary, so NMS runs
    # within that scope; boxes never suppress across groups or images.
    grouped = _by_group(preds)
    if apply_nms:
        grouped = {
            key: class_agnostic_nms(dets, nms_iou) for key, dets in grouped.items()
        }
    if max_dets is not None:
        for key, dets in grouped.items():
            grouped[key] = sorted(dets, key=lambda p: -p.confidence)[:max_dets]

    per_group: list[tuple[list[tuple[float, tuple, float]], list[tuple[tuple, float]]]] = []
    order_base = 0
    group_order: list[int] = []
    for group in benchmark.groups:
        gts = [(bbox, area) for _, bbox, area in _group_gt(benchmark, group)]
        dets = []
        for pred in grouped.get((group.image_id, group.group_id), []):
            if pred.label != 0:
                continue  # wrong-label predictions only act through NMS
            dets.append((pred.scores[0], pred.bbox, pred.bbox[2] * pred.bbox[3]))
        dets.sort(key=lambda d: -d[0])
        per_group.append((dets, gts))
        group_order.append(order_base)
        order_base += len(dets)

    results: dict[str, dict[float, float | None]] = {}
    for range_name, in_range in area_ranges.items():
        results[range_name] = {}
        n_gt = sum(
            1 for _, gts in per_group for _, area in gts if in_range(area)
        )
        for thr in iou_thresholds:
            entries: list[tuple[float, bool, bool, int]] = []
            for (dets, gts), base in zip(per_group, group_order):
                matched = _match_group(dets, gts, thr, in_range)
                entries.extend(
                    (conf, is_tp, ignored, base + i)
                    for i, (conf, is_tp, ignored) in enumerate(matched)
                )
            results[range_name][thr] = _average_precision(entries, n_gt)

    def mean_ap(range_name: str) -> float | None:
        values = [v for v in results[range_name].values() if v is not None]
        return float(np.mean(values)) if values else None

    return ApStats(
        map=mean_ap("all"),
        ap50=results["all"].get(0.5),
        map_small=mean_ap("small"),
        map_medium=mean_ap("medium"),
        map_large=mean_ap("large"),
        per_iou=dict(results["all"]),
    )


# ---------------------------------------------------------------------------
# Median rank
# ---------------------------------------------------------------------------


def _rank_of_positive(scores: Sequence[float]) -> int:
    """1-based rank of the positive score, ties resolved pessimistically."""
    positive = scores[0]
    return 1 + sum(1 for s in scores[1:] if s >= positive)


def median_rank(
    benchmark: Benchmark,
    preds: Sequence[Prediction],
    *,
    iou_thr: float = 0.5,
) -> RankStats:
    """Median 1-based rank of the positive caption across objects.

    Uses raw (pre-NMS) predictions: per object, the overlapping
    prediction with the maximum highest confidence supplies the score
    vector; objects with no overlapping prediction are skipped.
    """
    validate_predictions(benchmark, preds)
    grouped = _by_group(preds)
    ranks: list[tuple[int, int, int, int]] = []
    skipped = 0
    for group in benchmark.groups:
        candidates = grouped.get((group.image_id, group.group_id), [])
        for object_id, bbox, _area in _group_gt(benchmark, group):
            overlapping = [
                p for p in candidates if iou(bbox, p.bbox) >= iou_thr
            ]
            if not overlapping:
                skipped += 1
                continue
            best = max(overlapping, key=lambda p: p.confidence)
            ranks.append(
                (
                    group.image_id,
                    group.group_id,
                    object_id,
                    _rank_of_positive(best.scores),
                )
            )
    values = [r[3] for r in ranks]
    return RankStats(
        median=statistics.median(values) if values else None,
        ranks=ranks,
        evaluated=len(values),
        skipped=skipped,
    )


def median_rank_from_vectors(
    benchmark: Benchmark,
    vectors: Mapping[tuple[int, int, int], Sequence[float]],
) -> RankStats:
    """Rank statistics over pre-merged per-object score vectors."""
    ranks: list[tuple[int, int, int, int]] = []
    skipped = 0
    for group in benchmark.groups:
        for object_id in group.object_ids:
            key = (group.image_id, group.group_id, object_id)
            scores = vectors.get(key)
            if scores is None:
                skipped += 1
                continue
            if len(scores) != group.vocabulary.size:
                raise InputValidationError(
                    f"vector for object {object_id}: length {len(scores)} != "
                    f"vocabulary size {group.vocabulary.size}"
                )
            ranks.append((*key, _rank_of_positive(list(scores))))
    values = [r[3] for r in ranks]
    return RankStats(
        median=statistics.median(values) if values else None,
        ranks=ranks,
        evaluated=len(values),
        skipped=skipped,
    )


# ---------------------------------------------------------------------------
# Per-caption (REC-style) prediction handling
# ---------------------------------------------------------------------------


def merge_per_caption(
    pc_preds: Sequence[PerCaptionPrediction],
    benchmark: Benchmark,
    *,
    iou_thr: float = 0.5,
) -> dict[tuple[int, int, int], np.ndarray]:
    """Rebuild per-object score vectors from per-caption predictions.

    Confidences of predictions not overlapping the object are zeroed;
    each caption keeps the maximum remaining confidence. Objects whose
    vector comes out all-zero are omitted (skipped in rank).
    """
    groups = benchmark.group_index()
    for idx, pred in enumerate(pc_preds):
        group = groups.get(pred.group_id)
        if group is None:
            raise InputValidationError(
                f"per-caption prediction {idx}: unknown group_id {pred.group_id}"
            )
        if not 0 <= pred.caption_index < group.vocabulary.size:
            raise InputValidationError(
                f"per-caption prediction {idx}: caption_index "
                f"{pred.caption_index} out of range"
            )
    grouped = _by_group(pc_preds)
    vectors: dict[tuple[int, int, int], np.ndarray] = {}
    for group in benchmark.groups:
        candidates = grouped.get((group.image_id, group.group_id), [])
        if not candidates:
            continue
        for object_id, bbox, _area in _group_gt(benchmark, group):
            vec = np.zeros(group.vocabulary.size)
            for pred in candidates:
                conf = pred.confidence if iou(bbox, pred.bbox) >= iou_thr else 0.0
                if conf > vec[pred.caption_index]:
                    vec[pred.caption_index] = conf
            if vec.any():
                vectors[(group.image_id, group.group_id, object_id)] = vec
    return vectors


def per_caption_to_predictions(
    pc_preds: Sequence[PerCaptionPrediction],
    benchmark: Benchmark,
) -> list[Prediction]:
    """One-hot score vectors for the mAP path; zero-confidence hits drop."""
    groups = benchmark.group_index()
    out = []
    for pred in pc_preds:
        group = groups.get(pred.group_id)
        if group is None:
            raise InputValidationError(f"unknown group_id {pred.group_id}")
        if pred.confidence <= 0:
            continue
        scores = [0.0] * group.vocabulary.size
        scores[pred.caption_index] = pred.confidence
        out.append(
            Prediction(
                image_id=pred.image_id,
                group_id=pred.group_id,
                bbox=pred.bbox,
                scores=tuple(scores),
            )
        )
    return out


def vector_to_per_caption(
    preds: Sequence[Prediction],
) -> list[PerCaptionPrediction]:
    """Expand vector predictions into per-caption records."""
    out = []
    for pred in preds:
        for j, score in enumerate(pred.scores):
            out.append(
                PerCaptionPrediction(
                    image_id=pred.image_id,
                    group_id=pred.group_id,
                    caption_index=j,
                    bbox=pred.bbox,
                    confidence=score,
                )
            )
    return out


# ---------------------------------------------------------------------------
# Orchestration and file I/O
# ---------------------------------------------------------------------------


def evaluate_benchmark(
    benchmark: Benchmark,
    *,
    vector_preds: Sequence[Prediction] | None = None,
    per_caption_preds: Sequence[PerCaptionPrediction] | None = None,
    nms_iou: float = 0.5,
    iou_thr: float = 0.5,
    max_dets: int | None = None,
) -> EvalReport:
    """Full protocol evaluation for either prediction mode."""
    if (vector_preds is None) == (per_caption_preds is None):
        raise ValueError("provide exactly one of vector/per-caption predictions")
    if vector_preds is not None:
        ap = coco_map(benchmark, vector_preds, nms_iou=nms_iou, max_dets=max_dets)
        rank = median_rank(benchmark, vector_preds, iou_thr=iou_thr)
    else:
        onehot = per_caption_to_predictions(per_caption_preds, benchmark)
        ap = coco_map(benchmark, onehot, nms_iou=nms_iou, max_dets=max_dets)
        vectors = merge_per_caption(per_caption_preds, benchmark, iou_thr=iou_thr)
        rank = median_rank_from_vectors(benchmark, vectors)
    return EvalReport(
        ap=ap,
        rank=rank,
        n_images=len(benchmark.images),
        n_groups=len(benchmark.groups),
        n_objects=sum(len(g.object_ids) for g in benchmark.groups),
        meta={"benchmark": benchmark.name, "nms_iou": nms_iou, "iou_thr": iou_thr},
    )


def write_predictions(
    path: str | Path,
    preds: Sequence[Prediction] | Sequence[PerCaptionPrediction],
    mode: str = "vector",
) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps({"mode": mode}) + "\n")
        for pred in preds:
            if mode == "vector":
                row = {
                    "image_id": pred.image_id,
                    "group_id": pred.group_id,
                    "bbox": list(pred.bbox),
                    "scores": list(pred.scores),
                }
            else:
                row = {
                    "image_id": pred.image_id,
                    "group_id": pred.group_id,
                    "caption_index": pred.caption_index,
                    "bbox": list(pred.bbox),
                    "confidence": pred.confidence,
                }
            fh.write(json.dumps(row) + "\n")


@dataclass
class PredictionFile:
    mode: str  # vector | per_caption
    vector: list[Prediction] = field(default_factory=list)
    per_caption: list[PerCaptionPrediction] = field(default_factory=list)


def read_predictions(
    path: str | Path, benchmark: Benchmark | None = None
) -> PredictionFile:
    """Read a predictions JSONL file, validating against the benchmark.

    Schema errors name the offending line.
    """
    path = Path(path)
    groups = benchmark.group_index() if benchmark is not None else None
    mode: str | None = None
    out = PredictionFile(mode="vector")
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise InputValidationError(f"{path}: line {lineno}: {exc}") from exc
            if mode is None:
                if not isinstance(doc, dict) or "mode" not in doc:
                    raise InputValidationError(
                        f"{path}: line {lineno}: first line must declare the mode"
                    )
                mode = doc["mode"]
                if mode not in ("vector", "per_caption"):
                    raise InputValidationError(
                        f"{path}: line {lineno}: unknown mode {mode!r}"
                    )
                out.mode = mode
                continue
            try:
                image_id = int(doc["image_id"])
                group_id = int(doc["group_id"])
                bbox = tuple(float(v) for v in doc["bbox"])
            except (KeyError, TypeError, ValueError) as exc:
                raise InputValidationError(f"{path}: line {lineno}: {exc}") from exc
            if len(bbox) != 4:
                raise InputValidationError(
                    f"{path}: line {lineno}: bbox must have 4 entries"
                )
            if groups is not None and group_id not in groups:
                raise InputValidationError(
                    f"{path}: line {lineno}: unknown group_id {group_id}"
                )
            if mode == "vector":
                try:
                    scores = tuple(float(v) for v in doc["scores"])
                except (KeyError, TypeError, ValueError) as exc:
                    raise InputValidationError(
                        f"{path}: line {lineno}: {exc}"
                    ) from exc
                if groups is not None:
                    expected = groups[group_id].vocabulary.size
                    if len(scores) != expected:
                        raise InputValidationError(
                            f"{path}: line {lineno}: scores length {len(scores)} "
                            f"!= vocabulary size {expected}"
                        )
                out.vector.append(Prediction(image_id, group_id, bbox, scores))
            else:
                try:
                    caption_index = int(doc["caption_index"])
                    confidence = float(doc["confidence"])
                except (KeyError, TypeError, ValueError) as exc:
                    raise InputValidationError(
                        f"{path}: line {lineno}: {exc}"
                    ) from exc
                if groups is not None:
                    expected = groups[group_id].vocabulary.size
                    if not 0 <= caption_index < expected:
                        raise InputValidationError(
                            f"{path}: line {lineno}: caption_index "
                            f"{caption_index} out of range for T={expected}"
                        )
                out.per_caption.append(
                    PerCaptionPrediction(
                        image_id, group_id, caption_index, bbox, confidence
                    )
                )
    if mode is None:
        raise InputValidationError(f"{path}: empty predictions file")
    return out
