"""Benchmark assembly: object groups, dynamic vocabularies, statistics.

A benchmark bundles images, their grouped ground-truth objects, and one
vocabulary (positive caption + negatives) per group. Objects sharing a
string-identical positive caption inside an image form one group and get
a single vocabulary, so one detector inference covers them all.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

from . import __version__
from .captiongen import Caption
from .errors import GenerationError, InputValidationError
from .negatives import (
    GeneratedNegative,
    NegativeBatch,
    NegativeSpec,
    SubstitutionRecord,
    derive_rng,
    gen_attribute_negatives,
    gen_difficulty_negatives,
    gen_trivial_negatives,
)
from .taxonomy import AttributeTaxonomy, ImageRecord, StructuredObject

log = logging.getLogger("fgovd.benchkit")

BENCHMARK_NAMES = (
    "hard",
    "medium",
    "easy",
    "trivial",
    "color",
    "material",
    "pattern",
    "transparency",
)


@dataclass(frozen=True)
class Vocabulary:
    """Per-group dynamic vocabulary: one positive, ordered negatives."""

    positive: Caption
    negatives: tuple[str, ...] = ()
    spec: NegativeSpec | None = None
    short: bool = False
    records: tuple[tuple[SubstitutionRecord, ...], ...] = ()

    @property
    def size(self) -> int:
        """T = 1 + number of negatives."""
        return 1 + len(self.negatives)

    def captions(self) -> list[str]:
        """All captions, positive first (index 0 by convention)."""
        return [self.positive.text, *self.negatives]

    def validate(self) -> None:
        if self.positive.text in self.negatives:
            raise InputValidationError("positive caption leaked into negatives")
        if len(set(self.negatives)) != len(self.negatives):
            raise InputValidationError("negatives are not pairwise distinct")
        if self.spec is not None and len(self.negatives) > self.spec.n:
            raise InputValidationError("more negatives than requested (n)")


@dataclass(frozen=True)
class ObjectGroup:
    group_id: int
    image_id: int
    object_ids: tuple[int, ...]
    vocabulary: Vocabulary


@dataclass
class Benchmark:
    name: str
    images: list[ImageRecord]
    groups: list[ObjectGroup]
    meta: dict = field(default_factory=dict)

    def image_index(self) -> dict[int, ImageRecord]:
        return {image.image_id: image for image in self.images}

    def group_index(self) -> dict[int, ObjectGroup]:
        return {group.group_id: group for group in self.groups}

    def object_index(self) -> dict[tuple[int, int], StructuredObject]:
        return {
            (image.image_id, obj.object_id): obj
            for image in self.images
            for obj in image.objects
        }

    def groups_for_image(self, image_id: int) -> list[ObjectGroup]:
        return [g for g in self.groups if g.image_id == image_id]


@dataclass(frozen=True)
class BenchmarkStats:
    """The statistics table row: counts plus their exact quotients."""

    images: int
    objects: int
    objects_per_image: float
    positives: int
    positives_per_image: float
    negatives_per_positive: float
    objects_per_positive: float

    def as_row(self) -> tuple:
        return (
            self.images,
            self.objects,
            round(self.objects_per_image, 1),
            self.positives,
            round(self.positives_per_image, 1),
            round(self.negatives_per_positive, 1),
            round(self.objects_per_positive, 1),
        )


def group_objects(
    image: ImageRecord,
    captions: Mapping[int, Caption],
    *,
    start_id: int = 0,
) -> list[ObjectGroup]:
    """Group captioned objects by string-identical positive caption.

    Groups are ordered by their smallest member object_id; uncaptioned
    objects are left out.
    """
    by_text: dict[str, list[StructuredObject]] = {}
    for obj in sorted(image.objects, key=lambda o: o.object_id):
        caption = captions.get(obj.object_id)
        if caption is None:
            continue
        by_text.setdefault(caption.text, []).append(obj)
    members = sorted(by_text.values(), key=lambda objs: objs[0].object_id)
    groups = []
    for offset, objs in enumerate(members):
        caption = captions[objs[0].object_id]
        groups.append(
            ObjectGroup(
                group_id=start_id + offset,
                image_id=image.image_id,
                object_ids=tuple(o.object_id for o in objs),
                vocabulary=Vocabulary(positive=caption),
            )
        )
    return groups


@dataclass
class AssemblyResult:
    benchmark: Benchmark
    exclusions: list[dict] = field(default_factory=list)


def _generate_batch(
    spec: NegativeSpec,
    positive_text: str,
    rep: StructuredObject,
    pool: Sequence[tuple[str, str]],
    tax: AttributeTaxonomy,
    seed: int,
    allow_same_category: bool,
) -> NegativeBatch:
    rng = derive_rng(seed, rep.object_id)
    if spec.kind == "trivial":
        return gen_trivial_negatives(
            rep,
            pool,
            spec.n,
            rng,
            positive_text=positive_text,
            allow_same_category=allow_same_category,
        )
    if spec.kind == "difficulty":
        return gen_difficulty_negatives(positive_text, rep, spec.k, spec.n, tax, rng)
    return gen_attribute_negatives(
        positive_text, rep, spec.attr_type, spec.n, tax, rng
    )


def assemble_benchmark(
    images: Sequence[ImageRecord],
    captions: Mapping[int, Caption],
    spec: NegativeSpec,
    tax: AttributeTaxonomy,
    seed: int | None = None,
    *,
    trivial_same_category_ok: bool = False,
) -> AssemblyResult:
    """Build a benchmark for one negative-set strategy.

    Groups whose representative object cannot satisfy the strategy
    (missing or too few substitutable attributes, nothing locatable) are
    excluded and reported; images left without groups are dropped, which
    is why benchmark sizes differ across strategies.
    """
    effective_seed = spec.seed if seed is None else seed
    object_lookup: dict[int, StructuredObject] = {
        obj.object_id: obj for image in images for obj in image.objects
    }

    grouped: list[tuple[ImageRecord, list[ObjectGroup]]] = []
    next_id = 0
    for image in sorted(images, key=lambda im: im.image_id):
        igroups = group_objects(image, captions, start_id=next_id)
        next_id += len(igroups)
        if igroups:
            grouped.append((image, igroups))

    pool: list[tuple[str, str]] = []
    for _, igroups in grouped:
        for group in igroups:
            rep = object_lookup[group.object_ids[0]]
            pool.append((rep.category, group.vocabulary.positive.text))

    exclusions: list[dict] = []
    out_images: list[ImageRecord] = []
    out_groups: list[ObjectGroup] = []
    for image, igroups in grouped:
        kept: list[ObjectGroup] = []
        for group in igroups:
            rep = object_lookup[group.object_ids[0]]
            positive_text = group.vocabulary.positive.text
            try:
                batch = _generate_batch(
                    spec,
                    positive_text,
                    rep,
                    pool,
                    tax,
                    effective_seed,
                    trivial_same_category_ok,
                )
            except GenerationError as exc:
                exclusions.append(
                    {
                        "image_id": image.image_id,
                        "object_ids": list(group.object_ids),
                        "reason": str(exc),
                    }
                )
                continue
            if not batch.negatives:
                exclusions.append(
                    {
                        "image_id": image.image_id,
                        "object_ids": list(group.object_ids),
                        "reason": "no negatives producible",
                    }
                )
                continue
            vocabulary = Vocabulary(
                positive=group.vocabulary.positive,
                negatives=tuple(batch.texts()),
                spec=spec,
                short=batch.short,
                records=tuple(n.records for n in batch.negatives),
            )
            vocabulary.validate()
            kept.append(replace(group, vocabulary=vocabulary))
        if kept:
            member_ids = {oid for g in kept for oid in g.object_ids}
            out_images.append(
                replace(
                    image,
                    objects=tuple(
                        o for o in image.objects if o.object_id in member_ids
                    ),
                )
            )
            out_groups.extend(kept)

    # Re-number groups densely so benchmark files stay stable after drops.
    out_groups = [
        replace(g, group_id=idx) for idx, g in enumerate(out_groups)
    ]
    benchmark = Benchmark(
        name=spec.name,
        images=out_images,
        groups=out_groups,
        meta={
            "name": spec.name,
            "spec": spec.to_dict(),
            "seed": effective_seed,
            "taxonomy_hash": tax.content_hash(),
            "tool": "fgovd",
            "version": __version__,
            "notes": [],
        },
    )
    return AssemblyResult(benchmark=benchmark, exclusions=exclusions)


def compute_stats(benchmark: Benchmark) -> BenchmarkStats:
    """Counts and exact ratios for the statistics table."""
    images = len(benchmark.images)
    objects = sum(len(g.object_ids) for g in benchmark.groups)
    positives = len(benchmark.groups)
    negatives = sum(len(g.vocabulary.negatives) for g in benchmark.groups)
    return BenchmarkStats(
        images=images,
        objects=objects,
        objects_per_image=objects / images if images else 0.0,
        positives=positives,
        positives_per_image=positives / images if images else 0.0,
        negatives_per_positive=negatives / positives if positives else 0.0,
        objects_per_positive=objects / positives if positives else 0.0,
    )


def word_count(text: str) -> int:
    return len(text.split())


def _keep_groups(benchmark: Benchmark, groups: list[ObjectGroup], note: str) -> Benchmark:
    """Rebuild a benchmark around a subset of its groups."""
    kept_ids = {g.group_id for g in groups}
    by_image: dict[int, set[int]] = {}
    for group in groups:
        by_image.setdefault(group.image_id, set()).update(group.object_ids)
    images = []
    for image in benchmark.images:
        members = by_image.get(image.image_id)
        if not members:
            continue
        images.append(
            replace(
                image,
                objects=tuple(o for o in image.objects if o.object_id in members),
            )
        )
    meta = dict(benchmark.meta)
    meta["notes"] = list(meta.get("notes", [])) + [note]
    return Benchmark(
        name=benchmark.name,
        images=images,
        groups=[g for g in benchmark.groups if g.group_id in kept_ids],
        meta=meta,
    )


def filter_max_tokens(
    benchmark: Benchmark,
    limit: int = 16,
    counter: Callable[[str], int] | None = None,
) -> Benchmark:
    """Drop groups whose positive or any negative exceeds the token limit.

    The default counter is a whitespace word count; pass a model-specific
    tokenizer hook to match an actual detector's text encoder.
    """
    if limit < 1:
        raise ValueError("token limit must be >= 1")
    count = counter or word_count
    kept = [
        g
        for g in benchmark.groups
        if all(count(text) <= limit for text in g.vocabulary.captions())
    ]
    return _keep_groups(benchmark, kept, f"max-tokens filter: limit={limit}")


LENGTH_BUCKETS = ("short", "medium", "long", "longer")


def _length_bucket(mean_words: float) -> str:
    if mean_words <= 6:
        return "short"
    if mean_words <= 10:
        return "medium"
    if mean_words <= 14:
        return "long"
    return "longer"


def bucket_by_caption_length(benchmark: Benchmark) -> dict[str, Benchmark]:
    """Partition groups by mean word count over their vocabulary.

    Buckets: short <= 6, medium 7-10, long 11-14, longer >= 15 words.
    """
    partition: dict[str, list[ObjectGroup]] = {name: [] for name in LENGTH_BUCKETS}
    for group in benchmark.groups:
        texts = group.vocabulary.captions()
        mean_words = sum(word_count(t) for t in texts) / len(texts)
        partition[_length_bucket(mean_words)].append(group)
    out = {}
    for name in LENGTH_BUCKETS:
        sub = _keep_groups(benchmark, partition[name], f"length bucket: {name}")
        sub.name = f"{benchmark.name}-{name}"
        out[name] = sub
    return out


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def benchmark_to_dict(benchmark: Benchmark) -> dict:
    images = [
        {
            "image_id": image.image_id,
            "width": image.width,
            "height": image.height,
            "file_ref": image.file_ref,
            "objects": [
                {
                    "object_id": obj.object_id,
                    "category": obj.category,
                    "bbox": list(obj.bbox),
                }
                for obj in image.objects
            ],
        }
        for image in benchmark.images
    ]
    groups = []
    for group in benchmark.groups:
        doc = {
            "group_id": group.group_id,
            "image_id": group.image_id,
            "object_ids": list(group.object_ids),
            "positive": group.vocabulary.positive.text,
            "negatives": list(group.vocabulary.negatives),
            "short": group.vocabulary.short,
            "source_object_id": group.vocabulary.positive.source_object_id,
            "caption_provenance": group.vocabulary.positive.provenance,
        }
        if group.vocabulary.records:
            doc["records"] = [
                [
                    {
                        "owner": r.owner,
                        "attr_type": r.attr_type,
                        "original": r.original,
                        "replacement": r.replacement,
                        "start": r.start,
                        "end": r.end,
                    }
                    for r in recs
                ]
                for recs in group.vocabulary.records
            ]
        groups.append(doc)
    return {"meta": benchmark.meta, "images": images, "groups": groups}


def save_benchmark(benchmark: Benchmark, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = json.dumps(benchmark_to_dict(benchmark), indent=2, sort_keys=True)
    path.write_text(payload + "\n", encoding="utf-8")


def _object_from_dict(doc: dict, image_id: int) -> StructuredObject:
    return StructuredObject(
        object_id=int(doc["object_id"]),
        image_id=image_id,
        category=doc.get("category", ""),
        bbox=tuple(float(v) for v in doc["bbox"]),
    )


def load_benchmark(path: str | Path) -> Benchmark:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputValidationError(f"{path}: invalid JSON: {exc}") from exc
    for key in ("meta", "images", "groups"):
        if key not in doc:
            raise InputValidationError(f"{path}: missing top-level '{key}'")
    images = []
    for entry in doc["images"]:
        image_id = int(entry["image_id"])
        images.append(
            ImageRecord(
                image_id=image_id,
                width=int(entry.get("width", 0)),
                height=int(entry.get("height", 0)),
                file_ref=entry.get("file_ref", ""),
                objects=tuple(
                    _object_from_dict(o, image_id) for o in entry.get("objects", [])
                ),
            )
        )
    groups = []
    spec = None
    if doc["meta"].get("spec"):
        spec = NegativeSpec.from_dict(doc["meta"]["spec"])
    for entry in doc["groups"]:
        records = tuple(
            tuple(
                SubstitutionRecord(
                    owner=r.get("owner"),
                    attr_type=r["attr_type"],
                    original=r["original"],
                    replacement=r["replacement"],
                    start=int(r["start"]),
                    end=int(r["end"]),
                )
                for r in recs
            )
            for recs in entry.get("records", [])
        )
        positive = Caption(
            text=entry["positive"],
            source_object_id=int(entry.get("source_object_id", entry["object_ids"][0])),
            provenance=entry.get("caption_provenance", "provided"),
        )
        groups.append(
            ObjectGroup(
                group_id=int(entry["group_id"]),
                image_id=int(entry["image_id"]),
                object_ids=tuple(int(i) for i in entry["object_ids"]),
                vocabulary=Vocabulary(
                    positive=positive,
                    negatives=tuple(entry.get("negatives", [])),
                    spec=spec,
                    short=bool(entry.get("short", False)),
                    records=records,
                ),
            )
        )
    return Benchmark(
        name=doc["meta"].get("name", path.stem),
        images=images,
        groups=groups,
        meta=doc["meta"],
    )


# ---------------------------------------------------------------------------
# Statistics rendering
# ---------------------------------------------------------------------------

STATS_COLUMNS = (
    "Name",
    "Imgs",
    "Objs",
    "Obj/Img",
    "PosCaps",
    "Pos/Img",
    "Neg/Pos",
    "Objs/Pos",
)


def stats_rows(named: Iterable[tuple[str, BenchmarkStats]]) -> list[list]:
    rows = []
    for name, stats in named:
        rows.append([name, *stats.as_row()])
    return rows


def format_stats_table(named: Iterable[tuple[str, BenchmarkStats]]) -> str:
    rows = [list(STATS_COLUMNS)] + [
        [str(cell) for cell in row] for row in stats_rows(named)
    ]
    widths = [max(len(row[i]) for row in rows) for i in range(len(STATS_COLUMNS))]
    lines = []
    for idx, row in enumerate(rows):
        line = "  ".join(
            cell.ljust(widths[i]) if i == 0 else cell.rjust(widths[i])
            for i, cell in enumerate(row)
        )
        lines.append(line.rstrip())
        if idx == 0:
            lines.append("-" * len(line))
    return "\n".join(lines)
