"""Synthetic corpus builders shared across the test suite."""

from __future__ import annotations

import random
from pathlib import Path

from fgovd.benchkit import Benchmark, assemble_benchmark
from fgovd.captiongen import Caption, TemplateCompletionClient, structure_dict
from fgovd.negatives import NegativeSpec
from fgovd.taxonomy import (
    AttributeSlot,
    ImageRecord,
    Part,
    StructuredObject,
    load_taxonomy,
)

TAX = load_taxonomy()

CATEGORIES = (
    "chair", "lamp", "pillow", "basket", "kettle", "handbag",
    "bench", "bowl", "scarf", "bucket", "tray", "mug",
)

PART_NAMES = ("handle", "lid", "base", "rim", "strap", "cover")


def slot(attr_type: str, value: str, owner: str | None = None) -> AttributeSlot:
    return AttributeSlot(owner=owner, attr_type=attr_type, value=value)


def make_object(
    object_id: int,
    image_id: int,
    category: str = "chair",
    attrs: list[tuple[str, str]] | None = None,
    parts: list[tuple[str, list[tuple[str, str]]]] | None = None,
    bbox: tuple[float, float, float, float] = (10.0, 10.0, 100.0, 80.0),
) -> StructuredObject:
    return StructuredObject(
        object_id=object_id,
        image_id=image_id,
        category=category,
        bbox=bbox,
        attributes=tuple(slot(t, v) for t, v in (attrs or [])),
        parts=tuple(
            Part(name, tuple(slot(t, v, name) for t, v in part_attrs))
            for name, part_attrs in (parts or [])
        ),
    )


def template_caption(obj: StructuredObject) -> str:
    return TemplateCompletionClient.caption_for(structure_dict(obj))


def caption_for(obj: StructuredObject) -> Caption:
    return Caption(
        text=template_caption(obj),
        source_object_id=obj.object_id,
        provenance="provided",
    )


def _random_object(
    object_id: int,
    image_id: int,
    rng: random.Random,
    grid_slot: int,
    *,
    rich: bool,
) -> StructuredObject:
    category = rng.choice(CATEGORIES)
    attrs = [("color", rng.choice(TAX.values_for("color")))]
    if rich or rng.random() < 0.7:
        attrs.append(("material", rng.choice(TAX.values_for("material"))))
    if rich or rng.random() < 0.35:
        attrs.append(("pattern", rng.choice(TAX.substitutable("pattern"))))
    if rng.random() < 0.2:
        attrs.append(("transparency", rng.choice(TAX.substitutable("transparency"))))
    parts = []
    if rng.random() < 0.4:
        part_name = rng.choice(PART_NAMES)
        parts.append(
            (
                part_name,
                [
                    ("color", rng.choice(TAX.values_for("color"))),
                    ("material", rng.choice(TAX.values_for("material"))),
                ],
            )
        )
    # Non-overlapping 2x2 grid placement inside a 640x480 image.
    col, row = grid_slot % 2, (grid_slot // 2) % 2
    bbox = (
        20.0 + 310.0 * col + rng.uniform(0, 10),
        15.0 + 230.0 * row + rng.uniform(0, 10),
        rng.uniform(80.0, 240.0),
        rng.uniform(70.0, 180.0),
    )
    return make_object(object_id, image_id, category, attrs, parts, bbox)


def synth_corpus(
    n_images: int,
    objects_per_image: int = 2,
    *,
    seed: int = 0,
    rich: bool = False,
) -> tuple[list[ImageRecord], dict[int, Caption]]:
    """Images with attribute-rich objects plus template captions.

    rich=True guarantees at least three attribute slots per object so
    every difficulty strategy applies.
    """
    assert objects_per_image <= 4, "grid placement supports up to 4 objects"
    rng = random.Random(seed)
    images: list[ImageRecord] = []
    captions: dict[int, Caption] = {}
    next_object_id = 1
    for i in range(n_images):
        image_id = i + 1
        objs = []
        for k in range(objects_per_image):
            obj = _random_object(next_object_id, image_id, rng, k, rich=rich)
            objs.append(obj)
            captions[obj.object_id] = caption_for(obj)
            next_object_id += 1
        images.append(
            ImageRecord(
                image_id=image_id,
                width=640,
                height=480,
                file_ref=f"synthetic/{image_id:06d}.jpg",
                objects=tuple(objs),
            )
        )
    return images, captions


def write_annotations_json(images, path) -> None:
    """Serialize ImageRecords into the documented annotation schema."""
    import json

    doc = {"images": [], "annotations": []}
    for image in images:
        doc["images"].append(
            {
                "id": image.image_id,
                "width": image.width,
                "height": image.height,
                "file_name": image.file_ref,
            }
        )
        for obj in image.objects:
            doc["annotations"].append(
                {
                    "id": obj.object_id,
                    "image_id": image.image_id,
                    "category": obj.category,
                    "bbox": list(obj.bbox),
                    "attributes": [
                        {"type": s.attr_type, "value": s.value}
                        for s in obj.attributes
                    ],
                    "parts": [
                        {
                            "name": part.name,
                            "attributes": [
                                {"type": s.attr_type, "value": s.value}
                                for s in part.attributes
                            ],
                        }
                        for part in obj.parts
                    ],
                }
            )
    Path(path).write_text(json.dumps(doc, indent=2), encoding="utf-8")


def build_benchmark(
    images,
    captions,
    strategy: str = "hard",
    n: int = 5,
    seed: int = 0,
) -> Benchmark:
    spec = NegativeSpec.from_name(strategy, n, seed)
    return assemble_benchmark(images, captions, spec, TAX).benchmark


def quick_benchmark(
    n_images: int = 10,
    objects_per_image: int = 2,
    *,
    strategy: str = "hard",
    n: int = 5,
    seed: int = 0,
    rich: bool = False,
) -> Benchmark:
    images, captions = synth_corpus(
        n_images, objects_per_image, seed=seed, rich=rich
    )
    return build_benchmark(images, captions, strategy, n, seed)
