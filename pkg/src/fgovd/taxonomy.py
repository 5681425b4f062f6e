"""Attribute taxonomy and the structured-annotation data model.

Objects are described PACO-style: a category, a pixel bbox, typed
attribute slots, and named parts that carry their own slots. The
simplification rules normalize raw annotations into the form the caption
generator expects.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import yaml

from .errors import DegenerateObjectError, InputValidationError, TaxonomyError

log = logging.getLogger("fgovd.taxonomy")

ATTRIBUTE_TYPES = ("color", "material", "pattern", "transparency")

_DEFAULT_TAXONOMY_RESOURCE = "taxonomy.yaml"


def _normalize_value(raw: str) -> str:
    return str(raw).strip().lower().replace("_", " ")


@dataclass(frozen=True)
class AttributeTaxonomy:
    """Ordered attribute values per type, plus the negatives-only flags.

    Values flagged negatives-only (``plain`` pattern, ``opaque``
    transparency by default) never appear in positive object structures
    but remain valid substitution targets for negative captions.
    """

    values: dict[str, tuple[str, ...]]
    negatives_only: dict[str, frozenset[str]]
    version: int = 1

    def types(self) -> tuple[str, ...]:
        return tuple(self.values.keys())

    def values_for(self, attr_type: str) -> tuple[str, ...]:
        try:
            return self.values[attr_type]
        except KeyError:
            raise TaxonomyError(f"unknown attribute type {attr_type!r}") from None

    def is_negatives_only(self, attr_type: str, value: str) -> bool:
        return value in self.negatives_only.get(attr_type, frozenset())

    def substitutable(self, attr_type: str) -> tuple[str, ...]:
        """Values allowed in positive object structures."""
        banned = self.negatives_only.get(attr_type, frozenset())
        return tuple(v for v in self.values_for(attr_type) if v not in banned)

    def contains(self, attr_type: str, value: str) -> bool:
        return attr_type in self.values and value in self.values[attr_type]

    def content_hash(self) -> str:
        payload = {
            "version": self.version,
            "types": {t: list(v) for t, v in self.values.items()},
            "negatives_only": {t: sorted(v) for t, v in self.negatives_only.items()},
        }
        blob = json.dumps(payload, sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()


def _validate_taxonomy_doc(doc: dict) -> AttributeTaxonomy:
    if not isinstance(doc, dict) or "types" not in doc:
        raise TaxonomyError("taxonomy document must be a mapping with a 'types' key")
    raw_types = doc["types"]
    if not isinstance(raw_types, dict):
        raise TaxonomyError("taxonomy field 'types' must map attribute type -> value list")

    values: dict[str, tuple[str, ...]] = {}
    for attr_type, raw_values in raw_types.items():
        if attr_type not in ATTRIBUTE_TYPES:
            raise TaxonomyError(f"unsupported attribute type {attr_type!r} in 'types'")
        if not isinstance(raw_values, list) or not raw_values:
            raise TaxonomyError(f"taxonomy[{attr_type}] must be a non-empty list")
        seen: list[str] = []
        for raw in raw_values:
            value = _normalize_value(raw)
            if not value:
                raise TaxonomyError(f"taxonomy[{attr_type}] contains an empty value")
            if value in seen:
                raise TaxonomyError(f"duplicate value {value!r} in taxonomy[{attr_type}]")
            seen.append(value)
        values[attr_type] = tuple(seen)

    negatives_only: dict[str, frozenset[str]] = {}
    for attr_type, raw_values in (doc.get("negatives_only") or {}).items():
        if attr_type not in values:
            raise TaxonomyError(f"negatives_only lists unknown type {attr_type!r}")
        flagged = frozenset(_normalize_value(v) for v in raw_values)
        missing = flagged - set(values[attr_type])
        if missing:
            raise TaxonomyError(
                f"negatives_only[{attr_type}] values {sorted(missing)} not in taxonomy"
            )
        negatives_only[attr_type] = flagged

    return AttributeTaxonomy(
        values=values,
        negatives_only=negatives_only,
        version=int(doc.get("version", 1)),
    )


def load_taxonomy(source: str | Path | None = None) -> AttributeTaxonomy:
    """Load a taxonomy document, falling back to the packaged default.

    Raises TaxonomyError with line context for malformed YAML and for
    duplicate or unknown values.
    """
    if source is None:
        text = (
            resources.files("fgovd.data")
            .joinpath(_DEFAULT_TAXONOMY_RESOURCE)
            .read_text(encoding="utf-8")
        )
        origin = "<default>"
    else:
        path = Path(source)
        if not path.exists():
            log.warning("taxonomy file %s missing, using built-in default", path)
            return load_taxonomy(None)
        text = path.read_text(encoding="utf-8")
        origin = str(path)
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise TaxonomyError(f"{origin}: cannot parse taxonomy: {exc}") from exc
    try:
        return _validate_taxonomy_doc(doc)
    except TaxonomyError as exc:
        raise TaxonomyError(f"{origin}: {exc}") from None


@dataclass(frozen=True)
class AttributeSlot:
    """One substitutable attribute unit; owner is None at object level."""

    owner: str | None
    attr_type: str
    value: str


@dataclass(frozen=True)
class Part:
    name: str
    attributes: tuple[AttributeSlot, ...]


@dataclass(frozen=True)
class StructuredObject:
    """An annotated object: category, pixel bbox, attributes, parts."""

    object_id: int
    image_id: int
    category: str
    bbox: tuple[float, float, float, float]
    attributes: tuple[AttributeSlot, ...] = ()
    parts: tuple[Part, ...] = ()

    def all_slots(self) -> tuple[AttributeSlot, ...]:
        """All slots in document order: object first, then parts in order."""
        slots = list(self.attributes)
        for part in self.parts:
            slots.extend(part.attributes)
        return tuple(slots)

    @property
    def area(self) -> float:
        return self.bbox[2] * self.bbox[3]


@dataclass(frozen=True)
class ImageRecord:
    image_id: int
    width: int
    height: int
    file_ref: str = ""
    objects: tuple[StructuredObject, ...] = ()


@dataclass(frozen=True)
class Violation:
    code: str
    message: str


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def messages(self) -> list[str]:
        return [v.message for v in self.violations]


def _slot_key(slot: AttributeSlot) -> tuple[str, str]:
    return (slot.attr_type, slot.value)


def simplify_object(obj: StructuredObject, tax: AttributeTaxonomy) -> StructuredObject:
    """Normalize an annotation for caption generation.

    Drops negatives-only values, hoists attributes shared by every part
    to the object level, and removes parts left without attributes.
    Raises DegenerateObjectError when nothing substitutable remains.
    """
    for slot in obj.all_slots():
        if not tax.contains(slot.attr_type, slot.value):
            raise InputValidationError(
                f"object {obj.object_id}: value {slot.value!r} not in "
                f"taxonomy[{slot.attr_type}]"
            )

    def keep(slot: AttributeSlot) -> bool:
        return not tax.is_negatives_only(slot.attr_type, slot.value)

    obj_attrs = [s for s in obj.attributes if keep(s)]
    parts = []
    for part in obj.parts:
        kept = tuple(s for s in part.attributes if keep(s))
        if kept:
            parts.append(Part(part.name, kept))

    # Hoisting only makes sense when a value is actually redundant, i.e.
    # repeated across at least two parts. Dropping an emptied part can
    # expose a new shared slot, so iterate to a fixpoint (keeps the
    # operation idempotent).
    while len(parts) >= 2:
        common = set.intersection(*(set(map(_slot_key, p.attributes)) for p in parts))
        if not common:
            break
        present = set(map(_slot_key, obj_attrs))
        for slot in parts[0].attributes:
            key = _slot_key(slot)
            if key in common and key not in present:
                obj_attrs.append(replace(slot, owner=None))
                present.add(key)
        pruned = []
        for part in parts:
            kept = tuple(s for s in part.attributes if _slot_key(s) not in common)
            if kept:
                pruned.append(Part(part.name, kept))
        parts = pruned

    simplified = replace(obj, attributes=tuple(obj_attrs), parts=tuple(parts))
    if not simplified.all_slots():
        raise DegenerateObjectError(
            f"object {obj.object_id} ({obj.category}) has no attributes left"
        )
    return simplified


def validate_object(
    obj: StructuredObject,
    tax: AttributeTaxonomy,
    *,
    image_size: tuple[int, int] | None = None,
) -> ValidationReport:
    """Report every invariant violation; empty report iff valid."""
    found: list[Violation] = []
    x, y, w, h = obj.bbox
    if w <= 0 or h <= 0:
        found.append(Violation("degenerate-bbox", f"degenerate bbox {obj.bbox}"))
    if x < 0 or y < 0:
        found.append(Violation("bbox-out-of-bounds", f"bbox origin negative: {obj.bbox}"))
    if image_size is not None:
        width, height = image_size
        if x + w > width or y + h > height:
            found.append(
                Violation(
                    "bbox-out-of-bounds",
                    f"bbox {obj.bbox} exceeds image {width}x{height}",
                )
            )
    for slot in obj.all_slots():
        if slot.attr_type not in ATTRIBUTE_TYPES:
            found.append(
                Violation("unknown-type", f"unknown attribute type {slot.attr_type!r}")
            )
        elif not tax.contains(slot.attr_type, slot.value):
            found.append(
                Violation(
                    "unknown-value",
                    f"value {slot.value!r} not in taxonomy[{slot.attr_type}]",
                )
            )
        elif tax.is_negatives_only(slot.attr_type, slot.value):
            found.append(
                Violation(
                    "negatives-only-value",
                    f"negatives-only value {slot.value!r} attached to a structure",
                )
            )
    for part in obj.parts:
        if not part.attributes:
            found.append(Violation("empty-part", f"part {part.name!r} has no attributes"))
    if not obj.all_slots():
        found.append(Violation("no-attributes", "object carries no attribute slot"))
    return ValidationReport(tuple(found))


def validate_image(image: ImageRecord, tax: AttributeTaxonomy) -> ValidationReport:
    found: list[Violation] = []
    seen_ids: set[int] = set()
    for obj in image.objects:
        if obj.object_id in seen_ids:
            found.append(
                Violation("duplicate-object-id", f"object_id {obj.object_id} repeated")
            )
        seen_ids.add(obj.object_id)
        report = validate_object(obj, tax, image_size=(image.width, image.height))
        found.extend(report.violations)
    return ValidationReport(tuple(found))


# ---------------------------------------------------------------------------
# Annotation input: COCO-style JSON extended with attributes/parts arrays.
# ---------------------------------------------------------------------------


def _parse_slots(raw, owner: str | None, context: str) -> list[AttributeSlot]:
    """Accept either [{'type':…,'value':…}] or {'color': [...] | 'black'}."""
    slots: list[AttributeSlot] = []
    if raw is None:
        return slots
    if isinstance(raw, dict):
        entries = []
        for attr_type, values in raw.items():
            if isinstance(values, (str, int, float)):
                values = [values]
            for value in values:
                entries.append({"type": attr_type, "value": value})
        raw = entries
    if not isinstance(raw, list):
        raise InputValidationError(f"{context}: attributes must be a list or mapping")
    seen: set[tuple[str, str]] = set()
    for entry in raw:
        if not isinstance(entry, dict) or "type" not in entry or "value" not in entry:
            raise InputValidationError(
                f"{context}: attribute entries need 'type' and 'value' fields"
            )
        attr_type = _normalize_value(entry["type"])
        value = _normalize_value(entry["value"])
        if attr_type not in ATTRIBUTE_TYPES:
            raise InputValidationError(f"{context}: unknown attribute type {attr_type!r}")
        if (attr_type, value) in seen:
            continue
        seen.add((attr_type, value))
        slots.append(AttributeSlot(owner=owner, attr_type=attr_type, value=value))
    return slots


def _parse_bbox(raw, context: str) -> tuple[float, float, float, float]:
    if (
        not isinstance(raw, (list, tuple))
        or len(raw) != 4
        or not all(isinstance(v, (int, float)) for v in raw)
    ):
        raise InputValidationError(f"{context}: bbox must be [x, y, w, h]")
    x, y, w, h = (float(v) for v in raw)
    if w <= 0 or h <= 0:
        raise InputValidationError(f"{context}: bbox has non-positive size {raw}")
    return (x, y, w, h)


@dataclass
class AnnotationSet:
    images: list[ImageRecord]
    skipped: list[dict] = field(default_factory=list)

    def objects(self) -> list[StructuredObject]:
        return [obj for image in self.images for obj in image.objects]


def load_annotations(
    path: str | Path,
    tax: AttributeTaxonomy,
    *,
    simplify: bool = True,
) -> AnnotationSet:
    """Read extended COCO-style annotations into ImageRecords.

    With simplify=True every object goes through simplify_object;
    degenerate objects are skipped with a warning entry, matching how
    attribute-less annotations are treated during benchmark builds.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputValidationError(f"{path}: invalid JSON: {exc}") from exc

    for key in ("images", "annotations"):
        if key not in doc or not isinstance(doc[key], list):
            raise InputValidationError(f"{path}: missing '{key}' array")

    categories: dict[int, str] = {}
    for cat in doc.get("categories", []):
        categories[int(cat["id"])] = _normalize_value(cat["name"])

    image_meta: dict[int, dict] = {}
    for entry in doc["images"]:
        image_id = int(entry.get("id", entry.get("image_id", -1)))
        if image_id < 0:
            raise InputValidationError(f"{path}: image entry without id: {entry}")
        image_meta[image_id] = entry

    objects_per_image: dict[int, list[StructuredObject]] = {i: [] for i in image_meta}
    skipped: list[dict] = []
    for entry in doc["annotations"]:
        context = f"{path}: annotation {entry.get('id', '?')}"
        object_id = int(entry["id"])
        image_id = int(entry["image_id"])
        if image_id not in image_meta:
            raise InputValidationError(f"{context}: unknown image_id {image_id}")
        if "category" in entry:
            category = _normalize_value(entry["category"])
        elif "category_id" in entry:
            cat_id = int(entry["category_id"])
            if cat_id not in categories:
                raise InputValidationError(f"{context}: unknown category_id {cat_id}")
            category = categories[cat_id]
        else:
            raise InputValidationError(f"{context}: needs 'category' or 'category_id'")

        attributes = _parse_slots(entry.get("attributes"), None, context)
        parts: list[Part] = []
        for raw_part in entry.get("parts") or []:
            if not isinstance(raw_part, dict) or "name" not in raw_part:
                raise InputValidationError(f"{context}: part entries need a 'name'")
            name = _normalize_value(raw_part["name"])
            part_slots = _parse_slots(raw_part.get("attributes"), name, context)
            parts.append(Part(name=name, attributes=tuple(part_slots)))

        obj = StructuredObject(
            object_id=object_id,
            image_id=image_id,
            category=category,
            bbox=_parse_bbox(entry["bbox"], context),
            attributes=tuple(attributes),
            parts=tuple(parts),
        )
        for slot in obj.all_slots():
            if not tax.contains(slot.attr_type, slot.value):
                raise InputValidationError(
                    f"{context}: value {slot.value!r} not in taxonomy[{slot.attr_type}]"
                )
        if simplify:
            try:
                obj = simplify_object(obj, tax)
            except DegenerateObjectError as exc:
                log.warning("skipping annotation: %s", exc)
                skipped.append(
                    {"object_id": object_id, "image_id": image_id, "reason": str(exc)}
                )
                continue
        objects_per_image[image_id].append(obj)

    images = []
    for image_id, entry in sorted(image_meta.items()):
        images.append(
            ImageRecord(
                image_id=image_id,
                width=int(entry.get("width", 0)),
                height=int(entry.get("height", 0)),
                file_ref=str(entry.get("file_name", entry.get("file_ref", ""))),
                objects=tuple(
                    sorted(objects_per_image[image_id], key=lambda o: o.object_id)
                ),
            )
        )
    return AnnotationSet(images=images, skipped=skipped)
