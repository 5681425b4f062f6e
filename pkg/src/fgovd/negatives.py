"""Negative-caption generation by attribute substitution.

Negatives are built directly on the positive caption text, replacing
attribute value strings in place so the sentence structure is preserved.
Difficulty-based sets replace k randomly chosen slots per negative;
attribute-based sets replace exactly one slot of a requested type;
trivial sets sample captions from other-category objects.
"""

from __future__ import annotations

import hashlib
import random
import re
from dataclasses import dataclass
from typing import Sequence

from .errors import InsufficientAttributesError, NotApplicableError
from .taxonomy import AttributeSlot, AttributeTaxonomy, StructuredObject


@dataclass(frozen=True)
class NegativeSpec:
    """How to build a negative set: strategy, requested count, seed."""

    kind: str  # trivial | difficulty | attribute
    n: int
    seed: int = 0
    k: int | None = None  # difficulty only
    attr_type: str | None = None  # attribute only

    _DIFFICULTY_NAMES = {1: "hard", 2: "medium", 3: "easy"}

    def __post_init__(self):
        if self.kind not in ("trivial", "difficulty", "attribute"):
            raise ValueError(f"unknown strategy kind {self.kind!r}")
        if self.n < 1:
            raise ValueError("negative count N must be >= 1")
        if self.kind == "difficulty" and self.k not in (1, 2, 3):
            raise ValueError("difficulty strategy needs k in {1, 2, 3}")
        if self.kind == "attribute" and not self.attr_type:
            raise ValueError("attribute strategy needs an attribute type")

    @classmethod
    def from_name(cls, name: str, n: int, seed: int = 0) -> "NegativeSpec":
        name = name.lower()
        by_name = {v: k for k, v in cls._DIFFICULTY_NAMES.items()}
        if name in by_name:
            return cls(kind="difficulty", n=n, seed=seed, k=by_name[name])
        if name == "trivial":
            return cls(kind="trivial", n=n, seed=seed)
        if name in ("color", "material", "pattern", "transparency"):
            return cls(kind="attribute", n=n, seed=seed, attr_type=name)
        raise ValueError(f"unknown benchmark name {name!r}")

    @property
    def name(self) -> str:
        if self.kind == "difficulty":
            return self._DIFFICULTY_NAMES[self.k]
        if self.kind == "attribute":
            return self.attr_type or "attribute"
        return "trivial"

    def to_dict(self) -> dict:
        doc = {"kind": self.kind, "n": self.n, "seed": self.seed}
        if self.k is not None:
            doc["k"] = self.k
        if self.attr_type is not None:
            doc["attr_type"] = self.attr_type
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "NegativeSpec":
        return cls(
            kind=doc["kind"],
            n=int(doc["n"]),
            seed=int(doc.get("seed", 0)),
            k=doc.get("k"),
            attr_type=doc.get("attr_type"),
        )


@dataclass(frozen=True)
class SubstitutionRecord:
    """One in-place replacement; span indexes the pre-substitution text."""

    owner: str | None
    attr_type: str
    original: str
    replacement: str
    start: int
    end: int


@dataclass(frozen=True)
class GeneratedNegative:
    text: str
    records: tuple[SubstitutionRecord, ...] = ()


@dataclass
class NegativeBatch:
    negatives: list[GeneratedNegative]
    short: bool = False

    def texts(self) -> list[str]:
        return [n.text for n in self.negatives]


def derive_rng(seed: int, object_id: int) -> random.Random:
    """Stable per-object RNG so parallel generation stays reproducible."""
    digest = hashlib.blake2b(f"{seed}:{object_id}".encode(), digest_size=8).digest()
    return random.Random(int.from_bytes(digest, "big"))


# ---------------------------------------------------------------------------
# Locating attribute values inside caption text
# ---------------------------------------------------------------------------


def _word_pattern(value: str) -> re.Pattern:
    return re.compile(rf"\b{re.escape(value)}\b", re.IGNORECASE)


def find_value_spans(
    text: str, value: str, tax: AttributeTaxonomy
) -> list[tuple[int, int]]:
    """Word-boundary occurrences of value, longest taxonomy match first.

    Occurrences lying inside a longer taxonomy value (e.g. "blue" inside
    "dark blue") are not counted as occurrences of the shorter value.
    """
    value_re = _word_pattern(value)
    masked: list[tuple[int, int]] = []
    for attr_type in tax.types():
        for other in tax.values_for(attr_type):
            if other == value or len(other) <= len(value):
                continue
            if value_re.search(other):
                masked.extend(m.span() for m in _word_pattern(other).finditer(text))
    spans = []
    for match in value_re.finditer(text):
        start, end = match.span()
        if any(start >= ms and end <= me for ms, me in masked):
            continue
        spans.append((start, end))
    return spans


def _slot_occurrence_index(
    slots: Sequence[AttributeSlot], slot_index: int, replaced: set[int]
) -> int:
    """1-based occurrence of this slot's value string in the caption.

    Earlier slots (document order) sharing the value string shift the
    ordinal; slots already replaced no longer occur in the text and are
    excluded.
    """
    value = slots[slot_index].value
    earlier = sum(
        1
        for j in range(slot_index)
        if slots[j].value == value and j not in replaced
    )
    return 1 + earlier


def _locate(
    text: str,
    slots: Sequence[AttributeSlot],
    slot_index: int,
    replaced: set[int],
    tax: AttributeTaxonomy,
) -> tuple[int, int] | None:
    spans = find_value_spans(text, slots[slot_index].value, tax)
    ordinal = _slot_occurrence_index(slots, slot_index, replaced)
    if len(spans) < ordinal:
        return None
    return spans[ordinal - 1]


def substitute_attribute(
    caption_text: str,
    obj: StructuredObject,
    slot: AttributeSlot,
    new_value: str,
    tax: AttributeTaxonomy,
) -> tuple[str, SubstitutionRecord] | None:
    """Replace one occurrence of slot.value with new_value.

    Returns None when the value cannot be located in the text (e.g. the
    model paraphrased it).
    """
    if new_value == slot.value:
        raise ValueError("replacement must differ from the original value")
    if not tax.contains(slot.attr_type, new_value):
        raise ValueError(f"{new_value!r} not in taxonomy[{slot.attr_type}]")
    slots = obj.all_slots()
    try:
        slot_index = slots.index(slot)
    except ValueError:
        raise ValueError("slot does not belong to the object") from None
    span = _locate(caption_text, slots, slot_index, set(), tax)
    if span is None:
        return None
    start, end = span
    record = SubstitutionRecord(
        owner=slot.owner,
        attr_type=slot.attr_type,
        original=slot.value,
        replacement=new_value,
        start=start,
        end=end,
    )
    return caption_text[:start] + new_value + caption_text[end:], record


def _apply_substitutions(
    caption_text: str,
    slots: Sequence[AttributeSlot],
    chosen: Sequence[int],
    replacements: dict[int, str],
    tax: AttributeTaxonomy,
) -> tuple[str, tuple[SubstitutionRecord, ...]] | None:
    """Replace several slots at once; spans are source-text coordinates."""
    located: list[tuple[int, int, int]] = []  # (start, end, slot_index)
    for slot_index in chosen:
        span = _locate(caption_text, slots, slot_index, set(), tax)
        if span is None:
            return None
        located.append((span[0], span[1], slot_index))
    located.sort()
    records = tuple(
        SubstitutionRecord(
            owner=slots[i].owner,
            attr_type=slots[i].attr_type,
            original=slots[i].value,
            replacement=replacements[i],
            start=start,
            end=end,
        )
        for start, end, i in located
    )
    text = caption_text
    for start, end, i in reversed(located):
        text = text[:start] + replacements[i] + text[end:]
    return text, records


def reverse_substitutions(text: str, records: Sequence[SubstitutionRecord]) -> str:
    """Undo substitutions, reconstructing the source caption exactly."""
    for rec in sorted(records, key=lambda r: r.start):
        window = text[rec.start : rec.start + len(rec.replacement)]
        if window != rec.replacement:
            raise ValueError(
                f"cannot reverse: expected {rec.replacement!r} at {rec.start}, "
                f"found {window!r}"
            )
        text = text[: rec.start] + rec.original + text[rec.start + len(rec.replacement) :]
    return text


# ---------------------------------------------------------------------------
# Negative set strategies
# ---------------------------------------------------------------------------

MAX_DRAW_FACTOR = 100


def locatable_slots(
    caption_text: str, obj: StructuredObject, tax: AttributeTaxonomy
) -> list[int]:
    slots = obj.all_slots()
    return [
        i for i in range(len(slots)) if _locate(caption_text, slots, i, set(), tax)
    ]


def gen_difficulty_negatives(
    caption_text: str,
    obj: StructuredObject,
    k: int,
    n: int,
    tax: AttributeTaxonomy,
    rng: random.Random,
) -> NegativeBatch:
    """Negatives replacing exactly k distinct slots each.

    Slots are drawn uniformly without replacement among locatable slots;
    each replacement value is drawn uniformly from the same type. The
    batch is flagged short when n distinct negatives cannot be reached
    within the draw budget.
    """
    if k not in (1, 2, 3):
        raise ValueError("k must be in {1, 2, 3}")
    slots = obj.all_slots()
    pool = locatable_slots(caption_text, obj, tax)
    if len(pool) < k:
        raise InsufficientAttributesError(
            f"object {obj.object_id}: {len(pool)} locatable slots, need {k}"
        )
    negatives: list[GeneratedNegative] = []
    seen = {caption_text}
    for _ in range(MAX_DRAW_FACTOR * n):
        if len(negatives) >= n:
            break
        chosen = sorted(rng.sample(pool, k))
        replacements: dict[int, str] = {}
        for i in chosen:
            candidates = [
                v for v in tax.values_for(slots[i].attr_type) if v != slots[i].value
            ]
            replacements[i] = rng.choice(candidates)
        applied = _apply_substitutions(caption_text, slots, chosen, replacements, tax)
        if applied is None:
            continue
        text, records = applied
        if text in seen:
            continue
        seen.add(text)
        negatives.append(GeneratedNegative(text, records))
    return NegativeBatch(negatives, short=len(negatives) < n)


def gen_attribute_negatives(
    caption_text: str,
    obj: StructuredObject,
    attr_type: str,
    n: int,
    tax: AttributeTaxonomy,
    rng: random.Random,
) -> NegativeBatch:
    """Negatives replacing exactly one slot of the requested type.

    Replacement values are drawn without replacement per slot, including
    negatives-only values, so e.g. transparency yields at most two
    alternatives per slot.
    """
    slots = obj.all_slots()
    typed = [
        i
        for i in locatable_slots(caption_text, obj, tax)
        if slots[i].attr_type == attr_type
    ]
    if not typed:
        raise NotApplicableError(
            f"object {obj.object_id} has no locatable {attr_type} slot"
        )
    negatives: list[GeneratedNegative] = []
    seen = {caption_text}
    for i in typed:
        if len(negatives) >= n:
            break
        candidates = [
            v for v in tax.values_for(attr_type) if v != slots[i].value
        ]
        rng.shuffle(candidates)
        for value in candidates:
            if len(negatives) >= n:
                break
            applied = _apply_substitutions(caption_text, slots, [i], {i: value}, tax)
            if applied is None:
                continue
            text, records = applied
            if text in seen:
                continue
            seen.add(text)
            negatives.append(GeneratedNegative(text, records))
    return NegativeBatch(negatives, short=len(negatives) < n)


def gen_trivial_negatives(
    target: StructuredObject,
    pool: Sequence[tuple[str, str]],
    n: int,
    rng: random.Random,
    *,
    positive_text: str | None = None,
    allow_same_category: bool = False,
) -> NegativeBatch:
    """Sample n distinct captions from objects of other categories.

    pool entries are (category, caption_text) pairs covering every
    positive caption in the benchmark.
    """
    candidates: list[str] = []
    seen: set[str] = set()
    for category, text in pool:
        if not allow_same_category and category == target.category:
            continue
        if positive_text is not None and text == positive_text:
            continue
        if text in seen:
            continue
        seen.add(text)
        candidates.append(text)
    if n <= 0:
        return NegativeBatch([], short=False)
    if len(candidates) >= n:
        sampled = rng.sample(candidates, n)
    else:
        sampled = list(candidates)
    return NegativeBatch(
        [GeneratedNegative(text) for text in sampled], short=len(sampled) < n
    )
