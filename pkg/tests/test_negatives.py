import random

import pytest
from hypothesis import given, settings, strategies as st

from fgovd.errors import InsufficientAttributesError, NotApplicableError
from fgovd.negatives import (
    NegativeSpec,
    derive_rng,
    find_value_spans,
    gen_attribute_negatives,
    gen_difficulty_negatives,
    gen_trivial_negatives,
    locatable_slots,
    reverse_substitutions,
    substitute_attribute,
)

from fixtures import TAX, make_object, template_caption

BLUE_HAT = make_object(1, 1, "hat", attrs=[("color", "blue")])
BLUE_HAT_TEXT = "A blue hat."

LAMP = make_object(
    2, 1, "lamp",
    attrs=[],
    parts=[
        ("shade", [("color", "white"), ("material", "plastic")]),
        ("pipe", [("color", "grey"), ("material", "metal")]),
    ],
)
LAMP_TEXT = "A lamp with a white plastic shade and a grey metal pipe."

GLASS = make_object(3, 1, "glass", attrs=[("transparency", "transparent")])
GLASS_TEXT = "A transparent glass."


class TestSubstituteAttribute:
    def test_simple_color_swap(self):
        slot = BLUE_HAT.attributes[0]
        text, record = substitute_attribute(BLUE_HAT_TEXT, BLUE_HAT, slot, "orange", TAX)
        assert text == "A orange hat."
        assert (record.original, record.replacement) == ("blue", "orange")
        assert BLUE_HAT_TEXT[record.start:record.end] == "blue"

    def test_part_material_swap(self):
        slot = LAMP.parts[0].attributes[1]  # shade material plastic
        text, record = substitute_attribute(LAMP_TEXT, LAMP, slot, "velvet", TAX)
        assert text == "A lamp with a white velvet shade and a grey metal pipe."
        assert record.owner == "shade"

    def test_paraphrased_value_unlocatable(self):
        chair = make_object(4, 1, "chair", attrs=[("material", "wood")])
        slot = chair.attributes[0]
        assert substitute_attribute("A brown wooden chair.", chair, slot, "metal", TAX) is None

    def test_second_occurrence_for_second_slot(self):
        knife = make_object(
            5, 1, "knife",
            parts=[
                ("handle", [("color", "black")]),
                ("blade", [("color", "black")]),
            ],
        )
        text = "A knife with a black handle and a black blade."
        blade_slot = knife.parts[1].attributes[0]
        out, record = substitute_attribute(text, knife, blade_slot, "grey", TAX)
        assert out == "A knife with a black handle and a grey blade."
        assert text[record.start:record.end] == "black"
        handle_slot = knife.parts[0].attributes[0]
        out2, _ = substitute_attribute(text, knife, handle_slot, "grey", TAX)
        assert out2 == "A knife with a grey handle and a black blade."

    def test_longer_value_masks_short_one(self):
        hat = make_object(
            6, 1, "hat",
            attrs=[("color", "dark blue")],
            parts=[("strap", [("color", "blue")])],
        )
        text = "A dark blue hat with a blue strap."
        strap_slot = hat.parts[0].attributes[0]
        out, record = substitute_attribute(text, hat, strap_slot, "red", TAX)
        assert out == "A dark blue hat with a red strap."
        obj_slot = hat.attributes[0]
        out2, _ = substitute_attribute(text, hat, obj_slot, "red", TAX)
        assert out2 == "A red hat with a blue strap."

    def test_same_value_raises(self):
        with pytest.raises(ValueError):
            substitute_attribute(BLUE_HAT_TEXT, BLUE_HAT, BLUE_HAT.attributes[0], "blue", TAX)

    def test_reverse_reconstructs(self):
        slot = BLUE_HAT.attributes[0]
        text, record = substitute_attribute(BLUE_HAT_TEXT, BLUE_HAT, slot, "dark green", TAX)
        assert reverse_substitutions(text, [record]) == BLUE_HAT_TEXT


class TestFindValueSpans:
    def test_word_boundaries(self):
        assert find_value_spans("A wooden chair.", "wood", TAX) == []
        assert find_value_spans("A wood chair.", "wood", TAX) == [(2, 6)]

    def test_shaded_color_masks_base(self):
        spans = find_value_spans("A dark blue and blue hat.", "blue", TAX)
        assert spans == [(16, 20)]

    def test_case_insensitive(self):
        assert find_value_spans("Blue hat.", "blue", TAX) == [(0, 4)]


class TestDifficultyNegatives:
    def test_k1_two_negatives_single_record(self):
        rng = random.Random(7)
        batch = gen_difficulty_negatives(BLUE_HAT_TEXT, BLUE_HAT, 1, 2, TAX, rng)
        assert not batch.short
        assert len(batch.negatives) == 2
        texts = batch.texts()
        assert len(set(texts)) == 2
        for neg in batch.negatives:
            assert len(neg.records) == 1
            assert neg.records[0].attr_type == "color"
            assert neg.text != BLUE_HAT_TEXT
            assert reverse_substitutions(neg.text, neg.records) == BLUE_HAT_TEXT

    def test_insufficient_slots_error(self):
        two_slot = make_object(
            7, 1, "mug", attrs=[("color", "red"), ("material", "ceramic")]
        )
        with pytest.raises(InsufficientAttributesError):
            gen_difficulty_negatives("A red ceramic mug.", two_slot, 3, 2, TAX, random.Random(0))

    def test_k1_exhausts_color_alternatives(self):
        # 29 colors minus the original leaves exactly 28 distinct negatives.
        rng = random.Random(3)
        batch = gen_difficulty_negatives(BLUE_HAT_TEXT, BLUE_HAT, 1, 28, TAX, rng)
        assert not batch.short
        assert len(batch.negatives) == 28
        assert len(set(batch.texts())) == 28

    def test_requesting_more_than_possible_flags_short(self):
        rng = random.Random(3)
        batch = gen_difficulty_negatives(BLUE_HAT_TEXT, BLUE_HAT, 1, 29, TAX, rng)
        assert batch.short
        assert len(batch.negatives) == 28

    def test_k2_replaces_two_distinct_slots(self):
        obj = make_object(
            8, 1, "scarf",
            attrs=[("color", "red"), ("material", "wool"), ("pattern", "striped")],
        )
        text = template_caption(obj)
        batch = gen_difficulty_negatives(text, obj, 2, 5, TAX, random.Random(11))
        for neg in batch.negatives:
            assert len(neg.records) == 2
            assert len({(r.owner, r.attr_type) for r in neg.records}) == 2
            assert reverse_substitutions(neg.text, neg.records) == text

    def test_deterministic_under_seed(self):
        a = gen_difficulty_negatives(BLUE_HAT_TEXT, BLUE_HAT, 1, 5, TAX, random.Random(42))
        b = gen_difficulty_negatives(BLUE_HAT_TEXT, BLUE_HAT, 1, 5, TAX, random.Random(42))
        c = gen_difficulty_negatives(BLUE_HAT_TEXT, BLUE_HAT, 1, 5, TAX, random.Random(43))
        assert a.texts() == b.texts()
        assert a.texts() != c.texts()

    def test_both_same_value_slots_replaceable_together(self):
        knife = make_object(
            9, 1, "knife",
            parts=[("handle", [("color", "black")]), ("blade", [("color", "black")])],
        )
        text = "A knife with a black handle and a black blade."
        batch = gen_difficulty_negatives(text, knife, 2, 8, TAX, random.Random(5))
        for neg in batch.negatives:
            assert len(neg.records) == 2
            assert reverse_substitutions(neg.text, neg.records) == text
            assert "black" not in neg.text


class TestAttributeNegatives:
    def test_transparency_yields_both_alternatives(self):
        batch = gen_attribute_negatives(GLASS_TEXT, GLASS, "transparency", 2, TAX, random.Random(0))
        assert set(batch.texts()) == {"A translucent glass.", "A opaque glass."}
        assert not batch.short
        for neg in batch.negatives:
            assert len(neg.records) == 1
            assert neg.records[0].attr_type == "transparency"

    def test_pattern_caps_at_eight(self):
        pillow = make_object(
            10, 1, "pillow", attrs=[("color", "dark pink"), ("pattern", "striped")]
        )
        text = "A dark pink striped pillow."
        batch = gen_attribute_negatives(text, pillow, "pattern", 10, TAX, random.Random(1))
        assert len(batch.negatives) == 8  # 9 pattern values minus the original
        assert batch.short

    def test_missing_type_not_applicable(self):
        with pytest.raises(NotApplicableError):
            gen_attribute_negatives(BLUE_HAT_TEXT, BLUE_HAT, "material", 2, TAX, random.Random(0))

    def test_negatives_only_values_used_as_replacements(self):
        texts = gen_attribute_negatives(
            GLASS_TEXT, GLASS, "transparency", 2, TAX, random.Random(0)
        ).texts()
        assert "A opaque glass." in texts

    def test_single_typed_record_even_with_other_slots(self):
        obj = make_object(
            11, 1, "bowl", attrs=[("color", "green"), ("material", "glass")]
        )
        text = "A green glass bowl."
        batch = gen_attribute_negatives(text, obj, "color", 5, TAX, random.Random(2))
        for neg in batch.negatives:
            assert len(neg.records) == 1
            assert neg.records[0].attr_type == "color"
            assert "glass bowl" in neg.text


class TestTrivialNegatives:
    POOL = [
        ("cup", "A red cup with a pink plastic rim."),
        ("dog", "A pink dog with a black and dotted ear."),
        ("chair", "A brown wooden chair."),
    ]

    def test_samples_other_categories(self):
        chair = make_object(12, 1, "chair", attrs=[("color", "brown")])
        batch = gen_trivial_negatives(
            chair, self.POOL, 2, random.Random(0),
            positive_text="A brown wooden chair.",
        )
        assert set(batch.texts()) == {
            "A red cup with a pink plastic rim.",
            "A pink dog with a black and dotted ear.",
        }
        assert not batch.short

    def test_zero_request_returns_empty(self):
        chair = make_object(12, 1, "chair", attrs=[("color", "brown")])
        batch = gen_trivial_negatives(chair, self.POOL, 0, random.Random(0))
        assert batch.texts() == []
        assert not batch.short

    def test_same_category_pool_gives_short_empty(self):
        chair = make_object(12, 1, "chair", attrs=[("color", "brown")])
        pool = [("chair", "A black chair."), ("chair", "A white chair.")]
        batch = gen_trivial_negatives(chair, pool, 2, random.Random(0))
        assert batch.texts() == []
        assert batch.short

    def test_allow_same_category_knob(self):
        chair = make_object(12, 1, "chair", attrs=[("color", "brown")])
        pool = [("chair", "A black chair."), ("chair", "A white chair.")]
        batch = gen_trivial_negatives(
            chair, pool, 2, random.Random(0), allow_same_category=True
        )
        assert len(batch.negatives) == 2

    def test_positive_never_leaks(self):
        chair = make_object(12, 1, "chair", attrs=[("color", "brown")])
        pool = [("cup", "A brown wooden chair."), ("dog", "A pink dog.")]
        batch = gen_trivial_negatives(
            chair, pool, 2, random.Random(0),
            positive_text="A brown wooden chair.",
        )
        assert batch.texts() == ["A pink dog."]
        assert batch.short


class TestDeriveRng:
    def test_stable_across_calls(self):
        assert derive_rng(1, 2).random() == derive_rng(1, 2).random()

    def test_distinct_objects_diverge(self):
        assert derive_rng(1, 2).random() != derive_rng(1, 3).random()


_rich_objects = st.builds(
    lambda color, material, pattern, part_color: make_object(
        1, 1, "basket",
        attrs=[("color", color), ("material", material), ("pattern", pattern)],
        parts=[("handle", [("color", part_color)])],
    ),
    color=st.sampled_from(TAX.values_for("color")),
    material=st.sampled_from(TAX.values_for("material")),
    pattern=st.sampled_from(TAX.substitutable("pattern")),
    part_color=st.sampled_from(TAX.values_for("color")),
)


class TestGenerationProperties:
    @given(obj=_rich_objects, k=st.integers(1, 3), seed=st.integers(0, 999))
    @settings(max_examples=60, deadline=None)
    def test_difficulty_invariants(self, obj, k, seed):
        text = template_caption(obj)
        batch = gen_difficulty_negatives(text, obj, k, 4, TAX, random.Random(seed))
        assert len(set(batch.texts())) == len(batch.negatives)
        for neg in batch.negatives:
            assert len(neg.records) == k
            assert neg.text != text
            assert reverse_substitutions(neg.text, neg.records) == text

    @given(
        obj=_rich_objects,
        attr_type=st.sampled_from(["color", "material", "pattern"]),
        seed=st.integers(0, 999),
    )
    @settings(max_examples=60, deadline=None)
    def test_attribute_invariants(self, obj, attr_type, seed):
        text = template_caption(obj)
        batch = gen_attribute_negatives(text, obj, attr_type, 4, TAX, random.Random(seed))
        for neg in batch.negatives:
            assert len(neg.records) == 1
            assert neg.records[0].attr_type == attr_type
            assert neg.text != text
            assert reverse_substitutions(neg.text, neg.records) == text

    @given(obj=_rich_objects)
    @settings(max_examples=30, deadline=None)
    def test_all_slots_locatable_in_template_captions(self, obj):
        text = template_caption(obj)
        assert len(locatable_slots(text, obj, TAX)) == len(obj.all_slots())


class TestNegativeSpec:
    def test_name_round_trip(self):
        for name in ("hard", "medium", "easy", "trivial", "color", "pattern"):
            spec = NegativeSpec.from_name(name, 5, 1)
            assert spec.name == name
            assert NegativeSpec.from_dict(spec.to_dict()) == spec

    def test_difficulty_k_mapping(self):
        assert NegativeSpec.from_name("hard", 5).k == 1
        assert NegativeSpec.from_name("medium", 5).k == 2
        assert NegativeSpec.from_name("easy", 5).k == 3

    def test_invalid_specs_rejected(self):
        with pytest.raises(ValueError):
            NegativeSpec(kind="difficulty", n=5, k=4)
        with pytest.raises(ValueError):
            NegativeSpec(kind="attribute", n=5)
        with pytest.raises(ValueError):
            NegativeSpec(kind="trivial", n=0)
        with pytest.raises(ValueError):
            NegativeSpec.from_name("impossible", 5)
