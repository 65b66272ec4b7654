import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from roomnav.floorplan import ROOMS, RoomId
from roomnav.langspec import (
    COLORS,
    HOLDOUT_OBJECTS,
    SEQ_LEN,
    SHAPES,
    TRAIN_OBJECTS,
    VOCAB,
    VOCAB_SIZE,
    EnhancedInstruction,
    Instruction,
    ParseError,
    all_instructions,
    all_sentences,
    decode,
    encode,
    format_instruction,
    parse_instruction,
)


def test_grammatical_space_size():
    sentences = list(all_sentences())
    assert len(sentences) == len(COLORS) * len(SHAPES) * (len(ROOMS) + 1) == 96


def test_encode_injective_and_roundtrip():
    seen = {}
    for s in all_sentences():
        tok = encode(s)
        assert tok.shape == (SEQ_LEN,) and tok.dtype == np.int64
        assert tok.max() < VOCAB_SIZE
        seen[tok.tobytes()] = s
        assert decode(tok) == s
        assert parse_instruction(format_instruction(s)) == s
    assert len(seen) == 96


def test_object_splits_partition_combos():
    assert len(TRAIN_OBJECTS) + len(HOLDOUT_OBJECTS) == 12
    assert not set(TRAIN_OBJECTS) & set(HOLDOUT_OBJECTS)
    # every color and every shape is seen in training
    assert {c for c, _ in TRAIN_OBJECTS} == set(COLORS)
    assert {s for _, s in TRAIN_OBJECTS} == set(SHAPES)


def test_format_examples():
    assert str(Instruction("red", "box")) == "find the red box"
    e = EnhancedInstruction(Instruction("blue", "key"), RoomId.LIVING_ROOM)
    assert str(e) == "find the blue key, in the living room"


def test_parse_tolerates_case_and_missing_comma():
    e = parse_instruction("Find the Green Ball in the dining room")
    assert e == EnhancedInstruction(Instruction("green", "ball"), RoomId.DINING_ROOM)


@pytest.mark.parametrize("text,token", [
    ("find the purple box", "purple"),
    ("find the red cube", "cube"),
    ("find a red box", "a"),
    ("find the red box, in the attic", "attic"),
    ("find the red box, in the corridor", "corridor"),
    ("find the", "<end>"),
])
def test_parse_errors(text, token):
    with pytest.raises(ParseError) as e:
        parse_instruction(text)
    assert e.value.token == token


def test_corridor_is_not_an_enhancement():
    with pytest.raises(ValueError):
        EnhancedInstruction(Instruction("red", "box"), RoomId.CORRIDOR)


def test_unknown_attributes():
    with pytest.raises(ValueError):
        Instruction("purple", "box")
    with pytest.raises(ValueError):
        Instruction("red", "cube")


def test_decode_rejects_garbage():
    with pytest.raises(ParseError):
        decode(np.array([VOCAB.index("the")] * 4 + [0] * 4))


def test_all_instructions_subset():
    assert [(i.color, i.shape) for i in all_instructions(HOLDOUT_OBJECTS)] == list(HOLDOUT_OBJECTS)
    assert len(all_instructions()) == 12


@given(st.sampled_from(COLORS), st.sampled_from(SHAPES), st.sampled_from((None,) + ROOMS))
def test_roundtrip_property(color, shape, room):
    e = EnhancedInstruction(Instruction(color, shape), room)
    assert decode(encode(e)) == e
    assert parse_instruction(str(e)) == e
