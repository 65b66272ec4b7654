"""The instruction language: templates, parsing and token encoding.

Sentences have the form ``find the <color> <shape>[, in the <room>]``.
Tokens are word-level except that each room name is a single token, so every
sentence fits in :data:`SEQ_LEN` slots.
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

from .floorplan import ROOMS, RoomId

COLORS = ("red", "green", "blue", "yellow")
SHAPES = ("box", "ball", "key")

# Objects used to train navigation; the complement is held out for transfer.
TRAIN_OBJECTS = (("red", "box"), ("green", "ball"), ("blue", "box"),
                 ("yellow", "ball"), ("red", "key"), ("green", "key"))
HOLDOUT_OBJECTS = (("blue", "ball"), ("yellow", "box"), ("red", "ball"),
                   ("green", "box"), ("blue", "key"), ("yellow", "key"))

PAD = "<pad>"
VOCAB = (PAD, "find", "the", "in") + COLORS + SHAPES + tuple(r.label for r in ROOMS)
TOKEN_INDEX = {w: i for i, w in enumerate(VOCAB)}
PAD_INDEX = 0
VOCAB_SIZE = 32  # embedding tables are sized for headroom
SEQ_LEN = 8

assert len(VOCAB) <= VOCAB_SIZE


class ParseError(ValueError):
    def __init__(self, token: str, reason: str):
        super().__init__(f"{reason}: {token!r}")
        self.token = token


@dataclass(frozen=True)
class Instruction:
    color: str
    shape: str

    def __post_init__(self):
        if self.color not in COLORS:
            raise ValueError(f"unknown color {self.color!r}")
        if self.shape not in SHAPES:
            raise ValueError(f"unknown shape {self.shape!r}")

    def matches(self, color: str, shape: str) -> bool:
        return self.color == color and self.shape == shape

    def __str__(self) -> str:
        return format_instruction(EnhancedInstruction(self))


@dataclass(frozen=True)
class EnhancedInstruction:
    base: Instruction
    enhancement: Optional[RoomId] = None

    def __post_init__(self):
        if self.enhancement is RoomId.CORRIDOR:
            raise ValueError("corridor is not an enhancement")

    def __str__(self) -> str:
        return format_instruction(self)


def all_instructions(objects=None) -> list[Instruction]:
    if objects is None:
        objects = itertools.product(COLORS, SHAPES)
    return [Instruction(c, s) for c, s in objects]


def all_sentences() -> Iterator[EnhancedInstruction]:
    for base in all_instructions():
        for enh in (None,) + ROOMS:
            yield EnhancedInstruction(base, enh)


def format_instruction(instr: EnhancedInstruction) -> str:
    text = f"find the {instr.base.color} {instr.base.shape}"
    if instr.enhancement is not None:
        text += f", in the {instr.enhancement.words}"
    return text


_ROOM_WORDS = {r.words: r for r in ROOMS}


def parse_instruction(text: str) -> EnhancedInstruction:
    words = re.findall(r"[a-z]+|,", text.lower())

    def expect(i: int, word: str):
        if i >= len(words):
            raise ParseError("<end>", f"expected {word!r}")
        if words[i] != word:
            raise ParseError(words[i], f"expected {word!r}")

    expect(0, "find")
    expect(1, "the")
    if len(words) < 4:
        raise ParseError("<end>", "sentence too short")
    color, shape = words[2], words[3]
    if color not in COLORS:
        raise ParseError(color, "unknown color")
    if shape not in SHAPES:
        raise ParseError(shape, "unknown shape")
    base = Instruction(color, shape)
    rest = words[4:]
    if not rest:
        return EnhancedInstruction(base)
    if rest[0] == ",":
        rest = rest[1:]
    if rest[:2] != ["in", "the"]:
        raise ParseError(rest[0] if rest else "<end>", "expected 'in the'")
    room_text = " ".join(rest[2:])
    if room_text not in _ROOM_WORDS:
        raise ParseError(room_text or "<end>", "unknown room")
    return EnhancedInstruction(base, _ROOM_WORDS[room_text])


def encode(instr: EnhancedInstruction | Instruction) -> np.ndarray:
    if isinstance(instr, Instruction):
        instr = EnhancedInstruction(instr)
    words = ["find", "the", instr.base.color, instr.base.shape]
    if instr.enhancement is not None:
        words += ["in", "the", instr.enhancement.label]
    tokens = np.full(SEQ_LEN, PAD_INDEX, dtype=np.int64)
    tokens[: len(words)] = [TOKEN_INDEX[w] for w in words]
    return tokens


def decode(tokens) -> EnhancedInstruction:
    words = [VOCAB[int(t)] for t in tokens if int(t) != PAD_INDEX]
    if len(words) not in (4, 7) or words[:2] != ["find", "the"]:
        raise ParseError(" ".join(words), "not a grammatical token sequence")
    base = Instruction(words[2], words[3])
    if len(words) == 4:
        return EnhancedInstruction(base)
    if words[4:6] != ["in", "the"]:
        raise ParseError(" ".join(words[4:6]), "expected 'in the'")
    return EnhancedInstruction(base, RoomId.from_label(words[6]))
