"""Frozen caption vocabulary. Token ids are positions in ``WORDS`` and must never change."""

from __future__ import annotations

import logging
import os

log = logging.getLogger(__name__)

WORDS = (
    "<pad>", "<unk>", "<null>",
    # colors
    "red", "green", "blue", "yellow", "cyan", "magenta", "white", "orange",
    # shapes
    "square", "circle", "bar",
    # sizes
    "small", "medium", "large",
    # backgrounds
    "solid", "gradient",
    # motion
    "moving", "still", "left", "right", "up", "down", "slow", "fast",
    # fillers seen in free-text prompts
    "a", "the", "on", "with", "background", "shape", "object", "video", "of", "is", "and",
)

PAD, UNK, NULL = 0, 1, 2
VOCAB_SIZE = 64  # table rows; ids beyond len(WORDS) are reserved
TOKEN_ID = {w: i for i, w in enumerate(WORDS)}

COLORS = {
    "red": (0.9, 0.1, 0.1),
    "green": (0.1, 0.8, 0.2),
    "blue": (0.15, 0.3, 0.95),
    "yellow": (0.95, 0.9, 0.1),
    "cyan": (0.1, 0.9, 0.9),
    "magenta": (0.9, 0.1, 0.85),
    "white": (1.0, 1.0, 1.0),
    "orange": (1.0, 0.55, 0.05),
}
SHAPES = ("square", "circle", "bar")
SIZES = {"small": 0.25, "medium": 0.35, "large": 0.45}
BACKGROUNDS = ("solid", "gradient")
DIRECTIONS = ("right", "left", "down", "up")
DIRECTION_VECTORS = {"right": (1, 0), "left": (-1, 0), "down": (0, 1), "up": (0, -1)}

assert len(WORDS) <= VOCAB_SIZE


def tokenize(text: str, warn: bool = True) -> list[int]:
    """Whitespace tokenization against the frozen table; unknown words map to <unk>."""
    ids = []
    for word in text.lower().split():
        tid = TOKEN_ID.get(word)
        if tid is None:
            if warn:
                log.warning("unknown word %r mapped to <unk>", word)
            tid = UNK
        ids.append(tid)
    return ids or [PAD]


def detokenize(ids) -> str:
    return " ".join(WORDS[i] if i < len(WORDS) else "<unk>" for i in ids)


def direction_word(text: str) -> str | None:
    for word in text.lower().split():
        if word in DIRECTION_VECTORS:
            return word
    return None


def write_table(path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i, w in enumerate(WORDS):
            fh.write(f"{i}\t{w}\n")
