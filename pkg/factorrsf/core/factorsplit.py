"""Complementary-pair splits on factors, stored as little-endian 32-bit words.

A split of a factor with L labels is a bit vector: label b goes to the left
daughter when bit b is set and to the right daughter otherwise. A pair and
its complement describe the same split, so only the canonical member (bit 0
clear, label 0 always goes right) is ever built. Factors wider than one
word use a multi-word complementary pair (MWCP): ceil(L / 32) words, least
significant word first.

Persisted layout (``encode_split``): variable index, L, then the words, all
as little-endian unsigned 32-bit integers.
"""

from __future__ import annotations

from collections.abc import Iterator
from dataclasses import dataclass
import enum
import logging
from typing import TYPE_CHECKING

import numpy as np

from . import (
    MAX_ENUMERATED_LABELS,
    MAX_PAIR_REJECTIONS,
    PAIR_COUNT_UNBOUNDED,
    WORD_BITS,
    SplitError,
)

if TYPE_CHECKING:
    from .data import FactorSchema

_LOGGER = logging.getLogger(__name__)

WORD_MASK = (1 << WORD_BITS) - 1
WIRE_DTYPE = np.dtype("<u4")


class Daughter(enum.Enum):
    """Side of a split a label is sent to."""

    LEFT = "left"
    RIGHT = "right"


def num_words(label_count: int) -> int:
    """Number of 32-bit words needed to hold ``label_count`` bits."""
    return -(-label_count // WORD_BITS)


@dataclass(frozen=True)
class ComplementaryPair:
    """Canonical bit-vector split of a factor's labels into two daughters."""

    words: tuple[int, ...]
    label_count: int

    def __post_init__(self) -> None:
        if self.label_count < 2:
            raise SplitError(f"a factor split needs at least 2 labels, got {self.label_count}")
        if len(self.words) != num_words(self.label_count):
            raise SplitError(
                f"{self.label_count} labels need {num_words(self.label_count)} words, got {len(self.words)}"
            )
        if any(w < 0 or w > WORD_MASK for w in self.words):
            raise SplitError("split words must be unsigned 32-bit integers")
        value = self.value
        if value >> self.label_count:
            raise SplitError(f"bits at or above label count {self.label_count} must be clear")
        if value & 1:
            raise SplitError("split is not canonical: label 0 must go to the right daughter")
        if value == 0:
            raise SplitError("split sends every label to the right daughter")

    @classmethod
    def from_value(cls, value: int, label_count: int) -> ComplementaryPair:
        """Build a pair from its integer bit pattern, canonicalising if needed."""
        if value & 1:
            value ^= (1 << label_count) - 1
        words = tuple((value >> (WORD_BITS * k)) & WORD_MASK for k in range(num_words(label_count)))
        return cls(words, label_count)

    @classmethod
    def from_words(cls, words, label_count: int) -> ComplementaryPair:
        return cls(tuple(int(w) for w in words), int(label_count))

    @property
    def value(self) -> int:
        """The whole bit vector as one Python integer."""
        return sum(w << (WORD_BITS * k) for k, w in enumerate(self.words))

    def left_labels(self) -> tuple[int, ...]:
        value = self.value
        return tuple(b for b in range(self.label_count) if (value >> b) & 1)

    def left_mask(self) -> np.ndarray:
        """Boolean array over labels, True where the label goes left."""
        raw = np.asarray(self.words, dtype=WIRE_DTYPE).view(np.uint8)
        return np.unpackbits(raw, bitorder="little")[: self.label_count].astype(bool)

    def complement_value(self) -> int:
        """Bit pattern of the mirror image (never stored, used in checks)."""
        return self.value ^ ((1 << self.label_count) - 1)


def num_complementary_pairs(label_count: int) -> int:
    """Number of distinct splits of a factor, 2^(L-1) - 1.

    Saturates to ``PAIR_COUNT_UNBOUNDED`` for L > 63.
    """
    if label_count < 2:
        raise SplitError(f"a factor needs at least 2 labels to split, got {label_count}")
    if label_count > 63:
        return PAIR_COUNT_UNBOUNDED
    return 2 ** (label_count - 1) - 1


def max_root_splits(schema: FactorSchema) -> int:
    """Total candidate splits at a root node: sum_j 2^(L_j - 1) - d.

    Variables with fewer than two labels (pending or degenerate) contribute
    nothing.
    """
    total = 0
    for label_count in schema.label_counts:
        if label_count < 2:
            continue
        total += num_complementary_pairs(label_count)
        if total >= PAIR_COUNT_UNBOUNDED:
            return PAIR_COUNT_UNBOUNDED
    return total


def _check_enumerable(label_count: int) -> None:
    if not 2 <= label_count <= MAX_ENUMERATED_LABELS:
        raise SplitError(
            f"cannot enumerate splits of a factor with {label_count} labels; "
            f"factors with more than {MAX_ENUMERATED_LABELS} labels use sample_pair"
        )


def enumerate_pairs(label_count: int) -> Iterator[ComplementaryPair]:
    """Yield every canonical pair of a single-word factor in increasing word order."""
    _check_enumerable(label_count)
    for v in range(1, 2 ** (label_count - 1)):
        yield ComplementaryPair((v << 1,), label_count)


def enumerate_pair_values(label_count: int, chunk: int = 4096) -> Iterator[np.ndarray]:
    """Same order as ``enumerate_pairs``, as chunks of int64 bit patterns."""
    _check_enumerable(label_count)
    stop = 2 ** (label_count - 1)
    for lo in range(1, stop, chunk):
        yield np.arange(lo, min(lo + chunk, stop), dtype=np.int64) << 1


def value_masks(values: np.ndarray, label_count: int) -> np.ndarray:
    """(P, L) boolean left-masks for single-word bit patterns."""
    return ((values[:, None] >> np.arange(label_count, dtype=np.int64)) & 1).astype(bool)


def _from_bits(bits: np.ndarray, label_count: int) -> ComplementaryPair:
    padded = np.zeros(num_words(label_count) * WORD_BITS, dtype=np.uint8)
    padded[:label_count] = bits
    words = np.packbits(padded, bitorder="little").view(WIRE_DTYPE)
    return ComplementaryPair(tuple(int(w) for w in words), label_count)


def sample_pair(label_count: int, rng: np.random.Generator) -> ComplementaryPair:
    """Draw a canonical pair uniformly over all 2^(L-1) - 1 splits.

    Each label's bit is a fair coin; all-set and all-clear patterns are
    rejected and the survivor is flipped if bit 0 is set. Every split is hit
    by exactly two of the 2^L - 2 accepted patterns, so the result is uniform
    without enumerating anything.
    """
    if label_count < 2:
        raise SplitError(f"a factor needs at least 2 labels to split, got {label_count}")
    if label_count == 2:
        return ComplementaryPair((0b10,), 2)
    for _ in range(MAX_PAIR_REJECTIONS):
        bits = rng.integers(0, 2, size=label_count, dtype=np.uint8)
        ones = int(bits.sum())
        if ones == 0 or ones == label_count:
            continue
        if bits[0]:
            bits ^= 1
        return _from_bits(bits, label_count)
    raise SplitError(f"no valid split drawn for {label_count} labels in {MAX_PAIR_REJECTIONS} tries")


def assign_daughter(pair: ComplementaryPair, label: int) -> Daughter:
    """Daughter that receives ``label`` under ``pair``."""
    if not 0 <= label < pair.label_count:
        raise SplitError(f"label {label} out of range for a factor with {pair.label_count} labels")
    word = pair.words[label // WORD_BITS]
    return Daughter.LEFT if (word >> (label % WORD_BITS)) & 1 else Daughter.RIGHT


def encode_split(variable: int, pair: ComplementaryPair) -> bytes:
    """Persist a split: variable, L, then the pair's words (little-endian u32)."""
    return np.asarray([variable, pair.label_count, *pair.words], dtype=WIRE_DTYPE).tobytes()


def decode_split(data: bytes | bytearray) -> tuple[int, ComplementaryPair]:
    """Inverse of ``encode_split``."""
    if len(data) < 3 * WIRE_DTYPE.itemsize or len(data) % WIRE_DTYPE.itemsize:
        raise SplitError(f"persisted split has invalid length {len(data)}")
    fields = np.frombuffer(bytes(data), dtype=WIRE_DTYPE)
    variable, label_count = int(fields[0]), int(fields[1])
    if len(fields) - 2 != num_words(label_count):
        raise SplitError(f"persisted split for {label_count} labels carries {len(fields) - 2} words")
    return variable, ComplementaryPair.from_words(fields[2:], label_count)
