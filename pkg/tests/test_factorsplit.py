"""
Tests for complementary-pair splits: counting, enumeration, sampling,
daughter assignment and the persisted little-endian word layout.
"""

import itertools
import os
import sys

import numpy as np
import pytest
from scipy import stats

sys.path.insert(0, os.path.join(os.path.dirname(__file__), ".."))

from factorrsf.core import PAIR_COUNT_UNBOUNDED, SplitError
from factorrsf.core.data import FactorSchema, FactorVariable
from factorrsf.core.factorsplit import (
    ComplementaryPair,
    Daughter,
    assign_daughter,
    decode_split,
    encode_split,
    enumerate_pair_values,
    enumerate_pairs,
    max_root_splits,
    num_complementary_pairs,
    sample_pair,
    value_masks,
)


def _schema(*label_counts):
    return FactorSchema(
        tuple(FactorVariable(f"v{j}", tuple(str(k) for k in range(c))) for j, c in enumerate(label_counts))
    )


def _brute_force_splits(label_count):
    """Unordered two-block partitions of the labels, by exhaustive subsets."""
    labels = range(label_count)
    seen = set()
    for size in range(1, label_count):
        for left in itertools.combinations(labels, size):
            right = tuple(sorted(set(labels) - set(left)))
            seen.add(frozenset([left, right]))
    return seen


class TestNumComplementaryPairs:
    @pytest.mark.parametrize("label_count", range(2, 11))
    def test_matches_exhaustive_partitions(self, label_count):
        assert num_complementary_pairs(label_count) == len(_brute_force_splits(label_count))

    def test_three_labels_give_three_pairings(self):
        assert num_complementary_pairs(3) == 3

    def test_two_labels(self):
        assert num_complementary_pairs(2) == 1

    def test_thirty_labels(self):
        assert num_complementary_pairs(30) == 2**29 - 1

    def test_saturates_above_63(self):
        assert num_complementary_pairs(64) == PAIR_COUNT_UNBOUNDED
        assert num_complementary_pairs(63) == 2**62 - 1

    def test_rejects_single_label(self):
        with pytest.raises(SplitError):
            num_complementary_pairs(1)


class TestMaxRootSplits:
    @pytest.mark.parametrize(
        "label_counts,expected",
        [((3, 3), 6), ((2,), 1), ((2, 4), 8)],
    )
    def test_sum_over_variables(self, label_counts, expected):
        assert max_root_splits(_schema(*label_counts)) == expected

    def test_degenerate_and_pending_contribute_nothing(self):
        schema = FactorSchema(
            (
                FactorVariable("a", ("x", "y", "z")),
                FactorVariable("b", ("only",)),
                FactorVariable("c", pending=True),
            )
        )
        assert max_root_splits(schema) == 3


class TestEnumeratePairs:
    def test_three_labels(self):
        pairs = list(enumerate_pairs(3))
        assert [p.left_labels() for p in pairs] == [(1,), (2,), (1, 2)]

    def test_two_labels(self):
        assert [p.left_labels() for p in enumerate_pairs(2)] == [(1,)]

    def test_ten_labels_count_and_distinct(self):
        pairs = list(enumerate_pairs(10))
        assert len(pairs) == 511 == num_complementary_pairs(10)
        assert len({p.value for p in pairs}) == 511

    def test_label_zero_always_right(self):
        for pair in enumerate_pairs(6):
            assert assign_daughter(pair, 0) is Daughter.RIGHT

    def test_words_increasing(self):
        words = [p.words[0] for p in enumerate_pairs(5)]
        assert words == sorted(words)

    @pytest.mark.parametrize("label_count", [1, 33])
    def test_out_of_range(self, label_count):
        with pytest.raises(SplitError):
            list(enumerate_pairs(label_count))

    def test_value_chunks_match_pairs(self):
        values = np.concatenate(list(enumerate_pair_values(9, chunk=50)))
        assert values.tolist() == [p.value for p in enumerate_pairs(9)]

    def test_value_masks_match_left_mask(self):
        values = np.concatenate(list(enumerate_pair_values(5)))
        masks = value_masks(values, 5)
        for row, pair in zip(masks, enumerate_pairs(5)):
            assert row.tolist() == pair.left_mask().tolist()


class TestComplementaryPair:
    def test_from_value_canonicalises(self):
        pair = ComplementaryPair.from_value(0b001, 3)
        assert pair.value == 0b110
        assert pair.complement_value() == 0b001

    def test_rejects_non_canonical_words(self):
        with pytest.raises(SplitError):
            ComplementaryPair((0b011,), 3)

    def test_rejects_bits_above_label_count(self):
        with pytest.raises(SplitError):
            ComplementaryPair((0b1000,), 3)

    def test_rejects_empty_left(self):
        with pytest.raises(SplitError):
            ComplementaryPair((0,), 3)

    def test_wrong_word_count(self):
        with pytest.raises(SplitError):
            ComplementaryPair((2, 0), 32)

    def test_left_mask_crosses_word_boundary(self):
        pair = ComplementaryPair.from_value((1 << 40) | (1 << 3), 48)
        mask = pair.left_mask()
        assert len(mask) == 48
        assert np.flatnonzero(mask).tolist() == [3, 40]
        assert pair.left_labels() == (3, 40)


class TestSamplePair:
    def test_two_labels_only_outcome(self, rng):
        for _ in range(20):
            assert sample_pair(2, rng).left_labels() == (1,)

    def test_three_labels_uniform(self):
        gen = np.random.default_rng(2024)
        draws = 100_000
        counts = {}
        for _ in range(draws):
            value = sample_pair(3, gen).value
            counts[value] = counts.get(value, 0) + 1
        assert sorted(counts) == [0b010, 0b100, 0b110]
        observed = np.array([counts[v] for v in sorted(counts)])
        assert np.all(np.abs(observed / draws - 1 / 3) < 0.01)
        assert stats.chisquare(observed).pvalue > 0.001

    def test_five_labels_uniform(self):
        gen = np.random.default_rng(5)
        values = [sample_pair(5, gen).value for _ in range(100_000)]
        counts = np.bincount(values, minlength=32)[np.arange(2, 31, 2)]
        assert (counts > 0).all()
        assert counts.max() / counts.min() < 1.2

    def test_always_canonical(self, rng):
        for label_count in (3, 7, 33, 100):
            pair = sample_pair(label_count, rng)
            assert pair.value & 1 == 0
            assert 0 < pair.value < (1 << label_count) - 1

    def test_512_labels_has_16_words(self, rng):
        pair = sample_pair(512, rng)
        assert len(pair.words) == 16

    def test_rejects_single_label(self, rng):
        with pytest.raises(SplitError):
            sample_pair(1, rng)


class TestAssignDaughter:
    def test_label_zero_right(self):
        pair = ComplementaryPair.from_value(0b110, 3)
        assert assign_daughter(pair, 0) is Daughter.RIGHT

    def test_left_label(self):
        pair = ComplementaryPair.from_value(0b010, 3)
        assert assign_daughter(pair, 1) is Daughter.LEFT
        assert assign_daughter(pair, 2) is Daughter.RIGHT

    def test_complement_flips_non_zero_labels_consistently(self):
        # the complement of {1} is {0, 2}; canonical form sends 0 right either way
        pair = ComplementaryPair.from_value(0b101, 3)
        assert pair.left_labels() == (1,)

    @pytest.mark.parametrize("label", [-1, 3])
    def test_out_of_range(self, label):
        with pytest.raises(SplitError):
            assign_daughter(ComplementaryPair.from_value(0b010, 3), label)


class TestPersistedSplit:
    def test_512_labels_is_16_little_endian_words(self, rng):
        pair = sample_pair(512, rng)
        data = encode_split(4, pair)
        assert len(data) == (2 + 16) * 4
        assert int.from_bytes(data[8:12], "little") == pair.words[0]
        variable, decoded = decode_split(data)
        assert variable == 4
        assert decoded == pair

    def test_layout_of_small_split(self):
        data = encode_split(1, ComplementaryPair.from_value(0b110, 3))
        assert data == bytes([1, 0, 0, 0, 3, 0, 0, 0, 6, 0, 0, 0])

    @pytest.mark.parametrize("label_count", [2, 31, 32, 33, 64, 512])
    def test_words_survive(self, label_count, rng):
        pair = sample_pair(label_count, rng)
        assert decode_split(encode_split(0, pair))[1].words == pair.words

    def test_truncated(self):
        data = encode_split(0, ComplementaryPair.from_value(1 << 40, 48))
        with pytest.raises(SplitError):
            decode_split(data[:-4])

    def test_misaligned(self):
        with pytest.raises(SplitError):
            decode_split(b"\x00" * 13)
