"""
Shared fixtures for the factorrsf test suite.

Datasets are built directly from label codes so each test states exactly
which cases it feeds the estimators, trees and forests.
"""

import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), ".."))

from factorrsf.core.data import Dataset, FactorSchema, FactorVariable


def _make_dataset(codes, time, status, label_counts=None, names=None):
    time = np.asarray(time, dtype=float)
    codes = np.asarray(codes, dtype=np.int64).reshape(len(time), -1)
    if label_counts is None:
        label_counts = [max(int(codes[:, j].max()) + 1, 2) for j in range(codes.shape[1])]
    names = names or [f"x{j + 1}" for j in range(len(label_counts))]
    schema = FactorSchema(
        tuple(FactorVariable(name, tuple(str(k) for k in range(c))) for name, c in zip(names, label_counts))
    )
    return Dataset(schema, time, status, codes)


@pytest.fixture
def make_dataset():
    return _make_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def two_group_dataset():
    """Label 0 cases all die at t=1, label 1 cases all die at t=10."""
    return _make_dataset([0] * 4 + [1] * 4, [1.0] * 4 + [10.0] * 4, [1] * 8)


@pytest.fixture
def prognostic_dataset():
    """150 cases; x1 (3 labels) drives the hazard, x2 (binary) is noise."""
    gen = np.random.default_rng(7)
    n = 150
    x1 = gen.integers(0, 3, size=n)
    x2 = gen.integers(0, 2, size=n)
    t0 = gen.exponential(1.0 / np.array([0.2, 1.0, 5.0])[x1])
    c = gen.exponential(2.0, size=n)
    return _make_dataset(np.column_stack([x1, x2]), np.minimum(t0, c), (t0 <= c).astype(int), [3, 2])


@pytest.fixture
def pbc_like_csv(tmp_path):
    """Small CSV mixing string, low-cardinality numeric and continuous columns."""
    gen = np.random.default_rng(3)
    n = 40
    lines = ["days,dead,sex,stage,bili"]
    for i in range(n):
        sex = "m" if gen.random() < 0.5 else "f"
        lines.append(f"{gen.integers(50, 4000)},{int(gen.random() < 0.4)},{sex},{gen.integers(1, 5)},{gen.random() * 10:.3f}")
    path = tmp_path / "pbc.csv"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
