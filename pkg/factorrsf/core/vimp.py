"""Variable importance (VIMP) and its bootstrap distribution.

VIMP of a variable is the OOB error with that variable noised up minus the
baseline OOB error. Noising sends a case to a random daughter at every node
that splits on the variable (``method="random"``) or permutes the variable's
labels across the evaluated cases (``method="permute"``).
"""

from __future__ import annotations

from collections.abc import Iterable
from dataclasses import dataclass
import logging

from joblib import Parallel, delayed
import numpy as np
import pandas as pd

from . import DEFAULT_ALPHA, DEFAULT_LEVEL, ForestError
from .data import Dataset
from .forest import Forest, oob_mortality, prediction_error

_LOGGER = logging.getLogger(__name__)

METHODS = ("random", "permute")


@dataclass(frozen=True, eq=False)
class VimpResult:
    """Importance per variable; degenerate variables are reported as 0."""

    variables: tuple[str, ...]
    importance: np.ndarray
    baseline: float
    degenerate: frozenset[str] = frozenset()

    def __getitem__(self, name: str) -> float:
        return float(self.importance[self.variables.index(name)])


@dataclass(frozen=True, eq=False)
class VimpBootstrapDistribution:
    """R replicate VIMP values per variable and the interval level q."""

    variables: tuple[str, ...]
    replicates: np.ndarray
    level: float = DEFAULT_LEVEL
    degenerate: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        if self.replicates.ndim != 2 or self.replicates.shape[0] < 1:
            raise ForestError("a bootstrap distribution needs at least one replicate")
        if not 0 < self.level < 1:
            raise ForestError(f"interval level must lie in (0, 1), got {self.level}")

    @property
    def n_replicates(self) -> int:
        return self.replicates.shape[0]

    def mean(self) -> np.ndarray:
        return self.replicates.mean(axis=0)

    def intervals(self, level: float | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Empirical quantile interval per variable, linear interpolation."""
        q = self.level if level is None else level
        lower = np.quantile(self.replicates, (1 - q) / 2, axis=0)
        upper = np.quantile(self.replicates, (1 + q) / 2, axis=0)
        return lower, upper

    def to_frame(self, granularity: int | None = None, nsplit: int | None = None, noise: Iterable[str] = ()) -> pd.DataFrame:
        lower, upper = self.intervals()
        noise = set(noise)
        return pd.DataFrame(
            {
                "variable": list(self.variables),
                "mean": self.mean(),
                "lower": lower,
                "upper": upper,
                "level": self.level,
                "granularity": granularity,
                "nsplit": nsplit,
                "noise": [name in noise for name in self.variables],
            }
        )


def _noise_rng(seed: int, replicate: int, variable: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(replicate, variable)))


def _resample(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.integers(0, n, size=n)


def _importance(forest: Forest, dataset: Dataset, cases: np.ndarray, seed: int, replicate: int, method: str):
    if method not in METHODS:
        raise ForestError(f"unknown VIMP method {method!r}; expected one of {METHODS}")
    times, statuses = dataset.time[cases], dataset.status[cases]
    baseline = prediction_error(times, statuses, oob_mortality(forest, dataset, cases))
    importance = np.zeros(len(forest.schema))
    degenerate = set()
    for v, var in enumerate(forest.schema.variables):
        if var.degenerate or var.pending:
            degenerate.add(var.name)
            continue
        rng = _noise_rng(seed, replicate, v)
        if method == "random":

            def route(b, tree, codes, v=v, rng=rng):
                return tree.apply(codes, noise_variable=v, rng=rng)

            mortality = oob_mortality(forest, dataset, cases, route=route)
        else:
            codes = dataset.codes[cases].copy()
            codes[:, v] = rng.permutation(codes[:, v])
            mortality = oob_mortality(forest, dataset, cases, codes=codes)
        importance[v] = prediction_error(times, statuses, mortality) - baseline
    return baseline, importance, frozenset(degenerate)


def vimp(forest: Forest, dataset: Dataset, *, seed: int = 0, method: str = "random") -> VimpResult:
    """VIMP of every variable on the learning data."""
    baseline, importance, degenerate = _importance(
        forest, dataset, np.arange(dataset.n_cases), seed, 0, method
    )
    if degenerate:
        _LOGGER.info("VIMP reported as 0 for degenerate variables: %s", sorted(degenerate))
    return VimpResult(tuple(forest.schema.names), importance, baseline, degenerate)


def _replicate(forest: Forest, dataset: Dataset, seed: int, replicate: int, method: str) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(replicate,)))
    cases = _resample(rng, dataset.n_cases)
    return _importance(forest, dataset, cases, seed, replicate, method)[1]


def bootstrap_vimp(
    forest: Forest,
    dataset: Dataset,
    replicates: int,
    level: float = DEFAULT_LEVEL,
    *,
    seed: int = 0,
    method: str = "random",
    n_jobs: int = 1,
) -> VimpBootstrapDistribution:
    """Drop R bootstrap resamples down the fixed forest and compute VIMP for each.

    The baseline error is recomputed on every resample.
    """
    if replicates < 1:
        raise ForestError(f"need at least one bootstrap replicate, got {replicates}")
    _ = forest.node_mortality  # fill the cache before workers copy the forest
    rows = Parallel(n_jobs=n_jobs)(
        delayed(_replicate)(forest, dataset, seed, r, method) for r in range(replicates)
    )
    degenerate = frozenset(v.name for v in forest.schema.variables if v.degenerate or v.pending)
    _LOGGER.info("Bootstrap VIMP: %d replicates over %d variables", replicates, len(forest.schema))
    return VimpBootstrapDistribution(tuple(forest.schema.names), np.vstack(rows), level, degenerate)


def noise_threshold(dist: VimpBootstrapDistribution, noise_variables: Iterable[str], alpha: float = DEFAULT_ALPHA) -> float:
    """(1 - alpha) quantile of the pooled replicate VIMP of the noise variables."""
    names = list(noise_variables)
    if not names:
        raise ForestError("no noise variables designated")
    try:
        columns = [dist.variables.index(name) for name in names]
    except ValueError:
        raise ForestError(f"noise variables {names} not all present in the distribution") from None
    pool = dist.replicates[:, columns].ravel()
    if pool.size == 0:
        raise ForestError("empty noise pool")
    return float(np.quantile(pool, 1 - alpha))


def selected_variables(dist: VimpBootstrapDistribution, threshold: float) -> list[str]:
    """Variables whose mean bootstrap VIMP exceeds ``threshold``."""
    return [name for name, m in zip(dist.variables, dist.mean()) if m > threshold]
