"""Bootstrap ensembles of survival trees and their out-of-bag error."""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import asdict, dataclass
from functools import cached_property
import json
import logging
import math
from pathlib import Path

from joblib import Parallel, delayed
import numpy as np

from . import (
    DEFAULT_NODESIZE,
    DEFAULT_NSPLIT,
    DEFAULT_NTREE,
    MAX_BOOTSTRAP_RETRIES,
    MODEL_FORMAT_VERSION,
    ConfigError,
    DataError,
    ForestError,
    InsufficientEvents,
    NoOOBPrediction,
)
from .data import Dataset, FactorSchema
from .estimators import StepFunction
from .tree import SurvivalTree, TreeParams, grow_tree

_LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class ForestParams:
    """B trees grown with (mtry, nsplit, nodesize) from master ``seed``.

    ``mtry=None`` uses ceil(sqrt(d)) over the splittable variables.
    """

    ntree: int = DEFAULT_NTREE
    mtry: int | None = None
    nsplit: int = DEFAULT_NSPLIT
    nodesize: int = DEFAULT_NODESIZE
    seed: int = 0

    def __post_init__(self) -> None:
        if self.ntree < 1:
            raise ConfigError(f"ntree must be at least 1, got {self.ntree}")
        if self.mtry is not None and self.mtry < 1:
            raise ConfigError(f"mtry must be at least 1, got {self.mtry}")

    def tree_params(self, n_variables: int) -> TreeParams:
        mtry = self.mtry or max(1, math.ceil(math.sqrt(n_variables)))
        return TreeParams(mtry=mtry, nsplit=self.nsplit, nodesize=self.nodesize)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> ForestParams:
        return cls(**raw)


def tree_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for tree ``index``; identical at any parallelism."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


@dataclass(eq=False)
class Forest:
    """Fitted trees with their bootstrap multiplicities (one row per tree)."""

    trees: list[SurvivalTree]
    inbag: np.ndarray
    params: ForestParams
    schema: FactorSchema
    event_times: np.ndarray

    def __post_init__(self) -> None:
        self.inbag = np.asarray(self.inbag, dtype=np.int64)
        if self.inbag.shape[0] != len(self.trees):
            raise ForestError("inbag counts must have one row per tree")

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    @property
    def n_cases(self) -> int:
        return self.inbag.shape[1]

    def oob(self) -> np.ndarray:
        """(B, n) boolean: case i is out-of-bag for tree b."""
        return self.inbag == 0

    def predict(self, codes: np.ndarray) -> list[tuple[StepFunction, StepFunction]]:
        return predict_many(self, codes)

    @cached_property
    def node_mortality(self) -> list[np.ndarray]:
        """Per tree and node: terminal CHF summed over the learning event times."""
        out = []
        for tree in self.trees:
            values = np.full(len(tree.nodes), np.nan)
            for k in tree.terminals():
                values[k] = float(np.sum(tree.nodes[k].chf(self.event_times)))
            out.append(values)
        return out


def _grow_bootstrap_tree(dataset: Dataset, params: TreeParams, seed: int, index: int):
    rng = tree_rng(seed, index)
    n = dataset.n_cases
    for attempt in range(1, MAX_BOOTSTRAP_RETRIES + 1):
        counts = np.bincount(rng.integers(0, n, size=n), minlength=n)
        if counts @ dataset.status >= params.nodesize:
            return grow_tree(dataset, params, counts, rng), counts
        _LOGGER.warning("Tree %d: bootstrap draw %d has fewer than %d events, redrawing", index, attempt, params.nodesize)
    raise InsufficientEvents(f"tree {index}: no bootstrap sample with {params.nodesize} events")


def fit(dataset: Dataset, params: ForestParams, n_jobs: int = 1) -> Forest:
    """Grow ``params.ntree`` trees, each on its own bootstrap sample."""
    if dataset.pending_variables:
        raise DataError(f"discretize {dataset.pending_variables} before fitting")
    if dataset.n_events == 0:
        raise InsufficientEvents("dataset has no events")
    tree_params = params.tree_params(len(dataset.schema.splittable()))
    results = Parallel(n_jobs=n_jobs)(
        delayed(_grow_bootstrap_tree)(dataset, tree_params, params.seed, b) for b in range(params.ntree)
    )
    trees = [tree for tree, _ in results]
    inbag = np.vstack([counts for _, counts in results])
    event_times = np.unique(dataset.time[dataset.status == 1])
    _LOGGER.info(
        "Fitted %d trees on %d cases (mtry=%d, nsplit=%d, nodesize=%d)",
        params.ntree,
        dataset.n_cases,
        tree_params.mtry,
        tree_params.nsplit,
        tree_params.nodesize,
    )
    return Forest(trees, inbag, params, dataset.schema, event_times)


# ---------------------------------------------------------------------------
# Prediction
# ---------------------------------------------------------------------------


def _tree_curves(tree: SurvivalTree, terminal: int) -> tuple[StepFunction, StepFunction]:
    node = tree.nodes[terminal]
    return node.survival, node.chf


def _average(curves: list[tuple[StepFunction, StepFunction]]) -> tuple[StepFunction, StepFunction]:
    return StepFunction.average([s for s, _ in curves]), StepFunction.average([h for _, h in curves])


def predict_ensemble(forest: Forest, x) -> tuple[StepFunction, StepFunction]:
    """Tree-averaged survival and cumulative hazard for one feature vector."""
    codes = np.asarray(x, dtype=np.int64)[None, :]
    return _average([_tree_curves(tree, int(tree.apply(codes)[0])) for tree in forest.trees])


def predict_many(forest: Forest, codes: np.ndarray) -> list[tuple[StepFunction, StepFunction]]:
    """``predict_ensemble`` for every row of ``codes``, routing each tree once."""
    codes = np.asarray(codes, dtype=np.int64)
    terminals = np.vstack([tree.apply(codes) for tree in forest.trees])
    return [
        _average([_tree_curves(tree, int(terminals[b, i])) for b, tree in enumerate(forest.trees)])
        for i in range(len(codes))
    ]


def predict_oob(forest: Forest, dataset: Dataset, i: int) -> tuple[StepFunction, StepFunction]:
    """Average over only the trees for which case ``i`` is out-of-bag."""
    members = np.flatnonzero(forest.inbag[:, i] == 0)
    if members.size == 0:
        raise NoOOBPrediction(f"case {i} is in-bag for every tree")
    codes = dataset.codes[i : i + 1]
    return _average([_tree_curves(forest.trees[b], int(forest.trees[b].apply(codes)[0])) for b in members])


Router = Callable[[int, SurvivalTree, np.ndarray], np.ndarray]


def _plain_route(index: int, tree: SurvivalTree, codes: np.ndarray) -> np.ndarray:
    return tree.apply(codes)


def oob_mortality(
    forest: Forest,
    dataset: Dataset,
    cases: np.ndarray | None = None,
    route: Router = _plain_route,
    codes: np.ndarray | None = None,
) -> np.ndarray:
    """OOB ensemble mortality of each listed case (NaN if never out-of-bag).

    ``cases`` index the learning data and may repeat (bootstrap resamples);
    ``codes`` optionally replaces their feature rows.
    """
    cases = np.arange(dataset.n_cases) if cases is None else np.asarray(cases)
    codes = dataset.codes[cases] if codes is None else codes
    total = np.zeros(len(cases))
    count = np.zeros(len(cases))
    for b, tree in enumerate(forest.trees):
        oob = forest.inbag[b, cases] == 0
        if not oob.any():
            continue
        terminals = route(b, tree, codes[oob])
        total[oob] += forest.node_mortality[b][terminals]
        count[oob] += 1
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(count > 0, total / np.maximum(count, 1), np.nan)


# ---------------------------------------------------------------------------
# Error
# ---------------------------------------------------------------------------


def concordance_index(times, statuses, risk) -> float:
    """Harrell's C: permissible pairs have T_i < T_j with an event at T_i.

    A pair is concordant when risk_i > risk_j; risk ties count one half.
    """
    t = np.asarray(times, dtype=float)
    s = np.asarray(statuses)
    r = np.asarray(risk, dtype=float)
    concordant = 0.0
    permissible = 0
    for i in np.flatnonzero(s == 1):
        later = t > t[i]
        n_later = int(later.sum())
        if not n_later:
            continue
        permissible += n_later
        concordant += float(np.sum(r[later] < r[i])) + 0.5 * float(np.sum(r[later] == r[i]))
    if permissible == 0:
        raise ForestError("no permissible pairs for concordance")
    return concordant / permissible


def prediction_error(times, statuses, mortality) -> float:
    """1 - Harrell's C of mortality, ignoring cases with NaN mortality."""
    m = np.asarray(mortality, dtype=float)
    keep = ~np.isnan(m)
    return 1.0 - concordance_index(np.asarray(times)[keep], np.asarray(statuses)[keep], m[keep])


def oob_error(forest: Forest, dataset: Dataset) -> float:
    """Out-of-bag prediction error, 1 - C on OOB ensemble mortality."""
    mortality = oob_mortality(forest, dataset)
    missing = int(np.isnan(mortality).sum())
    if missing:
        _LOGGER.warning("%d cases are in-bag for every tree and are left out of the OOB error", missing)
    return prediction_error(dataset.time, dataset.status, mortality)


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def forest_to_json(forest: Forest) -> str:
    payload = {
        "format": MODEL_FORMAT_VERSION,
        "params": forest.params.to_dict(),
        "schema": forest.schema.to_dict(),
        "inbag": forest.inbag.tolist(),
        "event_times": forest.event_times.tolist(),
        "trees": [tree.to_dict() for tree in forest.trees],
    }
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def forest_from_json(text: str) -> Forest:
    try:
        payload = json.loads(text)
        if payload.get("format") != MODEL_FORMAT_VERSION:
            raise ForestError(f"unsupported model format {payload.get('format')!r}")
        return Forest(
            trees=[SurvivalTree.from_dict(t) for t in payload["trees"]],
            inbag=np.asarray(payload["inbag"], dtype=np.int64),
            params=ForestParams.from_dict(payload["params"]),
            schema=FactorSchema.from_dict(payload["schema"]),
            event_times=np.asarray(payload["event_times"], dtype=float),
        )
    except (KeyError, TypeError, ValueError) as err:
        raise ForestError(f"malformed model file: {err}") from err


def save_forest(forest: Forest, path: str | Path) -> None:
    Path(path).write_text(forest_to_json(forest), encoding="utf-8")


def load_forest(path: str | Path) -> Forest:
    return forest_from_json(Path(path).read_text(encoding="utf-8"))
