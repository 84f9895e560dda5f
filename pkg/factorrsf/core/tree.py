"""Binary survival trees split on complementary pairs of factor labels.

Nodes are stored in preorder (root, left subtree, right subtree), so node
ids are stable across runs and across serialization.
"""

from __future__ import annotations

from collections.abc import Iterator, Sequence
from dataclasses import dataclass, field
import logging

import numpy as np

from . import (
    DEFAULT_NODESIZE,
    DEFAULT_NSPLIT,
    MAX_ENUMERATED_LABELS,
    ConfigError,
    DataError,
    InsufficientEvents,
    SplitError,
)
from .data import Dataset
from .estimators import RiskTable, StepFunction, build_risk_table, kaplan_meier, logrank_scores, nelson_aalen
from .factorsplit import (
    ComplementaryPair,
    decode_split,
    encode_split,
    enumerate_pair_values,
    num_complementary_pairs,
    sample_pair,
    value_masks,
)

_LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class TreeParams:
    """mtry candidate variables, nsplit random pairs (0 = enumerate), nodesize d0."""

    mtry: int = 1
    nsplit: int = DEFAULT_NSPLIT
    nodesize: int = DEFAULT_NODESIZE
    seed: int | None = None

    def __post_init__(self) -> None:
        if self.mtry < 1:
            raise ConfigError(f"mtry must be at least 1, got {self.mtry}")
        if self.nsplit < 0:
            raise ConfigError(f"nsplit must be non-negative, got {self.nsplit}")
        if self.nodesize < 1:
            raise ConfigError(f"nodesize must be at least 1, got {self.nodesize}")


@dataclass(slots=True)
class Node:
    """Internal node (variable + pair) or terminal node (risk table + estimators)."""

    variable: int = -1
    pair: ComplementaryPair | None = None
    left: int = -1
    right: int = -1
    statistic: float = 0.0
    risk: RiskTable | None = None
    survival: StepFunction | None = None
    chf: StepFunction | None = None
    cases: np.ndarray | None = None
    mask: np.ndarray | None = field(default=None, repr=False)

    @property
    def is_terminal(self) -> bool:
        return self.pair is None

    @classmethod
    def terminal(cls, risk: RiskTable, cases: np.ndarray) -> Node:
        return cls(risk=risk, survival=kaplan_meier(risk), chf=nelson_aalen(risk), cases=cases)

    @classmethod
    def internal(cls, variable: int, pair: ComplementaryPair, statistic: float) -> Node:
        return cls(variable=variable, pair=pair, statistic=statistic, mask=pair.left_mask())


@dataclass
class SurvivalTree:
    """Grown tree plus the label counts its splits were built against."""

    nodes: list[Node]
    label_counts: tuple[int, ...]

    def terminals(self) -> list[int]:
        return [k for k, node in enumerate(self.nodes) if node.is_terminal]

    @property
    def n_terminal(self) -> int:
        return len(self.terminals())

    def depth(self) -> int:
        deepest = 0
        stack = [(0, 0)]
        while stack:
            node_id, level = stack.pop()
            node = self.nodes[node_id]
            if node.is_terminal:
                deepest = max(deepest, level)
            else:
                stack.extend([(node.left, level + 1), (node.right, level + 1)])
        return deepest

    def _check_codes(self, codes: np.ndarray) -> None:
        if codes.ndim != 2 or codes.shape[1] != len(self.label_counts):
            raise SplitError(f"expected {len(self.label_counts)} label indices per case")
        if codes.size and (codes.min(axis=0) < 0).any():
            raise SplitError("negative label index (variable not discretized?)")
        over = codes.max(axis=0, initial=-1) >= np.asarray(self.label_counts)
        if over.any():
            j = int(np.flatnonzero(over)[0])
            raise SplitError(f"label index out of range for variable {j} with {self.label_counts[j]} labels")

    def apply(
        self,
        codes: np.ndarray,
        noise_variable: int | None = None,
        rng: np.random.Generator | None = None,
    ) -> np.ndarray:
        """Terminal node id reached by each row of ``codes``.

        With ``noise_variable`` set, every node that splits on it sends each
        case to a uniformly random daughter drawn from ``rng``.
        """
        codes = np.asarray(codes)
        self._check_codes(codes)
        out = np.empty(len(codes), dtype=np.int64)
        stack = [(0, np.arange(len(codes)))]
        while stack:
            node_id, rows = stack.pop()
            node = self.nodes[node_id]
            if node.is_terminal:
                out[rows] = node_id
                continue
            if rows.size == 0:
                continue
            if node.variable == noise_variable:
                go_left = rng.random(rows.size) < 0.5
            else:
                go_left = node.mask[codes[rows, node.variable]]
            stack.append((node.right, rows[~go_left]))
            stack.append((node.left, rows[go_left]))
        return out

    def to_dict(self) -> dict:
        nodes = []
        for node in self.nodes:
            if node.is_terminal:
                nodes.append({"risk": node.risk.to_dict(), "cases": node.cases.tolist()})
            else:
                nodes.append(
                    {
                        "split": encode_split(node.variable, node.pair).hex(),
                        "left": node.left,
                        "right": node.right,
                        "statistic": node.statistic,
                    }
                )
        return {"label_counts": list(self.label_counts), "nodes": nodes}

    @classmethod
    def from_dict(cls, raw: dict) -> SurvivalTree:
        nodes = []
        for item in raw["nodes"]:
            if "split" in item:
                variable, pair = decode_split(bytes.fromhex(item["split"]))
                node = Node.internal(variable, pair, float(item["statistic"]))
                node.left, node.right = int(item["left"]), int(item["right"])
            else:
                node = Node.terminal(RiskTable.from_dict(item["risk"]), np.asarray(item["cases"], dtype=np.int64))
            nodes.append(node)
        return cls(nodes, tuple(int(c) for c in raw["label_counts"]))


def predict_tree(tree: SurvivalTree, x: Sequence[int]) -> tuple[StepFunction, StepFunction]:
    """(Kaplan-Meier, Nelson-Aalen) of the terminal node that ``x`` falls into."""
    node = tree.nodes[int(tree.apply(np.asarray(x, dtype=np.int64)[None, :])[0])]
    return node.survival, node.chf


@dataclass(slots=True)
class _Candidate:
    variable: int
    value: int


class _TreeGrower:
    """Recursive partitioning for one tree; owns the tree's rng stream."""

    def __init__(self, dataset: Dataset, params: TreeParams, weights: np.ndarray, rng: np.random.Generator):
        self.time = dataset.time
        self.status = dataset.status
        self.codes = dataset.codes
        self.label_counts = dataset.schema.label_counts
        self.splittable = dataset.schema.splittable()
        self.params = params
        self.weights = weights
        self.rng = rng

    def grow(self, root_rows: np.ndarray) -> SurvivalTree:
        nodes: list[Node] = []
        stack: list[tuple[np.ndarray, int, bool]] = [(root_rows, -1, True)]
        while stack:
            rows, parent, is_left = stack.pop()
            node_id = len(nodes)
            if parent >= 0:
                if is_left:
                    nodes[parent].left = node_id
                else:
                    nodes[parent].right = node_id
            split = self._best_split(rows)
            if split is None:
                w = self.weights[rows]
                nodes.append(Node.terminal(build_risk_table(self.time[rows], self.status[rows], w), rows))
                continue
            variable, pair, statistic = split
            node = Node.internal(variable, pair, statistic)
            nodes.append(node)
            go_left = node.mask[self.codes[rows, variable]]
            stack.append((rows[~go_left], node_id, False))
            stack.append((rows[go_left], node_id, True))
        return SurvivalTree(nodes, tuple(self.label_counts))

    def _candidate_values(self, label_count: int, node_size: int) -> Iterator[tuple[np.ndarray, list[int]]]:
        """Chunks of (left masks, bit patterns) to score for one variable."""
        nsplit = self.params.nsplit
        enumerable = label_count <= MAX_ENUMERATED_LABELS
        if nsplit == 0 and enumerable:
            budget = None
        else:
            budget = node_size if nsplit == 0 else min(nsplit, node_size)
            if enumerable and budget >= num_complementary_pairs(label_count):
                budget = None
        if budget is None:
            for values in enumerate_pair_values(label_count):
                yield value_masks(values, label_count), values.tolist()
            return
        seen: set[int] = set()
        pairs: list[ComplementaryPair] = []
        while len(pairs) < budget:
            pair = sample_pair(label_count, self.rng)
            if pair.value not in seen:
                seen.add(pair.value)
                pairs.append(pair)
        yield np.stack([p.left_mask() for p in pairs]), [p.value for p in pairs]

    def _best_split(self, rows: np.ndarray) -> tuple[int, ComplementaryPair, float] | None:
        nodesize = self.params.nodesize
        w = self.weights[rows]
        t = self.time[rows]
        event = self.status[rows] == 1
        total_events = float(w[event].sum())
        if total_events < 2 * nodesize:
            return None
        available = [j for j in self.splittable if np.unique(self.codes[rows, j]).size > 1]
        if not available:
            return None
        candidates = self.rng.choice(available, size=min(self.params.mtry, len(available)), replace=False)

        event_times = np.unique(t[event])
        n_times = event_times.size
        slot = np.searchsorted(event_times, t, side="right")
        event_slot = np.searchsorted(event_times, t[event])
        node_size = int(w.sum())

        best_score = -np.inf
        best: list[_Candidate] = []
        for j in candidates:
            j = int(j)
            label_count = self.label_counts[j]
            c = self.codes[rows, j]
            removed = np.bincount(c * (n_times + 1) + slot, weights=w, minlength=label_count * (n_times + 1))
            removed = removed.reshape(label_count, n_times + 1)
            at_risk = np.cumsum(removed[:, ::-1], axis=1)[:, ::-1][:, 1:]
            events = np.bincount(
                c[event] * n_times + event_slot, weights=w[event], minlength=label_count * n_times
            ).reshape(label_count, n_times)
            d, y = events.sum(axis=0), at_risk.sum(axis=0)
            label_events = events.sum(axis=1)

            for masks, values in self._candidate_values(label_count, node_size):
                m = masks.astype(float)
                left_events = m @ label_events
                admissible = (left_events >= nodesize) & (total_events - left_events >= nodesize)
                if not admissible.any():
                    continue
                scores = logrank_scores(m @ events, m @ at_risk, d, y)
                top = scores[admissible].max()
                if top < best_score:
                    continue
                if top > best_score:
                    best_score, best = top, []
                for k in np.flatnonzero(admissible & (scores == top)):
                    best.append(_Candidate(j, int(values[k])))

        if not best:
            return None
        # random tie breaking among equally good splits
        chosen = best[int(self.rng.integers(len(best)))] if len(best) > 1 else best[0]
        pair = ComplementaryPair.from_value(chosen.value, self.label_counts[chosen.variable])
        return chosen.variable, pair, float(best_score)


def grow_tree(
    dataset: Dataset,
    params: TreeParams,
    counts: np.ndarray | None = None,
    rng: np.random.Generator | None = None,
) -> SurvivalTree:
    """Grow one tree on ``dataset`` with per-case multiplicities ``counts``.

    Nodes split on the admissible (variable, pair) with the largest log-rank
    statistic until no admissible split remains; every terminal node keeps
    at least ``params.nodesize`` events.
    """
    if dataset.pending_variables:
        raise DataError(f"discretize {dataset.pending_variables} before growing trees")
    if rng is None:
        rng = np.random.default_rng(params.seed)
    weights = np.ones(dataset.n_cases) if counts is None else np.asarray(counts, dtype=float)
    rows = np.flatnonzero(weights > 0)
    events = float(weights[rows] @ dataset.status[rows])
    if events < params.nodesize:
        raise InsufficientEvents(f"sample has {events:g} events, fewer than nodesize {params.nodesize}")
    tree = _TreeGrower(dataset, params, weights, rng).grow(rows)
    _LOGGER.debug("Grew tree: %d nodes, %d terminal, depth %d", len(tree.nodes), tree.n_terminal, tree.depth())
    return tree
