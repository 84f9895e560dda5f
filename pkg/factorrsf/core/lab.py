"""Synthetic survival truths and empirical consistency checks.

Hazards are piecewise constant, so true survival curves and every integral
against them are available in closed form.
"""

from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import asdict, dataclass, replace
import itertools
import logging
import math

from joblib import Parallel, delayed
import numpy as np
import pandas as pd

from . import DataError, ForestError
from .data import Dataset, FactorSchema, FactorVariable, dataset_from_frame
from .estimators import RiskTable, StepFunction
from .factorsplit import ComplementaryPair, Daughter, assign_daughter
from .forest import ForestParams, fit, predict_ensemble
from .tree import Node, SurvivalTree, predict_tree

_LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class PiecewiseHazard:
    """Hazard equal to ``rates[k]`` on [breaks[k], breaks[k+1]); the last rate runs forever."""

    breaks: tuple[float, ...]
    rates: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.breaks) != len(self.rates) or not self.breaks:
            raise ForestError("hazard needs one rate per break point")
        if self.breaks[0] != 0 or any(b >= a for a, b in zip(self.breaks[1:], self.breaks)):
            raise ForestError("hazard break points must start at 0 and increase")
        if any(r < 0 for r in self.rates):
            raise ForestError("hazard rates must be non-negative")

    @classmethod
    def constant(cls, rate: float) -> PiecewiseHazard:
        return cls((0.0,), (float(rate),))

    def _widths(self) -> np.ndarray:
        return np.diff(np.append(self.breaks, np.inf))

    def rate_at(self, t: float) -> float:
        return self.rates[int(np.searchsorted(self.breaks, t, side="right")) - 1]

    def cumulative(self, t):
        """Integrated hazard H(t)."""
        t = np.asarray(t, dtype=float)
        starts = np.asarray(self.breaks)
        exposure = np.clip(t[..., None] - starts, 0.0, self._widths())
        return np.sum(exposure * np.asarray(self.rates), axis=-1)

    def survival(self, t):
        return np.exp(-self.cumulative(t))

    def inverse_cumulative(self, e):
        """Smallest t with H(t) = e; infinite when the hazard never accumulates e."""
        e = np.asarray(e, dtype=float)
        levels = self.cumulative(np.asarray(self.breaks))
        k = np.searchsorted(levels, e, side="right") - 1
        rates = np.asarray(self.rates)[k]
        starts = np.asarray(self.breaks)[k]
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(rates > 0, starts + (e - levels[k]) / np.where(rates > 0, rates, 1.0), np.inf)


@dataclass(frozen=True)
class Censoring:
    """Censoring independent of (X, T0): none, exponential(rate) or uniform(low, high)."""

    kind: str = "none"
    rate: float = 0.0
    low: float = 0.0
    high: float = 0.0

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "none":
            return np.full(n, np.inf)
        if self.kind == "exponential":
            return rng.exponential(1.0 / self.rate, size=n)
        if self.kind == "uniform":
            return rng.uniform(self.low, self.high, size=n)
        raise ForestError(f"unknown censoring kind {self.kind!r}")


@dataclass(frozen=True)
class SyntheticTruth:
    """Finite feature space with atom probabilities and a hazard per atom."""

    atoms: tuple[tuple[int, ...], ...]
    probabilities: tuple[float, ...]
    hazards: tuple[PiecewiseHazard, ...]
    censoring: Censoring = Censoring()
    horizon: float = math.inf

    def __post_init__(self) -> None:
        if not self.atoms or len({len(a) for a in self.atoms}) != 1:
            raise ForestError("atoms must be non-empty feature vectors of equal length")
        if len(set(self.atoms)) != len(self.atoms):
            raise ForestError("atoms must be distinct")
        if not len(self.atoms) == len(self.probabilities) == len(self.hazards):
            raise ForestError("need one probability and one hazard per atom")
        if any(p <= 0 for p in self.probabilities) or not math.isclose(sum(self.probabilities), 1.0, abs_tol=1e-9):
            raise ForestError("atom probabilities must be positive and sum to 1")
        if any(c < 2 for c in self.label_counts):
            raise ForestError("every variable needs at least two labels")

    @property
    def n_variables(self) -> int:
        return len(self.atoms[0])

    @property
    def label_counts(self) -> list[int]:
        return [max(a[j] for a in self.atoms) + 1 for j in range(len(self.atoms[0]))]

    def schema(self) -> FactorSchema:
        return FactorSchema(
            tuple(
                FactorVariable(f"x{j + 1}", tuple(str(k) for k in range(count)))
                for j, count in enumerate(self.label_counts)
            )
        )

    def survival(self, t, atom: int):
        return self.hazards[atom].survival(t)

    def mean_survival(self, t):
        """mu-weighted true survival, sum_x mu(x) S(t | x)."""
        return sum(p * h.survival(t) for p, h in zip(self.probabilities, self.hazards))

    def to_dict(self) -> dict:
        return asdict(self)


def grid_truth(
    label_counts: Sequence[int] = (2, 2, 2),
    rates: Sequence[float] | None = None,
    censoring: Censoring = Censoring("exponential", rate=0.2),
) -> SyntheticTruth:
    """Every label combination as an atom, equally likely, constant hazards."""
    atoms = tuple(itertools.product(*(range(c) for c in label_counts)))
    if rates is None:
        rates = np.linspace(0.25, 2.0, len(atoms)).tolist()
    return SyntheticTruth(
        atoms=atoms,
        probabilities=tuple([1.0 / len(atoms)] * len(atoms)),
        hazards=tuple(PiecewiseHazard.constant(r) for r in rates),
        censoring=censoring,
    )


def generate(truth: SyntheticTruth, n: int, rng: np.random.Generator) -> Dataset:
    """Draw X ~ mu, T0 by inversion of S(. | X), independent C; emit (min(T0, C), I(T0 <= C), X)."""
    if n < 1:
        raise DataError(f"sample size must be positive, got {n}")
    atom = rng.choice(len(truth.atoms), size=n, p=np.asarray(truth.probabilities))
    exposure = rng.exponential(1.0, size=n)
    t0 = np.empty(n)
    for k, hazard in enumerate(truth.hazards):
        members = atom == k
        t0[members] = hazard.inverse_cumulative(exposure[members])
    c = truth.censoring.draw(rng, n)
    time = np.minimum(t0, c)
    if not np.all(np.isfinite(time)):
        raise DataError("some survival times are infinite and never censored")
    status = (t0 <= c).astype(np.int8)
    return Dataset(truth.schema(), time, status, np.asarray(truth.atoms)[atom])


def sup_error(
    predictions: Sequence[Callable],
    truth: SyntheticTruth,
    t_max: float,
    grid_size: int = 1001,
) -> float:
    """sup over [0, t_max] of |sum_x mu(x) S_hat(s|x) - sum_x mu(x) S(s|x)|.

    ``predictions`` are aligned with ``truth.atoms``. Step-function jump
    times and their left limits are evaluated on top of the grid, so the
    supremum is exact for step functions against a monotone truth.
    """
    if t_max >= truth.horizon:
        raise ForestError(f"t_max {t_max} must lie below the horizon {truth.horizon}")
    jumps = np.concatenate([np.asarray(getattr(f, "times", ())) for f in predictions] or [np.empty(0)])
    jumps = np.unique(jumps[(jumps > 0) & (jumps <= t_max)])
    points = np.unique(np.concatenate([np.linspace(0.0, t_max, grid_size), jumps]))
    weights = truth.probabilities

    model = sum(p * np.asarray(f(points)) for p, f in zip(weights, predictions))
    error = float(np.max(np.abs(model - truth.mean_survival(points))))
    if jumps.size:
        left = sum(p * np.asarray(getattr(f, "left_limit", f)(jumps)) for p, f in zip(weights, predictions))
        error = max(error, float(np.max(np.abs(left - truth.mean_survival(jumps)))))
    return error


def isolates_atoms(tree: SurvivalTree, truth: SyntheticTruth) -> bool:
    """True when every atom of the feature space reaches its own terminal node."""
    terminals = tree.apply(np.asarray(truth.atoms))
    return len(set(terminals.tolist())) == len(truth.atoms)


def _convergence_cell(truth: SyntheticTruth, n: int, seed: int, params: ForestParams, t_max: float) -> dict:
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(n,)))
    data = generate(truth, n, rng)
    forest = fit(data, replace(params, seed=seed))
    tree = forest.trees[0]
    tree_curves = [predict_tree(tree, atom)[0] for atom in truth.atoms]
    forest_curves = [predict_ensemble(forest, atom)[0] for atom in truth.atoms]
    row = {
        "n": n,
        "seed": seed,
        "tree_error": sup_error(tree_curves, truth, t_max),
        "forest_error": sup_error(forest_curves, truth, t_max),
        "tree_isolates": isolates_atoms(tree, truth),
    }
    _LOGGER.info("Convergence cell n=%d seed=%d: tree %.4f forest %.4f", n, seed, row["tree_error"], row["forest_error"])
    return row


def convergence_experiment(
    truth: SyntheticTruth,
    n_grid: Sequence[int],
    params: ForestParams,
    seeds: Sequence[int],
    t_max: float,
    n_jobs: int = 1,
) -> pd.DataFrame:
    """Sup-norm error of one bootstrapped tree and of the forest, per (n, seed)."""
    if list(n_grid) != sorted(set(n_grid)):
        raise ForestError("n_grid must be strictly increasing")
    rows = Parallel(n_jobs=n_jobs)(
        delayed(_convergence_cell)(truth, n, seed, params, t_max) for n in n_grid for seed in seeds
    )
    return pd.DataFrame(rows, columns=["n", "seed", "tree_error", "forest_error", "tree_isolates"])


# ---------------------------------------------------------------------------
# Weighted ensembles of isolating trees
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class WeightedEnsemble:
    """sum_b W_b S_b(t | x) over hand-built trees."""

    trees: list[SurvivalTree]
    weights: np.ndarray

    def predict(self, x) -> StepFunction:
        return StepFunction.average([predict_tree(tree, x)[0] for tree in self.trees], self.weights)


@dataclass(frozen=True, eq=False)
class ApproximationResult:
    ensemble: WeightedEnsemble
    error: float
    n_steps: int
    history: tuple[tuple[int, float], ...]


def _point_mass_terminal(event_time: float) -> Node:
    risk = RiskTable(np.array([event_time]), np.array([1.0]), np.array([1.0]))
    return Node.terminal(risk, np.empty(0, dtype=np.int64))


def isolating_tree(label_counts: Sequence[int], x: Sequence[int], event_time: float) -> SurvivalTree:
    """Tree of d splits that walks ``x`` into its own node.

    Each level splits one variable into {x_j} versus the rest; the node
    holding x carries a single event at ``event_time`` and every other
    terminal node a single event at time 0, giving d + 1 terminal nodes.
    x takes the left daughter at every level where x_j != 0. Canonical pairs
    keep label 0 on the right, so where x_j == 0 the path is the mirror
    image and x continues down the right daughter instead.
    """
    nodes: list[Node] = []

    def add(node: Node) -> int:
        nodes.append(node)
        return len(nodes) - 1

    def build(level: int) -> int:
        if level == len(label_counts):
            return add(_point_mass_terminal(event_time))
        pair = ComplementaryPair.from_value(1 << x[level], label_counts[level])
        node = Node.internal(level, pair, 0.0)
        node_id = add(node)
        if assign_daughter(pair, x[level]) is Daughter.LEFT:
            node.left = build(level + 1)
            node.right = add(_point_mass_terminal(0.0))
        else:
            node.left = add(_point_mass_terminal(0.0))
            node.right = build(level + 1)
        return node_id

    build(0)
    return SurvivalTree(nodes, tuple(label_counts))


def _step_ensemble(truth: SyntheticTruth, atom: int, s_max: float, steps: int) -> WeightedEnsemble:
    hazard = truth.hazards[atom]
    x = truth.atoms[atom]
    drop = 1.0 - float(hazard.survival(s_max))
    tail = isolating_tree(truth.label_counts, x, s_max)
    if drop <= 0:
        return WeightedEnsemble([tail], np.array([1.0]))
    # jumps where S falls by b/(B+1) of its total drop; the mixture sits at
    # the midpoint of S's range between consecutive jumps
    b = np.arange(1, steps + 1)
    jump_times = hazard.inverse_cumulative(-np.log1p(-b * drop / (steps + 1)))
    weights = np.full(steps, drop / (steps + 1))
    weights[0] *= 1.5
    tail_weight = 1.0 - (steps + 0.5) * drop / (steps + 1)
    trees = [isolating_tree(truth.label_counts, x, float(t)) for t in jump_times]
    return WeightedEnsemble([*trees, tail], np.append(weights, tail_weight))


def integrated_squared_error(ensemble: WeightedEnsemble, truth: SyntheticTruth, atom: int, s_max: float) -> float:
    """Exact integral over [0, s_max] of (S_e(t|x) - S(t|x))^2."""
    hazard = truth.hazards[atom]
    approx = ensemble.predict(truth.atoms[atom])
    inner = np.concatenate([approx.times, hazard.breaks])
    cuts = np.unique(np.concatenate([[0.0, s_max], inner[(inner > 0) & (inner < s_max)]]))
    total = 0.0
    for a, b in zip(cuts[:-1], cuts[1:]):
        width = b - a
        c = float(approx(a))
        rate = hazard.rate_at(a)
        s_a = float(hazard.survival(a))
        if rate == 0:
            int_s, int_s2 = s_a * width, s_a**2 * width
        else:
            int_s = -s_a * math.expm1(-rate * width) / rate
            int_s2 = -(s_a**2) * math.expm1(-2 * rate * width) / (2 * rate)
        total += c * c * width - 2 * c * int_s + int_s2
    return max(total, 0.0)


def theorem3_approximation(
    truth: SyntheticTruth,
    atom: int,
    s_max: float,
    epsilon: float,
    max_doublings: int = 24,
) -> ApproximationResult:
    """Weighted ensemble of (d + 1)-terminal-node trees within ``epsilon`` in L2.

    The number of jump trees B doubles from 1 until the exactly integrated
    squared error on [0, s_max] is at most ``epsilon``. Jumps are spaced
    evenly in survival and the mixture sits midway between consecutive
    levels, so the squared error falls about fourfold per doubling (the L2
    norm itself roughly halves).
    """
    if epsilon <= 0:
        raise ForestError(f"epsilon must be positive, got {epsilon}")
    if s_max >= truth.horizon:
        raise ForestError(f"s_max {s_max} must lie below the horizon {truth.horizon}")
    history: list[tuple[int, float]] = []
    steps = 1
    for _ in range(max_doublings + 1):
        ensemble = _step_ensemble(truth, atom, s_max, steps)
        error = integrated_squared_error(ensemble, truth, atom, s_max)
        history.append((steps, error))
        if error <= epsilon or len(ensemble.trees) == 1:
            return ApproximationResult(ensemble, error, steps, tuple(history))
        steps *= 2
    raise ForestError(f"error {history[-1][1]:.3g} still above {epsilon} after {max_doublings} doublings")


# ---------------------------------------------------------------------------
# Stand-in data
# ---------------------------------------------------------------------------

PBC_DISCRETE = {
    "treatment": (1, 2),
    "sex": (0, 1),
    "ascites": (0, 1),
    "hepato": (0, 1),
    "spiders": (0, 1),
    "edema": (0.0, 0.5, 1.0),
    "stage": (1, 2, 3, 4),
}
PBC_CONTINUOUS = ("age", "bili", "chol", "albumin", "copper", "alk", "sgot", "trig", "platelet", "protime")


def simulate_pbc_like(n: int = 312, rng: np.random.Generator | None = None) -> Dataset:
    """312 x 17 stand-in with the PBC column mix: 7 discrete, 10 continuous.

    Bilirubin, albumin, age, edema and stage drive the hazard; the remaining
    columns are noise.
    """
    rng = rng or np.random.default_rng(0)
    frame = pd.DataFrame({name: rng.choice(levels, size=n) for name, levels in PBC_DISCRETE.items()})
    continuous = rng.standard_normal((n, len(PBC_CONTINUOUS)))
    for k, name in enumerate(PBC_CONTINUOUS):
        frame[name] = np.round(continuous[:, k], 4)
    frame["bili"] = np.round(np.exp(0.5 + continuous[:, 1]), 2)
    frame["age"] = np.round(50 + 10 * continuous[:, 0], 1)
    linear = (
        0.9 * np.log(frame["bili"])
        - 0.7 * frame["albumin"]
        + 0.03 * (frame["age"] - 50)
        + 0.8 * frame["edema"]
        + 0.3 * (frame["stage"] - 2.5)
    )
    t0 = rng.exponential(1.0, size=n) / (0.15 * np.exp(linear.to_numpy()))
    censor = rng.uniform(2.0, 12.0, size=n)
    frame.insert(0, "status", (t0 <= censor).astype(int))
    frame.insert(0, "days", np.round(np.minimum(t0, censor) * 365.25, 1))
    return dataset_from_frame(frame, "days", "status")
