"""Command-line front end: fit, predict, vimp and the experiment sweeps.

Every subcommand writes its outputs plus a ``manifest.json`` into
``--out-dir``; all files are replaced atomically.
"""

from __future__ import annotations

import argparse
from collections.abc import Callable, Sequence
import json
import logging
import os
from pathlib import Path
import sys
import tempfile

import numpy as np
import pandas as pd

from . import __version__
from .config import ExperimentConfig, load_config
from .core import ConfigError, DataError, ForestError
from .core.data import Dataset, dataset_from_frame, discretize_all, inject_noise, load_csv
from .core.forest import Forest, ForestParams, fit, forest_to_json, load_forest, oob_error
from .core.lab import (
    convergence_experiment,
    grid_truth,
    simulate_pbc_like,
    theorem3_approximation,
)
from .core.vimp import bootstrap_vimp, noise_threshold, selected_variables

_LOGGER = logging.getLogger(__name__)

MANIFEST = "manifest.json"


# ---------------------------------------------------------------------------
# Output helpers
# ---------------------------------------------------------------------------


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def _write_table(path: Path, table: pd.DataFrame) -> None:
    _atomic_write(path, table.to_csv(index=False, lineterminator="\n"))


class _Run:
    """Collects outputs of one subcommand and writes the manifest last."""

    def __init__(self, command: str, config: ExperimentConfig):
        self.command = command
        self.config = config
        self.out_dir = Path(config.out_dir)
        self.outputs: list[str] = []
        self.results: dict = {}

    def table(self, name: str, table: pd.DataFrame) -> None:
        _write_table(self.out_dir / name, table)
        self.outputs.append(name)
        _LOGGER.info("Wrote %s (%d rows)", self.out_dir / name, len(table))

    def text(self, name: str, text: str) -> None:
        _atomic_write(self.out_dir / name, text)
        self.outputs.append(name)
        _LOGGER.info("Wrote %s", self.out_dir / name)

    def finish(self) -> None:
        manifest = {
            "command": self.command,
            "version": __version__,
            "seed": self.config.seed,
            "config": self.config.to_dict(),
            "outputs": self.outputs,
            "results": self.results,
        }
        _atomic_write(self.out_dir / MANIFEST, json.dumps(manifest, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Shared steps
# ---------------------------------------------------------------------------


def _load_data(config: ExperimentConfig) -> Dataset:
    if config.data is None:
        _LOGGER.info("No --data given; using the simulated 312-case PBC-like stand-in")
        return simulate_pbc_like(312, np.random.default_rng(config.seed))
    return load_csv(config.data, config.time_col, config.status_col, max_factor_levels=config.max_factor_levels)


def _forest_params(config: ExperimentConfig, nsplit: int) -> ForestParams:
    return ForestParams(ntree=config.ntree, mtry=config.mtry, nsplit=nsplit, nodesize=config.nodesize, seed=config.seed)


def _fit_at(config: ExperimentConfig, data: Dataset, granularity: int, nsplit: int) -> tuple[Dataset, Forest]:
    discretized = discretize_all(data, granularity)
    return discretized, fit(discretized, _forest_params(config, nsplit), n_jobs=config.n_jobs)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_fit(config: ExperimentConfig) -> None:
    """Fit one forest; write the model and its OOB error."""
    run = _Run("fit", config)
    granularity, nsplit = config.granularity[-1], config.nsplit[-1]
    data, forest = _fit_at(config, _load_data(config), granularity, nsplit)
    error = oob_error(forest, data)
    run.text("forest.json", forest_to_json(forest))
    run.table("oob_error.csv", pd.DataFrame([{"granularity": granularity, "nsplit": nsplit, "oob_error": error}]))
    run.results["oob_error"] = error
    run.finish()


def _read_for_prediction(config: ExperimentConfig, forest: Forest) -> Dataset:
    if config.data is None:
        raise ConfigError("predict needs --data")
    path = Path(config.data)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError:
        raise DataError(f"{path}: file is empty") from None
    # new cases may come without outcome columns
    for column in (config.time_col, config.status_col):
        if column not in frame.columns:
            frame[column] = "0"
    return dataset_from_frame(frame, config.time_col, config.status_col, schema=forest.schema)


def cmd_predict(config: ExperimentConfig) -> None:
    """Write per-case ensemble survival and CHF at the learning event times."""
    if config.model is None:
        raise ConfigError("predict needs --model")
    run = _Run("predict", config)
    forest = load_forest(config.model)
    data = _read_for_prediction(config, forest)
    grid = forest.event_times
    frames = []
    for case, (survival, chf) in enumerate(forest.predict(data.codes)):
        frames.append(pd.DataFrame({"case": case, "time": grid, "survival": survival(grid), "chf": chf(grid)}))
    table = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=["case", "time", "survival", "chf"])
    run.table("predictions.csv", table)
    run.results["n_cases"] = data.n_cases
    run.finish()


def cmd_vimp(config: ExperimentConfig) -> None:
    """Fit one forest and write its bootstrap VIMP intervals."""
    run = _Run("vimp", config)
    granularity, nsplit = config.granularity[-1], config.nsplit[-1]
    data, forest = _fit_at(config, _load_data(config), granularity, nsplit)
    dist = bootstrap_vimp(
        forest, data, config.boot_reps, config.level, seed=config.seed, method=config.method, n_jobs=config.n_jobs
    )
    run.table("vimp.csv", dist.to_frame(granularity, nsplit).drop(columns="noise"))
    run.finish()


def cmd_figure1(config: ExperimentConfig) -> None:
    """OOB error over the (granularity, nsplit) grid plus VIMP at the largest nsplit."""
    run = _Run("figure1", config)
    data = _load_data(config)
    largest = max(config.nsplit)
    errors, vimps = [], []
    for granularity in config.granularity:
        for nsplit in config.nsplit:
            discretized, forest = _fit_at(config, data, granularity, nsplit)
            error = oob_error(forest, discretized)
            _LOGGER.info("granularity=%d nsplit=%d: OOB error %.4f", granularity, nsplit, error)
            errors.append({"granularity": granularity, "nsplit": nsplit, "oob_error": error})
            if nsplit == largest:
                dist = bootstrap_vimp(
                    forest,
                    discretized,
                    config.boot_reps,
                    config.level,
                    seed=config.seed,
                    method=config.method,
                    n_jobs=config.n_jobs,
                )
                vimps.append(dist.to_frame(granularity, nsplit).drop(columns="noise"))
    run.table("figure1_error.csv", pd.DataFrame(errors))
    run.table("figure1_vimp.csv", pd.concat(vimps, ignore_index=True))
    run.finish()


def cmd_figure2(config: ExperimentConfig) -> None:
    """VIMP intervals with injected noise variables, per granularity."""
    if config.noise_continuous + config.noise_discrete == 0:
        raise ConfigError("figure2 needs at least one noise variable")
    run = _Run("figure2", config)
    data = _load_data(config)
    nsplit = max(config.nsplit)
    frames = []
    selection = {}
    for granularity in config.granularity:
        # the same noise draws at every granularity, only the binning changes
        noisy = inject_noise(
            discretize_all(data, granularity),
            config.noise_continuous,
            config.noise_discrete,
            granularity,
            np.random.default_rng(config.seed),
        )
        forest = fit(noisy, _forest_params(config, nsplit), n_jobs=config.n_jobs)
        dist = bootstrap_vimp(
            forest, noisy, config.boot_reps, config.level, seed=config.seed, method=config.method, n_jobs=config.n_jobs
        )
        noise = [v.name for v in noisy.schema.variables if v.noise]
        threshold = noise_threshold(dist, noise, config.alpha)
        selection[str(granularity)] = {"threshold": threshold, "selected": selected_variables(dist, threshold)}
        frames.append(dist.to_frame(granularity, nsplit, noise))
    run.table("figure2_vimp.csv", pd.concat(frames, ignore_index=True))
    run.results["selection"] = selection
    run.finish()


def cmd_convergence(config: ExperimentConfig) -> None:
    """Sup-norm error of tree and forest against a synthetic truth over n."""
    run = _Run("convergence", config)
    truth = grid_truth()
    table = convergence_experiment(
        truth,
        config.n_grid,
        _forest_params(config, config.nsplit[-1]),
        seeds=[config.seed + k for k in range(config.n_seeds)],
        t_max=config.t_max,
        n_jobs=config.n_jobs,
    )
    run.table("convergence.csv", table)
    summary = table.groupby("n")[["tree_error", "forest_error"]].median()
    run.results["median_error"] = {str(n): row.to_dict() for n, row in summary.iterrows()}
    run.results["truth"] = truth.to_dict()
    run.finish()


def cmd_theorem3(config: ExperimentConfig) -> None:
    """Doubling schedule of the weighted step-ensemble construction per atom."""
    run = _Run("theorem3", config)
    truth = grid_truth()
    rows = []
    for atom in range(len(truth.atoms)):
        result = theorem3_approximation(truth, atom, config.s_max, config.epsilon)
        rows.extend({"atom": atom, "trees": b + 1, "steps": b, "error": err} for b, err in result.history)
    run.table("theorem3.csv", pd.DataFrame(rows))
    run.finish()


COMMANDS: dict[str, Callable[[ExperimentConfig], None]] = {
    "fit": cmd_fit,
    "predict": cmd_predict,
    "vimp": cmd_vimp,
    "figure1": cmd_figure1,
    "figure2": cmd_figure2,
    "convergence": cmd_convergence,
    "theorem3": cmd_theorem3,
}


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def _int_list(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override it")
    common.add_argument("--data", help="CSV file with a header row")
    common.add_argument("--time-col", dest="time_col")
    common.add_argument("--status-col", dest="status_col")
    common.add_argument("--model", help="forest.json written by fit (predict only)")
    common.add_argument("--ntree", type=int)
    common.add_argument("--mtry", type=int)
    common.add_argument("--nsplit", type=_int_list, help="comma-separated; 0 enumerates every pair")
    common.add_argument("--nodesize", type=int, help="minimum events per terminal node (d0)")
    common.add_argument("--granularity", type=_int_list, help="comma-separated label counts")
    common.add_argument("--boot-reps", dest="boot_reps", type=int)
    common.add_argument("--level", type=float)
    common.add_argument("--alpha", type=float)
    common.add_argument("--method", choices=["random", "permute"])
    common.add_argument("--noise-continuous", dest="noise_continuous", type=int)
    common.add_argument("--noise-discrete", dest="noise_discrete", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--n-jobs", dest="n_jobs", type=int)
    common.add_argument("--out-dir", dest="out_dir")
    common.add_argument("--verbose", "-v", action="store_true")

    parser = argparse.ArgumentParser(prog="factorrsf", description="Random survival forests over factor features")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, func in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=(func.__doc__ or name).splitlines()[0])
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    overrides = {k: v for k, v in vars(args).items() if k not in ("command", "config", "verbose")}
    try:
        config = load_config(args.config, overrides)
        COMMANDS[args.command](config)
    except ForestError as err:
        _LOGGER.error("%s: %s", args.command, err)
        return 1
    except Exception:  # noqa: BLE001
        _LOGGER.exception("%s failed unexpectedly", args.command)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
