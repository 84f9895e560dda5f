"""
End-to-end tests for the command-line subcommands, run in-process through
``main`` on small forests.
"""

import json
import os
import sys

import numpy as np
import pandas as pd
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), ".."))

from factorrsf.cli import build_parser, main
from factorrsf.core.data import load_csv
from factorrsf.core.forest import load_forest, predict_ensemble

SMALL = ["--ntree", "3", "--granularity", "3", "--nsplit", "5", "--seed", "1"]


def _run(command, csv, out, *extra):
    return main([command, "--data", str(csv), "--time-col", "days", "--status-col", "dead", "--out-dir", str(out), *SMALL, *extra])


class TestParser:
    def test_lists_parse(self):
        args = build_parser().parse_args(["fit", "--nsplit", "5,10", "--granularity", "2,30"])
        assert args.nsplit == [5, 10]
        assert args.granularity == [2, 30]

    def test_bad_list(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args(["fit", "--nsplit", "5,x"])

    def test_command_required(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args([])


class TestFit:
    def test_writes_model_error_and_manifest(self, tmp_path, pbc_like_csv):
        assert _run("fit", pbc_like_csv, tmp_path) == 0
        assert load_forest(tmp_path / "forest.json").n_trees == 3
        error = pd.read_csv(tmp_path / "oob_error.csv")
        assert list(error.columns) == ["granularity", "nsplit", "oob_error"]
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["command"] == "fit"
        assert manifest["seed"] == 1
        assert manifest["config"]["ntree"] == 3
        assert manifest["outputs"] == ["forest.json", "oob_error.csv"]
        assert not list(tmp_path.glob(".*.tmp"))

    def test_rerun_is_byte_identical(self, tmp_path, pbc_like_csv):
        assert _run("fit", pbc_like_csv, tmp_path / "a", "--ntree", "1") == 0
        assert _run("fit", pbc_like_csv, tmp_path / "b", "--ntree", "1", "--n-jobs", "2") == 0
        for name in ("forest.json", "oob_error.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_config_file_and_flag_precedence(self, tmp_path, pbc_like_csv):
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"ntree": 7, "nodesize": 2}))
        assert _run("fit", pbc_like_csv, tmp_path / "out", "--config", str(config)) == 0
        manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
        assert manifest["config"]["ntree"] == 3
        assert manifest["config"]["nodesize"] == 2


class TestPredict:
    def test_curves_match_library(self, tmp_path, pbc_like_csv):
        assert _run("fit", pbc_like_csv, tmp_path) == 0
        model = tmp_path / "forest.json"
        assert _run("predict", pbc_like_csv, tmp_path / "pred", "--model", str(model)) == 0
        table = pd.read_csv(tmp_path / "pred" / "predictions.csv")
        assert list(table.columns) == ["case", "time", "survival", "chf"]
        forest = load_forest(model)
        data = load_csv(pbc_like_csv, "days", "dead", schema=forest.schema)
        assert table["case"].nunique() == data.n_cases
        survival, chf = predict_ensemble(forest, data.codes[4])
        rows = table[table["case"] == 4]
        assert np.allclose(rows["survival"], survival(forest.event_times))
        assert np.allclose(rows["chf"], chf(forest.event_times))

    def test_outcome_columns_optional(self, tmp_path, pbc_like_csv):
        assert _run("fit", pbc_like_csv, tmp_path) == 0
        frame = pd.read_csv(pbc_like_csv).drop(columns=["days", "dead"])
        new_cases = tmp_path / "new.csv"
        frame.head(3).to_csv(new_cases, index=False)
        assert _run("predict", new_cases, tmp_path / "pred", "--model", str(tmp_path / "forest.json")) == 0
        assert pd.read_csv(tmp_path / "pred" / "predictions.csv")["case"].nunique() == 3

    def test_needs_model(self, tmp_path, pbc_like_csv):
        assert _run("predict", pbc_like_csv, tmp_path) == 1


class TestVimp:
    def test_interval_table(self, tmp_path, pbc_like_csv):
        assert _run("vimp", pbc_like_csv, tmp_path, "--boot-reps", "3") == 0
        table = pd.read_csv(tmp_path / "vimp.csv")
        assert list(table.columns) == ["variable", "mean", "lower", "upper", "level", "granularity", "nsplit"]
        assert table["variable"].tolist() == ["sex", "stage", "bili"]
        assert (table["lower"] <= table["upper"]).all()


class TestFigures:
    def test_figure1_single_cell(self, tmp_path, pbc_like_csv):
        assert _run("figure1", pbc_like_csv, tmp_path, "--boot-reps", "2") == 0
        errors = pd.read_csv(tmp_path / "figure1_error.csv")
        assert len(errors) == 1
        assert errors.loc[0, "granularity"] == 3
        assert len(pd.read_csv(tmp_path / "figure1_vimp.csv")) == 3

    def test_figure2_flags_noise(self, tmp_path, pbc_like_csv):
        code = _run(
            "figure2", pbc_like_csv, tmp_path, "--boot-reps", "2", "--noise-continuous", "2", "--noise-discrete", "2"
        )
        assert code == 0
        table = pd.read_csv(tmp_path / "figure2_vimp.csv")
        assert len(table) == 7
        noise = table.loc[table["noise"], "variable"].tolist()
        assert noise == ["c1", "c2", "d1", "d2"]
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert "threshold" in manifest["results"]["selection"]["3"]

    def test_figure2_full_noise_design_on_stand_in(self, tmp_path):
        code = main(
            ["figure2", "--out-dir", str(tmp_path), "--ntree", "2", "--nsplit", "5", "--granularity", "2,3", "--boot-reps", "2"]
        )
        assert code == 0
        table = pd.read_csv(tmp_path / "figure2_vimp.csv")
        assert table.groupby("granularity").size().to_dict() == {2: 67, 3: 67}
        assert table.groupby("granularity")["noise"].sum().to_dict() == {2: 50, 3: 50}

    def test_figure2_needs_noise(self, tmp_path, pbc_like_csv):
        code = _run("figure2", pbc_like_csv, tmp_path, "--noise-continuous", "0", "--noise-discrete", "0")
        assert code == 1


class TestLab:
    def test_convergence(self, tmp_path):
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"n_grid": [100], "n_seeds": 2, "ntree": 2}))
        assert main(["convergence", "--config", str(config), "--out-dir", str(tmp_path)]) == 0
        table = pd.read_csv(tmp_path / "convergence.csv")
        assert len(table) == 2
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert "100" in manifest["results"]["median_error"]

    def test_theorem3(self, tmp_path):
        assert main(["theorem3", "--out-dir", str(tmp_path)]) == 0
        table = pd.read_csv(tmp_path / "theorem3.csv")
        final = table.groupby("atom")["error"].min()
        assert (final <= 0.01).all()


class TestExitCodes:
    def test_data_error_exits_one(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("days,dead,g\n1,2,a\n")
        assert _run("fit", bad, tmp_path / "out") == 1
        assert not (tmp_path / "out" / "manifest.json").exists()

    def test_missing_file_exits_one(self, tmp_path):
        assert _run("fit", tmp_path / "absent.csv", tmp_path / "out") == 1

    def test_invalid_config_exits_one(self, tmp_path, pbc_like_csv):
        assert _run("fit", pbc_like_csv, tmp_path, "--level", "2") == 1

    def test_unexpected_error_exits_two(self, tmp_path, pbc_like_csv, monkeypatch):
        from factorrsf import cli

        def boom(config):
            raise RuntimeError("boom")

        monkeypatch.setitem(cli.COMMANDS, "fit", boom)
        assert _run("fit", pbc_like_csv, tmp_path) == 2
