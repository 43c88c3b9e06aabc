"""Tests for the experiment harness and the CLI."""

import csv
import json
import tempfile
from pathlib import Path

import numpy as np
import pytest
from typer.testing import CliRunner

from core.basis_families import make_entry_basis, read_basis, write_basis
from core.cli import app
from core.config import ExperimentConfig, SolverConfig
from core.errors import (
    ConfigError,
    ExperimentIOError,
    InvalidConfidenceError,
    InvalidDimensionError,
)
from core.experiments import (
    PHASE_FIELDS,
    build_context,
    format_cell,
    metadata_path,
    planted_matrix,
    resolve_m,
    run_certificate_audit,
    run_edg_demo,
    run_phase_transition,
)
from core.rng import make_rng

runner = CliRunner()


@pytest.fixture
def tmpdir():
    with tempfile.TemporaryDirectory() as tmpdir:
        yield Path(tmpdir)


def read_rows(path: Path) -> list[dict[str, str]]:
    with path.open(encoding="utf-8", newline="") as f:
        return list(csv.DictReader(f))


class TestHelpers:
    """Cell formatting, sample counts and planted matrices."""

    def test_format_cell(self):
        """Booleans, floats and lists have a fixed rendering."""
        assert format_cell(True) == "true"
        assert format_cell(np.bool_(False)) == "false"
        assert format_cell(0.1) == "0.1"
        assert format_cell(np.int64(3)) == "3"
        assert format_cell([1.0, 0.5]) == "1.0;0.5"
        assert format_cell(None) == ""

    def test_resolve_m(self):
        """Sample counts per m_mode."""
        assert resolve_m("full", 1.0, (5, 5), 1) is None
        assert resolve_m("absolute", 12.0, (5, 5), 1) == 12
        assert resolve_m("dimT", 2.0, (5, 5), 1) == 18
        # ceil(log 10) = 3
        assert resolve_m("oversampling", 1.0, (10, 10), 2) == 10 * 2 * 9

    @pytest.mark.parametrize("family", ["entry", "edg", "hankel", "rank_one", "weighted"])
    def test_planted_matrix_in_span(self, family):
        """The planted truth has rank r and lies in span(W)."""
        ctx = build_context(ExperimentConfig(family=family, workers=1), 6)
        M = planted_matrix(ctx, 2, make_rng(1))
        assert np.linalg.matrix_rank(M, tol=1e-8 * np.linalg.norm(M)) == 2

    def test_planted_rank_out_of_range(self):
        """EDG truths have rank at most n - 1."""
        ctx = build_context(ExperimentConfig(family="edg", workers=1), 4)
        with pytest.raises(ConfigError):
            planted_matrix(ctx, 4, make_rng(0))


class TestPhaseTransition:
    """Success-rate sweeps."""

    def config(self, out: Path, **changes) -> ExperimentConfig:
        values = {
            "family": "entry",
            "n": (4,),
            "r": (1,),
            "m": (1.0,),
            "m_mode": "full",
            "trials": 2,
            "seed": 3,
            "workers": 1,
            "out": out,
            "solver": SolverConfig(max_iter=200),
        }
        values.update(changes)
        return ExperimentConfig(**values)

    def test_full_information_succeeds(self, tmpdir):
        """m_mode=full recovers every trial."""
        result = run_phase_transition(self.config(tmpdir / "phase.csv"))
        assert result.summaries[0]["success_rate"] == 1.0

        rows = read_rows(result.path)
        assert list(rows[0].keys()) == PHASE_FIELDS
        assert [row["row_type"] for row in rows] == ["trial", "trial", "summary"]
        assert rows[0]["success"] == "true"
        assert metadata_path(result.path).read_text().startswith("[n=4]\n")

    def test_output_is_deterministic(self, tmpdir):
        """Same seed gives byte-identical CSVs regardless of the worker count."""
        changes = {"m_mode": "absolute", "m": (8.0, 14.0), "trials": 3}
        a = run_phase_transition(self.config(tmpdir / "a.csv", **changes))
        b = run_phase_transition(self.config(tmpdir / "b.csv", workers=3, **changes))
        assert a.path.read_bytes() == b.path.read_bytes()

    def test_noisy_trials(self, tmpdir):
        """Noise selects the ball-constrained program with the realized radius."""
        result = run_phase_transition(self.config(tmpdir / "noisy.csv", noise=0.01))
        rows = [row for row in result.rows if row["row_type"] == "trial"]
        assert all(row["noise_level"] > 0 for row in rows)

    def test_unwritable_output(self, tmpdir):
        """The output path is checked before any trial runs."""
        cfg = self.config(tmpdir / "missing" / "phase.csv")
        with pytest.raises(ExperimentIOError):
            run_phase_transition(cfg)

    def test_max_draws(self, tmpdir):
        """Sample counts above max_draws are refused."""
        cfg = self.config(tmpdir / "big.csv", m_mode="absolute", m=(50.0,), max_draws=10)
        with pytest.raises(ConfigError):
            run_phase_transition(cfg)

    @pytest.mark.slow
    @pytest.mark.parametrize("family, n", [("entry", 30), ("edg", 20)])
    def test_transition_ends(self, tmpdir, family, n):
        """Rank 2: oversampling 6 recovers, 0.3 dim T does not."""
        common = {
            "family": family,
            "n": (n,),
            "r": (2,),
            "trials": 20,
            "seed": 21,
            "workers": 4,
            "solver": SolverConfig(),
        }
        high = run_phase_transition(
            self.config(tmpdir / "high.csv", m_mode="oversampling", m=(6.0,), **common)
        )
        low = run_phase_transition(self.config(tmpdir / "low.csv", m_mode="dimT", m=(0.3,), **common))
        assert high.summaries[0]["success_rate"] >= 0.9
        assert low.summaries[0]["success_rate"] <= 0.1


class TestEdgDemo:
    """Localization from squared distances."""

    def test_all_pairs(self, tmpdir):
        """Every pair measured: Gram matrix and points are recovered."""
        result = run_edg_demo(6, 2, seed=1, out=tmpdir / "edg.csv")
        row = result.rows[0]
        assert row["m"] == 15
        assert row["rel_err"] <= 1e-6
        assert row["point_rmsd"] <= 1e-5
        assert row["success"]
        assert read_rows(result.path)[0]["n"] == "6"

    def test_sampled_pairs(self):
        """Sampling with replacement reports m draws."""
        result = run_edg_demo(5, 1, m=30, seed=2, solver=SolverConfig(max_iter=300))
        assert result.rows[0]["m"] == 30
        assert result.path is None

    def test_dimension(self):
        """r must be below n."""
        with pytest.raises(InvalidDimensionError):
            run_edg_demo(3, 3)

    def test_trials_and_bound(self, tmpdir):
        """Several trials give one row each plus a summary with nu and m_bound filled in."""
        result = run_edg_demo(5, 1, seed=4, out=tmpdir / "edg.csv", trials=3, workers=2, beta=2.0)
        trials = [row for row in result.rows if row["row_type"] == "trial"]
        assert [row["trial"] for row in trials] == [0, 1, 2]
        assert len({row["seed"] for row in trials}) == 3
        assert all(row["nu"] > 0 and row["m_bound"] >= 1 for row in trials)
        assert result.summaries[0]["success_rate"] == 1.0
        assert [row["row_type"] for row in read_rows(result.path)] == ["trial"] * 3 + ["summary"]

    def test_larger_beta_raises_bound(self):
        """m_bound grows with the confidence exponent."""
        low = run_edg_demo(5, 1, seed=4, beta=1.5).rows[0]
        high = run_edg_demo(5, 1, seed=4, beta=3.0).rows[0]
        assert high["m_bound"] > low["m_bound"]

    def test_invalid_beta(self):
        """beta must exceed 1."""
        with pytest.raises(InvalidConfidenceError):
            run_edg_demo(5, 1, beta=1.0)

    @pytest.mark.slow
    def test_oversampled_twenty_points(self):
        """n=20, r=2 at oversampling 6 localizes at least 18 of 20 point sets."""
        m = resolve_m("oversampling", 6.0, (20, 20), 2)
        result = run_edg_demo(20, 2, m=m, seed=8, trials=20, workers=4)
        assert result.summaries[0]["m"] == m
        assert result.summaries[0]["success_rate"] >= 0.9
        good = [row for row in result.rows if row["row_type"] == "trial" and row["success"]]
        assert all(row["point_rmsd"] <= 1e-2 for row in good)


class TestCertificateAudit:
    """Golfing certificates against the analytic bound."""

    def test_small_audit(self, tmpdir):
        """Overridden batch layout, one summary row per cell."""
        cfg = ExperimentConfig(
            family="entry",
            n=(4,),
            r=(1,),
            trials=2,
            seed=5,
            batches=3,
            batch_size=40,
            workers=1,
            out=tmpdir / "audit.csv",
        )
        result = run_certificate_audit(cfg)
        rows = read_rows(result.path)
        assert [row["row_type"] for row in rows] == ["trial", "trial", "summary"]
        assert rows[0]["l"] == "3"
        assert rows[0]["m"] == "120"
        assert len(rows[0]["q_norms"].split(";")) == 4

        summary = result.summaries[0]
        assert 0.0 <= summary["failure_rate"] <= 1.0
        assert summary["p_total"] <= 1.0

    def test_counts_beyond_index_limit(self, tmpdir):
        """Batches far above max_draws run as multiplicity counts."""
        cfg = ExperimentConfig(
            family="entry",
            n=(4,),
            trials=1,
            batches=2,
            batch_size=200_000_000,
            max_draws=50,
            workers=1,
            out=tmpdir / "audit.csv",
        )
        result = run_certificate_audit(cfg)
        row = read_rows(result.path)[0]
        assert row["m"] == "400000000"
        assert row["error"] == ""
        assert row["certified"] == "true"
        assert float(row["range_residual"]) <= 1e-8

    @pytest.mark.slow
    def test_edg_theorem_sized_audit(self, tmpdir):
        """EDG n=10, r=1 at the sample bound: at least 18 of 20 trials certify."""
        cfg = ExperimentConfig(
            family="edg",
            n=(10,),
            r=(1,),
            trials=20,
            seed=11,
            workers=4,
            out=tmpdir / "audit.csv",
        )
        result = run_certificate_audit(cfg)
        trials = [row for row in result.rows if row["row_type"] == "trial"]
        assert all("error" not in row for row in trials)
        assert sum(bool(row["min_eig_ok"]) for row in trials) >= 18
        assert sum(bool(row["certified"]) for row in trials) >= 18
        assert result.summaries[0]["failure_rate"] <= 0.1


class TestCli:
    """Typer commands."""

    def test_export_basis(self, tmpdir):
        """export-basis writes the textual format."""
        out = tmpdir / "edg.txt"
        result = runner.invoke(app, ["export-basis", "edg", "4", "--out", str(out)])
        assert result.exit_code == 0
        assert read_basis(out).L == 6

    def test_diagnose_json(self):
        """diagnose --json prints mu and the coherence profile."""
        result = runner.invoke(app, ["diagnose", "--family", "edg", "--n", "5", "--r", "2", "--json"])
        assert result.exit_code == 0
        data = json.loads(result.stdout)
        assert data["mu"] == pytest.approx(1.0)
        assert data["r"] == 2
        assert data["nu"] > 0
        assert data["basis_valid"] is True

    def test_diagnose_prints_validation(self):
        """Without --json the basis checks are listed."""
        result = runner.invoke(app, ["diagnose", "--family", "hankel", "--n", "4", "--r", "1"])
        assert result.exit_code == 0
        assert "OK Unit norm" in result.stdout

    def test_bound_json(self):
        """bound --json prints the batch layout."""
        result = runner.invoke(app, ["bound", "--family", "entry", "--n", "6", "--nu", "2.0", "--json"])
        assert result.exit_code == 0
        data = json.loads(result.stdout)
        assert data["C"] == pytest.approx(16.0)
        assert data["l"] >= 1

    def test_bound_rejects_beta(self):
        """beta <= 1 exits with an error."""
        result = runner.invoke(app, ["bound", "--beta", "1.0", "--nu", "1.0"])
        assert result.exit_code == 1

    def test_phase_from_config(self, tmpdir):
        """phase reads a config file and honours --out."""
        config = tmpdir / "phase.conf"
        config.write_text("family=entry\nn=4\nr=1\nm_mode=full\ntrials=1\nsolver.max_iter=100\n")
        out = tmpdir / "phase.csv"
        result = runner.invoke(app, ["phase", "--config", str(config), "--out", str(out)])
        assert result.exit_code == 0
        assert len(read_rows(out)) == 2

    def test_phase_unknown_family(self, tmpdir):
        """Invalid configs exit with code 1."""
        result = runner.invoke(app, ["phase", "--family", "toeplitz", "--out", str(tmpdir / "x.csv")])
        assert result.exit_code == 1

    def test_edg(self, tmpdir):
        """edg prints the recovery summary."""
        out = tmpdir / "edg.csv"
        result = runner.invoke(app, ["edg", "5", "2", "--out", str(out)])
        assert result.exit_code == 0
        assert "recovered" in result.stdout
        assert out.exists()

    def test_malformed_matrix_file(self, tmpdir):
        """A non-numeric --matrix file exits with code 1."""
        path = tmpdir / "bad.txt"
        path.write_text("1 2\nthree 4\n")
        result = runner.invoke(
            app, ["diagnose", "--family", "entry", "--n", "2", "--matrix", str(path), "--json"]
        )
        assert result.exit_code == 1

    def test_edg_from_config(self, tmpdir):
        """edg takes n, r, m and solver settings from a config; flags override it."""
        config = tmpdir / "edg.conf"
        config.write_text("n=5\nr=1\nm_mode=full\ntrials=4\nsolver.max_iter=500\n")
        out = tmpdir / "edg.csv"
        result = runner.invoke(
            app,
            ["edg", "--config", str(config), "--trials", "2", "--beta", "2.5", "--out", str(out), "--json"],
        )
        assert result.exit_code == 0
        data = json.loads(result.stdout)
        assert data["trials"] == 2
        assert data["m"] == 10
        assert data["success_rate"] == 1.0
        assert [row["row_type"] for row in read_rows(out)] == ["trial", "trial", "summary"]

    def test_edg_rejects_beta(self, tmpdir):
        """beta <= 1 exits with an error."""
        result = runner.invoke(app, ["edg", "4", "1", "--beta", "1.0", "--out", str(tmpdir / "e.csv")])
        assert result.exit_code == 1

    def test_custom_basis_diagnose(self, tmpdir):
        """A basis file feeds the custom family."""
        path = write_basis(tmpdir / "entry.txt", make_entry_basis(3))
        result = runner.invoke(
            app, ["diagnose", "--family", "custom", "--n", "3", "--basis", str(path), "--json"]
        )
        assert result.exit_code == 0
        assert json.loads(result.stdout)["mu"] == pytest.approx(0.0, abs=1e-10)
