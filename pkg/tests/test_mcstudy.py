import dataclasses
import math

import numpy as np
import pytest

from mistol.estimators import eb
from mistol.mcstudy import (
    KAPPA_METHODS,
    KappaStudy,
    StudyConfig,
    StudyError,
    _curve_crossings,
    coverage_study,
    finite_sample_mse,
    kappa_by_simulation,
)
from mistol.models import get_model, information_at_null
from mistol.numerics import DomainError, replication_rng
from mistol.tolerance import kappa

WEIBULL_KAPPA = 0.7796968012336761


def weibull_config(**kw):
    base = dict(
        model=get_model("weibull-vs-exp"),
        delta_grid=(0.0,),
        n_list=(200,),
        replications=100,
        seed=314,
    )
    base.update(kw)
    return StudyConfig(**base)


class TestStudyConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            weibull_config(seed=None)
        with pytest.raises(ValueError):
            weibull_config(replications=50)
        with pytest.raises(ValueError):
            weibull_config(kappa_method="bootstrap")
        with pytest.raises(ValueError):
            weibull_config(level=1.0)
        with pytest.raises(ValueError):
            weibull_config(workers=0)
        with pytest.raises(ValueError):
            weibull_config(delta_grid=())
        with pytest.raises(ValueError):
            weibull_config(n_list=())

    def test_resolved_estimators(self):
        config = weibull_config(estimators=("narrow", "debias", eb(), "qhat:eps=0.1"))
        resolved = config.resolved_estimators()
        assert [name for name, _ in resolved] == [
            "narrow", "debias", "eb", "qhat:eps=0.1",
        ]
        assert resolved[1][1] is None
        assert resolved[2][1].name == "eb"

    def test_manifest_lines(self):
        config = weibull_config(estimators=("narrow", "wide"))
        lines = list(config.manifest_lines())
        assert "model: weibull-vs-exp" in lines
        assert "seed: 314" in lines
        assert any(line.startswith("estimators: ") for line in lines)

    def test_design_factory_override(self):
        model = get_model("two-sample")
        config = StudyConfig(
            model=model,
            seed=1,
            design_factory=lambda n: model.default_design(n, m=2 * n),
        )
        design = config.design_for(30)
        assert design.n == 90


class TestKappaBySimulation:
    def test_gamma_sd(self):
        study = kappa_by_simulation(
            weibull_config(kappa_method="gamma-sd", replications=400)
        )
        assert study.method == "gamma-sd"
        assert study.failures == 0
        assert study.info is None and study.inverse_info is None
        assert abs(study.kappa - WEIBULL_KAPPA) < 4.0 * study.se

    def test_score_cov(self):
        config = weibull_config(
            kappa_method="score-cov", n_list=(1000,), replications=300
        )
        study = kappa_by_simulation(config)
        # the plug-in at fitted parameters carries O(1/n) bias, so allow
        # a small systematic term on top of the Monte Carlo band
        assert abs(study.kappa - WEIBULL_KAPPA) < 4.0 * study.se + 0.02
        model = config.model
        closed = information_at_null(model, model.default_design(1000)).matrix
        assert study.info is not None
        assert np.allclose(study.info.matrix, closed, atol=0.1)
        assert float(kappa(study.info)) == pytest.approx(study.kappa, abs=0.05)

    def test_full_ml_cov(self):
        study = kappa_by_simulation(
            weibull_config(kappa_method="full-ml-cov", n_list=(1000,), replications=300)
        )
        assert abs(study.kappa - WEIBULL_KAPPA) < 4.0 * study.se + 0.02
        assert study.inverse_info is not None
        assert study.inverse_info.shape == (2, 2)
        # the departure block of n*Cov should approximate kappa^2
        assert study.inverse_info[1, 1] == pytest.approx(study.kappa**2, rel=1e-9)

    def test_methods_tuple(self):
        assert KAPPA_METHODS == ("score-cov", "full-ml-cov", "gamma-sd")

    def test_reproducible(self):
        config = weibull_config(kappa_method="gamma-sd", replications=150)
        a = kappa_by_simulation(config)
        b = kappa_by_simulation(config)
        assert a == b


def failing_sampler_model(threshold):
    """Weibull model whose sampler aborts when the replication's first
    uniform draw falls below `threshold` (deterministic per seed)."""
    model = get_model("weibull-vs-exp")
    base_sampler = model.sampler

    def sampler(theta, gamma, design, rng):
        if float(rng.uniform()) < threshold:
            raise DomainError("synthetic sampler failure")
        return base_sampler(theta, gamma, design, rng)

    return dataclasses.replace(model, sampler=sampler)


class TestFailureAccounting:
    def test_exact_failure_count_below_threshold(self):
        seed, reps = 555, 200
        first_draws = np.array(
            [float(replication_rng(seed, r).uniform()) for r in range(reps)]
        )
        # pick a cut-off that fails exactly one replication
        cut = float(np.sort(first_draws)[0]) + 1e-12
        assert int(np.sum(first_draws < cut)) == 1
        config = StudyConfig(
            model=failing_sampler_model(cut),
            kappa_method="gamma-sd",
            n_list=(50,),
            replications=reps,
            seed=seed,
        )
        study = kappa_by_simulation(config)
        assert study.failures == 1
        assert study.replications == reps

    def test_mass_failures_abort(self):
        config = StudyConfig(
            model=failing_sampler_model(0.5),
            kappa_method="gamma-sd",
            n_list=(50,),
            replications=100,
            seed=555,
        )
        with pytest.raises(StudyError):
            kappa_by_simulation(config)

    def test_mse_study_reports_failures(self):
        seed, reps = 777, 150
        first_draws = np.array(
            [float(replication_rng(seed, r).uniform()) for r in range(reps)]
        )
        cut = float(np.sort(first_draws)[0]) + 1e-12
        config = StudyConfig(
            model=failing_sampler_model(cut),
            n_list=(60,),
            delta_grid=(0.0,),
            replications=reps,
            seed=seed,
            estimators=("narrow", "wide"),
        )
        result = finite_sample_mse(config)
        assert result.failures == 1


class TestFiniteSampleMse:
    def test_bitwise_reproducible_and_worker_invariant(self):
        config = weibull_config(
            delta_grid=(0.0, 0.5),
            n_list=(120,),
            replications=120,
            estimators=("narrow", "wide", "eb"),
        )
        first = finite_sample_mse(config)
        second = finite_sample_mse(config)
        assert first == second
        threaded = finite_sample_mse(dataclasses.replace(config, workers=4))
        assert threaded.rows == first.rows
        assert threaded.kappa_rows == first.kappa_rows

    def test_weibull_null_matches_limit_variances(self):
        config = weibull_config(
            n_list=(400,), replications=300, estimators=("narrow", "wide")
        )
        result = finite_sample_mse(config)
        by_name = {row[2]: row for row in result.rows}
        narrow = by_name["narrow"]
        wide = by_name["wide"]
        assert narrow[3] == pytest.approx(0.4804530139182014, abs=5 * narrow[4] + 0.02)
        assert wide[3] == pytest.approx(0.6624162336000172, abs=5 * wide[4] + 0.02)
        assert narrow[3] < wide[3]

    def test_plugin_kappa_rows(self):
        config = weibull_config(
            delta_grid=(0.0, 0.4), n_list=(150,), replications=100
        )
        result = finite_sample_mse(config)
        assert len(result.kappa_rows) == 1
        n, mean, se = result.kappa_rows[0]
        assert n == 150
        # the weibull radius does not depend on theta, so every plug-in
        # evaluation returns the same number
        assert mean == pytest.approx(WEIBULL_KAPPA, abs=1e-9)
        assert se == 0.0

    def test_debias_and_compromise_agree_when_focus_ignores_gamma(self):
        model = get_model("two-sample")
        config = StudyConfig(
            model=model,
            estimand="mean-diff",
            delta_grid=(0.0, 1.0),
            n_list=(80,),
            replications=100,
            seed=99,
            estimators=("narrow", "wide", "debias", "eb"),
        )
        result = finite_sample_mse(config)
        for delta in (0.0, 1.0):
            vals = {
                row[2]: row[3] for row in result.rows if row[0] == delta
            }
            # group means are the same under both fits and the bias slope
            # vanishes, so every rule reproduces the same estimate (up to
            # the roundoff of re-mixing identical endpoints)
            assert vals["wide"] == pytest.approx(vals["narrow"], rel=1e-12)
            assert vals["debias"] == pytest.approx(vals["narrow"], rel=1e-12)
            assert vals["eb"] == pytest.approx(vals["narrow"], rel=1e-12)

    def test_csv_and_manifest_output(self, tmp_path):
        config = weibull_config(n_list=(100,), replications=100)
        result = finite_sample_mse(config)
        csv_path = result.to_csv(tmp_path / "study.csv")
        lines = (tmp_path / "study.csv").read_text().strip().split("\n")
        assert lines[0] == "delta,n,estimator,nmse,se"
        assert len(lines) == 1 + len(result.rows)
        first = lines[1].split(",")
        assert first[0] == "0.0" and first[1] == "100" and first[2] == "narrow"
        assert float(first[3]) == result.rows[0][3]
        manifest_path = result.write_manifest(tmp_path / "study-manifest.txt")
        text = (tmp_path / "study-manifest.txt").read_text()
        assert "model: weibull-vs-exp" in text
        assert f"replications_attempted: {result.replications}" in text
        assert "failures: 0" in text
        assert f"successes: {result.replications}" in text
        assert str(csv_path) == str(tmp_path / "study.csv")
        assert str(manifest_path) == str(tmp_path / "study-manifest.txt")


class TestCurveCrossings:
    def test_single_crossing_interpolated(self):
        a = [(0.0, 0.0), (1.0, 2.0)]
        b = [(0.0, 1.0), (1.0, 1.0)]
        assert _curve_crossings(a, b) == [0.5]

    def test_touching_at_left_endpoint(self):
        a = [(0.0, 1.0), (1.0, 2.0)]
        b = [(0.0, 1.0), (1.0, 1.0)]
        assert _curve_crossings(a, b) == [0.0]

    def test_no_crossing(self):
        a = [(0.0, 0.0), (1.0, 0.5)]
        b = [(0.0, 1.0), (1.0, 1.5)]
        assert _curve_crossings(a, b) == []

    def test_degenerate_input(self):
        assert _curve_crossings([(0.0, 1.0)], [(0.0, 2.0)]) == []
        assert _curve_crossings([], [(0.0, 1.0)]) == []


class TestCoverageStudy:
    def test_null_coverage_near_nominal(self):
        config = weibull_config(n_list=(300,), replications=400, level=0.90)
        result = coverage_study(config)
        assert result.header == ("delta", "n", "interval", "coverage", "se", "predicted")
        by_kind = {row[2]: row for row in result.rows}
        for kind in ("narrow", "wide"):
            _, _, _, cov, se, predicted = by_kind[kind]
            assert predicted == pytest.approx(0.90, abs=1e-12)
            assert abs(cov - 0.90) < 4.0 * se + 0.02

    def test_departure_erodes_narrow_coverage(self):
        config = weibull_config(
            delta_grid=(2.0 * WEIBULL_KAPPA,),
            n_list=(400,),
            replications=400,
            level=0.90,
        )
        result = coverage_study(config)
        by_kind = {row[2]: row for row in result.rows}
        narrow = by_kind["narrow"]
        wide = by_kind["wide"]
        assert narrow[5] < 0.80  # prediction well below nominal
        assert abs(narrow[3] - narrow[5]) < 5.0 * narrow[4] + 0.03
        assert wide[5] == pytest.approx(0.90, abs=1e-12)
        assert abs(wide[3] - 0.90) < 4.0 * wide[4] + 0.02

    def test_level_override_and_validation(self):
        config = weibull_config(n_list=(120,), replications=100)
        result = coverage_study(config, level=0.8)
        wide_rows = [row for row in result.rows if row[2] == "wide"]
        assert wide_rows[0][5] == pytest.approx(0.8, abs=1e-12)
        with pytest.raises(ValueError):
            coverage_study(config, level=1.2)
