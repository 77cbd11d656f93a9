import numpy as np
import pytest

from koopgp import (
    BenchmarkSpec,
    KernelConfig,
    Standardizer,
    TrainingSet,
    default_config,
    empirical_info_gain,
    info_gain_curve,
    make_corpus,
    predator_prey_system,
    rmse,
    run_benchmark,
)
from koopgp.analysis import _gain_from_matrix


def unit_ctx_cfg(dim=1):
    return KernelConfig("contextual", np.ones(dim), 1.0, 1.0, np.zeros(1), None, 1.0)


def singleton_set(times, x0s, dim=1):
    x0s = np.asarray(x0s, dtype=float).reshape(len(times), 1, dim)
    return TrainingSet(
        np.zeros(1),
        x0s,
        np.arange(len(times)),
        np.asarray(times, dtype=float),
        np.zeros(len(times)),
        Standardizer.identity(dim),
    )


class TestInfoGain:
    def test_unit_singleton(self):
        ts = singleton_set([0.5], [[0.0]])
        assert empirical_info_gain(unit_ctx_cfg(), ts, 1.0) == pytest.approx(
            0.5 * np.log(2.0), rel=1e-10
        )
        assert 0.5 * np.log(2.0) == pytest.approx(0.34657, abs=1e-5)

    def test_zero_kernel(self):
        assert _gain_from_matrix(np.zeros((5, 5)), 1.0) == pytest.approx(0.0, abs=1e-12)

    def test_diagonal_closed_form(self):
        c, n, s2 = 0.7, 9, 0.5
        expected = 0.5 * n * np.log(1.0 + c / s2)
        assert _gain_from_matrix(c * np.eye(n), s2) == pytest.approx(expected, rel=1e-10)

    def test_curve_monotone_and_anchored(self, pp_small_set):
        cfg = default_config(pp_small_set, "kesd", 6, seed=0)
        curve = info_gain_curve(cfg, pp_small_set, [1, 2, 4, 8, 16, 32], seed=1)
        assert curve.normalized[0] == pytest.approx(1.0)
        assert np.all(np.diff(curve.gains) >= 0)
        assert np.all(curve.gains >= 0)
        # unit-diagonal scaling puts the first point at exactly (1/2) log 2
        assert curve.gains[0] == pytest.approx(0.5 * np.log(2.0), rel=1e-9)

    def test_curve_single_size(self, pp_small_set):
        cfg = default_config(pp_small_set, "sd", 4, seed=0)
        curve = info_gain_curve(cfg, pp_small_set, [1], seed=2)
        assert curve.normalized[0] == pytest.approx(1.0)

    def test_submodularity_spot_check(self):
        # gamma(A u B) <= gamma(A) + gamma(B) for disjoint subsets
        rng = np.random.default_rng(3)
        x = rng.normal(0, 1, (12, 1))
        t = rng.uniform(0, 1, 12)
        ts = singleton_set(t, x)
        cfg = unit_ctx_cfg()
        g_all = empirical_info_gain(cfg, ts, 1.0)
        g_a = empirical_info_gain(cfg, ts.subset(np.arange(6)), 1.0)
        g_b = empirical_info_gain(cfg, ts.subset(np.arange(6, 12)), 1.0)
        assert g_all <= g_a + g_b + 1e-10

    def test_sigma2_validated(self, pp_small_set):
        cfg = default_config(pp_small_set, "sd", 4, seed=0)
        with pytest.raises(ValueError):
            empirical_info_gain(cfg, pp_small_set, 0.0)


class TestRmse:
    def test_zero_for_equal(self):
        assert rmse([1.0, 2.0], [1.0, 2.0]) == 0.0

    def test_constant_offset(self):
        assert rmse(np.zeros(5) + 1.0, np.zeros(5)) == pytest.approx(1.0)

    def test_alternating(self):
        truth = np.arange(6.0)
        pred = truth + np.array([2.0, -2.0] * 3)
        assert rmse(pred, truth) == pytest.approx(2.0)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            rmse([1.0], [1.0, 2.0])


@pytest.fixture(scope="module")
def tiny_benchmark_report():
    corpus = make_corpus(predator_prey_system(), 20, [[0.2, 2], [0.2, 1]], 3.0, 12, seed=21)
    spec = BenchmarkSpec(
        dataset="PP-mini",
        n_windows=6,
        h_points=6,
        models=("kesd", "contextual"),
        repeats=2,
        seed=5,
        n_eigenvalues=6,
        exact_budget=10,
        corpus=corpus,
    )
    return spec, run_benchmark(spec)


class TestBenchmark:
    def test_shape_and_labels(self, tiny_benchmark_report):
        spec, report = tiny_benchmark_report
        assert len(report.rows) == 4
        summary = report.summary()
        assert set(summary) == {"kesd", "contextual"}
        for mean, std in summary.values():
            assert np.isfinite(mean) and std >= 0

    def test_determinism(self, tiny_benchmark_report):
        spec, report = tiny_benchmark_report
        again = run_benchmark(spec)
        assert [r.rmse for r in again.rows] == [r.rmse for r in report.rows]

    def test_single_repeat_zero_std(self):
        corpus = make_corpus(predator_prey_system(), 14, [[0.2, 2], [0.2, 1]], 3.0, 12, seed=2)
        spec = BenchmarkSpec(
            dataset="PP-mini", n_windows=5, h_points=6, models=("contextual",),
            repeats=1, seed=3, exact_budget=5, corpus=corpus,
        )
        report = run_benchmark(spec)
        assert report.summary()["contextual"][1] == 0.0

    def test_report_dict_roundtrip(self, tiny_benchmark_report):
        _, report = tiny_benchmark_report
        d = report.to_dict(include_seconds=False)
        assert {"spec", "rows", "summary"} <= set(d)
        assert all("seconds" not in row for row in d["rows"])
