import numpy as np
import pytest

from tropfact.bench import (
    convergence_curves,
    curve_configs,
    curves_to_csv,
    format_table,
    gen_synthetic,
    run_comparison,
    table1,
)
from tropfact.tropical import maxplus_matmul


class TestGenerator:
    def test_zero_noise_exact(self):
        inst = gen_synthetic(6, 3, 7, 0.0, 1)
        np.testing.assert_array_equal(inst.Y, maxplus_matmul(inst.A_true, inst.B_true))

    def test_range_and_shapes(self):
        inst = gen_synthetic(10, 5, 11, 0.1, 2)
        assert inst.Y.shape == (10, 11) and inst.A_true.shape == (10, 5)
        assert inst.B_true.shape == (5, 11) and inst.R.shape == (10, 11)
        assert inst.Y.min() >= 0 and inst.Y.max() <= 2.1
        for M in (inst.A_true, inst.B_true, inst.R):
            assert M.min() >= 0 and M.max() <= 1

    def test_definition(self):
        inst = gen_synthetic(4, 2, 5, 0.5, 3)
        np.testing.assert_array_equal(inst.Y, maxplus_matmul(inst.A_true, inst.B_true) + 0.5 * inst.R)

    def test_deterministic(self):
        a, b = gen_synthetic(4, 2, 5, 0.5, 3), gen_synthetic(4, 2, 5, 0.5, 3)
        np.testing.assert_array_equal(a.Y, b.Y)
        assert not np.array_equal(a.Y, gen_synthetic(4, 2, 5, 0.5, 4).Y)


def test_comparison_identical_entries_and_determinism():
    kw = dict(shape=(6, 2, 7), a=0.1, algorithms=["GDMN", "GDMN"], trials=1, iters=50, seed=3)
    rep = run_comparison(**kw)
    assert rep["algorithms"][0]["mean"] == rep["algorithms"][1]["mean"]
    assert rep == run_comparison(**kw)
    assert rep["normalized"] is True


def test_normalization():
    from tropfact.bench import trial_seed, BENCH_ALPHA, BENCH_NOISE_SCALE
    from tropfact.tmf import TmfConfig, random_init, tmf_fit
    rep = run_comparison(shape=(5, 2, 6), a=0.2, algorithms=["GD"], trials=1, iters=30, seed=1)
    t = trial_seed(1, "trial", 0)
    inst = gen_synthetic(5, 2, 6, 0.2, t)
    sol = tmf_fit(inst.Y, TmfConfig(r=2, variant="GD", max_iters=30, seed=t, alpha=BENCH_ALPHA,
                                    noise_scale=BENCH_NOISE_SCALE), init=random_init(5, 2, 6, t))
    raw = np.sqrt(sol.trace[:, 1].min())
    assert rep["algorithms"][0]["mean"] * 0.2 * np.linalg.norm(inst.R) == pytest.approx(raw, rel=1e-10)


def test_zero_noise_reports_absolute():
    rep = run_comparison(shape=(5, 2, 6), a=0.0, algorithms=["GD"], trials=2, iters=10)
    assert rep["normalized"] is False


def test_parallel_matches_serial():
    kw = dict(shape=(5, 2, 6), a=0.1, algorithms=["GD", "GDAN_NZM"], trials=3, iters=20, seed=2)
    assert run_comparison(jobs=2, **kw)["algorithms"] == run_comparison(jobs=1, **kw)["algorithms"]


def test_table_report_schema():
    rep = table1(a_values=(0.1, 0.5), shape=(5, 2, 6), trials=2, iters=10)
    assert {"config", "algorithms", "reference"} <= rep.keys()
    for e in rep["algorithms"]:
        assert {"name", "mean", "std", "trials"} <= e.keys()
    assert len(rep["algorithms"]) == 8
    assert "GDAN_NZM" in format_table(rep)


def test_curves():
    inst = gen_synthetic(6, 3, 7, 0.1, 5)
    cfgs = curve_configs(["0", "0.05", "sched"], 3, 100, 5)
    curves = convergence_curves(inst, cfgs)
    from tropfact.tmf import TmfConfig, random_init, tmf_fit
    gd = tmf_fit(inst.Y, TmfConfig(r=3, variant="GD", max_iters=100, seed=5), init=random_init(6, 3, 7, 5))
    np.testing.assert_array_equal(curves["0"][:, 1], np.sqrt(gd.trace[:, 1]) / inst.noise_norm)
    for series in curves.values():
        assert np.all(np.isfinite(series)) and np.all(series[:, 1] >= 0)
    text = curves_to_csv(curves)
    assert text.startswith("config,iteration,error\n") and text.count("\n") == 1 + 3 * 101
