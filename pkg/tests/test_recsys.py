import numpy as np
import pytest

from tropfact.recsys import (
    ImplicitMatrix,
    RatingsParseError,
    SgdConfig,
    SplitSpec,
    TropicalModel,
    batch_update,
    build_implicit,
    dataset_from_records,
    evaluate,
    fit_stochastic,
    hit_rate_at_10,
    load_movielens,
    rms,
    write_movielens,
)
from tropfact.seeding import derive_rng
from tropfact.tmf import TmfConfig, tmf_step
from tropfact.tropical import ObservationMask


def synthetic_records(n_users=40, n_items=150, per_user=25, seed=0):
    rng = np.random.default_rng(seed)
    pop = np.linspace(3, 0.1, n_items)
    pop /= pop.sum()
    recs = []
    for u in range(n_users):
        for i in rng.choice(n_items, per_user, replace=False, p=pop):
            recs.append((u + 1, int(i) + 1, int(rng.integers(1, 6)), 880000000 + len(recs)))
    return recs


class TestIngestion:
    def test_ml1m_line(self, tmp_path):
        (tmp_path / "ratings.dat").write_text("1::1193::5::978300760\n")
        ds = load_movielens(tmp_path / "ratings.dat", "ml1m")
        assert ds.records() == [(1, 1193, 5, 978300760)]
        assert ds.num_users == 1 and ds.num_items == 1
        assert ds.warnings  # counts differ from the distributed totals

    def test_empty(self, tmp_path):
        (tmp_path / "u.data").write_text("")
        ds = load_movielens(tmp_path, "ml100k")
        assert len(ds) == 0 and ds.num_users == 0 and ds.num_items == 0

    def test_malformed_line_number(self, tmp_path):
        (tmp_path / "u.data").write_text("1\t2\t3\t4\n1\t2\tx\t4\n")
        with pytest.raises(RatingsParseError, match=":2:"):
            load_movielens(tmp_path / "u.data")

    def test_contiguous_and_deduplicated(self):
        ds = dataset_from_records([(10, 5, 3, 1), (7, 5, 4, 2), (10, 5, 1, 3), (10, 9, 2, 4)])
        assert len(ds) == 3
        assert ds.user_map == {7: 0, 10: 1} and ds.item_map == {5: 0, 9: 1}
        assert sorted(set(ds.users.tolist())) == [0, 1]

    @pytest.mark.parametrize("fmt", ["ml100k", "ml1m"])
    def test_roundtrip(self, tmp_path, fmt):
        ds = dataset_from_records(synthetic_records(5, 20, 4))
        write_movielens(ds, tmp_path / "r.txt", fmt)
        assert load_movielens(tmp_path / "r.txt", fmt).records() == ds.records()


class TestImplicit:
    def test_single_rating(self):
        ds = dataset_from_records([(1, 1, 5, 0), (2, 3, 1, 0), (1, 2, 2, 0)])
        ds1 = dataset_from_records([(1, 1, 5, 0)])
        data = build_implicit(ds1, SplitSpec(seed=0))
        assert data.Y.tolist() == [[-1.0]]
        data = build_implicit(ds, SplitSpec(seed=0))
        assert (data.Y == -1).sum() == 3 and data.Y[0, 0] == -1 and data.Y[1, 0] == 1

    @pytest.mark.parametrize("cells", ["all", "balanced"])
    def test_disjoint_masks(self, cells):
        ds = dataset_from_records(synthetic_records())
        data = build_implicit(ds, SplitSpec(seed=1, cells=cells))
        tr, va, te = data.train.array, data.validation.array, data.test.array
        assert not (tr & va).any() and not (tr & te).any() and not (va & te).any()
        if cells == "all":
            assert (tr | va | te).all()
            assert abs(tr.mean() - 0.8) < 1e-3
        else:
            for m in (tr, va, te):
                assert (data.Y[m] < 0).sum() == (data.Y[m] > 0).sum()

    def test_split_determinism(self):
        ds = dataset_from_records(synthetic_records())
        a, b = build_implicit(ds, SplitSpec(seed=3)), build_implicit(ds, SplitSpec(seed=3))
        assert a.test == b.test and a.train == b.train
        assert build_implicit(ds, SplitSpec(seed=4)).test != a.test

    def test_bad_fractions(self):
        with pytest.raises(ValueError):
            SplitSpec(0.5, 0.5, 0.5)


class TestRms:
    Y = np.array([[1.0, -1.0], [-1.0, 1.0]])

    def test_perfect(self):
        assert rms(self.Y, self.Y, np.ones((2, 2), bool)) == 0.0

    def test_constant_zero(self):
        assert rms(np.zeros((2, 2)), self.Y, np.ones((2, 2), bool)) == 1.0

    def test_empty(self):
        with pytest.raises(ValueError):
            rms(self.Y, self.Y, np.zeros((2, 2), bool))

    def test_callable_and_order_free(self):
        P = np.array([[0.5, -0.2], [0.1, 0.9]])
        mask = np.array([[True, False], [True, True]])
        assert rms(lambda r, c: P[r, c], self.Y, mask) == rms(P, self.Y, ObservationMask(mask))
        d = (P - self.Y)[mask]
        assert rms(P, self.Y, mask) == pytest.approx(np.sqrt(np.mean(d[::-1] ** 2)), rel=1e-15)


class TestHitRate:
    def setup_method(self):
        ds = dataset_from_records(synthetic_records(60, 300, 30, seed=2))
        self.data = build_implicit(ds, SplitSpec(seed=0))

    def test_oracle_scores(self):
        assert hit_rate_at_10(self.data.Y, self.data.Y, self.data.test, seed=1) == 1.0

    def test_range_and_monotone_invariance(self):
        scores = np.random.default_rng(0).normal(size=self.data.Y.shape)
        h1 = hit_rate_at_10(scores, self.data.Y, self.data.test, seed=2)
        h2 = hit_rate_at_10(np.exp(scores) * 3 + 1, self.data.Y, self.data.test, seed=2)
        assert 0.0 <= h1 <= 1.0 and h1 == h2

    def test_deterministic(self):
        scores = np.random.default_rng(1).normal(size=self.data.Y.shape)
        assert hit_rate_at_10(scores, self.data.Y, self.data.test, seed=5) == \
            hit_rate_at_10(scores, self.data.Y, self.data.test, seed=5)

    def test_no_eligible_users(self):
        with pytest.raises(ValueError):
            hit_rate_at_10(self.data.Y, self.data.Y, np.zeros_like(self.data.Y, bool))


def test_single_batch_epoch_equals_masked_full_step():
    ds = dataset_from_records(synthetic_records(12, 30, 8, seed=4))
    data = build_implicit(ds, SplitSpec(seed=0))
    rng = np.random.default_rng(0)
    n, p = data.Y.shape
    A, B = rng.uniform(size=(n, 3)), rng.uniform(size=(3, p))
    rows, cols, y = data.entries("train")
    for variant in ("GD", "GDMN"):
        cfg = SgdConfig(variant=variant, alpha=0.02, batch_size=len(rows))
        A1, B1 = batch_update(A, B, rows, cols, y, cfg, 4, np.random.default_rng(1), None)
        A2, B2 = tmf_step(data.Y, A, B, TmfConfig(r=3, alpha=0.02, variant=variant), 4,
                          mask=data.train, rng=np.random.default_rng(1))
        np.testing.assert_allclose(A1, A2, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(B1, B2, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("model", [("tmf", 4), ("tc", 5, 3)])
def test_fit_stochastic_small(model):
    ds = dataset_from_records(synthetic_records())
    data = build_implicit(ds, SplitSpec(seed=0))
    cfg = SgdConfig(batch_size=512, max_epochs=15, patience=3, seed=1)
    fit = fit_stochastic(data, model, cfg)
    again = fit_stochastic(data, model, cfg)
    np.testing.assert_array_equal(fit.model.A, again.model.A)
    assert fit.val_history[fit.best_epoch - 1] == min(fit.val_history)
    assert fit.val_history[-1] < fit.val_history[0] or fit.best_epoch > 1
    metrics = evaluate(data, fit, seed=0)
    assert 0 <= metrics["hr_at_10"] <= 1 and metrics["rms_test"] > 0
    if model[0] == "tc":
        assert metrics["rank_C"] <= 3
        f = fit.model.factors()
        np.testing.assert_allclose(f["B"] @ f["X"], f["C"], atol=1e-8 * np.linalg.norm(f["C"]))


def test_model_prediction_paths_agree():
    rng = np.random.default_rng(0)
    m = TropicalModel("tmf", rng.normal(size=(7, 3)), rng.normal(size=(3, 9)))
    P = m.predict()
    r, c = np.nonzero(np.ones((7, 9)))
    np.testing.assert_array_equal(m(r, c), P[r, c])


def test_empty_train_mask():
    data = ImplicitMatrix(Y=np.ones((3, 3)), train=ObservationMask(np.zeros((3, 3))),
                          validation=ObservationMask(np.zeros((3, 3))), test=ObservationMask(np.zeros((3, 3))))
    with pytest.raises(ValueError):
        fit_stochastic(data, ("tmf", 1))


@pytest.mark.movielens
def test_ml100k_counts(ml100k_path):
    ds = load_movielens(ml100k_path, "ml100k")
    assert (len(ds), ds.num_users, ds.num_items) == (100000, 943, 1682)
    assert not ds.warnings
    data = build_implicit(ds)
    assert (data.Y < 0).mean() == pytest.approx(100000 / (943 * 1682), rel=1e-12)
