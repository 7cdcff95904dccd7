import os

import numpy as np
import pytest

ML100K_CANDIDATES = [
    os.environ.get("MOVIELENS_ML100K", ""),
    os.path.join(os.path.dirname(__file__), "..", "data", "ml100k", "u.data"),
    "/root/data/ml-100k/u.data",
]
ML1M_CANDIDATES = [
    os.environ.get("MOVIELENS_ML1M", ""),
    os.path.join(os.path.dirname(__file__), "..", "data", "ml1m", "ratings.dat"),
    "/root/data/ml-1m/ratings.dat",
]


def _first_existing(paths):
    for p in paths:
        if p and os.path.isfile(p):
            return p
    return None


@pytest.fixture(scope="session")
def ml100k_path():
    path = _first_existing(ML100K_CANDIDATES)
    if path is None:
        pytest.skip("MovieLens 100k u.data not found (set MOVIELENS_ML100K)")
    return path


@pytest.fixture(scope="session")
def ml1m_path():
    path = _first_existing(ML1M_CANDIDATES)
    if path is None:
        pytest.skip("MovieLens 1M ratings.dat not found (set MOVIELENS_ML1M)")
    return path


def dyadic(rng, shape, low=-8, high=8, neg_inf_prob=0.0):
    """Entries on a 1/8 grid so float sums are exact; optional -inf cells."""
    M = rng.integers(low * 8, high * 8 + 1, size=shape) / 8.0
    if neg_inf_prob:
        M = np.where(rng.random(shape) < neg_inf_prob, -np.inf, M)
    return M


def generic_instance(rng, gap=0.1, max_tries=10000):
    """Random A (n x r), B (r x p), Y with every product entry having a
    unique maximizer ahead of the runner-up by at least ``gap``."""
    for _ in range(max_tries):
        n, r, p = rng.integers(1, 5), rng.integers(1, 4), rng.integers(1, 4)
        A = rng.uniform(-2, 2, size=(n, r))
        B = rng.uniform(-2, 2, size=(r, p))
        T = np.sort(A[:, :, None] + B[None], axis=1)
        if r == 1 or np.all(T[:, -1, :] - T[:, -2, :] >= gap):
            return A, B, rng.uniform(-2, 2, size=(n, p))
    raise RuntimeError("no generic instance found")


def fd_gradient(f, X, h=1e-5):
    G = np.zeros_like(X)
    for idx in np.ndindex(X.shape):
        Xp, Xm = X.copy(), X.copy()
        Xp[idx] += h
        Xm[idx] -= h
        G[idx] = (f(Xp) - f(Xm)) / (2 * h)
    return G


def max_rel_err(a, b, floor=1e-10):
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), floor))) if a.size else 0.0


_CRITERIA = []


@pytest.fixture
def criterion(capsys):
    """Records one PASS/FAIL line per acceptance criterion."""

    def record(number, title, ok, detail=""):
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}" + (f"  [{detail}]" if detail else "")
        _CRITERIA.append(line)
        with capsys.disabled():
            print("\n" + line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)
