"""MovieLens implicit-feedback harness: ingestion, splits, minibatch fitting, RMS and HR@10.

Watched pairs are encoded as -1 and unwatched as +1, so a *lower* predicted
value means a stronger recommendation.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .seeding import derive_rng
from .tc import numerical_rank, rank_factorize, rank_projection
from .tmf import make_schedule, normalize_variant
from .tropical import ObservationMask, maxplus_matmul, select_maximizers

logger = logging.getLogger(__name__)

FORMATS = {
    "ml100k": {"sep": "\t", "file": "u.data", "ratings": 100000, "users": 943, "items": 1682},
    "ml1m": {"sep": "::", "file": "ratings.dat", "ratings": 1000209, "users": 6040, "items": 3706},
}
ARCHIVES = {
    "ml100k": ("https://files.grouplens.org/datasets/movielens/ml-100k.zip", "ml-100k/u.data"),
    "ml1m": ("https://files.grouplens.org/datasets/movielens/ml-1m.zip", "ml-1m/ratings.dat"),
}
PROTOCOLS = {
    "all": "every cell of Y is assigned to exactly one split (80/10/10 by seeded shuffle)",
    "balanced": ("each split holds its watched cells plus an equal number of "
                 "randomly sampled unwatched cells (1:1 negative sampling)"),
}


class RatingsParseError(ValueError):
    pass


@dataclass
class RatingsDataset:
    user_ids: np.ndarray      # external ids, per record
    item_ids: np.ndarray
    ratings: np.ndarray
    timestamps: np.ndarray
    users: np.ndarray         # contiguous indices, per record
    items: np.ndarray
    user_map: Dict[int, int]
    item_map: Dict[int, int]
    warnings: List[str] = field(default_factory=list)

    @property
    def num_users(self) -> int:
        return len(self.user_map)

    @property
    def num_items(self) -> int:
        return len(self.item_map)

    def __len__(self) -> int:
        return len(self.ratings)

    def records(self) -> List[Tuple[int, int, int, int]]:
        return list(zip(self.user_ids.tolist(), self.item_ids.tolist(),
                        self.ratings.tolist(), self.timestamps.tolist()))


def dataset_from_records(records: Sequence[Tuple[int, int, int, int]]) -> RatingsDataset:
    """Index records; a repeated (user, item) pair keeps its first occurrence."""
    arr = np.array(records, dtype=np.int64).reshape(-1, 4)
    if len(arr):
        _, first = np.unique(arr[:, :2], axis=0, return_index=True)
        arr = arr[np.sort(first)]
    u_ext, i_ext = arr[:, 0], arr[:, 1]
    u_keys, users = np.unique(u_ext, return_inverse=True)
    i_keys, items = np.unique(i_ext, return_inverse=True)
    return RatingsDataset(
        user_ids=u_ext, item_ids=i_ext, ratings=arr[:, 2], timestamps=arr[:, 3],
        users=users.reshape(-1), items=items.reshape(-1),
        user_map={int(k): n for n, k in enumerate(u_keys)},
        item_map={int(k): n for n, k in enumerate(i_keys)},
    )


def load_movielens(path, format: str = "ml100k") -> RatingsDataset:
    """Read ``u.data`` (ml100k) or ``ratings.dat`` (ml1m) as distributed.

    A directory is accepted and resolved to the format's file name.
    """
    if format not in FORMATS:
        raise ValueError(f"unknown format {format!r}")
    spec = FORMATS[format]
    if os.path.isdir(path):
        path = os.path.join(path, spec["file"])
    records = []
    with open(path, encoding="latin-1") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(spec["sep"])
            if len(parts) != 4:
                raise RatingsParseError(f"{path}:{lineno}: expected 4 fields, got {len(parts)}")
            try:
                records.append(tuple(int(x) for x in parts))
            except ValueError:
                raise RatingsParseError(f"{path}:{lineno}: non-integer field in {line!r}") from None
    ds = dataset_from_records(records)
    if records:
        for key, got in (("ratings", len(ds)), ("users", ds.num_users), ("items", ds.num_items)):
            if got != spec[key]:
                msg = f"{format}: expected {spec[key]} {key}, found {got}"
                logger.warning(msg)
                ds.warnings.append(msg)
    return ds


def write_movielens(dataset: RatingsDataset, path, format: str = "ml100k") -> None:
    sep = FORMATS[format]["sep"]
    with open(path, "w") as f:
        for rec in dataset.records():
            f.write(sep.join(str(x) for x in rec) + "\n")


def fetch_movielens(format: str, dest) -> str:
    """Download and unpack a public MovieLens archive; returns the ratings path."""
    import io
    import urllib.request
    import zipfile

    url, member = ARCHIVES[format]
    with urllib.request.urlopen(url, timeout=60) as resp:
        payload = resp.read()
    os.makedirs(dest, exist_ok=True)
    with zipfile.ZipFile(io.BytesIO(payload)) as zf:
        zf.extract(member, dest)
    out = os.path.join(dest, member)
    ds = load_movielens(out, format)
    if ds.warnings:
        raise RatingsParseError("; ".join(ds.warnings))
    return out


@dataclass
class SplitSpec:
    train: float = 0.8
    validation: float = 0.1
    test: float = 0.1
    seed: int = 0
    cells: str = "all"

    def __post_init__(self):
        fr = (self.train, self.validation, self.test)
        if min(fr) <= 0 or abs(sum(fr) - 1.0) > 1e-9:
            raise ValueError("split fractions must be positive and sum to 1")
        if self.cells not in PROTOCOLS:
            raise ValueError(f"cells must be one of {sorted(PROTOCOLS)}")


@dataclass
class ImplicitMatrix:
    Y: np.ndarray
    train: ObservationMask
    validation: ObservationMask
    test: ObservationMask

    def entries(self, split: str) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Row-major ``(rows, cols, targets)`` of one split."""
        rows, cols = np.nonzero(getattr(self, split).array)
        return rows, cols, self.Y[rows, cols]


def _split_counts(total: int, split: SplitSpec) -> Tuple[int, int]:
    n_train = int(round(split.train * total))
    n_val = int(round(split.validation * total))
    return n_train, min(n_val, total - n_train)


def build_implicit(dataset: RatingsDataset, split: SplitSpec = SplitSpec()) -> ImplicitMatrix:
    """Dense +-1 matrix and pairwise disjoint split masks.

    With ``split.cells == "all"`` every cell lands in one split. With
    ``"balanced"`` the watched cells are split and each split gets the same
    number of randomly drawn unwatched cells; the remaining cells are in no
    split.
    """
    n, p = dataset.num_users, dataset.num_items
    Y = np.ones((n, p))
    Y[dataset.users, dataset.items] = -1.0
    masks = [np.zeros((n, p), dtype=bool) for _ in range(3)]

    if split.cells == "all":
        groups = [derive_rng(split.seed, "split").permutation(n * p)]
    else:
        watched = np.flatnonzero(Y.ravel() < 0)
        unwatched = np.flatnonzero(Y.ravel() > 0)
        order = derive_rng(split.seed, "split").permutation(len(watched))
        n_neg = min(len(watched), len(unwatched))
        negatives = derive_rng(split.seed, "negatives").choice(len(unwatched), n_neg, replace=False)
        groups = [watched[order], unwatched[negatives]]

    for cells in groups:
        n_train, n_val = _split_counts(len(cells), split)
        bounds = [0, n_train, n_train + n_val, len(cells)]
        for k in range(3):
            masks[k].ravel()[cells[bounds[k]:bounds[k + 1]]] = True
    return ImplicitMatrix(Y=Y, train=ObservationMask(masks[0]),
                          validation=ObservationMask(masks[1]), test=ObservationMask(masks[2]))


Scorer = Union[np.ndarray, Callable[[np.ndarray, np.ndarray], np.ndarray]]


def _score(scorer: Scorer, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    if callable(scorer):
        return np.asarray(scorer(rows, cols), dtype=np.float64)
    return np.asarray(scorer, dtype=np.float64)[rows, cols]


def rms(predictions: Scorer, Y: np.ndarray, mask) -> float:
    """Root mean squared error over the mask, accumulated in row-major order."""
    arr = mask.array if isinstance(mask, ObservationMask) else np.asarray(mask, dtype=bool)
    rows, cols = np.nonzero(arr)
    if len(rows) == 0:
        raise ValueError("mask is empty")
    d = _score(predictions, rows, cols) - Y[rows, cols]
    return float(np.sqrt(np.mean(d * d)))


def hit_rate_at_10(scores: Scorer, Y: np.ndarray, test_mask, seed: int = 0,
                   k: int = 10, num_negatives: int = 100) -> float:
    """Fraction of users whose sampled test positive ranks in the top ``k`` of 101.

    Items are ranked by ascending score. Negatives are drawn from the user's
    test negatives when there are enough of them, otherwise from all of the
    user's unwatched items. Ties count against the positive. Each user draws
    from its own stream derived from ``seed``.
    """
    arr = test_mask.array if isinstance(test_mask, ObservationMask) else np.asarray(test_mask, bool)
    hits = 0
    eligible = 0
    for u in range(Y.shape[0]):
        pos = np.flatnonzero(arr[u] & (Y[u] < 0))
        if len(pos) == 0:
            continue
        neg_pool = np.flatnonzero(arr[u] & (Y[u] > 0))
        if len(neg_pool) < num_negatives:
            neg_pool = np.flatnonzero(Y[u] > 0)
        if len(neg_pool) == 0:
            continue
        rng = derive_rng(seed, "hr", u)
        positive = pos[rng.integers(len(pos))]
        negatives = rng.choice(neg_pool, min(num_negatives, len(neg_pool)), replace=False)
        items = np.concatenate([[positive], negatives])
        s = _score(scores, np.full(len(items), u), items)
        ahead = int(np.sum(s[1:] <= s[0]))
        eligible += 1
        hits += ahead < k
    if eligible == 0:
        raise ValueError("no user has a positive test item")
    return hits / eligible


@dataclass
class SgdConfig:
    variant: str = "GDMN"
    alpha: float = 0.03
    eps_schedule: Union[str, float] = "diminishing"
    noise_scale: float = 0.1
    batch_size: int = 8192
    max_epochs: int = 200
    patience: int = 10
    seed: int = 0

    def __post_init__(self):
        self.variant = normalize_variant(self.variant)
        self._eps = make_schedule(self.eps_schedule)
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 0:
            raise ValueError("batch_size and max_epochs must be positive, patience nonnegative")

    def eps(self, k: int) -> float:
        return float(self._eps(k))


@dataclass
class TropicalModel:
    """``A (max-plus) right``; for ``tc`` models ``right = C`` has rank at most ``p``."""

    kind: str
    A: np.ndarray
    right: np.ndarray
    p: Optional[int] = None

    def predict_entries(self, rows, cols, chunk: int = 65536) -> np.ndarray:
        out = np.empty(len(rows))
        Rt = self.right.T
        for s in range(0, len(rows), chunk):
            r, c = rows[s:s + chunk], cols[s:s + chunk]
            out[s:s + chunk] = (self.A[r] + Rt[c]).max(axis=1)
        return out

    def predict(self) -> np.ndarray:
        return maxplus_matmul(self.A, self.right)

    def __call__(self, rows, cols) -> np.ndarray:
        return self.predict_entries(np.asarray(rows), np.asarray(cols))

    def factors(self) -> Dict[str, np.ndarray]:
        if self.kind == "tmf":
            return {"A": self.A, "B": self.right}
        B, X = rank_factorize(self.right, self.p)
        return {"A": self.A, "B": B, "X": X, "C": self.right}


def batch_update(A, R, rows, cols, y, config: SgdConfig, k: int, tie_rng, noise_rng):
    """Factor update restricted to the cells ``(rows[t], cols[t])``.

    Same rule as the dense solver step: residual of every term weighted by
    1 on the maximizer and the variant's off-maximizer weight elsewhere,
    summed per row of ``A`` and per column of ``R``.
    """
    terms = A[rows] + R[:, cols].T  # (batch, r)
    _, pi = select_maximizers(terms[:, :, None], tie_rng)
    pi = pi[:, 0]
    r = A.shape[1]
    onehot = pi[:, None] == np.arange(r)[None, :]
    if config.variant == "GDMN":
        weight = np.where(onehot, 1.0, config.eps(k))
    else:
        weight = onehot.astype(np.float64)
    g = (terms - y[:, None]) * weight
    gA = np.zeros_like(A)
    gRt = np.zeros((R.shape[1], r))
    np.add.at(gA, rows, g)
    np.add.at(gRt, cols, g)
    A_new = A - config.alpha * gA
    R_new = R - config.alpha * gRt.T
    if config.variant in ("GDAN_ZM", "GDAN_NZM"):
        c = config.noise_scale * config.eps(k)
        low = -c if config.variant == "GDAN_ZM" else 0.0
        A_new = A_new + noise_rng.uniform(low, c, size=A.shape)
        R_new = R_new + noise_rng.uniform(low, c, size=R.shape)
    return A_new, R_new


@dataclass
class FitResult:
    model: TropicalModel
    epochs_run: int
    best_epoch: int
    val_history: List[float]


def fit_stochastic(data: ImplicitMatrix, model: Tuple, config: SgdConfig = SgdConfig(),
                   init: Optional[Tuple[np.ndarray, np.ndarray]] = None) -> FitResult:
    """Minibatch descent on the train cells with early stopping on validation RMS.

    ``model`` is ``("tmf", r)`` or ``("tc", m, p)``. Returns the snapshot with
    the best validation RMS.
    """
    kind = model[0]
    n, p_items = data.Y.shape
    if kind == "tmf":
        inner, rank = int(model[1]), None
    elif kind == "tc":
        inner, rank = int(model[1]), int(model[2])
    else:
        raise ValueError(f"unknown model {kind!r}")
    rows, cols, y = data.entries("train")
    if len(rows) == 0:
        raise ValueError("train mask is empty")
    v_rows, v_cols, v_y = data.entries("validation")

    if init is None:
        rng = derive_rng(config.seed, "init")
        A = rng.uniform(0.0, 1.0, size=(n, inner))
        R = rng.uniform(0.0, 1.0, size=(inner, p_items))
    else:
        A, R = (np.array(x, dtype=np.float64) for x in init)
    if rank is not None:
        R = rank_projection(R, rank)

    shuffle_rng = derive_rng(config.seed, "batches")
    tie_rng = derive_rng(config.seed, "ties")
    noise_rng = derive_rng(config.seed, "noise")
    best = (np.inf, 0, A, R)
    history = []
    stale = 0
    step = 0
    epoch = 0
    for epoch in range(1, config.max_epochs + 1):
        order = shuffle_rng.permutation(len(rows))
        for s in range(0, len(order), config.batch_size):
            idx = np.sort(order[s:s + config.batch_size])
            A, R = batch_update(A, R, rows[idx], cols[idx], y[idx], config, step, tie_rng, noise_rng)
            if rank is not None:
                R = rank_projection(R, rank)
            step += 1
        current = TropicalModel(kind, A, R, rank)
        val = rms(current, data.Y, data.validation) if len(v_rows) else float("nan")
        history.append(val)
        logger.info("epoch %d: validation rms %.4f", epoch, val)
        if val < best[0]:
            best = (val, epoch, A.copy(), R.copy())
            stale = 0
        else:
            stale += 1
            if config.patience and stale >= config.patience:
                break
    if not np.isfinite(best[0]):
        best = (best[0], epoch, A, R)
    return FitResult(TropicalModel(kind, best[2], best[3], rank), epochs_run=epoch,
                     best_epoch=best[1], val_history=history)


def evaluate(data: ImplicitMatrix, fit: FitResult, seed: int = 0) -> dict:
    m = fit.model
    out = {
        "rms_validation": rms(m, data.Y, data.validation),
        "rms_test": rms(m, data.Y, data.test),
        "hr_at_10": hit_rate_at_10(m, data.Y, data.test, seed=seed),
        "epochs_run": fit.epochs_run,
        "best_epoch": fit.best_epoch,
    }
    if m.kind == "tc":
        out["rank_C"] = numerical_rank(m.right)
    return out


def sweep(data: ImplicitMatrix, models: Sequence[Tuple], config: SgdConfig):
    """Fit each model and pick the one with the lowest validation RMS."""
    results = []
    for spec in models:
        fit = fit_stochastic(data, spec, config)
        results.append((spec, fit, rms(fit.model, data.Y, data.validation)))
    best = min(results, key=lambda t: t[2])
    return best, results
