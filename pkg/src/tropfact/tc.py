"""Tropical compression: ``Y ~ A (max-plus) (B X)`` via rank-constrained descent on ``(A, C)``."""

from __future__ import annotations

import os
from dataclasses import dataclass, fields
from typing import Callable, Optional, Tuple, Union

import numpy as np

from .tmf import (
    _finite_target,
    factor_update,
    make_schedule,
    normalize_variant,
    random_init,
    run_descent,
    write_trace,
)
from .tropical import MaskLike, as_mask_array, check_matrix, maxplus_matmul, write_matrix

RANK_RTOL = 1e-8


class InfeasibleRankError(ValueError):
    """Matrix rank exceeds the requested factorization rank."""


@dataclass
class TcConfig:
    m: int
    p: int
    alpha: float = 0.01
    variant: str = "GDMN"
    eps_schedule: Union[str, float, Callable[[int], float]] = "diminishing"
    noise_scale: float = 0.1
    max_iters: int = 3000
    seed: int = 0
    patience: int = 0

    def __post_init__(self):
        self.variant = normalize_variant(self.variant)
        self.m, self.p = int(self.m), int(self.p)
        if self.m < 1 or self.p < 1:
            raise ValueError("m and p must be positive integers")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be nonnegative")
        if self.max_iters < 0 or self.patience < 0:
            raise ValueError("max_iters and patience must be nonnegative")
        self._eps = make_schedule(self.eps_schedule)

    def eps(self, k: int) -> float:
        return float(self._eps(k))

    def noise_amplitude(self, k: int) -> float:
        return self.noise_scale * self.eps(k)

    def as_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        if callable(d["eps_schedule"]):
            d["eps_schedule"] = getattr(d["eps_schedule"], "__name__", "custom")
        return d


@dataclass
class TcSolution:
    A: np.ndarray
    B: np.ndarray
    X: np.ndarray
    C: np.ndarray
    trace: np.ndarray
    iterations_run: int
    best_iteration: int = 0

    @property
    def objective(self) -> float:
        return float(self.trace[self.best_iteration, 1])

    def save(self, directory) -> None:
        os.makedirs(directory, exist_ok=True)
        for name in ("A", "B", "X", "C"):
            write_matrix(getattr(self, name), os.path.join(directory, f"{name}.csv"))
        write_trace(self.trace, os.path.join(directory, "trace.csv"))


def numerical_rank(C, rtol: float = RANK_RTOL) -> int:
    s = np.linalg.svd(np.asarray(C, dtype=np.float64), compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def rank_projection(C, p: int) -> np.ndarray:
    """Best Frobenius approximation of ``C`` with rank at most ``p``."""
    C = np.asarray(C, dtype=np.float64)
    if C.ndim != 2:
        raise ValueError("C must be two-dimensional")
    if p < 1:
        raise ValueError("p must be at least 1")
    if p >= min(C.shape):
        return C.copy()
    U, s, Vt = np.linalg.svd(C, full_matrices=False)
    return (U[:, :p] * s[:p]) @ Vt[:p]


def rank_factorize(C, p: int) -> Tuple[np.ndarray, np.ndarray]:
    """Split ``C = B X`` with ``B`` m x p and ``X`` p x N.

    Singular values are shared as square roots between the factors; when the
    rank is below ``p`` the extra columns of ``B`` and rows of ``X`` are zero.
    """
    C = np.asarray(C, dtype=np.float64)
    if C.ndim != 2 or p < 1:
        raise ValueError("C must be a matrix and p >= 1")
    m, N = C.shape
    U, s, Vt = np.linalg.svd(C, full_matrices=False)
    rank = 0 if s.size == 0 or s[0] == 0.0 else int(np.sum(s > RANK_RTOL * s[0]))
    if rank > p:
        raise InfeasibleRankError(f"numerical rank {rank} exceeds p={p}")
    B = np.zeros((m, p))
    X = np.zeros((p, N))
    root = np.sqrt(s[:rank])
    B[:, :rank] = U[:, :rank] * root
    X[:rank] = root[:, None] * Vt[:rank]
    return B, X


def tc_predict(A, B, X) -> np.ndarray:
    A = check_matrix(A, "A")
    B = np.asarray(B, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    if B.ndim != 2 or X.ndim != 2 or A.shape[1] != B.shape[0] or B.shape[1] != X.shape[0]:
        raise ValueError(f"shape mismatch: A {A.shape}, B {B.shape}, X {X.shape}")
    return maxplus_matmul(A, B @ X)


def tc_objective(Y, A, B, X, mask: MaskLike = None) -> float:
    Y = check_matrix(Y, "Y")
    P = tc_predict(A, B, X)
    m = as_mask_array(mask, Y.shape)
    d = (P - Y) if m is None else (P - Y)[m]
    return float(np.sum(d * d))


def tc_step(Y, A, C, config: TcConfig, k: int, rng: Optional[np.random.Generator] = None,
            mask: MaskLike = None, noise_rng: Optional[np.random.Generator] = None):
    """One projected update; returns ``(A', C')`` with ``rank(C') <= p``."""
    Y = check_matrix(Y, "Y")
    A = check_matrix(A, "A")
    C = check_matrix(C, "C")
    if A.shape[0] != Y.shape[0] or C.shape[1] != Y.shape[1] or A.shape[1] != C.shape[0]:
        raise ValueError(f"inconsistent shapes: Y {Y.shape}, A {A.shape}, C {C.shape}")
    m = as_mask_array(mask, Y.shape)
    if rng is None:
        rng = np.random.default_rng(config.seed)
    A_new, C_tilde, _ = factor_update(_finite_target(Y, m), A, C, config, k, m,
                                      rng, noise_rng if noise_rng is not None else rng)
    return A_new, rank_projection(C_tilde, config.p)


def tc_fit(Y, config: TcConfig, mask: MaskLike = None, init=None) -> TcSolution:
    """Projected descent on ``(A, C)`` followed by a rank factorization of ``C``.

    ``init`` is ``(A0, C0)`` or ``(A0, B0, X0)``; ``C0`` is projected to rank
    ``p`` before the first step.
    """
    Y = check_matrix(Y, "Y")
    n, N = Y.shape
    if config.p >= n:
        raise ValueError(f"p={config.p} must be below n={n}")
    m = as_mask_array(mask, Y.shape)
    if m is not None and not m.any():
        raise ValueError("observation mask is empty")
    if init is None:
        A0, C0 = random_init(n, config.m, N, config.seed)
    elif len(init) == 3:
        A0 = check_matrix(init[0], "A0").copy()
        C0 = np.asarray(init[1], dtype=np.float64) @ np.asarray(init[2], dtype=np.float64)
    else:
        A0, C0 = check_matrix(init[0], "A0").copy(), check_matrix(init[1], "C0").copy()
    if A0.shape != (n, config.m) or C0.shape != (config.m, N):
        raise ValueError(f"init shapes {A0.shape}, {C0.shape} do not match "
                         f"({n}, {config.m}), ({config.m}, {N})")
    if not np.isfinite(C0).all():
        raise ValueError("C0 must be finite")
    C0 = rank_projection(C0, config.p)
    A, C, trace, k, best_k = run_descent(Y, A0, C0, config, m,
                                         post_step=lambda Ct: rank_projection(Ct, config.p))
    B, X = rank_factorize(C, config.p)
    return TcSolution(A=A, B=B, X=X, C=C, trace=trace, iterations_run=k, best_iteration=best_k)
