"""Tropical matrix factorization: ``Y ~ A (max-plus) B`` by perturbed gradient descent."""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, fields
from typing import Callable, List, Optional, Tuple, Union

import numpy as np

from .seeding import derive_rng
from .tropical import (
    MaskLike,
    NonFiniteInputError,
    as_mask_array,
    check_matrix,
    maxplus_matmul,
    select_maximizers,
    tropical_terms,
    write_matrix,
)

logger = logging.getLogger(__name__)

VARIANTS = ("GD", "GDMN", "GDAN_ZM", "GDAN_NZM")


def diminishing_eps(k: int) -> float:
    return 9.0 / (500.0 + k)


def normalize_variant(name: str) -> str:
    v = str(name).strip().upper().replace("-", "_")
    if v not in VARIANTS:
        raise ValueError(f"unknown variant {name!r}; expected one of {', '.join(VARIANTS)}")
    return v


def make_schedule(spec) -> Callable[[int], float]:
    """``"diminishing"`` (alias ``"sched"``), a constant, or a callable."""
    if callable(spec):
        return spec
    if isinstance(spec, str) and spec.strip().lower() in ("diminishing", "sched", "default"):
        return diminishing_eps
    value = float(spec)
    if value < 0:
        raise ValueError("eps must be nonnegative")
    return lambda k: value


@dataclass
class TmfConfig:
    r: int
    alpha: float = 0.01
    variant: str = "GDMN"
    eps_schedule: Union[str, float, Callable[[int], float]] = "diminishing"
    noise_scale: float = 0.1
    max_iters: int = 3000
    seed: int = 0
    patience: int = 0

    def __post_init__(self):
        self.variant = normalize_variant(self.variant)
        if int(self.r) < 1:
            raise ValueError("r must be a positive integer")
        self.r = int(self.r)
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
class TmfSolution:
    A: np.ndarray
    B: np.ndarray
    trace: np.ndarray  # rows of (iteration, objective)
    iterations_run: int
    best_iteration: int = 0

    @property
    def objective(self) -> float:
        return float(self.trace[self.best_iteration, 1])

    def save(self, directory) -> None:
        os.makedirs(directory, exist_ok=True)
        write_matrix(self.A, os.path.join(directory, "A.csv"))
        write_matrix(self.B, os.path.join(directory, "B.csv"))
        write_trace(self.trace, os.path.join(directory, "trace.csv"))


def write_trace(trace: np.ndarray, path) -> None:
    with open(path, "w", newline="") as f:
        f.write("iteration,objective\n")
        for it, obj in trace:
            f.write(f"{int(it)},{obj:.17g}\n")


def read_kv_file(path) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    with open(path) as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value")
            key, value = line.split("=", 1)
            out[key.strip().replace("-", "_")] = value.strip()
    return out


def _coerce(cls, raw: dict) -> dict:
    types = {f.name: f.type for f in fields(cls)}
    out = {}
    for key, value in raw.items():
        if key not in types:
            raise ValueError(f"unknown config key {key!r}")
        t = str(types[key])
        if t == "int":
            out[key] = int(value)
        elif t == "float":
            out[key] = float(value)
        else:
            out[key] = value
    return out


def config_from_file(cls, path, **overrides):
    raw = _coerce(cls, read_kv_file(path))
    raw.update({k: v for k, v in overrides.items() if v is not None})
    return cls(**raw)


def _finite_target(Y: np.ndarray, mask: Optional[np.ndarray]) -> np.ndarray:
    """Y with unobserved cells zeroed; raises if an observed cell is not finite."""
    if mask is None:
        if not np.isfinite(Y).all():
            raise NonFiniteInputError("Y has a non-finite entry")
        return Y
    if not np.isfinite(Y[mask]).all():
        raise NonFiniteInputError("Y has a non-finite entry inside the mask")
    return np.where(mask, Y, 0.0)


def factor_update(Y, A, B, config, k, mask, tie_rng, noise_rng):
    """One simultaneous update of ``(A, B)``.

    ``Y`` must already be sanitized (see ``_finite_target``). Returns
    ``(A', B', objective_before)`` where the objective is the squared masked
    residual of the incoming iterate; it falls out of the same term tensor.
    """
    terms = tropical_terms(A, B)  # (n, r, p)
    values, pi = select_maximizers(terms, tie_rng)
    cell_resid = values - Y
    if mask is not None:
        cell_resid = np.where(mask, cell_resid, 0.0)
    if not np.isfinite(cell_resid).all():
        raise NonFiniteInputError("product is -inf at an observed cell")
    objective = float(np.sum(cell_resid * cell_resid))

    r = A.shape[1]
    onehot = pi[:, None, :] == np.arange(r)[None, :, None]
    if config.variant == "GDMN":
        weight = np.where(onehot, 1.0, config.eps(k))
    else:
        weight = onehot.astype(np.float64)
    if mask is not None:
        weight = weight * mask[:, None, :]
    finite = np.isfinite(terms)
    resid = np.where(finite, terms - Y[:, None, :], 0.0)
    g = resid * weight
    A_new = A - config.alpha * g.sum(axis=2)
    B_new = B - config.alpha * g.sum(axis=0)

    if config.variant in ("GDAN_ZM", "GDAN_NZM"):
        c = config.noise_amplitude(k)
        low = -c if config.variant == "GDAN_ZM" else 0.0
        A_new = A_new + noise_rng.uniform(low, c, size=A.shape)
        B_new = B_new + noise_rng.uniform(low, c, size=B.shape)
    return A_new, B_new, objective


def tmf_step(Y, A, B, config: TmfConfig, k: int, mask: MaskLike = None,
             rng: Optional[np.random.Generator] = None,
             noise_rng: Optional[np.random.Generator] = None):
    """Single update step; returns ``(A', B')``.

    ``rng`` drives tie-breaking; GDAN noise comes from ``noise_rng`` (falls
    back to ``rng``).
    """
    Y = check_matrix(Y, "Y")
    A = check_matrix(A, "A")
    B = check_matrix(B, "B")
    _check_shapes(Y, A, B)
    m = as_mask_array(mask, Y.shape)
    if rng is None:
        rng = np.random.default_rng(config.seed)
    if noise_rng is None:
        noise_rng = rng
    A_new, B_new, _ = factor_update(_finite_target(Y, m), A, B, config, k, m, rng, noise_rng)
    return A_new, B_new


def tmf_objective(Y, A, B, mask: MaskLike = None) -> float:
    """Squared masked Frobenius norm of ``Y - A (max-plus) B``."""
    Y = check_matrix(Y, "Y")
    P = maxplus_matmul(A, B)
    if P.shape != Y.shape:
        raise ValueError(f"product shape {P.shape} does not match Y {Y.shape}")
    m = as_mask_array(mask, Y.shape)
    y, p = (Y, P) if m is None else (Y[m], P[m])
    if not (np.isfinite(y).all() and np.isfinite(p).all()):
        raise NonFiniteInputError("non-finite entry inside the observation mask")
    d = y - p
    return float(np.sum(d * d))


def _check_shapes(Y, A, B):
    if A.shape[0] != Y.shape[0] or B.shape[1] != Y.shape[1] or A.shape[1] != B.shape[0]:
        raise ValueError(f"inconsistent shapes: Y {Y.shape}, A {A.shape}, B {B.shape}")


def random_init(n: int, r: int, p: int, seed: int):
    """Uniform [0, 1] factors from the ``init`` stream of ``seed``."""
    rng = derive_rng(seed, "init")
    A0 = rng.uniform(0.0, 1.0, size=(n, r))
    B0 = rng.uniform(0.0, 1.0, size=(r, p))
    return A0, B0


def run_descent(Y, A, B, config, mask, post_step=None):
    """Shared iteration loop for the TMF and TC solvers.

    Records the objective of every iterate (``max_iters + 1`` entries when
    the budget is exhausted). With ``patience > 0`` it stops once the best
    objective has not improved for ``patience`` iterations and returns the
    best iterate; otherwise it returns the last one.
    """
    m = as_mask_array(mask, Y.shape)
    Yt = _finite_target(Y, m)
    tie_rng = derive_rng(config.seed, "ties")
    noise_rng = derive_rng(config.seed, "noise")

    trace: List[Tuple[int, float]] = []
    best = (np.inf, 0, A, B)
    stale = 0
    k = 0
    while True:
        if k < config.max_iters:
            A_next, B_next, obj = factor_update(Yt, A, B, config, k, m, tie_rng, noise_rng)
        else:
            obj = _objective_sanitized(Yt, A, B, m)
        trace.append((k, obj))
        if obj < best[0]:
            best = (obj, k, A, B)
            stale = 0
        else:
            stale += 1
        if k >= config.max_iters or (config.patience > 0 and stale >= config.patience):
            break
        if post_step is not None:
            B_next = post_step(B_next)
        A, B = A_next, B_next
        k += 1

    trace_arr = np.array(trace, dtype=np.float64)
    if config.patience > 0:
        return best[2], best[3], trace_arr, k, best[1]
    return A, B, trace_arr, k, k


def _objective_sanitized(Yt, A, B, m) -> float:
    P = maxplus_matmul(A, B)
    d = P - Yt
    if m is not None:
        d = np.where(m, d, 0.0)
    if not np.isfinite(d).all():
        raise NonFiniteInputError("product is -inf at an observed cell")
    return float(np.sum(d * d))


def tmf_fit(Y, config: TmfConfig, mask: MaskLike = None,
            init: Optional[Tuple[np.ndarray, np.ndarray]] = None) -> TmfSolution:
    Y = check_matrix(Y, "Y")
    n, p = Y.shape
    if config.r >= min(n, p):
        logger.warning("r=%d is not below min(n, p)=%d; a trivial factorization exists",
                       config.r, min(n, p))
    m = as_mask_array(mask, Y.shape)
    if m is not None and not m.any():
        raise ValueError("observation mask is empty")
    if init is None:
        A0, B0 = random_init(n, config.r, p, config.seed)
    else:
        A0, B0 = (check_matrix(init[0], "A0").copy(), check_matrix(init[1], "B0").copy())
        if A0.shape != (n, config.r) or B0.shape != (config.r, p):
            raise ValueError(f"init shapes {A0.shape}, {B0.shape} do not match "
                             f"({n}, {config.r}), ({config.r}, {p})")
    A, B, trace, k, best_k = run_descent(Y, A0, B0, config, m)
    logger.debug("tmf_fit: %d iterations, objective %.6g", k, trace[best_k, 1])
    return TmfSolution(A=A, B=B, trace=trace, iterations_run=k, best_iteration=best_k)
