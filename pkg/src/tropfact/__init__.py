"""Tropical (max-plus) matrix factorization and tropical compression."""

from .tropical import (
    NEG_INF,
    MatrixParseError,
    NonFiniteInputError,
    ObservationMask,
    frobenius_error,
    identity,
    maxplus_matmul,
    maxplus_matmul_argmax,
    maxplus_matvec,
    read_matrix,
    write_matrix,
)
from .tmf import TmfConfig, TmfSolution, tmf_fit, tmf_objective, tmf_step
from .tc import (
    InfeasibleRankError,
    TcConfig,
    TcSolution,
    rank_factorize,
    rank_projection,
    tc_fit,
    tc_predict,
    tc_step,
)

__version__ = "0.1.0"
