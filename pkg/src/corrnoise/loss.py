"""Max and RMS loss of a factorization A = B C.

error(B) is either the largest row norm of B (max) or ||B||_F / sqrt(n) (rms);
the normalized loss multiplies it by the sensitivity of C.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import linalg, signal

from .errors import ShapeError, UnsupportedError
from .sensitivity import ParticipationSchema, strategy_sensitivity
from .strategies import (
    Strategy,
    blt_invert,
    inverse_toeplitz_coeffs,
    materialize_strategy,
    toeplitz_coefficients,
    tree_factorization,
)
from .workloads import (
    WorkloadSpec,
    check_materializable,
    materialize_workload,
    workload_coefficients,
)

EULER_GAMMA = 0.5772156649015329


@dataclass
class LossReport:
    sensitivity: float
    max_error: float
    rms_error: float
    normalized_max_loss: float
    normalized_rms_loss: float
    sensitivity_exact: bool = True
    calibrated_nu: float | None = None

    @classmethod
    def build(cls, sens: float, max_error: float, rms_error: float, exact: bool = True):
        return cls(sens, max_error, rms_error, sens * max_error, sens * rms_error, exact)

    def to_dict(self) -> dict:
        return asdict(self)


def _prefix_filter(a: np.ndarray, x: np.ndarray) -> np.ndarray:
    return signal.lfilter(a, [1.0], x)


def toeplitz_fast_loss(workload_coeffs, strategy_coeffs) -> tuple[float, float]:
    """(max_error, rms_error) for Toeplitz A and C without forming matrices.

    B is Toeplitz with first column b = a * c' (c' the inverse coefficients).
    Row t of B has squared norm sum_{s<=t} b_s^2, so the last row dominates,
    and ||B||_F^2 = sum_t (n - t) b_t^2.
    """
    a = np.asarray(workload_coeffs, dtype=float)
    c = np.asarray(strategy_coeffs, dtype=float)
    if a.shape != c.shape:
        raise ShapeError("workload and strategy coefficients must have equal length")
    n = a.size
    b = _prefix_filter(a, inverse_toeplitz_coeffs(c))
    sq = b * b
    max_error = math.sqrt(sq.sum())
    rms_error = math.sqrt(np.dot(np.arange(n, 0, -1), sq) / n)
    return max_error, rms_error


def matrix_errors(B: np.ndarray) -> tuple[float, float]:
    row_sq = np.sum(B * B, axis=1)
    return math.sqrt(row_sq.max()), math.sqrt(row_sq.sum() / B.shape[0])


def decoder_matrix(workload: WorkloadSpec, strategy: Strategy) -> np.ndarray:
    """B = A C^{-1}, via a triangular solve for square strategies."""
    if strategy.kind == "tree":
        if workload.kind != "prefix":
            raise UnsupportedError("tree decoders are defined for the prefix workload only")
        return tree_factorization(workload.n, strategy.variant)[0]
    A = materialize_workload(workload)
    C = materialize_strategy(strategy)
    # B C = A  <=>  C^T B^T = A^T with C^T upper triangular
    return linalg.solve_triangular(C.T, A.T, lower=False).T


def evaluate_loss(
    workload: WorkloadSpec,
    strategy: Strategy,
    schema: ParticipationSchema | None = None,
    fast: bool = True,
) -> LossReport:
    """Sensitivity, errors and normalized losses of (A, C) under ``schema``."""
    schema = schema or ParticipationSchema.single()
    if workload.n != strategy.n:
        raise ShapeError(f"workload n={workload.n} but strategy n={strategy.n}")
    sens = strategy_sensitivity(strategy, schema)
    if fast and strategy.is_toeplitz:
        max_err, rms_err = toeplitz_fast_loss(
            workload_coefficients(workload), toeplitz_coefficients(strategy)
        )
    else:
        max_err, rms_err = matrix_errors(decoder_matrix(workload, strategy))
    return LossReport.build(sens.value, max_err, rms_err, sens.exact)


# large-n routes --------------------------------------------------------

def column_normalized_toeplitz_loss(coeffs) -> tuple[float, float]:
    """(max_error, rms_error) of the column-normalized Toeplitz strategy for
    prefix sums, in O(n) memory.

    With D the column norms, C_norm^{-1} = D C^{-1}, so rows of B satisfy
    B[t] = B[t-1] + d_t C^{-1}[t].  Sensitivity is 1 by construction.
    """
    c = np.asarray(coeffs, dtype=float)
    n = c.size
    d = np.sqrt(np.cumsum(c * c))[::-1]
    cinv = inverse_toeplitz_coeffs(c)
    row = np.zeros(n)
    best = 0.0
    total = 0.0
    for t in range(n):
        row[: t + 1] += d[t] * cinv[t::-1]
        sq = float(np.dot(row[: t + 1], row[: t + 1]))
        best = max(best, sq)
        total += sq
    return math.sqrt(best), math.sqrt(total / n)


def tree_loss(n: int, variant: str = "basic") -> LossReport:
    """Single-participation loss of the tree mechanism from its explicit (B, C)."""
    if variant == "basic":
        B, C = tree_factorization(n, "basic", as_sparse=True)
        row_sq = np.asarray(B.multiply(B).sum(axis=1)).ravel()
        col_sq = np.asarray(C.multiply(C).sum(axis=0)).ravel()
    else:
        check_materializable(n)
        B, C = tree_factorization(n, variant)
        row_sq = np.sum(B * B, axis=1)
        col_sq = np.sum(C * C, axis=0)
    sens = math.sqrt(col_sq.max())
    return LossReport.build(sens, math.sqrt(row_sq.max()), math.sqrt(row_sq.sum() / n))


# BLT closed forms ------------------------------------------------------

def _geom(x, n: int):
    """gamma_n(x) = sum_{t<n} x^t."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = (1.0 - x**n) / (1.0 - x)
    return np.where(np.isclose(x, 1.0, rtol=0, atol=1e-15), float(n), out)


def _weighted_geom(x, n: int):
    """sum_{t<n} (n - t) x^t = sum_{j=1..n} gamma_j(x)."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = (n - x * _geom(x, n)) / (1.0 - x)
    return np.where(np.isclose(x, 1.0, rtol=0, atol=1e-15), n * (n + 1) / 2.0, out)


def blt_sensitivity_closed_form(alpha, lam, n: int) -> float:
    """Column norm of BLT(alpha, lam): 1 + sum_ij a_i a_j gamma_{n-1}(l_i l_j)."""
    alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    if alpha.size == 0 or n == 1:
        return 1.0
    g = _geom(np.outer(lam, lam), n - 1)
    return math.sqrt(1.0 + alpha @ g @ alpha)


def blt_error_closed_form(alpha_hat, lam_hat, n: int) -> tuple[float, float]:
    """(max_error, rms_error) for prefix sums with C^{-1} = BLT(alpha_hat, lam_hat).

    b_t = 1 + sum_i ah_i gamma_t(lh_i); summing b_t^2 (plain or weighted by n - t)
    reduces to sums of geometric series, O(d^2).
    """
    ah = np.atleast_1d(np.asarray(alpha_hat, dtype=float))
    lh = np.atleast_1d(np.asarray(lam_hat, dtype=float))
    one_minus = 1.0 - lh
    pair = np.outer(lh, lh)
    denom = np.outer(one_minus, one_minus)

    # plain sums over t < n
    g1 = (n - _geom(lh, n)) / one_minus
    g2 = (n - _geom(lh, n)[:, None] - _geom(lh, n)[None, :] + _geom(pair, n)) / denom
    max_sq = n + 2.0 * ah @ g1 + ah @ g2 @ ah

    # sums weighted by (n - t)
    tri = n * (n + 1) / 2.0
    w = _weighted_geom(lh, n)
    h1 = (tri - w) / one_minus
    h2 = (tri - w[:, None] - w[None, :] + _weighted_geom(pair, n)) / denom
    frob_sq = tri + 2.0 * ah @ h1 + ah @ h2 @ ah
    return math.sqrt(max_sq), math.sqrt(frob_sq / n)


def blt_closed_form_loss(alpha, lam, n: int) -> LossReport:
    """Single-participation prefix-sum loss of a BLT strategy in O(d^3)."""
    inv = blt_invert(alpha, lam)
    sens = blt_sensitivity_closed_form(alpha, lam, n)
    max_err, rms_err = blt_error_closed_form(inv.alpha_hat, inv.lambda_hat, n)
    return LossReport.build(sens, max_err, rms_err)


# analytic reference values -------------------------------------------

def dense_max_loss_bounds(n: int) -> tuple[float, float]:
    """Lower and upper bounds on the optimal normalized max loss for prefix sums."""
    return math.log(2 * n + 1) / math.pi, 1.0 + math.log(n) / math.pi


def toeplitz_max_loss_bound(n: int) -> float:
    return (EULER_GAMMA + math.log(n)) / math.pi + 1.0


def column_normalized_max_loss_bound(n: int) -> float:
    return math.log(n) / math.pi + 1.0


def tree_max_loss_bound(n: int) -> float:
    levels = math.ceil(math.log2(n)) if n > 1 else 0
    return math.sqrt(levels * (1 + levels))
