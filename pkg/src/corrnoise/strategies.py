"""Strategy matrices C: dense, Toeplitz, banded Toeplitz, BLT and binary tree.

A BLT (buffered linear Toeplitz) strategy with parameters (alpha, lambda) has
first column c_0 = 1, c_t = sum_i alpha_i lambda_i^(t-1).  Its generating
function is

    r(x) = 1 + sum_i alpha_i x / (1 - lambda_i x) = p(x) / q(x),
    q(x) = prod_i (1 - lambda_i x),

so the inverse matrix has generating function q(x) / p(x), which is again a
BLT whose decays are the reciprocal roots of p.  Those are the eigenvalues of
the diagonal-plus-rank-one matrix diag(lambda) - alpha 1^T, because

    det(x I - diag(lambda) + alpha 1^T)
        = prod_i (x - lambda_i) + sum_i alpha_i prod_{j != i} (x - lambda_j)
        = x^d p(1/x).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import linalg, signal, sparse

from .errors import (
    DegenerateParameterError,
    NonRealInverseError,
    ParameterError,
    SingularStrategyError,
    UnsupportedError,
)
from .workloads import check_materializable, toeplitz_lower

KINDS = ("dense", "toeplitz", "banded_toeplitz", "blt", "tree")
TREE_VARIANTS = ("basic", "full_pseudoinverse")
DEGENERACY_TOL = 1e-10
IMAG_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class Strategy:
    """Immutable strategy descriptor.

    Only the fields relevant to ``kind`` are populated: ``matrix`` for dense,
    ``coeffs`` for (banded) Toeplitz, ``alpha``/``lam`` for BLT and ``variant``
    for the tree.
    """

    n: int
    kind: str
    matrix: np.ndarray | None = None
    coeffs: np.ndarray | None = None
    alpha: np.ndarray | None = None
    lam: np.ndarray | None = None
    variant: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"unknown strategy kind {self.kind!r}")
        if self.n < 1:
            raise ParameterError("n must be positive")
        for name in ("matrix", "coeffs", "alpha", "lam"):
            val = getattr(self, name)
            if val is not None:
                arr = np.array(val, dtype=float)
                arr.setflags(write=False)
                object.__setattr__(self, name, arr)
        if self.kind == "dense":
            C = self.matrix
            if C.shape != (self.n, self.n):
                raise ParameterError(f"dense strategy must be {self.n}x{self.n}")
            if np.any(np.triu(C, 1) != 0):
                raise ParameterError("dense strategy must be lower triangular")
            if np.any(np.diag(C) == 0):
                raise SingularStrategyError("dense strategy has a zero diagonal entry")
        elif self.kind in ("toeplitz", "banded_toeplitz"):
            c = self.coeffs
            if c.ndim != 1 or c.size == 0 or c.size > self.n:
                raise ParameterError("Toeplitz coefficients must have length in [1, n]")
            if c[0] == 0:
                raise SingularStrategyError("Toeplitz strategy needs c_0 != 0")
        elif self.kind == "blt":
            a, lam = self.alpha, self.lam
            if a is None or lam is None or a.shape != lam.shape or a.ndim != 1:
                raise ParameterError("BLT needs alpha and lambda of equal length")
            if np.any(a <= 0):
                raise ParameterError("BLT scale parameters must be positive")
            if np.any((lam <= 0) | (lam >= 1)):
                raise ParameterError("BLT decay parameters must lie in (0, 1)")
            _check_distinct(lam, "lambda")
        elif self.kind == "tree":
            if self.variant not in TREE_VARIANTS:
                raise ParameterError(f"unknown tree variant {self.variant!r}")

    # constructors ---------------------------------------------------------
    @classmethod
    def dense(cls, C) -> "Strategy":
        C = np.asarray(C, dtype=float)
        return cls(C.shape[0], "dense", matrix=C)

    @classmethod
    def identity(cls, n: int) -> "Strategy":
        return cls(n, "banded_toeplitz", coeffs=np.ones(1))

    @classmethod
    def toeplitz(cls, coeffs, n: int | None = None) -> "Strategy":
        coeffs = np.asarray(coeffs, dtype=float)
        return cls(n or coeffs.size, "toeplitz", coeffs=coeffs)

    @classmethod
    def banded(cls, coeffs, n: int) -> "Strategy":
        return cls(n, "banded_toeplitz", coeffs=np.asarray(coeffs, dtype=float))

    @classmethod
    def blt(cls, alpha, lam, n: int) -> "Strategy":
        return cls(n, "blt", alpha=np.atleast_1d(alpha), lam=np.atleast_1d(lam))

    @classmethod
    def tree(cls, n: int, variant: str = "basic") -> "Strategy":
        return cls(n, "tree", variant=variant)

    @property
    def is_toeplitz(self) -> bool:
        return self.kind in ("toeplitz", "banded_toeplitz", "blt")

    @property
    def bands(self) -> int:
        """Number of nonzero diagonals (n for non-banded kinds)."""
        if self.kind == "banded_toeplitz":
            return int(self.coeffs.size)
        if self.kind == "dense":
            C = self.matrix
            nz = np.nonzero(C)
            return int((nz[0] - nz[1]).max()) + 1
        return self.n

    def __repr__(self):
        if self.kind == "dense":
            detail = "matrix=..."
        elif self.kind == "blt":
            detail = f"alpha={self.alpha.tolist()}, lam={self.lam.tolist()}"
        elif self.kind == "tree":
            detail = f"variant={self.variant}"
        else:
            detail = f"coeffs[:4]={self.coeffs[:4].tolist()}"
        return f"Strategy(n={self.n}, kind={self.kind}, {detail})"


class InverseBltParams(NamedTuple):
    alpha_hat: np.ndarray
    lambda_hat: np.ndarray


def _check_distinct(values: np.ndarray, name: str) -> None:
    if values.size > 1:
        v = np.sort(values)
        if np.min(np.diff(v)) < DEGENERACY_TOL:
            raise DegenerateParameterError(f"{name} values are not pairwise distinct")


def optimal_toeplitz_coeffs(n: int) -> np.ndarray:
    """Square root of the prefix-sum matrix: c_t = (-1)^t binom(-1/2, t)."""
    if n < 1:
        raise ParameterError("n must be positive")
    t = np.arange(1, n)
    ratios = (2.0 * t - 1.0) / (2.0 * t)
    return np.concatenate(([1.0], np.cumprod(ratios)))


def inverse_toeplitz_coeffs(coeffs) -> np.ndarray:
    """First column of C^{-1} for lower-triangular Toeplitz C.

    Power-series inversion c'_0 = 1/c_0, c'_t = -(1/c_0) sum_{s=1..t} c_s c'_{t-s};
    this is exactly the impulse response of the all-pole filter 1 / c(x).
    """
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs[0] == 0:
        raise SingularStrategyError("Toeplitz strategy with c_0 = 0 is singular")
    impulse = np.zeros(coeffs.size)
    impulse[0] = 1.0
    return signal.lfilter([1.0], coeffs, impulse)


def blt_coeffs(alpha, lam, n: int) -> np.ndarray:
    alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    out = np.zeros(n)
    out[0] = 1.0
    if n > 1 and alpha.size:
        powers = lam[None, :] ** np.arange(n - 1)[:, None]
        out[1:] = powers @ alpha
    return out


def calc_output_scale(lam, lam_hat) -> tuple[np.ndarray, np.ndarray]:
    """Scale parameters (alpha, alpha_hat) making BLT(alpha, lam) and
    BLT(alpha_hat, lam_hat) mutual inverses.

    Does not check the interlacing condition; for non-interlaced inputs the
    returned scales may have either sign.
    """
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    lam_hat = np.atleast_1d(np.asarray(lam_hat, dtype=float))
    if lam.shape != lam_hat.shape:
        raise ParameterError("lambda and lambda_hat must have equal length")
    _check_distinct(lam, "lambda")
    _check_distinct(lam_hat, "lambda_hat")
    cross = lam[:, None] - lam_hat[None, :]
    if lam.size and np.min(np.abs(cross)) < DEGENERACY_TOL:
        raise DegenerateParameterError("lambda and lambda_hat share a value")
    alpha = _product_formula(lam, lam_hat)
    alpha_hat = _product_formula(lam_hat, lam)
    return alpha, alpha_hat


def _product_formula(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    d = x.size
    num = np.prod(x[:, None] - y[None, :], axis=1)
    diff = x[:, None] - x[None, :]
    diff[np.arange(d), np.arange(d)] = 1.0
    return num / np.prod(diff, axis=1)


def blt_invert(alpha, lam) -> InverseBltParams:
    """Parameters of BLT(alpha, lam)^{-1} in O(d^3) time."""
    alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    if alpha.size == 0:
        return InverseBltParams(np.zeros(0), np.zeros(0))
    _check_distinct(lam, "lambda")
    companion = np.diag(lam) - np.outer(alpha, np.ones_like(alpha))
    roots = np.linalg.eigvals(companion)
    if np.max(np.abs(roots.imag)) > IMAG_TOL:
        raise NonRealInverseError(f"inverse decays are complex: {roots}")
    lam_hat = np.sort(roots.real)[::-1]
    _check_distinct(lam_hat, "lambda_hat")
    alpha_hat = _product_formula(lam_hat, lam)
    return InverseBltParams(alpha_hat, lam_hat)


# tree aggregation -------------------------------------------------------

def _dyadic_partition(t: int) -> list[tuple[int, int]]:
    """Maximal dyadic partition of [0, t] as (level, index) pairs, left to right."""
    length = t + 1
    start = 0
    out = []
    for level in range(length.bit_length() - 1, -1, -1):
        if length >> level & 1:
            out.append((level, start >> level))
            start += 1 << level
    return out


def postorder_index(level: int, j: int) -> int:
    """Postorder position of the dyadic node covering [j 2^level, (j+1) 2^level - 1].

    Independent of the total tree size, so padding never renumbers real nodes.
    """
    leaves = (j + 1) << level
    ancestors_ending_here = 0
    ell = level + 1
    while leaves % (1 << ell) == 0:
        ancestors_ending_here += 1
        ell += 1
    return 2 * leaves - bin(leaves).count("1") - 1 - ancestors_ending_here


def tree_partition_nodes(t: int) -> list[int]:
    """Postorder indices of the nodes summed for the prefix ending at t."""
    return [postorder_index(level, j) for level, j in _dyadic_partition(t)]


def _all_nodes(n: int) -> list[tuple[int, int]]:
    levels = max(0, int(np.ceil(np.log2(n)))) if n > 1 else 0
    nodes = []
    for level in range(levels + 1):
        for j in range(((1 << levels) >> level)):
            if (j << level) < n:
                nodes.append((level, j))
    return nodes


def tree_factorization(n: int, variant: str = "basic", as_sparse: bool = False):
    """Return (B, C) with B C = A_pre for the binary-tree mechanism.

    ``basic`` keeps only nodes that occur in some maximal dyadic partition.
    ``full_pseudoinverse`` keeps every node of the zero-padded tree that touches
    a real leaf and decodes with B = A_pre C^+.
    """
    if n < 1:
        raise ParameterError("n must be positive")
    if variant == "basic":
        rows, cols = [], []
        used: dict[int, tuple[int, int]] = {}
        for t in range(n):
            for level, j in _dyadic_partition(t):
                p = postorder_index(level, j)
                used[p] = (level, j)
                rows.append(t)
                cols.append(p)
        order = sorted(used)
        pos = {p: i for i, p in enumerate(order)}
        B = sparse.csr_matrix(
            (np.ones(len(rows)), (rows, [pos[p] for p in cols])), shape=(n, len(order))
        )
        C = _node_matrix([used[p] for p in order], n)
        if as_sparse:
            return B, C
        return B.toarray(), C.toarray()
    if variant == "full_pseudoinverse":
        nodes = sorted(_all_nodes(n), key=lambda lj: postorder_index(*lj))
        C = _node_matrix(nodes, n).toarray()
        gram = C.T @ C
        # C has full column rank (leaves are rows), so C^+ = (C^T C)^{-1} C^T
        pinv = linalg.cho_solve(linalg.cho_factor(gram), C.T)
        B = np.cumsum(pinv, axis=0)
        return B, C
    raise ParameterError(f"unknown tree variant {variant!r}")


def _node_matrix(nodes, n: int) -> sparse.csr_matrix:
    rows, cols = [], []
    for r, (level, j) in enumerate(nodes):
        lo = j << level
        hi = min(n, (j + 1) << level)
        rows.extend([r] * (hi - lo))
        cols.extend(range(lo, hi))
    return sparse.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(nodes), n))


# materialization and transforms ---------------------------------------

def toeplitz_coefficients(strategy: Strategy) -> np.ndarray:
    """Full first column (length n) for Toeplitz-family strategies."""
    if strategy.kind == "blt":
        return blt_coeffs(strategy.alpha, strategy.lam, strategy.n)
    if strategy.kind in ("toeplitz", "banded_toeplitz"):
        out = np.zeros(strategy.n)
        out[: strategy.coeffs.size] = strategy.coeffs
        return out
    raise UnsupportedError(f"{strategy.kind} strategy is not Toeplitz")


def materialize_strategy(strategy: Strategy):
    """Dense n x n lower-triangular C, or the (B, C) pair for trees."""
    check_materializable(strategy.n)
    if strategy.kind == "dense":
        return np.array(strategy.matrix)
    if strategy.kind == "tree":
        return tree_factorization(strategy.n, strategy.variant)
    return toeplitz_lower(toeplitz_coefficients(strategy))


def column_normalize(strategy: Strategy) -> Strategy:
    if strategy.kind == "tree":
        raise UnsupportedError("column normalization of tree strategies is not defined")
    C = materialize_strategy(strategy)
    norms = np.linalg.norm(C, axis=0)
    if np.any(norms == 0):
        raise SingularStrategyError("strategy has a zero column")
    return Strategy.dense(C / norms)


def restart_strategy(strategy: Strategy, k: int) -> Strategy:
    """Block-diagonal strategy running ``strategy`` afresh in each of k epochs."""
    if k < 1:
        raise ParameterError("k must be at least 1")
    if strategy.kind == "tree":
        raise UnsupportedError("restarting tree strategies is not supported")
    C = materialize_strategy(strategy)
    check_materializable(k * strategy.n)
    return Strategy.dense(linalg.block_diag(*([C] * k)))


def strategy_inverse(strategy: Strategy) -> np.ndarray:
    """Materialized C^{-1} (square strategies only)."""
    if strategy.kind == "tree":
        raise UnsupportedError("tree strategies are rectangular")
    check_materializable(strategy.n)
    if strategy.is_toeplitz:
        return toeplitz_lower(inverse_toeplitz_coeffs(toeplitz_coefficients(strategy)))
    C = strategy.matrix
    return linalg.solve_triangular(C, np.eye(strategy.n), lower=True)
