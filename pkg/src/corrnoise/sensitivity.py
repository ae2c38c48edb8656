"""Participation-calibrated l2 sensitivity of strategy matrices.

Zero-out adjacency throughout; replace-one adjacency doubles every value and
is applied by :func:`corrnoise.privacy.calibrate_nu`.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import (
    EnumerationLimitError,
    MonotonicityError,
    ParameterError,
    SchemaError,
    SizeError,
    UnsupportedError,
)
from .strategies import Strategy, materialize_strategy, toeplitz_coefficients

NONNEG_TOL = 1e-12
ENUMERATION_LIMIT = 10**6
BRUTE_FORCE_MAX_N = 22


@dataclass(frozen=True)
class ParticipationSchema:
    """Allowed participation patterns.

    kind: ``single``, ``cyclic`` (b steps per epoch, k epochs), ``minsep``
    (separation b, at most k participations) or ``full``.
    """

    kind: str = "single"
    b: int = 1
    k: int = 1

    def __post_init__(self):
        if self.kind not in ("single", "cyclic", "minsep", "full"):
            raise SchemaError(f"unknown schema {self.kind!r}")
        if self.b < 1 or self.k < 1:
            raise SchemaError("schema parameters must be positive")

    @classmethod
    def single(cls):
        return cls("single")

    @classmethod
    def cyclic(cls, b: int, k: int):
        return cls("cyclic", b, k)

    @classmethod
    def minsep(cls, b: int, k: int):
        return cls("minsep", b, k)

    @classmethod
    def full(cls):
        return cls("full")

    @classmethod
    def parse(cls, text: str) -> "ParticipationSchema":
        """Parse ``single``, ``full``, ``cyclic:B,K`` or ``minsep:B,K``."""
        name, _, rest = text.partition(":")
        if name in ("single", "full") and not rest:
            return cls(name)
        if name in ("cyclic", "minsep"):
            try:
                b, k = (int(x) for x in rest.split(","))
            except ValueError as exc:
                raise SchemaError(f"cannot parse schema {text!r}") from exc
            return cls(name, b, k)
        raise SchemaError(f"cannot parse schema {text!r}")

    def __str__(self):
        if self.kind in ("single", "full"):
            return self.kind
        return f"{self.kind}:{self.b},{self.k}"

    def validate(self, n: int) -> None:
        if self.kind == "cyclic" and self.b * self.k != n:
            raise SchemaError(f"cyclic schema needs b*k = n, got {self.b}*{self.k} != {n}")
        if self.kind == "minsep" and (self.k - 1) * self.b >= n:
            raise SchemaError(f"minsep(b={self.b}, k={self.k}) infeasible for n={n}")

    def max_participations(self, n: int) -> int:
        if self.kind == "single":
            return 1
        if self.kind == "full":
            return n
        return self.k

    def patterns(self, n: int):
        """Iterate over participation patterns (as index tuples); every maximal one is included."""
        self.validate(n)
        if self.kind == "single":
            return ((t,) for t in range(n))
        if self.kind == "full":
            return iter([tuple(range(n))])
        if self.kind == "cyclic":
            return (tuple(range(l, n, self.b)) for l in range(self.b))
        return _minsep_patterns(n, self.b, self.k)


def _minsep_patterns(n: int, b: int, k: int):
    # every nonempty pattern of size <= k: a short pattern can be maximal when
    # the separation leaves no room to extend it (e.g. {1} for n=3, b=2)
    def rec(start, remaining):
        for t in range(start, n):
            yield (t,)
            if remaining > 1:
                for rest in rec(t + b, remaining - 1):
                    yield (t,) + rest

    return rec(0, k)


def count_minsep_patterns(n: int, b: int, k: int) -> int:
    """Number of size-k patterns with pairwise separation >= b."""
    # stars and bars: choose k slots among n - (k-1)(b-1) compressed positions
    free = n - (k - 1) * (b - 1)
    return math.comb(free, k) if free >= k else 0


def count_minsep_patterns_upto(n: int, b: int, k: int) -> int:
    """Number of nonempty patterns of size <= k."""
    return sum(count_minsep_patterns(n, b, r) for r in range(1, k + 1))


@dataclass(frozen=True, eq=False)
class GramMatrix:
    M: np.ndarray
    nonneg_flag: bool

    @classmethod
    def of(cls, C: np.ndarray) -> "GramMatrix":
        M = C.T @ C
        return cls(M, bool(np.all(M >= -NONNEG_TOL)))


class SensitivityResult(NamedTuple):
    value: float
    exact: bool
    method: str


def streaming_sensitivity(strategy: Strategy) -> float:
    """Maximum column norm of C (single participation, zero-out)."""
    if strategy.is_toeplitz:
        # the first column of a lower-triangular Toeplitz matrix has the largest norm
        return float(np.linalg.norm(toeplitz_coefficients(strategy)))
    C = materialize_strategy(strategy)
    if strategy.kind == "tree":
        C = C[1]
    return float(np.sqrt(np.max(np.sum(C * C, axis=0))))


def sensitivity_upper_bound(gram: GramMatrix, schema: ParticipationSchema) -> float:
    """sqrt(max_pi sum_{t,tau in pi} |M[t, tau]|); exact when ``gram.nonneg_flag``."""
    n = gram.M.shape[0]
    schema.validate(n)
    if schema.kind == "minsep":
        count = count_minsep_patterns_upto(n, schema.b, schema.k)
        if count > ENUMERATION_LIMIT:
            raise EnumerationLimitError(
                f"{count} Min-Sep patterns exceed the enumeration limit; use the "
                "banded dynamic program or the Toeplitz closed form instead"
            )
    absM = np.abs(gram.M)
    best = 0.0
    for pattern in schema.patterns(n):
        idx = np.fromiter(pattern, dtype=int)
        best = max(best, float(absM[np.ix_(idx, idx)].sum()))
    return math.sqrt(best)


def minsep_sensitivity_dp(column_sq_norms, b: int, k: int) -> float:
    """Exact Min-Sep sensitivity of a banded strategy (bandwidth <= b).

    Table M[t, l] holds the best reward picking l indices from steps t..n-1.
    """
    r = np.asarray(column_sq_norms, dtype=float)
    n = r.size
    if (k - 1) * b >= n:
        raise SchemaError(f"minsep(b={b}, k={k}) infeasible for n={n}")
    if np.any(r < 0):
        raise ParameterError("rewards must be nonnegative")
    table = np.zeros((n + b + 1, k + 1))
    for ell in range(1, k + 1):
        for t in range(n - 1, -1, -1):
            table[t, ell] = max(r[t] + table[t + b, ell - 1], table[t + 1, ell])
    return math.sqrt(table[0, k])


def toeplitz_minsep_closed_form(coeffs, b: int, k: int) -> float:
    """Norm of the sum of columns 0, b, ..., (k-1)b (early-and-often pattern).

    Valid for nonnegative, nonincreasing Toeplitz coefficients.
    """
    c = np.asarray(coeffs, dtype=float)
    n = c.size
    if np.any(c < 0) or np.any(np.diff(c) > 0):
        raise MonotonicityError("closed form needs nonnegative nonincreasing coefficients")
    total = np.zeros(n)
    for j in range(k):
        shift = j * b
        if shift >= n:
            break
        total[shift:] += c[: n - shift]
    return float(np.linalg.norm(total))


def toeplitz_minsep_vector(coeffs, b: int, k: int) -> np.ndarray:
    """The summed backshifted column, exposed for gradient computations."""
    c = np.asarray(coeffs, dtype=float)
    n = c.size
    total = np.zeros(n)
    for j in range(k):
        shift = j * b
        if shift >= n:
            break
        total[shift:] += c[: n - shift]
    return total


def inf_to_2_norm_bruteforce(C) -> float:
    """max over sign vectors u of ||C u||_2 (the maximum sits at a cube vertex)."""
    C = np.asarray(C, dtype=float)
    n = C.shape[1]
    if n > BRUTE_FORCE_MAX_N:
        raise SizeError(f"brute force over 2^{n} sign vectors is too large")
    if n == 0:
        return 0.0
    M = C.T @ C
    best = 0.0
    # u and -u give the same value: fix u_0 = +1
    rest = n - 1
    chunk = 1 << min(rest, 16)
    for start in range(0, 1 << rest, chunk):
        codes = np.arange(start, min(start + chunk, 1 << rest))
        bits = (codes[:, None] >> np.arange(rest)[None, :]) & 1
        U = np.concatenate([np.ones((codes.size, 1)), 1.0 - 2.0 * bits], axis=1)
        vals = np.einsum("ij,jk,ik->i", U, M, U)
        best = max(best, float(vals.max()))
    return math.sqrt(best)


def _is_monotone_nonneg(c: np.ndarray) -> bool:
    return bool(np.all(c >= 0) and np.all(np.diff(c) <= 0))


def strategy_sensitivity(strategy: Strategy, schema: ParticipationSchema) -> SensitivityResult:
    """Dispatch to the cheapest exact route for (strategy, schema).

    Order: streaming column norm; Toeplitz closed form for monotone coefficients;
    banded dynamic program for Min-Sep when bandwidth <= b; generic Gram bound.
    """
    n = strategy.n
    schema.validate(n)
    if schema.kind == "single":
        return SensitivityResult(streaming_sensitivity(strategy), True, "column_norm")
    if strategy.kind == "tree":
        raise UnsupportedError("tree strategies support only single participation")
    if schema.kind in ("cyclic", "minsep") and strategy.is_toeplitz:
        c = toeplitz_coefficients(strategy)
        if _is_monotone_nonneg(c):
            return SensitivityResult(
                toeplitz_minsep_closed_form(c, schema.b, schema.k), True, "toeplitz_closed_form"
            )
    C = materialize_strategy(strategy)
    gram = GramMatrix.of(C)
    if schema.kind == "minsep" and strategy.bands <= schema.b:
        # banded with bandwidth <= separation: off-diagonal pattern terms vanish
        value = minsep_sensitivity_dp(np.diag(gram.M), schema.b, schema.k)
        return SensitivityResult(value, True, "banded_dp")
    value = sensitivity_upper_bound(gram, schema)
    return SensitivityResult(value, gram.nonneg_flag, "gram_enumeration")
