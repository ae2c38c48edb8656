"""Lower-triangular Toeplitz workloads (prefix sums, momentum)."""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from .errors import ParameterError, ShapeError, SizeError

DEFAULT_MATERIALIZE_LIMIT = 16384


def materialize_limit() -> int:
    """Largest n for which dense n x n matrices are built.

    Overridable through the ``CORRNOISE_MATERIALIZE_LIMIT`` environment variable.
    """
    raw = os.environ.get("CORRNOISE_MATERIALIZE_LIMIT")
    if raw is None:
        return DEFAULT_MATERIALIZE_LIMIT
    try:
        return int(raw)
    except ValueError as exc:
        raise ParameterError(f"CORRNOISE_MATERIALIZE_LIMIT={raw!r} is not an integer") from exc


def check_materializable(n: int) -> None:
    limit = materialize_limit()
    if n > limit:
        raise SizeError(f"n={n} exceeds the materialization limit {limit}")


@dataclass(frozen=True)
class WorkloadSpec:
    """Toeplitz workload A described by its first column.

    ``kind`` is one of ``"prefix"``, ``"momentum"`` or ``"custom"``.
    """

    n: int
    kind: str = "prefix"
    beta: float = 0.0
    weight_decay: float = 0.0
    coeffs: tuple[float, ...] | None = field(default=None)

    def __post_init__(self):
        if self.n < 1:
            raise ParameterError(f"n must be positive, got {self.n}")
        if self.kind == "momentum":
            for name, val in (("beta", self.beta), ("weight_decay", self.weight_decay)):
                if not 0.0 <= val < 1.0:
                    raise ParameterError(f"{name}={val} outside [0, 1)")
        elif self.kind == "custom":
            if self.coeffs is None or len(self.coeffs) != self.n:
                raise ShapeError("custom workload needs exactly n coefficients")
            if self.coeffs[0] == 0:
                raise ParameterError("custom workload needs a nonzero diagonal a_0")
            object.__setattr__(self, "coeffs", tuple(float(c) for c in self.coeffs))
        elif self.kind != "prefix":
            raise ParameterError(f"unknown workload kind {self.kind!r}")

    @classmethod
    def prefix(cls, n: int) -> "WorkloadSpec":
        return cls(n, "prefix")

    @classmethod
    def momentum(cls, n: int, beta: float, weight_decay: float = 0.0) -> "WorkloadSpec":
        return cls(n, "momentum", beta=beta, weight_decay=weight_decay)

    @classmethod
    def custom(cls, coeffs) -> "WorkloadSpec":
        coeffs = tuple(float(c) for c in coeffs)
        return cls(len(coeffs), "custom", coeffs=coeffs)

    def to_dict(self) -> dict:
        out = {"n": self.n, "kind": self.kind}
        if self.kind == "momentum":
            out.update(beta=self.beta, weight_decay=self.weight_decay)
        elif self.kind == "custom":
            out["coeffs"] = list(self.coeffs)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "WorkloadSpec":
        if d["kind"] == "custom":
            return cls.custom(d["coeffs"])
        return cls(int(d["n"]), d["kind"], beta=d.get("beta", 0.0),
                   weight_decay=d.get("weight_decay", 0.0))


def workload_coefficients(spec: WorkloadSpec) -> np.ndarray:
    """First column a_0, ..., a_{n-1} of the workload matrix.

    Momentum weights a_t = sum_tau beta^tau (1 - lambda)^(t - tau) are produced by
    the forward recursion a_t = (1 - lambda) a_{t-1} + beta^t, which avoids the
    cancellation of the closed-form ratio when beta is close to 1 - lambda.
    """
    n = spec.n
    if spec.kind == "prefix":
        return np.ones(n)
    if spec.kind == "custom":
        return np.asarray(spec.coeffs, dtype=float)
    decay = 1.0 - spec.weight_decay
    a = np.empty(n)
    a[0] = 1.0
    beta_pow = 1.0
    for t in range(1, n):
        beta_pow *= spec.beta
        a[t] = decay * a[t - 1] + beta_pow
    return a


def workload_matvec(spec: WorkloadSpec, v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape[0] != spec.n:
        raise ShapeError(f"expected leading dimension {spec.n}, got {v.shape[0]}")
    if spec.kind == "prefix":
        return np.cumsum(v, axis=0)
    a = workload_coefficients(spec)
    # causal FIR filter == multiplication by the lower-triangular Toeplitz matrix
    return signal.lfilter(a, [1.0], v, axis=0)


def materialize_workload(spec: WorkloadSpec) -> np.ndarray:
    check_materializable(spec.n)
    return toeplitz_lower(workload_coefficients(spec))


def toeplitz_lower(coeffs, n: int | None = None) -> np.ndarray:
    """Dense lower-triangular Toeplitz matrix with the given first column.

    ``coeffs`` shorter than ``n`` are zero-padded (banded matrices).
    """
    coeffs = np.asarray(coeffs, dtype=float)
    if n is None:
        n = coeffs.shape[0]
    col = np.zeros(n)
    m = min(n, coeffs.shape[0])
    col[:m] = coeffs[:m]
    idx = np.arange(n)
    diff = idx[:, None] - idx[None, :]
    out = np.where(diff >= 0, col[np.clip(diff, 0, n - 1)], 0.0)
    return out
