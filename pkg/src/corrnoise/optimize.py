"""Strategy optimization: dense Gram matrices, banded Toeplitz and BLT.

All problems go through :func:`minimize_smooth`, a limited-memory BFGS with
Armijo backtracking and an optional gradient transform (used to project onto
affine constraint sets).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from scipy import linalg, optimize, signal

from .errors import (
    ConfigurationError,
    DegenerateParameterError,
    IndefiniteSolutionError,
    ParameterError,
)
from .sensitivity import ParticipationSchema, toeplitz_minsep_vector
from .strategies import DEGENERACY_TOL, Strategy, inverse_toeplitz_coeffs, optimal_toeplitz_coeffs
from .workloads import WorkloadSpec, check_materializable, materialize_workload, workload_coefficients

LOSSES = ("max", "rms")
MAX_BUFFERS = 10


@dataclass(frozen=True)
class OptimizerConfig:
    max_iterations: int = 500
    gradient_tolerance: float = 1e-8
    # relative objective change below which a run is considered stalled-converged
    value_tolerance: float = 1e-14
    memory_pairs: int = 10
    barrier_weight: float = 1e-3
    barrier_restarts: int = 3
    seed: int = 0

    def __post_init__(self):
        for name in ("max_iterations", "gradient_tolerance", "value_tolerance",
                     "memory_pairs", "barrier_weight"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive")
        if self.barrier_restarts < 0:
            raise ConfigurationError("barrier_restarts must be nonnegative")


class MinimizeOutcome(NamedTuple):
    x: np.ndarray
    value: float
    iterations: int
    converged: bool
    gradient_norm: float


@dataclass
class OptimizationResult:
    strategy: Strategy
    objective: float
    iterations: int
    converged: bool
    certificate: float | None = None
    initial_objective: float | None = None


ObjectiveFn = Callable[[np.ndarray], "tuple[float, np.ndarray]"]


def _safe_eval(fun: ObjectiveFn, x: np.ndarray):
    f, g = fun(x)
    if not np.isfinite(f):
        return math.inf, g
    return float(f), g


def minimize_smooth(
    fun: ObjectiveFn,
    x0,
    config: OptimizerConfig | None = None,
    transform: Callable[[np.ndarray], np.ndarray] | None = None,
) -> MinimizeOutcome:
    """L-BFGS minimization of a smooth function returning (value, gradient).

    ``transform`` maps raw gradients to the feasible direction space (for
    example a projection); iterates stay on x0 + range(transform).
    Non-finite values are treated as +inf and rejected by the line search.
    """
    config = config or OptimizerConfig()
    proj = transform or (lambda g: g)
    x = np.array(x0, dtype=float)
    f, g = _safe_eval(fun, x)
    if not np.isfinite(f):
        raise ParameterError("objective is not finite at the initial point")
    g = proj(g)
    s_hist: list[np.ndarray] = []
    y_hist: list[np.ndarray] = []
    gnorm = float(np.max(np.abs(g))) if g.size else 0.0
    if gnorm <= config.gradient_tolerance:
        return MinimizeOutcome(x, f, 0, True, gnorm)

    converged = False
    stalls = 0
    flat = 1e-14
    it = 0
    for it in range(1, config.max_iterations + 1):
        d = -_two_loop(g, s_hist, y_hist)
        slope = float(g @ d)
        if slope >= 0:
            s_hist.clear()
            y_hist.clear()
            d = -g
            slope = float(g @ d)
        step = 1.0
        if not s_hist:
            step = min(1.0, 1.0 / max(np.linalg.norm(g), 1e-300))
        accepted = False
        for _ in range(40):
            x_new = x + step * d
            f_new, g_new = _safe_eval(fun, x_new)
            if f_new <= f + 1e-4 * step * slope:
                accepted = True
                break
            # near the optimum f is flat to rounding; fall back on the slope
            # (approximate Armijo: the directional derivative must stay bounded)
            if f_new <= f + flat * abs(f) and float(g_new @ d) <= -(1 - 2e-4) * slope:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        g_new = proj(g_new)
        s = x_new - x
        y = g_new - g
        if float(s @ y) > 1e-12 * float(np.linalg.norm(s) * np.linalg.norm(y)):
            s_hist.append(s)
            y_hist.append(y)
            if len(s_hist) > config.memory_pairs:
                s_hist.pop(0)
                y_hist.pop(0)
        f_old, gnorm_old = f, gnorm
        x, f, g = x_new, f_new, g_new
        gnorm = float(np.max(np.abs(g)))
        if gnorm <= config.gradient_tolerance:
            converged = True
            break
        # a stall is an iteration that improves neither the value nor the gradient
        if f_old - f <= config.value_tolerance * max(1.0, abs(f)) and gnorm >= gnorm_old:
            stalls += 1
            if stalls >= 5:
                converged = True
                break
        else:
            stalls = 0
    return MinimizeOutcome(x, f, it, converged, gnorm)


def _two_loop(g, s_hist, y_hist) -> np.ndarray:
    q = g.copy()
    alphas = []
    rhos = [1.0 / float(y @ s) for s, y in zip(s_hist, y_hist)]
    for s, y, rho in zip(reversed(s_hist), reversed(y_hist), reversed(rhos)):
        a = rho * float(s @ q)
        alphas.append(a)
        q -= a * y
    if s_hist:
        s, y = s_hist[-1], y_hist[-1]
        q *= float(s @ y) / float(y @ y)
    for (s, y, rho), a in zip(zip(s_hist, y_hist, rhos), reversed(alphas)):
        b = rho * float(y @ q)
        q += (a - b) * s
    return q


# dense Gram-matrix optimization --------------------------------------

def gram_to_strategy(M: np.ndarray) -> np.ndarray:
    """Lower-triangular C with C^T C = M.

    Cholesky of the flipped matrix J M J = L L^T gives C = J L^T J.
    """
    flipped = M[::-1, ::-1]
    try:
        L = np.linalg.cholesky(flipped)
    except np.linalg.LinAlgError as exc:
        raise IndefiniteSolutionError("optimized Gram matrix is not positive definite") from exc
    return L.T[::-1, ::-1].copy()


class _GramProblem:
    """tr(A M^{-1} A^T) over a linear parameterization of symmetric M."""

    def __init__(self, AtA: np.ndarray, rows, cols, diag_free: bool, base: np.ndarray):
        self.AtA = AtA
        self.rows = np.asarray(rows, dtype=int)
        self.cols = np.asarray(cols, dtype=int)
        self.diag_free = diag_free
        self.base = base
        self.n = AtA.shape[0]

    def matrix(self, x: np.ndarray) -> np.ndarray:
        M = self.base.copy()
        off = x[self.n:] if self.diag_free else x
        if self.diag_free:
            M[np.diag_indices(self.n)] = x[: self.n]
        M[self.rows, self.cols] = off
        M[self.cols, self.rows] = off
        return M

    def __call__(self, x: np.ndarray):
        M = self.matrix(x)
        try:
            cho = linalg.cho_factor(M, lower=True, check_finite=False)
        except linalg.LinAlgError:
            return math.inf, np.zeros_like(x)
        X = linalg.cho_solve(cho, self.AtA, check_finite=False)
        value = float(np.trace(X))
        G = -linalg.cho_solve(cho, X.T, check_finite=False)
        grad_off = 2.0 * G[self.rows, self.cols]
        if self.diag_free:
            return value, np.concatenate([np.diag(G), grad_off])
        return value, grad_off


def _gram_result(problem: _GramProblem, out: MinimizeOutcome, sens_sq: float, initial: float):
    M = problem.matrix(out.x)
    C = gram_to_strategy(M)
    n = problem.n
    objective = math.sqrt(sens_sq * out.value / n)
    return OptimizationResult(
        Strategy.dense(C), objective, out.iterations, out.converged, out.gradient_norm,
        math.sqrt(sens_sq * initial / n),
    )


def _workload_gram(workload: WorkloadSpec, n: int) -> np.ndarray:
    if workload.n != n:
        raise ConfigurationError(f"workload has n={workload.n}, requested n={n}")
    check_materializable(n)
    A = materialize_workload(workload)
    return A.T @ A


def optimize_dense_streaming(workload: WorkloadSpec, n: int, config=None) -> OptimizationResult:
    """Minimize RMS loss over dense strategies with unit column norms.

    Variables are the off-diagonal entries of M = C^T C with diag(M) = 1;
    positive definiteness is not imposed, only checked at the end.
    """
    config = config or OptimizerConfig()
    AtA = _workload_gram(workload, n)
    rows, cols = np.tril_indices(n, -1)
    problem = _GramProblem(AtA, rows, cols, False, np.eye(n))
    x0 = np.zeros(rows.size)
    initial = problem(x0)[0]
    out = minimize_smooth(problem, x0, config)
    return _gram_result(problem, out, 1.0, initial)


def optimize_dense_multi(
    workload: WorkloadSpec, n: int, schema: ParticipationSchema, config=None
) -> OptimizationResult:
    """Dense RMS optimization under multiple participation.

    cyclic: entries linking two steps of the same pattern are zero and each
    pattern's diagonal sums to 1 (kept by projecting diagonal gradients onto
    zero-sum per pattern).  minsep: diag(M) = 1 and M is b-banded.  full: the
    only feasible point with unit diagonal is M = I.
    """
    config = config or OptimizerConfig()
    schema.validate(n)
    if schema.kind == "single":
        return optimize_dense_streaming(workload, n, config)
    AtA = _workload_gram(workload, n)
    if schema.kind == "full":
        problem = _GramProblem(AtA, [], [], False, np.eye(n))
        value = problem(np.zeros(0))[0]
        return OptimizationResult(
            Strategy.dense(np.eye(n)), math.sqrt(n * value / n), 0, True, 0.0, math.sqrt(value)
        )
    rows, cols = np.tril_indices(n, -1)
    if schema.kind == "cyclic":
        b, k = schema.b, schema.k
        keep = (rows - cols) % b != 0
        rows, cols = rows[keep], cols[keep]
        problem = _GramProblem(AtA, rows, cols, True, np.zeros((n, n)))
        labels = np.arange(n) % b

        def project(g):
            g = g.copy()
            diag = g[:n]
            means = np.bincount(labels, weights=diag, minlength=b) / k
            g[:n] = diag - means[labels]
            return g

        x0 = np.concatenate([np.full(n, 1.0 / k), np.zeros(rows.size)])
        initial = problem(x0)[0]
        out = minimize_smooth(problem, x0, config, transform=project)
        return _gram_result(problem, out, 1.0, initial)
    # minsep: b-banded with unit diagonal; sensitivity^2 = k since every
    # selected column contributes 1 and banded off-diagonals never meet
    keep = (rows - cols) < schema.b
    rows, cols = rows[keep], cols[keep]
    problem = _GramProblem(AtA, rows, cols, False, np.eye(n))
    x0 = np.zeros(rows.size)
    initial = problem(x0)[0]
    out = minimize_smooth(problem, x0, config)
    return _gram_result(problem, out, float(schema.k), initial)


# Toeplitz-family objectives ------------------------------------------

def _corr_transpose(v: np.ndarray, g: np.ndarray) -> np.ndarray:
    """T(v)^T g for the lower-triangular Toeplitz matrix T(v)."""
    n = g.size
    return signal.fftconvolve(g[::-1], v)[:n][::-1]


class _ToeplitzLoss:
    """sens(c)^2 * error(c)^2 and its gradient with respect to the full first column."""

    def __init__(self, workload: WorkloadSpec, schema: ParticipationSchema, loss: str):
        if loss not in LOSSES:
            raise ConfigurationError(f"loss must be one of {LOSSES}")
        self.a = workload_coefficients(workload)
        self.n = workload.n
        self.schema = schema
        self.loss = loss
        n = self.n
        self.weights = np.ones(n) if loss == "max" else np.arange(n, 0, -1) / n

    def sens_sq(self, c: np.ndarray):
        if self.schema.kind == "single":
            return float(c @ c), 2.0 * c
        sep, k = self.schema.b, self.schema.k
        v = toeplitz_minsep_vector(c, sep, k)
        grad = np.zeros(self.n)
        for j in range(k):
            shift = j * sep
            if shift >= self.n:
                break
            grad[: self.n - shift] += 2.0 * v[shift:]
        return float(v @ v), grad

    def __call__(self, c: np.ndarray):
        if c[0] == 0:
            return math.inf, np.zeros_like(c)
        cinv = inverse_toeplitz_coeffs(c)
        if not np.all(np.isfinite(cinv)):
            return math.inf, np.zeros_like(c)
        b = signal.lfilter(self.a, [1.0], cinv)
        err_sq = float(self.weights @ (b * b))
        g_b = 2.0 * self.weights * b
        g_cinv = signal.lfilter(self.a, [1.0], g_b[::-1])[::-1]
        sq = signal.fftconvolve(cinv, cinv)[: self.n]
        g_err = -_corr_transpose(sq, g_cinv)
        s_sq, g_sens = self.sens_sq(c)
        value = s_sq * err_sq
        return value, s_sq * g_err + err_sq * g_sens


def _check_schema_for_toeplitz(schema: ParticipationSchema, n: int) -> None:
    schema.validate(n)
    if schema.kind == "full":
        raise ConfigurationError("full-batch participation is handled by optimize_dense_multi")


def optimize_banded_toeplitz(
    workload: WorkloadSpec,
    n: int,
    bands: int,
    schema: ParticipationSchema | None = None,
    config=None,
    loss: str = "max",
) -> OptimizationResult:
    """Optimize the first ``bands`` Toeplitz coefficients with c_0 fixed to 1.

    For cyclic / Min-Sep schemas the band count must not exceed the separation,
    so the early-and-often pattern gives the exact sensitivity.
    """
    config = config or OptimizerConfig()
    schema = schema or ParticipationSchema.single()
    if workload.n != n:
        raise ConfigurationError(f"workload has n={workload.n}, requested n={n}")
    if not 1 <= bands <= n:
        raise ConfigurationError(f"bands must lie in [1, {n}]")
    _check_schema_for_toeplitz(schema, n)
    if schema.kind in ("cyclic", "minsep") and bands > schema.b:
        raise ConfigurationError("bands must not exceed the participation separation")
    objective = _ToeplitzLoss(workload, schema, loss)

    def fun(x):
        c = np.zeros(n)
        c[0] = 1.0
        c[1:bands] = x
        value, grad = objective(c)
        return value, grad[1:bands]

    x0 = optimal_toeplitz_coeffs(bands)[1:]
    initial = fun(x0)[0]
    if bands == 1:
        out = MinimizeOutcome(x0, initial, 0, True, 0.0)
    else:
        out = minimize_smooth(fun, x0, config)
    coeffs = np.concatenate(([1.0], out.x))
    return OptimizationResult(
        Strategy.banded(coeffs, n), math.sqrt(out.value), out.iterations, out.converged,
        out.gradient_norm, math.sqrt(initial),
    )


def _blt_initial(n: int, d: int) -> tuple[np.ndarray, np.ndarray]:
    """Fit sum_i alpha_i lambda_i^(t-1) to the square-root coefficients."""
    target = optimal_toeplitz_coeffs(n)[1:]
    # decay time scales spread geometrically between 1 and n
    scales = np.geomspace(1.0, max(float(n), 2.0), d + 2)[1:-1] if d > 1 else np.array([math.sqrt(n)])
    lam = np.exp(-1.0 / scales)
    basis = lam[None, :] ** np.arange(n - 1)[:, None]
    alpha, _ = optimize.nnls(basis, target) if n > 1 else (np.full(d, 0.1), 0.0)
    alpha = np.maximum(alpha, 1e-4)
    return alpha, lam


def optimize_blt(
    workload: WorkloadSpec,
    n: int,
    d: int,
    schema: ParticipationSchema | None = None,
    config=None,
    loss: str = "max",
) -> OptimizationResult:
    """Optimize BLT(alpha, lambda) with a log barrier on alpha > 0, 0 < lambda < 1.

    The barrier weight is halved after each warm restart; the reported
    objective is the loss without the barrier term.
    """
    config = config or OptimizerConfig()
    schema = schema or ParticipationSchema.single()
    if workload.n != n:
        raise ConfigurationError(f"workload has n={workload.n}, requested n={n}")
    if not 0 <= d <= MAX_BUFFERS:
        raise ConfigurationError(f"buffer count must lie in [0, {MAX_BUFFERS}]")
    _check_schema_for_toeplitz(schema, n)
    if d == 0:
        from .loss import evaluate_loss

        strategy = Strategy.identity(n)
        rep = evaluate_loss(workload, strategy, schema)
        value = rep.normalized_max_loss if loss == "max" else rep.normalized_rms_loss
        return OptimizationResult(strategy, value, 0, True, 0.0, value)
    objective = _ToeplitzLoss(workload, schema, loss)
    t = np.arange(n - 1)

    def loss_and_grad(x):
        alpha, lam = x[:d], x[d:]
        if np.any(alpha <= 0) or np.any(lam <= 0) or np.any(lam >= 1):
            return math.inf, np.zeros_like(x)
        powers = lam[None, :] ** t[:, None]
        c = np.concatenate(([1.0], powers @ alpha))
        value, g_c = objective(c)
        g = g_c[1:]
        g_alpha = powers.T @ g
        dpow = np.zeros_like(powers)
        dpow[1:] = t[1:, None] * lam[None, :] ** (t[1:, None] - 1)
        g_lam = alpha * (dpow.T @ g)
        return value, np.concatenate([g_alpha, g_lam])

    def make_fun(weight):
        def fun(x):
            value, grad = loss_and_grad(x)
            if not np.isfinite(value):
                return value, grad
            alpha, lam = x[:d], x[d:]
            barrier = -np.sum(np.log(alpha)) - np.sum(np.log(lam) + np.log1p(-lam))
            g_bar = np.concatenate([-1.0 / alpha, -1.0 / lam + 1.0 / (1.0 - lam)])
            return value + weight * barrier, grad + weight * g_bar
        return fun

    alpha0, lam0 = _blt_initial(n, d)
    x = np.concatenate([alpha0, lam0])
    initial = loss_and_grad(x)[0]
    rng = np.random.default_rng(config.seed)
    perturbed = False
    while True:
        weight = config.barrier_weight
        iterations = 0
        out = None
        for _ in range(config.barrier_restarts + 1):
            out = minimize_smooth(make_fun(weight), x, config)
            x = out.x
            iterations += out.iterations
            weight *= 0.5
        lam = x[d:]
        if d < 2 or np.min(np.diff(np.sort(lam))) >= DEGENERACY_TOL:
            break
        if perturbed:
            raise DegenerateParameterError("BLT decays collided after a perturbed restart")
        perturbed = True
        x = x * (1.0 + 1e-3 * rng.standard_normal(x.size))
        x[d:] = np.clip(x[d:], 1e-6, 1 - 1e-6)
        x[:d] = np.abs(x[:d])
    value = loss_and_grad(x)[0]
    final_grad = out.gradient_norm
    strategy = Strategy.blt(x[:d], x[d:], n)
    return OptimizationResult(
        strategy, math.sqrt(value), iterations, out.converged, final_grad, math.sqrt(initial)
    )
