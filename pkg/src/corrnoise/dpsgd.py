"""Toy mini-batch DP-SGD with correlated noise.

Each step clips per-example gradients, averages them over the batch and adds
z~_t / B, where z~_t is the t-th row of C^{-1} Z.  A noiseless twin run with
the same batches provides the reference for error reporting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ParameterError
from .noisegen import NoiseSource, make_generator
from .privacy import PrivacyTarget, calibrate_nu
from .sensitivity import ParticipationSchema, strategy_sensitivity
from .strategies import Strategy


@dataclass(frozen=True)
class SyntheticProblem:
    """``constant2d``: every example has gradient (-1, 0).
    ``linreg``: squared loss on Gaussian features with covariance diag(eigenvalues).
    """

    kind: str = "constant2d"
    eigenvalues: tuple[float, ...] = (1.0, 1.0)
    theta_star: tuple[float, ...] = (1.0, 1.0)
    realizable: bool = True
    label_noise: float = 0.1
    num_examples: int = 10_000
    data_seed: int = 0
    theta0: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in ("constant2d", "linreg"):
            raise ParameterError(f"unknown problem {self.kind!r}")
        if self.kind == "linreg":
            if len(self.eigenvalues) != len(self.theta_star):
                raise ParameterError("eigenvalues and theta_star must have equal length")
            if min(self.eigenvalues) <= 0:
                raise ParameterError("covariance eigenvalues must be positive")
        if self.num_examples < 1:
            raise ParameterError("num_examples must be positive")

    @property
    def dim(self) -> int:
        return 2 if self.kind == "constant2d" else len(self.theta_star)

    def initial_theta(self) -> np.ndarray:
        if self.theta0 is not None:
            return np.array(self.theta0, dtype=float)
        return np.zeros(self.dim)

    def dataset(self):
        if self.kind == "constant2d":
            return None
        rng = np.random.default_rng(self.data_seed)
        X = rng.standard_normal((self.num_examples, self.dim)) * np.sqrt(self.eigenvalues)
        y = X @ np.asarray(self.theta_star)
        if not self.realizable:
            y = y + self.label_noise * rng.standard_normal(self.num_examples)
        return X, y

    def per_example_gradients(self, theta, idx, data) -> np.ndarray:
        if self.kind == "constant2d":
            return np.tile([-1.0, 0.0], (len(idx), 1))
        X, y = data
        Xb = X[idx]
        resid = Xb @ theta - y[idx]
        return resid[:, None] * Xb


@dataclass
class TrainingRun:
    thetas: np.ndarray
    grad_rmse: float
    prefix_rmse: float
    per_step_prefix_error: np.ndarray
    nu: float
    noiseless_thetas: np.ndarray = field(repr=False, default=None)


def clip(v, zeta: float) -> np.ndarray:
    """v * min(1, zeta / ||v||); rows are clipped independently for 2-D input."""
    if zeta <= 0:
        raise ParameterError("clip norm must be positive")
    v = np.asarray(v, dtype=float)
    norms = np.linalg.norm(v, axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(norms > zeta, zeta / norms, 1.0)
    return v * scale


def batch_indices(schema: ParticipationSchema, t: int, batch: int, num_examples: int, n: int):
    """Deterministic batches consistent with the participation schema."""
    if schema.kind == "full":
        return np.arange(num_examples)
    if schema.kind == "single":
        slot, slots = t, n
    else:
        slot, slots = t % schema.b, schema.b
    if slots * batch > num_examples:
        raise ConfigurationError(
            f"{slots} disjoint batches of size {batch} need {slots * batch} examples"
        )
    return np.arange(slot * batch, (slot + 1) * batch)


def run_dpsgd(
    problem: SyntheticProblem,
    strategy: Strategy,
    schema: ParticipationSchema,
    eta: float,
    zeta: float,
    batch: int,
    steps: int,
    seed: int,
    mu: float | None = None,
    nu: float | None = None,
    adjacency: str = "zero_out",
) -> TrainingRun:
    """Run DP-SGD and its noiseless twin; exactly one of ``mu`` / ``nu`` is given.

    With ``mu`` the noise multiplier is calibrated as zeta * sens(C) / mu
    (times 2 for replace-one); ``mu = inf`` means no noise.
    """
    if steps != strategy.n:
        raise ConfigurationError(f"strategy covers {strategy.n} steps, run has {steps}")
    try:
        schema.validate(steps)
    except ParameterError as exc:
        raise ConfigurationError(str(exc)) from exc
    if (mu is None) == (nu is None):
        raise ConfigurationError("give exactly one of mu and nu")
    if nu is None:
        if math.isinf(mu):
            nu = 0.0
        else:
            sens = strategy_sensitivity(strategy, schema).value
            nu = zeta * calibrate_nu(sens, PrivacyTarget(mu, adjacency))
    if nu < 0:
        raise ParameterError("nu must be nonnegative")
    batch_size = problem.num_examples if schema.kind == "full" else batch
    data = problem.dataset()
    source = NoiseSource(seed, nu, problem.dim)
    gen = make_generator(strategy, source)

    theta = problem.initial_theta()
    twin = theta.copy()
    thetas = [theta.copy()]
    twins = [twin.copy()]
    diff_sum = np.zeros(problem.dim)
    grad_sq = np.zeros(steps)
    prefix_sq = np.zeros(steps)
    for t in range(steps):
        idx = batch_indices(schema, t, batch_size, problem.num_examples, steps)
        g_avg = clip(problem.per_example_gradients(theta, idx, data), zeta).mean(axis=0)
        g_twin = clip(problem.per_example_gradients(twin, idx, data), zeta).mean(axis=0)
        noisy = g_avg + gen.next() / batch_size
        theta = theta - eta * noisy
        twin = twin - eta * g_twin
        diff = noisy - g_twin
        diff_sum += diff
        grad_sq[t] = diff @ diff
        prefix_sq[t] = diff_sum @ diff_sum
        thetas.append(theta.copy())
        twins.append(twin.copy())
    return TrainingRun(
        np.array(thetas),
        math.sqrt(grad_sq.mean()),
        math.sqrt(prefix_sq.mean()),
        prefix_sq,
        nu,
        np.array(twins),
    )


def monte_carlo(problem, strategy, schema, seeds, **kwargs) -> dict:
    """Mean and standard deviation of the run errors across seeds 0..seeds-1."""
    runs = [run_dpsgd(problem, strategy, schema, seed=s, **kwargs) for s in range(seeds)]
    grad = np.array([r.grad_rmse for r in runs])
    prefix = np.array([r.prefix_rmse for r in runs])
    per_step = np.mean([r.per_step_prefix_error for r in runs], axis=0)
    return {
        "seeds": seeds,
        "nu": runs[0].nu,
        "grad_rmse_mean": float(grad.mean()),
        "grad_rmse_std": float(grad.std()),
        "prefix_rmse_mean": float(prefix.mean()),
        "prefix_rmse_std": float(prefix.std()),
        "mean_sq_prefix_error": per_step.tolist(),
    }
