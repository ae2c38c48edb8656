"""Streaming correlated noise z~_t = (C^{-1} Z)[t, :].

Every row of Z is regenerated on demand from (base_seed, t), so generators
only keep the state their family needs: a ring buffer of the last b-1 outputs
(banded), d decaying buffers (BLT), one running prefix row (tree) or nothing
beyond a precomputed inverse (dense).

Row t of Z is produced as follows (fixed, so outputs are reproducible):

1. key = splitmix64(base_seed + 0x9E3779B97F4A7C15 * (t + 1)) mod 2^64
2. draw 2 * ceil(m / 2) raw 64-bit words from numpy's Philox4x64 keyed by key
3. uniforms u = ((w >> 11) + 0.5) * 2^-53, consumed in pairs (u1, u2)
4. Box-Muller: sqrt(-2 ln u1) cos(2 pi u2), sqrt(-2 ln u1) sin(2 pi u2)

Not cryptographically secure.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import ExhaustedStreamError, ParameterError, UnsupportedError
from .strategies import (
    Strategy,
    blt_invert,
    materialize_strategy,
    strategy_inverse,
    tree_factorization,
    tree_partition_nodes,
)

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    x = (x + GOLDEN) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def row_key(base_seed: int, t: int) -> int:
    return splitmix64((base_seed + GOLDEN * (t + 1)) & MASK64)


@dataclass(frozen=True)
class NoiseSource:
    base_seed: int
    nu: float = 1.0
    m: int = 1

    def __post_init__(self):
        if self.m < 1:
            raise ParameterError("dimension m must be positive")
        if not self.nu >= 0:
            raise ParameterError("nu must be nonnegative")


def standard_normal_row(base_seed: int, t: int, m: int) -> np.ndarray:
    pairs = (m + 1) // 2
    bits = np.random.Philox(key=row_key(base_seed, t)).random_raw(2 * pairs)
    u = ((bits >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    radius = np.sqrt(-2.0 * np.log(u[0::2]))
    angle = 2.0 * np.pi * u[1::2]
    out = np.empty(2 * pairs)
    out[0::2] = radius * np.cos(angle)
    out[1::2] = radius * np.sin(angle)
    return out[:m]


def regenerate_row(source: NoiseSource, t: int) -> np.ndarray:
    """Row t of Z: i.i.d. N(0, nu^2) entries, a pure function of (seed, t)."""
    if t < 0:
        raise ParameterError("row index must be nonnegative")
    if source.nu == 0:
        return np.zeros(source.m)
    return source.nu * standard_normal_row(source.base_seed, t, source.m)


def noise_matrix(source: NoiseSource, rows: int) -> np.ndarray:
    return np.stack([regenerate_row(source, t) for t in range(rows)])


# generators ----------------------------------------------------------

class GeneratorState:
    """Advance-only stream over n steps."""

    def __init__(self, n: int, source: NoiseSource):
        self.n = n
        self.source = source
        self.step = 0

    def next(self) -> np.ndarray:
        if self.step >= self.n:
            raise ExhaustedStreamError(f"stream of {self.n} steps is exhausted")
        out = self._emit(self.step)
        self.step += 1
        return out

    def _emit(self, t: int) -> np.ndarray:
        raise NotImplementedError


def next_noise(state: GeneratorState) -> np.ndarray:
    return state.next()


class BandedGenerator(GeneratorState):
    """Forward substitution with a ring buffer of the last b-1 outputs."""

    def __init__(self, coeffs, n: int, source: NoiseSource):
        super().__init__(n, source)
        self.coeffs = np.asarray(coeffs, dtype=float)
        if self.coeffs[0] == 0:
            raise ParameterError("banded generator needs c_0 != 0")
        self.buffer: deque = deque(maxlen=max(self.coeffs.size - 1, 0) or None)
        self._keep = self.coeffs.size > 1

    def _emit(self, t):
        z = regenerate_row(self.source, t)
        # buffer[0] is the newest output z~_{t-1}
        for j, prev in enumerate(self.buffer, start=1):
            z = z - self.coeffs[j] * prev
        out = z / self.coeffs[0]
        if self._keep:
            self.buffer.appendleft(out)
        return out


class BltGenerator(GeneratorState):
    """d decaying buffers, M[:, i] <- lam_i M[:, i] + w_t.

    With ``inverse=False`` (alpha, lam) parameterize C and the buffers hold past
    outputs: z~_t = z_t - M alpha.  With ``inverse=True`` they parameterize
    C^{-1} and the buffers hold past inputs: z~_t = z_t + M alpha.
    """

    def __init__(self, alpha, lam, n: int, source: NoiseSource, inverse: bool = False):
        super().__init__(n, source)
        self.alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
        self.lam = np.atleast_1d(np.asarray(lam, dtype=float))
        self.inverse = inverse
        self.buffers = np.zeros((source.m, self.alpha.size))

    def _emit(self, t):
        z = regenerate_row(self.source, t)
        if self.inverse:
            out = z + self.buffers @ self.alpha
            fed = z
        else:
            out = z - self.buffers @ self.alpha
            fed = out
        self.buffers = self.buffers * self.lam + fed[:, None]
        return out


class DenseGenerator(GeneratorState):
    """Row t of C^{-1} applied to regenerated rows 0..t (O(t m) per step)."""

    def __init__(self, C, source: NoiseSource):
        C = np.asarray(C, dtype=float)
        super().__init__(C.shape[0], source)
        self.cinv = linalg.solve_triangular(C, np.eye(C.shape[0]), lower=True)

    def _emit(self, t):
        out = np.zeros(self.source.m)
        for tau in range(t + 1):
            w = self.cinv[t, tau]
            if w != 0:
                out += w * regenerate_row(self.source, tau)
        return out


class TreeGenerator(GeneratorState):
    """Difference of consecutive tree prefix estimates (B Z)[t] - (B Z)[t-1].

    Node noise is keyed on the node's postorder index.
    """

    def __init__(self, n: int, source: NoiseSource):
        super().__init__(n, source)
        self.previous = np.zeros(source.m)

    def _emit(self, t):
        current = tree_prefix_noise(self.source, t)
        out = current - self.previous
        self.previous = current
        return out


def tree_prefix_noise(source: NoiseSource, t: int) -> np.ndarray:
    """(B Z)[t]: sum of node noise over the maximal dyadic partition of [0, t]."""
    out = np.zeros(source.m)
    for node in tree_partition_nodes(t):
        out += regenerate_row(source, node)
    return out


def tree_noise_row(state: TreeGenerator, t: int) -> np.ndarray:
    """Stateless access to row t of the tree stream."""
    if t >= state.n:
        raise ExhaustedStreamError(f"stream of {state.n} steps is exhausted")
    current = tree_prefix_noise(state.source, t)
    if t == 0:
        return current
    return current - tree_prefix_noise(state.source, t - 1)


def make_generator(strategy: Strategy, source: NoiseSource, route: str = "direct") -> GeneratorState:
    """Streaming generator for ``strategy``.

    route ``direct`` uses the strategy's own parameters; ``inverse`` (BLT only)
    drives the buffers with the inverse parameters from blt_invert.
    """
    if strategy.kind == "banded_toeplitz" or strategy.kind == "toeplitz":
        return BandedGenerator(strategy.coeffs, strategy.n, source)
    if strategy.kind == "blt":
        if route == "inverse":
            inv = blt_invert(strategy.alpha, strategy.lam)
            return BltGenerator(inv.alpha_hat, inv.lambda_hat, strategy.n, source, inverse=True)
        return BltGenerator(strategy.alpha, strategy.lam, strategy.n, source)
    if strategy.kind == "dense":
        return DenseGenerator(strategy.matrix, source)
    if strategy.variant == "basic":
        return TreeGenerator(strategy.n, source)
    raise UnsupportedError("the pseudoinverse tree has no streaming generator")


def materialized_noise(strategy: Strategy, source: NoiseSource, rows: int | None = None) -> np.ndarray:
    """Reference C^{-1} Z from dense matrices (tree: differenced B Z over node noise)."""
    rows = strategy.n if rows is None else rows
    if strategy.kind == "tree":
        if strategy.variant != "basic":
            raise UnsupportedError("materialized tree noise uses the basic decoder")
        B, _ = tree_factorization(strategy.n, "basic")
        nodes = sorted({p for t in range(strategy.n) for p in tree_partition_nodes(t)})
        Z = np.stack([regenerate_row(source, p) for p in nodes])
        prefix = B @ Z
        return np.diff(prefix, axis=0, prepend=0.0)[:rows]
    Z = noise_matrix(source, strategy.n)
    if strategy.is_toeplitz:
        C = materialize_strategy(strategy)
        return linalg.solve_triangular(C, Z, lower=True)[:rows]
    return (strategy_inverse(strategy) @ Z)[:rows]


def stream(strategy: Strategy, source: NoiseSource, rows: int | None = None, route: str = "direct"):
    gen = make_generator(strategy, source, route)
    rows = strategy.n if rows is None else rows
    return np.stack([gen.next() for _ in range(rows)])


__all__ = [
    "NoiseSource", "GeneratorState", "BandedGenerator", "BltGenerator", "DenseGenerator",
    "TreeGenerator", "regenerate_row", "noise_matrix", "next_noise", "tree_noise_row",
    "tree_prefix_noise", "make_generator", "materialized_noise", "stream",
]
