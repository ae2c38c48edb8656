import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.special import binom

from corrnoise.errors import DegenerateParameterError, NonRealInverseError, SingularStrategyError
from corrnoise.strategies import (
    Strategy,
    blt_coeffs,
    blt_invert,
    calc_output_scale,
    column_normalize,
    inverse_toeplitz_coeffs,
    materialize_strategy,
    optimal_toeplitz_coeffs,
    postorder_index,
    restart_strategy,
    strategy_inverse,
    tree_factorization,
)
from corrnoise.workloads import toeplitz_lower

from conftest import prefix_matrix


def forward_substitution_inverse(C):
    """Independent oracle: invert a lower-triangular matrix column by column."""
    n = C.shape[0]
    X = np.zeros_like(C)
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        for i in range(n):
            X[i, j] = (e[i] - C[i, :i] @ X[:i, j]) / C[i, i]
    return X


def random_blt(rng, d):
    lam = np.sort(rng.uniform(0.05, 0.95, d))[::-1]
    while d > 1 and np.min(-np.diff(lam)) < 0.02:
        lam = np.sort(rng.uniform(0.05, 0.95, d))[::-1]
    alpha = rng.uniform(0.01, 1.0, d)
    alpha *= rng.uniform(0.1, 0.95) / alpha.sum()
    return alpha, lam


def test_optimal_toeplitz_examples():
    np.testing.assert_allclose(optimal_toeplitz_coeffs(4), [1, 0.5, 0.375, 0.3125])
    np.testing.assert_array_equal(optimal_toeplitz_coeffs(1), [1.0])
    assert round(float(np.sum(optimal_toeplitz_coeffs(8) ** 2)), 3) == 1.718


@pytest.mark.parametrize("n", [1, 2, 17, 128, 512])
def test_optimal_toeplitz_squares_to_prefix(n):
    c = optimal_toeplitz_coeffs(n)
    np.testing.assert_allclose(np.convolve(c, c)[:n], np.ones(n), atol=1e-10)
    assert np.all(c > 0) and np.all(np.diff(c) < 0)


def test_inverse_toeplitz_examples():
    np.testing.assert_allclose(inverse_toeplitz_coeffs([1, 0, 0, 0]), [1, 0, 0, 0])
    np.testing.assert_allclose(inverse_toeplitz_coeffs(optimal_toeplitz_coeffs(4)), [1, -0.5, -0.125, -0.0625])
    np.testing.assert_allclose(inverse_toeplitz_coeffs([1, 0.5, 0]), [1, -0.5, 0.25])
    with pytest.raises(SingularStrategyError):
        inverse_toeplitz_coeffs([0.0, 1.0])


def test_inverse_of_square_root_is_binomial():
    t = np.arange(40)
    expected = (-1.0) ** t * binom(0.5, t)
    np.testing.assert_allclose(inverse_toeplitz_coeffs(optimal_toeplitz_coeffs(40)), expected, atol=1e-14)


@given(st.lists(st.floats(-2, 2), min_size=1, max_size=30))
def test_inverse_toeplitz_matches_dense_inverse(tail):
    c = np.array([1.5] + tail)
    inv = inverse_toeplitz_coeffs(c)
    oracle = forward_substitution_inverse(toeplitz_lower(c))[:, 0]
    np.testing.assert_allclose(inv, oracle, rtol=1e-8, atol=1e-8 * (1 + np.abs(oracle).max()))


def test_blt_coeffs_examples():
    np.testing.assert_allclose(blt_coeffs([0.5], [0.5], 4), [1, 0.5, 0.25, 0.125])
    np.testing.assert_array_equal(blt_coeffs([], [], 3), [1, 0, 0])
    np.testing.assert_allclose(blt_coeffs([0.3, 0.2], [0.9, 0.1], 3), [1, 0.5, 0.29])


def test_blt_invert_examples():
    inv = blt_invert([0.5], [0.5])
    np.testing.assert_allclose(inv.alpha_hat, [-0.5])
    np.testing.assert_allclose(inv.lambda_hat, [0.0], atol=1e-15)
    empty = blt_invert([], [])
    assert empty.alpha_hat.size == 0 and empty.lambda_hat.size == 0
    inv = blt_invert([0.25, 0.25], [0.8, 0.2])
    C = toeplitz_lower(blt_coeffs([0.25, 0.25], [0.8, 0.2], 64))
    Cinv = toeplitz_lower(blt_coeffs(inv.alpha_hat, inv.lambda_hat, 64))
    np.testing.assert_allclose(C @ Cinv, np.eye(64), atol=1e-9)


@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_blt_invert_round_trip(d, seed):
    rng = np.random.default_rng(seed)
    alpha, lam = random_blt(rng, d)
    inv = blt_invert(alpha, lam)
    assert np.all(inv.alpha_hat <= 0)
    n = int(rng.integers(2, 257))
    C = toeplitz_lower(blt_coeffs(alpha, lam, n))
    Cinv = toeplitz_lower(blt_coeffs(inv.alpha_hat, inv.lambda_hat, n))
    np.testing.assert_allclose(C @ Cinv, np.eye(n), atol=1e-9)


def test_blt_invert_rejects_complex_roots():
    # positive scales keep the decays real; mixed signs can pair them up
    with pytest.raises(NonRealInverseError):
        blt_invert([0.5, -0.5], [0.9, 0.1])


def test_calc_output_scale_examples():
    alpha, alpha_hat = calc_output_scale([0.5], [0.0])
    np.testing.assert_allclose(alpha, [0.5])
    np.testing.assert_allclose(alpha_hat, [-0.5])
    inv = blt_invert([0.25, 0.25], [0.9, 0.1])
    alpha, _ = calc_output_scale([0.9, 0.1], inv.lambda_hat)
    np.testing.assert_allclose(alpha, [0.25, 0.25], atol=1e-9)
    # interlacing is not enforced
    alpha, alpha_hat = calc_output_scale([0.5], [0.6])
    np.testing.assert_allclose(alpha, [-0.1])
    np.testing.assert_allclose(alpha_hat, [0.1])
    with pytest.raises(DegenerateParameterError):
        calc_output_scale([0.5, 0.5], [0.1, 0.2])


def test_blt_strategy_validation():
    with pytest.raises(DegenerateParameterError):
        Strategy.blt([0.1, 0.1], [0.5, 0.5], 4)
    with pytest.raises(ValueError):
        Strategy.blt([-0.1], [0.5], 4)
    with pytest.raises(ValueError):
        Strategy.blt([0.1], [1.0], 4)


def dyadic_prefix_nodes(t):
    """Oracle: greedy largest aligned blocks covering [0, t]."""
    out, start, length = [], 0, t + 1
    while length:
        size = 1 << (length.bit_length() - 1)
        out.append((start, start + size))
        start += size
        length -= size
    return out


def test_tree_examples():
    B, C = tree_factorization(4)
    assert math.isclose(np.max(np.linalg.norm(B, axis=1)), math.sqrt(2))
    assert math.isclose(np.max(np.linalg.norm(C, axis=0)), math.sqrt(3))
    B, C = tree_factorization(1)
    np.testing.assert_array_equal(B, [[1]])
    np.testing.assert_array_equal(C, [[1]])


@pytest.mark.parametrize("n", [1, 2, 3, 5, 8, 13, 64, 100, 1024])
def test_tree_basic_factorization_exact(n):
    B, C = tree_factorization(n)
    np.testing.assert_array_equal(B @ C, prefix_matrix(n))
    levels = math.ceil(math.log2(n)) if n > 1 else 0
    assert np.max(B.sum(axis=1)) <= max(levels, 1)
    # every kept node is used and C rows are contiguous indicator blocks
    assert np.all(B.sum(axis=0) > 0)
    for row in C:
        idx = np.flatnonzero(row)
        assert np.all(np.diff(idx) == 1)


def test_tree_rows_select_dyadic_partition():
    n = 13
    B, C = tree_factorization(n)
    for t in range(n):
        blocks = {tuple(np.flatnonzero(C[j])[[0, -1]]) for j in np.flatnonzero(B[t])}
        assert blocks == {(a, b - 1) for a, b in dyadic_prefix_nodes(t)}


def test_postorder_index_matches_traversal():
    levels = 5
    order = []

    def visit(level, j):
        if level > 0:
            visit(level - 1, 2 * j)
            visit(level - 1, 2 * j + 1)
        order.append((level, j))

    visit(levels, 0)
    for pos, (level, j) in enumerate(order):
        assert postorder_index(level, j) == pos


@pytest.mark.parametrize("n", [8, 16, 32, 64])
def test_full_pseudoinverse_is_pinv(n):
    B, C = tree_factorization(n, "full_pseudoinverse")
    np.testing.assert_allclose(B, prefix_matrix(n) @ np.linalg.pinv(C), atol=1e-10)


def test_column_normalize_examples():
    np.testing.assert_array_equal(column_normalize(Strategy.identity(3)).matrix, np.eye(3))
    got = column_normalize(Strategy.toeplitz(optimal_toeplitz_coeffs(2))).matrix
    np.testing.assert_allclose(got, [[1 / math.sqrt(1.25), 0], [0.5 / math.sqrt(1.25), 1]])


@given(st.integers(1, 40))
def test_column_normalize_properties(n):
    C_norm = column_normalize(Strategy.toeplitz(optimal_toeplitz_coeffs(n))).matrix
    np.testing.assert_allclose(np.linalg.norm(C_norm, axis=0), 1.0, atol=1e-12)
    A = prefix_matrix(n)
    B = A @ np.linalg.inv(C_norm)
    np.testing.assert_allclose(B @ C_norm, A, atol=1e-10)


def test_restart_examples():
    C = Strategy.dense(prefix_matrix(2))
    np.testing.assert_array_equal(restart_strategy(C, 1).matrix, prefix_matrix(2))
    np.testing.assert_array_equal(restart_strategy(Strategy.identity(2), 2).matrix, np.eye(4))


def test_restart_inverse_is_block_diagonal():
    s = restart_strategy(Strategy.toeplitz(optimal_toeplitz_coeffs(5)), 3)
    inv = strategy_inverse(s)
    for a in range(3):
        for b in range(3):
            if a != b:
                assert np.all(inv[5 * a:5 * a + 5, 5 * b:5 * b + 5] == 0)


def test_materialize_examples():
    np.testing.assert_array_equal(
        materialize_strategy(Strategy.banded([1, 0.5], 3)), [[1, 0, 0], [0.5, 1, 0], [0, 0.5, 1]]
    )
    np.testing.assert_allclose(
        materialize_strategy(Strategy.blt([0.5], [0.5], 3)), [[1, 0, 0], [0.5, 1, 0], [0.25, 0.5, 1]]
    )
    M = np.tril(np.arange(1.0, 10.0).reshape(3, 3))
    np.testing.assert_array_equal(materialize_strategy(Strategy.dense(M)), M)


def test_dense_validation():
    with pytest.raises(ValueError):
        Strategy.dense(np.ones((2, 2)))
    with pytest.raises(SingularStrategyError):
        Strategy.dense(np.diag([1.0, 0.0]))
