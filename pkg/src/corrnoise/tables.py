"""Max-error and RMSE comparison tables across mechanism families (prefix sums).

Columns whose values come from an optimizer (BLT, Dense, and the RMS-table
Toeplitz / Col-Norm. Toep. columns, which use the RMS-optimal Toeplitz
strategy) are computed with this package's own optimizers.
"""

from __future__ import annotations

import math

from .loss import column_normalized_toeplitz_loss, toeplitz_fast_loss, tree_loss
from .optimize import OptimizerConfig, optimize_banded_toeplitz, optimize_blt, optimize_dense_streaming
from .strategies import optimal_toeplitz_coeffs
from .workloads import WorkloadSpec

COLUMNS = ("Identity", "Workload", "Full H2", "BLT", "Toeplitz", "Col-Norm. Toep.", "Dense")
TABLES = ("max-error", "rmse")
UNSUPPORTED = {"Streaming H2": "streaming tree decoder is not implemented"}
# dense L-BFGS cost grows roughly 10x per doubling of n; raise explicitly for larger n
DENSE_RMS_LIMIT = 256
BLT_BUFFERS = 4


def _identity(n, rms):
    return math.sqrt((n + 1) / 2.0) if rms else math.sqrt(n)


def _workload(n, rms):
    return math.sqrt(n)


def _full_h2(n, rms):
    rep = tree_loss(n, "full_pseudoinverse")
    return rep.normalized_rms_loss if rms else rep.normalized_max_loss


def _blt(n, rms):
    return optimize_blt(WorkloadSpec.prefix(n), n, BLT_BUFFERS, loss="rms" if rms else "max").objective


def _toeplitz_coeffs(n, rms):
    if rms:
        return optimize_banded_toeplitz(WorkloadSpec.prefix(n), n, n, loss="rms").strategy.coeffs
    return optimal_toeplitz_coeffs(n)


def _toeplitz(n, rms):
    c = _toeplitz_coeffs(n, rms)
    max_err, rms_err = toeplitz_fast_loss([1.0] * n, c)
    sens = math.sqrt(float(c @ c))
    return sens * (rms_err if rms else max_err)


def _col_norm(n, rms):
    max_err, rms_err = column_normalized_toeplitz_loss(_toeplitz_coeffs(n, rms))
    return rms_err if rms else max_err


def _dense(n, rms, dense_limit=DENSE_RMS_LIMIT):
    if not rms or n > dense_limit:
        return None
    return optimize_dense_streaming(WorkloadSpec.prefix(n), n, OptimizerConfig(max_iterations=2000)).objective


CELLS = {
    "Identity": _identity,
    "Workload": _workload,
    "Full H2": _full_h2,
    "BLT": _blt,
    "Toeplitz": _toeplitz,
    "Col-Norm. Toep.": _col_norm,
    "Dense": _dense,
}


def table_cell(name: str, column: str, n: int, dense_limit: int = DENSE_RMS_LIMIT) -> float | None:
    """One table entry; None where the family has no value at this size."""
    if name not in TABLES:
        raise ValueError(f"unknown table {name!r}")
    if column == "Dense":
        return _dense(n, name == "rmse", dense_limit)
    return CELLS[column](n, name == "rmse")


def table_rows(name: str, steps, columns=COLUMNS, dense_limit: int = DENSE_RMS_LIMIT):
    """List of {"n": n, column: value} dicts."""
    rows = []
    for n in steps:
        row = {"n": n}
        for col in columns:
            row[col] = table_cell(name, col, n, dense_limit)
        rows.append(row)
    return rows
