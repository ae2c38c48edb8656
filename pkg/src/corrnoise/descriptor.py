"""Versioned JSON descriptor for mechanisms.

Floats are written in Python's shortest round-trip form, so reading and
re-writing a descriptor reproduces it byte for byte.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, CorrNoiseError
from .strategies import Strategy

VERSION = "1"


def strategy_to_dict(strategy: Strategy, metadata: dict | None = None) -> dict:
    kind = strategy.kind
    if kind == "dense":
        rows, cols = np.tril_indices(strategy.n)
        params = {"c": strategy.matrix[rows, cols].tolist()}
    elif kind in ("toeplitz", "banded_toeplitz"):
        params = {"coeffs": strategy.coeffs.tolist()}
    elif kind == "blt":
        params = {"alpha": strategy.alpha.tolist(), "lambda": strategy.lam.tolist()}
    else:
        params = {"variant": strategy.variant}
    out = {"version": VERSION, "kind": kind, "n": strategy.n, "params": params}
    if metadata:
        out["metadata"] = metadata
    return out


def strategy_from_dict(d: dict) -> Strategy:
    if d.get("version") != VERSION:
        raise ConfigurationError(f"unsupported descriptor version {d.get('version')!r}")
    try:
        kind, n, params = d["kind"], int(d["n"]), d["params"]
        if kind == "dense":
            C = np.zeros((n, n))
            C[np.tril_indices(n)] = params["c"]
            return Strategy.dense(C)
        if kind == "toeplitz":
            return Strategy(n, "toeplitz", coeffs=params["coeffs"])
        if kind == "banded_toeplitz":
            return Strategy.banded(params["coeffs"], n)
        if kind == "blt":
            return Strategy.blt(params["alpha"], params["lambda"], n)
        if kind == "tree":
            return Strategy.tree(n, params["variant"])
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, CorrNoiseError):
            raise
        raise ConfigurationError(f"malformed descriptor: {exc}") from exc
    raise ConfigurationError(f"unknown mechanism kind {kind!r}")


def dumps(strategy: Strategy, metadata: dict | None = None) -> str:
    return json.dumps(strategy_to_dict(strategy, metadata), indent=2) + "\n"


def loads(text: str) -> tuple[Strategy, dict]:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"descriptor is not valid JSON: {exc}") from exc
    if not isinstance(d, dict):
        raise ConfigurationError("descriptor must be a JSON object")
    return strategy_from_dict(d), d.get("metadata", {})


def write(path, strategy: Strategy, metadata: dict | None = None) -> None:
    Path(path).write_text(dumps(strategy, metadata))


def read(path) -> tuple[Strategy, dict]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read descriptor {path}: {exc}") from exc
    return loads(text)
