"""Noise calibration for Gaussian DP and conversions between accountings."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

from .errors import ParameterError

ADJACENCIES = ("zero_out", "replace_one")


@dataclass(frozen=True)
class PrivacyTarget:
    """mu-GDP target under the given adjacency notion."""

    mu: float
    adjacency: str = "zero_out"

    def __post_init__(self):
        if not (self.mu > 0 and math.isfinite(self.mu)):
            raise ParameterError(f"mu must be finite and positive, got {self.mu}")
        if self.adjacency not in ADJACENCIES:
            raise ParameterError(f"adjacency must be one of {ADJACENCIES}")

    @property
    def sensitivity_factor(self) -> float:
        # replacing an example can move a clipped gradient by twice the clip norm
        return 2.0 if self.adjacency == "replace_one" else 1.0


class AmplifiedEquivalent(NamedTuple):
    n_prime: int
    p_prime: float
    nu_prime: float


def calibrate_nu(sensitivity: float, target: PrivacyTarget) -> float:
    """Noise standard deviation for the sum of (unit-clipped) gradients."""
    if sensitivity < 0:
        raise ParameterError("sensitivity must be nonnegative")
    return target.sensitivity_factor * sensitivity / target.mu


def mu_from_nu(nu: float, sensitivity: float, adjacency: str = "zero_out") -> float:
    """Inverse of :func:`calibrate_nu`."""
    if nu <= 0:
        raise ParameterError("nu must be positive")
    factor = 2.0 if adjacency == "replace_one" else 1.0
    return factor * sensitivity / nu


def gdp_to_zcdp(mu: float) -> float:
    """rho of the zCDP guarantee implied by mu-GDP."""
    if mu < 0:
        raise ParameterError("mu must be nonnegative")
    return mu * mu / 2.0


def amplification_reduction(
    n: int, bands: int, batch: int, dataset: int, nu: float, colnorm: float
) -> AmplifiedEquivalent:
    """Parameters of the plain DP-SGD run whose accounting covers a b-banded
    mechanism with block-cyclic Poisson sampling.

    This is a parameter mapping only; (epsilon, delta) accounting is left to
    external tools.
    """
    if bands < 1 or n % bands:
        raise ParameterError(f"bands={bands} must divide n={n}")
    if batch < 1 or dataset < 1:
        raise ParameterError("batch and dataset sizes must be positive")
    p_prime = batch * bands / dataset
    if p_prime > 1:
        raise ParameterError(f"sampling probability {p_prime} exceeds 1")
    if colnorm <= 0:
        raise ParameterError("colnorm must be positive")
    return AmplifiedEquivalent(n // bands, p_prime, nu / colnorm)
