"""Finite-sample sup-norm half-widths for off-policy CDF estimates.

All logarithms are natural.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

from .core import BandMethod, ConfidenceBand


def _check(n: int, delta: float, w_max: float = 1.0) -> None:
    if int(n) != n or n < 1:
        raise ValueError("n must be a positive integer")
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    if not w_max > 0 or not math.isfinite(w_max):
        raise ValueError("w_max must be positive and finite")


def eps_is_hoeffding(n: int, delta: float, w_max: float) -> float:
    """``sqrt(8 w_max^2 log(4/delta) / n)``."""
    _check(n, delta, w_max)
    return math.sqrt(8.0 * w_max**2 * math.log(4.0 / delta) / n)


def eps_is_bernstein(n: int, delta: float, w_max: float, w_2: float) -> float:
    """``4 w_max log(4/delta) / n + 2 sqrt(2 w_2 log(4/delta) / n)``."""
    _check(n, delta, w_max)
    if not w_2 > 0:
        raise ValueError("w_2 must be positive")
    log_term = math.log(4.0 / delta)
    return 4.0 * w_max * log_term / n + 2.0 * math.sqrt(2.0 * w_2 * log_term / n)


def eps_dr(n: int, delta: float, w_max: float) -> float:
    """``sqrt(72 w_max^2 log(8 sqrt(n) / delta) / n)``; often above 1 (vacuous) at moderate n."""
    _check(n, delta, w_max)
    return math.sqrt(72.0 * w_max**2 * math.log(8.0 * math.sqrt(n) / delta) / n)


def eps_estimated_policy(
    base_eps: float, w_max: float, eps_beta: float, inf_beta_hat: float
) -> float:
    """Widen a band for an estimated behavior policy: ``base + w_max * eps_beta / inf beta_hat``."""
    if base_eps < 0 or eps_beta < 0:
        raise ValueError("base_eps and eps_beta must be nonnegative")
    if not inf_beta_hat > 0:
        raise ValueError("inf_beta_hat must be positive")
    return base_eps + w_max * eps_beta / inf_beta_hat


def eps_dkw(n: int, delta: float) -> float:
    """On-policy DKW band with Massart's constant: ``sqrt(log(2/delta) / (2n))``."""
    _check(n, delta)
    return math.sqrt(math.log(2.0 / delta) / (2.0 * n))


@dataclass(frozen=True)
class BoundInputs:
    """Everything a band computation may need, validated once."""

    n: int
    delta: float
    w_max: float
    w_2: Optional[float] = None
    eps_beta: Optional[float] = None
    inf_beta_hat: Optional[float] = None

    def __post_init__(self):
        _check(self.n, self.delta, self.w_max)
        if self.w_2 is not None and self.w_2 > self.w_max * (1 + 1e-12):
            raise ValueError("w_2 cannot exceed w_max")
        if (self.eps_beta is None) != (self.inf_beta_hat is None):
            raise ValueError("eps_beta and inf_beta_hat must be given together")

    @property
    def estimated_policy(self) -> bool:
        return self.eps_beta is not None


def confidence_band(
    method: BandMethod | str, inputs: BoundInputs, heuristic: bool = False
) -> ConfidenceBand:
    """Build the band for ``method``, adding the estimated-policy term when present.

    With an estimated behavior policy the reported method is
    ``ESTIMATED_POLICY_ADJUSTED``.
    """
    method = BandMethod(method)
    if method is BandMethod.IS_HOEFFDING:
        eps = eps_is_hoeffding(inputs.n, inputs.delta, inputs.w_max)
    elif method is BandMethod.IS_BERNSTEIN:
        if inputs.w_2 is None:
            raise ValueError("the Bernstein band needs w_2")
        eps = eps_is_bernstein(inputs.n, inputs.delta, inputs.w_max, inputs.w_2)
    elif method is BandMethod.DR:
        eps = eps_dr(inputs.n, inputs.delta, inputs.w_max)
    elif method is BandMethod.DKW:
        eps = eps_dkw(inputs.n, inputs.delta)
    else:
        raise ValueError("choose the base band; the estimated-policy term is added automatically")
    if inputs.estimated_policy:
        eps = eps_estimated_policy(eps, inputs.w_max, inputs.eps_beta, inputs.inf_beta_hat)
        method = BandMethod.ESTIMATED_POLICY_ADJUSTED
    return ConfidenceBand(eps, inputs.delta, method, heuristic)
