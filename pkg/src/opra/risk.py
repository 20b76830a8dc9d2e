"""Law-invariant risk functionals evaluated exactly on step CDFs.

Each functional knows its Lipschitz constant with respect to the sup-norm
distance between CDFs on ``[0, D]`` (``None`` when no constant exists, as for
the quantile / value-at-risk).
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .core import StepFunction

Distortion = Callable[[np.ndarray], np.ndarray]

_CHECK_GRID = np.linspace(0.0, 1.0, 1025)


def _apply(g: Callable, s: np.ndarray) -> np.ndarray:
    """Evaluate ``g`` on an array, falling back to elementwise calls for scalar-only code."""
    s = np.asarray(s, dtype=np.float64)
    try:
        out = np.asarray(g(s), dtype=np.float64)
        if out.shape == s.shape:
            return out
    except (TypeError, ValueError):
        pass
    return np.array([float(g(float(v))) for v in s.reshape(-1)]).reshape(s.shape)


def check_distortion(g: Callable, monotone: bool = True, name: str = "distortion") -> None:
    """Reject ``g`` unless ``g(0)=0``, ``g(1)=1``, values in ``[0, 1]`` (and nondecreasing)."""
    vals = _apply(g, _CHECK_GRID)
    tol = 1e-12
    if abs(vals[0]) > tol or abs(vals[-1] - 1.0) > tol:
        raise ValueError(f"{name} must satisfy g(0) = 0 and g(1) = 1")
    if np.any(vals < -tol) or np.any(vals > 1 + tol):
        raise ValueError(f"{name} must map [0, 1] into [0, 1]")
    if monotone and np.any(np.diff(vals) < -tol):
        raise ValueError(f"{name} must be nondecreasing")


# -- distortions -------------------------------------------------------------

def identity(s):
    return np.asarray(s, dtype=np.float64)


identity.lipschitz = 1.0


class CVaRDistortion:
    """Lower-tail CVaR at level ``alpha``: ``g(s) = max((s - (1 - alpha)) / alpha, 0)``."""

    def __init__(self, alpha: float):
        if not 0 < alpha < 1:
            raise ValueError("CVaR level must lie in (0, 1)")
        self.alpha = float(alpha)
        self.lipschitz = 1.0 / self.alpha

    def __call__(self, s):
        s = np.asarray(s, dtype=np.float64)
        return np.maximum((s - (1.0 - self.alpha)) / self.alpha, 0.0)


class PowerDistortion:
    """Proportional hazard ``g(s) = s**alpha``; not Lipschitz at 0 for ``alpha < 1``."""

    def __init__(self, alpha: float):
        if not 0 < alpha <= 1:
            raise ValueError("power distortion exponent must lie in (0, 1]")
        self.alpha = float(alpha)
        self.lipschitz = 1.0 if self.alpha == 1.0 else None

    def __call__(self, s):
        return np.power(np.asarray(s, dtype=np.float64), self.alpha)


class PiecewiseLinearDistortion:
    """Linear interpolation of ``(x, y)`` knots on ``[0, 1]``; modulus is the largest slope."""

    def __init__(self, xs: Sequence[float], ys: Sequence[float]):
        self.xs = np.asarray(xs, dtype=np.float64)
        self.ys = np.asarray(ys, dtype=np.float64)
        if self.xs.shape != self.ys.shape or self.xs.size < 2:
            raise ValueError("need at least two (x, y) knots")
        if np.any(np.diff(self.xs) <= 0) or self.xs[0] != 0.0 or self.xs[-1] != 1.0:
            raise ValueError("knots must be strictly increasing from 0 to 1")
        self.lipschitz = float(np.max(np.abs(np.diff(self.ys) / np.diff(self.xs))))

    def __call__(self, s):
        return np.interp(np.asarray(s, dtype=np.float64), self.xs, self.ys)


class IndicatorDistortion:
    """``g(s) = 1{s > 0}`` (essential supremum); not Lipschitz."""

    lipschitz = None

    def __call__(self, s):
        return (np.asarray(s, dtype=np.float64) > 0).astype(np.float64)


# -- exact evaluation on step CDFs -------------------------------------------

def _segments(F: StepFunction):
    """Left ends, right ends and CDF values of the constant pieces covering ``[0, D]``."""
    b, v, D = F.breakpoints, F.values, F.support_bound
    lefts = b
    rights = np.append(b[1:], D)
    vals = v
    if b[0] > 0:
        lefts = np.append(0.0, lefts)
        rights = np.append(b[0], rights)
        vals = np.append(0.0, vals)
    return lefts, rights, vals


def eval_distorted(F: StepFunction, g: Distortion) -> float:
    """``int_0^D g(1 - F(t)) dt`` summed piece by piece."""
    lefts, rights, vals = _segments(F)
    return float(np.sum(_apply(g, 1.0 - vals) * (rights - lefts)))


def eval_mean(F: StepFunction) -> float:
    lefts, rights, vals = _segments(F)
    return float(np.sum((1.0 - vals) * (rights - lefts)))


def eval_cvar(F: StepFunction, alpha: float) -> float:
    """Mean of the worst (lowest-reward) ``alpha`` fraction of outcomes."""
    return eval_distorted(F, CVaRDistortion(alpha))


def eval_variance(F: StepFunction) -> float:
    """``2 int t (1 - F) dt - (int (1 - F) dt)^2``, exact on each piece."""
    lefts, rights, vals = _segments(F)
    survival = 1.0 - vals
    second = np.sum(survival * (rights**2 - lefts**2))
    first = np.sum(survival * (rights - lefts))
    return float(second - first**2)


def eval_mean_variance(F: StepFunction, lam: float) -> float:
    if not lam > 0:
        raise ValueError("mean-variance weight must be positive")
    return eval_mean(F) + lam * eval_variance(F)


def eval_var_quantile(F: StepFunction, alpha: float) -> float:
    """Generalized inverse ``inf{t : F(t) >= alpha}``; ``D`` if the CDF never reaches ``alpha``."""
    if not 0 < alpha < 1:
        raise ValueError("quantile level must lie in (0, 1)")
    hit = np.flatnonzero(F.values >= alpha)
    if hit.size == 0:
        return float(F.support_bound)
    return float(F.breakpoints[hit[0]])


def atoms(F: StepFunction) -> tuple[np.ndarray, np.ndarray]:
    """Atom locations and masses of a step CDF; any mass missing at the end sits at ``D``."""
    locs = F.breakpoints
    masses = np.diff(F.values, prepend=0.0)
    leftover = 1.0 - F.values[-1]
    if leftover > 0:
        if locs[-1] == F.support_bound:
            masses = masses.copy()
            masses[-1] += leftover
        else:
            locs = np.append(locs, F.support_bound)
            masses = np.append(masses, leftover)
    return locs, masses


def _distorted_from_atoms(locs: np.ndarray, masses: np.ndarray, g: Distortion) -> float:
    """``int_0^inf g(P(U > t)) dt`` for a nonnegative discrete ``U``."""
    if np.any(locs < 0):
        raise ValueError("utilities must be nonnegative")
    order = np.argsort(locs, kind="stable")
    locs, masses = locs[order], masses[order]
    # survival just left of each sorted location, i.e. P(U >= loc_j)
    survival = np.cumsum(masses[::-1])[::-1]
    widths = np.diff(locs, prepend=0.0)
    return float(np.sum(_apply(g, np.clip(survival, 0.0, 1.0)) * widths))


def eval_cpt(F: StepFunction, spec: "CPT") -> float:
    """Gains minus losses, each a distorted integral of a utility pushforward."""
    locs, masses = atoms(F)
    gains = _distorted_from_atoms(_apply(spec.u_plus, locs), masses, spec.g_plus)
    losses = _distorted_from_atoms(_apply(spec.u_minus, locs), masses, spec.g_minus)
    return gains - losses


# -- risk specifications -----------------------------------------------------

class RiskFunctional:
    name: str = "risk"

    def evaluate(self, F: StepFunction) -> float:
        raise NotImplementedError

    def lipschitz(self, reward_bound: float) -> Optional[float]:
        raise NotImplementedError

    def __call__(self, F: StepFunction) -> float:
        return self.evaluate(F)

    def __repr__(self) -> str:
        return f"<{type(self).__name__} {self.name}>"


class Mean(RiskFunctional):
    name = "mean"

    def evaluate(self, F):
        return eval_mean(F)

    def lipschitz(self, reward_bound):
        return float(reward_bound)


class CVaR(RiskFunctional):
    def __init__(self, alpha: float):
        self.distortion = CVaRDistortion(alpha)
        self.alpha = self.distortion.alpha
        self.name = f"cvar_{self.alpha:g}"

    def evaluate(self, F):
        return eval_distorted(F, self.distortion)

    def lipschitz(self, reward_bound):
        return reward_bound / self.alpha


class Variance(RiskFunctional):
    name = "variance"

    def evaluate(self, F):
        return eval_variance(F)

    def lipschitz(self, reward_bound):
        return 3.0 * reward_bound**2


class MeanVariance(RiskFunctional):
    """``E[Z] + lam Var[Z]``; Lipschitz constant ``D + 3 lam D^2``."""

    def __init__(self, lam: float):
        if not lam > 0:
            raise ValueError("mean-variance weight must be positive")
        self.lam = float(lam)
        self.name = f"mean_variance_{self.lam:g}"

    def evaluate(self, F):
        return eval_mean_variance(F, self.lam)

    def lipschitz(self, reward_bound):
        return reward_bound + 3.0 * self.lam * reward_bound**2


class Distorted(RiskFunctional):
    """``int g(1 - F)``. ``lip_g`` defaults to ``g.lipschitz`` when the handle carries one."""

    def __init__(self, g: Distortion, lip_g: Optional[float] = None, name: str = "distorted"):
        check_distortion(g)
        self.g = g
        self.lip_g = lip_g if lip_g is not None else getattr(g, "lipschitz", None)
        self.name = name

    def evaluate(self, F):
        return eval_distorted(F, self.g)

    def lipschitz(self, reward_bound):
        return None if self.lip_g is None else self.lip_g * reward_bound


@dataclass
class CPT(RiskFunctional):
    """Cumulative-prospect-theory functional around a baseline ``c``.

    ``u_plus`` should be active on gains (``z >= c``) and ``u_minus`` on
    losses (``z < c``); both must be nonnegative. The reported Lipschitz
    constant ``2 lip_g D`` additionally presumes the utilities do not expand
    distances, as with the default ``max(z - c, 0)`` / ``max(c - z, 0)``.
    """

    g_plus: Distortion = identity
    g_minus: Distortion = identity
    u_plus: Optional[Callable] = None
    u_minus: Optional[Callable] = None
    baseline: float = 0.0
    lip_g: Optional[float] = None
    name: str = "cpt"

    def __post_init__(self):
        check_distortion(self.g_plus, monotone=False, name="g_plus")
        check_distortion(self.g_minus, monotone=False, name="g_minus")
        c = float(self.baseline)
        if self.u_plus is None:
            self.u_plus = lambda z: np.maximum(np.asarray(z, dtype=np.float64) - c, 0.0)
        if self.u_minus is None:
            self.u_minus = lambda z: np.maximum(c - np.asarray(z, dtype=np.float64), 0.0)
        if self.lip_g is None:
            lips = [getattr(self.g_plus, "lipschitz", None), getattr(self.g_minus, "lipschitz", None)]
            if all(v is not None for v in lips):
                self.lip_g = max(lips)

    def evaluate(self, F):
        return eval_cpt(F, self)

    def lipschitz(self, reward_bound):
        return None if self.lip_g is None else 2.0 * self.lip_g * reward_bound


class WeightedSum(RiskFunctional):
    """``sum_k lam_k rho_k`` with Lipschitz constant ``sum_k lam_k L_k``."""

    def __init__(self, children: Sequence[tuple[float, RiskFunctional]], name: Optional[str] = None):
        children = [(float(lam), child) for lam, child in children]
        if not children:
            raise ValueError("a weighted sum needs at least one child")
        if any(lam <= 0 for lam, _ in children):
            raise ValueError("weights of a weighted sum must be positive")
        self.children = children
        self.name = name or "+".join(f"{lam:g}*{c.name}" for lam, c in children)

    def evaluate(self, F):
        return eval_weighted_sum(F, self.children)

    def lipschitz(self, reward_bound):
        consts = [child.lipschitz(reward_bound) for _, child in self.children]
        if any(c is None for c in consts):
            return None
        return sum(lam * c for (lam, _), c in zip(self.children, consts))


class VaR(RiskFunctional):
    """Lower quantile at level ``alpha``. No Lipschitz constant, so no half-width."""

    def __init__(self, alpha: float):
        if not 0 < alpha < 1:
            raise ValueError("quantile level must lie in (0, 1)")
        self.alpha = float(alpha)
        self.name = f"var_{self.alpha:g}"

    def evaluate(self, F):
        return eval_var_quantile(F, self.alpha)

    def lipschitz(self, reward_bound):
        return None


def eval_weighted_sum(F: StepFunction, children) -> float:
    if not children:
        raise ValueError("a weighted sum needs at least one child")
    return float(sum(lam * child.evaluate(F) for lam, child in children))


def lipschitz_constant(spec: RiskFunctional, reward_bound: float) -> Optional[float]:
    if not reward_bound > 0:
        raise ValueError("reward bound must be positive")
    return spec.lipschitz(reward_bound)


def parse_risks(text: str, loader: Optional[Callable[[str], PiecewiseLinearDistortion]] = None):
    """Parse ``name[:param[:param]]`` tokens separated by commas.

    Supported: ``mean``, ``cvar:A``, ``variance``, ``mean-variance:L``,
    ``var:A`` (quantile), ``cpt:C``, ``distorted:identity``,
    ``distorted:cvar:A``, ``distorted:power:A`` and ``distorted:@FILE`` (a
    two-column knot table read by ``loader``).
    """
    risks = []
    for token in filter(None, (t.strip() for t in text.split(","))):
        parts = token.split(":")
        name, args = parts[0].lower(), parts[1:]
        try:
            if name == "mean" and not args:
                risks.append(Mean())
            elif name == "cvar" and len(args) == 1:
                risks.append(CVaR(float(args[0])))
            elif name == "variance" and not args:
                risks.append(Variance())
            elif name in ("mean-variance", "meanvar") and len(args) == 1:
                risks.append(MeanVariance(float(args[0])))
            elif name == "var" and len(args) == 1:
                risks.append(VaR(float(args[0])))
            elif name == "cpt" and len(args) <= 1:
                c = float(args[0]) if args else 0.0
                risks.append(CPT(baseline=c, name=f"cpt_{c:g}"))
            elif name == "distorted" and args:
                risks.append(_parse_distorted(args, token, loader))
            else:
                raise ValueError
        except ValueError as exc:
            detail = f": {exc}" if str(exc) else ""
            raise ValueError(f"cannot parse risk {token!r}{detail}") from None
    if not risks:
        raise ValueError("no risk functionals given")
    return risks


def _parse_distorted(args, token, loader):
    kind = args[0]
    if kind == "identity" and len(args) == 1:
        return Distorted(identity, name="distorted_identity")
    if kind == "cvar" and len(args) == 2:
        return Distorted(CVaRDistortion(float(args[1])), name=f"distorted_cvar_{float(args[1]):g}")
    if kind == "power" and len(args) == 2:
        return Distorted(PowerDistortion(float(args[1])), name=f"distorted_power_{float(args[1]):g}")
    if kind.startswith("@") and len(args) == 1:
        if loader is None:
            raise ValueError("no distortion table loader available")
        stem = os.path.splitext(os.path.basename(kind[1:]))[0]
        return Distorted(loader(kind[1:]), name=f"distorted_{stem}")
    raise ValueError(f"unknown distortion in {token!r}")
