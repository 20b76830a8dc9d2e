"""Policies, importance weights and weight statistics."""
from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Callable, Hashable, Mapping, Optional

import numpy as np

from .core import AbsoluteContinuityError, LoggedDataset, UnknownContextError, unique_rows

PROPENSITY_FLOOR = 1e-12


def context_key(context) -> tuple:
    """Default hashable key of a context vector."""
    return tuple(float(v) for v in np.atleast_1d(context))


def _as_contexts(contexts) -> np.ndarray:
    x = np.asarray(contexts, dtype=np.float64)
    if x.ndim == 0:
        x = x.reshape(1, 1)
    elif x.ndim == 1:
        x = x.reshape(1, -1)
    return x


class Policy(ABC):
    """Conditional distribution over ``n_actions`` actions given a context."""

    n_actions: int

    @abstractmethod
    def probabilities(self, contexts: np.ndarray) -> np.ndarray:
        """Action probabilities, shape ``(n, n_actions)``, for contexts of shape ``(n, d)``."""

    def action_probability(self, context, action: int) -> float:
        if not 0 <= action < self.n_actions:
            raise ValueError(f"action {action} outside [0, {self.n_actions})")
        return float(self.probabilities(_as_contexts(context))[0, action])

    def to_dict(self) -> dict:
        raise NotImplementedError


class TabularPolicy(Policy):
    """Lookup table from context key to a probability vector.

    Parameters
    ----------
    table : mapping
        ``key -> probability vector``; keys are produced by ``key_fn`` from
        context vectors (default: tuple of floats).
    n_actions : int, optional
        Inferred from the first probability vector when omitted.
    """

    def __init__(
        self,
        table: Mapping[Hashable, np.ndarray],
        n_actions: Optional[int] = None,
        key_fn: Callable[[np.ndarray], Hashable] = context_key,
    ):
        if not table:
            raise ValueError("a tabular policy needs at least one context")
        self.table = {}
        for key, probs in table.items():
            p = np.array(probs, dtype=np.float64).reshape(-1)
            if n_actions is None:
                n_actions = p.shape[0]
            if p.shape[0] != n_actions:
                raise ValueError(f"probability vector for {key!r} has the wrong length")
            _check_simplex(p, key)
            p.setflags(write=False)
            self.table[key] = p
        self.n_actions = int(n_actions)
        self.key_fn = key_fn

    def lookup(self, context) -> np.ndarray:
        key = self.key_fn(context)
        try:
            return self.table[key]
        except KeyError:
            raise UnknownContextError(f"context not in table: {key!r}") from None

    def probabilities(self, contexts: np.ndarray) -> np.ndarray:
        x = _as_contexts(contexts)
        uniq, inverse = unique_rows(x)
        rows = np.stack([self.lookup(u) for u in uniq])
        return rows[inverse]

    def to_dict(self) -> dict:
        return {
            "kind": "tabular",
            "n_actions": self.n_actions,
            "table": [
                {"context": list(k) if isinstance(k, tuple) else k, "probs": p.tolist()}
                for k, p in self.table.items()
            ],
        }


class SoftmaxPolicy(Policy):
    """``pi(a|x) = softmax(W x + b)_a`` with ``W`` of shape ``(K, d)``."""

    def __init__(self, weights, bias=None):
        self.weights = np.array(weights, dtype=np.float64)
        if self.weights.ndim != 2:
            raise ValueError("softmax weights must have shape (n_actions, context_dim)")
        self.n_actions = self.weights.shape[0]
        self.bias = (
            np.zeros(self.n_actions) if bias is None else np.array(bias, dtype=np.float64)
        )
        if self.bias.shape != (self.n_actions,):
            raise ValueError("softmax bias must have shape (n_actions,)")

    def probabilities(self, contexts: np.ndarray) -> np.ndarray:
        x = _as_contexts(contexts)
        logits = x @ self.weights.T + self.bias
        logits -= logits.max(axis=1, keepdims=True)
        e = np.exp(logits)
        return e / e.sum(axis=1, keepdims=True)

    def to_dict(self) -> dict:
        return {"kind": "softmax", "weights": self.weights.tolist(), "bias": self.bias.tolist()}


class MixturePolicy(Policy):
    """``alpha * base + (1 - alpha) * uniform``, the usual logging policy in simulations."""

    def __init__(self, base: Policy, alpha: float):
        if not 0 < alpha <= 1:
            raise ValueError("mixture alpha must lie in (0, 1]")
        self.base = base
        self.alpha = float(alpha)
        self.n_actions = base.n_actions

    def probabilities(self, contexts: np.ndarray) -> np.ndarray:
        p = self.base.probabilities(contexts)
        return self.alpha * p + (1.0 - self.alpha) / self.n_actions

    def to_dict(self) -> dict:
        return {"kind": "mixture", "alpha": self.alpha, "base": self.base.to_dict()}


def uniform_policy(n_actions: int, context_dim: int) -> SoftmaxPolicy:
    return SoftmaxPolicy(np.zeros((n_actions, context_dim)))


def _check_simplex(p: np.ndarray, where) -> None:
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise ValueError(f"probabilities for {where!r} must be nonnegative and sum to 1")


def policy_from_dict(spec: dict) -> Policy:
    kind = spec.get("kind")
    if kind == "tabular":
        table = {tuple(float(v) for v in row["context"]): row["probs"] for row in spec["table"]}
        return TabularPolicy(table, spec.get("n_actions"))
    if kind == "softmax":
        return SoftmaxPolicy(spec["weights"], spec.get("bias"))
    if kind == "mixture":
        return MixturePolicy(policy_from_dict(spec["base"]), spec["alpha"])
    raise ValueError(f"unknown policy kind {kind!r}")


def importance_weight(
    target: Policy,
    behavior: Policy,
    context,
    action: int,
    propensity_floor: float = PROPENSITY_FLOOR,
) -> float:
    """``pi(a|x) / beta(a|x)``; rejects behavior probabilities at or below the floor."""
    b = behavior.action_probability(context, action)
    if b <= propensity_floor:
        raise AbsoluteContinuityError(
            f"absolute continuity violated: behavior probability {b!r} for action {action}"
        )
    return target.action_probability(context, action) / b


def behavior_propensities(
    dataset: LoggedDataset,
    behavior: Optional[Policy] = None,
    propensity_floor: float = PROPENSITY_FLOOR,
) -> np.ndarray:
    """Behavior probabilities of the logged actions.

    Logged propensities take precedence over evaluating ``behavior``.
    """
    if dataset.propensities is not None:
        props = np.asarray(dataset.propensities)
    elif behavior is not None:
        probs = behavior.probabilities(dataset.contexts)
        props = probs[np.arange(dataset.n), dataset.actions]
    else:
        raise ValueError("behavior source unresolved: no logged propensities and no behavior policy")
    low = props <= propensity_floor
    if np.any(low):
        row = int(np.argmax(low))
        raise AbsoluteContinuityError(
            f"absolute continuity violated at row {row}: behavior probability {props[row]!r}",
            row=row,
        )
    return props


def importance_weights(
    dataset: LoggedDataset,
    target: Policy,
    behavior: Optional[Policy] = None,
    propensity_floor: float = PROPENSITY_FLOOR,
) -> np.ndarray:
    """Vectorized ``w_i = pi(a_i|x_i) / beta(a_i|x_i)`` over a dataset."""
    props = behavior_propensities(dataset, behavior, propensity_floor)
    pi = target.probabilities(dataset.contexts)[np.arange(dataset.n), dataset.actions]
    return pi / props


@dataclass(frozen=True)
class WeightStats:
    """Maximum importance weight and second moment ``E_beta[w^2]``.

    ``exact`` is False for plug-in values computed from a dataset.
    """

    w_max: float
    w_2: float
    exact: bool = True

    def __post_init__(self):
        if not (np.isfinite(self.w_max) and np.isfinite(self.w_2)):
            raise ValueError("weight statistics must be finite")
        if self.w_max <= 0 or self.w_2 <= 0:
            raise ValueError("weight statistics must be positive")
        if self.w_2 > self.w_max * (1 + 1e-12):
            raise ValueError("w_2 cannot exceed w_max")


def weight_stats(target: Policy, behavior: Optional[Policy], source) -> WeightStats:
    """Exact weight statistics on an enumerable environment, plug-ins on a dataset.

    Parameters
    ----------
    source : FiniteEnv or LoggedDataset
        With an environment, ``w_max`` is the maximum over its support and
        ``w_2 = sum_x p(x) sum_a pi(a|x)^2 / beta(a|x)``. With a dataset the
        same expressions are averaged over the observed contexts; if only
        logged propensities are available, ``w_max`` is the largest observed
        weight and ``w_2`` the sample mean of ``w^2`` capped at ``w_max``.
    """
    if isinstance(source, LoggedDataset):
        return _empirical_weight_stats(target, behavior, source)
    contexts = np.asarray(source.context_features)
    p_x = np.asarray(source.context_probs)
    if contexts.shape[0] == 0:
        raise ValueError("empty support")
    pi = target.probabilities(contexts)
    beta = behavior.probabilities(contexts)
    support = pi > 0
    if np.any(support & (beta <= PROPENSITY_FLOOR)):
        raise AbsoluteContinuityError("absolute continuity violated on the environment support")
    safe_beta = np.where(beta > 0, beta, 1.0)
    w = np.where(support, pi / safe_beta, 0.0)
    # pairs never taken by beta carry no mass under beta
    w_max = float(np.max(np.where(beta > 0, w, 0.0)))
    w_2 = float(np.sum(p_x[:, None] * np.where(beta > 0, beta * w**2, 0.0)))
    return WeightStats(w_max, min(w_2, w_max), exact=True)


def _empirical_weight_stats(
    target: Policy, behavior: Optional[Policy], dataset: LoggedDataset
) -> WeightStats:
    if behavior is not None:
        x = dataset.contexts
        pi = target.probabilities(x)
        beta = behavior.probabilities(x)
        if np.any((pi > 0) & (beta <= PROPENSITY_FLOOR)):
            raise AbsoluteContinuityError("absolute continuity violated at an observed context")
        ratio = np.where(beta > 0, pi / np.where(beta > 0, beta, 1.0), 0.0)
        w_max = float(ratio.max())
        w_2 = float(np.mean(np.sum(pi * ratio, axis=1)))
    else:
        w = importance_weights(dataset, target, None)
        w_max = float(w.max())
        w_2 = float(np.mean(w**2))
    return WeightStats(w_max, min(w_2, w_max), exact=False)


def estimate_behavior_tabular(
    dataset: LoggedDataset,
    context_key_fn: Callable[[np.ndarray], Hashable] = context_key,
    smoothing: float = 0.0,
) -> tuple[TabularPolicy, float]:
    """Empirical (optionally additively smoothed) behavior policy per context key.

    Returns
    -------
    policy : TabularPolicy
        ``beta_hat(a|x) = (count(x, a) + s) / (count(x) + K s)``.
    inf_beta_hat : float
        Smallest estimated probability over observed keys and all actions.
    """
    if smoothing < 0:
        raise ValueError("smoothing must be nonnegative")
    k = dataset.n_actions
    uniq, inverse = unique_rows(dataset.contexts)
    per_row = np.zeros((uniq.shape[0], k))
    np.add.at(per_row, (inverse, dataset.actions), 1.0)
    counts: dict = {}
    for ctx, c in zip(uniq, per_row):
        key = context_key_fn(ctx)
        counts[key] = counts.get(key, 0.0) + c
    table = {key: (c + smoothing) / (c.sum() + k * smoothing) for key, c in counts.items()}
    inf_beta_hat = float(min(p.min() for p in table.values()))
    return TabularPolicy(table, k, key_fn=context_key_fn), inf_beta_hat

