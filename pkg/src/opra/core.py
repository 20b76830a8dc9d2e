"""Shared domain types: logged datasets, step functions and confidence bands."""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterator, Optional, Sequence

import numpy as np


class AbsoluteContinuityError(ValueError):
    """Raised when the behavior policy puts (numerically) zero mass on a logged pair."""

    def __init__(self, message: str, row: Optional[int] = None):
        super().__init__(message)
        self.row = row


class UnknownContextError(KeyError):
    """Raised when a tabular lookup meets a context key it has never seen."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "context not in table"


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class Interaction:
    """One logged round ``(x, a, r, beta(a|x))``."""

    context: np.ndarray
    action: int
    reward: float
    logged_propensity: Optional[float] = None


@dataclass(frozen=True, eq=False)
class LoggedDataset:
    """Immutable table of logged bandit interactions.

    Stored column-wise for vectorized estimation; :meth:`rows` yields
    :class:`Interaction` records when row access is more convenient.

    Parameters
    ----------
    contexts : array-like, shape (n, d)
        Context features. A 1-d input is treated as ``d = 1``.
    actions : array-like of int, shape (n,)
    rewards : array-like, shape (n,)
        Each reward must lie in ``[0, reward_bound]``.
    reward_bound : float
        The declared support bound ``D``. Never inferred from data.
    n_actions : int
        Number of actions ``K``.
    propensities : array-like, shape (n,), optional
        Logged behavior probabilities of the taken actions, each in ``(0, 1]``.
    """

    contexts: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    reward_bound: float
    n_actions: int
    propensities: Optional[np.ndarray] = None

    def __post_init__(self):
        contexts = np.array(self.contexts, dtype=np.float64)
        if contexts.ndim == 1:
            contexts = contexts.reshape(-1, 1)
        if contexts.ndim != 2:
            raise ValueError("contexts must be a 2-d array of shape (n, d)")
        actions = np.array(self.actions)
        if actions.size and not np.issubdtype(actions.dtype, np.integer):
            if not np.all(actions == np.round(actions)):
                raise ValueError("actions must be integer indices")
        actions = actions.astype(np.int64).reshape(-1)
        rewards = np.array(self.rewards, dtype=np.float64).reshape(-1)
        n = rewards.shape[0]
        if n < 1:
            raise ValueError("a logged dataset needs at least one row")
        if contexts.shape[0] != n or actions.shape[0] != n:
            raise ValueError("contexts, actions and rewards must have the same length")
        bound = float(self.reward_bound)
        if not bound > 0 or not np.isfinite(bound):
            raise ValueError("reward_bound must be a positive finite number")
        n_actions = int(self.n_actions)
        if n_actions < 1:
            raise ValueError("n_actions must be positive")
        if not np.all(np.isfinite(rewards)) or rewards.min() < 0 or rewards.max() > bound:
            bad = int(np.argmax(~((rewards >= 0) & (rewards <= bound))))
            raise ValueError(f"reward out of [0, {bound}] at row {bad}")
        if actions.min() < 0 or actions.max() >= n_actions:
            bad = int(np.argmax((actions < 0) | (actions >= n_actions)))
            raise ValueError(f"action index out of range at row {bad}")
        propensities = self.propensities
        if propensities is not None:
            propensities = np.array(propensities, dtype=np.float64).reshape(-1)
            if propensities.shape[0] != n:
                raise ValueError("propensities must have one entry per row")
            ok = (propensities > 0) & (propensities <= 1)
            if not np.all(ok):
                raise ValueError(
                    f"logged propensity outside (0, 1] at row {int(np.argmin(ok))}"
                )
            propensities = _frozen(propensities)
        object.__setattr__(self, "contexts", _frozen(contexts))
        object.__setattr__(self, "actions", _frozen(actions))
        object.__setattr__(self, "rewards", _frozen(rewards))
        object.__setattr__(self, "reward_bound", bound)
        object.__setattr__(self, "n_actions", n_actions)
        object.__setattr__(self, "propensities", propensities)

    def __len__(self) -> int:
        return self.rewards.shape[0]

    @property
    def n(self) -> int:
        return len(self)

    @property
    def context_dim(self) -> int:
        return self.contexts.shape[1]

    def rows(self) -> Iterator[Interaction]:
        for i in range(len(self)):
            prop = None if self.propensities is None else float(self.propensities[i])
            yield Interaction(
                self.contexts[i], int(self.actions[i]), float(self.rewards[i]), prop
            )

    def subset(self, index: Sequence[int] | np.ndarray) -> "LoggedDataset":
        index = np.asarray(index)
        return LoggedDataset(
            self.contexts[index],
            self.actions[index],
            self.rewards[index],
            self.reward_bound,
            self.n_actions,
            None if self.propensities is None else self.propensities[index],
        )

    def without_propensities(self) -> "LoggedDataset":
        return LoggedDataset(
            self.contexts, self.actions, self.rewards, self.reward_bound, self.n_actions
        )

    def with_contexts(self, contexts: np.ndarray) -> "LoggedDataset":
        return LoggedDataset(
            contexts,
            self.actions,
            self.rewards,
            self.reward_bound,
            self.n_actions,
            self.propensities,
        )

    @classmethod
    def from_rows(
        cls, rows: Sequence[Interaction], reward_bound: float, n_actions: int
    ) -> "LoggedDataset":
        rows = list(rows)
        props = [r.logged_propensity for r in rows]
        if all(p is None for p in props):
            propensities = None
        elif any(p is None for p in props):
            raise ValueError("either every row or no row carries a logged propensity")
        else:
            propensities = props
        return cls(
            np.array([np.atleast_1d(r.context) for r in rows], dtype=np.float64),
            [r.action for r in rows],
            [r.reward for r in rows],
            reward_bound,
            n_actions,
            propensities,
        )


@dataclass(frozen=True, eq=False)
class StepFunction:
    """Right-continuous step function on ``[0, D]``.

    ``f(t)`` is 0 left of the first breakpoint and equals ``values[j]`` on
    ``[breakpoints[j], breakpoints[j+1])``; beyond the last breakpoint the last
    value persists. Values are unconstrained, which is what the raw IS and DR
    estimators produce.
    """

    breakpoints: np.ndarray
    values: np.ndarray
    support_bound: float
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        b = np.array(self.breakpoints, dtype=np.float64).reshape(-1)
        v = np.array(self.values, dtype=np.float64).reshape(-1)
        bound = float(self.support_bound)
        if b.size == 0:
            raise ValueError("a step function needs at least one breakpoint")
        if b.shape != v.shape:
            raise ValueError("breakpoints and values must have equal length")
        if np.any(np.diff(b) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        if b[0] < 0 or b[-1] > bound:
            raise ValueError(f"breakpoints must lie in [0, {bound}]")
        if not np.all(np.isfinite(v)):
            raise ValueError("step values must be finite")
        object.__setattr__(self, "breakpoints", _frozen(b))
        object.__setattr__(self, "values", _frozen(v))
        object.__setattr__(self, "support_bound", bound)
        self._check()

    def _check(self) -> None:
        pass

    def __call__(self, t):
        return eval_step_fn(self, t)

    def __len__(self) -> int:
        return self.breakpoints.shape[0]

    @property
    def terminal_value(self) -> float:
        return float(self.values[-1])

    def is_valid_cdf(self) -> bool:
        v = self.values
        return bool(np.all(v >= 0) and np.all(v <= 1) and np.all(np.diff(v) >= 0))

    def on_grid(self, grid: np.ndarray) -> "StepFunction":
        """Re-express on a superset of the current breakpoints."""
        grid = np.asarray(grid, dtype=np.float64)
        return type(self)(grid, eval_step_fn(self, grid), self.support_bound, dict(self.metadata))


class StepCdf(StepFunction):
    """A step function that is a valid (sub-)CDF: nondecreasing with values in ``[0, 1]``.

    The terminal value is allowed to fall short of 1 because the clipped IS
    estimator can end below 1; the monotone projection forces it to 1.
    """

    def _check(self) -> None:
        v = self.values
        if np.any(v < 0) or np.any(v > 1):
            raise ValueError("CDF values must lie in [0, 1]")
        if np.any(np.diff(v) < 0):
            raise ValueError("CDF values must be nondecreasing")


def eval_step_fn(f: StepFunction, t):
    """Evaluate a step function at scalar or array ``t``.

    Zero left of the first breakpoint, right-continuous lookup elsewhere.
    """
    t_arr = np.asarray(t, dtype=np.float64)
    idx = np.searchsorted(f.breakpoints, t_arr, side="right") - 1
    out = np.where(idx >= 0, f.values[np.clip(idx, 0, None)], 0.0)
    if out.ndim == 0:
        return float(out)
    return out


def sup_distance(f: StepFunction, g: StepFunction) -> float:
    """``sup_t |f(t) - g(t)|`` for two right-continuous step functions.

    Both functions are constant on every interval between consecutive points of
    the merged breakpoint set and both vanish left of it, so the supremum is
    attained at a merged breakpoint.
    """
    grid = np.union1d(f.breakpoints, g.breakpoints)
    return float(np.max(np.abs(eval_step_fn(f, grid) - eval_step_fn(g, grid))))


def unique_rows(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Distinct rows of a 2-d array and the 1-d inverse index (fast path for one column)."""
    x = np.asarray(x)
    if x.ndim == 2 and x.shape[1] == 1:
        uniq, inverse = np.unique(x[:, 0], return_inverse=True)
        return uniq.reshape(-1, 1), inverse.reshape(-1)
    uniq, inverse = np.unique(x, axis=0, return_inverse=True)
    return uniq, inverse.reshape(-1)


def reward_grid(rewards: np.ndarray, reward_bound: float, *extra: np.ndarray) -> np.ndarray:
    """Sorted distinct rewards plus ``{0, D}`` and any extra thresholds inside ``[0, D]``."""
    parts = [np.asarray(rewards, dtype=np.float64).reshape(-1), np.array([0.0, reward_bound])]
    for e in extra:
        e = np.asarray(e, dtype=np.float64).reshape(-1)
        parts.append(e[(e >= 0) & (e <= reward_bound)])
    return np.unique(np.concatenate(parts))


class BandMethod(str, Enum):
    IS_HOEFFDING = "hoeffding"
    IS_BERNSTEIN = "bernstein"
    DR = "dr"
    ESTIMATED_POLICY_ADJUSTED = "estimated-policy"
    DKW = "dkw"


@dataclass(frozen=True)
class ConfidenceBand:
    """Sup-norm band ``||F_hat - F||_inf <= epsilon`` holding with probability ``1 - delta``.

    ``heuristic`` marks bands computed from plug-in weight statistics rather
    than the true suprema.
    """

    epsilon: float
    delta: float
    method: BandMethod
    heuristic: bool = False

    def __post_init__(self):
        if not self.epsilon >= 0:
            raise ValueError("epsilon must be nonnegative")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        object.__setattr__(self, "method", BandMethod(self.method))

    @property
    def vacuous(self) -> bool:
        # a CDF error can never exceed 1
        return self.epsilon >= 1.0

    def to_dict(self) -> dict[str, Any]:
        return {
            "epsilon": self.epsilon,
            "delta": self.delta,
            "method": self.method.value,
            "heuristic": self.heuristic,
            "vacuous": self.vacuous,
        }
