"""Models of the conditional reward CDF ``G(t; x, a)`` for DM and DR estimation."""
from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Callable, Hashable, Optional

import numpy as np

from .core import LoggedDataset, unique_rows
from .policy import Policy, context_key


@dataclass(frozen=True, eq=False)
class ThresholdGrid:
    """Strictly increasing thresholds spanning ``[0, D]`` (last one equals ``D``)."""

    thresholds: np.ndarray

    def __post_init__(self):
        t = np.array(self.thresholds, dtype=np.float64).reshape(-1)
        if t.size == 0 or np.any(np.diff(t) <= 0):
            raise ValueError("thresholds must be nonempty and strictly increasing")
        if t[0] < 0:
            raise ValueError("thresholds must be nonnegative")
        t.setflags(write=False)
        object.__setattr__(self, "thresholds", t)

    @property
    def m(self) -> int:
        return self.thresholds.shape[0]

    @property
    def reward_bound(self) -> float:
        return float(self.thresholds[-1])


def default_grid(rewards: np.ndarray, reward_bound: float, size: int = 33) -> ThresholdGrid:
    """``size`` evenly spaced thresholds on ``[0, D]``, plus the distinct observed
    rewards when there are fewer than 64 of them."""
    t = np.linspace(0.0, reward_bound, size)
    distinct = np.unique(rewards)
    if distinct.shape[0] < 64:
        t = np.union1d(t, distinct)
    return ThresholdGrid(t)


class ConditionalCdfModel(ABC):
    """Interface for ``G_bar(t; x, a)``.

    Implementations are right-continuous steps in ``t`` with jumps only at
    :attr:`breakpoints`, return 0 for ``t < 0`` and 1 for ``t >= D``.
    """

    reward_bound: float

    @property
    @abstractmethod
    def breakpoints(self) -> np.ndarray:
        """Thresholds at which the model may change value."""

    @abstractmethod
    def cdf_matrix(self, thresholds, contexts, actions) -> np.ndarray:
        """``G_bar(t_j; x_i, a_i)`` with shape ``(n, m)``."""

    def evaluate(self, t: float, context, action: int) -> float:
        x = np.atleast_2d(np.asarray(context, dtype=np.float64))
        return float(self.cdf_matrix([t], x, [action])[0, 0])

    def marginal_matrix(self, thresholds, contexts, policy: Policy) -> np.ndarray:
        """``G_bar(t_j; x_i, pi) = sum_a pi(a|x_i) G_bar(t_j; x_i, a)``."""
        x = np.asarray(contexts, dtype=np.float64)
        probs = policy.probabilities(x)
        out = np.zeros((x.shape[0], np.asarray(thresholds).shape[0]))
        for a in range(probs.shape[1]):
            acts = np.full(x.shape[0], a)
            out += probs[:, [a]] * self.cdf_matrix(thresholds, x, acts)
        return out

    def marginalize(self, t: float, context, policy: Policy) -> float:
        x = np.atleast_2d(np.asarray(context, dtype=np.float64))
        return float(self.marginal_matrix([t], x, policy)[0, 0])


def _grid_lookup(grid: np.ndarray, values: np.ndarray, thresholds, reward_bound: float):
    """Map thresholds onto a step table ``values[..., j]`` defined on ``grid``.

    Returns an array with the thresholds as the last axis: 0 below the first
    grid point, the largest grid point at or below ``t`` otherwise, 1 at or
    beyond ``D``.
    """
    t = np.asarray(thresholds, dtype=np.float64).reshape(-1)
    idx = np.searchsorted(grid, t, side="right") - 1
    out = np.where(idx >= 0, values[..., np.clip(idx, 0, None)], 0.0)
    out = np.where(t >= reward_bound, 1.0, out)
    return out


class TabularCdfModel(ConditionalCdfModel):
    """Empirical conditional CDF per ``(context key, action)`` cell with additive smoothing."""

    def __init__(self, grid, cells, marginal, reward_bound, key_fn, n_actions):
        self.grid = grid
        self.cells = cells
        self.marginal = marginal
        self.reward_bound = reward_bound
        self.key_fn = key_fn
        self.n_actions = n_actions

    @property
    def breakpoints(self) -> np.ndarray:
        return self.grid

    def _table(self, contexts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        uniq, inverse = unique_rows(contexts)
        table = np.empty((uniq.shape[0], self.n_actions, self.grid.shape[0]))
        for i, u in enumerate(uniq):
            key = self.key_fn(u)
            for a in range(self.n_actions):
                table[i, a] = self.cells.get((key, a), self.marginal)
        return table, inverse

    def cdf_matrix(self, thresholds, contexts, actions) -> np.ndarray:
        x = np.atleast_2d(np.asarray(contexts, dtype=np.float64))
        table, inverse = self._table(x)
        rows = table[inverse, np.asarray(actions, dtype=np.int64)]
        return _grid_lookup(self.grid, rows, thresholds, self.reward_bound)

    def marginal_matrix(self, thresholds, contexts, policy: Policy) -> np.ndarray:
        x = np.atleast_2d(np.asarray(contexts, dtype=np.float64))
        table, inverse = self._table(x)
        probs = policy.probabilities(x)
        rows = np.einsum("na,nam->nm", probs, table[inverse])
        return _grid_lookup(self.grid, rows, thresholds, self.reward_bound)


def fit_tabular(
    dataset: LoggedDataset,
    context_key_fn: Callable[[np.ndarray], Hashable] = context_key,
    grid: Optional[ThresholdGrid] = None,
    smoothing: float = 0.0,
) -> TabularCdfModel:
    """Fit ``G_bar(t; x, a) = (#{r <= t} + s t / D) / (#rows + s)`` per cell.

    Cells without rows fall back to the marginal empirical CDF of the dataset.
    """
    if smoothing < 0:
        raise ValueError("smoothing must be nonnegative")
    D = dataset.reward_bound
    if grid is None:
        grid = default_grid(dataset.rewards, D)
    t = grid.thresholds
    le = dataset.rewards[:, None] <= t[None, :]
    marginal = le.mean(axis=0)
    marginal[t >= D] = 1.0

    uniq, inverse = unique_rows(dataset.contexts)
    keys = [context_key_fn(u) for u in uniq]
    key_ids = {}
    cell_key = np.array([key_ids.setdefault(k, len(key_ids)) for k in keys])[inverse]
    n_keys = len(key_ids)
    flat = cell_key * dataset.n_actions + dataset.actions
    n_cells = n_keys * dataset.n_actions
    counts = np.bincount(flat, minlength=n_cells).astype(np.float64)
    hits = np.zeros((n_cells, t.shape[0]))
    np.add.at(hits, flat, le.astype(np.float64))
    values = (hits + smoothing * t[None, :] / D) / np.maximum(counts[:, None] + smoothing, 1e-300)
    values = np.clip(values, 0.0, 1.0)
    values[:, t >= D] = 1.0

    inv_keys = {i: k for k, i in key_ids.items()}
    cells = {}
    for c in np.flatnonzero(counts > 0):
        row = values[c]
        row.setflags(write=False)
        cells[(inv_keys[c // dataset.n_actions], int(c % dataset.n_actions))] = row
    return TabularCdfModel(t, cells, marginal, D, context_key_fn, dataset.n_actions)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class LogisticCdfModel(ConditionalCdfModel):
    """Per-(action, threshold) logistic classifiers of ``1{R <= t}``.

    Predictions along the grid are repaired with a running maximum and a clip
    to ``[0, 1]``, so every ``(x, a)`` row is a valid CDF.
    """

    def __init__(self, grid, coef, mean, scale, fallback, reward_bound, n_actions):
        self.grid = grid
        self.coef = coef            # action -> (d + 1, m) or None
        self.mean = mean
        self.scale = scale
        self.fallback = fallback    # marginal empirical CDF on the grid
        self.reward_bound = reward_bound
        self.n_actions = n_actions

    @property
    def breakpoints(self) -> np.ndarray:
        return self.grid

    def grid_predictions(self, contexts, actions) -> np.ndarray:
        x = np.atleast_2d(np.asarray(contexts, dtype=np.float64))
        actions = np.asarray(actions, dtype=np.int64).reshape(-1)
        z = np.hstack([(x - self.mean) / self.scale, np.ones((x.shape[0], 1))])
        out = np.empty((x.shape[0], self.grid.shape[0]))
        for a in np.unique(actions):
            rows = actions == a
            if self.coef[a] is None:
                out[rows] = self.fallback
            else:
                out[rows] = _sigmoid(z[rows] @ self.coef[a])
        out = np.clip(np.maximum.accumulate(out, axis=1), 0.0, 1.0)
        out[:, self.grid >= self.reward_bound] = 1.0
        return out

    def cdf_matrix(self, thresholds, contexts, actions) -> np.ndarray:
        rows = self.grid_predictions(contexts, actions)
        return _grid_lookup(self.grid, rows, thresholds, self.reward_bound)


def fit_per_threshold_logistic(
    dataset: LoggedDataset,
    grid: Optional[ThresholdGrid] = None,
    l2_reg: float = 1.0,
    epochs: int = 500,
    learning_rate: float = 0.1,
) -> LogisticCdfModel:
    """Fit one L2-penalized logistic regression per action and grid threshold.

    Full-batch gradient descent on standardized features minimizing
    ``mean log-loss + l2_reg / (2 n_a) * ||w||^2`` (bias unpenalized), which is
    the ``C = 1 / l2_reg`` convention of the usual library solver. Thresholds
    that induce identical label vectors share one fit.
    """
    D = dataset.reward_bound
    if grid is None:
        grid = default_grid(dataset.rewards, D)
    t = grid.thresholds
    x = dataset.contexts
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    z_all = np.hstack([(x - mean) / scale, np.ones((x.shape[0], 1))])
    fallback = (dataset.rewards[:, None] <= t[None, :]).mean(axis=0)

    coef = []
    for a in range(dataset.n_actions):
        rows = dataset.actions == a
        n_a = int(rows.sum())
        if n_a == 0:
            coef.append(None)
            continue
        z = z_all[rows]
        r = dataset.rewards[rows]
        # thresholds with the same count of rewards <= t share a label vector
        counts = np.searchsorted(np.sort(r), t, side="right")
        _, first, which = np.unique(counts, return_index=True, return_inverse=True)
        y = (r[:, None] <= t[first][None, :]).astype(np.float64)
        w = np.zeros((z.shape[1], first.shape[0]))
        penalty = np.ones((z.shape[1], 1))
        penalty[-1] = 0.0
        for _ in range(int(epochs)):
            grad = z.T @ (_sigmoid(z @ w) - y) / n_a + (l2_reg / n_a) * penalty * w
            w -= learning_rate * grad
        coef.append(w[:, which.reshape(-1)])
    return LogisticCdfModel(t, coef, mean, scale, fallback, D, dataset.n_actions)


class OracleCdfModel(ConditionalCdfModel):
    """The exact ``G(t; x, a)`` of an enumerable environment."""

    def __init__(self, env):
        self.env = env
        self.reward_bound = env.reward_bound
        self._grid = env.atom_grid()
        self._table = env.cdf_table(self._grid)   # (n_contexts, K, m)

    @property
    def breakpoints(self) -> np.ndarray:
        return self._grid

    def cdf_matrix(self, thresholds, contexts, actions) -> np.ndarray:
        idx = self.env.context_index(contexts)
        rows = self._table[idx, np.asarray(actions, dtype=np.int64).reshape(-1)]
        return _grid_lookup(self._grid, rows, thresholds, self.reward_bound)


def oracle_model(env) -> OracleCdfModel:
    return OracleCdfModel(env)


class ZeroModel(ConditionalCdfModel):
    """``G_bar = 0`` everywhere, including ``t >= D``.

    Not a valid CDF model; it exists so that DR can be checked to collapse to IS.
    """

    def __init__(self, reward_bound: float):
        self.reward_bound = float(reward_bound)

    @property
    def breakpoints(self) -> np.ndarray:
        return np.array([0.0, self.reward_bound])

    def cdf_matrix(self, thresholds, contexts, actions) -> np.ndarray:
        n = np.asarray(actions).reshape(-1).shape[0]
        t = np.asarray(thresholds, dtype=np.float64).reshape(-1)
        return np.zeros((n, t.shape[0]))
