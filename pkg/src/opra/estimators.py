"""Off-policy CDF estimators: IS, IS-clip, WIS, DM, DR and monotonized DR.

Every estimator returns a step function whose breakpoints contain the sorted
distinct observed rewards and ``{0, D}``; model-based estimators add the
model's own breakpoints.
"""
from __future__ import annotations

from enum import Enum
from typing import Callable, Optional

import numpy as np

from .core import LoggedDataset, StepCdf, StepFunction, eval_step_fn, reward_grid
from .policy import Policy, importance_weights
from .reward_model import ConditionalCdfModel, ThresholdGrid


class EstimatorKind(str, Enum):
    IS = "is"
    IS_CLIP = "is-clip"
    WIS = "wis"
    DM = "dm"
    DR = "dr"
    M_DR = "m-dr"

    @property
    def is_valid_cdf(self) -> bool:
        return self not in (EstimatorKind.IS, EstimatorKind.DR)


def _weighted_cumulative(rewards: np.ndarray, weights: np.ndarray, grid: np.ndarray):
    """``sum_i weights_i 1{rewards_i <= grid_j}`` for every grid point."""
    bins = np.searchsorted(grid, rewards, side="left")
    return np.cumsum(np.bincount(bins, weights=weights, minlength=grid.shape[0]))


def _extra_grid(model: Optional[ConditionalCdfModel], grid) -> list:
    extra = []
    if model is not None:
        extra.append(model.breakpoints)
    if grid is not None:
        extra.append(grid.thresholds if isinstance(grid, ThresholdGrid) else grid)
    return extra


def estimate_is(
    dataset: LoggedDataset, target: Policy, behavior: Optional[Policy] = None
) -> StepFunction:
    """``F_IS(t) = (1/n) sum_i w_i 1{r_i <= t}``; may exceed 1."""
    w = importance_weights(dataset, target, behavior)
    grid = reward_grid(dataset.rewards, dataset.reward_bound)
    values = _weighted_cumulative(dataset.rewards, w, grid) / dataset.n
    return StepFunction(grid, values, dataset.reward_bound)


def estimate_is_clip(
    dataset: LoggedDataset, target: Policy, behavior: Optional[Policy] = None
) -> StepCdf:
    """``min(F_IS(t), 1)``. The terminal value may stay below 1."""
    raw = estimate_is(dataset, target, behavior)
    return StepCdf(raw.breakpoints, np.minimum(raw.values, 1.0), raw.support_bound)


def estimate_wis(
    dataset: LoggedDataset, target: Policy, behavior: Optional[Policy] = None
) -> StepCdf:
    """Self-normalized IS: weights divided by their sum, reaching exactly 1."""
    w = importance_weights(dataset, target, behavior)
    grid = reward_grid(dataset.rewards, dataset.reward_bound)
    cumulative = _weighted_cumulative(dataset.rewards, w, grid)
    total = cumulative[-1]
    if not total > 0:
        raise ValueError("weighted IS needs a positive total importance weight")
    # dividing by the last cumulative entry keeps every value <= 1 exactly
    return StepCdf(grid, cumulative / total, dataset.reward_bound)


def estimate_dm(
    dataset: LoggedDataset,
    target: Policy,
    model: ConditionalCdfModel,
    grid: Optional[ThresholdGrid] = None,
) -> StepCdf:
    """Direct method: average of ``G_bar(t; x_i, pi)`` over logged contexts."""
    t = reward_grid(dataset.rewards, dataset.reward_bound, *_extra_grid(model, grid))
    values = model.marginal_matrix(t, dataset.contexts, target).mean(axis=0)
    values = np.clip(np.maximum.accumulate(values), 0.0, 1.0)
    return StepCdf(t, values, dataset.reward_bound)


def estimate_dr(
    dataset: LoggedDataset,
    target: Policy,
    behavior: Optional[Policy],
    model: ConditionalCdfModel,
    grid: Optional[ThresholdGrid] = None,
) -> StepFunction:
    """Doubly robust CDF estimate.

    ``F_DR(t) = (1/n) sum_i [w_i (1{r_i <= t} - G_bar(t; x_i, a_i)) + G_bar(t; x_i, pi)]``.
    Neither bounded in ``[0, 1]`` nor monotone; see :func:`monotone_clip`.
    """
    w = importance_weights(dataset, target, behavior)
    t = reward_grid(dataset.rewards, dataset.reward_bound, *_extra_grid(model, grid))
    is_part = _weighted_cumulative(dataset.rewards, w, t) / dataset.n
    g_action = model.cdf_matrix(t, dataset.contexts, dataset.actions)
    g_policy = model.marginal_matrix(t, dataset.contexts, target)
    correction = (g_policy - w[:, None] * g_action).mean(axis=0)
    return StepFunction(t, is_part + correction, dataset.reward_bound)


def monotone_clip(raw: StepFunction) -> StepCdf:
    """Running maximum, clip to ``[0, 1]``, then value 1 at ``D``."""
    b, v, D = raw.breakpoints, raw.values, raw.support_bound
    out = np.clip(np.maximum.accumulate(v), 0.0, 1.0)
    if b[-1] < D:
        b = np.append(b, D)
        out = np.append(out, 1.0)
    else:
        out[-1] = 1.0
    return StepCdf(b, out, D, dict(raw.metadata))


def estimate_mdr(
    dataset: LoggedDataset,
    target: Policy,
    behavior: Optional[Policy],
    model: ConditionalCdfModel,
    grid: Optional[ThresholdGrid] = None,
) -> StepCdf:
    return monotone_clip(estimate_dr(dataset, target, behavior, model, grid))


def average_step_functions(fs, cls=None) -> StepFunction:
    """Pointwise average on the union of breakpoints."""
    grid = fs[0].breakpoints
    for f in fs[1:]:
        grid = np.union1d(grid, f.breakpoints)
    values = np.mean([eval_step_fn(f, grid) for f in fs], axis=0)
    cls = cls or type(fs[0])
    return cls(grid, values, fs[0].support_bound)


def crossfit_split(n: int, seed: Optional[int] = None) -> tuple[np.ndarray, np.ndarray]:
    """Two halves by row parity, or by a seeded shuffle when ``seed`` is given."""
    if n < 2:
        raise ValueError("cross-fitting needs at least two rows")
    order = np.arange(n)
    if seed is not None:
        order = np.random.default_rng(seed).permutation(n)
    return np.sort(order[0::2]), np.sort(order[1::2])


def estimate_with_crossfit(
    dataset: LoggedDataset,
    target: Policy,
    behavior: Optional[Policy],
    fit_fn: Callable[[LoggedDataset], ConditionalCdfModel],
    kind: EstimatorKind | str = EstimatorKind.DR,
    seed: Optional[int] = None,
    grid: Optional[ThresholdGrid] = None,
) -> StepFunction:
    """Two-fold cross-fitting for DM or DR.

    The model fitted on each half is used to estimate on the other half and
    the two estimates are averaged. The split is recorded in ``metadata``.
    """
    kind = EstimatorKind(kind)
    if kind not in (EstimatorKind.DM, EstimatorKind.DR, EstimatorKind.M_DR):
        raise ValueError(f"cross-fitting applies to dm, dr and m-dr, not {kind.value}")
    first, second = crossfit_split(dataset.n, seed)
    halves = [dataset.subset(first), dataset.subset(second)]
    estimates = []
    for fit_half, est_half in ((halves[0], halves[1]), (halves[1], halves[0])):
        model = fit_fn(fit_half)
        if kind is EstimatorKind.DM:
            estimates.append(estimate_dm(est_half, target, model, grid))
        else:
            estimates.append(estimate_dr(est_half, target, behavior, model, grid))
    cls = StepCdf if kind is EstimatorKind.DM else StepFunction
    out = average_step_functions(estimates, cls)
    if kind is EstimatorKind.M_DR:
        out = monotone_clip(out)
    out.metadata.update(split="parity" if seed is None else "shuffle", seed=seed)
    return out
