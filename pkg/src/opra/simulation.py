"""Finite environments with exact ground truth, the classification-to-bandit
transform, and Monte Carlo sweeps."""
from __future__ import annotations

import csv
import io
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from .bounds import eps_dr, eps_is_bernstein, eps_is_hoeffding
from .core import LoggedDataset, StepCdf, sup_distance, unique_rows
from .estimators import (
    EstimatorKind,
    estimate_dm,
    estimate_dr,
    estimate_is,
    estimate_is_clip,
    estimate_wis,
    estimate_with_crossfit,
    monotone_clip,
)
from .policy import MixturePolicy, Policy, SoftmaxPolicy, TabularPolicy, weight_stats
from .reward_model import (
    ConditionalCdfModel,
    fit_per_threshold_logistic,
    fit_tabular,
    oracle_model,
)
from .risk import CVaR, Mean, RiskFunctional, Variance

# RNG stream purposes; each (seed, purpose, ...) tuple gets its own Philox stream
STREAM_SAMPLE = 0
STREAM_AUX = 1
STREAM_SPLIT = 2
STREAM_PERMUTE = 3
STREAM_FIXTURE = 4
STREAM_TRAIN = 5


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Counter-based generator for an independent, schedule-free stream."""
    key = [int(seed) & 0xFFFFFFFF]
    key += [int(s) & 0xFFFFFFFF for s in stream]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))


@dataclass(frozen=True, eq=False)
class FiniteEnv:
    """Contextual bandit with finitely many contexts and discrete rewards.

    Parameters
    ----------
    context_probs : array, shape (m,)
    context_features : array, shape (m, d)
        Distinct feature vectors; logged datasets carry these as contexts.
    atoms, masses : nested sequences indexed ``[x][a]``
        Reward atoms in ``[0, D]`` and their probabilities.
    """

    context_probs: np.ndarray
    context_features: np.ndarray
    atoms: tuple
    masses: tuple
    n_actions: int
    reward_bound: float = 1.0

    def __post_init__(self):
        p = np.array(self.context_probs, dtype=np.float64)
        feats = np.array(self.context_features, dtype=np.float64)
        if feats.ndim == 1:
            feats = feats.reshape(-1, 1)
        m, k, D = p.shape[0], int(self.n_actions), float(self.reward_bound)
        if feats.shape[0] != m:
            raise ValueError("one feature vector per context")
        if np.any(p < 0) or abs(p.sum() - 1) > 1e-9:
            raise ValueError("context probabilities must sum to 1")
        if unique_rows(feats)[0].shape[0] != m:
            raise ValueError("context feature vectors must be distinct")
        atoms, masses = [], []
        for x in range(m):
            row_a, row_m = [], []
            for a in range(k):
                loc = np.array(self.atoms[x][a], dtype=np.float64).reshape(-1)
                mass = np.array(self.masses[x][a], dtype=np.float64).reshape(-1)
                if loc.shape != mass.shape or loc.size == 0:
                    raise ValueError(f"bad reward distribution at ({x}, {a})")
                if np.any(loc < 0) or np.any(loc > D):
                    raise ValueError(f"reward atoms outside [0, {D}] at ({x}, {a})")
                if np.any(mass < 0) or abs(mass.sum() - 1) > 1e-9:
                    raise ValueError(f"reward masses must sum to 1 at ({x}, {a})")
                order = np.argsort(loc)
                row_a.append(loc[order])
                row_m.append(mass[order])
            atoms.append(tuple(row_a))
            masses.append(tuple(row_m))
        object.__setattr__(self, "context_probs", p)
        object.__setattr__(self, "context_features", feats)
        object.__setattr__(self, "atoms", tuple(atoms))
        object.__setattr__(self, "masses", tuple(masses))
        object.__setattr__(self, "n_actions", k)
        object.__setattr__(self, "reward_bound", D)
        object.__setattr__(self, "_index", {tuple(f): i for i, f in enumerate(feats.tolist())})

    @property
    def n_contexts(self) -> int:
        return self.context_probs.shape[0]

    def atom_grid(self) -> np.ndarray:
        pieces = [np.array([0.0, self.reward_bound])]
        for row in self.atoms:
            pieces.extend(row)
        return np.unique(np.concatenate(pieces))

    def cdf_table(self, grid: np.ndarray) -> np.ndarray:
        """``G(t_j; x, a)`` for every context, action and grid point, shape ``(m, K, len(grid))``."""
        grid = np.asarray(grid, dtype=np.float64)
        out = np.empty((self.n_contexts, self.n_actions, grid.shape[0]))
        for x in range(self.n_contexts):
            for a in range(self.n_actions):
                cum = np.cumsum(self.masses[x][a])
                idx = np.searchsorted(self.atoms[x][a], grid, side="right") - 1
                out[x, a] = np.where(idx >= 0, cum[np.clip(idx, 0, None)], 0.0)
        out[..., grid >= self.reward_bound] = 1.0
        return np.minimum(out, 1.0)

    def conditional_cdf(self, t: float, x: int, a: int) -> float:
        return float(self.cdf_table([t])[x, a, 0])

    def context_index(self, contexts) -> np.ndarray:
        x = np.atleast_2d(np.asarray(contexts, dtype=np.float64))
        uniq, inverse = unique_rows(x)
        try:
            ids = np.array([self._index[tuple(u)] for u in uniq.tolist()], dtype=np.int64)
        except KeyError as exc:
            raise KeyError(f"context not in environment: {exc.args[0]!r}") from None
        return ids[inverse]

    def outcomes(self, behavior: Policy):
        """Every single-round outcome ``(x, a, r, probability)`` under ``behavior``."""
        beta = behavior.probabilities(self.context_features)
        for x in range(self.n_contexts):
            for a in range(self.n_actions):
                pa = self.context_probs[x] * beta[x, a]
                if pa == 0:
                    continue
                for r, pr in zip(self.atoms[x][a], self.masses[x][a]):
                    if pr > 0:
                        yield x, a, float(r), float(pa * pr)


class Fixture(NamedTuple):
    env: FiniteEnv
    target: Policy
    behavior: Policy


def make_e1() -> Fixture:
    """One context, two actions with deterministic rewards 0 and 1,
    uniform behavior and target ``(0.2, 0.8)``."""
    env = FiniteEnv([1.0], [[0.0]], [[[0.0], [1.0]]], [[[1.0], [1.0]]], 2, 1.0)
    target = TabularPolicy({(0.0,): [0.2, 0.8]})
    behavior = TabularPolicy({(0.0,): [0.5, 0.5]})
    return Fixture(env, target, behavior)


E2_SEED = 2022


def make_e2(seed: int = E2_SEED) -> Fixture:
    """Four contexts, three actions, three-atom rewards on a 0.1 lattice.

    The behavior policy gives one action per context a small probability that
    the target favours, so ``w_max`` is large (6 with the default seed) while
    ``w_2`` stays moderate.
    """
    rng = make_rng(seed, STREAM_FIXTURE)
    m, k = 4, 3
    p_x = rng.dirichlet(np.full(m, 4.0))
    lattice = np.round(np.arange(11) / 10.0, 10)
    atoms = [[np.sort(rng.choice(lattice, 3, replace=False)) for _ in range(k)] for _ in range(m)]
    masses = [[rng.dirichlet(np.full(3, 2.0)) for _ in range(k)] for _ in range(m)]
    pi_table, beta_table = {}, {}
    for x in range(m):
        favoured = x % k
        pi = np.full(k, 0.4 / (k - 1))
        pi[favoured] = 0.6
        beta = rng.dirichlet(np.full(k, 3.0))
        beta[favoured] = 0.0
        beta = 0.9 * beta / beta.sum()
        beta[favoured] = 0.1 if x == 0 else 0.2
        beta /= beta.sum()
        pi_table[(float(x),)] = pi
        beta_table[(float(x),)] = beta
    env = FiniteEnv(p_x, np.arange(m, dtype=np.float64).reshape(-1, 1), atoms, masses, k, 1.0)
    return Fixture(env, TabularPolicy(pi_table, k), TabularPolicy(beta_table, k))


FIXTURES = {"e1": make_e1, "e2": make_e2}


def fixture(name: str) -> Fixture:
    try:
        return FIXTURES[name.lower()]()
    except KeyError:
        raise KeyError(f"unknown fixture {name!r}; available: {sorted(FIXTURES)}") from None


def true_cdf(env: FiniteEnv, target: Policy) -> StepCdf:
    """``F(t) = sum_x p(x) sum_a pi(a|x) G(t; x, a)`` on the union of all atoms."""
    grid = env.atom_grid()
    pi = target.probabilities(env.context_features)
    table = env.cdf_table(grid)
    values = np.einsum("x,xa,xam->m", env.context_probs, pi, table)
    values = np.clip(np.maximum.accumulate(values), 0.0, 1.0)
    values[-1] = 1.0
    return StepCdf(grid, values, env.reward_bound)


def true_variance_decomposition(
    env: FiniteEnv,
    target: Policy,
    behavior: Policy,
    t: float,
    model: Optional[ConditionalCdfModel] = None,
    estimator: str = "is",
) -> tuple[float, float, float]:
    """Exact single-sample variance terms of the IS or DR estimate at ``t``.

    ``term1 = E[w^2 sigma^2]``, ``term2 = Var_X(E[w G | X])`` and
    ``term3 = E_X Var(w (G - G_bar) | X)`` with ``G_bar = 0`` for IS.
    Their sum is the variance of one summand; divide by ``n`` for the estimator.
    """
    if estimator not in ("is", "dr"):
        raise ValueError("estimator must be 'is' or 'dr'")
    if estimator == "dr" and model is None:
        raise ValueError("the DR decomposition needs a model")
    feats = env.context_features
    pi = target.probabilities(feats)
    beta = behavior.probabilities(feats)
    w = np.where(beta > 0, pi / np.where(beta > 0, beta, 1.0), 0.0)
    G = env.cdf_table([t])[..., 0]
    sigma2 = G * (1.0 - G)
    if estimator == "dr":
        acts = np.tile(np.arange(env.n_actions), env.n_contexts)
        ctx = np.repeat(feats, env.n_actions, axis=0)
        G_bar = model.cdf_matrix([t], ctx, acts)[:, 0].reshape(env.n_contexts, env.n_actions)
    else:
        G_bar = np.zeros_like(G)
    p = env.context_probs
    term1 = float(np.sum(p[:, None] * beta * w**2 * sigma2))
    # centered forms keep each term nonnegative under rounding
    cond_mean = np.sum(beta * w * G, axis=1)
    term2 = float(np.sum(p * (cond_mean - np.sum(p * cond_mean)) ** 2))
    h = w * (G - G_bar)
    h_mean = np.sum(beta * h, axis=1, keepdims=True)
    term3 = float(np.sum(p * np.sum(beta * (h - h_mean) ** 2, axis=1)))
    return term1, term2, term3


def sample_dataset(
    env: FiniteEnv,
    behavior: Policy,
    n: int,
    seed: int = 0,
    stream: Sequence[int] = (),
) -> LoggedDataset:
    """Draw ``n`` i.i.d. rounds ``x ~ p``, ``a ~ beta(.|x)``, ``r ~ R(.|x, a)``
    with logged propensities."""
    if n < 1:
        raise ValueError("n must be positive")
    rng = make_rng(seed, STREAM_SAMPLE, *stream)
    u = rng.random((n, 3))
    ctx = np.searchsorted(np.cumsum(env.context_probs), u[:, 0], side="right")
    ctx = np.minimum(ctx, env.n_contexts - 1)
    probs = behavior.probabilities(env.context_features)
    cum = np.cumsum(probs, axis=1)[ctx]
    actions = np.minimum((u[:, [1]] >= cum).sum(axis=1), env.n_actions - 1)
    # skip actions that carry zero mass under rounding at the top end
    props = probs[ctx, actions]
    bad = props <= 0
    if np.any(bad):
        actions[bad] = np.argmax(probs[ctx[bad]], axis=1)
        props = probs[ctx, actions]
    rewards = np.empty(n)
    cell = ctx * env.n_actions + actions
    for c in np.unique(cell):
        rows = cell == c
        x, a = divmod(int(c), env.n_actions)
        cum_r = np.cumsum(env.masses[x][a])
        j = np.minimum(np.searchsorted(cum_r, u[rows, 2], side="right"), len(cum_r) - 1)
        rewards[rows] = env.atoms[x][a][j]
    return LoggedDataset(
        env.context_features[ctx], actions, rewards, env.reward_bound, env.n_actions, props
    )


# -- classification to bandit -------------------------------------------------

def train_softmax_classifier(
    features: np.ndarray,
    labels: np.ndarray,
    n_classes: Optional[int] = None,
    epochs: int = 500,
    learning_rate: float = 0.5,
    l2_reg: float = 1.0,
) -> SoftmaxPolicy:
    """Multinomial logistic regression by full-batch gradient descent.

    Features are standardized internally and the scaling is folded back into
    the returned weights, so the policy acts on raw features.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    k = int(n_classes or y.max() + 1)
    n = x.shape[0]
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    z = (x - mean) / scale
    onehot = np.eye(k)[y]
    W = np.zeros((k, x.shape[1]))
    b = np.zeros(k)
    for _ in range(int(epochs)):
        logits = z @ W.T + b
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        err = (p - onehot) / n
        W -= learning_rate * (err.T @ z + (l2_reg / n) * W)
        b -= learning_rate * err.sum(axis=0)
    weights = W / scale
    bias = b - weights @ mean
    return SoftmaxPolicy(weights, bias)


def classification_to_bandit(
    features: np.ndarray,
    labels: np.ndarray,
    alpha: float,
    seed: int = 0,
    n_classes: Optional[int] = None,
    epochs: int = 500,
) -> tuple[LoggedDataset, SoftmaxPolicy, Policy]:
    """Turn a labelled dataset into logged bandit feedback.

    The target policy is a softmax classifier trained on the data; the
    behavior policy mixes it with the uniform policy at weight ``alpha``. One
    action is drawn per row and rewarded 1 when it matches the label.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    if y.size == 0 or np.any(y < 0) or np.any(y != np.round(y)):
        raise ValueError("labels must be nonnegative class indices")
    y = y.astype(np.int64)
    k = int(n_classes or y.max() + 1)
    if np.unique(y).shape[0] < 2:
        raise ValueError("need at least two distinct classes")
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    target = train_softmax_classifier(x, y, k, epochs=epochs)
    behavior = target if alpha == 1 else MixturePolicy(target, alpha)
    rng = make_rng(seed, STREAM_SAMPLE)
    probs = behavior.probabilities(x)
    cum = np.cumsum(probs, axis=1)
    actions = np.minimum((rng.random((x.shape[0], 1)) >= cum).sum(axis=1), k - 1)
    rewards = (actions == y).astype(np.float64)
    data = LoggedDataset(x, actions, rewards, 1.0, k, probs[np.arange(x.shape[0]), actions])
    return data, target, behavior


def population_env(features: np.ndarray, labels: np.ndarray, n_classes: Optional[int] = None) -> FiniteEnv:
    """The empirical distribution of a labelled dataset as a bandit environment.

    Contexts are the distinct feature rows; the reward of action ``a`` is 1
    when it equals the label, so duplicated rows with different labels get
    Bernoulli rewards.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    k = int(n_classes or y.max() + 1)
    uniq, inverse = unique_rows(x)
    counts = np.zeros((uniq.shape[0], k))
    np.add.at(counts, (inverse, y), 1.0)
    totals = counts.sum(axis=1)
    atoms, masses = [], []
    for i in range(uniq.shape[0]):
        frac = counts[i] / totals[i]
        atoms.append([[0.0, 1.0]] * k)
        masses.append([[1.0 - frac[a], frac[a]] for a in range(k)])
    return FiniteEnv(totals / totals.sum(), uniq, atoms, masses, k, 1.0)


# -- sweeps --------------------------------------------------------------------

@dataclass
class SweepConfig:
    """Monte Carlo sweep over sample sizes (and optionally mixture weights).

    ``estimators`` entries are estimator names optionally suffixed with a model,
    e.g. ``"dr"``, ``"m-dr@oracle"`` or ``"dm@logistic-permuted"``.
    """

    n_grid: Sequence[int]
    replications: int
    seed: int = 0
    estimators: Sequence[str] = ("is-clip", "wis", "dm", "dr")
    alpha_grid: Optional[Sequence[float]] = None
    model: str = "tabular"
    crossfit: bool = True
    risks: Sequence[RiskFunctional] = field(default_factory=lambda: [Mean(), CVaR(0.5), Variance()])
    record_runtime: bool = True
    workers: Optional[int] = None

    def __post_init__(self):
        self.n_grid = [int(n) for n in self.n_grid]
        if not self.n_grid or any(b <= a for a, b in zip(self.n_grid, self.n_grid[1:])):
            raise ValueError("n_grid must be nonempty and strictly increasing")
        if self.n_grid[0] < 1 or self.replications < 1:
            raise ValueError("sample sizes and replications must be positive")
        for token in self.estimators:
            parse_estimator_token(token, self.model)
        if self.alpha_grid is not None:
            self.alpha_grid = [float(a) for a in self.alpha_grid]
            if any(not 0 < a <= 1 for a in self.alpha_grid):
                raise ValueError("alpha values must lie in (0, 1]")


MODEL_KINDS = ("tabular", "logistic", "oracle", "tabular-permuted", "logistic-permuted")


def parse_estimator_token(token: str, default_model: str) -> tuple[EstimatorKind, str]:
    name, _, model = token.partition("@")
    kind = EstimatorKind(name.strip().lower())
    model = (model or default_model).strip().lower()
    if model not in MODEL_KINDS:
        raise ValueError(f"unknown model {model!r}; choose from {MODEL_KINDS}")
    return kind, model


@dataclass
class SweepResult:
    columns: list
    rows: list

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=np.float64)

    def select(self, **conditions) -> "SweepResult":
        rows = [r for r in self.rows if all(r[k] == v for k, v in conditions.items())]
        return SweepResult(self.columns, rows)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.columns)
        for row in self.rows:
            writer.writerow([_fmt(row[c]) for c in self.columns])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        return text


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        if math.isnan(value):
            return ""
        return repr(value)
    return str(value)


def _model_fit_fn(model_kind: str, env: FiniteEnv, seed: int, stream: tuple) -> Callable:
    base, _, suffix = model_kind.partition("-")
    permute = suffix == "permuted"

    def fit(data: LoggedDataset) -> ConditionalCdfModel:
        if permute:
            # break the context-reward link to build a deliberately misspecified model
            order = make_rng(seed, STREAM_PERMUTE, *stream, data.n).permutation(data.n)
            data = data.with_contexts(data.contexts[order])
        if base == "tabular":
            return fit_tabular(data)
        if base == "logistic":
            return fit_per_threshold_logistic(data)
        return oracle_model(env)

    return fit


def _run_one(kind, model_kind, data, env, target, behavior, crossfit, seed, stream):
    if kind is EstimatorKind.IS:
        return estimate_is(data, target, behavior)
    if kind is EstimatorKind.IS_CLIP:
        return estimate_is_clip(data, target, behavior)
    if kind is EstimatorKind.WIS:
        return estimate_wis(data, target, behavior)
    fit = _model_fit_fn(model_kind, env, seed, stream)
    if crossfit and model_kind != "oracle" and data.n >= 2:
        split_seed = int(make_rng(seed, STREAM_SPLIT, *stream).integers(2**31))
        return estimate_with_crossfit(data, target, behavior, fit, kind, seed=split_seed)
    model = fit(data)
    if kind is EstimatorKind.DM:
        return estimate_dm(data, target, model)
    raw = estimate_dr(data, target, behavior, model)
    return monotone_clip(raw) if kind is EstimatorKind.M_DR else raw


def _band_for(kind: EstimatorKind, n: int, delta: float, stats) -> float:
    if kind is EstimatorKind.IS_CLIP:
        return min(
            eps_is_hoeffding(n, delta, stats.w_max),
            eps_is_bernstein(n, delta, stats.w_max, stats.w_2),
        )
    if kind is EstimatorKind.M_DR:
        return eps_dr(n, delta, stats.w_max)
    return float("nan")


def run_sweep(
    env: FiniteEnv,
    target: Policy,
    behavior: Optional[Policy],
    sweep: SweepConfig,
    delta: float = 0.1,
) -> SweepResult:
    """Repeatedly sample, estimate and score against the exact ground truth.

    One row per ``(alpha, n, replication, estimator)`` with the sup-norm CDF
    error, the matching band half-width (tighter of Hoeffding and Bernstein
    for IS-clip, the DR band for M-DR, empty otherwise) and squared risk
    errors. Raw IS and DR estimates are scored on their valid projections
    for the risk columns. Replications use independent RNG streams, so results
    do not depend on scheduling.
    """
    truth = true_cdf(env, target)
    true_risks = [r.evaluate(truth) for r in sweep.risks]
    tokens = [(tok, *parse_estimator_token(tok, sweep.model)) for tok in sweep.estimators]
    alphas = sweep.alpha_grid if sweep.alpha_grid is not None else [None]
    if alphas == [None] and behavior is None:
        raise ValueError("a behavior policy or an alpha grid is required")

    tasks = []
    for ai, alpha in enumerate(alphas):
        beta = behavior if alpha is None else (target if alpha == 1 else MixturePolicy(target, alpha))
        stats = weight_stats(target, beta, env)
        for n in sweep.n_grid:
            for rep in range(sweep.replications):
                tasks.append((ai, alpha, beta, stats, n, rep))

    def work(task):
        ai, alpha, beta, stats, n, rep = task
        stream = (ai, n, rep)
        data = sample_dataset(env, beta, n, sweep.seed, stream)
        out = []
        for label, kind, model_kind in tokens:
            start = time.perf_counter()
            est = _run_one(kind, model_kind, data, env, target, beta, sweep.crossfit, sweep.seed, stream)
            valid = est if kind.is_valid_cdf else (
                StepCdf(est.breakpoints, np.minimum(est.values, 1.0), est.support_bound)
                if kind is EstimatorKind.IS else monotone_clip(est)
            )
            risk_vals = [r.evaluate(valid) for r in sweep.risks]
            elapsed = (time.perf_counter() - start) * 1000.0
            row = {"n": n, "rep": rep, "estimator": label}
            if alpha is not None:
                row["alpha"] = alpha
            row["sup_err"] = sup_distance(est, truth)
            row["band_eps"] = _band_for(kind, n, delta, stats)
            for r, v, tv in zip(sweep.risks, risk_vals, true_risks):
                row[f"{r.name}_err"] = (v - tv) ** 2
            row["runtime_ms"] = elapsed if sweep.record_runtime else None
            out.append(row)
        return out

    workers = sweep.workers or int(os.environ.get("OPRA_THREADS", "1") or 1)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(work, tasks))
    else:
        chunks = [work(t) for t in tasks]
    rows = [row for chunk in chunks for row in chunk]
    columns = ["n", "rep", "estimator"]
    if sweep.alpha_grid is not None:
        columns.append("alpha")
    columns += ["sup_err", "band_eps"] + [f"{r.name}_err" for r in sweep.risks] + ["runtime_ms"]
    return SweepResult(columns, rows)
