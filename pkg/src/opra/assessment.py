"""One CDF estimate, one confidence band, many simultaneous risk estimates."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, Sequence

from .bounds import BoundInputs, confidence_band
from .core import BandMethod, ConfidenceBand, LoggedDataset, StepCdf
from .estimators import (
    EstimatorKind,
    estimate_dm,
    estimate_dr,
    estimate_is_clip,
    estimate_wis,
    estimate_with_crossfit,
    monotone_clip,
)
from .policy import Policy, WeightStats, context_key, estimate_behavior_tabular
from .policy import weight_stats as compute_weight_stats
from .reward_model import ConditionalCdfModel, fit_per_threshold_logistic, fit_tabular
from .risk import MeanVariance, RiskFunctional


class ConfigError(ValueError):
    """Invalid or inconsistent assessment configuration."""


class BehaviorSource(str, Enum):
    KNOWN_POLICY = "known-policy"
    LOGGED_PROPENSITIES = "logged-propensities"
    ESTIMATED_TABULAR = "estimated-tabular"


# estimators with a finite-sample band and the bands they accept
_COMPATIBLE = {
    EstimatorKind.IS_CLIP: (BandMethod.IS_HOEFFDING, BandMethod.IS_BERNSTEIN, BandMethod.DKW),
    EstimatorKind.M_DR: (BandMethod.DR,),
}
_ESTIMATE_ONLY = (EstimatorKind.WIS, EstimatorKind.DM)


@dataclass(frozen=True)
class ModelConfig:
    """Conditional CDF model family for DM and DR."""

    kind: str = "tabular"
    smoothing: float = 0.0
    l2_reg: float = 1.0
    epochs: int = 500
    learning_rate: float = 0.1

    def __post_init__(self):
        if self.kind not in ("tabular", "logistic"):
            raise ConfigError(f"unknown model kind {self.kind!r}")

    def fit(self, data: LoggedDataset) -> ConditionalCdfModel:
        if self.kind == "tabular":
            return fit_tabular(data, smoothing=self.smoothing)
        return fit_per_threshold_logistic(
            data, l2_reg=self.l2_reg, epochs=self.epochs, learning_rate=self.learning_rate
        )

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "smoothing": self.smoothing,
            "l2_reg": self.l2_reg,
            "epochs": self.epochs,
            "learning_rate": self.learning_rate,
        }


@dataclass(frozen=True)
class OpraConfig:
    """Assessment settings.

    ``band_method`` must be None for the estimate-only estimators (WIS, DM).
    Raw IS and DR are accepted and replaced by their valid counterparts
    (IS-clip and M-DR).
    """

    estimator: EstimatorKind | str
    band_method: Optional[BandMethod | str]
    delta: float
    risks: Sequence[RiskFunctional]
    model_config: Optional[ModelConfig] = None
    crossfit: bool = True
    behavior_source: BehaviorSource | str = BehaviorSource.KNOWN_POLICY
    eps_beta: Optional[float] = None
    seed: Optional[int] = None

    def __post_init__(self):
        try:
            est = EstimatorKind(self.estimator)
            band = None if self.band_method is None else BandMethod(self.band_method)
            source = BehaviorSource(self.behavior_source)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        est = {EstimatorKind.IS: EstimatorKind.IS_CLIP, EstimatorKind.DR: EstimatorKind.M_DR}.get(est, est)
        object.__setattr__(self, "estimator", est)
        object.__setattr__(self, "band_method", band)
        object.__setattr__(self, "behavior_source", source)
        object.__setattr__(self, "risks", tuple(self.risks))
        if not 0 < self.delta < 1:
            raise ConfigError("delta must lie in (0, 1)")
        if not self.risks:
            raise ConfigError("at least one risk functional is required")
        names = [r.name for r in self.risks]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate risk names: {names}")
        if est in _ESTIMATE_ONLY:
            if band is not None:
                raise ConfigError(f"{est.value} has no finite-sample band; use band_method=None")
        elif band is None or band not in _COMPATIBLE[est]:
            allowed = ", ".join(b.value for b in _COMPATIBLE[est])
            raise ConfigError(f"estimator {est.value} requires a band in {{{allowed}}}")
        if band is BandMethod.ESTIMATED_POLICY_ADJUSTED:
            raise ConfigError("the estimated-policy widening is applied automatically")
        if source is BehaviorSource.ESTIMATED_TABULAR:
            if self.eps_beta is None or self.eps_beta < 0:
                raise ConfigError("an estimated behavior policy requires eps_beta >= 0")
            if band is BandMethod.DKW:
                raise ConfigError("the DKW band assumes on-policy data")
        if est in (EstimatorKind.DM, EstimatorKind.M_DR) and self.model_config is None:
            object.__setattr__(self, "model_config", ModelConfig())

    def to_dict(self) -> dict:
        return {
            "estimator": self.estimator.value,
            "band_method": None if self.band_method is None else self.band_method.value,
            "delta": self.delta,
            "risks": [r.name for r in self.risks],
            "model_config": None if self.model_config is None else self.model_config.to_dict(),
            "crossfit": self.crossfit,
            "behavior_source": self.behavior_source.value,
            "eps_beta": self.eps_beta,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class RiskEstimate:
    name: str
    estimate: float
    lipschitz: Optional[float]
    half_width: Optional[float]

    @property
    def interval(self) -> Optional[tuple[float, float]]:
        if self.half_width is None:
            return None
        return self.estimate - self.half_width, self.estimate + self.half_width

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "estimate": self.estimate,
            "lipschitz": self.lipschitz,
            "half_width": self.half_width,
        }


@dataclass
class RiskReport:
    """Risk estimates sharing one CDF estimate and one band.

    Every ``half_width`` is ``lipschitz * band.epsilon``; risks without a
    Lipschitz constant, and every risk under an estimate-only estimator, get
    ``None``.
    """

    entries: list
    band: Optional[ConfidenceBand]
    delta: float
    estimator: EstimatorKind
    cdf: StepCdf
    weight_stats: Optional[WeightStats] = None
    flags: list = field(default_factory=list)
    alternative_bands: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def __getitem__(self, name: str) -> RiskEstimate:
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    def to_dict(self) -> dict:
        ws = self.weight_stats
        return {
            "estimator": self.estimator.value,
            "delta": self.delta,
            "band": None if self.band is None else self.band.to_dict(),
            "guarantee": self.band is not None,
            "alternative_bands": {k: v.to_dict() for k, v in self.alternative_bands.items()},
            "weight_stats": None if ws is None else {"w_max": ws.w_max, "w_2": ws.w_2, "exact": ws.exact},
            "risks": [e.to_dict() for e in self.entries],
            "cdf": {
                "breakpoints": self.cdf.breakpoints.tolist(),
                "values": self.cdf.values.tolist(),
                "support_bound": self.cdf.support_bound,
            },
            "flags": list(self.flags),
            "metadata": self.metadata,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def to_table(self) -> str:
        lines = [f"estimator: {self.estimator.value}"]
        if self.band is None:
            lines.append("band: none (no guarantee)")
        else:
            note = " (vacuous)" if self.band.vacuous else ""
            lines.append(
                f"band: {self.band.method.value} epsilon={self.band.epsilon:.6g}{note} delta={self.delta:g}"
            )
        for k, b in sorted(self.alternative_bands.items()):
            lines.append(f"  alt {k}: epsilon={b.epsilon:.6g}")
        header = f"{'risk':<24}{'estimate':>14}{'L':>10}{'half_width':>14}   interval"
        lines += [header, "-" * len(header)]
        for e in self.entries:
            lip = "-" if e.lipschitz is None else f"{e.lipschitz:.4g}"
            hw = "-" if e.half_width is None else f"{e.half_width:.6g}"
            iv = "-" if e.interval is None else f"[{e.interval[0]:.6g}, {e.interval[1]:.6g}]"
            lines.append(f"{e.name:<24}{e.estimate:>14.6g}{lip:>10}{hw:>14}   {iv}")
        for f in self.flags:
            lines.append(f"note: {f}")
        return "\n".join(lines) + "\n"


def _estimate_cdf(dataset, target, behavior, config: OpraConfig, model) -> StepCdf:
    kind = config.estimator
    if kind is EstimatorKind.IS_CLIP:
        return estimate_is_clip(dataset, target, behavior)
    if kind is EstimatorKind.WIS:
        return estimate_wis(dataset, target, behavior)
    if model is None and config.crossfit and dataset.n >= 2:
        return estimate_with_crossfit(
            dataset, target, behavior, config.model_config.fit, kind, seed=config.seed
        )
    if model is None:
        model = config.model_config.fit(dataset)
    if kind is EstimatorKind.DM:
        return estimate_dm(dataset, target, model)
    return monotone_clip(estimate_dr(dataset, target, behavior, model))


def run_opra(
    dataset: LoggedDataset,
    target: Policy,
    config: OpraConfig,
    behavior: Optional[Policy] = None,
    model: Optional[ConditionalCdfModel] = None,
    weight_stats: Optional[WeightStats] = None,
    estimated_behavior: Optional[tuple[Policy, float]] = None,
    key_fn: Callable = context_key,
) -> RiskReport:
    """Assess every configured risk of ``target`` from logged data.

    Parameters
    ----------
    behavior : Policy, optional
        The logging policy. Required for ``KNOWN_POLICY`` unless the dataset
        carries propensities.
    model : ConditionalCdfModel, optional
        Pre-fitted model for DM or DR; disables cross-fitting.
    weight_stats : WeightStats, optional
        True ``w_max`` and ``w_2``. Without them, plug-in values from the
        dataset are used and the band is marked heuristic.
    estimated_behavior : (Policy, float), optional
        A behavior estimate and its smallest probability, e.g. fitted on
        auxiliary data. With ``ESTIMATED_TABULAR`` and no estimate given, a
        tabular estimate is fitted on ``dataset`` itself.
    """
    if dataset.n < 1:
        raise ConfigError("dataset is empty")
    source = config.behavior_source
    flags = []
    inf_beta_hat = None
    if source is BehaviorSource.ESTIMATED_TABULAR:
        if estimated_behavior is None:
            estimated_behavior = estimate_behavior_tabular(dataset, key_fn)
        behavior, inf_beta_hat = estimated_behavior
        # the estimated policy replaces any logged propensities
        dataset = dataset.without_propensities()
    elif source is BehaviorSource.LOGGED_PROPENSITIES:
        if dataset.propensities is None:
            raise ConfigError("behavior source unresolved: dataset has no logged propensities")
    elif behavior is None and dataset.propensities is None:
        raise ConfigError("behavior source unresolved: no behavior policy and no logged propensities")

    cdf = _estimate_cdf(dataset, target, behavior, config, model)

    band = None
    alternatives = {}
    stats = weight_stats or compute_weight_stats(target, behavior, dataset)
    heuristic = not stats.exact
    if config.band_method is BandMethod.DKW and abs(stats.w_max - 1.0) > 1e-9:
        raise ConfigError(f"the DKW band requires on-policy data (w_max = 1), got w_max = {stats.w_max:g}")
    if config.band_method is not None:
        est_kwargs = {}
        if inf_beta_hat is not None:
            est_kwargs = {"eps_beta": float(config.eps_beta), "inf_beta_hat": float(inf_beta_hat)}
        inputs = BoundInputs(dataset.n, config.delta, stats.w_max, stats.w_2, **est_kwargs)
        band = confidence_band(config.band_method, inputs, heuristic)
        if config.estimator is EstimatorKind.IS_CLIP:
            for m in (BandMethod.IS_HOEFFDING, BandMethod.IS_BERNSTEIN):
                alternatives[m.value] = confidence_band(m, inputs, heuristic)
            tighter = min(alternatives, key=lambda k: alternatives[k].epsilon)
            flags.append(f"tighter IS band: {tighter}")
        if band.vacuous:
            flags.append("band is vacuous (epsilon >= 1)")
        if heuristic:
            flags.append("weight statistics are plug-in estimates; band is heuristic")
    else:
        flags.append(f"no guarantee: {config.estimator.value} has no finite-sample band")

    D = dataset.reward_bound
    entries = []
    for risk in config.risks:
        value = float(risk.evaluate(cdf))
        lip = risk.lipschitz(D)
        hw = None if (band is None or lip is None) else lip * band.epsilon
        entries.append(RiskEstimate(risk.name, value, lip, hw))
        if isinstance(risk, MeanVariance):
            flags.append(f"{risk.name}: Lipschitz constant D + 3*lambda*D^2 (conservative)")
    metadata = {"n": dataset.n, "behavior_source": source.value, "config": config.to_dict()}
    if inf_beta_hat is not None:
        metadata["inf_beta_hat"] = inf_beta_hat
    if "split" in cdf.metadata:
        metadata["crossfit_split"] = cdf.metadata["split"]
    return RiskReport(entries, band, config.delta, config.estimator, cdf, stats, flags, alternatives, metadata)
