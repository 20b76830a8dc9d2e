import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from opra import CPT, CVaR, Distorted, Mean, MeanVariance, StepCdf, VaR, Variance, WeightedSum, lipschitz_constant, parse_risks
from opra.risk import (
    CVaRDistortion,
    IndicatorDistortion,
    PiecewiseLinearDistortion,
    PowerDistortion,
    atoms,
    check_distortion,
    eval_cpt,
    eval_cvar,
    eval_distorted,
    eval_mean,
    eval_mean_variance,
    eval_var_quantile,
    eval_variance,
    eval_weighted_sum,
    identity,
)

from conftest import random_step_cdf

E1_F = StepCdf([0.0, 1.0], [0.2, 1.0], 1.0)


def unit_step(r0, D=1.0):
    grid = np.unique([0.0, r0, D])
    return StepCdf(grid, (grid >= r0).astype(float), D)


def test_distorted_identity_is_mean():
    assert eval_distorted(E1_F, identity) == pytest.approx(0.8, abs=1e-15)


def test_indicator_distortion_is_essential_sup():
    F = StepCdf([0.0, 0.3, 0.7, 1.0], [0.1, 0.5, 1.0, 1.0], 1.0)
    assert eval_distorted(F, IndicatorDistortion()) == pytest.approx(0.7, abs=1e-15)


def test_identity_on_step_at_zero():
    assert eval_distorted(StepCdf([0.0, 1.0], [1.0, 1.0], 1.0), identity) == 0.0


def test_mean_examples():
    assert eval_mean(E1_F) == pytest.approx(0.8, abs=1e-15)
    assert eval_mean(StepCdf([0.0, 3.0], [0.0, 1.0], 3.0)) == 3.0
    grid = np.linspace(0, 2.0, 2001)
    assert eval_mean(StepCdf(grid, grid / 2.0, 2.0)) == pytest.approx(1.0, abs=1e-3)


def test_cvar_examples():
    assert eval_cvar(E1_F, 0.5) == pytest.approx(0.6, abs=1e-15)
    assert eval_cvar(E1_F, 1 - 1e-12) == pytest.approx(eval_mean(E1_F), abs=1e-9)
    for alpha in (0.05, 0.5, 0.9):
        assert eval_cvar(unit_step(0.4), alpha) == pytest.approx(0.4, abs=1e-15)
    with pytest.raises(ValueError):
        CVaR(1.0)


def test_variance_examples():
    assert eval_variance(E1_F) == pytest.approx(0.16, abs=1e-15)
    assert eval_variance(unit_step(0.3)) == pytest.approx(0.0, abs=1e-15)
    assert eval_variance(StepCdf([0.0, 1.0], [0.5, 1.0], 1.0)) == pytest.approx(0.25, abs=1e-15)


def test_mean_variance_examples():
    assert eval_mean_variance(E1_F, 1.0) == pytest.approx(0.96, abs=1e-15)
    assert eval_mean_variance(unit_step(0.3), 5.0) == pytest.approx(0.3, abs=1e-15)
    with pytest.raises(ValueError):
        MeanVariance(0.0)


def test_cpt_examples():
    assert eval_cpt(E1_F, CPT(u_minus=lambda z: 0.0 * np.asarray(z))) == pytest.approx(0.8, abs=1e-15)
    zero = CPT(u_plus=lambda z: 0.0 * np.asarray(z), u_minus=lambda z: 0.0 * np.asarray(z))
    assert eval_cpt(E1_F, zero) == 0.0
    assert CPT(baseline=0.5).evaluate(E1_F) == pytest.approx(0.3, abs=1e-15)


def test_var_examples():
    assert eval_var_quantile(E1_F, 0.1) == 0.0
    assert eval_var_quantile(E1_F, 0.5) == 1.0
    for alpha in (0.01, 0.5, 0.99):
        assert eval_var_quantile(unit_step(0.4), alpha) == 0.4
    assert VaR(0.5).lipschitz(1.0) is None


def test_lipschitz_constants():
    assert lipschitz_constant(CVaR(0.5), 1.0) == 2.0
    assert lipschitz_constant(Variance(), 1.0) == 3.0
    assert lipschitz_constant(MeanVariance(1.0), 1.0) == 4.0
    assert lipschitz_constant(Mean(), 2.5) == 2.5
    assert lipschitz_constant(Variance(), 2.0) == 12.0
    assert lipschitz_constant(MeanVariance(0.5), 2.0) == 2.0 + 6.0
    assert lipschitz_constant(CVaR(0.25), 2.0) == 8.0
    assert lipschitz_constant(CPT(), 1.0) == 2.0
    assert lipschitz_constant(Distorted(CVaRDistortion(0.2)), 3.0) == pytest.approx(15.0)
    assert lipschitz_constant(Distorted(PowerDistortion(0.5)), 1.0) is None
    assert lipschitz_constant(WeightedSum([(1, Mean()), (2, Variance())]), 1.0) == 7.0
    with pytest.raises(ValueError):
        lipschitz_constant(Mean(), 0.0)


def test_weighted_sum_examples():
    children = [(1.0, Mean()), (1.0, Variance())]
    assert eval_weighted_sum(E1_F, children) == pytest.approx(0.96, abs=1e-15)
    assert eval_weighted_sum(E1_F, [(1.0, Mean())]) == eval_mean(E1_F)
    with pytest.raises(ValueError):
        WeightedSum([])


def test_distortion_checks():
    with pytest.raises(ValueError):
        check_distortion(lambda s: np.asarray(s) * 0.5)
    with pytest.raises(ValueError):
        Distorted(lambda s: 1 - np.asarray(s))
    Distorted(PiecewiseLinearDistortion([0, 0.5, 1], [0, 0.8, 1]))
    with pytest.raises(ValueError):
        Distorted(PiecewiseLinearDistortion([0, 0.5, 1], [0, 0.8, 0.7]))
    with pytest.raises(ValueError):
        PiecewiseLinearDistortion([0, 0.6, 0.5], [0, 0.8, 1])


def test_piecewise_linear_lipschitz_is_max_slope():
    g = PiecewiseLinearDistortion([0, 0.5, 1], [0, 0.8, 1])
    assert g.lipschitz == pytest.approx(1.6)
    assert Distorted(g).lipschitz(2.0) == pytest.approx(3.2)


def test_parse_risks():
    names = [r.name for r in parse_risks("mean, cvar:0.5,variance,mean-variance:1,var:0.25,cpt:0.5,distorted:power:0.5")]
    assert names == ["mean", "cvar_0.5", "variance", "mean_variance_1", "var_0.25", "cpt_0.5", "distorted_power_0.5"]
    with pytest.raises(ValueError, match="cannot parse risk"):
        parse_risks("cvar")
    with pytest.raises(ValueError, match="cannot parse risk"):
        parse_risks("entropic:1")


def test_parse_distortion_file(tmp_path):
    from opra.io import read_distortion_csv

    p = tmp_path / "g.csv"
    p.write_text("s,g\n0,0\n0.5,0.8\n1,1\n")
    (risk,) = parse_risks(f"distorted:@{p}", loader=read_distortion_csv)
    assert risk.lipschitz(1.0) == pytest.approx(1.6)


# oracles computed from atoms


def _atom_mean(F):
    locs, m = atoms(F)
    return float(np.sum(locs * m))


def _quantile_average(F, alpha):
    # (1/alpha) int_0^alpha F^{-1}(u) du by sweeping atoms in ascending order
    locs, m = atoms(F)
    left, total = alpha, 0.0
    for x, p in zip(locs, m):
        take = min(p, left)
        total += take * x
        left -= take
        if left <= 0:
            break
    return total / alpha


random_cdfs = st.integers(0, 2**32 - 1).map(lambda s: random_step_cdf(np.random.default_rng(s), D=2.0))


@given(random_cdfs, st.floats(0.01, 0.99))
@settings(max_examples=300)
def test_atom_cross_checks(F, alpha):
    locs, m = atoms(F)
    assert eval_mean(F) == pytest.approx(_atom_mean(F), abs=1e-12)
    assert eval_distorted(F, identity) == pytest.approx(_atom_mean(F), abs=1e-12)
    second = float(np.sum(locs**2 * m))
    assert eval_variance(F) == pytest.approx(second - _atom_mean(F) ** 2, abs=1e-12)
    assert eval_cvar(F, alpha) == pytest.approx(_quantile_average(F, alpha), abs=1e-12)


@given(random_cdfs, st.floats(0.01, 0.99))
@settings(max_examples=200)
def test_first_order_dominance(F, shift):
    # shifting mass upward gives a pointwise smaller CDF
    values = np.where(F.breakpoints >= 2.0, 1.0, F.values * shift)
    G = StepCdf(F.breakpoints, values, 2.0)
    for g in (identity, CVaRDistortion(0.3), PowerDistortion(0.5)):
        assert eval_distorted(G, g) >= eval_distorted(F, g) - 1e-12


@given(random_cdfs, st.floats(0, 2))
@settings(max_examples=200)
def test_cpt_without_losses_is_distorted_pushforward(F, c):
    g = CVaRDistortion(0.3)
    spec = CPT(g_plus=g, baseline=c, u_minus=lambda z: 0.0 * np.asarray(z))
    locs, m = atoms(F)
    u = np.maximum(locs - c, 0.0)
    order = np.argsort(u)
    u, m = u[order], m[order]
    grid = np.unique(np.append(u, [0.0, 2.0]))
    vals = np.array([m[u <= t].sum() for t in grid])
    vals[-1] = min(vals[-1], 1.0)
    pushed = StepCdf(grid, np.minimum(np.maximum.accumulate(vals), 1.0), 2.0)
    assert eval_cpt(F, spec) == pytest.approx(eval_distorted(pushed, g), abs=1e-12)
