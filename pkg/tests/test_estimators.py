import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from opra import (
    EstimatorKind,
    LoggedDataset,
    StepCdf,
    StepFunction,
    TabularPolicy,
    crossfit_split,
    estimate_dm,
    estimate_dr,
    estimate_is,
    estimate_is_clip,
    estimate_mdr,
    estimate_wis,
    estimate_with_crossfit,
    eval_step_fn,
    fit_tabular,
    monotone_clip,
    oracle_model,
    sample_dataset,
    sup_distance,
    true_cdf,
)
from opra.reward_model import ZeroModel

from conftest import random_step_cdf


def test_is_on_e1_pair(e1, e1_pair):
    _, pi, beta = e1
    F = estimate_is(e1_pair, pi, beta)
    assert F(0.5) == pytest.approx(0.2, abs=1e-15)
    assert F(1.0) == pytest.approx(1.0, abs=1e-15)


def test_is_on_policy_is_empirical_cdf(e2):
    env, pi, _ = e2
    ds = sample_dataset(env, pi, 50, seed=3)
    F = estimate_is(ds, pi, pi)
    emp = np.array([np.mean(ds.rewards <= t) for t in F.breakpoints])
    np.testing.assert_array_equal(F.values, emp)


def test_is_constant_weight_may_exceed_one():
    pi = TabularPolicy({(0.0,): [1.0, 0.0]})
    beta = TabularPolicy({(0.0,): [0.25, 0.75]})
    ds = LoggedDataset([[0.0]] * 3, [0, 0, 0], [1.0] * 3, 1.0, 2)
    F = estimate_is(ds, pi, beta)
    assert F(0.99) == 0.0 and F(1.0) == 4.0
    assert not F.is_valid_cdf()


def test_is_clip_examples(e1, e1_pair):
    _, pi, beta = e1
    clip = estimate_is_clip(e1_pair, pi, beta)
    np.testing.assert_allclose(clip.values, [0.2, 1.0], atol=1e-15)
    assert isinstance(clip, StepCdf)


def test_is_clip_pointwise_min():
    pi = TabularPolicy({(0.0,): [0.3, 0.7]})
    beta = TabularPolicy({(0.0,): [0.5, 0.5]})
    # weights 0.6 and 1.4 on rewards 0.2 and 0.8
    ds = LoggedDataset([[0.0]] * 2, [0, 1], [0.2, 0.8], 1.0, 2)
    raw = estimate_is(ds, pi, beta)
    np.testing.assert_allclose(raw(np.array([0.2, 0.8])), [0.3, 1.0])
    clip = estimate_is_clip(ds, pi, beta)
    np.testing.assert_array_equal(clip.values, np.minimum(raw.values, 1.0))


def test_wis_examples(e1, e1_pair):
    _, pi, beta = e1
    assert estimate_wis(e1_pair, pi, beta)(0.5) == pytest.approx(0.2, abs=1e-15)
    one = e1_pair.subset([1])
    W = estimate_wis(one, pi, beta)
    assert W(0.99) == 0.0 and W(1.0) == 1.0


def test_wis_zero_total_weight():
    pi = TabularPolicy({(0.0,): [1.0, 0.0]})
    beta = TabularPolicy({(0.0,): [0.5, 0.5]})
    ds = LoggedDataset([[0.0]], [1], [0.5], 1.0, 2)
    with pytest.raises(ValueError):
        estimate_wis(ds, pi, beta)


def test_dm_oracle_e1(e1):
    env, pi, beta = e1
    model = oracle_model(env)
    for seed in range(5):
        ds = sample_dataset(env, beta, 7, seed=seed)
        assert estimate_dm(ds, pi, model)(0.5) == pytest.approx(0.2, abs=1e-15)


def test_dm_single_row_equals_model(e2):
    env, pi, beta = e2
    ds = sample_dataset(env, beta, 1, seed=0)
    model = oracle_model(env)
    F = estimate_dm(ds, pi, model)
    np.testing.assert_allclose(F.values, model.marginal_matrix(F.breakpoints, ds.contexts, pi)[0], atol=1e-15)


def test_dm_uniform_model():
    class Uniform(ZeroModel):
        def cdf_matrix(self, thresholds, contexts, actions):
            t = np.clip(np.asarray(thresholds, float), 0, self.reward_bound) / self.reward_bound
            return np.tile(t, (np.asarray(actions).size, 1))

        @property
        def breakpoints(self):
            return np.linspace(0, 2, 9)

    ds = LoggedDataset([[0.0]] * 2, [0, 1], [0.5, 1.5], 2.0, 2)
    F = estimate_dm(ds, TabularPolicy({(0.0,): [0.5, 0.5]}), Uniform(2.0))
    np.testing.assert_allclose(F.values, F.breakpoints / 2, atol=1e-15)


def test_dr_oracle_e1_single_row(e1):
    env, pi, beta = e1
    ds = LoggedDataset([[0.0]], [1], [1.0], 1.0, 2)
    F = estimate_dr(ds, pi, beta, oracle_model(env))
    assert F(0.5) == pytest.approx(0.2, abs=1e-15)


def test_dr_zero_model_equals_is(e2):
    env, pi, beta = e2
    ds = sample_dataset(env, beta, 200, seed=1)
    dr = estimate_dr(ds, pi, beta, ZeroModel(1.0))
    is_ = estimate_is(ds, pi, beta)
    np.testing.assert_array_equal(dr(is_.breakpoints), is_.values)


def test_dr_on_policy_single_row(e2):
    env, pi, _ = e2
    model = oracle_model(env)
    ds = sample_dataset(env, pi, 1, seed=5)
    F = estimate_dr(ds, pi, pi, model)
    t = F.breakpoints
    expected = (
        (ds.rewards[0] <= t)
        - model.cdf_matrix(t, ds.contexts, ds.actions)[0]
        + model.marginal_matrix(t, ds.contexts, pi)[0]
    )
    np.testing.assert_allclose(F.values, expected, atol=1e-15)


def test_monotone_clip_example():
    raw = StepFunction([0.0, 0.3, 0.6, 1.0], [-0.1, 0.3, 0.2, 1.1], 1.0)
    np.testing.assert_array_equal(monotone_clip(raw).values, [0.0, 0.3, 0.3, 1.0])


def test_monotone_clip_all_negative():
    raw = StepFunction([0.0, 0.5, 1.0], [-0.3, -0.2, -0.5], 1.0)
    np.testing.assert_array_equal(monotone_clip(raw).values, [0.0, 0.0, 1.0])


def test_monotone_clip_appends_bound():
    out = monotone_clip(StepFunction([0.0, 0.5], [0.2, 0.4], 1.0))
    np.testing.assert_array_equal(out.breakpoints, [0.0, 0.5, 1.0])
    assert out.values[-1] == 1.0


def test_crossfit_split_parity_and_seed():
    a, b = crossfit_split(5)
    np.testing.assert_array_equal(a, [0, 2, 4])
    np.testing.assert_array_equal(b, [1, 3])
    a1, b1 = crossfit_split(10, seed=3)
    a2, b2 = crossfit_split(10, seed=3)
    np.testing.assert_array_equal(a1, a2)
    assert sorted(np.concatenate([a1, b1]).tolist()) == list(range(10))
    with pytest.raises(ValueError):
        crossfit_split(1)


def test_crossfit_identical_halves(e2):
    env, pi, beta = e2
    ds = sample_dataset(env, beta, 1, seed=2)
    doubled = LoggedDataset(
        np.repeat(ds.contexts, 2, axis=0), np.repeat(ds.actions, 2), np.repeat(ds.rewards, 2), 1.0, 3,
        np.repeat(ds.propensities, 2),
    )
    model = fit_tabular(ds)
    cf = estimate_with_crossfit(doubled, pi, beta, fit_tabular, "dr")
    single = estimate_dr(doubled, pi, beta, model)
    np.testing.assert_allclose(cf(single.breakpoints), single.values, atol=1e-15)


def test_crossfit_dm_oracle(e2):
    env, pi, beta = e2
    ds = sample_dataset(env, beta, 40, seed=0)
    model = oracle_model(env)
    cf = estimate_with_crossfit(ds, pi, beta, lambda d: model, "dm")
    # halves average to the full-sample mean because both have 20 rows
    np.testing.assert_allclose(cf(cf.breakpoints), estimate_dm(ds, pi, model)(cf.breakpoints), atol=1e-15)
    assert cf.metadata["split"] == "parity"


def test_crossfit_e1_pair(e1, e1_pair):
    _, pi, beta = e1
    cf = estimate_with_crossfit(e1_pair, pi, beta, fit_tabular, "dr")
    first = estimate_dr(e1_pair.subset([1]), pi, beta, fit_tabular(e1_pair.subset([0])))
    second = estimate_dr(e1_pair.subset([0]), pi, beta, fit_tabular(e1_pair.subset([1])))
    t = cf.breakpoints
    np.testing.assert_allclose(cf.values, (first(t) + second(t)) / 2, atol=1e-15)


def test_crossfit_records_seed(e2):
    env, pi, beta = e2
    ds = sample_dataset(env, beta, 30, seed=0)
    out = estimate_with_crossfit(ds, pi, beta, fit_tabular, "m-dr", seed=11)
    assert out.metadata == {"split": "shuffle", "seed": 11}
    assert isinstance(out, StepCdf) and out.values[-1] == 1.0


def test_crossfit_rejects_is(e1, e1_pair):
    _, pi, beta = e1
    with pytest.raises(ValueError):
        estimate_with_crossfit(e1_pair, pi, beta, fit_tabular, "is")


def test_kind_validity():
    assert [k.value for k in EstimatorKind if k.is_valid_cdf] == ["is-clip", "wis", "dm", "m-dr"]


def test_breakpoints_contain_rewards_and_bounds(e2):
    env, pi, beta = e2
    ds = sample_dataset(env, beta, 25, seed=4)
    model = fit_tabular(ds)
    for F in (estimate_is(ds, pi, beta), estimate_dr(ds, pi, beta, model), estimate_dm(ds, pi, model)):
        assert set(np.unique(ds.rewards)) <= set(F.breakpoints)
        assert F.breakpoints[0] == 0.0 and F.breakpoints[-1] == 1.0


def test_clip_dominates_is_in_sup_error(e2):
    env, pi, beta = e2
    F = true_cdf(env, pi)
    for seed in range(30):
        ds = sample_dataset(env, beta, 20, seed=seed)
        assert sup_distance(estimate_is_clip(ds, pi, beta), F) <= sup_distance(estimate_is(ds, pi, beta), F)


@st.composite
def raw_steps(draw):
    k = draw(st.integers(1, 10))
    b = np.unique(np.array(draw(st.lists(st.floats(0, 1), min_size=k, max_size=k)) + [0.0]))
    v = np.array(draw(st.lists(st.floats(-1, 2), min_size=b.size, max_size=b.size)))
    return StepFunction(b, v, 1.0)


@given(raw_steps(), st.integers(0, 2**31))
@settings(max_examples=300)
def test_monotone_clip_properties(raw, seed):
    out = monotone_clip(raw)
    assert out.is_valid_cdf() and out.values[-1] == 1.0
    again = monotone_clip(out)
    np.testing.assert_array_equal(again.values, out.values)
    ref = random_step_cdf(np.random.default_rng(seed))
    assert sup_distance(out, ref) <= sup_distance(raw, ref) + 1e-15


@given(raw_steps())
def test_valid_input_left_unchanged(raw):
    valid = monotone_clip(raw)
    np.testing.assert_array_equal(monotone_clip(valid).values, valid.values)
    np.testing.assert_array_equal(eval_step_fn(valid, valid.breakpoints), valid.values)
