"""Assess several risks of the E2 target policy from one logged sample.

Run with ``python3 demos/assess_e2.py``.
"""
from opra import CVaR, Mean, MeanVariance, OpraConfig, Variance, fixture, run_opra, sample_dataset, true_cdf, weight_stats

env, target, behavior = fixture("e2")
data = sample_dataset(env, behavior, 5000, seed=1)
risks = [Mean(), CVaR(0.25), CVaR(0.5), Variance(), MeanVariance(1.0)]
config = OpraConfig("is-clip", "bernstein", 0.1, risks)
report = run_opra(data, target, config, behavior=behavior, weight_stats=weight_stats(target, behavior, env))
print(report.to_table())

truth = true_cdf(env, target)
print("true values:")
for r in risks:
    print(f"  {r.name:<16} {r.evaluate(truth):.4f}")
