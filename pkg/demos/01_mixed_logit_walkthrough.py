"""
Mixed logit on simulated crashes
================================

Simulate crashes whose speed effect on major injury varies across crashes,
fit a fixed-coefficient logit and a mixed logit, and read off marginal
effects and the sign split of the random coefficient.
"""

# %%
import numpy as np

from crashsev import (CovariateGenerator, DgpSpec, ModelSpec, ParameterVector, fit_mixed_logit,
                      fit_mnl, marginal_effects_average, random_parameter_shares,
                      simulate_dataset)

# %% the data-generating model: speed10 enters major injury with a Normal(0.3, 0.5) coefficient
spec = ModelSpec.build({"Major": ["const", "speed10", "male"], "Minor": ["const", "male"]},
                       random=["Major:speed10"])
truth = ParameterVector({"Major:const": -4.0, "Major:male": -0.5,
                         "Minor:const": -1.5, "Minor:male": -0.3},
                        {"Major:speed10": (0.3, 0.5)})
covariates = (CovariateGenerator("speed10", "uniform", low=2.0, high=7.0),
              CovariateGenerator("male", "indicator", p=0.55))
data = simulate_dataset(DgpSpec(spec, truth, covariates, seed=7), 8000)
print("class counts (Major, Minor, PossibleNo):", data.class_counts())

# %% fixed coefficients first, then the mixed model from 200 Halton draws per crash
mnl = fit_mnl(data, spec.without_random())
mixed = fit_mixed_logit(data, spec, n_draws=200)
for name, f in (("MNL", mnl), ("mixed", mixed)):
    print(f"{name:>5}: LL {f.ll_converged:9.2f}  rho2 {f.rho2:.3f}  "
          f"({f.n_estimated} parameters)")

# %% estimates with t-statistics; the spread is reported as |sigma|
for name, value, t in zip(mixed.param_names, mixed.theta, mixed.t_stats):
    print(f"{name:>18} {mixed.reported_value(name):8.3f}  t {t:7.2f}")

# %% share of crashes for which faster travel raises the chance of a major injury
for cid, s in random_parameter_shares(mixed).items():
    print(f"{cid}: {100 * s.positive:.1f}% positive, {100 * s.negative:.1f}% negative")

# %% average marginal effects, in probability units per unit change
effects = marginal_effects_average(data, mixed)
for row in effects.rows:
    cells = "  ".join(f"{a.value} {v:+.4f}" for a, v in row.effects.items())
    print(f"{row.variable:>8} ({row.home.value}): {cells}")
print("row sums:", np.abs(effects.as_array().sum(axis=1)).max())
