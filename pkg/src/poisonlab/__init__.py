"""
Numerical engine: datasets, regressors, hypergradients, attacks, defenses,
Bayesian regression and the experiment harness.
"""
