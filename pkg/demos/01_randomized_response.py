"""
Randomized response on the client
=================================

Each home reports one category per slot. Before it leaves the home the value
goes through k-ary randomized response, so the aggregator only ever sees a
noisy symbol. Here we check the likelihood-ratio bound and watch the
debiased frequency estimate tighten as epsilon grows.
"""

import math

import numpy as np

from smarthome_ldp.ldp import (
    CategoryDomain,
    PerturbedReport,
    estimate_frequencies,
    krr_distribution,
    krr_perturb_indices,
    verify_ldp,
)

domain = CategoryDomain(("weather", "news", "recipes", "cancer_symptoms"))

# output distribution for a true "news" query at epsilon = ln 3
dist = krr_distribution("news", domain, math.log(3))
print({s: round(float(p), 4) for s, p in zip(domain.symbols, dist)})

# the worst-case output ratio equals e^eps
for eps in (0.1, 1.0, 3.0):
    print(f"eps={eps:<4} ratio={verify_ldp(domain, eps):.4f}  e^eps={math.exp(eps):.4f}")

# a skewed population, 20k homes
truth = np.array([0.5, 0.3, 0.15, 0.05])
rng = np.random.default_rng(0)
true_idx = rng.choice(domain.k, size=20_000, p=truth)

print("\n eps   max|f_hat - f|")
for eps in (0.5, 1.0, 2.0, 4.0, 8.0):
    noisy = krr_perturb_indices(true_idx, domain.k, eps, rng)
    reports = [PerturbedReport(f"h{i}", 1, domain.symbols[o], eps) for i, o in enumerate(noisy)]
    est = estimate_frequencies(reports, domain)
    print(f"{eps:4.1f}   {np.abs(est - truth).max():.4f}")
