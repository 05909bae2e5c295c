"""Fit a kriging model to a noisy analytical response and predict with
prediction intervals.

Walks the basic workflow: sample a design, evaluate a test function, fit
kernel hyperparameters by maximum likelihood, and query the posterior.
"""

import numpy as np

from gpcal import (
    Dataset,
    KernelFamily,
    TrendSpec,
    fit_gp,
    fit_mle,
    morokoff_caflisch,
    predict,
    prediction_interval,
)

rng = np.random.default_rng(0)

# 80 noisy observations of the Morokoff-Caflisch function in 3 dimensions.
n, d = 80, 3
X = rng.uniform(0.0, 1.0, (n, d))
y = morokoff_caflisch(X) + 0.02 * rng.standard_normal(n)
train = Dataset(X=X, y=y)
trend = TrendSpec.from_string("ordinary")

# Maximum-likelihood hyperparameters with a known noise variance.
result = fit_mle(train, trend, KernelFamily.MATERN52, nugget=0.02 ** 2,
                 seed=0)
print("fitted kernel:")
print("  sigma2 =", round(result.kernel.sigma2, 5))
print("  theta  =", np.round(result.kernel.theta, 3))
print("  profile objective =", round(result.objective_value, 3))

model = fit_gp(train, result.kernel, trend)

# Predict on fresh points with 90% intervals.
X_new = rng.uniform(0.0, 1.0, (8, d))
truth = morokoff_caflisch(X_new)
means, variances = predict(model, X_new)
lower, upper = prediction_interval(model, X_new, alpha=0.1)

print("\n  truth    mean     90% interval")
for t, m, lo, up in zip(truth, means, lower, upper):
    inside = "in " if lo <= t <= up else "OUT"
    print(f"  {t:7.4f}  {m:7.4f}  [{lo:7.4f}, {up:7.4f}]  {inside}")
