"""Shared helpers: random dataset factories and dense-formula oracles.

The oracles deliberately transcribe the defining formulas with explicit
matrix inverses so they stay independent of the factorized implementation
paths they are used to check.
"""

import numpy as np
import pytest

from gpcal import Dataset, KernelFamily, KernelSpec
from gpcal.gp import fit_gp
from gpcal.kernels import kernel_radial

ALL_FAMILIES = (
    KernelFamily.EXPONENTIAL,
    KernelFamily.MATERN32,
    KernelFamily.MATERN52,
    KernelFamily.SQUARED_EXPONENTIAL,
)


def random_dataset(rng, n=12, d=2, smooth=True):
    """A modest random regression dataset with a nonlinear response."""
    X = rng.uniform(0.0, 1.0, (n, d))
    y = (np.sin(3.0 * X[:, 0]) + np.sum(X * X, axis=1)
         + 0.05 * rng.standard_normal(n))
    return Dataset(X=X, y=y)


def random_kernel(rng, d, family=None, nugget=None):
    family = family or ALL_FAMILIES[rng.integers(len(ALL_FAMILIES))]
    if nugget is None:
        nugget = float(rng.uniform(0.01, 0.2))
    return KernelSpec(
        family=family,
        sigma2=float(rng.uniform(0.3, 3.0)),
        theta=rng.uniform(0.2, 1.5, d),
        nugget=nugget,
    )


def dense_gram(X, spec):
    """Entrywise kernel matrix, nugget included, via the scalar kernel."""
    n = X.shape[0]
    K = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            K[i, j] = kernel_radial(spec, X[i], X[j])
    return K + spec.nugget * np.eye(n)


def dense_kbar(X, y, F, spec):
    """Kbar by literal dense inverses (oracle)."""
    K = dense_gram(X, spec)
    Kinv = np.linalg.inv(K)
    if F.shape[1] == 0:
        return Kinv
    G = F.T @ Kinv @ F
    return Kinv - Kinv @ F @ np.linalg.inv(G) @ F.T @ Kinv


def dense_predict(X, y, F, spec, trend, x_new):
    """Posterior mean/variance by literal dense transcription (oracle)."""
    n = X.shape[0]
    K = dense_gram(X, spec)
    Kinv = np.linalg.inv(K)
    k = np.array([kernel_radial(spec, X[i], x_new) for i in range(n)])
    f_new = trend.basis(np.atleast_2d(x_new))[0]
    if F.shape[1] > 0:
        G = F.T @ Kinv @ F
        beta = np.linalg.inv(G) @ F.T @ Kinv @ y
        mean = f_new @ beta + k @ Kinv @ (y - F @ beta)
        u = f_new - F.T @ Kinv @ k
        var = (spec.sigma2 + spec.nugget - k @ Kinv @ k
               + u @ np.linalg.inv(G) @ u)
    else:
        mean = k @ Kinv @ y
        var = spec.sigma2 + spec.nugget - k @ Kinv @ k
    return mean, var


def brute_force_loo(dataset, spec, trend):
    """Refit-on-n-subsets leave-one-out oracle."""
    n = dataset.n
    means = np.empty(n)
    variances = np.empty(n)
    from gpcal.gp import predict
    for i in range(n):
        mask = np.arange(n) != i
        sub = Dataset(X=dataset.X[mask], y=dataset.y[mask])
        model = fit_gp(sub, spec, trend)
        means[i], variances[i] = predict(model, dataset.X[i])
    return means, variances


@pytest.fixture
def rng():
    return np.random.default_rng(20260811)
