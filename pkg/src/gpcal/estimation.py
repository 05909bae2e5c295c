"""Hyperparameter estimation: profile-likelihood MLE, leave-one-out
MSE cross-validation, and a full-Bayesian predictive baseline.

Both deterministic criteria are minimized by multi-start Nelder-Mead over
log hyperparameters inside scale-aware boxes (length-scales relative to the
per-column input range, amplitude relative to var(y)).  The Bayesian
baseline runs a random-walk Metropolis chain over the same log coordinates
and propagates the sampled hyperparameters into the predictive law.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg, optimize

from .exceptions import (
    EstimationFailureError,
    GpcalError,
    IllConditionedError,
    InvalidParameterError,
)
from .gp import Dataset, TrendSpec, build_covariance, \
    build_regression_matrix, compute_kbar, fit_gp, predict
from .kernels import KernelFamily, KernelSpec, pairwise_sq_diffs

__all__ = [
    "EstimationResult",
    "McmcConfig",
    "BayesPredictive",
    "mle_objective",
    "msecv_objective",
    "fit_mle",
    "fit_msecv",
    "bayes_predictive",
    "random_walk_metropolis",
]

# Search box (relative to data scales) and start-sampling box (log10 units).
_THETA_BOUNDS = (1e-2, 1e2)
_SIGMA2_BOUNDS = (1e-6, 1e4)
_NUGGET_BOUNDS = (1e-8, 1e4)
_START_BOX = (1e-2, 1e2)
_NUGGET_START_BOX = (1e-4, 1.0)


@dataclass(frozen=True)
class EstimationResult:
    """Outcome of a hyperparameter fit."""

    kernel: KernelSpec
    objective_value: float
    n_evals: int
    method: str              # "MLE" or "MSE_CV"
    converged: bool

    def to_dict(self) -> dict:
        return {
            "kernel": self.kernel.to_dict(),
            "objective_value": self.objective_value,
            "n_evals": self.n_evals,
            "method": self.method,
            "converged": self.converged,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EstimationResult":
        return cls(kernel=KernelSpec.from_dict(d["kernel"]),
                   objective_value=float(d["objective_value"]),
                   n_evals=int(d["n_evals"]),
                   method=str(d["method"]),
                   converged=bool(d["converged"]))


@dataclass(frozen=True)
class McmcConfig:
    """Random-walk Metropolis settings for the Bayesian baseline.

    The prior is independent standard normal on each log hyperparameter in
    data-standardized coordinates, i.e. log-normal(0, 1) per hyperparameter.
    """

    n_samples: int = 2000
    burn_in: int = 500
    proposal_scale: float = 0.1
    prior: str = "lognormal(0,1)"
    seed: int = 0

    def __post_init__(self):
        if self.burn_in >= self.n_samples:
            raise InvalidParameterError("burn_in must be < n_samples")
        if self.proposal_scale <= 0.0:
            raise InvalidParameterError("proposal_scale must be positive")
        if self.prior != "lognormal(0,1)":
            raise InvalidParameterError(
                f"unsupported prior: {self.prior!r}"
            )


def _data_scales(dataset: Dataset) -> tuple:
    """Per-column input ranges and response variance, floored at 1."""
    spans = dataset.X.max(axis=0) - dataset.X.min(axis=0)
    spans = np.where(spans > 0.0, spans, 1.0)
    v = float(np.var(dataset.y))
    if v <= 0.0:
        v = 1.0
    return spans, v


def mle_objective(dataset: Dataset, trend: TrendSpec,
                  kernel: KernelSpec, sq_diffs=None) -> float:
    """Profile negative log-likelihood y' Kbar y + log det K.

    The regression coefficients are profiled out, so the quadratic form uses
    the GLS residuals; log det K comes from the Cholesky diagonal.
    """
    F = build_regression_matrix(dataset.X, trend)
    _, L, _ = build_covariance(dataset.X, kernel, sq_diffs=sq_diffs)
    y = dataset.y
    a = linalg.solve_triangular(L, y, lower=True)
    quad = float(a @ a)
    if F.shape[1] > 0:
        B = linalg.solve_triangular(L, F, lower=True)
        G = B.T @ B
        c = B.T @ a
        try:
            cG = linalg.cho_factor(G, lower=True)
        except linalg.LinAlgError:
            raise IllConditionedError("F' K^{-1} F is singular")
        quad -= float(c @ linalg.cho_solve(cG, c))
    logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
    return quad + logdet


def msecv_objective(dataset: Dataset, trend: TrendSpec,
                    kernel: KernelSpec, sq_diffs=None) -> float:
    """LOO-MSE quadratic form y' Kbar Diag(Kbar)^{-2} Kbar y (= n * loo_mse)."""
    model = fit_gp(dataset, kernel, trend, sq_diffs=sq_diffs)
    kbar = compute_kbar(model)
    ky = kbar @ dataset.y
    diag = np.diag(kbar)
    return float(np.sum((ky / diag) ** 2))


def _multistart_minimize(objective, x0_list, max_evals, tol):
    """Nelder-Mead from each start; best by (objective, |log theta| norm).

    Starts are reduced in index order so the outcome does not depend on any
    execution interleaving.
    """
    best = None
    total_evals = 0
    any_success = False
    for x0 in x0_list:
        res = optimize.minimize(
            objective, x0, method="Nelder-Mead",
            options={
                "maxfev": max_evals,
                "fatol": tol,
                "xatol": 1e-6,
                "adaptive": len(x0) >= 4,
            },
        )
        total_evals += res.nfev
        if not np.isfinite(res.fun):
            continue
        any_success = any_success or bool(res.success)
        norm = float(np.linalg.norm(res.x))
        if best is None or res.fun < best[0] or \
                (res.fun == best[0] and norm < best[2]):
            best = (float(res.fun), np.asarray(res.x, dtype=float), norm)
    if best is None:
        raise EstimationFailureError(
            "all optimizer starts failed to produce a finite objective"
        )
    return best[0], best[1], total_evals, any_success


def _make_starts(n_params, n_starts, rng, nugget_slot=False):
    """Deterministic start points in the log10 sampling box.

    Start 0 sits at the box center (unit relative scales); the rest are
    sampled log-uniformly.  A joint-nugget slot samples from a lower box
    since noise variances usually sit well below var(y).
    """
    lo, hi = np.log(_START_BOX[0]), np.log(_START_BOX[1])
    starts = [np.zeros(n_params)]
    for _ in range(max(n_starts - 1, 0)):
        u = rng.uniform(lo, hi, size=n_params)
        if nugget_slot:
            u[-1] = rng.uniform(np.log(_NUGGET_START_BOX[0]),
                                np.log(_NUGGET_START_BOX[1]))
        starts.append(u)
    return starts


def _fit_kernel(dataset, trend, family, nugget, estimate_nugget,
                objective_fn, method_name, n_starts, max_evals, tol, seed):
    if dataset.n < 2:
        raise EstimationFailureError("insufficient data: need n >= 2")
    spans, v = _data_scales(dataset)
    d = dataset.d
    sq_diffs = pairwise_sq_diffs(dataset.X)
    n_params = d + 1 + (1 if estimate_nugget else 0)

    lo_t, hi_t = np.log(_THETA_BOUNDS[0]), np.log(_THETA_BOUNDS[1])
    lo_s, hi_s = np.log(_SIGMA2_BOUNDS[0]), np.log(_SIGMA2_BOUNDS[1])
    lo_n, hi_n = np.log(_NUGGET_BOUNDS[0]), np.log(_NUGGET_BOUNDS[1])

    def unpack(u):
        theta = spans * np.exp(u[:d])
        sigma2 = v * np.exp(u[d])
        eps = v * np.exp(u[d + 1]) if estimate_nugget else nugget
        return KernelSpec(family=family, sigma2=sigma2, theta=theta,
                          nugget=eps)

    def objective(u):
        if np.any(u[:d] < lo_t) or np.any(u[:d] > hi_t):
            return np.inf
        if u[d] < lo_s or u[d] > hi_s:
            return np.inf
        if estimate_nugget and (u[d + 1] < lo_n or u[d + 1] > hi_n):
            return np.inf
        try:
            return objective_fn(dataset, trend, unpack(u), sq_diffs)
        except (GpcalError, linalg.LinAlgError, ValueError):
            return np.inf

    rng = np.random.default_rng(seed)
    starts = _make_starts(n_params, n_starts, rng,
                          nugget_slot=estimate_nugget)
    fun, u_best, n_evals, success = _multistart_minimize(
        objective, starts, max_evals, tol)
    kernel = unpack(u_best)
    # Store the objective exactly as re-evaluated at the returned kernel.
    value = objective_fn(dataset, trend, kernel, sq_diffs)
    return kernel, value, n_evals, success


def fit_mle(dataset: Dataset, trend: TrendSpec, family: KernelFamily,
            nugget: float = 0.0, estimate_nugget: bool = False,
            n_starts: int = 5, max_evals: int = 2000, tol: float = 1e-8,
            seed: int = 0) -> EstimationResult:
    """Maximum-likelihood fit of (sigma2, theta) [and optionally the nugget].

    Minimizes the profile objective y' Kbar y + log det K by multi-start
    Nelder-Mead over log hyperparameters.
    """
    kernel, value, n_evals, success = _fit_kernel(
        dataset, trend, family, nugget, estimate_nugget,
        mle_objective, "MLE", n_starts, max_evals, tol, seed)
    return EstimationResult(kernel=kernel, objective_value=value,
                            n_evals=n_evals, method="MLE", converged=success)


def fit_msecv(dataset: Dataset, trend: TrendSpec, family: KernelFamily,
              nugget: float = 0.0, estimate_nugget: bool = False,
              n_starts: int = 5, max_evals: int = 2000, tol: float = 1e-8,
              seed: int = 0) -> EstimationResult:
    """Leave-one-out MSE cross-validation fit.

    With a positive (or jointly estimated) nugget the criterion is minimized
    over all hyperparameters.  Without a nugget the criterion does not
    identify the amplitude, so the length-scales are fitted first at unit
    amplitude and sigma2 is then set by the closed form

        sigma2 = (1/n) y' Rbar Diag(Rbar)^{-1} Rbar y

    which normalizes the mean squared standardized LOO residual to one.
    """
    if nugget == 0.0 and not estimate_nugget:
        return _fit_msecv_no_nugget(dataset, trend, family, n_starts,
                                    max_evals, tol, seed)
    kernel, value, n_evals, success = _fit_kernel(
        dataset, trend, family, nugget, estimate_nugget,
        msecv_objective, "MSE_CV", n_starts, max_evals, tol, seed)
    return EstimationResult(kernel=kernel, objective_value=value,
                            n_evals=n_evals, method="MSE_CV",
                            converged=success)


def _fit_msecv_no_nugget(dataset, trend, family, n_starts, max_evals, tol,
                         seed):
    if dataset.n < 2:
        raise EstimationFailureError("insufficient data: need n >= 2")
    spans, _ = _data_scales(dataset)
    d = dataset.d
    sq_diffs = pairwise_sq_diffs(dataset.X)
    lo_t, hi_t = np.log(_THETA_BOUNDS[0]), np.log(_THETA_BOUNDS[1])

    def theta_of(u):
        return spans * np.exp(u)

    def objective(u):
        if np.any(u < lo_t) or np.any(u > hi_t):
            return np.inf
        spec = KernelSpec(family=family, sigma2=1.0, theta=theta_of(u),
                          nugget=0.0)
        try:
            return msecv_objective(dataset, trend, spec, sq_diffs)
        except (GpcalError, linalg.LinAlgError, ValueError):
            return np.inf

    rng = np.random.default_rng(seed)
    starts = _make_starts(d, n_starts, rng)
    value, u_best, n_evals, success = _multistart_minimize(
        objective, starts, max_evals, tol)
    theta = theta_of(u_best)
    # Closed-form amplitude at the fitted length-scales.
    unit = KernelSpec(family=family, sigma2=1.0, theta=theta, nugget=0.0)
    model = fit_gp(dataset, unit, trend, sq_diffs=sq_diffs)
    rbar = compute_kbar(model)
    ry = rbar @ dataset.y
    sigma2 = float(np.mean(ry * ry / np.diag(rbar)))
    kernel = KernelSpec(family=family, sigma2=sigma2, theta=theta,
                        nugget=0.0)
    return EstimationResult(kernel=kernel, objective_value=value,
                            n_evals=n_evals, method="MSE_CV",
                            converged=success)


# ---------------------------------------------------------------------------
# Full-Bayesian baseline
# ---------------------------------------------------------------------------

def random_walk_metropolis(log_target, x0: np.ndarray, n_steps: int,
                           step_scale: float, rng: np.random.Generator):
    """Symmetric Gaussian random-walk Metropolis sampler.

    Returns the chain (n_steps x dim, including the start state) and the
    acceptance rate.
    """
    x = np.asarray(x0, dtype=float).copy()
    dim = x.size
    chain = np.empty((n_steps, dim))
    lp = log_target(x)
    n_accept = 0
    for i in range(n_steps):
        prop = x + step_scale * rng.standard_normal(dim)
        lp_prop = log_target(prop)
        if np.log(rng.uniform()) < lp_prop - lp:
            x, lp = prop, lp_prop
            n_accept += 1
        chain[i] = x
    return chain, n_accept / n_steps


def posterior_mean_kernel(dataset: Dataset, trend: TrendSpec,
                          family: KernelFamily, nugget: float,
                          config: McmcConfig) -> tuple:
    """Plug-in kernel at the posterior mean of the log hyperparameters.

    Runs the same chain as the full predictive and averages the retained
    log-hyperparameter states; used by the CLI to persist a single model
    from a Bayesian fit.  Returns (kernel, acceptance_rate).
    """
    spans, v = _data_scales(dataset)
    d = dataset.d
    sq_diffs = pairwise_sq_diffs(dataset.X)

    def unpack(u):
        return KernelSpec(family=family, sigma2=v * np.exp(u[d]),
                          theta=spans * np.exp(u[:d]), nugget=nugget)

    def log_target(u):
        try:
            nll = mle_objective(dataset, trend, unpack(u), sq_diffs)
        except (GpcalError, linalg.LinAlgError, ValueError):
            return -np.inf
        return -0.5 * nll - 0.5 * float(u @ u)

    rng = np.random.default_rng(config.seed)
    chain, acc = random_walk_metropolis(
        log_target, np.zeros(d + 1), config.n_samples,
        config.proposal_scale, rng)
    u_mean = chain[config.burn_in:].mean(axis=0)
    return unpack(u_mean), acc


@dataclass(frozen=True)
class BayesPredictive:
    """Posterior-predictive interval summary at the query points."""

    lower: np.ndarray
    upper: np.ndarray
    mean: np.ndarray
    acceptance_rate: float
    warning: str | None = None


def bayes_predictive(dataset: Dataset, trend: TrendSpec,
                     family: KernelFamily, nugget: float,
                     config: McmcConfig, x_new, alpha: float
                     ) -> BayesPredictive:
    """Full-Bayesian prediction intervals by hyperparameter MCMC.

    A random-walk Metropolis chain explores the profile Gaussian likelihood
    times the log-normal prior over log hyperparameters.  Each retained
    sample contributes one posterior draw of the response at every query
    point; the interval is the empirical alpha/2 .. 1-alpha/2 band of those
    draws and the point prediction is their mean.
    """
    if not 0.0 < alpha < 1.0:
        raise InvalidParameterError("alpha must lie in (0, 1)")
    spans, v = _data_scales(dataset)
    d = dataset.d
    sq_diffs = pairwise_sq_diffs(dataset.X)

    def unpack(u):
        return KernelSpec(family=family, sigma2=v * np.exp(u[d]),
                          theta=spans * np.exp(u[:d]), nugget=nugget)

    def log_target(u):
        try:
            nll = mle_objective(dataset, trend, unpack(u), sq_diffs)
        except (GpcalError, linalg.LinAlgError, ValueError):
            return -np.inf
        return -0.5 * nll - 0.5 * float(u @ u)

    rng = np.random.default_rng(config.seed)
    chain, acc = random_walk_metropolis(
        log_target, np.zeros(d + 1), config.n_samples,
        config.proposal_scale, rng)
    retained = chain[config.burn_in:]

    x_arr = np.asarray(x_new, dtype=float)
    single = x_arr.ndim == 1
    X_new = np.atleast_2d(x_arr)
    m = X_new.shape[0]
    draws = np.empty((retained.shape[0], m))
    prev_u = None
    mean_var = None
    for i, u in enumerate(retained):
        if prev_u is None or not np.array_equal(u, prev_u):
            model = fit_gp(dataset, unpack(u), trend, sq_diffs=sq_diffs)
            mean_var = predict(model, X_new)
            prev_u = u
        mu, var = mean_var
        draws[i] = mu + np.sqrt(var) * rng.standard_normal(m)
    lower = np.quantile(draws, alpha / 2.0, axis=0)
    upper = np.quantile(draws, 1.0 - alpha / 2.0, axis=0)
    mean = draws.mean(axis=0)
    warning = None
    if not 0.05 <= acc <= 0.7:
        warning = f"acceptance rate {acc:.3f} outside [0.05, 0.70]"
    if single:
        lower, upper, mean = float(lower[0]), float(upper[0]), float(mean[0])
    return BayesPredictive(lower=lower, upper=upper, mean=mean,
                           acceptance_rate=acc, warning=warning)
