"""Coverage calibration of prediction intervals (RPIE).

For a target quantile level ``a`` the calibration keeps the reference
length-scales up to a common factor lambda and rescales the amplitude to
the smallest value at which the smoothed quasi-Gaussian proportion equals
``a``.  Among the admissible lambdas it picks the one whose implied Gaussian
law over the training design is closest, in 2-Wasserstein distance, to the
reference law.  A two-sided interval uses two such one-sided models, one per
bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .estimation import EstimationResult
from .exceptions import (
    CalibrationInfeasibleError,
    InvalidMatrixError,
    InvalidParameterError,
)
from .gp import (
    Dataset,
    FittedGp,
    TrendSpec,
    build_covariance,
    build_regression_matrix,
    check_hypotheses,
    fit_beta,
    fit_gp,
    predict,
)
from .kernels import KernelFamily, KernelSpec
from .loo import SigmaScanBasis, SmoothingParams, virtual_loo, \
    psi_from_residuals, psi_smoothed_from_residuals
from .stats import normal_quantile

__all__ = [
    "GridSpec",
    "RpieConfig",
    "RpieSolution",
    "LambdaTrace",
    "CalibratedIntervalModel",
    "sigma_opt",
    "wasserstein2_gaussians",
    "sqrtm_psd",
    "relaxation_objective",
    "calibrate_quantile",
    "calibrate",
    "predict_calibrated",
]

_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class GridSpec:
    """Strictly increasing log-spaced grid; a single-point grid degenerates
    to its (lo == hi) value."""

    lo: float
    hi: float
    count: int

    def __post_init__(self):
        if self.count < 1:
            raise InvalidParameterError("grid needs at least 1 point")
        if self.count == 1:
            if not (0.0 < self.lo and self.lo == self.hi):
                raise InvalidParameterError(
                    "a single-point grid needs lo == hi > 0")
        elif not (0.0 < self.lo < self.hi):
            raise InvalidParameterError("grid must satisfy 0 < lo < hi")

    def points(self, scale: float = 1.0) -> np.ndarray:
        if self.count == 1:
            return np.array([scale * self.lo])
        return scale * np.logspace(np.log10(self.lo), np.log10(self.hi),
                                   self.count)


@dataclass(frozen=True)
class RpieConfig:
    """Calibration controls.

    lambda_grid spans the common length-scale factor; sigma_scan spans the
    amplitude bracketing grid relative to var(y); refine_iters bisection
    steps shrink the amplitude bracket below 1e-9 relative width.
    """

    delta: SmoothingParams = field(default_factory=SmoothingParams)
    lambda_grid: GridSpec = field(
        default_factory=lambda: GridSpec(1e-2, 1e2, 60))
    sigma_scan: GridSpec = field(
        default_factory=lambda: GridSpec(1e-8, 1e8, 200))
    refine_iters: int = 60

    def __post_init__(self):
        if self.refine_iters < 30:
            raise InvalidParameterError("refine_iters must be >= 30")


@dataclass(frozen=True)
class LambdaTrace:
    """Grid evaluations of the relaxed objective, for plotting."""

    lambdas: np.ndarray
    objectives: np.ndarray     # NaN where sigma_opt was absent
    sigma2_opts: np.ndarray    # NaN where absent


@dataclass(frozen=True)
class RpieSolution:
    """One calibrated quantile-side model.

    psi_achieved is the smoothed proportion at the solution (equal to the
    target up to root-finding tolerance); psi_raw is the step-function
    count, which sits within about half an in-band residual of the target.
    """

    lambda_star: float
    sigma2_opt: float
    theta_ref: np.ndarray
    beta_opt: np.ndarray
    wasserstein2: float
    a: float
    psi_achieved: float
    psi_raw: float
    kernel: KernelSpec
    trace: LambdaTrace

    def to_dict(self) -> dict:
        return {
            "lambda_star": self.lambda_star,
            "sigma2_opt": self.sigma2_opt,
            "theta_ref": [float(t) for t in self.theta_ref],
            "beta_opt": [float(b) for b in self.beta_opt],
            "wasserstein2": self.wasserstein2,
            "a": self.a,
            "psi_achieved": self.psi_achieved,
            "psi_raw": self.psi_raw,
            "kernel": self.kernel.to_dict(),
        }


def sqrtm_psd(K: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition.

    Negative eigenvalues from round-off are clipped at zero, which keeps the
    result well-defined for nearly singular covariance matrices.
    """
    K = np.asarray(K, dtype=float)
    w, U = np.linalg.eigh(0.5 * (K + K.T))
    w = np.maximum(w, 0.0)
    return (U * np.sqrt(w)) @ U.T


def _check_covariance(K: np.ndarray, name: str) -> np.ndarray:
    K = np.asarray(K, dtype=float)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise InvalidMatrixError(f"{name} must be square")
    scale = max(float(np.abs(K).max()), 1e-300)
    if float(np.abs(K - K.T).max()) > 1e-8 * scale:
        raise InvalidMatrixError(f"{name} is not symmetric")
    w = np.linalg.eigvalsh(0.5 * (K + K.T))
    if w.min() < -1e-8 * max(float(w.max()), 1e-300):
        raise InvalidMatrixError(f"{name} is not positive semi-definite")
    return 0.5 * (K + K.T)


def wasserstein2_gaussians(m1, K1, m2, K2) -> float:
    """Squared 2-Wasserstein distance between two Gaussian laws.

    ||m1 - m2||^2 + Tr(K1 + K2 - 2 (K1^{1/2} K2 K1^{1/2})^{1/2}),
    clipped at zero against round-off.
    """
    m1 = np.asarray(m1, dtype=float).ravel()
    m2 = np.asarray(m2, dtype=float).ravel()
    K1 = _check_covariance(K1, "K1")
    K2 = _check_covariance(K2, "K2")
    if m1.size != m2.size or K1.shape[0] != m1.size or \
            K2.shape[0] != m2.size:
        raise InvalidMatrixError("mean/covariance dimensions disagree")
    S1 = sqrtm_psd(K1)
    cross = sqrtm_psd(S1 @ K2 @ S1)
    val = float(m1 @ m1 - 2.0 * (m1 @ m2) + m2 @ m2
                + np.trace(K1) + np.trace(K2) - 2.0 * np.trace(cross))
    return max(val, 0.0)


def _first_bracket_root(psi_fn, grid: np.ndarray, a: float,
                        refine_iters: int, extend: bool = False):
    """Smallest grid root of psi(sigma2) = a, refined by log-bisection.

    Scans the grid ascending and bisects the first sign change; an exact
    grid hit is returned as-is.  Returns None when no bracket exists.

    With ``extend`` the scan continues past the top of the grid at the
    same log spacing (up to a hard ceiling): with a positive nugget a
    solution provably exists for every length-scale vector, but the
    required amplitude grows without bound as the length-scales blow up,
    so a fixed box can top out below the crossing.
    """
    step = np.log(grid[-1] / grid[0]) / max(grid.size - 1, 1)
    if extend and step > 0.0:
        ceiling = float(grid[-1]) * 1e18
        extension = np.exp(np.arange(1, int(np.log(1e18) / step) + 2)
                           * step) * float(grid[-1])
        grid = np.concatenate([grid, extension[extension <= ceiling]])
    g_prev = None
    for k, s in enumerate(grid):
        g = psi_fn(s) - a
        if g == 0.0:
            return float(s)
        if k > 0 and g_prev is not None and (g_prev < 0.0) != (g < 0.0):
            lo, hi = np.log(grid[k - 1]), np.log(s)
            f_lo = g_prev
            for _ in range(refine_iters):
                mid = 0.5 * (lo + hi)
                f_mid = psi_fn(np.exp(mid)) - a
                if f_mid == 0.0:
                    return float(np.exp(mid))
                if (f_lo < 0.0) != (f_mid < 0.0):
                    hi = mid
                else:
                    lo, f_lo = mid, f_mid
            return float(np.exp(0.5 * (lo + hi)))
        g_prev = g
    return None


def sigma_opt(dataset: Dataset, trend: TrendSpec, family: KernelFamily,
              theta: np.ndarray, nugget: float, a: float,
              config: RpieConfig) -> float | None:
    """Smallest amplitude at which psi_delta(sigma2, theta) equals a.

    Absence (no bracket anywhere on the scan grid) is a value, not an
    error; it arises in the no-nugget case for extreme length-scales.
    """
    config.delta.validate_for(a)
    F = build_regression_matrix(dataset.X, trend)
    basis = SigmaScanBasis(dataset.X, dataset.y, F, family,
                           np.asarray(theta, dtype=float), nugget)
    v = float(np.var(dataset.y))
    if v <= 0.0:
        v = 1.0
    grid = config.sigma_scan.points(scale=v)
    return _first_bracket_root(
        lambda s2: basis.psi_smoothed(s2, a, config.delta),
        grid, a, config.refine_iters, extend=nugget > 0.0)


class _QuantileCalibrator:
    """Shared state for evaluating the relaxed objective across lambdas."""

    def __init__(self, dataset, trend, family, nugget, theta0, sigma2_0,
                 a, config):
        config.delta.validate_for(a)
        self.dataset = dataset
        self.trend = trend
        self.family = family
        self.nugget = float(nugget)
        self.theta0 = np.asarray(theta0, dtype=float)
        self.sigma2_0 = float(sigma2_0)
        self.a = a
        self.config = config
        self.F = build_regression_matrix(dataset.X, trend)
        v = float(np.var(dataset.y))
        self.sigma_grid = config.sigma_scan.points(scale=v if v > 0 else 1.0)
        ref = KernelSpec(family=family, sigma2=self.sigma2_0,
                         theta=self.theta0, nugget=self.nugget)
        self.K0, self.m0 = self._law(ref)
        self.S0 = sqrtm_psd(self.K0)
        self.tr_K0 = float(np.trace(self.K0))

    def _law(self, spec):
        """Covariance matrix and GLS trend mean implied by a kernel spec."""
        K, L, _ = build_covariance(self.dataset.X, spec)
        beta = fit_beta(self.F, L, self.dataset.y)
        return K, self.F @ beta

    def _kernel_at(self, lam, sigma2):
        return KernelSpec(family=self.family, sigma2=sigma2,
                          theta=lam * self.theta0, nugget=self.nugget)

    def sigma_opt_at(self, lam: float) -> float | None:
        basis = SigmaScanBasis(self.dataset.X, self.dataset.y, self.F,
                               self.family, lam * self.theta0, self.nugget)
        return _first_bracket_root(
            lambda s2: basis.psi_smoothed(s2, self.a, self.config.delta),
            self.sigma_grid, self.a, self.config.refine_iters,
            extend=self.nugget > 0.0)

    def objective_at(self, lam: float, sigma2: float) -> float:
        K, m = self._law(self._kernel_at(lam, sigma2))
        cross = sqrtm_psd(self.S0 @ K @ self.S0)
        dm = m - self.m0
        val = float(dm @ dm + self.tr_K0 + np.trace(K)
                    - 2.0 * np.trace(cross))
        return max(val, 0.0)

    def evaluate(self, lam: float) -> tuple:
        """(objective, sigma2_opt) at lam; (None, None) when absent."""
        s2 = self.sigma_opt_at(lam)
        if s2 is None:
            return None, None
        return self.objective_at(lam, s2), s2


def relaxation_objective(dataset: Dataset, trend: TrendSpec,
                         family: KernelFamily, nugget: float,
                         theta0, sigma2_0: float, lam: float, a: float,
                         config: RpieConfig) -> float | None:
    """Relaxed Wasserstein objective L(lambda); None when no amplitude
    achieves the target proportion at this lambda."""
    if lam <= 0.0:
        raise InvalidParameterError("lambda must be positive")
    cal = _QuantileCalibrator(dataset, trend, family, nugget, theta0,
                              sigma2_0, a, config)
    obj, _ = cal.evaluate(lam)
    return obj


def calibrate_quantile(dataset: Dataset, trend: TrendSpec,
                       family: KernelFamily, nugget: float,
                       theta0, sigma2_0: float, a: float,
                       config: RpieConfig | None = None) -> RpieSolution:
    """Calibrate one quantile side: grid-search L(lambda), refine the best
    cell by golden section, and assemble the solution at the minimizer."""
    config = config or RpieConfig()
    cal = _QuantileCalibrator(dataset, trend, family, nugget, theta0,
                              sigma2_0, a, config)
    lambdas = config.lambda_grid.points()
    objs = np.full(lambdas.size, np.nan)
    s2s = np.full(lambdas.size, np.nan)
    for i, lam in enumerate(lambdas):
        obj, s2 = cal.evaluate(lam)
        if obj is not None:
            objs[i] = obj
            s2s[i] = s2
    if not np.any(np.isfinite(objs)):
        report = check_hypotheses(
            dataset, trend,
            KernelSpec(family=family, sigma2=max(sigma2_0, 1e-300),
                       theta=np.asarray(theta0, dtype=float),
                       nugget=nugget),
            a)
        raise CalibrationInfeasibleError(
            f"no lambda on the grid admits psi_delta = {a}: "
            f"k_eps={report.k_eps}, n*a={report.n_times_a:.2f}",
            k_eps=report.k_eps, n_times_a=report.n_times_a, side=a)

    finite = np.where(np.isfinite(objs))[0]
    i_best = int(finite[np.argmin(objs[finite])])
    lam_best = float(lambdas[i_best])
    obj_best = float(objs[i_best])

    # Golden-section refinement (in log-lambda) inside the bracketing cell.
    lo_i = max(i_best - 1, 0)
    hi_i = min(i_best + 1, lambdas.size - 1)
    if lambdas.size > 1 and hi_i > lo_i:
        a_log, b_log = np.log(lambdas[lo_i]), np.log(lambdas[hi_i])
        cache: dict = {}

        def f(t):
            if t not in cache:
                obj, _ = cal.evaluate(float(np.exp(t)))
                cache[t] = np.inf if obj is None else obj
            return cache[t]

        x1 = b_log - _GOLDEN * (b_log - a_log)
        x2 = a_log + _GOLDEN * (b_log - a_log)
        f1, f2 = f(x1), f(x2)
        for _ in range(40):
            if f1 <= f2:
                b_log, x2, f2 = x2, x1, f1
                x1 = b_log - _GOLDEN * (b_log - a_log)
                f1 = f(x1)
            else:
                a_log, x1, f1 = x1, x2, f2
                x2 = a_log + _GOLDEN * (b_log - a_log)
                f2 = f(x2)
        t_best = x1 if f1 <= f2 else x2
        if min(f1, f2) < obj_best:
            lam_best = float(np.exp(t_best))
            obj_best = float(min(f1, f2))

    s2_best = cal.sigma_opt_at(lam_best)
    if s2_best is None:
        # Refinement drifted into an absent pocket; fall back to the grid.
        lam_best = float(lambdas[i_best])
        obj_best = float(objs[i_best])
        s2_best = float(s2s[i_best])
    kernel = KernelSpec(family=family, sigma2=s2_best,
                        theta=lam_best * cal.theta0, nugget=nugget)
    model = fit_gp(dataset, kernel, trend)
    diag = virtual_loo(model)
    psi = psi_smoothed_from_residuals(diag.std_resid, a, config.delta)
    psi_raw = psi_from_residuals(diag.std_resid, a)
    return RpieSolution(
        lambda_star=lam_best,
        sigma2_opt=float(s2_best),
        theta_ref=cal.theta0,
        beta_opt=model.beta_hat.copy(),
        wasserstein2=obj_best,
        a=a,
        psi_achieved=psi,
        psi_raw=psi_raw,
        kernel=kernel,
        trace=LambdaTrace(lambdas=lambdas, objectives=objs,
                          sigma2_opts=s2s),
    )


@dataclass(frozen=True)
class CalibratedIntervalModel:
    """Two one-sided calibrated models plus the reference they started from."""

    upper: RpieSolution
    lower: RpieSolution
    reference: EstimationResult
    dataset: Dataset
    trend: TrendSpec
    alpha: float
    upper_model: FittedGp = field(repr=False, default=None)
    lower_model: FittedGp = field(repr=False, default=None)

    def loo_coverage(self) -> float:
        """Step-count LOO coverage: psi_{1-alpha/2}(upper model) minus
        psi_{alpha/2}(lower model).

        Quantized to 1/n steps; with fractional n*a it sits at least half a
        count above the nominal level, and an extra count appears whenever
        two residuals share a smoothing band.
        """
        z_up = virtual_loo(self.upper_model).std_resid
        z_lo = virtual_loo(self.lower_model).std_resid
        return psi_from_residuals(z_up, self.upper.a) \
            - psi_from_residuals(z_lo, self.lower.a)

    def loo_coverage_smoothed(self) -> float:
        """By-construction coverage from the smoothed proportions each side
        was calibrated to; equals 1 - alpha up to root-finding tolerance."""
        return self.upper.psi_achieved - self.lower.psi_achieved

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "upper": self.upper.to_dict(),
            "lower": self.lower.to_dict(),
            "reference": self.reference.to_dict(),
            "trend": self.trend.kind.value,
            "X": [[float(v) for v in row] for row in self.dataset.X],
            "y": [float(v) for v in self.dataset.y],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "CalibratedIntervalModel":
        from .gp import TrendSpec as _TrendSpec
        dataset = Dataset(X=np.asarray(doc["X"], dtype=float),
                          y=np.asarray(doc["y"], dtype=float))
        trend = _TrendSpec.from_string(doc["trend"])
        reference = EstimationResult.from_dict(doc["reference"])

        def solution(d):
            kernel = KernelSpec.from_dict(d["kernel"])
            return RpieSolution(
                lambda_star=float(d["lambda_star"]),
                sigma2_opt=float(d["sigma2_opt"]),
                theta_ref=np.asarray(d["theta_ref"], dtype=float),
                beta_opt=np.asarray(d["beta_opt"], dtype=float),
                wasserstein2=float(d["wasserstein2"]),
                a=float(d["a"]),
                psi_achieved=float(d["psi_achieved"]),
                psi_raw=float(d.get("psi_raw", math.nan)),
                kernel=kernel,
                trace=LambdaTrace(np.array([]), np.array([]), np.array([])),
            )

        upper = solution(doc["upper"])
        lower = solution(doc["lower"])
        return cls(
            upper=upper, lower=lower, reference=reference,
            dataset=dataset, trend=trend, alpha=float(doc["alpha"]),
            upper_model=fit_gp(dataset, upper.kernel, trend),
            lower_model=fit_gp(dataset, lower.kernel, trend),
        )


def calibrate(dataset: Dataset, trend: TrendSpec, family: KernelFamily,
              nugget: float | None, reference: EstimationResult,
              alpha: float, config: RpieConfig | None = None
              ) -> CalibratedIntervalModel:
    """Calibrate both interval bounds at nominal level 1 - alpha."""
    if not 0.0 < alpha < 1.0:
        raise InvalidParameterError("alpha must lie in (0, 1)")
    config = config or RpieConfig()
    if nugget is None:
        nugget = reference.kernel.nugget
    theta0 = reference.kernel.theta
    sigma2_0 = reference.kernel.sigma2
    try:
        upper = calibrate_quantile(dataset, trend, family, nugget,
                                   theta0, sigma2_0, 1.0 - alpha / 2.0,
                                   config)
    except CalibrationInfeasibleError as exc:
        exc.side = "upper"
        raise
    try:
        lower = calibrate_quantile(dataset, trend, family, nugget,
                                   theta0, sigma2_0, alpha / 2.0, config)
    except CalibrationInfeasibleError as exc:
        exc.side = "lower"
        raise
    return CalibratedIntervalModel(
        upper=upper, lower=lower, reference=reference,
        dataset=dataset, trend=trend, alpha=alpha,
        upper_model=fit_gp(dataset, upper.kernel, trend),
        lower_model=fit_gp(dataset, lower.kernel, trend),
    )


def predict_calibrated(model: CalibratedIntervalModel, x_new):
    """Per-point calibrated bounds; crossings are flagged, never reordered.

    Returns (lower, upper, crossed) where crossed marks points whose upper
    bound fell below the lower one (the two sides are independent models,
    so ordering is not guaranteed).
    """
    mean_up, var_up = predict(model.upper_model, x_new)
    mean_lo, var_lo = predict(model.lower_model, x_new)
    q_up = normal_quantile(model.upper.a)
    q_lo = normal_quantile(model.lower.a)
    upper = mean_up + q_up * np.sqrt(var_up)
    lower = mean_lo + q_lo * np.sqrt(var_lo)
    crossed = upper < lower
    return lower, upper, crossed
