"""Kriging core: trend bases, covariance assembly, GLS coefficients,
posterior prediction, and the residual-space machinery.

All dense inverses are avoided in favor of Cholesky/triangular solves.  The
matrix

    Kbar = K^{-1} - K^{-1} F (F' K^{-1} F)^{-1} F' K^{-1}

drives both the leave-one-out formulas and the coverage calibration; its
kernel equals the column space of F, and its diagonal is strictly positive
whenever no canonical basis vector lies in that column space.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .exceptions import (
    HypothesisH1Error,
    HypothesisH2Error,
    IllConditionedError,
    InvalidParameterError,
    ShapeError,
)
from .kernels import KernelSpec, cross_covariance, gram_matrix
from .stats import normal_quantile

__all__ = [
    "TrendKind",
    "TrendSpec",
    "Dataset",
    "FittedGp",
    "ProjectionBasis",
    "HypothesisReport",
    "build_regression_matrix",
    "build_covariance",
    "fit_beta",
    "fit_gp",
    "predict",
    "prediction_interval",
    "compute_kbar",
    "projection_basis",
    "check_hypotheses",
    "model_to_dict",
    "model_from_dict",
    "save_model",
    "load_model",
]

# Jitter escalation: start at 1e-10 * sigma2 and multiply by 10 up to
# 1e-6 * sigma2 before giving up.
_JITTER_START = 1e-10
_JITTER_MAX = 1e-6

# Default cap on explicit Kbar assembly (n x n dense).
KBAR_SIZE_CAP = 5000


class TrendKind(enum.Enum):
    SIMPLE = "simple"        # known zero mean
    ORDINARY = "ordinary"    # unknown constant
    UNIVERSAL = "universal"  # constant + linear monomials


@dataclass(frozen=True)
class TrendSpec:
    """Trend basis selector.

    simple    -> p = 0 basis functions (mean fixed at zero)
    ordinary  -> p = 1 (the constant function)
    universal -> p = d + 1 (constant plus the coordinate monomials), which
                 keeps the all-ones vector inside the basis span.
    """

    kind: TrendKind

    @classmethod
    def from_string(cls, name: str) -> "TrendSpec":
        try:
            return cls(TrendKind(name.lower()))
        except ValueError:
            raise InvalidParameterError(f"unknown trend: {name!r}")

    def n_basis(self, d: int) -> int:
        if self.kind is TrendKind.SIMPLE:
            return 0
        if self.kind is TrendKind.ORDINARY:
            return 1
        return d + 1

    def basis(self, X: np.ndarray) -> np.ndarray:
        """Evaluate the basis functions at the rows of X, shape (n, p)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        n = X.shape[0]
        if self.kind is TrendKind.SIMPLE:
            return np.zeros((n, 0))
        if self.kind is TrendKind.ORDINARY:
            return np.ones((n, 1))
        return np.hstack([np.ones((n, 1)), X])


@dataclass(frozen=True)
class Dataset:
    """Experimental design X (n x d) with responses y (n,)."""

    X: np.ndarray
    y: np.ndarray
    column_names: tuple | None = None

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        y = np.asarray(self.y, dtype=float).ravel()
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise ShapeError("X must be an n x d matrix with n, d >= 1")
        if y.size != X.shape[0]:
            raise ShapeError(
                f"y has {y.size} entries but X has {X.shape[0]} rows"
            )
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise InvalidParameterError("X and y must be finite")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class ProjectionBasis:
    """Orthonormal basis W of (Im F)^perp and the projector Pi = W W'."""

    W: np.ndarray
    Pi: np.ndarray


@dataclass(frozen=True)
class HypothesisReport:
    """Diagnostic outcome of the three runtime hypotheses.

    h1: the regression matrix has full column rank.
    h2: no canonical basis vector lies in the trend span.
    h3: the count k_eps of projected standardized residuals at or below
        sigma_eps * q_a sits on the correct side of n * a.
    """

    h1: bool
    h2: bool
    h3: bool
    k_eps: int
    n_times_a: float

    @property
    def all_ok(self) -> bool:
        return self.h1 and self.h2 and self.h3


def build_regression_matrix(X: np.ndarray, trend: TrendSpec) -> np.ndarray:
    """Regression matrix F with F_ij = f_j(x_i); full rank enforced.

    Raises HypothesisH1Error when the basis columns are collinear on the
    design (rank-revealing QR test) or when n < p.
    """
    F = trend.basis(X)
    n, p = F.shape
    if p == 0:
        return F
    if n < p:
        raise HypothesisH1Error(
            f"need at least p={p} observations for the trend, got n={n}"
        )
    # Rank-revealing check via column-pivoted QR.
    R = linalg.qr(F, mode="r", pivoting=True)[0]
    diag = np.abs(np.diag(R))
    if diag.size < p or diag.min() <= max(n, p) * np.finfo(float).eps * diag.max():
        raise HypothesisH1Error("regression matrix is rank deficient")
    return F


def _has_duplicate_rows(X: np.ndarray) -> bool:
    view = np.ascontiguousarray(X)
    uniq = np.unique(view, axis=0)
    return uniq.shape[0] < view.shape[0]


def build_covariance(X: np.ndarray, kernel: KernelSpec,
                     sq_diffs: np.ndarray | None = None):
    """Covariance matrix K = Gram(X) + nugget * I and its Cholesky factor.

    Returns (K, L, jitter_used).  When the factorization fails, a ridge of
    1e-10 * sigma2 is added and escalated tenfold up to 1e-6 * sigma2;
    failure beyond that raises IllConditionedError.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if kernel.nugget == 0.0 and _has_duplicate_rows(X):
        raise IllConditionedError(
            "duplicated design rows with zero nugget make K singular"
        )
    K = gram_matrix(X, kernel, sq_diffs=sq_diffs)
    n = K.shape[0]
    if kernel.nugget > 0.0:
        K = K + kernel.nugget * np.eye(n)
    if not np.all(np.isfinite(K)):
        raise IllConditionedError("covariance entries overflowed")
    jitter = 0.0
    try:
        L = np.linalg.cholesky(K)
        return K, L, jitter
    except np.linalg.LinAlgError:
        pass
    jitter = _JITTER_START * kernel.sigma2
    while jitter <= _JITTER_MAX * kernel.sigma2 * (1.0 + 1e-12):
        try:
            Kj = K + jitter * np.eye(n)
            L = np.linalg.cholesky(Kj)
            return Kj, L, jitter
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise IllConditionedError(
        "covariance factorization failed after maximum jitter "
        f"{_JITTER_MAX * kernel.sigma2:.3e}"
    )


def fit_beta(F: np.ndarray, L: np.ndarray, y: np.ndarray) -> np.ndarray:
    """GLS coefficients beta = (F' K^{-1} F)^{-1} F' K^{-1} y.

    L is the lower Cholesky factor of K; everything is computed through
    triangular solves.  Returns an empty vector for the simple-kriging case.
    """
    y = np.asarray(y, dtype=float).ravel()
    if F.shape[1] == 0:
        return np.zeros(0)
    B = linalg.solve_triangular(L, F, lower=True)
    a = linalg.solve_triangular(L, y, lower=True)
    G = B.T @ B
    try:
        cG = linalg.cho_factor(G, lower=True)
    except linalg.LinAlgError:
        raise HypothesisH1Error("F' K^{-1} F is singular")
    return linalg.cho_solve(cG, B.T @ a)


@dataclass
class FittedGp:
    """A kriging model with cached factorizations.

    Immutable after construction in the sense that no method mutates the
    numerical state except the lazy Kbar cache; concurrent reads are safe.
    """

    dataset: Dataset
    kernel: KernelSpec
    trend: TrendSpec
    beta_hat: np.ndarray
    F: np.ndarray
    chol_K: np.ndarray
    K: np.ndarray
    jitter_used: float = 0.0
    _kbar_cache: np.ndarray | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.dataset.n

    @property
    def d(self) -> int:
        return self.dataset.d

    @property
    def p(self) -> int:
        return self.F.shape[1]


def fit_gp(dataset: Dataset, kernel: KernelSpec, trend: TrendSpec,
           sq_diffs: np.ndarray | None = None) -> FittedGp:
    """Assemble a FittedGp: F, K and its factor, and the GLS coefficients."""
    if kernel.dim != dataset.d:
        raise ShapeError(
            f"kernel theta has {kernel.dim} entries but design has "
            f"{dataset.d} columns"
        )
    F = build_regression_matrix(dataset.X, trend)
    K, L, jitter = build_covariance(dataset.X, kernel, sq_diffs=sq_diffs)
    beta = fit_beta(F, L, dataset.y)
    return FittedGp(
        dataset=dataset, kernel=kernel, trend=trend, beta_hat=beta,
        F=F, chol_K=L, K=K, jitter_used=jitter,
    )


def predict(model: FittedGp, x_new) -> tuple:
    """Posterior predictive mean and variance at one or many new points.

    mean(x) = f(x)' beta + k(x, X)' K^{-1} (y - F beta)
    var(x)  = k(x, x) + nugget - k' K^{-1} k
              + u' (F' K^{-1} F)^{-1} u,   u = f(x) - F' K^{-1} k

    The trend-uncertainty quadratic form uses the dimensionally consistent
    F' K^{-1} k inner factor.  Scalars are returned for a single point,
    arrays for a batch.
    """
    x_arr = np.asarray(x_new, dtype=float)
    single = x_arr.ndim == 1
    X_new = np.atleast_2d(x_arr)
    if X_new.shape[1] != model.d:
        raise ShapeError(
            f"x_new has {X_new.shape[1]} columns, model expects {model.d}"
        )
    L = model.chol_K
    y = model.dataset.y
    Kx = cross_covariance(model.dataset.X, X_new, model.kernel)  # n x m
    A = linalg.solve_triangular(L, Kx, lower=True)               # L^{-1} k
    resid = y - model.F @ model.beta_hat
    w = linalg.solve_triangular(L, resid, lower=True)
    f_new = model.trend.basis(X_new)                             # m x p
    mean = f_new @ model.beta_hat + A.T @ w
    prior_var = model.kernel.sigma2 + model.kernel.nugget
    var = prior_var - np.einsum("ij,ij->j", A, A)
    if model.p > 0:
        B = linalg.solve_triangular(L, model.F, lower=True)      # L^{-1} F
        G = B.T @ B
        U = f_new.T - B.T @ A                                    # p x m
        cG = linalg.cho_factor(G, lower=True)
        V = linalg.cho_solve(cG, U)
        var = var + np.einsum("ij,ij->j", U, V)
    var = np.maximum(var, 0.0)
    if single:
        return float(mean[0]), float(var[0])
    return mean, var


def prediction_interval(model: FittedGp, x_new, alpha: float) -> tuple:
    """Central (1 - alpha) prediction interval from the Gaussian posterior."""
    if not 0.0 < alpha < 1.0:
        raise InvalidParameterError("alpha must lie in (0, 1)")
    mean, var = predict(model, x_new)
    q = normal_quantile(1.0 - alpha / 2.0)
    sd = np.sqrt(var)
    return mean - q * sd, mean + q * sd


def compute_kbar(model: FittedGp, size_cap: int = KBAR_SIZE_CAP) -> np.ndarray:
    """Explicit Kbar = K^{-1} - K^{-1} F (F' K^{-1} F)^{-1} F' K^{-1}.

    Symmetric PSD with a strictly positive diagonal when no e_i lies in
    Im F; a (relatively) non-positive diagonal entry raises
    HypothesisH2Error.  Assembly is O(n^3) and refused above size_cap.
    """
    n = model.n
    if n > size_cap:
        raise InvalidParameterError(
            f"explicit Kbar assembly refused for n={n} > cap {size_cap}"
        )
    if model._kbar_cache is not None:
        return model._kbar_cache
    L = model.chol_K
    identity = np.eye(n)
    Kinv = linalg.cho_solve((L, True), identity)
    if model.p > 0:
        M = linalg.cho_solve((L, True), model.F)        # K^{-1} F
        G = model.F.T @ M                               # F' K^{-1} F
        try:
            cG = linalg.cho_factor(G, lower=True)
        except linalg.LinAlgError:
            raise HypothesisH1Error("F' K^{-1} F is singular")
        kbar = Kinv - M @ linalg.cho_solve(cG, M.T)
    else:
        kbar = Kinv
    kbar = 0.5 * (kbar + kbar.T)
    diag = np.diag(kbar)
    if diag.min() <= 1e-12 * max(diag.max(), 0.0):
        raise HypothesisH2Error(
            "Kbar has a vanishing diagonal entry; some unit vector lies "
            "in the trend span"
        )
    model._kbar_cache = kbar
    return kbar


def projection_basis(F: np.ndarray) -> ProjectionBasis:
    """Orthonormal complement W of Im F and the projector Pi onto it.

    Built from the full QR decomposition of F.  p = n leaves no residual
    space and raises HypothesisH2Error; rank deficiency raises
    HypothesisH1Error.
    """
    F = np.asarray(F, dtype=float)
    n, p = F.shape
    if p == 0:
        W = np.eye(n)
        return ProjectionBasis(W=W, Pi=W.copy())
    if p >= n:
        raise HypothesisH2Error(
            f"no residual space: p={p} basis functions for n={n} points"
        )
    Q, R = np.linalg.qr(F, mode="complete")
    diag = np.abs(np.diag(R[:p, :p]))
    if diag.min() <= max(n, p) * np.finfo(float).eps * diag.max():
        raise HypothesisH1Error("regression matrix is rank deficient")
    W = Q[:, p:]
    Pi = W @ W.T
    return ProjectionBasis(W=W, Pi=Pi)


def check_hypotheses(dataset: Dataset, trend: TrendSpec, kernel: KernelSpec,
                     a: float) -> HypothesisReport:
    """Diagnostic check of the three runtime hypotheses at quantile level a.

    k_eps counts the indices with (Pi y)_i / sqrt(Pi_ii) <= sigma_eps * q_a;
    h3 requires k_eps < n*a for a > 1/2 and k_eps > n*a for a < 1/2.
    """
    if not 0.0 < a < 1.0 or a == 0.5:
        raise InvalidParameterError("a must lie in (0,1) and differ from 1/2")
    n = dataset.n
    h1 = True
    try:
        F = build_regression_matrix(dataset.X, trend)
    except HypothesisH1Error:
        return HypothesisReport(h1=False, h2=False, h3=False,
                                k_eps=0, n_times_a=n * a)
    try:
        basis = projection_basis(F)
        pi_diag = np.diag(basis.Pi)
        h2 = bool(pi_diag.min() > 1e-12)
    except HypothesisH2Error:
        return HypothesisReport(h1=h1, h2=False, h3=False,
                                k_eps=0, n_times_a=n * a)
    q_a = normal_quantile(a)
    sigma_eps = np.sqrt(kernel.nugget)
    proj = basis.Pi @ dataset.y
    ratios = proj / np.sqrt(np.maximum(pi_diag, 1e-300))
    k_eps = int(np.sum(ratios <= sigma_eps * q_a))
    if a > 0.5:
        h3 = k_eps < n * a
    else:
        h3 = k_eps > n * a
    return HypothesisReport(h1=h1, h2=h2, h3=h3, k_eps=k_eps, n_times_a=n * a)


# ---------------------------------------------------------------------------
# Model persistence
# ---------------------------------------------------------------------------

def model_to_dict(model: FittedGp) -> dict:
    """JSON-ready dict; float repr round-trips the doubles exactly."""
    return {
        "kernel": model.kernel.to_dict(),
        "trend": model.trend.kind.value,
        "beta_hat": [float(b) for b in model.beta_hat],
        "X": [[float(v) for v in row] for row in model.dataset.X],
        "y": [float(v) for v in model.dataset.y],
        "jitter_used": model.jitter_used,
    }


def model_from_dict(doc: dict) -> FittedGp:
    dataset = Dataset(X=np.asarray(doc["X"], dtype=float),
                      y=np.asarray(doc["y"], dtype=float))
    kernel = KernelSpec.from_dict(doc["kernel"])
    trend = TrendSpec.from_string(doc["trend"])
    model = fit_gp(dataset, kernel, trend)
    return model


def save_model(model: FittedGp, path) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh, indent=1)


def load_model(path) -> FittedGp:
    with open(path) as fh:
        return model_from_dict(json.load(fh))
