"""Fitted relative-risk estimators and centring of external predictors.

Two interchangeable fitting routes minimise the same strongly convex
penalised likelihood: the representer route works with coefficients over a
basis subset of training points and suits any kernel; the feature-map route
works in the primal weight space of a polynomial kernel and its cost per
iteration does not grow with the training size beyond feature evaluation.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .data import SurvivalDataset
from .kernels import (
    KernelConfig,
    PolynomialKernel,
    cross_matrix,
    feature_matrix,
    kernel_from_json,
    kernel_to_json,
)
from .optimizer import OptimOptions, OptimResult, minimize_bfgs
from .partial_likelihood import (
    RepresenterContext,
    likelihood_gradient_weights,
    neg_log_partial_likelihood,
    penalized_gradient,
    preconditioned_gradient,
    preconditioned_objective,
)

# Default bound on the sup-norm of external predictors; exceeding it only
# triggers a warning since the theory assumes boundedness without a value.
EXTERNAL_SUP_BOUND = 100.0


@dataclass
class KernelEstimator:
    """Relative-risk function sum_j (k(x, X_j) - kbar_j) beta_j over the basis.

    ``kbar_at_basis`` stores the training means kbar(X_j), so predictions at
    new points are automatically centred: the training-sample mean of the
    fitted function is zero.
    """

    kernel: KernelConfig
    basis_points: np.ndarray
    beta: np.ndarray
    kbar_at_basis: np.ndarray
    converged: bool = True
    gradient_norm: float = 0.0
    hilbert_norm_squared: float = 0.0
    fit_warning: str | None = None
    objective_trace: list[float] | None = None

    def predict_many(self, xs) -> np.ndarray:
        xs = np.asarray(xs, dtype=float)
        if xs.ndim == 1:
            xs = xs[:, None]
        if xs.shape[1] != self.basis_points.shape[1]:
            raise ValueError(
                f"expected dimension {self.basis_points.shape[1]}, got {xs.shape[1]}"
            )
        if self.beta.size == 0:  # empty basis: the centred span is {0}
            return np.zeros(xs.shape[0])
        k = cross_matrix(self.kernel, xs, self.basis_points)
        return (k - self.kbar_at_basis[None, :]) @ self.beta

    def predict(self, x) -> float:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return float(self.predict_many(x[None, :])[0])

    def to_json(self) -> dict:
        return {
            "kernel": kernel_to_json(self.kernel),
            "basis_points": self.basis_points.tolist(),
            "beta": self.beta.tolist(),
            "kbar_at_basis": self.kbar_at_basis.tolist(),
            "converged": bool(self.converged),
            "gradient_norm": float(self.gradient_norm),
            "hilbert_norm_squared": float(self.hilbert_norm_squared),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "KernelEstimator":
        return cls(
            kernel=kernel_from_json(obj["kernel"]),
            basis_points=np.asarray(obj["basis_points"], dtype=float),
            beta=np.asarray(obj["beta"], dtype=float),
            kbar_at_basis=np.asarray(obj["kbar_at_basis"], dtype=float),
            converged=bool(obj.get("converged", True)),
            gradient_norm=float(obj.get("gradient_norm", 0.0)),
            hilbert_norm_squared=float(obj.get("hilbert_norm_squared", 0.0)),
        )


def predict(est: KernelEstimator, x) -> float:
    return est.predict(x)


def fit_kernel_estimator(train: SurvivalDataset, kernel: KernelConfig, gamma: float,
                         options: OptimOptions | None = None, warm=None,
                         ctx: RepresenterContext | None = None) -> KernelEstimator:
    """Fit the penalised kernel estimator at one regularisation level.

    ``warm`` optionally seeds the optimiser with coefficients from a previous
    fit on the same training data.  A prebuilt RepresenterContext can be
    passed to share basis and Gram computations across a gamma path.
    """
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    if ctx is None:
        ctx = RepresenterContext.build(train, kernel)
    m = ctx.basis_size
    init = np.zeros(m) if warm is None else np.asarray(warm, dtype=float)
    if init.shape != (m,):
        raise ValueError(f"warm start must have length {m}")
    if m == 0:
        return KernelEstimator(
            kernel=kernel,
            basis_points=train.covariates[:0],
            beta=np.zeros(0),
            kbar_at_basis=np.zeros(0),
            objective_trace=[neg_log_partial_likelihood(np.zeros(len(train)), train)],
        )
    opts = options or OptimOptions()
    # optimise in the preconditioned coordinates; the inner tolerance is
    # tightened by the transform norm so the beta-space gradient meets the
    # requested tolerance, with a refinement fallback for the rare shortfall
    scale = ctx.scale(gamma)
    v = (ctx.from_beta @ init) * scale
    transform_norm = float(np.abs(ctx.from_beta * scale[:, None]).sum(axis=0).max())
    inner_tol = max(opts.gradient_tolerance / max(transform_norm, 1.0), 1e-13)
    trace: list[float] = []
    converged = False
    for _ in range(4):
        inner_opts = OptimOptions(
            gradient_tolerance=inner_tol,
            max_iterations=opts.max_iterations,
            armijo_slope=opts.armijo_slope,
            backtrack_factor=opts.backtrack_factor,
            initial_step=opts.initial_step,
        )
        result: OptimResult = minimize_bfgs(
            lambda w: preconditioned_objective(w, ctx, gamma),
            lambda w: preconditioned_gradient(w, ctx, gamma),
            v,
            inner_opts,
        )
        v = result.minimizer
        trace.extend(result.trace if not trace else result.trace[1:])
        beta = ctx.to_beta @ (v / scale)
        grad_norm = float(np.abs(penalized_gradient(beta, ctx, gamma)).max())
        if grad_norm <= opts.gradient_tolerance:
            converged = True
            break
        if not result.converged:
            break
        inner_tol = max(0.1 * inner_tol, 1e-13)
    fit_warning = None
    if not train.events.any():
        fit_warning = "all records censored: likelihood is constant, fitted function is zero"
    if not converged:
        fit_warning = (fit_warning + "; " if fit_warning else "") + (
            f"optimizer did not converge (gradient norm {grad_norm:.3e})"
        )
    return KernelEstimator(
        kernel=kernel,
        basis_points=train.covariates[ctx.basis],
        beta=beta,
        kbar_at_basis=ctx.kbar[ctx.basis],
        converged=converged,
        gradient_norm=grad_norm,
        hilbert_norm_squared=float(beta @ ctx.khat @ beta),
        fit_warning=fit_warning,
        objective_trace=trace,
    )


@dataclass
class FeatureMapEstimator:
    """Primal-space estimator f(x) = alpha' (phi(x)_{1..q} - feature_means)."""

    kernel: PolynomialKernel
    alpha: np.ndarray
    feature_means: np.ndarray
    constant_c: float
    converged: bool = True
    gradient_norm: float = 0.0
    hilbert_norm_squared: float = 0.0
    fit_warning: str | None = None

    def predict_many(self, xs) -> np.ndarray:
        phi = feature_matrix(self.kernel, xs)[:, :-1]
        return (phi - self.feature_means[None, :]) @ self.alpha

    def predict(self, x) -> float:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return float(self.predict_many(x[None, :])[0])

    def to_json(self) -> dict:
        return {
            "kernel": kernel_to_json(self.kernel),
            "alpha": self.alpha.tolist(),
            "feature_means": self.feature_means.tolist(),
            "constant_c": float(self.constant_c),
            "converged": bool(self.converged),
            "gradient_norm": float(self.gradient_norm),
            "hilbert_norm_squared": float(self.hilbert_norm_squared),
        }


def fit_feature_map_estimator(train: SurvivalDataset, kernel: PolynomialKernel,
                              gamma: float, options: OptimOptions | None = None,
                              warm=None) -> FeatureMapEstimator:
    """Fit the same penalised objective in the polynomial feature space.

    Minimises l(f_alpha) + gamma (sum_j alpha_j^2 + (c^{-1} sum_j alpha_j
    P_n(phi_j))^2) over alpha, where P_n(phi_j) are training means of the
    non-constant features and c is the constant feature value.
    """
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    if not isinstance(kernel, PolynomialKernel):
        raise TypeError("feature-map fitting requires a polynomial kernel")
    phi = feature_matrix(kernel, train.covariates)
    c = float(phi[0, -1])
    phi_nc = phi[:, :-1]
    means = phi_nc.mean(axis=0)
    centred = phi_nc - means[None, :]
    u = means / c
    q = phi_nc.shape[1]

    def objective(alpha):
        fvals = centred @ alpha
        ua = float(u @ alpha)
        return neg_log_partial_likelihood(fvals, train) + gamma * (float(alpha @ alpha) + ua * ua)

    def grad(alpha):
        fvals = centred @ alpha
        w = likelihood_gradient_weights(fvals, train)
        return centred.T @ w + 2.0 * gamma * (alpha + u * float(u @ alpha))

    init = np.zeros(q) if warm is None else np.asarray(warm, dtype=float)
    result = minimize_bfgs(objective, grad, init, options)
    alpha = result.minimizer
    ua = float(u @ alpha)
    return FeatureMapEstimator(
        kernel=kernel,
        alpha=alpha,
        feature_means=means,
        constant_c=c,
        converged=result.converged,
        gradient_norm=result.gradient_norm,
        hilbert_norm_squared=float(alpha @ alpha) + ua * ua,
        fit_warning=None if result.converged else
        f"optimizer did not converge (gradient norm {result.gradient_norm:.3e})",
    )


@dataclass
class CenteredExternal:
    """External predictor minus its training-sample mean.

    ``raw`` is an opaque vectorised function mapping an (n, d) covariate array
    to n predictions; table-backed externals pass None and are evaluated
    through their cached value vectors instead.
    """

    training_mean: float
    raw: object | None = None
    name: str = ""

    def predict_many(self, xs) -> np.ndarray:
        if self.raw is None:
            raise ValueError(
                f"external {self.name!r} is table-backed and cannot be evaluated at new points"
            )
        xs = np.asarray(xs, dtype=float)
        if xs.ndim == 1:
            xs = xs[:, None]
        values = np.asarray(self.raw(xs), dtype=float)
        return values - self.training_mean

    def predict(self, x) -> float:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return float(self.predict_many(x[None, :])[0])


def center_external(raw, train: SurvivalDataset, name: str = "",
                    sup_bound: float = EXTERNAL_SUP_BOUND) -> CenteredExternal:
    """Centre an external predictor on the training sample."""
    values = np.asarray(raw(train.covariates), dtype=float)
    if values.shape != (len(train),) or not np.all(np.isfinite(values)):
        raise ValueError("external predictor must return finite values on training points")
    if np.abs(values).max() > sup_bound:
        warnings.warn(
            f"external {name or 'predictor'!r} exceeds the configured sup-norm bound "
            f"{sup_bound}", stacklevel=2)
    return CenteredExternal(training_mean=float(values.mean()), raw=raw, name=name)
