"""Negative log-partial likelihood, penalised objective, and representer basis.

The likelihood is

    l(f) = (1/n) sum_{events i} log S(f, T_i) - (1/n) sum_{events i} f(X_i)

with S(f, t) = (1/n) sum_j 1{T_j >= t} exp(f(X_j)).  Risk sets use >=, so a
subject's own term is always included and S(f, T_i) > 0.  Evaluation shifts by
the running maximum of f before exponentiating (log-sum-exp), so values of f
around +-30 during line searches are handled exactly; in the extreme-overshoot
regime where the shifted suffix sum underflows entirely, the suffix maximum is
used instead, which is enough for a line search to reject the step.

The penalised objective over representer coefficients beta indexed by the
basis A is

    l(f_beta) + gamma * sum_{i,j in A} khat(X_i, X_j) beta_i beta_j

with f_beta(x) = sum_{j in A} ktilde(x, X_j) beta_j, where
ktilde(x, y) = k(x, y) - kbar(y), kbar(y) = (1/n) sum_i k(X_i, y), and
khat(x, y) = k(x, y) - kbar(x) - kbar(y) + kbar(x) kbar(y) * cns with cns the
squared Hilbert norm of the constant.  By construction every f_beta has zero
empirical mean, so the quadratic form is exactly the squared Hilbert norm of
f_beta and the objective is strongly convex.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import SurvivalDataset
from .kernels import GramMatrix, KernelConfig, constant_norm_squared, gram_matrix

# Pivots below this fraction of the largest entry of the bordered matrix are
# treated as zero during Gaussian elimination.
RREF_PIVOT_TOL = 1e-10


def _sorted_log_risk_sums(fvalues: np.ndarray, data: SurvivalDataset):
    """Per sorted position p: log sum_{q >= group_start(p)} exp(fs_q).

    Returns (idx, fs, log_suffix, shifted_exp) where idx is the dataset's risk
    index, fs the sorted f values and shifted_exp = exp(fs - global max).
    """
    idx = data.risk_index()
    fs = fvalues[idx.order]
    m = float(fs.max())
    shifted = np.exp(fs - m)
    suffix = np.cumsum(shifted[::-1])[::-1]
    starts = idx.group_start
    sums = suffix[starts]
    with np.errstate(divide="ignore"):
        log_suffix = m + np.log(sums)
    if not np.all(sums > 0.0):
        # all terms in some suffix underflowed; fall back to the suffix max
        rev_max = np.maximum.accumulate(fs[::-1])[::-1]
        log_suffix = np.where(sums > 0.0, log_suffix, rev_max[starts])
    return idx, fs, log_suffix, shifted


def neg_log_partial_likelihood(fvalues, data: SurvivalDataset) -> float:
    """Exact negative log-partial likelihood of the relative-risk values."""
    fvalues = np.asarray(fvalues, dtype=float)
    if fvalues.shape != (len(data),):
        raise ValueError(f"expected {len(data)} relative-risk values")
    if not np.all(np.isfinite(fvalues)):
        raise ValueError("relative-risk values must be finite")
    idx, fs, log_suffix, _ = _sorted_log_risk_sums(fvalues, data)
    ev = idx.event_sorted
    if not ev.any():
        return 0.0
    n = len(data)
    log_s = log_suffix[ev] - np.log(n)
    return float((log_s.sum() - fs[ev].sum()) / n)


def likelihood_gradient_weights(fvalues, data: SurvivalDataset) -> np.ndarray:
    """Weights u (original record order) such that grad l(M beta) = M' u.

    Columns of M are per-record values of basis functions; u collects the
    first Gateaux derivative of the likelihood with respect to each record's
    function value.
    """
    fvalues = np.asarray(fvalues, dtype=float)
    idx, fs, log_suffix, shifted = _sorted_log_risk_sums(fvalues, data)
    n = len(data)
    ev = idx.event_sorted
    # 1 / Stilde_i at event positions, zero elsewhere; Stilde is the shifted
    # suffix sum, so shifted * cumulative(1/Stilde) stays bounded by 1 per term.
    inv_sums = np.zeros(n)
    if ev.any():
        inv_sums[ev] = np.exp(-(log_suffix[ev] - (fs.max())))
    cum = np.cumsum(inv_sums)[idx.group_end]
    u_sorted = (shifted * cum - ev) / n
    u = np.empty(n)
    u[idx.order] = u_sorted
    return u


def rref_pivot_columns(matrix: np.ndarray, rel_tol: float = RREF_PIVOT_TOL) -> list[int]:
    """Pivot-column indices of the reduced row echelon form.

    Gaussian elimination with partial pivoting; a candidate pivot counts only
    if its magnitude exceeds rel_tol times the largest entry of the input.
    """
    a = np.array(matrix, dtype=float)
    n_rows, n_cols = a.shape
    tol = rel_tol * max(float(np.abs(a).max()), np.finfo(float).tiny)
    pivots: list[int] = []
    row = 0
    for col in range(n_cols):
        if row >= n_rows:
            break
        sub = np.abs(a[row:, col])
        best = int(np.argmax(sub))
        if sub[best] <= tol:
            continue
        if best:
            a[[row, row + best]] = a[[row + best, row]]
        a[row] /= a[row, col]
        col_vals = a[:, col].copy()
        col_vals[row] = 0.0
        a -= np.outer(col_vals, a[row])
        pivots.append(col)
        row += 1
    return pivots


def build_representer_basis(gram, constant_norm_sq: float) -> np.ndarray:
    """Indices of training points whose bordered kernel rows form a basis.

    Builds the (n+1) x (n+1) matrix with top-left ``constant_norm_sq``, a
    border of ones and the Gram matrix as the body, and returns the
    one-decremented pivot columns of its reduced row echelon form, restricted
    to the training indices.  Output is sorted ascending (0-based).
    """
    k = gram.entries if isinstance(gram, GramMatrix) else np.asarray(gram, dtype=float)
    if constant_norm_sq <= 0:
        raise ValueError("constant_norm_sq must be positive")
    n = k.shape[0]
    bordered = np.empty((n + 1, n + 1))
    bordered[0, 0] = constant_norm_sq
    bordered[0, 1:] = 1.0
    bordered[1:, 0] = 1.0
    bordered[1:, 1:] = k
    pivots = rref_pivot_columns(bordered)
    return np.array(sorted(c - 1 for c in pivots if c >= 1), dtype=int)


@dataclass
class RepresenterContext:
    """Cached quantities for penalised fitting on one training dataset.

    Everything is gamma-independent, so one context serves a whole
    regularisation path.  Immutable after construction.

    Fitting does not run in beta coordinates directly: the penalty matrix and
    the likelihood curvature are both severely ill-conditioned for smooth
    kernels.  The context therefore prepares a two-stage linear change of
    variables.  First the penalty is whitened through an upper-triangular
    Cholesky factor R of (khat + ridge); then the whitened design is rotated
    into the eigenbasis Q of its own second-moment matrix, whose eigenvalues
    ``curvature`` proxy the likelihood Hessian.  Per regularisation level the
    fit scales these coordinates by sqrt(2 gamma + curvature), which makes
    the effective Hessian nearly the identity for every gamma.  The change of
    variables is exact, so the minimised objective and the resulting fitted
    function are unchanged.
    """

    dataset: SurvivalDataset
    gram: GramMatrix
    constant_norm_sq: float
    basis: np.ndarray
    kbar: np.ndarray
    ktilde: np.ndarray        # n x |basis|, ktilde(X_i, X_j) for j in basis
    khat: np.ndarray          # |basis| x |basis| penalty matrix
    prec_design: np.ndarray   # ktilde in preconditioned coordinates
    prec_penalty: np.ndarray  # khat in preconditioned coordinates
    curvature: np.ndarray     # eigenvalues of the whitened design moment matrix
    to_beta: np.ndarray       # beta = to_beta @ w
    from_beta: np.ndarray     # w = from_beta @ beta

    @classmethod
    def build(cls, dataset: SurvivalDataset, kernel: KernelConfig) -> "RepresenterContext":
        cns = constant_norm_squared(kernel)
        gram = gram_matrix(kernel, dataset.covariates)
        basis = build_representer_basis(gram, cns)
        k = gram.entries
        kbar = k.mean(axis=0)
        ktilde = k[:, basis] - kbar[basis][None, :]
        kb = kbar[basis]
        khat = k[np.ix_(basis, basis)] - kb[:, None] - kb[None, :] + np.outer(kb, kb) * cns
        khat = 0.5 * (khat + khat.T)
        m = basis.shape[0]
        ridge = max(np.trace(khat) / m if m else 0.0, 1.0) * 1e-12
        for _ in range(12):
            try:
                chol = np.linalg.cholesky(khat + ridge * np.eye(m)).T
                break
            except np.linalg.LinAlgError:
                ridge *= 100.0
        else:
            raise np.linalg.LinAlgError("penalty matrix is not positive semi-definite")
        chol_inv = np.linalg.inv(chol)
        whitened = ktilde @ chol_inv
        curvature, rot = np.linalg.eigh((whitened.T @ whitened) / len(dataset))
        curvature = np.maximum(curvature, 0.0)
        prec_design = whitened @ rot
        to_beta = chol_inv @ rot
        prec_penalty = to_beta.T @ khat @ to_beta
        prec_penalty = 0.5 * (prec_penalty + prec_penalty.T)
        from_beta = rot.T @ chol
        arrays = (basis, kbar, ktilde, khat, prec_design, prec_penalty,
                  curvature, to_beta, from_beta)
        for arr in arrays:
            arr.flags.writeable = False
        return cls(dataset, gram, cns, basis, kbar, ktilde, khat,
                   prec_design, prec_penalty, curvature, to_beta, from_beta)

    @property
    def basis_size(self) -> int:
        return self.basis.shape[0]

    def fitted_values(self, beta) -> np.ndarray:
        return self.ktilde @ np.asarray(beta, dtype=float)

    def scale(self, gamma: float) -> np.ndarray:
        """Per-coordinate scaling sqrt(2 gamma + curvature) for one level."""
        return np.sqrt(2.0 * gamma + self.curvature)


def penalized_objective(beta, ctx: RepresenterContext, gamma: float) -> float:
    beta = np.asarray(beta, dtype=float)
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    if not np.all(np.isfinite(beta)):
        raise ValueError("beta must be finite")
    fvals = ctx.ktilde @ beta
    return neg_log_partial_likelihood(fvals, ctx.dataset) + gamma * float(beta @ ctx.khat @ beta)


def penalized_gradient(beta, ctx: RepresenterContext, gamma: float) -> np.ndarray:
    beta = np.asarray(beta, dtype=float)
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    if not np.all(np.isfinite(beta)):
        raise ValueError("beta must be finite")
    fvals = ctx.ktilde @ beta
    u = likelihood_gradient_weights(fvals, ctx.dataset)
    return ctx.ktilde.T @ u + 2.0 * gamma * (ctx.khat @ beta)


def preconditioned_objective(v, ctx: RepresenterContext, gamma: float) -> float:
    """Penalised objective in the scaled coordinates v (same function values).

    The underlying coefficients are beta = to_beta @ (v / scale(gamma)).
    """
    v = np.asarray(v, dtype=float)
    w = v / ctx.scale(gamma)
    fvals = ctx.prec_design @ w
    pen = gamma * float(w @ (ctx.prec_penalty @ w))
    return neg_log_partial_likelihood(fvals, ctx.dataset) + pen


def preconditioned_gradient(v, ctx: RepresenterContext, gamma: float) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    scale = ctx.scale(gamma)
    w = v / scale
    u = likelihood_gradient_weights(ctx.prec_design @ w, ctx.dataset)
    return (ctx.prec_design.T @ u + 2.0 * gamma * (ctx.prec_penalty @ w)) / scale
