"""BFGS minimisation with Armijo backtracking for smooth convex objectives."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MAX_BACKTRACKS = 60


@dataclass(frozen=True)
class OptimOptions:
    gradient_tolerance: float = 1e-8
    max_iterations: int = 500
    armijo_slope: float = 1e-4
    backtrack_factor: float = 0.5
    initial_step: float = 1.0

    def __post_init__(self):
        if not (self.gradient_tolerance > 0):
            raise ValueError("gradient_tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not (0 < self.armijo_slope < 1):
            raise ValueError("armijo_slope must lie in (0, 1)")
        if not (0 < self.backtrack_factor < 1):
            raise ValueError("backtrack_factor must lie in (0, 1)")
        if not (self.initial_step > 0):
            raise ValueError("initial_step must be positive")


@dataclass
class OptimResult:
    minimizer: np.ndarray
    objective_value: float
    gradient_norm: float
    iterations: int
    converged: bool
    trace: list[float] = field(default_factory=list)


def minimize_bfgs(objective, gradient, init, options: OptimOptions | None = None) -> OptimResult:
    """Minimise a smooth function with BFGS and Armijo backtracking.

    The inverse-Hessian approximation starts at the identity scaled by
    1 / (1 + ||g0||) and is updated by the standard rank-two formula; updates
    are skipped when the curvature s'y is not safely positive.  Convergence is
    declared when the infinity norm of the gradient drops below the tolerance.
    On a failed line search (no Armijo decrease within 60 halvings) the best
    iterate found so far is returned with ``converged=False``.
    """
    opts = options or OptimOptions()
    x = np.array(init, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("initial point must be finite")
    fx = float(objective(x))
    if not np.isfinite(fx):
        raise ValueError("objective is not finite at the initial point")
    g = np.asarray(gradient(x), dtype=float)
    dim = x.shape[0]
    h = np.eye(dim) / (1.0 + float(np.linalg.norm(g)))
    trace = [fx]
    iterations = 0
    converged = float(np.abs(g).max()) <= opts.gradient_tolerance

    buf1 = np.empty((dim, dim))
    buf2 = np.empty((dim, dim))
    while not converged and iterations < opts.max_iterations:
        direction = -(h @ g)
        slope = float(g @ direction)
        if slope >= 0.0:
            # numerical loss of positive definiteness; restart from steepest descent
            h = np.eye(dim) / (1.0 + float(np.linalg.norm(g)))
            direction = -(h @ g)
            slope = float(g @ direction)
        if slope >= -1e-16 * abs(fx):
            break  # descent below the objective's rounding noise
        step = opts.initial_step
        accepted = False
        for _ in range(MAX_BACKTRACKS):
            x_new = x + step * direction
            f_new = float(objective(x_new))
            if np.isfinite(f_new) and f_new <= fx + opts.armijo_slope * step * slope:
                accepted = True
                break
            step *= opts.backtrack_factor
        if not accepted:
            break
        g_new = np.asarray(gradient(x_new), dtype=float)
        s = x_new - x
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-12 * float(np.linalg.norm(s)) * float(np.linalg.norm(y)):
            # (I - rho s y') H (I - rho y s') + rho s s', expanded in-place
            rho = 1.0 / sy
            hy = h @ y
            np.multiply(s[:, None], hy[None, :], out=buf1)
            np.add(buf1, buf1.T, out=buf2)
            buf2 *= rho
            h -= buf2
            np.multiply(s[:, None], s[None, :], out=buf1)
            buf1 *= rho * rho * float(y @ hy) + rho
            h += buf1
        x, g, fx = x_new, g_new, f_new
        trace.append(fx)
        iterations += 1
        converged = float(np.abs(g).max()) <= opts.gradient_tolerance

    return OptimResult(
        minimizer=x,
        objective_value=fx,
        gradient_norm=float(np.abs(g).max()),
        iterations=iterations,
        converged=converged,
        trace=trace,
    )
