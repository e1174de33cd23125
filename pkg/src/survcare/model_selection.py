"""Cross-validated selection of the regularisation level and aggregation weights.

The regularisation path is fitted in decreasing order, warm-starting each fit
at the previous solution; only the optimisation is repeated per level since
the representer context is shared.  Aggregation with external predictors then
scans a simplex lattice of convex weights against cached validation
predictions, so the scan costs O(|Theta| * n) flops per level.

Ties are broken toward the smallest regularisation value and then the
lexicographically smallest weight vector, which fixes a total order for the
selection and makes reruns deterministic.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .data import SurvivalDataset
from .estimators import (
    CenteredExternal,
    KernelEstimator,
    fit_kernel_estimator,
)
from .kernels import KernelConfig
from .optimizer import OptimOptions
from .partial_likelihood import RepresenterContext, neg_log_partial_likelihood

THETA_GRID_LIMIT = 1_000_000


class AllFitsFailed(RuntimeError):
    """No fit on the regularisation grid converged."""


@dataclass(frozen=True)
class GammaGrid:
    values: tuple[float, ...]

    def __post_init__(self):
        v = tuple(float(g) for g in self.values)
        if len(v) == 0:
            raise ValueError("gamma grid must be non-empty")
        if any(not math.isfinite(g) or g <= 0 for g in v):
            raise ValueError("gamma grid values must be finite and positive")
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("gamma grid must be strictly increasing")
        object.__setattr__(self, "values", v)

    @classmethod
    def geometric(cls, low: float, high: float, count: int) -> "GammaGrid":
        if count < 1:
            raise ValueError("count must be >= 1")
        if count == 1:
            return cls((float(low),))
        return cls(tuple(np.geomspace(low, high, count)))

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class ThetaGrid:
    """Finite set of convex weight vectors over the external predictors."""

    points: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        pts = tuple(tuple(float(t) for t in p) for p in self.points)
        if len(pts) == 0:
            raise ValueError("theta grid must be non-empty")
        m = len(pts[0])
        for p in pts:
            if len(p) != m:
                raise ValueError("theta points must have equal length")
            if any(t < 0 for t in p) or sum(p) > 1 + 1e-12:
                raise ValueError("theta points must lie in the simplex")
        object.__setattr__(self, "points", pts)

    @property
    def num_externals(self) -> int:
        return len(self.points[0])

    def __len__(self) -> int:
        return len(self.points)


def theta_grid(num_externals: int, resolution: int) -> ThetaGrid:
    """All lattice points k/resolution in the simplex, vertices included."""
    if num_externals < 1:
        raise ValueError("num_externals must be >= 1")
    if resolution < 1:
        raise ValueError("resolution must be >= 1")
    size = math.comb(resolution + num_externals, num_externals)
    if size > THETA_GRID_LIMIT:
        raise ValueError(f"theta grid would have {size} points (limit {THETA_GRID_LIMIT})")

    points: list[tuple[float, ...]] = []

    def extend(prefix: tuple[int, ...], remaining: int):
        if len(prefix) == num_externals - 1:
            for k in range(remaining + 1):
                points.append(tuple((*prefix, k)))
            return
        for k in range(remaining + 1):
            extend((*prefix, k), remaining - k)

    extend((), resolution)
    return ThetaGrid(tuple(tuple(k / resolution for k in p) for p in points))


def validation_loss(predicted, valid: SurvivalDataset) -> float:
    """Negative log-partial likelihood of predictions on the validation data."""
    return neg_log_partial_likelihood(predicted, valid)


@dataclass
class GammaEntry:
    gamma: float
    train_loss: float
    valid_loss: float
    converged: bool


@dataclass
class CareEntry:
    gamma: float
    theta: tuple[float, ...]
    valid_loss: float


@dataclass
class CvReport:
    """Per-level losses and the selection trace of a cross-validation run."""

    gamma_entries: list[GammaEntry] = field(default_factory=list)
    care_entries: list[CareEntry] = field(default_factory=list)
    gamma_hat: float | None = None
    gamma_check: float | None = None
    theta_check: tuple[float, ...] | None = None
    best_theta_per_gamma: dict[float, tuple[float, ...]] = field(default_factory=dict)

    def to_csv(self, path) -> None:
        num_theta = len(self.care_entries[0].theta) if self.care_entries else 0
        theta_cols = [f"theta_{m + 1}" for m in range(num_theta)]
        by_gamma = {e.gamma: e for e in self.gamma_entries}
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["gamma", *theta_cols, "train_loss", "valid_loss", "converged"])
            if self.care_entries:
                for e in self.care_entries:
                    g = by_gamma[e.gamma]
                    writer.writerow([
                        repr(e.gamma), *[repr(t) for t in e.theta],
                        repr(g.train_loss), repr(e.valid_loss), int(g.converged),
                    ])
            else:
                for g in self.gamma_entries:
                    writer.writerow([
                        repr(g.gamma), repr(g.train_loss), repr(g.valid_loss), int(g.converged),
                    ])

    def summary(self) -> dict:
        out = {
            "gamma_hat": self.gamma_hat,
            "gamma_check": self.gamma_check,
            "theta_check": list(self.theta_check) if self.theta_check is not None else None,
            "num_gamma": len(self.gamma_entries),
            "num_converged": sum(e.converged for e in self.gamma_entries),
        }
        converged = [e for e in self.gamma_entries if e.converged]
        if converged and self.gamma_hat is not None:
            out["valid_loss_at_gamma_hat"] = min(
                e.valid_loss for e in converged if e.gamma == self.gamma_hat
            )
        return out


def _fit_gamma_path(train: SurvivalDataset, valid: SurvivalDataset, kernel: KernelConfig,
                    grid: GammaGrid, options: OptimOptions | None):
    """Fit every grid value in decreasing order with warm starts.

    Returns (fits, report_entries, valid_predictions) keyed/ordered by gamma.
    """
    if train.dimension != valid.dimension:
        raise ValueError("training and validation dimensions differ")
    ctx = RepresenterContext.build(train, kernel)
    fits: dict[float, KernelEstimator] = {}
    entries: dict[float, GammaEntry] = {}
    valid_preds: dict[float, np.ndarray] = {}
    warm = None
    for gamma in reversed(grid.values):
        est = fit_kernel_estimator(train, kernel, gamma, options, warm=warm, ctx=ctx)
        warm = est.beta
        train_loss = neg_log_partial_likelihood(ctx.fitted_values(est.beta), train)
        preds = est.predict_many(valid.covariates)
        fits[gamma] = est
        valid_preds[gamma] = preds
        entries[gamma] = GammaEntry(
            gamma=gamma,
            train_loss=train_loss,
            valid_loss=validation_loss(preds, valid),
            converged=est.converged,
        )
    ordered = [entries[g] for g in grid.values]
    return ctx, fits, ordered, valid_preds


def _select_gamma(entries: list[GammaEntry]) -> float:
    best_gamma, best_loss = None, math.inf
    for e in entries:  # ascending gamma; strict < keeps the smallest minimiser
        if e.converged and e.valid_loss < best_loss:
            best_gamma, best_loss = e.gamma, e.valid_loss
    if best_gamma is None:
        raise AllFitsFailed("no fit on the gamma grid converged")
    return best_gamma


def cross_validate_gamma(train: SurvivalDataset, valid: SurvivalDataset,
                         kernel: KernelConfig, grid: GammaGrid,
                         options: OptimOptions | None = None):
    """Select the regularisation level by validation likelihood.

    Returns (gamma_hat, report, fits) where fits maps each grid value to its
    fitted estimator.  Non-converged fits are recorded but excluded from the
    selection; if all fits fail, AllFitsFailed is raised.
    """
    _, fits, entries, _ = _fit_gamma_path(train, valid, kernel, grid, options)
    gamma_hat = _select_gamma(entries)
    report = CvReport(gamma_entries=entries, gamma_hat=gamma_hat)
    return gamma_hat, report, fits


@dataclass
class CareEstimator:
    """Convex combination of a kernel estimator and centred externals.

    Prediction is (1 - sum_m theta_m) * kernel + sum_m theta_m * external_m.
    """

    kernel_estimator: KernelEstimator
    externals: list[CenteredExternal]
    theta: tuple[float, ...]
    gamma: float

    def predict_many(self, xs) -> np.ndarray:
        out = (1.0 - sum(self.theta)) * self.kernel_estimator.predict_many(xs)
        for weight, ext in zip(self.theta, self.externals):
            if weight != 0.0:
                out = out + weight * ext.predict_many(xs)
        return out

    def predict(self, x) -> float:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return float(self.predict_many(x[None, :])[0])

    def to_json(self) -> dict:
        return {
            "gamma": self.gamma,
            "theta": list(self.theta),
            "kernel_estimator": self.kernel_estimator.to_json(),
            "externals": [
                {"name": e.name, "training_mean": e.training_mean} for e in self.externals
            ],
        }


def predict_care(est: CareEstimator, x) -> float:
    return est.predict(x)


@dataclass
class ExternalSpec:
    """An external predictor: a vectorised callable and/or cached value tables."""

    name: str = ""
    fn: object | None = None
    train_values: np.ndarray | None = None
    valid_values: np.ndarray | None = None


def _external_values(spec: ExternalSpec, train: SurvivalDataset, valid: SurvivalDataset):
    if spec.fn is not None:
        tv = np.asarray(spec.fn(train.covariates), dtype=float)
        vv = np.asarray(spec.fn(valid.covariates), dtype=float)
    else:
        if spec.train_values is None or spec.valid_values is None:
            raise ValueError(f"external {spec.name!r} needs a callable or value tables")
        tv = np.asarray(spec.train_values, dtype=float)
        vv = np.asarray(spec.valid_values, dtype=float)
    if tv.shape != (len(train),):
        raise ValueError(f"external {spec.name!r}: expected {len(train)} training values")
    if vv.shape != (len(valid),):
        raise ValueError(f"external {spec.name!r}: expected {len(valid)} validation values")
    if not (np.all(np.isfinite(tv)) and np.all(np.isfinite(vv))):
        raise ValueError(f"external {spec.name!r} produced non-finite values")
    return tv, vv


def fit_care(train: SurvivalDataset, valid: SurvivalDataset, kernel: KernelConfig,
             gammas: GammaGrid, externals: list[ExternalSpec], thetas: ThetaGrid | None,
             options: OptimOptions | None = None):
    """Fit the aggregated estimator with cross-validated (gamma, theta).

    Externals are centred on the training sample.  For each gamma the kernel
    estimator is fitted once; the theta scan then combines cached validation
    prediction vectors.  With no externals this degrades to plain gamma
    cross-validation and the selected theta is empty.

    Returns (care_estimator, report).
    """
    care, report, _ = fit_care_path(train, valid, kernel, gammas, externals, thetas, options)
    return care, report


def fit_care_path(train: SurvivalDataset, valid: SurvivalDataset, kernel: KernelConfig,
                  gammas: GammaGrid, externals: list[ExternalSpec], thetas: ThetaGrid | None,
                  options: OptimOptions | None = None):
    """Like fit_care, but also returns the per-gamma fitted estimator map."""
    _, fits, entries, valid_preds = _fit_gamma_path(train, valid, kernel, gammas, options)
    gamma_hat = _select_gamma(entries)

    if not externals:
        report = CvReport(
            gamma_entries=entries, gamma_hat=gamma_hat,
            gamma_check=gamma_hat, theta_check=(),
        )
        care = CareEstimator(
            kernel_estimator=fits[gamma_hat], externals=[], theta=(), gamma=gamma_hat,
        )
        return care, report, fits

    if thetas is None:
        raise ValueError("a theta grid is required when externals are given")
    if thetas.num_externals != len(externals):
        raise ValueError("theta grid width must match the number of externals")

    centred: list[CenteredExternal] = []
    centred_valid = np.empty((len(externals), len(valid)))
    for m, spec in enumerate(externals):
        tv, vv = _external_values(spec, train, valid)
        mean = float(tv.mean())
        centred.append(CenteredExternal(training_mean=mean, raw=spec.fn, name=spec.name))
        centred_valid[m] = vv - mean

    theta_mat = np.asarray(thetas.points)          # P x M
    kernel_weight = 1.0 - theta_mat.sum(axis=1)    # P
    care_entries: list[CareEntry] = []
    best_theta_per_gamma: dict[float, tuple[float, ...]] = {}
    best: tuple[float, tuple[float, ...]] | None = None
    best_loss = math.inf
    for e in entries:  # ascending gamma
        if not e.converged:
            continue
        combos = np.outer(kernel_weight, valid_preds[e.gamma]) + theta_mat @ centred_valid
        local_best = None
        local_loss = math.inf
        for p, theta in enumerate(thetas.points):  # lexicographic order
            loss = validation_loss(combos[p], valid)
            care_entries.append(CareEntry(gamma=e.gamma, theta=theta, valid_loss=loss))
            if loss < local_loss:
                local_best, local_loss = theta, loss
        best_theta_per_gamma[e.gamma] = local_best
        if local_loss < best_loss:
            best, best_loss = (e.gamma, local_best), local_loss

    gamma_check, theta_check = best
    report = CvReport(
        gamma_entries=entries,
        care_entries=care_entries,
        gamma_hat=gamma_hat,
        gamma_check=gamma_check,
        theta_check=theta_check,
        best_theta_per_gamma=best_theta_per_gamma,
    )
    care = CareEstimator(
        kernel_estimator=fits[gamma_check],
        externals=centred,
        theta=theta_check,
        gamma=gamma_check,
    )
    return care, report, fits
