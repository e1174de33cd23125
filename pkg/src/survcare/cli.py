"""Batch command-line front end.

Subcommands: simulate, fit, cv, care, evaluate, study.  All configuration is
JSON validated against a schema (unknown keys rejected); all tables are CSV
with headers.  Exit codes: 0 success, 2 configuration error, 3 I/O error,
4 when every fit on the grid failed, 5 when a study loses more than 10% of
its replications.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from concurrent.futures import ProcessPoolExecutor

import jsonschema
import numpy as np

from .data import DataFormatError, SurvivalDataset, load_csv, split_train_validation, write_csv
from .estimators import fit_kernel_estimator
from .evaluation import breslow_survival, concordance_index, l2_error_mc
from .kernels import NotInSpaceError, kernel_from_json
from .model_selection import (
    AllFitsFailed,
    ExternalSpec,
    GammaGrid,
    cross_validate_gamma,
    fit_care_path,
    theta_grid,
)
from .optimizer import OptimOptions
from .simulation import DgpConfig, covariate_sampler, external_predictor, simulate_dataset, true_f0

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_ALL_FITS_FAILED = 4
EXIT_STUDY_DEGRADED = 5


class ConfigError(ValueError):
    pass


_KERNEL_SCHEMA = {"type": "object"}  # structure enforced by kernel_from_json
_OPTIMIZER_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "gradient_tolerance": {"type": "number", "exclusiveMinimum": 0},
        "max_iterations": {"type": "integer", "minimum": 1},
        "armijo_slope": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "backtrack_factor": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "initial_step": {"type": "number", "exclusiveMinimum": 0},
    },
}
_GAMMA_GRID_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "oneOf": [
        {"required": ["min", "max", "count"]},
        {"required": ["values"]},
    ],
    "properties": {
        "min": {"type": "number", "exclusiveMinimum": 0},
        "max": {"type": "number", "exclusiveMinimum": 0},
        "count": {"type": "integer", "minimum": 1},
        "geometric": {"type": "boolean"},
        "values": {"type": "array", "items": {"type": "number"}, "minItems": 1},
    },
}
_EXTERNALS_SCHEMA = {
    "type": "array",
    "items": {
        "type": "object",
        "additionalProperties": False,
        "oneOf": [
            {"required": ["builtin"]},
            {"required": ["name", "train_table", "valid_table"]},
        ],
        "properties": {
            "builtin": {"type": "string"},
            "name": {"type": "string"},
            "train_table": {"type": "string"},
            "valid_table": {"type": "string"},
        },
    },
}

CONFIG_SCHEMAS = {
    "simulate": {
        "type": "object",
        "additionalProperties": False,
        "required": ["dgp", "n"],
        "properties": {
            "dgp": {"enum": ["univariate", "multivariate_d10"]},
            "n": {"type": "integer", "minimum": 1},
            "seed": {"type": "integer"},
        },
    },
    "fit": {
        "type": "object",
        "additionalProperties": False,
        "required": ["kernel", "gamma"],
        "properties": {
            "kernel": _KERNEL_SCHEMA,
            "gamma": {"type": "number", "exclusiveMinimum": 0},
            "optimizer": _OPTIMIZER_SCHEMA,
        },
    },
    "cv": {
        "type": "object",
        "additionalProperties": False,
        "required": ["kernel", "gamma_grid"],
        "properties": {
            "kernel": _KERNEL_SCHEMA,
            "gamma_grid": _GAMMA_GRID_SCHEMA,
            "optimizer": _OPTIMIZER_SCHEMA,
        },
    },
    "care": {
        "type": "object",
        "additionalProperties": False,
        "required": ["kernel", "gamma_grid"],
        "properties": {
            "kernel": _KERNEL_SCHEMA,
            "gamma_grid": _GAMMA_GRID_SCHEMA,
            "externals": _EXTERNALS_SCHEMA,
            "theta_resolution": {"type": "integer", "minimum": 1},
            "optimizer": _OPTIMIZER_SCHEMA,
        },
    },
    "study": {
        "type": "object",
        "additionalProperties": False,
        "required": ["dgp", "kernel", "gamma_grid", "n_values", "replications"],
        "properties": {
            "dgp": {"enum": ["univariate", "multivariate_d10"]},
            "kernel": _KERNEL_SCHEMA,
            "gamma_grid": _GAMMA_GRID_SCHEMA,
            "n_values": {"type": "array", "items": {"type": "integer", "minimum": 2},
                         "minItems": 1},
            "replications": {"type": "integer", "minimum": 1},
            "use_external": {"type": "boolean"},
            "theta_resolution": {"type": "integer", "minimum": 1},
            "mc_points": {"type": "integer", "minimum": 1},
            "seed": {"type": "integer"},
            "optimizer": _OPTIMIZER_SCHEMA,
        },
    },
}

BUILTIN_EXTERNALS = {
    "univariate_perturbed": "univariate",
    "multivariate_linear": "multivariate_d10",
}


def _load_config(path: str, command: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    try:
        jsonschema.validate(obj, CONFIG_SCHEMAS[command])
    except jsonschema.ValidationError as exc:
        field = "/".join(str(p) for p in exc.absolute_path) or "(top level)"
        raise ConfigError(f"{path}: invalid config at {field}: {exc.message}") from None
    return obj


def _gamma_grid(obj: dict) -> GammaGrid:
    if "values" in obj:
        return GammaGrid(tuple(sorted(obj["values"])))
    if obj.get("geometric", True):
        return GammaGrid.geometric(obj["min"], obj["max"], obj["count"])
    return GammaGrid(tuple(np.linspace(obj["min"], obj["max"], obj["count"])))


def _kernel(obj: dict):
    try:
        return kernel_from_json(obj)
    except ValueError as exc:
        raise ConfigError(f"invalid kernel config: {exc}") from None


def _optimizer(obj: dict | None) -> OptimOptions:
    return OptimOptions(**obj) if obj else OptimOptions()


def _read_prediction_table(path: str, expected: int, name: str) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "prediction" not in reader.fieldnames:
            raise ConfigError(f"{path}: prediction table needs a 'prediction' column")
        values = [float(row["prediction"]) for row in reader]
    if len(values) != expected:
        raise ConfigError(
            f"external {name!r}: table {path} has {len(values)} rows, expected {expected}"
        )
    return np.asarray(values)


def _externals_from_config(specs: list[dict], train: SurvivalDataset,
                           valid: SurvivalDataset) -> list[ExternalSpec]:
    out = []
    for spec in specs:
        if "builtin" in spec:
            name = spec["builtin"]
            if name not in BUILTIN_EXTERNALS:
                raise ConfigError(
                    f"unknown builtin external {name!r}; "
                    f"choose from {sorted(BUILTIN_EXTERNALS)}"
                )
            dgp = DgpConfig(BUILTIN_EXTERNALS[name])
            out.append(ExternalSpec(
                name=name, fn=lambda xs, dgp=dgp: external_predictor(dgp, xs)))
        else:
            out.append(ExternalSpec(
                name=spec["name"],
                train_values=_read_prediction_table(spec["train_table"], len(train), spec["name"]),
                valid_values=_read_prediction_table(spec["valid_table"], len(valid), spec["name"]),
            ))
    return out


def _emit(quiet: bool, human: list[str], machine: dict) -> None:
    if quiet:
        print(json.dumps(machine, sort_keys=True))
    else:
        for line in human:
            print(line)


def _write_predictions(path, sections) -> None:
    """sections: iterable of (role, values)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["role", "row", "prediction"])
        for role, values in sections:
            for i, v in enumerate(values):
                writer.writerow([role, i, repr(float(v))])


def cmd_simulate(args) -> int:
    config = _load_config(args.config, "simulate")
    seed = args.seed if args.seed is not None else config.get("seed", 0)
    dgp = DgpConfig(config["dgp"])
    dataset, truth = simulate_dataset(dgp, config["n"], seed)
    data_path = f"{args.out}_data.csv"
    truth_path = f"{args.out}_truth.csv"
    write_csv(dataset, data_path)
    with open(truth_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{j + 1}" for j in range(dataset.dimension)] + ["f0"])
        f0 = true_f0(dgp, dataset.covariates)
        for i in range(len(dataset)):
            writer.writerow([repr(float(v)) for v in dataset.covariates[i]] + [repr(float(f0[i]))])
    _emit(args.quiet,
          [f"wrote {len(dataset)} records to {data_path}", f"wrote truth table to {truth_path}"],
          {"status": "ok", "records": len(dataset),
           "outputs": {"data": data_path, "truth": truth_path}})
    return EXIT_OK


def cmd_fit(args) -> int:
    config = _load_config(args.config, "fit")
    train = load_csv(args.train)
    est = fit_kernel_estimator(train, _kernel(config["kernel"]), config["gamma"],
                               _optimizer(config.get("optimizer")))
    est_path = f"{args.out}_estimator.json"
    pred_path = f"{args.out}_predictions.csv"
    with open(est_path, "w", encoding="utf-8") as fh:
        json.dump(est.to_json(), fh, indent=2)
        fh.write("\n")
    _write_predictions(pred_path, [("train", est.predict_many(train.covariates))])
    if est.fit_warning:
        print(f"warning: {est.fit_warning}", file=sys.stderr)
    _emit(args.quiet,
          [f"fitted estimator written to {est_path}"],
          {"status": "ok", "converged": est.converged,
           "outputs": {"estimator": est_path, "predictions": pred_path}})
    return EXIT_OK


def cmd_cv(args) -> int:
    config = _load_config(args.config, "cv")
    train = load_csv(args.train)
    valid = load_csv(args.valid)
    gamma_hat, report, fits = cross_validate_gamma(
        train, valid, _kernel(config["kernel"]), _gamma_grid(config["gamma_grid"]),
        _optimizer(config.get("optimizer")))
    cv_path = f"{args.out}_cv.csv"
    sel_path = f"{args.out}_selection.json"
    est_path = f"{args.out}_estimator.json"
    pred_path = f"{args.out}_predictions.csv"
    report.to_csv(cv_path)
    with open(sel_path, "w", encoding="utf-8") as fh:
        json.dump(report.summary(), fh, indent=2)
        fh.write("\n")
    best = fits[gamma_hat]
    with open(est_path, "w", encoding="utf-8") as fh:
        json.dump(best.to_json(), fh, indent=2)
        fh.write("\n")
    _write_predictions(pred_path, [
        ("train", best.predict_many(train.covariates)),
        ("valid", best.predict_many(valid.covariates)),
    ])
    _emit(args.quiet,
          [f"selected gamma {gamma_hat:.6g}", f"report written to {cv_path}"],
          {"status": "ok", "gamma_hat": gamma_hat,
           "outputs": {"cv": cv_path, "selection": sel_path,
                       "estimator": est_path, "predictions": pred_path}})
    return EXIT_OK


def cmd_care(args) -> int:
    config = _load_config(args.config, "care")
    train = load_csv(args.train)
    valid = load_csv(args.valid)
    externals = _externals_from_config(config.get("externals", []), train, valid)
    thetas = theta_grid(len(externals), config.get("theta_resolution", 20)) if externals else None
    care, report, _ = fit_care_path(
        train, valid, _kernel(config["kernel"]), _gamma_grid(config["gamma_grid"]),
        externals, thetas, _optimizer(config.get("optimizer")))
    cv_path = f"{args.out}_cv.csv"
    sel_path = f"{args.out}_selection.json"
    care_path = f"{args.out}_care.json"
    pred_path = f"{args.out}_predictions.csv"
    report.to_csv(cv_path)
    with open(sel_path, "w", encoding="utf-8") as fh:
        json.dump(report.summary(), fh, indent=2)
        fh.write("\n")
    with open(care_path, "w", encoding="utf-8") as fh:
        json.dump(care.to_json(), fh, indent=2)
        fh.write("\n")
    kernel_weight = 1.0 - sum(care.theta)
    sections = []
    for role, ds, ext_values in (
        ("train", train, [sp.train_values for sp in externals]),
        ("valid", valid, [sp.valid_values for sp in externals]),
    ):
        preds = kernel_weight * care.kernel_estimator.predict_many(ds.covariates)
        for w, ext, spec, table in zip(care.theta, care.externals, externals, ext_values):
            if w == 0.0:
                continue
            if spec.fn is not None:
                preds = preds + w * ext.predict_many(ds.covariates)
            else:
                preds = preds + w * (np.asarray(table) - ext.training_mean)
        sections.append((role, preds))
    _write_predictions(pred_path, sections)
    _emit(args.quiet,
          [f"selected gamma {care.gamma:.6g}, theta {list(care.theta)}",
           f"report written to {cv_path}"],
          {"status": "ok", "gamma_check": care.gamma, "theta_check": list(care.theta),
           "outputs": {"cv": cv_path, "selection": sel_path,
                       "care": care_path, "predictions": pred_path}})
    return EXIT_OK


def cmd_evaluate(args) -> int:
    data = load_csv(args.data)
    curve = breslow_survival(data)
    breslow_path = f"{args.out}_breslow.csv"
    curve.to_csv(breslow_path)
    outputs = {"breslow": breslow_path}
    metrics = {}
    if args.predictions:
        preds = _read_prediction_table(args.predictions, len(data), "predictions")
        metrics["concordance"] = concordance_index(preds, data)
        metrics_path = f"{args.out}_metrics.json"
        with open(metrics_path, "w", encoding="utf-8") as fh:
            json.dump(metrics, fh, indent=2)
            fh.write("\n")
        outputs["metrics"] = metrics_path
    _emit(args.quiet,
          [f"Breslow curve written to {breslow_path}"]
          + ([f"concordance {metrics['concordance']:.4f}"] if metrics else []),
          {"status": "ok", "outputs": outputs, **metrics})
    return EXIT_OK


def _derive_seed(master: int, *parts: int) -> int:
    ss = np.random.SeedSequence([master % 2**63, *[p % 2**63 for p in parts]])
    return int(ss.generate_state(1, np.uint64)[0])


ESTIMATOR_ORDER = {"cv_kernel": 0, "oracle_kernel": 1, "care": 2, "external": 3}


def _study_replication(payload: dict) -> dict:
    """One (n, rep) replication; returns tidy rows or an error message."""
    n = payload["n"]
    rep = payload["rep"]
    try:
        dgp = DgpConfig(payload["dgp"])
        kernel = kernel_from_json(payload["kernel"])
        grid = GammaGrid(tuple(payload["gamma_values"]))
        options = _optimizer(payload.get("optimizer"))
        master = payload["seed"]
        mc_points = payload["mc_points"]

        data, truth = simulate_dataset(dgp, 2 * n, _derive_seed(master, n, rep, 0))
        train, valid = split_train_validation(data, _derive_seed(master, n, rep, 1))
        mc_seed = _derive_seed(master, n, rep, 2)
        sampler = covariate_sampler(dgp)
        f0 = truth.f0

        externals = []
        thetas = None
        if payload["use_external"]:
            externals = [ExternalSpec(name="dgp_external", fn=truth.external)]
            thetas = theta_grid(1, payload["theta_resolution"])
        care, report, fits = fit_care_path(train, valid, kernel, grid, externals,
                                           thetas, options)

        def l2(predict) -> float:
            return l2_error_mc(predict, f0, sampler, mc_points, mc_seed)

        converged = [e.gamma for e in report.gamma_entries if e.converged]
        errors = {g: l2(fits[g].predict_many) for g in converged}
        gamma_star = min(converged, key=lambda g: (errors[g], g))

        rows = [
            {"n": n, "rep": rep, "estimator": "cv_kernel",
             "l2_error": l2(fits[report.gamma_hat].predict_many),
             "gamma": report.gamma_hat, "theta": ()},
            {"n": n, "rep": rep, "estimator": "oracle_kernel",
             "l2_error": errors[gamma_star], "gamma": gamma_star, "theta": ()},
        ]
        if externals:
            ext = care.externals[0]
            rows.append({"n": n, "rep": rep, "estimator": "care",
                         "l2_error": l2(care.predict_many),
                         "gamma": care.gamma, "theta": care.theta})
            rows.append({"n": n, "rep": rep, "estimator": "external",
                         "l2_error": l2(ext.predict_many), "gamma": None, "theta": ()})
        return {"n": n, "rep": rep, "rows": rows, "error": None}
    except Exception as exc:  # replication failures are recorded, not fatal
        return {"n": n, "rep": rep, "rows": [], "error": f"{type(exc).__name__}: {exc}"}


def run_study(config: dict, out_prefix: str, workers: int = 1, quiet: bool = False) -> int:
    """Run the replication study and write tidy and aggregated CSVs.

    Deterministic for a fixed seed regardless of the worker count: every
    replication is seeded independently from (seed, n, rep) and rows are
    assembled in sorted order.
    """
    grid = _gamma_grid(config["gamma_grid"])
    payloads = [
        {
            "dgp": config["dgp"],
            "kernel": config["kernel"],
            "gamma_values": list(grid.values),
            "optimizer": config.get("optimizer"),
            "n": n,
            "rep": rep,
            "seed": config.get("seed", 0),
            "use_external": config.get("use_external", False),
            "theta_resolution": config.get("theta_resolution", 20),
            "mc_points": config.get("mc_points", 500),
        }
        for n in config["n_values"]
        for rep in range(config["replications"])
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_study_replication, payloads))
    else:
        outcomes = [_study_replication(p) for p in payloads]

    failures = [o for o in outcomes if o["error"] is not None]
    for o in failures:
        print(f"replication (n={o['n']}, rep={o['rep']}) failed: {o['error']}",
              file=sys.stderr)
    rows = [r for o in outcomes for r in o["rows"]]
    rows.sort(key=lambda r: (r["n"], r["rep"], ESTIMATOR_ORDER[r["estimator"]]))

    results_path = f"{out_prefix}_results.csv"
    with open(results_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n", "rep", "estimator", "l2_error", "gamma", "theta"])
        for r in rows:
            writer.writerow([
                r["n"], r["rep"], r["estimator"], repr(float(r["l2_error"])),
                "" if r["gamma"] is None else repr(float(r["gamma"])),
                ";".join(repr(float(t)) for t in r["theta"]),
            ])

    summary_path = f"{out_prefix}_summary.csv"
    groups: dict[tuple[int, str], list[float]] = {}
    for r in rows:
        groups.setdefault((r["n"], r["estimator"]), []).append(r["l2_error"])
    with open(summary_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n", "estimator", "n_rep", "mean_l2_error", "sd_l2_error",
                         "ci_low", "ci_high"])
        for (n, est) in sorted(groups, key=lambda k: (k[0], ESTIMATOR_ORDER[k[1]])):
            vals = np.asarray(groups[(n, est)])
            mean = float(vals.mean())
            sd = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
            half = 2.0 * sd / float(np.sqrt(vals.size))
            writer.writerow([n, est, vals.size, repr(mean), repr(sd),
                             repr(mean - half), repr(mean + half)])

    total = len(payloads)
    ok = total - len(failures)
    _emit(quiet,
          [f"{ok}/{total} replications succeeded",
           f"results written to {results_path}", f"summary written to {summary_path}"],
          {"status": "ok" if ok >= 0.9 * total else "degraded",
           "succeeded": ok, "total": total,
           "outputs": {"results": results_path, "summary": summary_path}})
    return EXIT_OK if ok >= 0.9 * total else EXIT_STUDY_DEGRADED


def cmd_study(args) -> int:
    config = _load_config(args.config, "study")
    if args.seed is not None:
        config["seed"] = args.seed
    return run_study(config, args.out, workers=args.workers, quiet=args.quiet)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="survcare",
        description="Kernel relative-risk estimation with cross-validated aggregation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="JSON config path")
        p.add_argument("--out", required=True, help="output path prefix")
        p.add_argument("--quiet", action="store_true",
                       help="print only machine-readable output on stdout")

    p = sub.add_parser("simulate", help="draw a dataset from a built-in generator")
    common(p)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("fit", help="fit a kernel estimator at a fixed gamma")
    p.add_argument("train", help="training CSV")
    common(p)
    p.set_defaults(handler=cmd_fit)

    p = sub.add_parser("cv", help="cross-validate gamma on a train/validation pair")
    p.add_argument("train", help="training CSV")
    p.add_argument("valid", help="validation CSV")
    common(p)
    p.set_defaults(handler=cmd_cv)

    p = sub.add_parser("care", help="fit the aggregated estimator with externals")
    p.add_argument("train", help="training CSV")
    p.add_argument("valid", help="validation CSV")
    common(p)
    p.set_defaults(handler=cmd_care)

    p = sub.add_parser("evaluate", help="Breslow curve and concordance metrics")
    p.add_argument("data", help="data CSV")
    p.add_argument("--predictions", default=None, help="prediction table CSV")
    common(p, config_required=False)
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("study", help="replication study over sample sizes")
    common(p)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(handler=cmd_study)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except (ConfigError, DataFormatError, NotInSpaceError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AllFitsFailed as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ALL_FITS_FAILED
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
