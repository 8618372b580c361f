"""Command-line driver: ``steinvi {run,check,variance,datagen}``.

Exit status is 0 on success, 1 when a run or gate fails, 2 on I/O or
configuration errors.

Experiment spec files are JSON::

    {
      "dataset": {"synthetic": {"n": 500, "d": 20, "seed": 1, "intercept": true}},
      "sigma0_sq": 100.0,
      "grid": {"algorithms": ["1E", "1N", "2E", "2N"], "orders": [1, 2],
               "steppers": ["adam", "snngm"]},
      "run": {"max_iters": 100000, "window": 1000, "stop_tol": 0.0, "alpha": 0.001},
      "seed": 0,
      "trace_every": 10
    }

``dataset`` may instead hold ``{"csv": {"path": ..., "label_column": ...,
"positive_label": ..., "standardize": false, "intercept": true,
"categorical": [...], "drop": [...], "delimiter": ","}}`` (paths relative to
the spec file) or ``{"quadratic": {"theta_hat": [...], "P": [[...]],
"ell0": 0.0}}``. ``grid`` may also be an explicit list of cells, each a
mapping with ``algorithm``, ``order``, ``stepper`` and optional run overrides.
Snngm pairs only with natural-gradient algorithms; invalid combinations in
the product form are skipped.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np

from . import diagnostics as diag
from .data import CsvSchema, Dataset, load_csv, synth_logistic, write_csv
from .errors import DataLoadError, DimensionError, NotPositiveDefiniteError
from .models import LogisticModel, QuadraticModel
from .optim import ALGORITHMS, RunConfig, RunRecord, Stepper, Termination, run
from .variational import GaussianVariational, Parametrization, from_moments, initial_state

log = logging.getLogger("steinvi")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2
IDENTITY_GATE_SE = 5.0
ZERO_VARIANCE = 1e-24

SUMMARY_COLUMNS = (
    "algorithm",
    "order",
    "stepper",
    "iterations_thousands",
    "final_averaged_elbo",
    "wall_time_s",
    "termination",
)

CHECK_LEVELS = {"quick": (10_000, 3), "full": (1_000_000, 5)}


class ConfigError(Exception):
    pass


@dataclass
class ExperimentSpec:
    dataset: dict
    grid: list[RunConfig]
    out_dir: Path
    sigma0_sq: float = 100.0
    trace_every: int = 10
    base_dir: Path = field(default_factory=Path.cwd)


# -- spec parsing -------------------------------------------------------------

_RUN_KEYS = {"max_iters", "window", "stop_tol", "alpha", "early_stop", "snngm_per_block", "seed"}


def _expand_grid(raw, defaults: dict) -> list[RunConfig]:
    if isinstance(raw, dict):
        cells = []
        for alg, order, stepper in itertools.product(
            raw.get("algorithms", sorted(ALGORITHMS)),
            raw.get("orders", [1, 2]),
            raw.get("steppers", ["adam"]),
        ):
            if stepper == "snngm" and not alg.endswith("N"):
                continue
            cells.append({"algorithm": alg, "order": order, "stepper": stepper})
    elif isinstance(raw, list):
        cells = raw
    else:
        raise ConfigError("grid must be a mapping of axes or a list of cells")
    configs = []
    for cell in cells:
        unknown = set(cell) - _RUN_KEYS - {"algorithm", "order", "stepper"}
        if unknown:
            raise ConfigError(f"unknown grid keys: {sorted(unknown)}")
        kw = {**defaults, **cell}
        try:
            configs.append(RunConfig(**kw))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad grid cell {cell}: {exc}") from None
    if not configs:
        raise ConfigError("grid is empty")
    return configs


def parse_spec(raw: dict, out_dir: Path, base_dir: Path, seed: Optional[int] = None) -> ExperimentSpec:
    if "dataset" not in raw or "grid" not in raw:
        raise ConfigError("spec needs 'dataset' and 'grid'")
    defaults = dict(raw.get("run", {}))
    unknown = set(defaults) - _RUN_KEYS
    if unknown:
        raise ConfigError(f"unknown run keys: {sorted(unknown)}")
    defaults["seed"] = seed if seed is not None else raw.get("seed", defaults.get("seed", 0))
    trace_every = int(raw.get("trace_every", 10))
    if trace_every < 1:
        raise ConfigError("trace_every must be positive")
    return ExperimentSpec(
        dataset=raw["dataset"],
        grid=_expand_grid(raw["grid"], defaults),
        out_dir=out_dir,
        sigma0_sq=float(raw.get("sigma0_sq", 100.0)),
        trace_every=trace_every,
        base_dir=base_dir,
    )


def read_spec_file(path: Path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read spec {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"spec {path} is not valid JSON: {exc}") from None


def _theta_for_synthetic(cfg: dict) -> np.ndarray:
    d = int(cfg["d"])
    if "theta_true" in cfg:
        return np.asarray(cfg["theta_true"], dtype=float)
    rng = np.random.default_rng(int(cfg.get("theta_seed", cfg.get("seed", 0))) + 1)
    return rng.normal(0.0, float(cfg.get("theta_scale", 0.5)), d)


def build_target(dataset: dict, sigma0_sq: float, base_dir: Path):
    """Return ``(model, dataset_or_None)`` for a spec's dataset section."""
    if len(dataset) != 1:
        raise ConfigError("dataset must have exactly one of: synthetic, csv, quadratic")
    (kind, cfg), = dataset.items()
    try:
        if kind == "synthetic":
            ds = synth_logistic(
                int(cfg["n"]), int(cfg["d"]), _theta_for_synthetic(cfg), int(cfg.get("seed", 0)),
                intercept=bool(cfg.get("intercept", False)),
            )
            return LogisticModel(ds.X, ds.y, sigma0_sq), ds
        if kind == "csv":
            schema = CsvSchema(
                label_column=cfg["label_column"],
                positive_label=str(cfg["positive_label"]),
                standardize=bool(cfg.get("standardize", False)),
                intercept=bool(cfg.get("intercept", False)),
                delimiter=cfg.get("delimiter", ","),
                categorical=tuple(cfg.get("categorical", ())),
                drop=tuple(cfg.get("drop", ())),
            )
            ds = load_csv(base_dir / cfg["path"], schema)
            return LogisticModel(ds.X, ds.y, sigma0_sq), ds
        if kind == "quadratic":
            return QuadraticModel(cfg["theta_hat"], cfg["P"], float(cfg.get("ell0", 0.0))), None
    except KeyError as exc:
        raise ConfigError(f"dataset.{kind} is missing {exc}") from None
    except (DimensionError, NotPositiveDefiniteError, ValueError) as exc:
        if isinstance(exc, DataLoadError):
            raise
        raise ConfigError(f"dataset.{kind}: {exc}") from None
    raise ConfigError(f"unknown dataset kind {kind!r}")


# -- run ----------------------------------------------------------------------


def cell_name(cfg: RunConfig) -> str:
    return f"{cfg.algorithm}-{int(cfg.order)}-{cfg.stepper.value}"


def _fmt(x: float) -> str:
    return repr(float(x))


def trace_rows(record: RunRecord, every: int):
    """(iteration, elbo, window average) at every ``every``-th and window-boundary iteration and the last."""
    T, w = record.iterations, record.config.window
    for t in range(1, T + 1):
        if t % every == 0 or t % w == 0 or t == T:
            avg = record.averaged_at(t) if t >= w else float("nan")
            yield t, float(record.elbo_trace[t - 1]), avg


def write_trace(record: RunRecord, path: Path, every: int) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "elbo", f"elbo_avg{record.config.window}"])
        for t, e, a in trace_rows(record, every):
            w.writerow([t, _fmt(e), _fmt(a)])


def summary_row(record: RunRecord) -> dict:
    cfg = record.config
    return {
        "algorithm": cfg.algorithm,
        "order": int(cfg.order),
        "stepper": cfg.stepper.value,
        "iterations_thousands": record.iterations / 1000,
        "final_averaged_elbo": record.final_elbo,
        "wall_time_s": record.wall_time_s,
        "termination": record.termination.value,
    }


def run_document(record: RunRecord, provenance: str, reference: dict) -> dict:
    cfg = record.config
    return {
        "cell": cell_name(cfg),
        "config": {
            "algorithm": cfg.algorithm,
            "order": int(cfg.order),
            "stepper": cfg.stepper.value,
            "max_iters": cfg.max_iters,
            "window": cfg.window,
            "stop_tol": cfg.stop_tol,
            "alpha": cfg.alpha,
            "early_stop": cfg.early_stop,
            "snngm_per_block": cfg.snngm_per_block,
            "seed": cfg.seed,
        },
        **summary_row(record),
        "iterations": record.iterations,
        "mu": record.state.mu.tolist(),
        "factor": record.state.factor.tolist(),
        "parametrization": record.state.parametrization.value,
        "dataset": provenance,
        "reference": reference,
    }


def _run_cell(model, cfg: RunConfig) -> RunRecord:
    return run(model, initial_state(model.dim, cfg.parametrization), cfg)


def reference_values(model) -> dict:
    if isinstance(model, QuadraticModel):
        return {"optimal_elbo": model.optimal_elbo()}
    fit = diag.laplace_fit(model)
    return {"laplace_log_evidence": fit.log_evidence, "laplace_gaussian_elbo": fit.elbo}


def cmd_run(spec: ExperimentSpec, workers: int = 1, keep_going: bool = False) -> int:
    model, ds = build_target(spec.dataset, spec.sigma0_sq, spec.base_dir)
    provenance = ds.provenance if ds is not None else "quadratic target"
    spec.out_dir.mkdir(parents=True, exist_ok=True)
    reference = reference_values(model)

    records: list[RunRecord] = []
    failed = False
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_cell, model, cfg) for cfg in spec.grid]
            for fut in futures:
                if failed and not keep_going:
                    fut.cancel()
                    continue
                rec = fut.result()
                records.append(rec)
                failed |= rec.termination is Termination.FACTOR_FAILURE
    else:
        for cfg in spec.grid:
            rec = _run_cell(model, cfg)
            records.append(rec)
            log.info("%s: %s after %d iterations, ELBO %.3f",
                     cfg.label, rec.termination.value, rec.iterations, rec.final_elbo)
            if rec.termination is Termination.FACTOR_FAILURE:
                failed = True
                if not keep_going:
                    break

    for rec in records:
        name = cell_name(rec.config)
        write_trace(rec, spec.out_dir / f"trace_{name}.csv", spec.trace_every)
        doc = run_document(rec, provenance, reference)
        (spec.out_dir / f"run_{name}.json").write_text(json.dumps(doc, indent=2) + "\n")

    with (spec.out_dir / "summary.csv").open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS)
        w.writeheader()
        for rec in records:
            row = summary_row(rec)
            row.update({k: _fmt(row[k]) for k in ("iterations_thousands", "final_averaged_elbo", "wall_time_s")})
            w.writerow(row)

    for rec in records:
        row = summary_row(rec)
        print(f"{rec.config.label:<16} T={row['iterations_thousands']:>7.1f}k  "
              f"L={rec.final_elbo:>12.3f}  time={rec.wall_time_s:6.1f}s  {rec.termination.value}")
    if failed:
        log.error("at least one cell ended with FACTOR_FAILURE")
        return EXIT_OK if keep_going else EXIT_FAIL
    return EXIT_OK


# -- check / variance ---------------------------------------------------------


def random_state(d: int, rng: np.random.Generator, parametrization=Parametrization.COVARIANCE) -> GaussianVariational:
    """A generic valid state: modest mean, well-conditioned random lower factor."""
    L = np.tril(rng.normal(0.0, 0.2, (d, d)), -1) + np.diag(rng.uniform(0.3, 0.8, d))
    return GaussianVariational(rng.normal(0.0, 0.5, d), L, parametrization)


def random_quadratic(d: int, rng: np.random.Generator) -> QuadraticModel:
    B = rng.normal(0.0, 1.0, (d, d))
    return QuadraticModel(rng.normal(0.0, 1.0, d), B @ B.T / d + np.eye(d), float(rng.normal()))


def check_problem(d: int, seed: int) -> tuple[LogisticModel, GaussianVariational]:
    """Logistic model on 50 synthetic rows plus a random state, as used by ``check``."""
    rng = np.random.default_rng(seed)
    ds = synth_logistic(50, d, rng.normal(0.0, 1.0, d), seed, intercept=True)
    return LogisticModel(ds.X, ds.y, 10.0), random_state(d, rng)


def variance_reports(model: QuadraticModel, at: str, n_samples: int, seed: int) -> dict[str, list]:
    if at == "optimum":
        mu = model.theta_hat
    elif at == "offset":
        mu = model.theta_hat + 0.1
    else:
        raise ConfigError(f"unknown state {at!r}; use optimum or offset")
    out = {}
    for par in Parametrization:
        state = from_moments(mu, model.posterior_cov, par)
        out[par.value] = diag.compare_variance(state, model, n_samples, seed)
    return out


def cmd_check(level: str, seed: int, out: Optional[Path] = None) -> int:
    n, d = CHECK_LEVELS[level]
    model, state = check_problem(d, seed)
    results: list[dict] = []
    ok = True
    for which in diag.Identity:
        rep = diag.check_identity(which, state, model, n, seed)
        passed = rep.passed(IDENTITY_GATE_SE)
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'}  {which.value:<13} max gap {rep.max_gap_in_se:6.2f} se  (n={n}, d={d})")
        if not passed:
            print(json.dumps(rep.to_dict()), file=sys.stderr)
        results.append({**rep.to_dict(), "passed": passed})

    quad = random_quadratic(d, np.random.default_rng(seed))
    n_var = min(n, 10_000)
    for at in ("optimum", "offset"):
        for par, reps in variance_reports(quad, at, n_var, seed).items():
            first, second = reps
            gates = [second.max_entry_variance <= ZERO_VARIANCE]
            if at == "offset":
                gates.append(first.max_entry_variance > 0)
            passed = all(gates)
            ok &= passed
            print(f"{'PASS' if passed else 'FAIL'}  variance {at:<8} {par:<10} "
                  f"{first.estimator} {first.max_entry_variance:.3e}  {second.estimator} {second.max_entry_variance:.3e}")
            results.append({"variance": at, "parametrization": par, "passed": passed,
                            "reports": [r.to_dict() for r in reps]})
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / f"check_{level}.json").write_text(json.dumps({"level": level, "seed": seed, "results": results}, indent=2) + "\n")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_variance(model: QuadraticModel, at: str, n_samples: int, seed: int, out: Optional[Path] = None) -> int:
    reports = variance_reports(model, at, n_samples, seed)
    doc = {
        "at": at,
        "n_samples": n_samples,
        "seed": seed,
        "reports": {par: [r.to_dict() for r in reps] for par, reps in reports.items()},
    }
    text = json.dumps(doc, indent=2) + "\n"
    if out is None:
        sys.stdout.write(text)
    else:
        out.mkdir(parents=True, exist_ok=True)
        (out / f"variance_{at}.json").write_text(text)
        for par, reps in reports.items():
            for r in reps:
                print(f"{par:<10} {r.estimator}  max entry variance {r.max_entry_variance:.3e}")
    return EXIT_OK


def cmd_datagen(n: int, d: int, seed: int, out: Path, intercept: bool, theta_scale: float) -> int:
    theta = _theta_for_synthetic({"d": d, "seed": seed, "theta_scale": theta_scale})
    ds = synth_logistic(n, d, theta, seed, intercept=intercept)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(ds, out)
    print(f"wrote {n} rows x {d} features to {out}")
    return EXIT_OK


# -- entry point --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="steinvi", description="Gaussian stochastic variational inference with first- and second-order Cholesky updates.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an algorithm x order x stepper grid")
    r.add_argument("--spec", type=Path, required=True)
    r.add_argument("--out", type=Path, required=True)
    r.add_argument("--seed", type=int, default=None, help="override the spec's seed")
    r.add_argument("--workers", type=int, default=1)
    r.add_argument("--keep-going", action="store_true")

    c = sub.add_parser("check", help="Monte Carlo identity and variance gates")
    lvl = c.add_mutually_exclusive_group()
    lvl.add_argument("--quick", dest="level", action="store_const", const="quick")
    lvl.add_argument("--full", dest="level", action="store_const", const="full")
    c.set_defaults(level="quick")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out", type=Path, default=None)

    v = sub.add_parser("variance", help="first- vs second-order estimator variances on a quadratic target")
    v.add_argument("--spec", type=Path, default=None, help="spec with a quadratic dataset; random d=4 target if omitted")
    v.add_argument("--at", choices=["optimum", "offset"], default="optimum")
    v.add_argument("--n-samples", type=int, default=10_000)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--out", type=Path, default=None)

    g = sub.add_parser("datagen", help="write a synthetic logistic-regression CSV")
    g.add_argument("--n", type=int, default=500)
    g.add_argument("--d", type=int, default=20)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--intercept", action="store_true")
    g.add_argument("--theta-scale", type=float, default=0.5)
    g.add_argument("--out", type=Path, required=True)
    return p


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "run":
            raw = read_spec_file(args.spec)
            spec = parse_spec(raw, args.out, args.spec.parent, args.seed)
            return cmd_run(spec, workers=args.workers, keep_going=args.keep_going)
        if args.command == "check":
            return cmd_check(args.level, args.seed, args.out)
        if args.command == "variance":
            if args.spec is None:
                model = random_quadratic(4, np.random.default_rng(args.seed))
            else:
                raw = read_spec_file(args.spec)
                model, _ = build_target(raw.get("dataset", {}), 1.0, args.spec.parent)
                if not isinstance(model, QuadraticModel):
                    raise ConfigError("variance needs a quadratic dataset")
            return cmd_variance(model, args.at, args.n_samples, args.seed, args.out)
        if args.command == "datagen":
            return cmd_datagen(args.n, args.d, args.seed, args.out, args.intercept, args.theta_scale)
    except (ConfigError, DataLoadError, OSError) as exc:
        print(f"steinvi: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
