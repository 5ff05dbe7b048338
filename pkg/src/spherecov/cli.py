"""Command line driver: ``spherecov {simulate,fit,cv,eval}``.

Options may also come from a JSON file given with ``--config``; explicit
flags take precedence. Exit codes: 0 success, 2 configuration error,
3 numerical failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__
from .estimators import (
    ConvergenceError,
    SecondMomentEstimate,
    SolverConfig,
    fit_lag_autocov,
    fit_mean,
    fit_second_moment,
    load_estimate,
)
from .fields import Dataset, SourceModel, default_source_model, simulate_dataset, simulate_far1
from .gram import DEFAULT_THRESHOLD, KhatriRaoOperator, build_J, nnz_fraction, system_dimensions
from .kernels import matern_zonal
from .model_selection import CVConfig, kfold_cv_second_moment
from .postprocess import GridField, eval_on_grid, l2_error, project_psd, save_grid_field
from .sphere import fibonacci_grid

log = logging.getLogger("spherecov")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


class OutputSet:
    """Tracks written files so a failed command leaves nothing behind."""

    def __init__(self):
        self.paths = []

    def add(self, *paths):
        self.paths.extend(Path(p) for p in paths)
        return paths[0] if len(paths) == 1 else paths

    def rollback(self):
        for p in self.paths:
            try:
                p.unlink()
            except FileNotFoundError:
                pass


@contextmanager
def _thread_limit(threads):
    if threads:
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=threads):
            yield
    else:
        yield


def _parse_grid(text) -> tuple:
    """``"1:6:11"`` (linspace), ``"log:0.01:10:9"`` or ``"1,2,3"``."""
    if isinstance(text, (list, tuple)):
        return tuple(float(x) for x in text)
    text = str(text)
    if text.startswith("log:"):
        lo, hi, num = text[4:].split(":")
        return tuple(np.geomspace(float(lo), float(hi), int(num)))
    if ":" in text:
        lo, hi, num = text.split(":")
        return tuple(np.linspace(float(lo), float(hi), int(num)))
    return tuple(float(x) for x in text.split(","))


def _kernel(args):
    return matern_zonal(args.nu, args.eps)


def _require_file(path, what):
    if path is None or not Path(path).exists():
        raise FileNotFoundError(f"{what} file not found: {path}")


def _write_json(out: OutputSet, path, payload):
    path = Path(path)
    out.add(path)
    path.write_text(json.dumps(payload, indent=2, default=float))


def cmd_simulate(args, out: OutputSet) -> dict:
    if args.n < 1 or args.r < 1:
        raise ConfigError("--n and --r must be positive")
    if args.sigma < 0:
        raise ConfigError("--sigma must be >= 0")
    if args.far1 is not None and not -1 < args.far1 < 1:
        raise ConfigError("--far1 coefficient must lie in (-1, 1)")
    if args.model:
        _require_file(args.model, "model")
        model = SourceModel.load(args.model)
    else:
        model = default_source_model(Q=args.Q, nu=args.nu, eps=args.eps, seed=args.model_seed)
    if args.far1 is None:
        data = simulate_dataset(model, args.n, args.r, args.sigma, args.seed)
    else:
        data = simulate_far1(model, args.n, args.r, args.sigma, args.far1, args.seed)
    csv_path = Path(args.out)
    meta_path = csv_path.with_suffix(".json")
    out.add(csv_path, meta_path)
    data.save(csv_path, meta_path)
    model_path = Path(args.model_out) if args.model_out else csv_path.with_name(csv_path.stem + "_model.json")
    out.add(model_path)
    model.save(model_path)
    return {"dataset": str(csv_path), "metadata": str(meta_path), "model": str(model_path),
            "n_samples": data.n_samples, "time_ordered": data.time_ordered}


def _load_dataset(path) -> Dataset:
    _require_file(path, "dataset")
    return Dataset.load(path)


def cmd_fit(args, out: OutputSet) -> dict:
    if args.eta <= 0:
        raise ConfigError("--eta must be positive")
    data = _load_dataset(args.data)
    kernel = _kernel(args)
    solver = SolverConfig(tol=args.tol, max_iter=args.max_iter)
    prefix = Path(args.out)
    report = {"eta": args.eta, "lag": args.lag, "kernel": kernel.to_dict(), "n": data.n,
              "r_list": sorted(set(data.r_list))}

    r = data.constant_r
    if r is not None:
        J = build_J(data.locations, kernel, args.threshold)
        op = KhatriRaoOperator(J, r, lag=abs(args.lag))
        report.update(j_nnz_fraction=nnz_fraction(J), khatri_rao_nnz=op.nnz(),
                      dimensions=system_dimensions(data.n, r))

    t0 = time.perf_counter()
    if args.lag:
        est = fit_lag_autocov(data, kernel, args.eta, args.lag, solver, args.threshold)
    else:
        est = fit_second_moment(data, kernel, args.eta, solver, args.threshold)
    report["fit_seconds"] = time.perf_counter() - t0
    report.update({k: v for k, v in est.info.items() if k in ("iterations", "residual", "ridge", "method", "L")})

    p = kernel.meta["p"]
    mean_eta = args.mean_eta if args.mean_eta else float(data.n_samples) ** (-p / (p + 1.0))
    t0 = time.perf_counter()
    mean = fit_mean(data, kernel, mean_eta)
    report["mean_eta"] = mean_eta
    report["mean_fit_seconds"] = time.perf_counter() - t0

    r_path = prefix.with_name(prefix.name + "_R")
    m_path = prefix.with_name(prefix.name + "_mean")
    out.add(r_path.with_suffix(".json"), r_path.with_suffix(".csv"), m_path.with_suffix(".json"),
            m_path.with_suffix(".csv"))
    est.save(r_path)
    mean.save(m_path)
    _write_json(out, prefix.with_name(prefix.name + "_report.json"), report)
    return report


def cmd_cv(args, out: OutputSet) -> dict:
    if args.folds < 2:
        raise ConfigError("--folds must be at least 2")
    grid = _parse_grid(args.eta_grid)
    try:
        cfg = CVConfig(k_folds=args.folds, eta_grid=grid, shuffle_seed=args.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    data = _load_dataset(args.data)
    if data.constant_r is None:
        raise ConfigError("cross-validation needs a constant number of samples per replicate")
    if args.folds > data.n * data.constant_r * (data.constant_r - 1):
        raise ConfigError("more folds than pair products")
    solver = SolverConfig(tol=args.tol, max_iter=args.max_iter)
    report = kfold_cv_second_moment(data, _kernel(args), cfg, solver, args.threshold)
    prefix = Path(args.out)
    json_path = prefix.with_name(prefix.name + "_cv.json")
    csv_path = prefix.with_name(prefix.name + "_cv.csv")
    out.add(json_path, csv_path)
    report.save(json_path, csv_path)
    summary = report.to_dict()
    summary["interior_minimum"] = report.interior
    return summary


def cmd_eval(args, out: OutputSet) -> dict:
    if args.grid_size < 2:
        raise ConfigError("--grid-size must be at least 2")
    _require_file(Path(args.estimate).with_suffix(".json"), "estimate")
    est = load_estimate(args.estimate)
    mean = None
    if args.mean:
        _require_file(Path(args.mean).with_suffix(".json"), "mean estimate")
        mean = load_estimate(args.mean)
    model = None
    if args.truth:
        _require_file(args.truth, "truth model")
        model = SourceModel.load(args.truth)

    grid = fibonacci_grid(args.grid_size)
    field = eval_on_grid(est, grid)
    report = {"grid_size": args.grid_size}
    if mean is not None and isinstance(est, SecondMomentEstimate):
        mu = eval_on_grid(mean, grid).values
        field = GridField(grid, field.values - np.outer(mu, mu), symmetric=field.symmetric)
        report["covariance"] = True
    if args.project_psd:
        if not field.bivariate:
            raise ConfigError("--project-psd needs a bivariate estimate")
        proj = project_psd(field)
        field = proj.field
        report.update(clipped_mass=proj.clipped_mass, n_clipped=proj.n_clipped,
                      min_eigenvalue=proj.min_eigenvalue)
    if model is not None:
        from .fields import true_second_moment

        if field.bivariate:
            truth = GridField(grid, true_second_moment(model, grid.nodes, grid.nodes))
        else:
            truth = GridField(grid, np.zeros(len(grid)))
        report["l2_error"] = l2_error(field, truth)
    prefix = Path(args.out)
    nodes_path = prefix.with_name(prefix.name + "_nodes.csv")
    values_path = prefix.with_name(prefix.name + "_values.csv")
    out.add(nodes_path, values_path)
    save_grid_field(field, prefix)
    _write_json(out, prefix.with_name(prefix.name + "_eval.json"), report)
    return report


def _add_kernel_args(p):
    p.add_argument("--nu", type=float, default=2.5, help="Matérn smoothness (0.5, 1.5 or 2.5)")
    p.add_argument("--eps", type=float, default=0.4, help="Matérn scale")


def _add_solver_args(p):
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--max-iter", type=int, default=None)
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD,
                   help="drop kernel entries below this fraction of psi(1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spherecov", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--config", help="JSON file of default option values")
    parser.add_argument("--threads", type=int, default=None, help="cap BLAS worker threads")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a sparse noisy dataset")
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--r", type=int, default=12)
    p.add_argument("--sigma", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--Q", type=int, default=5, help="number of sources")
    p.add_argument("--model-seed", type=int, default=0, help="seed for source locations")
    p.add_argument("--model", help="source model JSON to use instead of the default")
    p.add_argument("--model-out", help="where to write the source model JSON")
    p.add_argument("--far1", type=float, default=None, metavar="A",
                   help="simulate a stationary functional AR(1) with coefficient A")
    p.add_argument("--out", default="dataset.csv")
    _add_kernel_args(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit mean and second-moment estimates")
    p.add_argument("--data", required=False)
    p.add_argument("--eta", type=float, default=2.363)
    p.add_argument("--mean-eta", type=float, default=None)
    p.add_argument("--lag", type=int, default=0)
    p.add_argument("--out", default="fit")
    _add_kernel_args(p)
    _add_solver_args(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("cv", help="k-fold cross-validation of the penalty")
    p.add_argument("--data", required=False)
    p.add_argument("--eta-grid", default="1:6:11", help='"lo:hi:num", "log:lo:hi:num" or "a,b,c"')
    p.add_argument("--folds", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="cv")
    _add_kernel_args(p)
    _add_solver_args(p)
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("eval", help="evaluate an estimate on a Fibonacci grid")
    p.add_argument("--estimate", required=False, help="estimate path prefix (e.g. fit_R)")
    p.add_argument("--mean", help="mean estimate prefix; subtracts mu x mu")
    p.add_argument("--truth", help="source model JSON for an L2 error")
    p.add_argument("--grid-size", type=int, default=400)
    p.add_argument("--project-psd", action="store_true")
    p.add_argument("--out", default="grid")
    p.set_defaults(func=cmd_eval)
    return parser


def _apply_config(parser, argv):
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return parser.parse_args(argv)
    _require_file(known.config, "config")
    cfg = json.loads(Path(known.config).read_text())
    args = parser.parse_args(argv)
    explicit = {a.lstrip("-").split("=")[0].replace("-", "_") for a in argv if a.startswith("--")}
    for key, value in cfg.items():
        key = key.replace("-", "_")
        if key not in explicit and hasattr(args, key):
            setattr(args, key, value)
    return args


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    except (FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    for name in ("data", "estimate"):
        if hasattr(args, name) and getattr(args, name) is None:
            print(f"error: --{name} is required", file=sys.stderr)
            return EXIT_CONFIG

    out = OutputSet()
    try:
        with _thread_limit(args.threads):
            summary = args.func(args, out)
    except ConfigError as exc:
        out.rollback()
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConvergenceError, np.linalg.LinAlgError) as exc:
        out.rollback()
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FileNotFoundError, PermissionError, IsADirectoryError, OSError) as exc:
        out.rollback()
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        out.rollback()
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(json.dumps(summary, indent=2, default=float))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
