"""Command-line interface.

Exit codes: 0 success, 1 invalid input or configuration, 2 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import harness, model_check, vem
from .cov_estimator import estimate_cov
from .errors import ConfigError, is_numeric_failure
from .granger import practical_granger_sample
from .report import _jsonable
from .var_core import GmmNoiseModel, params_from_json, params_to_json, sample_stable_var, simulate

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text if text.endswith("\n") else text + "\n")
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _dump(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2)


def cmd_simulate(args) -> int:
    cfg = _load_config(args.config)
    noise = None
    if cfg:
        params, noise = params_from_json(json.dumps(cfg))
    else:
        params = sample_stable_var(args.k_x, args.k_z, d_zero=args.d_zero, seed=args.seed)
    if args.noise == "super-gaussian" and noise is None:
        noise = GmmNoiseModel.super_gaussian(params.K)
    sample = simulate(params, args.length, noise=noise, seed=args.seed)
    if args.observed_only:
        sample = sample.observed(params.k_x)
    _emit(sample.to_csv(), args.out)
    if args.params_out:
        Path(args.params_out).write_text(params_to_json(params, noise) + "\n")
    return EXIT_OK


def cmd_granger(args) -> int:
    x = harness.ingest_csv(args.input, center=args.center)
    est = practical_granger_sample(x, args.method)
    _emit(_dump({"method": "granger", "B": est.B_pG, "source": est.source, "cond": est.cond}), args.out)
    return EXIT_OK


def cmd_estimate_cov(args) -> int:
    x = harness.ingest_csv(args.input, center=args.center)
    rep = estimate_cov(x, k_z=args.k_z, solvent_tol=args.solvent_tol, seed=args.seed)
    _emit(rep.to_json(), args.out)
    return EXIT_OK


def cmd_estimate_vem(args) -> int:
    cfg = _load_config(args.config)
    x = harness.ingest_csv(args.input, center=args.center)
    opts = dict(
        k_z=args.k_z,
        n_components=args.components,
        max_iters=args.max_iters,
        tol=args.tol,
        restarts=args.restarts,
        seed=args.seed,
        fit_means=args.fit_means,
    )
    opts.update(cfg)
    if args.verbose:
        logging.basicConfig(level=logging.INFO, stream=sys.stderr, format="%(message)s")
    fit = vem.fit(x, vem.VemConfig(**opts), progress=args.verbose)
    _emit(fit.report.to_json(), args.out)
    return EXIT_OK


def cmd_check(args) -> int:
    x = harness.ingest_csv(args.input, center=True)
    rep = model_check.check_model(x, k_z=args.k_z, J=args.lags, alpha=args.alpha, strict=args.strict, seed=args.seed)
    print(rep.table())
    if args.out:
        Path(args.out).write_text(_dump(rep) + "\n")
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = _load_config(args.config)
    if cfg:
        cfg.setdefault("seed", args.seed)
        config = harness.ExperimentConfig.from_dict(cfg)
    else:
        lengths = tuple(int(float(s)) for s in args.lengths.split(",")) if args.lengths else None
        config = harness.ExperimentConfig.for_scenario(
            args.scenario, full=args.full, runs=args.runs, lengths=lengths, seed=args.seed
        )

    def progress(L, run, method):
        if args.verbose:
            print(f"L={L} run={run} {method}", file=sys.stderr)

    result = harness.run_experiment(config, progress=progress)
    out = args.out or config.output
    if out:
        csv_path, summary_path = result.write(out)
        print(f"wrote {csv_path} and {summary_path}", file=sys.stderr)
    else:
        sys.stdout.write(result.csv_text())
    per_length = result.summary["per_length"]
    for L, entry in per_length.items():
        parts = [f"{m}={v['rmse']:.4g}" if v["rmse"] is not None else f"{m}=n/a" for m, v in entry.items()]
        print(f"L={L}: RMSE " + " ".join(parts), file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hidvar", description="Structural VAR estimation with hidden confounders.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, needs_input=True):
        sp.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
        sp.add_argument("--out", help="output path (default: standard output)")
        sp.add_argument("--config", help="JSON config file")
        if needs_input:
            sp.add_argument("--input", "-i", required=True, help="CSV file with a header row")
            sp.add_argument("--center", action="store_true", help="subtract channel means first")

    sp = sub.add_parser("simulate", help="draw a sample from a random or given system")
    common(sp, needs_input=False)
    sp.add_argument("--length", "-L", type=int, default=1000)
    sp.add_argument("--k-x", type=int, default=1)
    sp.add_argument("--k-z", type=int, default=1)
    sp.add_argument("--d-zero", action="store_true")
    sp.add_argument("--noise", choices=("gaussian", "super-gaussian"), default="gaussian")
    sp.add_argument("--observed-only", action="store_true", help="write only the X channels")
    sp.add_argument("--params-out", help="also write the system parameters as JSON")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("granger", help="practical Granger estimate of B")
    common(sp)
    sp.add_argument("--method", choices=("yule-walker", "ls"), default="yule-walker")
    sp.set_defaults(func=cmd_granger)

    sp = sub.add_parser("estimate-cov", help="candidate set for B from autocovariances")
    common(sp)
    sp.add_argument("--k-z", type=int, default=None, help="hidden dimension if smaller than K_X")
    sp.add_argument("--solvent-tol", type=float, default=None)
    sp.set_defaults(func=cmd_estimate_cov)

    sp = sub.add_parser("estimate-vem", help="variational EM estimate of B and C")
    common(sp)
    sp.add_argument("--k-z", type=int, default=1)
    sp.add_argument("--components", type=int, default=2)
    sp.add_argument("--restarts", type=int, default=5)
    sp.add_argument("--max-iters", type=int, default=500)
    sp.add_argument("--tol", type=float, default=1e-6)
    sp.add_argument("--fit-means", action="store_true")
    sp.add_argument("--verbose", "-v", action="store_true", help="log the bound per iteration to stderr")
    sp.set_defaults(func=cmd_estimate_vem)

    sp = sub.add_parser("check", help="model check: residual independence and non-Gaussianity")
    common(sp)
    sp.add_argument("--k-z", type=int, default=None)
    sp.add_argument("--lags", "-J", type=int, default=2)
    sp.add_argument("--alpha", type=float, default=0.05)
    sp.add_argument("--strict", action="store_true", help="bootstrap KS p-values")
    sp.set_defaults(func=cmd_check)

    sp = sub.add_parser("bench", help="run a synthetic experiment sweep")
    common(sp, needs_input=False)
    sp.add_argument("--scenario", choices=("fig1", "fig2", "custom"), default="fig1")
    sp.add_argument("--runs", type=int, default=None)
    sp.add_argument("--lengths", help="comma-separated sample lengths")
    sp.add_argument("--full", action="store_true", help="fig1: add L = 1e6 and 1e7")
    sp.add_argument("--verbose", "-v", action="store_true")
    sp.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:
        numeric = is_numeric_failure(exc)
        if not numeric and not isinstance(exc, (ValueError, OSError, KeyError, TypeError)):
            raise
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC if numeric else EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
