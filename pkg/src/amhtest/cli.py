"""Command-line entry point: ``amhtest {fit,test,dimension,simulate,power-curve}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, Optional, Sequence, TextIO

from . import io as aio
from .dimension import RidgeConfig, default_ridges
from .errors import HybridTestError
from .hybrid import HybridConfig, hybrid_test_details
from .kernel_stats import KernelConfig, WeightConfig
from .model import FitOptions, available_models, fit_least_squares, get_model
from .simulation import StudySpec, default_threads, run_study

logger = logging.getLogger("amhtest")

DEFAULT_C = WeightConfig().c
DEFAULT_CH = KernelConfig().c_h
DEFAULT_TAU = 0.5
DEFAULT_REPS = 500
FULL_REPS = 1000


class _Formatter(argparse.ArgumentDefaultsHelpFormatter, argparse.RawDescriptionHelpFormatter):
    pass


def _positive(kind):
    def parse(text):
        value = kind(text)
        if not value > 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return value

    return parse


def _level(text):
    value = float(text)
    if not 0 < value < 1:
        raise argparse.ArgumentTypeError("level must lie in (0, 1)")
    return value


def _tau(text):
    value = float(text)
    if not 0 < value < 1:
        raise argparse.ArgumentTypeError("tau must lie in (0, 1)")
    return value


def _grid(kind):
    def parse(text):
        try:
            return [kind(v) for v in text.split(",") if v.strip()]
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from None

    return parse


def _add_tuning(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("tuning")
    g.add_argument("--c", type=_positive(float), default=DEFAULT_C, help="weight constant in w(x) = c*exp(-||x||)")
    g.add_argument("--ch", type=_positive(float), default=DEFAULT_CH, help="bandwidth multiplier: h = ch * n^(-1/(p+4))")
    g.add_argument("--h", type=_positive(float), default=None, help="fixed bandwidth (overrides --ch)")
    g.add_argument(
        "--c1n", type=_positive(float), default=None,
        help="first ridge; default 3e-4*sqrt(8)*log(n)/sqrt(n)",
    )
    g.add_argument(
        "--c2n", type=_positive(float), default=None,
        help="second ridge; default 0.8*sqrt(8)*log(n)/sqrt(n)",
    )
    g.add_argument("--tau", type=_tau, default=DEFAULT_TAU, help="ratio threshold")
    g.add_argument("--no-standardize", action="store_true", help="use raw covariates in weight, kernel, and target matrix")


def _add_data(p: argparse.ArgumentParser, model_required: bool = True) -> None:
    p.add_argument("--data", required=True, help="CSV file with a header row")
    p.add_argument("--response", default="y", help="response column name")
    p.add_argument("--delimiter", default=",", help="CSV delimiter")
    p.add_argument(
        "--model", required=model_required,
        help="model family: " + ", ".join(available_models()),
    )
    p.add_argument("--recipe", default="", help='derived covariates appended before fitting, e.g. "square(5),product(5,6)"')
    p.add_argument("--seed", type=int, default=0, help="seed for multi-start fitting")
    p.add_argument("--out", default=None, help="write output here instead of stdout")


def _add_sim(p: argparse.ArgumentParser) -> None:
    p.add_argument("--study", type=int, choices=(1, 2, 3, 4), required=True)
    p.add_argument("--p", type=_grid(int), default=None, help="covariate dimension(s), comma separated; default 2 (8 for Studies 3-4)")
    p.add_argument("--n", type=_grid(int), default=[200], help="sample size(s), comma separated")
    p.add_argument("--a", type=_grid(float), default=[0.0, 0.2, 0.4, 0.6, 0.8, 1.0], help="departure magnitudes, comma separated")
    p.add_argument("--cov", choices=("identity", "ar"), default="identity", help="covariate covariance; ar is 0.5^|i-j|")
    p.add_argument("--reps", type=_positive(int), default=None, help=f"replications per design (default {DEFAULT_REPS}, or {FULL_REPS} with --full)")
    p.add_argument("--full", action="store_true", help=f"use {FULL_REPS} replications")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--level", type=_level, default=0.05, help="significance level")
    p.add_argument("--threads", type=_positive(int), default=default_threads(), help="worker processes; 1 is the serial reference path")
    p.add_argument("--out", default=None, help="CSV output path")
    _add_tuning(p)


def build_parser() -> argparse.ArgumentParser:
    ridges = default_ridges(200)
    parser = argparse.ArgumentParser(
        prog="amhtest",
        description="Adaptive-to-model hybrid specification test for parametric regressions.",
        epilog=(
            f"Defaults: c={DEFAULT_C}, ch={DEFAULT_CH}, tau={DEFAULT_TAU}; ridges "
            "c1n=3e-4*sqrt(8)*log(n)/sqrt(n), c2n=0.8*sqrt(8)*log(n)/sqrt(n) "
            f"(n=200: c1n={ridges.c1n:.4g}, c2n={ridges.c2n:.4g})."
        ),
        formatter_class=_Formatter,
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("fit", help="least-squares fit; prints JSON", formatter_class=_Formatter)
    _add_data(p)

    p = sub.add_parser("test", help="run the hybrid test; prints JSON", formatter_class=_Formatter)
    _add_data(p)
    _add_tuning(p)

    p = sub.add_parser("dimension", help="estimate the indicative dimension; prints JSON", formatter_class=_Formatter)
    _add_data(p)
    _add_tuning(p)

    p = sub.add_parser("simulate", help="Monte Carlo size/power table (CSV plus JSON sidecar)", formatter_class=_Formatter)
    _add_sim(p)
    p.add_argument("--sidecar", default=None, help="JSON sidecar path; default is --out with a .json suffix")

    p = sub.add_parser("power-curve", help="rejection rate against a, per test (CSV)", formatter_class=_Formatter)
    _add_sim(p)
    return parser


@contextmanager
def _output(path: Optional[str]) -> Iterator[TextIO]:
    if path is None:
        yield sys.stdout
    else:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            yield fh


def _load(args):
    data = aio.load_csv(args.data, aio.CsvSchema(response=args.response, delimiter=args.delimiter))
    if args.recipe:
        data = aio.feature_expand(data, aio.parse_recipe(args.recipe))
    return data, get_model(args.model, data.p)


def _config(args, n: Optional[int] = None) -> HybridConfig:
    ridges = None
    if args.c1n is not None or args.c2n is not None or args.tau != DEFAULT_TAU:
        if n is None:
            raise ValueError("ridge overrides need a sample size")
        base = default_ridges(n)
        ridges = RidgeConfig(
            c1n=args.c1n if args.c1n is not None else base.c1n,
            c2n=args.c2n if args.c2n is not None else base.c2n,
            tau=args.tau,
        )
    return HybridConfig(
        weight=WeightConfig(args.c),
        kernel=KernelConfig(h=args.h, c_h=args.ch),
        ridges=ridges,
        fit=FitOptions(seed=getattr(args, "seed", 0)),
        standardize=not args.no_standardize,
    )


def _write_json(payload: dict, path: Optional[str]) -> None:
    with _output(path) as fh:
        fh.write(json.dumps(payload, indent=2, sort_keys=True))
        fh.write("\n")


def _cmd_fit(args) -> int:
    data, model = _load(args)
    fit = fit_least_squares(data, model, options=FitOptions(seed=args.seed))
    payload = fit.to_dict()
    payload.update(model=model.name, n=data.n, p=data.p, columns=list(data.names))
    _write_json(payload, args.out)
    return 0


def _cmd_test(args) -> int:
    data, model = _load(args)
    det = hybrid_test_details(data, model, _config(args, data.n))
    with _output(args.out) as fh:
        fh.write(aio.outcome_to_json(det.outcome))
        fh.write("\n")
    return 0


def _cmd_dimension(args) -> int:
    data, model = _load(args)
    cfg = _config(args, data.n)
    det = hybrid_test_details(data, model, cfg)
    payload = det.dimension.to_dict()
    payload.update(model=model.name, n=data.n, p=data.p)
    _write_json(payload, args.out)
    return 0


def _simulate(args):
    ps = args.p or ([8] if args.study in (3, 4) else [2])
    cov = "ar_half" if args.cov == "ar" else "identity"
    reps = args.reps or (FULL_REPS if args.full else DEFAULT_REPS)
    grid = [StudySpec(args.study, n=n, p=p, a=a, covariance=cov) for p in ps for n in args.n for a in args.a]
    partial = (args.c1n is None) != (args.c2n is None) or (args.c1n is None and args.tau != DEFAULT_TAU)
    if partial and len(set(args.n)) > 1:
        raise ValueError("with several sample sizes, override both --c1n and --c2n or neither")
    cfg = _config(args, args.n[0])
    return run_study(grid, replications=reps, level=args.level, seed=args.seed, config=cfg, threads=args.threads)


def _cmd_simulate(args) -> int:
    table = _simulate(args)
    with _output(args.out) as fh:
        aio.write_power_table(table, fh)
    sidecar = args.sidecar or (str(Path(args.out).with_suffix(".json")) if args.out else None)
    if sidecar:
        _write_json(aio.power_table_sidecar(table), sidecar)
    return 0


def _cmd_power_curve(args) -> int:
    table = _simulate(args)
    with _output(args.out) as fh:
        aio.write_power_curve(table, fh)
    return 0


_COMMANDS = {
    "fit": _cmd_fit,
    "test": _cmd_test,
    "dimension": _cmd_dimension,
    "simulate": _cmd_simulate,
    "power-curve": _cmd_power_curve,
}


def dispatch(argv: Optional[Sequence[str]] = None) -> int:
    """Run one command and return its exit status (0 ok, 1 pipeline error, 2 usage error)."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return _COMMANDS[args.command](args)
    except HybridTestError as exc:
        body = exc.to_dict()
    except (KeyError, ValueError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else str(exc)
        body = {"error": type(exc).__name__, "message": str(msg)}
    sys.stdout.write(json.dumps(body) + "\n")
    return 1


def main() -> None:  # pragma: no cover - console script
    sys.exit(dispatch())
