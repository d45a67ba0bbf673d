"""Command line interface.

::

    tsclogit estimate --input subjects.csv [--config param.ini] [--no-augment]
                      [--pz-constant P] [--output report.json]
    tsclogit simulate --config scenarios.ini [--seed S] [--threads N]
                      [--replications R] [--output report.csv]
    tsclogit limits   [--config limits.ini] [--rho ...] [--delta0 ...]
                      [--beta0 ...] [--missing] [--gh-nodes K] [--output curves.csv]

Exit status: 0 on success, 2 for schema/config errors, 3 for numerical
failures.
"""

import argparse
import configparser
import contextlib
import sys
from dataclasses import replace

import numpy as np

from . import asymptotics, dataio, simulation
from .errors import NumericalError, SchemaError
from .estimator import EstimateOptions, estimate

__all__ = ["main", "build_parser", "parse_grid"]

EXIT_OK, EXIT_SCHEMA, EXIT_NUMERIC = 0, 2, 3


def parse_grid(text):
    """``"a:b:step"`` (inclusive) or a comma/space separated list."""
    text = text.strip()
    try:
        if ":" in text:
            lo, hi, step = (float(t) for t in text.split(":"))
            if step <= 0 or hi < lo:
                raise ValueError
            k = int(round((hi - lo) / step))
            return tuple(float(np.round(lo + i * step, 10)) for i in range(k + 1))
        return tuple(float(t) for t in text.replace(",", " ").split())
    except ValueError:
        raise SchemaError(f"invalid grid {text!r}") from None


@contextlib.contextmanager
def _open_out(path):
    if path is None or path == "-":
        yield sys.stdout
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            yield fh


def _cmd_estimate(args):
    data = dataio.read_subjects(args.input, pz_constant=args.pz_constant)
    param = dataio.load_parametrization(args.config, data.schema)
    est = estimate(data, param, EstimateOptions(augment=not args.no_augment))
    with _open_out(args.output) as fh:
        dataio.write_report(est, fh)


def _cmd_simulate(args):
    scenarios = simulation.load_scenarios(args.config)
    with _open_out(args.output) as fh:
        for sc in scenarios:
            if args.seed is not None:
                sc = replace(sc, seed=args.seed)
            if args.replications is not None:
                sc = replace(sc, replications=args.replications)
            simulation.run_study(sc, workers=args.threads).to_csv(fh)


def _limits_settings(args):
    cfg = {}
    if args.config:
        cp = configparser.ConfigParser()
        try:
            with open(args.config, encoding="utf-8") as fh:
                cp.read_string(fh.read())
        except configparser.Error as exc:
            raise SchemaError(f"invalid config: {exc}") from None
        if cp.has_section("limits"):
            cfg = dict(cp["limits"])
        extra = set(cfg) - {"rho", "delta0", "beta0", "missing", "estimators", "gh_nodes"}
        if extra:
            raise SchemaError(f"[limits]: unknown keys {sorted(extra)}")
    pick = lambda flag, key, default: flag if flag is not None else cfg.get(key, default)
    missing = args.missing or cfg.get("missing", "false").strip().lower() in ("1", "true", "yes", "on")
    est = tuple(t.strip() for t in pick(args.estimators, "estimators", "null, cov, itt, tr").split(",") if t.strip())
    bad = set(est) - set(simulation.VARIANTS)
    if bad:
        raise SchemaError(f"unknown estimators {sorted(bad)}")
    try:
        nodes = int(pick(args.gh_nodes, "gh_nodes", asymptotics.NODES))
    except ValueError:
        raise SchemaError("gh_nodes must be an integer") from None
    if not 8 <= nodes <= 400:
        raise SchemaError("gh_nodes must lie in [8, 400]")
    return dict(
        rhos=parse_grid(pick(args.rho, "rho", "0, 0.75")),
        delta0s=parse_grid(pick(args.delta0, "delta0", "0, 1")),
        beta_grid=parse_grid(pick(args.beta0, "beta0", "-1:1:0.25")),
        missing=missing, nodes=nodes, estimators=est,
    )


def _cmd_limits(args):
    rows = asymptotics.limit_curves(**_limits_settings(args))
    with _open_out(args.output) as fh:
        asymptotics.write_curves_csv(rows, fh)


def build_parser():
    p = argparse.ArgumentParser(prog="tsclogit", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("estimate", help="two-step estimate from a subject CSV")
    e.add_argument("--input", required=True)
    e.add_argument("--output")
    e.add_argument("--config", help="INI file with a [parametrization] section")
    e.add_argument("--no-augment", action="store_true", help="disable the discordant-cell completion")
    e.add_argument("--pz-constant", type=float, help="p(Z=1) when the CSV has no pz column")
    e.set_defaults(func=_cmd_estimate)

    s = sub.add_parser("simulate", help="Monte Carlo study")
    s.add_argument("--config", required=True, help="INI file with [scenario NAME] sections")
    s.add_argument("--output")
    s.add_argument("--seed", type=int)
    s.add_argument("--threads", type=int, default=1, help="worker processes (results do not depend on it)")
    s.add_argument("--replications", type=int)
    s.set_defaults(func=_cmd_simulate)

    lim = sub.add_parser("limits", help="probability-limit curves over a beta0 grid")
    lim.add_argument("--config", help="INI file with a [limits] section")
    lim.add_argument("--output")
    lim.add_argument("--rho")
    lim.add_argument("--delta0")
    lim.add_argument("--beta0", help="'lo:hi:step' or a list")
    lim.add_argument("--missing", action="store_true")
    lim.add_argument("--estimators")
    lim.add_argument("--gh-nodes")
    lim.set_defaults(func=_cmd_limits)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except SchemaError as exc:
        print(f"tsclogit: error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except OSError as exc:
        print(f"tsclogit: error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except NumericalError as exc:
        print(f"tsclogit: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
