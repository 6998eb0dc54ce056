"""Command-line front end.

Every subcommand maps onto one analytics operation and emits CSV, either to
--out or to standard output.  Exit codes: 0 on success, 1 on configuration
errors (bad flags, bad config file), 2 on runtime failures.  Output is a
pure function of the parsed configuration and --seed; worker count never
changes the bytes emitted.

A JSON config file (--config) supplies defaults for any long flag of its
subcommand, spelled with underscores ("grid_t0"); flags given on the command
line take precedence, and unknown keys are rejected.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time

import numpy as np

from . import analytics
from .diffusion import IntegrationError, TimeGrid
from .harness import run_replications
from .model import BanditInstance, PolicySpec

_DT_DEFAULT = 1.0 / 8192.0


class ConfigError(Exception):
    """Bad flag or config-file value; reported with exit code 1."""


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors by default; the contract here is
    # exit 1 for anything wrong with the configuration.
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _parse_floats(text) -> list[float]:
    """Comma list (or JSON array) of floats."""
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    parts = [p.strip() for p in str(text).split(",") if p.strip()]
    if not parts:
        raise ConfigError("expected a comma-separated list of numbers")
    try:
        return [float(p) for p in parts]
    except ValueError:
        raise ConfigError(f"invalid number in {text!r}")


def _parse_ints(text) -> list[int]:
    return [int(round(v)) for v in _parse_floats(text)]


def _parse_gaps(text) -> list[float]:
    """Gap grid: 'start:stop:step' (inclusive) or a comma list."""
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    s = str(text)
    if ":" not in s:
        return _parse_floats(s)
    parts = s.split(":")
    if len(parts) != 3:
        raise ConfigError("gap ranges use start:stop:step")
    try:
        start, stop, step = (float(p) for p in parts)
    except ValueError:
        raise ConfigError(f"invalid number in gap range {s!r}")
    if step <= 0.0:
        raise ConfigError("gap range step must be positive")
    if stop < start:
        raise ConfigError("gap range stop must be >= start")
    count = int(round((stop - start) / step)) + 1
    return [start + i * step for i in range(count)]


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--reps", type=int, default=None, help="replications")
    p.add_argument("--workers", type=int, default=None,
                   help="worker threads (never changes results)")
    p.add_argument("--out", default=None,
                   help="CSV output path (default: standard output)")
    p.add_argument("--config", default=None,
                   help="JSON file of flag defaults for this subcommand")


def _add_grid(p: argparse.ArgumentParser, t0: float = 1e-6,
              geo_points: int = 64) -> None:
    p.add_argument("--grid-t0", type=float, default=t0,
                   help="warm-start time of the integration grid")
    p.add_argument("--grid-geo-end", type=float, default=1e-3,
                   help="end of the geometric refinement near zero")
    p.add_argument("--grid-geo-points", type=int, default=geo_points,
                   help="points in the geometric segment")
    p.add_argument("--grid-dt", type=float, default=_DT_DEFAULT,
                   help="uniform step size after the refinement (1/8192)")
    p.add_argument("--method", choices=("time-change", "euler"),
                   default="time-change", help="integration route")


def _grid_from(args) -> TimeGrid:
    return TimeGrid(t0=args.grid_t0, geometric_end=args.grid_geo_end,
                    geometric_points=args.grid_geo_points, dt=args.grid_dt)


def _require(args, name: str):
    value = getattr(args, name.replace("-", "_"))
    if value is None:
        raise ConfigError(f"missing required --{name}")
    return value


def _resolve_c(args) -> float:
    """--c wins; --nu-mode is shorthand for the two standard smoothings."""
    if args.c is not None:
        return args.c
    mode = getattr(args, "nu_mode", None)
    if mode == "smoothed":
        return 1.0
    return 0.0  # undersmoothed, and the default


def _emit(lines: list[str], out_path):
    """Write CSV; return the stream that should carry the summary."""
    text = "\n".join(lines) + "\n"
    if out_path and out_path != "-":
        with open(out_path, "w", encoding="utf-8") as f:
            f.write(text)
        return sys.stdout
    sys.stdout.write(text)
    return sys.stderr


def _reps(args, default: int) -> int:
    reps = args.reps if args.reps is not None else default
    if reps < 2:
        raise ConfigError("--reps must be at least 2")
    return reps


# ---------------------------------------------------------------------------
# Subcommands


def _build_policy(args, *, family_kinds=None) -> PolicySpec:
    kind = _require(args, "policy")
    if family_kinds and kind not in family_kinds:
        raise ConfigError(f"--policy must be one of {', '.join(family_kinds)}")
    c = _resolve_c(args)
    d = args.d
    if kind in ("ts2", "explore-ts2"):
        d = analytics.default_tempering(c, d)
    try:
        return PolicySpec(
            kind, c=c, d=0.0 if d is None else d,
            alpha=args.alpha, smoothing=args.smoothing,
            probs=tuple(_parse_floats(args.probs)) if args.probs else None,
        )
    except ValueError as exc:
        raise ConfigError(str(exc))


def _build_instance(args, policy: PolicySpec) -> BanditInstance:
    mu = _parse_floats(_require(args, "mu"))
    sigma = _parse_floats(args.sigma)
    if len(sigma) == 1 and len(mu) > 1:
        sigma = sigma * len(mu)
    try:
        inst = BanditInstance(tuple(mu), tuple(sigma))
    except ValueError as exc:
        raise ConfigError(str(exc))
    if policy.base_kind == "ts1" and inst.n_arms != 1:
        raise ConfigError("--policy ts1 takes a single --mu value")
    if policy.base_kind == "ts2" and inst.n_arms != 2:
        raise ConfigError("--policy ts2 takes exactly two --mu values")
    return inst


def cmd_simulate(args) -> int:
    t_start = time.perf_counter()
    policy = _build_policy(args)
    inst = _build_instance(args, policy)
    reps = _reps(args, 1000)
    band = np.linspace(0.0, 1.0, args.band_points)
    retained = ("regret", "q1") if args.per_path else ()

    if args.mode == "diffusion":
        job = analytics.DiffusionJob(
            inst=inst, policy=policy, grid=_grid_from(args),
            method=args.method, snap_times=tuple(band), retained=retained,
            backend=args.backend if args.backend != "auto" else None,
        )
    else:
        horizon = _require(args, "n")
        if horizon < 1:
            raise ConfigError("--n must be a positive horizon")
        job = analytics.PrelimitJob(
            inst=inst, policy=policy, horizon=horizon, family=args.family,
            snap_times=tuple(band), retained=retained,
        )

    try:
        aggs = run_replications(job, reps, args.seed, workers=args.workers)
    except ValueError as exc:
        raise ConfigError(str(exc))

    if args.per_path:
        rows = zip(aggs["regret"].sample_ids, aggs["regret"].sample_values,
                   aggs["q1"].sample_values)
        lines = analytics.csv_lines("rep,regret,q1",
                                    [(int(i), float(r), float(q)) for i, r, q in rows])
    else:
        rows = []
        for t in band:
            q = aggs[f"q[{t}][0]"]
            s = aggs[f"s[{t}][0]"]
            rows.append((float(t), q.mean, math.sqrt(q.variance),
                         s.mean, math.sqrt(s.variance)))
        lines = analytics.csv_lines("t,mean_q1,sd_q1,mean_s1,sd_s1", rows)

    stream = _emit(lines, args.out)
    wall = time.perf_counter() - t_start
    reg = aggs["regret"]
    print(f"mean_regret={reg.mean:.6g} stderr={reg.stderr:.3g} "
          f"reps={reg.count} wall_time_s={wall:.2f}", file=stream)
    return 0


def cmd_profile(args) -> int:
    family = _require(args, "family")
    rows = analytics.regret_profile(
        family, _parse_gaps(_require(args, "gaps")),
        _parse_floats(_require(args, "cs")), _reps(args, 1000), args.seed,
        sigma=args.sigma, d=args.d, grid=_grid_from(args),
        method=args.method, workers=args.workers,
    )
    stream = _emit(analytics.profile_csv(rows), args.out)
    print(f"rows={len(rows)} reps_per_cell={rows[0].reps}", file=stream)
    return 0


def cmd_histogram(args) -> int:
    result = analytics.regret_histogram(
        _require(args, "delta"), _resolve_c(args), _reps(args, 10000),
        args.seed, bins=args.bins, d=args.d, sigma=args.sigma,
        grid=_grid_from(args), method=args.method, workers=args.workers,
    )
    stream = _emit(analytics.histogram_csv(result), args.out)
    print(f"reps={result.reps} below_support={result.n_below} "
          f"above_support={result.n_above}", file=stream)
    return 0


def cmd_superdiffusive(args) -> int:
    result = analytics.superdiffusive_check(
        _require(args, "family"), _parse_gaps(_require(args, "gaps")),
        _resolve_c(args), _reps(args, 20000), args.seed, beta=args.beta,
        sigma=args.sigma, d=args.d, grid=_grid_from(args),
        method=args.method, workers=args.workers,
    )
    lines = analytics.csv_lines(
        "family,gap,c,mean_regret,stderr,scaled_product",
        [(result.family, r.gap, r.c, r.mean_regret, r.stderr, r.scaled_product)
         for r in result.rows],
    )
    stream = _emit(lines, args.out)
    print(f"regret_increasing={result.regret_increasing} "
          f"product_decreasing={result.product_decreasing} beta={result.beta}",
          file=stream)
    return 0


def cmd_instability(args) -> int:
    result = analytics.instability_frequencies(
        _require(args, "mu"), args.eps, args.eta, _reps(args, 10000),
        args.seed, c=_resolve_c(args), sigma=args.sigma,
        grid=_grid_from(args), method=args.method, workers=args.workers,
    )
    lines = analytics.csv_lines(
        "mu,eps,eta,p_high,p_low,p_both,stderr_high,stderr_low,stderr_both,reps",
        [(result.mu, result.eps, result.eta, result.p_high, result.p_low,
          result.p_both, result.stderr_high, result.stderr_low,
          result.stderr_both, result.reps)],
    )
    stream = _emit(lines, args.out)
    print(f"p_both={result.p_both:.4f} reps={result.reps}", file=stream)
    return 0


def cmd_bounds(args) -> int:
    deltas = _parse_floats(_require(args, "delta"))
    algorithms = tuple(
        a.strip() for a in args.algorithms.split(",") if a.strip()
    ) if args.algorithms else analytics.BOUND_ALGORITHMS
    for a in algorithms:
        if a not in analytics.BOUND_ALGORITHMS:
            raise ConfigError(f"unknown algorithm {a!r}")
    try:
        lines = analytics.bounds_csv(deltas, algorithms, sigma=args.sigma)
    except ValueError as exc:
        raise ConfigError(str(exc))
    stream = _emit(lines, args.out)
    print(f"rows={len(lines) - 1}", file=stream)
    return 0


def cmd_convergence(args) -> int:
    policy = _build_policy(args, family_kinds=("ts1", "ts2"))
    if policy.base_kind == "ts2":
        delta = _require(args, "delta")
        inst = BanditInstance((abs(delta), 0.0), (args.sigma, args.sigma))
    else:
        inst = BanditInstance((_require(args, "mu"),), (args.sigma,))
    result = analytics.convergence_report(
        inst, policy, _parse_ints(_require(args, "n")), _reps(args, 1000),
        args.seed, family=args.family,
        snap_times=tuple(_parse_floats(args.snap_times)),
        grid=_grid_from(args), method=args.method, workers=args.workers,
    )
    stream = _emit(analytics.convergence_csv(result), args.out)
    ks = " ".join(f"ks[n={n}]={result.ks_terminal[n]:.4f}"
                  for n in result.horizons)
    print(ks, file=stream)
    return 0


# ---------------------------------------------------------------------------
# Parser assembly


def build_parser():
    parser = _Parser(
        prog="diffbandit",
        description="Bandit experiments at the diffusion scale: simulation, "
                    "regret profiles, and bound tables as CSV.",
    )
    subs = parser.add_subparsers(dest="command", parser_class=_Parser,
                                 metavar="SUBCOMMAND")
    fmt = argparse.ArgumentDefaultsHelpFormatter

    def sub(name, help_text):
        p = subs.add_parser(name, help=help_text, formatter_class=fmt)
        _add_common(p)
        return p

    p = sub("simulate", "run one configuration; band or per-path CSV")
    p.add_argument("--mode", choices=("diffusion", "prelimit"),
                   default="diffusion", help="dynamics to simulate")
    p.add_argument("--policy", default=None,
                   help="ts1, ts2, greedy, luce, explore-ts1, explore-ts2, const")
    p.add_argument("--mu", default=None, help="arm means (comma list)")
    p.add_argument("--sigma", default="1", help="arm volatilities (comma list)")
    p.add_argument("--c", type=float, default=None,
                   help="prior tightness (default 0; see --nu-mode)")
    p.add_argument("--nu-mode", choices=("undersmoothed", "smoothed"),
                   default=None, help="undersmoothed: c=0; smoothed: c=1")
    p.add_argument("--d", type=float, default=None,
                   help="two-arm tempering (default 1e-8 when c=0, else 0)")
    p.add_argument("--alpha", type=float, default=1.0,
                   help="greedy temperature / luce floor")
    p.add_argument("--smoothing", type=float, default=0.0,
                   help="greedy allocation smoothing")
    p.add_argument("--probs", default=None, help="const-policy probabilities")
    p.add_argument("--n", type=int, default=None,
                   help="horizon (prelimit mode)")
    p.add_argument("--family", default="gaussian",
                   choices=("gaussian", "shifted-bernoulli", "shifted-uniform"),
                   help="reward family (prelimit mode)")
    p.add_argument("--band-points", type=int, default=41,
                   help="snapshot times in the band CSV")
    p.add_argument("--per-path", action="store_true",
                   help="emit one row per replication instead of the band")
    p.add_argument("--backend", choices=("auto", "compiled", "python"),
                   default="auto", help="integrator backend (diffusion mode)")
    _add_grid(p)
    p.set_defaults(func=cmd_simulate)

    p = sub("profile", "mean regret over a (gap, c) grid")
    p.add_argument("--family", choices=("ts1", "ts2"), default=None,
                   help="one-arm or two-arm rule")
    p.add_argument("--gaps", default=None,
                   help="gap grid: start:stop:step or comma list")
    p.add_argument("--cs", default=None, help="prior tightness values")
    p.add_argument("--sigma", type=float, default=1.0, help="volatility")
    p.add_argument("--d", type=float, default=None,
                   help="two-arm tempering (default 1e-8 when c=0, else 0)")
    _add_grid(p)
    p.set_defaults(func=cmd_profile)

    p = sub("histogram", "terminal-regret histogram of the two-arm rule")
    p.add_argument("--delta", type=float, default=None, help="arm gap")
    p.add_argument("--c", type=float, default=None, help="prior tightness")
    p.add_argument("--d", type=float, default=None,
                   help="tempering (default 1e-8 when c=0, else 0)")
    p.add_argument("--bins", type=int, default=60, help="histogram bins")
    p.add_argument("--sigma", type=float, default=1.0, help="volatility")
    _add_grid(p)
    p.set_defaults(func=cmd_histogram)

    p = sub("superdiffusive", "regret growth versus gap, with |gap|^beta scaling")
    p.add_argument("--family", choices=("ts1", "ts2"), default=None)
    p.add_argument("--gaps", default=None,
                   help="gap grid: start:stop:step or comma list")
    p.add_argument("--c", type=float, default=None, help="prior tightness")
    p.add_argument("--beta", type=float, default=0.5,
                   help="scaling exponent in (0, 1)")
    p.add_argument("--sigma", type=float, default=1.0, help="volatility")
    p.add_argument("--d", type=float, default=None,
                   help="two-arm tempering (default 1e-8 when c=0, else 0)")
    _add_grid(p)
    p.set_defaults(func=cmd_superdiffusive)

    p = sub("instability", "early-time band-crossing frequencies (one arm)")
    p.add_argument("--mu", type=float, default=None, help="scaled mean")
    p.add_argument("--eps", type=float, default=0.05, help="time window end")
    p.add_argument("--eta", type=float, default=0.2, help="band half-width")
    p.add_argument("--c", type=float, default=None, help="prior tightness")
    p.add_argument("--sigma", type=float, default=1.0, help="volatility")
    _add_grid(p, t0=1e-9, geo_points=512)
    p.set_defaults(func=cmd_instability)

    p = sub("bounds", "published worst-case bounds at the diffusion scale")
    p.add_argument("--delta", default=None, help="scaled gaps (comma list)")
    p.add_argument("--algorithms", default=None,
                   help=f"comma list from: {', '.join(analytics.BOUND_ALGORITHMS)}")
    p.add_argument("--sigma", type=float, default=1.0, help="volatility")
    p.set_defaults(func=cmd_bounds)

    p = sub("convergence", "finite-horizon runs versus the diffusion limit")
    p.add_argument("--n", default=None, help="horizons (comma list)")
    p.add_argument("--policy", default=None, help="ts1 or ts2")
    p.add_argument("--mu", type=float, default=None, help="mean (ts1)")
    p.add_argument("--delta", type=float, default=None, help="arm gap (ts2)")
    p.add_argument("--c", type=float, default=None,
                   help="prior tightness (default 0; see --nu-mode)")
    p.add_argument("--nu-mode", choices=("undersmoothed", "smoothed"),
                   default=None, help="undersmoothed: c=0; smoothed: c=1")
    p.add_argument("--d", type=float, default=None,
                   help="two-arm tempering (default 1e-8 when c=0, else 0)")
    p.add_argument("--alpha", type=float, default=1.0, help=argparse.SUPPRESS)
    p.add_argument("--smoothing", type=float, default=0.0, help=argparse.SUPPRESS)
    p.add_argument("--probs", default=None, help=argparse.SUPPRESS)
    p.add_argument("--sigma", type=float, default=1.0, help="volatility")
    p.add_argument("--family", default="gaussian",
                   choices=("gaussian", "shifted-bernoulli", "shifted-uniform"),
                   help="pre-limit reward family")
    p.add_argument("--snap-times", default="0.25,0.5,0.75,1.0",
                   help="comparison times (comma list)")
    _add_grid(p)
    p.set_defaults(func=cmd_convergence)

    return parser, {name: subs.choices[name] for name in subs.choices}


def _fuse_negative_values(argv: list[str]) -> list[str]:
    """Join '--flag -2:2:1' into '--flag=-2:2:1'.

    argparse only recognizes bare negative numbers as values; ranges and
    comma lists that start with a minus sign would otherwise be taken for
    option names.
    """
    out = []
    i = 0
    while i < len(argv):
        tok = argv[i]
        nxt = argv[i + 1] if i + 1 < len(argv) else ""
        if (tok.startswith("--") and "=" not in tok and len(nxt) >= 2
                and nxt[0] == "-" and (nxt[1].isdigit() or nxt[1] == ".")):
            out.append(f"{tok}={nxt}")
            i += 2
        else:
            out.append(tok)
            i += 1
    return out


def main(argv=None) -> int:
    parser, sub_map = build_parser()
    argv = _fuse_negative_values(list(sys.argv[1:] if argv is None else argv))
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        print("diffbandit: error: a subcommand is required", file=sys.stderr)
        return 1

    if getattr(args, "config", None):
        sub = sub_map[args.command]
        try:
            with open(args.config, encoding="utf-8") as f:
                cfg = json.load(f)
        except OSError as exc:
            print(f"diffbandit: error: cannot read config: {exc}", file=sys.stderr)
            return 1
        except json.JSONDecodeError as exc:
            print(f"diffbandit: error: config is not valid JSON: {exc}",
                  file=sys.stderr)
            return 1
        if not isinstance(cfg, dict):
            print("diffbandit: error: config must be a JSON object", file=sys.stderr)
            return 1
        known = {a.dest for a in sub._actions} - {"help", "config", "func"}
        unknown = sorted(set(cfg) - known)
        if unknown:
            print(f"diffbandit: error: unknown config keys: {', '.join(unknown)}",
                  file=sys.stderr)
            return 1
        sub.set_defaults(**cfg)
        args = parser.parse_args(argv)  # command line still wins

    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"diffbandit: error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, IntegrationError, OSError) as exc:
        print(f"diffbandit: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
