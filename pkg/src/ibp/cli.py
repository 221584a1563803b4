"""Command-line front end.

Subcommands ``exact``, ``ode``, ``mc``, ``laplace`` and ``gf`` run one engine
and write a snapshot file (CSV or JSON) plus a ``.manifest.json`` sidecar;
``--plot`` also renders a PNG.  ``compare`` diffs two snapshot files and
``scaling`` writes the collapse and moment tables of the no-extinction model.

Exit codes: 0 success or within tolerance, 1 tolerance failure, 2 usage
error, 3 engine error.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import characteristics, exact, lapinv, mastereq, mc, schema
from .core import (
    DistributionSnapshot,
    DomainError,
    Engine,
    IBPError,
    Kind,
    ProcessSpec,
    SchemaMismatch,
    ValidationError,
    validate,
)

EXIT_OK, EXIT_TOL, EXIT_USAGE, EXIT_ENGINE = 0, 1, 2, 3


class UsageError(Exception):
    pass


# -- argument handling ----------------------------------------------------------


def _times(text):
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad time list {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("empty time list")
    return values


def _common(p, process_required=True):
    p.add_argument("--process", required=process_required, help="critical | noext | immigration | twotype")
    p.add_argument("--beta", type=float, help="stem-cell source rate")
    p.add_argument("--r", type=float, help="two-type self-renewal rate, 0 < r <= 1/2")
    p.add_argument("--gamma", type=float, help="two-type removal rate of post-mitotic cells")
    p.add_argument("--times", type=_times, help="comma-separated output times")
    p.add_argument("--tmax", type=float, help="end time; the single output time when --times is absent")
    p.add_argument("--out", type=Path, help="output file; stdout when absent (no manifest)")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--plot", type=Path, help="also write a PNG figure to this path")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ibp", description="Immortal branching process toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("exact", help="closed-form distributions")
    _common(p)
    p.add_argument("--mmax", type=int, help="number of population sizes to write")

    p = sub.add_parser("ode", help="truncated master equation")
    _common(p)
    p.add_argument("--truncation", type=int, default=1024, help="window size M (progenitor axis)")
    p.add_argument("--nmax", type=int, help="two-type window on the post-mitotic axis")
    p.add_argument("--tail-tol", type=float, default=1e-10, help="tail budget; enables adaptive growth")
    p.add_argument("--fixed", action="store_true", help="never grow the window")
    p.add_argument("--method", default="auto", help="auto | RK45 | BDF")

    p = sub.add_parser("mc", help="Monte Carlo ensemble")
    _common(p)
    p.add_argument("--trajectories", type=int, default=100_000)
    p.add_argument("--seed", type=int, help="base seed (default: $IBP_SEED, else 0)")
    p.add_argument("--bin-cap", type=int, help="largest histogram bin before overflow")
    p.add_argument("--stats", type=Path, help="also write the full ensemble statistics as JSON")

    p = sub.add_parser("laplace", help="numerical Laplace inversion (noext)")
    _common(p)
    p.add_argument("--mmax", type=int, default=20)
    p.add_argument("--A", type=float, default=lapinv.DEFAULT_A, dest="A")
    p.add_argument("--terms", type=int, default=lapinv.DEFAULT_TERMS)
    p.add_argument("--euler", type=int, default=lapinv.DEFAULT_EULER)
    p.add_argument("--tol", type=float, default=1e-6)

    p = sub.add_parser("gf", help="two-type grid from the generating function")
    _common(p)
    p.add_argument("--mmax", type=int, default=32, help="grid size in m (power of two)")
    p.add_argument("--nmax", type=int, default=32, help="grid size in n (power of two)")
    p.add_argument("--radius", type=float, default=1.0)

    p = sub.add_parser("compare", help="compare two snapshot files")
    p.add_argument("file_a", type=Path)
    p.add_argument("file_b", type=Path, help="reference file")
    p.add_argument("--metric", choices=("maxabs", "relmax", "zscore"), default="maxabs")
    p.add_argument("--tol", type=float, required=True)
    p.add_argument("--min-expected", type=float, default=10.0, help="zscore: smallest expected count tested")
    p.add_argument("--floor", type=float, default=1e-12, help="relmax: skip entries where both values are below this")
    p.add_argument("--report", type=Path, help="write per-index deviations as CSV")
    p.add_argument("--plot", type=Path)

    p = sub.add_parser("scaling", help="scaling collapse and moment table (noext)")
    _common(p, process_required=False)
    p.add_argument("--engine", choices=("ode", "laplace"), default="ode")
    p.add_argument("--mu-points", type=int, default=24)
    p.add_argument("--kmax", type=int, default=4)
    return parser


def _spec(args) -> ProcessSpec:
    kind = Kind.parse(args.process)
    given = {k: getattr(args, k) for k in ("beta", "r", "gamma") if getattr(args, k) is not None}
    spec = ProcessSpec(kind=kind, **given)
    return validate(spec)


def _time_list(args) -> list[float]:
    if args.times:
        times = args.times
    elif args.tmax is not None:
        times = [args.tmax]
    else:
        raise UsageError("give --times or --tmax")
    if any(b <= a for a, b in zip(times, times[1:])):
        raise UsageError("--times must be strictly increasing")
    if args.tmax is not None and times[-1] > args.tmax:
        raise UsageError("--times exceeds --tmax")
    if times[0] < 0:
        raise UsageError("times must be nonnegative")
    return times


# -- output -----------------------------------------------------------------------


def _emit(args, table: schema.SnapshotTable, params: dict, seed, started: float, title: str):
    if args.out is None:
        fmt = schema.format_json if args.format == "json" else schema.format_csv
        sys.stdout.write(fmt(table))
        outputs = []
    else:
        writer = schema.write_json if args.format == "json" else schema.write_csv
        outputs = [writer(table, args.out)]
    if args.plot is not None:
        from .plotting import plot_table

        outputs.append(plot_table(table, args.plot, title))
    extra = getattr(args, "_extra_outputs", [])
    outputs.extend(extra)
    if args.out is not None:
        manifest = args.out.with_name(args.out.name + ".manifest.json")
        schema.write_manifest(manifest, sys.argv, params, seed, outputs, time.time() - started)


def _params(args, spec, **extra) -> dict:
    out = {"command": args.command, "spec": spec.to_dict(), "times": _time_list(args)}
    out.update(extra)
    return out


# -- engine commands ----------------------------------------------------------------


def cmd_exact(args) -> int:
    started = time.time()
    spec = _spec(args)
    times = _time_list(args)
    snaps = [exact.snapshot(spec, t, mmax=args.mmax) for t in times]
    table = schema.table_from_snapshots(snaps, {"process": spec.kind.value})
    _emit(args, table, _params(args, spec, mmax=args.mmax), None, started, f"exact, {spec.kind.value}")
    return EXIT_OK


def cmd_ode(args) -> int:
    started = time.time()
    spec = _spec(args)
    times = _time_list(args)
    strategy = mastereq.Strategy.FIXED if args.fixed else mastereq.Strategy.ADAPTIVE_GROW
    policy = mastereq.TruncationPolicy(
        M=args.truncation, tail_tolerance=args.tail_tol, strategy=strategy, M_q=args.nmax,
    )
    snaps = mastereq.integrate(spec, times, policy, method=args.method)
    meta = {"process": spec.kind.value}
    for s in snaps:
        meta[f"lost_mass@{s.time!r}"] = s.meta["lost_mass"]
    table = schema.table_from_snapshots(snaps, meta)
    params = _params(args, spec, truncation=args.truncation, nmax=args.nmax, tail_tol=args.tail_tol,
                     strategy=strategy.value, method=args.method)
    _emit(args, table, params, None, started, f"master equation, {spec.kind.value}")
    return EXIT_OK


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("IBP_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"IBP_SEED={env!r} is not an integer") from None


def cmd_mc(args) -> int:
    started = time.time()
    spec = _spec(args)
    times = _time_list(args)
    seed = _seed(args)
    t_max = args.tmax if args.tmax is not None else times[-1]
    stats = mc.run_ensemble(spec, t_max, times, args.trajectories, seed, jobs=args.jobs, bin_cap=args.bin_cap)
    snaps = [stats.to_snapshot(j) for j in range(len(times))]
    table = schema.table_from_snapshots(snaps, {"process": spec.kind.value, "base_seed": seed})
    if args.stats is not None:
        args.stats.write_text(stats.to_json() + "\n")
        args._extra_outputs = [args.stats]
    params = _params(args, spec, trajectories=args.trajectories, bin_cap=stats.bin_cap, tmax=t_max)
    _emit(args, table, params, seed, started, f"Monte Carlo, {spec.kind.value}")
    return EXIT_OK


def cmd_laplace(args) -> int:
    started = time.time()
    spec = _spec(args)
    if spec.kind is not Kind.NOEXT:
        raise UsageError("laplace inversion covers the noext process only")
    times = _time_list(args)
    if times[0] <= 0:
        raise UsageError("laplace inversion needs t > 0")
    snaps = []
    for t in times:
        p = np.array([
            lapinv.invert(m, t, A=args.A, n_terms=args.terms, euler_depth=args.euler, tol=args.tol, jobs=args.jobs)
            for m in range(1, args.mmax + 1)
        ])
        snaps.append(DistributionSnapshot(
            time=t, probs=p, tail_mass=max(0.0, 1.0 - float(p.sum())), engine=Engine.LAPLACE_INV,
            origin=1, tolerance=args.tol,
        ))
    table = schema.table_from_snapshots(snaps, {"process": spec.kind.value})
    params = _params(args, spec, mmax=args.mmax, A=args.A, terms=args.terms, euler=args.euler)
    _emit(args, table, params, None, started, "Laplace inversion, noext")
    return EXIT_OK


def cmd_gf(args) -> int:
    started = time.time()
    spec = _spec(args)
    if spec.kind is not Kind.TWOTYPE:
        raise UsageError("gf covers the twotype process only")
    times = _time_list(args)
    if times[0] <= 0:
        raise UsageError("gf needs t > 0")
    snaps = [
        characteristics.extract_pmn(spec.r, spec.gamma, spec.beta, t, args.mmax, args.nmax, radius=args.radius)
        for t in times
    ]
    table = schema.table_from_snapshots(snaps, {"process": spec.kind.value})
    params = _params(args, spec, mmax=args.mmax, nmax=args.nmax, radius=args.radius)
    _emit(args, table, params, None, started, "characteristics, twotype")
    return EXIT_OK


# -- compare ----------------------------------------------------------------------------


def _aligned(a: schema.SnapshotTable, b: schema.SnapshotTable):
    if a.two_type != b.two_type:
        raise SchemaMismatch("one-type and two-type files cannot be compared")
    if a.times != b.times:
        raise SchemaMismatch(f"time sets differ: {a.times} vs {b.times}")
    ka, kb = a.keys(), b.keys()
    index_b = {k: i for i, k in enumerate(kb)}
    common = [(i, index_b[k]) for i, k in enumerate(ka) if k in index_b]
    if not common:
        raise SchemaMismatch("the files share no index")
    ia = np.array([i for i, _ in common])
    ib = np.array([j for _, j in common])
    return [ka[i] for i in ia], ia, ib


def _zscores(a, b, ia, ib, min_expected):
    if a.monte_carlo and not b.monte_carlo:
        sample, ref, i_s, i_r = a, b, ia, ib
    elif b.monte_carlo and not a.monte_carlo:
        sample, ref, i_s, i_r = b, a, ib, ia
    else:
        raise SchemaMismatch("zscore needs exactly one Monte Carlo file")
    N = int(sample.meta["trajectories"])
    p = ref.columns["probability"][i_r]
    counts = sample.columns["count"][i_s]
    expected = N * p
    tested = expected >= min_expected
    with np.errstate(divide="ignore", invalid="ignore"):
        z = (counts - expected) / np.sqrt(N * p * (1.0 - p))
    return np.where(tested, z, 0.0), tested


def cmd_compare(args) -> int:
    a = schema.read_table(args.file_a)
    b = schema.read_table(args.file_b)
    keys, ia, ib = _aligned(a, b)
    pa = a.columns["probability"][ia]
    pb = b.columns["probability"][ib]
    tested = np.ones(len(keys), dtype=bool)
    if args.metric == "maxabs":
        dev = pa - pb
    elif args.metric == "relmax":
        scale = np.maximum(np.abs(pa), np.abs(pb))
        tested = scale >= args.floor
        with np.errstate(divide="ignore", invalid="ignore"):
            dev = np.where(tested, (pa - pb) / scale, 0.0)
    else:
        dev, tested = _zscores(a, b, ia, ib, args.min_expected)
    worst = float(np.max(np.abs(dev[tested]))) if tested.any() else 0.0
    ok = worst <= args.tol
    if args.report is not None:
        with args.report.open("w") as fh:
            names = "time,m,n" if a.two_type else "time,m"
            fh.write(f"{names},a,b,deviation,tested\n")
            for k, x, y, d, t in zip(keys, pa, pb, dev, tested):
                fh.write(",".join(repr(v) if isinstance(v, float) else str(v) for v in (*k, float(x), float(y), float(d))))
                fh.write(f",{int(t)}\n")
    if args.plot is not None:
        from .plotting import plot_compare

        plot_compare(keys, np.where(tested, dev, 0.0), args.plot, args.metric, args.tol)
    summary = f"metric={args.metric} compared={len(keys)} tested={int(tested.sum())} max={worst:.6g} tol={args.tol:g}"
    if args.metric == "zscore" and tested.any():
        beyond3 = float(np.mean(np.abs(dev[tested]) > 3))
        summary += f" frac_beyond_3={beyond3:.4g}"
    print(summary + (" PASS" if ok else " FAIL"))
    return EXIT_OK if ok else EXIT_TOL


# -- scaling ------------------------------------------------------------------------------


MU_ANCHORS = (0.25, 0.5, 1.0, 2.0)


def mu_grid(points: int, lo: float = 0.05, hi: float = 5.0) -> np.ndarray:
    """Geometric grid on [lo, hi] merged with the anchor points used for collapse checks."""
    return np.unique(np.concatenate([np.geomspace(lo, hi, points), MU_ANCHORS]))


def scaling_tables(times, engine="ode", mu_points=24, k_max=4, jobs=1):
    """Collapse rows (t, m, mu, m P_m ln t, e^-mu) and moment rows (t, k, ratio).

    The moment ratio is <m^k> ln t / ((k-1)! t^k), which tends to 1.
    """
    if any(t <= 1 for t in times):
        raise DomainError("scaling times must exceed 1")
    spec = ProcessSpec.noext()
    collapse, moments = [], []
    if engine == "ode":
        top = max(mu_grid(mu_points)) * max(times)
        M = 1 << max(10, math.ceil(math.log2(2 * top)))
        policy = mastereq.TruncationPolicy(M=M, tail_tolerance=1e-12, strategy=mastereq.Strategy.ADAPTIVE_GROW)
        snaps = mastereq.integrate(spec, times, policy)
    for j, t in enumerate(times):
        lt = math.log(t)
        ms = sorted({max(1, int(round(mu * t))) for mu in mu_grid(mu_points)})
        if engine == "ode":
            snap = snaps[j]
            probs = [float(snap.probs[m - 1]) for m in ms]
            mom = mastereq.moments_from_snapshot(snap, k_max).values
        else:
            probs = [lapinv.invert(m, t, jobs=jobs) for m in ms]
            mom = [1.0] + [lapinv.invert_moment(k, t) for k in range(1, k_max + 1)]
        for m, p in zip(ms, probs):
            mu = m / t
            collapse.append((t, m, mu, m * p * lt, math.exp(-mu)))
        for k in range(1, k_max + 1):
            moments.append((t, k, mom[k] * lt / (math.factorial(k - 1) * t**k)))
    return collapse, moments


def cmd_scaling(args) -> int:
    started = time.time()
    if args.process is not None and Kind.parse(args.process) is not Kind.NOEXT:
        raise UsageError("scaling covers the noext process only")
    times = _time_list(args)
    collapse, moments = scaling_tables(times, args.engine, args.mu_points, args.kmax, args.jobs)
    head = f"# ibp-scaling v1\n# engine={args.engine}\n"
    text_c = head + "time,m,mu,scaled,exp_minus_mu\n" + "".join(
        f"{t!r},{m},{mu!r},{v!r},{e!r}\n" for t, m, mu, v, e in collapse
    )
    text_m = head + "time,k,ratio\n" + "".join(f"{t!r},{k},{v!r}\n" for t, k, v in moments)
    if args.out is None:
        sys.stdout.write(text_c + text_m)
        return EXIT_OK
    args.out.write_text(text_c)
    mpath = args.out.with_name(args.out.stem + ".moments.csv")
    mpath.write_text(text_m)
    outputs = [args.out, mpath]
    if args.plot is not None:
        from .plotting import plot_scaling

        curves = {}
        for t, m, mu, v, e in collapse:
            curves.setdefault(t, ([], []))
            curves[t][0].append(mu)
            curves[t][1].append(v)
        outputs.append(plot_scaling(curves, args.plot))
    params = {"command": "scaling", "times": times, "engine": args.engine, "mu_points": args.mu_points}
    schema.write_manifest(args.out.with_name(args.out.name + ".manifest.json"), sys.argv, params, None,
                          outputs, time.time() - started)
    return EXIT_OK


COMMANDS = {
    "exact": cmd_exact,
    "ode": cmd_ode,
    "mc": cmd_mc,
    "laplace": cmd_laplace,
    "gf": cmd_gf,
    "compare": cmd_compare,
    "scaling": cmd_scaling,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits 2 on malformed flags
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ValidationError) as exc:
        print(f"ibp {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (IBPError, ValueError) as exc:
        print(f"ibp {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ENGINE


if __name__ == "__main__":
    sys.exit(main())
