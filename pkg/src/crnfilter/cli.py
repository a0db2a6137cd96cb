"""Command-line entry point: ``crnfilter <subcommand> [options]``.

Thread count comes from ``--threads`` or the ``CRNFILTER_THREADS`` environment
variable; results do not depend on it.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

THREADS_ENV = "CRNFILTER_THREADS"


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="model YAML (default: packaged gene-expression model)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--particles", type=int, default=None, help="number of particles M")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--threads", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crnfilter", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="timescale analysis and reduced model")
    _common(p)

    p = sub.add_parser("simulate", help="simulate one trajectory")
    _common(p)
    p.add_argument("model", choices=["full", "reduced"])
    p.add_argument("--t-end", type=float, default=50.0)
    p.add_argument("--ode-step", type=float, default=None)

    p = sub.add_parser("filter", help="particle filter over an observation CSV")
    _common(p)
    p.add_argument("kernel", choices=["full", "reduced"])
    p.add_argument("--observations", help="CSV t,y1,..; default: synthesize from the exact model")
    p.add_argument("--horizon", type=float, default=None)
    p.add_argument("--ode-step", type=float, default=None)
    p.add_argument("--timing", action="store_true", help="fill step_wall_ms")

    p = sub.add_parser("experiment", help="full vs reduced filter comparison bundle")
    _common(p)
    p.add_argument("--horizon", type=float, default=None)
    p.add_argument("--ode-step", type=float, default=None)
    p.add_argument("--timing", action="store_true", help="fill step_wall_ms in filter CSVs")

    p = sub.add_parser("convergence", help="KS distance of exact vs reduced marginals")
    _common(p)
    p.add_argument("--N", type=float, nargs="+", default=[10, 100, 1000])
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--t", type=float, default=10.0)
    p.add_argument("--species", default="S4")

    p = sub.add_parser("oracle-validate", help="particle filter vs exact truncated filter")
    _common(p)
    p.add_argument("--steps", type=int, default=20)
    p.add_argument("--replicates", type=int, default=30)
    return parser


def _setup_threads(n: int | None) -> None:
    if n is None:
        env = os.environ.get(THREADS_ENV)
        n = int(env) if env else None
    if n is not None:
        if n < 1:
            raise SystemExit("--threads must be >= 1")
        # must precede the first numba import
        current = int(os.environ.get("NUMBA_NUM_THREADS", "0") or 0)
        os.environ["NUMBA_NUM_THREADS"] = str(max(n, current, os.cpu_count() or 1))
    import numba

    if n is not None:
        numba.set_num_threads(n)


def _dump(obj, path: Path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _setup_threads(args.threads)

    from . import experiment as ex
    from .hybrid import HybridStepConfig, ReducedKernel
    from .observation import read_observations_csv, write_observations_csv
    from .pfilter import run_filter, species_functionals
    from .rng import STREAMS, RngStream
    from .scaling import reduce
    from .ssa import FullKernel, write_trajectory_csv

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if args.command == "oracle-validate":
        model = ex.load_model(args.config or ex.packaged_model("gene_mrna"))
        res = ex.run_oracle_validation(
            model, particles=args.particles or 50_000, steps=args.steps,
            replicates=args.replicates, seed=args.seed,
        )
        ex.write_filter_csv(res["exact"], out / "filter_exact.csv")
        ex.write_filter_csv(res["runs"][0], out / "filter_pf.csv")
        z = [max(row) for row in res["z"]]
        report = {k: v for k, v in res.items() if k not in ("exact", "runs", "runtime_s")}
        report["max_z_per_step"] = z
        report["all_within_3se"] = bool(max(z) <= 3.0)
        _dump(report, out / "oracle.json")
        print(f"max |z| = {max(z):.3f}; within 3 SE: {report['all_within_3se']}")
        return 0

    model = ex.load_model(args.config)

    if args.command == "analyze":
        red = reduce(model.net, model.spec)
        (out / "analysis.txt").write_text(red.report_text() + "\n")
        (out / "analysis.json").write_text(red.to_json() + "\n")
        print(red.report_text())
        return 0

    cfg = ex.ExperimentConfig.from_model(
        model,
        seed=args.seed,
        particles=args.particles,
        horizon=getattr(args, "horizon", None),
        ode_step=getattr(args, "ode_step", None),
    )
    cfg.timing = bool(getattr(args, "timing", False))

    if args.command == "simulate":
        stream = RngStream(args.seed, STREAMS["truth"])
        x0 = model.net.sample_initial(stream.substream(0).generator(), 1)[0]
        if args.model == "full":
            kern = FullKernel(model.net, model.spec)
        else:
            kern = ReducedKernel(reduce(model.net, model.spec),
                                 HybridStepConfig(args.ode_step or 0.01))
        traj = kern.trajectory(x0, args.t_end, stream.substream(1))
        path = out / f"trajectory_{args.model}.csv"
        write_trajectory_csv(traj, path, model.net.names, model.raw_factor)
        print(f"{traj.n_events} events, {len(traj.times)} records -> {path}")
        return 0

    if args.command == "filter":
        if args.observations:
            obs = read_observations_csv(args.observations)
        else:
            _, _, obs = ex.synthesize(model, cfg.horizon, cfg.seed)
            write_observations_csv(obs, out / "observations.csv")
        if args.kernel == "full":
            kern = FullKernel(model.net, model.spec)
        else:
            kern = ReducedKernel(reduce(model.net, model.spec), cfg.hybrid())
        run = run_filter(kern, model.observation, model.net.sample_initial, obs, cfg.particles,
                         cfg.seed, species_functionals(model.net.names, model.raw_factor))
        ex.write_filter_csv(run, out / f"filter_{args.kernel}.csv", cfg.timing)
        print(f"{len(run.estimates)} estimates -> {out / f'filter_{args.kernel}.csv'}")
        return 0

    if args.command == "experiment":
        bundle = ex.run_experiment(cfg)
        ex.write_bundle(bundle, out)
        print(json.dumps({"coverage": bundle.coverage,
                          "median_ratio": bundle.timing["median_ratio"]}, sort_keys=True))
        return 0

    if args.command == "convergence":
        hyb = HybridStepConfig(args.ode_step) if getattr(args, "ode_step", None) else None
        res = ex.run_convergence_study(model, args.N, args.samples, args.t, args.species,
                                       args.seed, hyb)
        _dump(res, out / "convergence.json")
        for row in res["results"]:
            print(f"N = {row['N']:g}: KS = {row['ks']:.4f}")
        return 0
    return 1


if __name__ == "__main__":
    sys.exit(main())
