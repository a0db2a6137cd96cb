"""End-to-end studies: the gene-expression filtering comparison, the
model-reduction convergence check and the exact-filter validation."""

from __future__ import annotations

import csv
import hashlib
import json
import os
import platform
import time
from dataclasses import asdict, dataclass, field
from importlib.resources import files
from pathlib import Path

import numpy as np
from scipy.stats import ks_2samp

from .hybrid import HybridStepConfig, ReducedKernel
from .network import ConfigError, ReactionNetwork, load_yaml, network_from_dict
from .observation import (
    ObservationModel,
    ObservationSequence,
    observe,
    write_observations_csv,
)
from .oracle import TruncatedStateSpace, exact_filter, initial_distribution
from .pfilter import FilterRun, run_filter, species_functionals
from .rng import STREAMS, RngStream
from .scaling import ScalingSpec, reduce, rescale_network
from .ssa import FullKernel, write_trajectory_csv

__all__ = [
    "ExperimentBundle",
    "ExperimentConfig",
    "LoadedModel",
    "StageError",
    "coverage",
    "emit_plot_data",
    "load_model",
    "run_convergence_study",
    "run_experiment",
    "run_oracle_validation",
    "synthesize",
    "write_bundle",
]

EXPERIMENT_KEYS = {"horizon", "particles", "seed", "ode_step", "hazard_tol", "max_jumps"}
TIMING_FILE = "timing.json"


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


def packaged_model(name: str) -> Path:
    return Path(str(files("crnfilter") / "models" / f"{name}.yaml"))


@dataclass
class LoadedModel:
    net: ReactionNetwork
    spec: ScalingSpec
    observation: ObservationModel | None
    doc: dict
    path: str

    @property
    def raw_factor(self) -> np.ndarray:
        """Multiply scaled states by this to get copy numbers."""
        return 1.0 / self.spec.species_factor()

    def with_N(self, N: float) -> "LoadedModel":
        net = rescale_network(self.net, self.spec.N, N)
        return LoadedModel(net, ScalingSpec.from_network(net, N), self.observation, self.doc, self.path)


def load_model(path=None) -> LoadedModel:
    path = str(path) if path is not None else str(packaged_model("gene_expression"))
    with open(path) as fh:
        doc = load_yaml(fh.read())
    net = network_from_dict(doc)
    scaling = doc.get("scaling") or {}
    bad = set(scaling) - {"N"}
    if bad:
        raise ConfigError(f"scaling: unknown keys {sorted(bad)}")
    spec = ScalingSpec.from_network(net, float(scaling.get("N", 100)))
    obs = doc.get("observation")
    model = ObservationModel.from_dict(obs, net, spec.N) if obs else None
    exp = doc.get("experiment") or {}
    bad = set(exp) - EXPERIMENT_KEYS
    if bad:
        raise ConfigError(f"experiment: unknown keys {sorted(bad)}")
    return LoadedModel(net, spec, model, doc, path)


@dataclass
class ExperimentConfig:
    config: str | None = None  # network/observation YAML; None = gene model
    horizon: float = 50.0
    particles: int = 5000
    seed: int = 0
    ode_step: float = 0.1
    hazard_tol: float = 1e-8
    max_jumps: int = 10**7
    timing: bool = False  # fill step_wall_ms in filter CSVs

    @classmethod
    def from_model(cls, model: LoadedModel, **overrides) -> "ExperimentConfig":
        exp = dict(model.doc.get("experiment") or {})
        exp.update({k: v for k, v in overrides.items() if v is not None})
        return cls(config=model.path, **exp)

    def hybrid(self) -> HybridStepConfig:
        return HybridStepConfig(self.ode_step, self.hazard_tol, self.max_jumps)


def observation_times(horizon: float, period: float) -> np.ndarray:
    n = int(np.floor(horizon / period + 1e-9))
    return period * np.arange(1, n + 1)


def synthesize(model: LoadedModel, horizon: float, seed: int):
    """Ground-truth path of the exact model and its noisy readouts."""
    if model.observation is None:
        raise ConfigError("model has no observation section")
    truth_stream = RngStream(seed, STREAMS["truth"])
    x0 = model.net.sample_initial(truth_stream.substream(0).generator(), 1)[0]
    traj = FullKernel(model.net, model.spec).trajectory(x0, horizon, truth_stream.substream(1))
    times = observation_times(horizon, model.observation.sample_period)
    truth = np.array([traj.at(t) for t in times])
    noise = RngStream(seed, STREAMS["observation_noise"]).generator()
    values = np.array([observe(model.observation, x, noise) for x in truth])
    return traj, truth, ObservationSequence(times, values)


@dataclass
class ExperimentBundle:
    config: ExperimentConfig
    species: list[str]
    times: np.ndarray
    truth: np.ndarray  # raw copy numbers at observation times
    observations: ObservationSequence
    full: FilterRun
    reduced: FilterRun
    coverage: dict
    timing: dict = field(default_factory=dict)


def coverage(band: FilterRun, other: FilterRun, name: str) -> float:
    """Fraction of times ``other``'s estimate lies in ``band`` mean +/- sd."""
    k = band.column(name)
    lo = band.means()[:, k] - band.sds()[:, k]
    hi = band.means()[:, k] + band.sds()[:, k]
    x = other.means()[:, other.column(name)]
    return float(np.mean((x >= lo) & (x <= hi)))


def _warm(kernel, n_species: int) -> None:
    # JIT load/compile outside the timed region
    kernel(np.zeros((1, n_species)), 1e-6, RngStream(0, 999))


def run_experiment(cfg: ExperimentConfig) -> ExperimentBundle:
    stage = "load"
    try:
        model = load_model(cfg.config)
        stage = "reduce"
        reduced_model = reduce(model.net, model.spec)
        full_k = FullKernel(model.net, model.spec)
        red_k = ReducedKernel(reduced_model, cfg.hybrid())
        stage = "ground truth"
        _, truth, obs = synthesize(model, cfg.horizon, cfg.seed)
        funcs = species_functionals(model.net.names, model.raw_factor)
        _warm(full_k, model.net.n_species)
        _warm(red_k, model.net.n_species)
        runs = {}
        for stage, kern in (("full filter", full_k), ("reduced filter", red_k)):
            runs[kern.kind] = run_filter(
                kern, model.observation, model.net.sample_initial, obs, cfg.particles,
                cfg.seed, funcs,
            )
    except StageError:
        raise
    except Exception as exc:  # noqa: BLE001 - re-raised with stage attached
        raise StageError(stage, exc) from exc
    cov = {name: coverage(runs["full"], runs["reduced"], name) for name in model.net.names}
    bundle = ExperimentBundle(
        cfg, model.net.names, obs.times, truth * model.raw_factor, obs,
        runs["full"], runs["reduced"], cov,
    )
    bundle.timing = timing_summary(runs["full"], runs["reduced"])
    return bundle


def timing_summary(full: FilterRun, reduced: FilterRun) -> dict:
    import numba

    f, r = full.step_walls(), reduced.step_walls()
    return {
        "full_median_step_s": float(np.median(f)),
        "reduced_median_step_s": float(np.median(r)),
        "full_mean_step_s": float(np.mean(f)),
        "reduced_mean_step_s": float(np.mean(r)),
        "median_ratio": float(np.median(f) / np.median(r)),
        "mean_ratio": float(np.mean(f) / np.mean(r)),
        "hardware": {
            "machine": platform.machine(),
            "processor": platform.processor(),
            "python": platform.python_version(),
            "cpu_count": os.cpu_count(),
            "numba_threads": numba.get_num_threads(),
        },
    }


def _fmt(v: float) -> str:
    return repr(float(v))


def write_filter_csv(run, path, timing: bool = False) -> None:
    """``t,functional,estimate,sd,ess,step_wall_ms``; exact filters leave ess blank."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "functional", "estimate", "sd", "ess", "step_wall_ms"])
        if isinstance(run, FilterRun):
            for est in run.estimates:
                wall = _fmt(est.step_wall * 1e3) if timing else ""
                for name, m, s in zip(est.names, est.mean, est.sd):
                    w.writerow([_fmt(est.time), name, _fmt(m), _fmt(s), _fmt(est.ess), wall])
        else:  # ExactFilterResult
            for i, t in enumerate(run.times):
                for k, name in enumerate(run.names):
                    w.writerow([_fmt(t), name, _fmt(run.mean[i, k]), _fmt(run.sd[i, k]), "", ""])


def emit_plot_data(bundle: ExperimentBundle, path) -> None:
    """Aligned columns: truth, both estimates, and mean +/- sd bands (raw units)."""
    cols = ["t"]
    for s in bundle.species:
        cols += [f"truth_{s}", f"full_{s}", f"full_{s}_lower", f"full_{s}_upper",
                 f"reduced_{s}", f"reduced_{s}_lower", f"reduced_{s}_upper"]
    fm, fs = bundle.full.means(), bundle.full.sds()
    rm, rs = bundle.reduced.means(), bundle.reduced.sds()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for i, t in enumerate(bundle.times):
            row = [_fmt(t)]
            for k in range(len(bundle.species)):
                row += [
                    _fmt(bundle.truth[i, k]),
                    _fmt(fm[i, k]), _fmt(fm[i, k] - fs[i, k]), _fmt(fm[i, k] + fs[i, k]),
                    _fmt(rm[i, k]), _fmt(rm[i, k] - rs[i, k]), _fmt(rm[i, k] + rs[i, k]),
                ]
            w.writerow(row)


def _dump_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_bundle(bundle: ExperimentBundle, out) -> dict:
    """Write every artifact; returns sha256 of the deterministic files."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    timing = bundle.config.timing
    with open(out / "truth.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", *bundle.species])
        for t, x in zip(bundle.times, bundle.truth):
            w.writerow([_fmt(t), *(_fmt(v) for v in x)])
    write_observations_csv(bundle.observations, out / "observations.csv")
    write_filter_csv(bundle.full, out / "filter_full.csv", timing)
    write_filter_csv(bundle.reduced, out / "filter_reduced.csv", timing)
    emit_plot_data(bundle, out / "plot.csv")
    cfg = asdict(bundle.config)
    cfg["config"] = os.path.basename(cfg["config"]) if cfg["config"] else None
    summary = {
        "config": cfg,
        "observations": len(bundle.times),
        "coverage_reduced_in_full_band": bundle.coverage,
        "final_ess": {
            "full": bundle.full.estimates[-1].ess,
            "reduced": bundle.reduced.estimates[-1].ess,
        },
        "timing_file": TIMING_FILE,
    }
    _dump_json(summary, out / "summary.json")
    _dump_json(bundle.timing, out / TIMING_FILE)
    hashes = {
        p.name: hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(out.iterdir())
        if p.is_file() and p.name not in (TIMING_FILE, "manifest.json")
        and not (timing and p.name.startswith("filter_"))
    }
    _dump_json(hashes, out / "manifest.json")
    return hashes


def run_convergence_study(
    model: LoadedModel,
    N_list=(10, 100, 1000),
    n_samples: int = 1000,
    t: float = 10.0,
    species: str = "S4",
    seed: int = 0,
    hybrid: HybridStepConfig | None = None,
) -> dict:
    """KS distance between exact and reduced marginals of one species at time t.

    Both models start from the same initial draws and, reaction by reaction,
    consume the same unit Poisson streams (common random numbers); the reduced
    model has no N, so its sample is shared by every N.
    """
    N_list = [float(N) for N in N_list]
    if any(b <= a for a, b in zip(N_list, N_list[1:])):
        raise ValueError("N_list must be increasing")
    i = model.net.index(species)
    stream = RngStream(seed, STREAMS["convergence"])
    x0 = model.net.sample_initial(stream.substream(0).generator(), n_samples)
    reduced = reduce(model.net, model.spec)
    red = ReducedKernel(reduced, hybrid)(x0, t, stream.substream(1))[:, i]
    rows = []
    for N in N_list:
        mN = model.with_N(N)
        full = FullKernel(mN.net, mN.spec)(x0, t, stream.substream(1))[:, i]
        rows.append({
            "N": N,
            "ks": float(ks_2samp(full, red).statistic),
            "full_mean": float(full.mean()),
            "reduced_mean": float(red.mean()),
        })
    ks = [r["ks"] for r in rows]
    return {
        "species": species,
        "t": t,
        "n_samples": n_samples,
        "results": rows,
        "monotone_decreasing": (all(b < a for a, b in zip(ks, ks[1:])) if len(ks) > 1 else None),
    }


def run_oracle_validation(
    model: LoadedModel | None = None,
    particles: int = 50_000,
    steps: int = 20,
    replicates: int = 30,
    seed: int = 0,
) -> dict:
    """Compare the exact-kernel particle filter with the truncated exact filter.

    The PF standard error at each step is the spread of ``replicates``
    independent filter runs; replicate 0 is the run under test.
    """
    start = time.perf_counter()
    model = model or load_model(packaged_model("gene_mrna"))
    bounds_doc = (model.doc.get("oracle") or {}).get("bounds")
    if not bounds_doc:
        raise ConfigError("model has no oracle.bounds section")
    bounds = tuple(int(bounds_doc[n]) for n in model.net.names)
    space = TruncatedStateSpace(bounds)
    horizon = steps * model.observation.sample_period
    _, _, obs = synthesize(model, horizon, seed)
    funcs = species_functionals(model.net.names, model.raw_factor)
    exact = exact_filter(
        model.net, model.spec, space, model.observation, obs,
        initial_distribution(model.net, space), funcs, factor=model.spec.species_factor(),
    )
    kern = FullKernel(model.net, model.spec)
    runs = [
        run_filter(kern, model.observation, model.net.sample_initial, obs, particles,
                   seed + 1000 * (r + 1), funcs)
        for r in range(replicates)
    ]
    means = np.array([r.means() for r in runs])  # (R, T, k)
    se = means.std(axis=0, ddof=1)
    dev = np.abs(means[0] - exact.mean)
    return {
        "times": obs.times.tolist(),
        "names": exact.names,
        "exact_mean": exact.mean.tolist(),
        "pf_mean": means[0].tolist(),
        "pf_se": se.tolist(),
        "z": (dev / se).tolist(),
        "max_leak": float(np.max(exact.leak)),
        "particles": particles,
        "replicates": replicates,
        "runtime_s": time.perf_counter() - start,
        "exact": exact,
        "runs": runs,
    }
