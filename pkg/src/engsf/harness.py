"""Experiment runner for the four benchmark studies and custom linear runs.

Every random draw comes from an ``RngStream(seed, label)`` with a label naming
its role ("truth", "init", "forecast/step=k", "analysis/step=k", ...), so all
filters run with one seed see identical truths and observations.
"""

from __future__ import annotations

import csv
import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import EnkfVariant, enkf_update, ensrf_update, sir_update
from .config import ExperimentConfig
from .dynamics import (
    TrajectoryRecord,
    double_well_model,
    linear_model,
    lorenz63_model,
    lorenz95_model,
    simulate_truth,
)
from .errors import EngsfError, MissingRun
from .filter import ObservationOp, engsf_assimilate, forecast
from .metrics import (
    GridDensity,
    MetricSeries,
    gaussian_on_grid,
    grid_bayes_posterior,
    kl_divergence,
    mixture_density_on_grid,
    rmse_series,
    time_averaged,
    uniform_grid,
)
from .stats import RngStream, WeightedEnsemble, sample_mvn, weighted_covariance, weighted_mean

log = logging.getLogger(__name__)


def fmt(x) -> str:
    return "%.17g" % x


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([r if isinstance(r, str) else fmt(r) for r in row])


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array(rows[1:], dtype=float).reshape(len(rows) - 1, len(rows[0]))


# -- problem setup ---------------------------------------------------------

def build_model(cfg: ExperimentConfig):
    noise_var = np.asarray(cfg.noise_var)
    if cfg.experiment == "ex2":
        return double_well_model(cfg.kappa, cfg.dt)
    if cfg.experiment == "ex3":
        return lorenz63_model(noise_var, cfg.dt, cfg.gamma, cfg.rho, cfg.beta)
    if cfg.experiment == "ex4":
        model = lorenz95_model(cfg.m, cfg.F, 0.0, cfg.dt)
        model.noise_std = np.sqrt(noise_var)
        return model
    if cfg.experiment == "custom":
        model = linear_model(cfg.rate, cfg.m, cfg.dt)
        model.noise_std = np.sqrt(noise_var)
        return model
    raise ValueError(f"{cfg.experiment} has no dynamics")


def build_obs(cfg: ExperimentConfig) -> ObservationOp:
    return ObservationOp.identity(cfg.m, cfg.obs_var)


def ex1_problem(cfg: ExperimentConfig):
    """Grid, prior, likelihood and grid-Bayes posterior of the static bimodal update."""
    x = uniform_grid(cfg.grid_lo, cfg.grid_hi, cfg.grid_points)
    a, s = cfg.mode_sep, cfg.mode_std
    prior = GridDensity.normalized(x, np.exp(-0.5 * ((x - a) / s) ** 2) + np.exp(-0.5 * ((x + a) / s) ** 2))
    R = cfg.obs_var[0]
    lik = np.exp(-0.5 * (cfg.d - x) ** 2 / R) / np.sqrt(2.0 * np.pi * R)
    return x, prior, lik, grid_bayes_posterior(prior, lik)


def sample_ex1_prior(cfg: ExperimentConfig, N, rng) -> WeightedEnsemble:
    g = rng.generator()
    sign = np.where(g.random(N) < 0.5, 1.0, -1.0)
    return WeightedEnsemble((sign * cfg.mode_sep + cfg.mode_std * g.standard_normal(N))[None, :])


def initial_ensemble(cfg: ExperimentConfig, N, rng) -> WeightedEnsemble:
    if cfg.experiment == "ex1":
        return sample_ex1_prior(cfg, N, rng)
    X = sample_mvn(np.asarray(cfg.prior_mean), np.diag(cfg.prior_var), N, rng)
    return WeightedEnsemble(X)


def make_truth(cfg: ExperimentConfig, seed) -> TrajectoryRecord:
    model = build_model(cfg)
    return simulate_truth(model, cfg.x0, cfg.steps, build_obs(cfg), cfg.obs_every,
                          RngStream(seed, "truth"), spinup=cfg.truth_spinup)


# -- filters ---------------------------------------------------------------

def assimilate(name, ens, obs, y, rng, cfg: ExperimentConfig):
    """One analysis with filter ``name``.

    Returns (next ensemble, state estimate, density source). The density
    source is a GaussianSumPosterior or WeightedEnsemble for 1-D plots.
    """
    if name == "engsf":
        res = engsf_assimilate(ens, obs, y, rng, cfg.bandwidth)
        return res.ensemble, res.posterior.mean(), res.posterior
    if name in ("enkf", "enkf_appendix"):
        variant = EnkfVariant.APPENDIX if name == "enkf_appendix" else EnkfVariant.PERTURBED_OBS
        out = enkf_update(ens, obs, y, rng, variant)
        return out, weighted_mean(out), out
    if name == "ensrf":
        out = ensrf_update(ens, obs, y)
        return out, weighted_mean(out), out
    if name == "sir":
        weighted, out = sir_update(ens, obs, y, rng)
        return out, weighted_mean(weighted), weighted
    raise ValueError(f"unknown filter {name!r}")


def density_on_grid(source, points, cfg: ExperimentConfig, gaussian_fit=False) -> GridDensity:
    """Posterior density of a filter on a 1-D grid.

    Gaussian-update filters are shown as the Gaussian with their ensemble
    moments when ``ensemble_density = gaussian``; everything else goes through
    ``mixture_density_on_grid``.
    """
    if gaussian_fit and cfg.ensemble_density == "gaussian":
        mean = weighted_mean(source)[0]
        var = max(weighted_covariance(source)[0, 0], np.min(np.diff(points)) ** 2)
        return gaussian_on_grid(points, mean, var)
    return mixture_density_on_grid(source, points, cfg.bandwidth)


def _gaussian_update(name) -> bool:
    return name in ("enkf", "enkf_appendix", "ensrf")


@dataclass
class TwinRun:
    estimates: np.ndarray  # (m, T+1)
    densities: dict = field(default_factory=dict)  # step -> density source
    gaussian_resamples: int = 0


def run_filter(cfg: ExperimentConfig, truth: TrajectoryRecord, seed, filter_name=None, N=None,
               prefix="", keep_densities=False) -> TwinRun:
    """Run one filter through a twin experiment, recording the mean at every step."""
    name = filter_name or cfg.filter
    N = N or cfg.N
    model = build_model(cfg)
    obs = build_obs(cfg)
    ens = initial_ensemble(cfg, N, RngStream(seed, prefix + "init"))
    obs_at = truth.observation_map()
    T = truth.times.shape[0] - 1
    est = np.empty((cfg.m, T + 1))
    est[:, 0] = weighted_mean(ens)
    run = TwinRun(est)
    for k in range(1, T + 1):
        ens = forecast(ens, model, 1, RngStream(seed, f"{prefix}forecast/step={k}").generator())
        if k in obs_at:
            ens, estimate, source = assimilate(name, ens, obs, obs_at[k],
                                               RngStream(seed, f"{prefix}analysis/step={k}"), cfg)
            est[:, k] = estimate
            if keep_densities:
                run.densities[k] = source
        else:
            est[:, k] = weighted_mean(ens)
    return run


# -- per-seed execution ----------------------------------------------------

@dataclass
class SeedResult:
    seed: int
    times: np.ndarray
    truth: np.ndarray
    estimate: np.ndarray
    rmse: MetricSeries
    time_avg_rmse: float
    kl: MetricSeries | None = None
    grid: dict | None = None  # column name -> values

    @property
    def mean_kl(self):
        return None if self.kl is None else float(np.mean(self.kl.values))


def run_ex1_seed(cfg: ExperimentConfig, seed) -> SeedResult:
    x, prior, lik, post = ex1_problem(cfg)
    obs = build_obs(cfg)
    ens = sample_ex1_prior(cfg, cfg.N, RngStream(seed, "init"))
    _, estimate, source = assimilate(cfg.filter, ens, obs, np.array([cfg.d]),
                                     RngStream(seed, "analysis/step=0"), cfg)
    q = density_on_grid(source, x, cfg, gaussian_fit=_gaussian_update(cfg.filter))
    kl = kl_divergence(post, q)
    truth = np.array([[post.mean()]])
    est = np.atleast_2d(estimate).reshape(1, 1)
    rmse = rmse_series(truth, est, [0.0])
    return SeedResult(seed, np.array([0.0]), truth, est, rmse, time_averaged(rmse),
                      MetricSeries([0.0], [kl]),
                      {"x": x, "prior": prior.values, "likelihood": lik,
                       "true_posterior": post.values, "estimate": q.values})


def run_twin_seed(cfg: ExperimentConfig, seed) -> SeedResult:
    truth = make_truth(cfg, seed)
    one_d = cfg.m == 1
    run = run_filter(cfg, truth, seed, keep_densities=one_d)
    rmse = rmse_series(truth.states, run.estimates, truth.times)
    result = SeedResult(seed, truth.times, truth.states, run.estimates, rmse,
                        time_averaged(rmse, cfg.spinup))
    if not one_d or not run.densities:
        return result

    x = uniform_grid(cfg.grid_lo, cfg.grid_hi, cfg.grid_points)
    steps = sorted(run.densities)
    k_pdf = min(steps, key=lambda k: abs(truth.times[k] - cfg.pdf_time))
    gfit = _gaussian_update(cfg.filter)
    grid = {"x": x, "estimate": density_on_grid(run.densities[k_pdf], x, cfg, gfit).values}
    if cfg.reference_N > 0:
        ref = run_filter(cfg, truth, seed, "sir", cfg.reference_N, prefix="reference/",
                         keep_densities=True)
        kls = []
        for k in steps:
            p = density_on_grid(ref.densities[k], x, cfg)
            q = density_on_grid(run.densities[k], x, cfg, gfit)
            kls.append(kl_divergence(p, q))
            if k == k_pdf:
                grid["reference"] = p.values
        result.kl = MetricSeries(truth.times[steps], kls)
    result.grid = grid
    return result


def run_seed(cfg: ExperimentConfig, seed) -> SeedResult:
    if cfg.experiment == "ex1":
        return run_ex1_seed(cfg, seed)
    return run_twin_seed(cfg, seed)


def write_seed(result: SeedResult, directory: Path) -> list:
    directory.mkdir(parents=True, exist_ok=True)
    m = result.truth.shape[0]
    cols = [f"x{i}" for i in range(m)]
    steps = np.arange(result.times.shape[0])
    files = []

    def emit(name, header, rows):
        write_csv(directory / name, header, rows)
        files.append(str(directory / name))

    emit("truth.csv", ["step", "time"] + cols,
         ([str(k), t, *result.truth[:, k]] for k, t in zip(steps, result.times)))
    emit("estimate.csv", ["step", "time"] + cols,
         ([str(k), t, *result.estimate[:, k]] for k, t in zip(steps, result.times)))
    emit("rmse.csv", ["step", "time", "rmse"],
         ([str(k), t, v] for k, t, v in zip(steps, result.rmse.times, result.rmse.values)))
    if result.grid is not None:
        names = list(result.grid)
        emit("posterior_grid.csv", names, zip(*(result.grid[n] for n in names)))
    if result.kl is not None:
        emit("kl.csv", ["time", "kl"], zip(result.kl.times, result.kl.values))
    return files


# -- manifests -------------------------------------------------------------

@dataclass
class RunManifest:
    config: dict
    cells: list  # one dict per (cell, seed)
    version: str = __version__
    duration: float = 0.0
    path: str | None = None

    @property
    def failed(self) -> list:
        return [c for c in self.cells if c.get("error")]

    def to_json(self) -> str:
        body = {"version": self.version, "duration_seconds": self.duration,
                "config": self.config, "cells": self.cells}
        return json.dumps(body, indent=2, sort_keys=True)

    def save(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(self.to_json() + "\n")
        self.path = str(path)

    @classmethod
    def load(cls, path) -> "RunManifest":
        body = json.loads(Path(path).read_text())
        return cls(body["config"], body["cells"], body.get("version", ""),
                   body.get("duration_seconds", 0.0), str(path))


def _run_cells(cfg: ExperimentConfig, out: Path) -> list:
    cells = []
    for seed in cfg.seeds:
        entry = {"cell": cfg.cell_name(), "experiment": cfg.experiment, "filter": cfg.filter,
                 "N": cfg.N, "seed": seed}
        try:
            result = run_seed(cfg, seed)
        except (EngsfError, np.linalg.LinAlgError) as exc:
            log.warning("%s seed %s failed: %s", cfg.cell_name(), seed, exc)
            entry.update(error=f"{type(exc).__name__}: {exc}", files=[])
        else:
            entry["files"] = write_seed(result, out / cfg.cell_name() / f"seed-{seed}")
            entry["time_avg_rmse"] = result.time_avg_rmse
            entry["mean_kl"] = result.mean_kl
        cells.append(entry)
    return cells


def run_experiment(cfg: ExperimentConfig, out=None) -> RunManifest:
    """Run every seed of ``cfg``, write per-seed CSVs and a manifest.json.

    A failing seed is recorded in the manifest; the remaining seeds still run.
    """
    out = Path(out or cfg.output)
    t0 = time.perf_counter()
    cells = _run_cells(cfg, out)
    manifest = RunManifest(cfg.as_dict(), cells, duration=time.perf_counter() - t0)
    manifest.save(out / cfg.cell_name() / "manifest.json")
    return manifest


def sweep(cfg: ExperimentConfig, param, values, out=None) -> RunManifest:
    """Run ``cfg`` once per value of ``param`` (e.g. N) into a shared manifest."""
    out = Path(out or cfg.output)
    t0 = time.perf_counter()
    cells = []
    for v in values:
        cells.extend(run_experiment(cfg.replace(**{param: v}), out).cells)
    manifest = RunManifest(cfg.as_dict() | {"sweep": {param: list(values)}}, cells,
                           duration=time.perf_counter() - t0)
    manifest.save(out / f"sweep-{cfg.experiment}-{cfg.filter}-{param}.json")
    return manifest


def parse_sweep_values(param, text) -> list:
    conv = int if param in ("N", "steps", "obs_every", "spinup", "truth_spinup", "grid_points") else float
    return [conv(v) for v in text.split(",") if v.strip()]


# -- plot-ready data -------------------------------------------------------

def emit_plot_data(manifest: RunManifest, out_dir=None) -> list:
    """Write per-figure CSV tables from a completed manifest.

    ex1: density curves per N and a KL-vs-N table. Twin experiments: truth,
    estimate and absolute error against time (first seed of each cell) and an
    RMSE-vs-N table.
    """
    ok = [c for c in manifest.cells if not c.get("error")]
    if not ok:
        raise MissingRun("manifest has no completed runs")
    for c in ok:
        missing = [f for f in c["files"] if not os.path.exists(f)]
        if not c["files"] or missing:
            raise MissingRun(f"{c['cell']} seed {c['seed']}: missing {missing or 'all outputs'}")
    if out_dir is None:
        base = Path(manifest.path).parent if manifest.path else Path(manifest.config["output"])
        out_dir = base / "plots"
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    groups = {}
    for c in ok:
        groups.setdefault((c["experiment"], c["filter"], c["N"]), []).append(c)

    summary_rows = []
    for (exp, filt, N), cs in sorted(groups.items()):
        rm = np.array([c["time_avg_rmse"] for c in cs])
        kl = [c["mean_kl"] for c in cs if c.get("mean_kl") is not None]
        summary_rows.append([exp, filt, str(N), str(len(cs)), rm.mean(), rm.std(),
                             np.mean(kl) if kl else float("nan"), np.std(kl) if kl else float("nan")])
        first = min(cs, key=lambda c: c["seed"])
        seed_dir = Path(first["files"][0]).parent
        if exp == "ex1" or (seed_dir / "posterior_grid.csv").exists():
            header, data = read_csv(seed_dir / "posterior_grid.csv")
            path = out_dir / f"density_{exp}_{filt}_N{N}.csv"
            write_csv(path, header, data)
            written.append(str(path))
        if exp != "ex1":
            _, tr = read_csv(seed_dir / "truth.csv")
            _, es = read_csv(seed_dir / "estimate.csv")
            m = tr.shape[1] - 2
            header = ["time"] + [f"truth_x{i}" for i in range(m)] + [f"estimate_x{i}" for i in range(m)] \
                + [f"abs_error_x{i}" for i in range(m)]
            rows = np.column_stack([tr[:, 1], tr[:, 2:], es[:, 2:], np.abs(es[:, 2:] - tr[:, 2:])])
            path = out_dir / f"error_time_{exp}_{filt}_N{N}_seed{first['seed']}.csv"
            write_csv(path, header, rows)
            written.append(str(path))

    path = out_dir / "summary_vs_N.csv"
    write_csv(path, ["experiment", "filter", "N", "n_seeds", "rmse_mean", "rmse_std",
                     "kl_mean", "kl_std"], summary_rows)
    written.append(str(path))
    return written


def oracle_ex1(cfg: ExperimentConfig, path) -> GridDensity:
    """Write the grid-Bayes prior, likelihood and posterior for Example 1."""
    x, prior, lik, post = ex1_problem(cfg)
    write_csv(path, ["x", "prior", "likelihood", "true_posterior"],
              zip(x, prior.values, lik, post.values))
    return post
