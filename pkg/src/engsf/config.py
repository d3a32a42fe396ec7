"""Experiment configuration: a flat INI-style ``key = value`` format.

Example::

    experiment = ex3
    filter = engsf
    N = 200
    seeds = 1, 2, 3

    [model]
    steps = 2000

Keys before the first ``[section]`` header may be any known key; keys inside
a section must belong to it. ``#`` starts a comment anywhere, ``;`` only at
the start of a line. Unknown keys and sections are errors.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from .dynamics import L63_X0
from .errors import ParseError, ValidationError
from .filter import BandwidthRule

EXPERIMENTS = ("ex1", "ex2", "ex3", "ex4", "custom")
FILTERS = ("engsf", "enkf", "enkf_appendix", "ensrf", "sir")
DENSITIES = ("gaussian", "kde")


@dataclass
class ExperimentConfig:
    experiment: str = "ex1"
    filter: str = "engsf"
    N: int = 100
    seeds: tuple = (1,)
    bandwidth: BandwidthRule = BandwidthRule.MODIFIED
    output: str = "runs"
    spinup: int = 0  # leading RMSE entries left out of the time average
    ensemble_density: str = "gaussian"

    dt: float = 0.01
    steps: int = 1000
    truth_spinup: int = 0
    noise_var: tuple = (0.0,)
    x0: tuple = (0.0,)
    m: int = 1
    F: float = 8.0
    gamma: float = 10.0
    rho: float = 28.0
    beta: float = 8.0 / 3.0
    kappa: float = 0.7
    rate: float = 0.0
    prior_mean: tuple = (0.0,)
    prior_var: tuple = (1.0,)

    obs_var: tuple = (1.0,)
    obs_every: int = 1
    d: float = 0.0

    grid_points: int = 10000
    grid_lo: float = -4.0
    grid_hi: float = 4.0
    mode_sep: float = 1.5
    mode_std: float = 0.1
    reference_N: int = 0
    pdf_time: float = 4.0

    def replace(self, **changes) -> "ExperimentConfig":
        return validate(dataclasses.replace(self, **changes))

    def cell_name(self) -> str:
        return f"{self.experiment}-{self.filter}-N{self.N}"

    def as_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            out[f.name] = v.value if isinstance(v, BandwidthRule) else (list(v) if isinstance(v, tuple) else v)
        return out


SECTIONS = {
    "experiment": {"experiment", "filter", "N", "seeds", "seed", "bandwidth", "output",
                   "spinup", "ensemble_density"},
    "model": {"dt", "steps", "truth_spinup", "noise_var", "x0", "m", "F", "gamma", "rho",
              "beta", "kappa", "rate", "prior_mean", "prior_var"},
    "observation": {"obs_var", "obs_every", "d"},
    "grid": {"grid_points", "grid_lo", "grid_hi", "mode_sep", "mode_std", "reference_N",
             "pdf_time"},
}
ALL_KEYS = set().union(*SECTIONS.values())


def lorenz95_x0(m=40, F=8.0) -> tuple:
    """Rest state x_j = F with the 20th variable nudged to 1.001 F."""
    return tuple(F * 1.001 if j == min(19, m - 1) else F for j in range(m))


DEFAULTS = {
    "ex1": dict(N=200, m=1, obs_var=(0.01,), d=0.0, grid_points=10000, grid_lo=-4.0,
                grid_hi=4.0, steps=0),
    "ex2": dict(N=100, m=1, kappa=0.7, dt=0.01, steps=1000, x0=(0.8,), obs_var=(0.1,),
                obs_every=50, prior_mean=(0.8,), prior_var=(0.1,), grid_points=1000,
                grid_lo=-2.5, grid_hi=2.5, reference_N=10000, pdf_time=4.0),
    "ex3": dict(N=200, m=3, dt=0.01, steps=10000, noise_var=(2.0, 12.13, 12.31), x0=L63_X0,
                obs_var=(2.5 ** 2,), obs_every=50, prior_mean=L63_X0, prior_var=(4.0,)),
    "ex4": dict(N=100, m=40, F=8.0, dt=0.01, truth_spinup=2000, steps=5000, noise_var=(25.0,),
                obs_var=(2.0,), obs_every=5, prior_mean=(2.0,), prior_var=(2.0,)),
    "custom": dict(m=1, rate=-1.0, steps=500, noise_var=(0.1,), x0=(1.0,), obs_var=(0.1,),
                   obs_every=10, prior_mean=(0.0,), prior_var=(1.0,)),
}

_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}


def _convert(key, raw, line):
    kind = _FIELD_TYPES["seeds" if key == "seed" else key]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "tuple":
            items = [s for s in raw.split(",") if s.strip()]
            if not items:
                raise ValueError("empty list")
            conv = int if key in ("seeds", "seed") else float
            return tuple(conv(s) for s in items)
        if kind == "BandwidthRule":
            return BandwidthRule.parse(raw)
        return raw
    except ValueError as exc:
        raise ParseError(f"bad value for {key!r}: {exc}", line) from None


def parse_config(text) -> ExperimentConfig:
    values = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line or line.startswith(";"):
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ParseError(f"malformed section header {line!r}", lineno)
            section = line[1:-1].strip().lower()
            if section not in SECTIONS:
                raise ParseError(f"unknown section [{section}]", lineno)
            continue
        if "=" not in line:
            raise ParseError(f"expected key = value, got {line!r}", lineno)
        key, val = (s.strip() for s in line.split("=", 1))
        allowed = SECTIONS[section] if section else ALL_KEYS
        if key not in allowed:
            where = f"section [{section}]" if section else "configuration"
            raise ParseError(f"unknown key {key!r} in {where}", lineno)
        if not val:
            raise ParseError(f"missing value for {key!r}", lineno)
        name = "seeds" if key == "seed" else key
        if name in values:
            raise ParseError(f"duplicate key {key!r}", lineno)
        values[name] = _convert(key, val, lineno)
    return build_config(values)


def build_config(values: dict) -> ExperimentConfig:
    """Fill experiment defaults under explicit ``values`` and validate."""
    exp = values.get("experiment", "ex1")
    if exp not in EXPERIMENTS:
        raise ValidationError("experiment", f"expected one of {', '.join(EXPERIMENTS)}")
    merged = dict(DEFAULTS[exp])
    merged.update(values)
    merged["experiment"] = exp
    if exp == "ex4" and "x0" not in values:
        merged["x0"] = lorenz95_x0(merged["m"], merged["F"])
    return validate(ExperimentConfig(**merged))


def _vec(cfg, name, m, positive=False, nonneg=False):
    v = tuple(float(x) for x in getattr(cfg, name))
    if len(v) == 1:
        v = v * m
    if len(v) != m:
        raise ValidationError(name, f"needs 1 or {m} values, got {len(v)}")
    if positive and min(v) <= 0:
        raise ValidationError(name, "must be positive")
    if nonneg and min(v) < 0:
        raise ValidationError(name, "must be non-negative")
    setattr(cfg, name, v)


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    if cfg.experiment not in EXPERIMENTS:
        raise ValidationError("experiment", f"expected one of {', '.join(EXPERIMENTS)}")
    if cfg.filter not in FILTERS:
        raise ValidationError("filter", f"expected one of {', '.join(FILTERS)}")
    if cfg.ensemble_density not in DENSITIES:
        raise ValidationError("ensemble_density", f"expected one of {', '.join(DENSITIES)}")
    if cfg.N < 1:
        raise ValidationError("N", "must be >= 1")
    if cfg.filter in ("enkf", "enkf_appendix", "ensrf") and cfg.N < 2:
        raise ValidationError("N", f"{cfg.filter} needs at least 2 members")
    if not cfg.seeds:
        raise ValidationError("seeds", "at least one seed is required")
    cfg.seeds = tuple(int(s) for s in cfg.seeds)
    if any(s < 0 or s >= 2 ** 64 for s in cfg.seeds):
        raise ValidationError("seeds", "seeds must be 64-bit unsigned integers")
    cfg.bandwidth = BandwidthRule.parse(cfg.bandwidth)
    if cfg.dt <= 0:
        raise ValidationError("dt", "must be positive")
    for name in ("steps", "truth_spinup", "spinup", "reference_N"):
        if getattr(cfg, name) < 0:
            raise ValidationError(name, "must be >= 0")
    if cfg.obs_every < 1:
        raise ValidationError("obs_every", "must be >= 1")
    if cfg.experiment == "ex4" and cfg.m < 4:
        raise ValidationError("m", "Lorenz95 needs m >= 4")
    if cfg.experiment == "ex3" and cfg.m != 3:
        raise ValidationError("m", "Lorenz63 has m = 3")
    if cfg.experiment in ("ex1", "ex2") and cfg.m != 1:
        raise ValidationError("m", f"{cfg.experiment} is one-dimensional")
    if cfg.m < 1:
        raise ValidationError("m", "must be >= 1")
    _vec(cfg, "noise_var", cfg.m, nonneg=True)
    _vec(cfg, "x0", cfg.m)
    _vec(cfg, "prior_mean", cfg.m)
    _vec(cfg, "prior_var", cfg.m, nonneg=True)
    _vec(cfg, "obs_var", cfg.m, positive=True)
    if cfg.experiment != "ex1" and cfg.steps < cfg.obs_every:
        raise ValidationError("steps", "run is shorter than one observation interval")
    if cfg.grid_points < 2:
        raise ValidationError("grid_points", "need at least 2 points")
    if not cfg.grid_hi > cfg.grid_lo:
        raise ValidationError("grid_hi", "must exceed grid_lo")
    if cfg.mode_std <= 0:
        raise ValidationError("mode_std", "must be positive")
    if cfg.kappa < 0:
        raise ValidationError("kappa", "must be non-negative")
    return cfg


def config_text(cfg: ExperimentConfig) -> str:
    """Serialize back to the INI format (round-trips through ``parse_config``)."""
    d = cfg.as_dict()
    lines = []
    for section, keys in SECTIONS.items():
        lines.append(f"[{section}]")
        for key in sorted(keys - {"seed"}):
            v = d[key]
            if isinstance(v, list):
                v = ", ".join(repr(x) for x in v)
            lines.append(f"{key} = {v}")
        lines.append("")
    return "\n".join(lines)
