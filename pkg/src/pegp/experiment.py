"""Glue between an ExperimentConfig and the library: truth, sampling, methods."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

from .baselines import ASMConfig, RotatedGPConfig, asm_reconstruct, rotated_gp_reconstruct
from .config import ExperimentConfig
from .data import (Field, ObservationSet, SpaceTimeGrid, TrajectorySet, read_field,
                   read_trajectories, sample_loops, sample_probe)
from .errors import ValidationError
from .metrics import failed_row, mae_rmse, penetration_sweep
from .physics import FundamentalDiagram
from .sim import SimScenario, arz_relax, default_scenario, emit_trajectories, godunov_lwr, ring_scenario
from .svgp import SVGPConfig, predict_field, train

log = logging.getLogger(__name__)

METHOD_MODES = {"pegp_lwr": "lwr_bidirectional", "pegp_arz": "arz", "plain_se": "plain_se"}


def build_scenario(cfg: ExperimentConfig) -> SimScenario:
    s = cfg.scenario
    base = default_scenario() if s.name == "default" else ring_scenario()
    kw = {}
    if s.grid is not None:
        kw["grid"] = SpaceTimeGrid(**{k: float(v) for k, v in s.grid.items()})
    if s.v_f is not None or s.rho_jam is not None:
        kw["fd"] = FundamentalDiagram(s.v_f if s.v_f is not None else base.fd.v_f,
                                      s.rho_jam if s.rho_jam is not None else base.fd.rho_jam)
    for name in ("rho_base", "boundary", "tau", "refine"):
        if getattr(s, name) is not None:
            kw[name] = getattr(s, name)
    if s.plateaus is not None:
        kw["plateaus"] = tuple(tuple(float(v) for v in p) for p in s.plateaus)
    if s.boundary_rho is not None:
        kw["boundary_rho"] = tuple(float(v) for v in s.boundary_rho)
    if s.signal is not None:
        kw["signal"] = tuple(float(v) for v in s.signal) or None
    try:
        return replace(base, **kw)
    except ValueError as err:
        raise ValidationError(f"invalid scenario: {err}") from err


@dataclass
class Truth:
    field: Field
    trajectories: TrajectorySet
    scenario: SimScenario | None = None


def make_truth(cfg: ExperimentConfig) -> Truth:
    """Simulate (or load) the truth field and its probe trajectories."""
    s = cfg.scenario
    if s.field_path:
        field_ = read_field(s.field_path)
        traj = read_trajectories(s.trajectories_path) if s.trajectories_path else None
        if traj is None:
            traj = emit_trajectories(field_, s.n_vehicles, s.trajectory_seed, periodic=False)
        return Truth(field_, traj, None)
    sc = build_scenario(cfg)
    res = (godunov_lwr if s.solver == "godunov" else arz_relax)(sc, return_result=True)
    traj = emit_trajectories(res.fine, s.n_vehicles, s.trajectory_seed,
                             periodic=sc.boundary == "periodic")
    return Truth(res.field, traj, sc)


def observe(cfg: ExperimentConfig, truth: Truth, seed: int, p: float | None = None) -> ObservationSet:
    """Probe sample at penetration ``p`` (default from config) or loop detectors."""
    sm = cfg.sampling
    if sm.mode == "loops":
        return sample_loops(truth.field, sm.positions)
    return sample_probe(truth.trajectories, truth.field, sm.penetration if p is None else p, seed)


def svgp_config(cfg: ExperimentConfig, method: str = "", seed: int | None = None,
                scenario: SimScenario | None = None) -> SVGPConfig:
    """Model section plus per-method overrides; the FD comes from the scenario."""
    kw = dict(cfg.model)
    if method in METHOD_MODES:
        kw["mode"] = METHOD_MODES[method]
        kw.update(cfg.sweep.overrides.get(method, {}))
    if seed is not None:
        kw["seed"] = seed
    if scenario is not None:
        kw["fd"] = scenario.fd
        kw["pressure"] = scenario.pressure_law
    for k in ("extra_noise",):
        if k in kw:
            kw[k] = tuple(kw[k])
    try:
        return SVGPConfig(**kw)
    except TypeError as err:
        raise ValidationError(str(err)) from err


@dataclass(frozen=True)
class MethodRunner:
    """Picklable reconstruction method for sweeps."""

    name: str
    asm: ASMConfig | None = None
    rotated: RotatedGPConfig | None = None
    model: SVGPConfig | None = None

    def __call__(self, obs: ObservationSet, truth: Field, seed: int) -> Field:
        if self.asm is not None:
            return asm_reconstruct(obs, truth.grid, self.asm)
        if self.rotated is not None:
            return rotated_gp_reconstruct(obs, truth.grid, replace(self.rotated, seed=seed)).field
        state = train(obs, replace(self.model, seed=seed))
        return predict_field(state, truth.grid).as_field()


def make_methods(cfg: ExperimentConfig, scenario: SimScenario | None = None) -> dict:
    out = {}
    for m in cfg.sweep.methods:
        ov = cfg.sweep.overrides.get(m, {})
        if m == "asm":
            out[m] = MethodRunner(m, asm=ASMConfig(**{**cfg.baselines.asm, **ov}))
        elif m == "rotated_gp":
            out[m] = MethodRunner(m, rotated=RotatedGPConfig(**{**cfg.baselines.rotated_gp, **ov}))
        else:
            out[m] = MethodRunner(m, model=svgp_config(cfg, m, scenario=scenario))
    return out


def run_sweep(cfg: ExperimentConfig, truth: Truth | None = None, jobs: int = 1):
    truth = truth or make_truth(cfg)
    methods = make_methods(cfg, truth.scenario)
    return penetration_sweep(methods, truth.field, truth.trajectories, cfg.sampling.penetrations,
                             cfg.sampling.seeds, jobs)


def run_loops(cfg: ExperimentConfig, truth: Truth | None = None) -> list:
    """Score every method on the loop-detector observations for each seed.

    The observations are fixed; the seed only drives inducing-point and
    subsample selection.
    """
    truth = truth or make_truth(cfg)
    obs = sample_loops(truth.field, cfg.sampling.positions)
    rows = []
    for name, method in make_methods(cfg, truth.scenario).items():
        for seed in cfg.sampling.seeds:
            try:
                rows.append(mae_rmse(truth.field, method(obs, truth.field, seed), name, "loops", seed))
            except Exception as err:
                log.warning("loop run %s seed=%s failed: %s", name, seed, err)
                rows.append(failed_row(name, "loops", seed, err))
    return rows
