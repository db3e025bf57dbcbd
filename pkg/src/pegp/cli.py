"""Command-line front end: one subcommand per pipeline stage.

Exit codes: 0 success, 1 usage error, 2 validation error, 3 numerical
failure.  Errors are also printed to stderr as one JSON object.  Every
command writes ``manifest_<command>.json`` next to its outputs with content
hashes of inputs and outputs, the config hash, the seed and the version.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, config_from_dict, load_config
from .data import (SpaceTimeGrid, fmt, read_field, read_observations,
                   write_csv, write_field, write_observations, write_trajectories)
from .diagnostics import diagnose, share_rows, similarity_rows, write_shares, write_similarity
from .errors import NumericalError, ValidationError
from .experiment import make_truth, observe, run_sweep, svgp_config
from .metrics import mae_rmse, summarize, write_results
from .svgp import load_model, predict_field, save_model, train

log = logging.getLogger("pegp")

VARIANCE_HEADER = ("x_m", "t_s", "var_rho_latent", "var_v_latent", "var_rho_obs", "var_v_obs")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _manifest(out: Path, command: str, cfg: ExperimentConfig | None, seed, inputs, outputs):
    doc = {
        "command": command,
        "version": __version__,
        "seed": seed,
        "config_sha256": cfg.digest() if cfg is not None else None,
        "inputs": {Path(p).name: _sha256(p) for p in inputs},
        "outputs": {Path(p).name: _sha256(p) for p in outputs},
    }
    path = out / f"manifest_{command}.json"
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return path


def _need_file(path, what: str) -> Path:
    if path is None:
        raise ValidationError(f"missing --{what}")
    p = Path(path)
    if not p.is_file():
        raise ValidationError(f"{what} file {p} not found")
    return p


def _config(args) -> tuple[ExperimentConfig, list]:
    if args.config:
        cfg = load_config(args.config)
        inputs = [args.config]
    else:
        cfg = config_from_dict({})
        inputs = []
    if args.seed is not None:
        cfg.sampling.seeds = [args.seed]
        cfg.model = {**cfg.model, "seed": args.seed}
    return cfg, inputs


def _out_dir(args, cfg: ExperimentConfig | None) -> Path:
    out = Path(args.out or (cfg.output if cfg is not None else "out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _seed(args, cfg: ExperimentConfig) -> int:
    return args.seed if args.seed is not None else int(cfg.sampling.seeds[0])


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------

def cmd_simulate(args):
    cfg, inputs = _config(args)
    out = _out_dir(args, cfg)
    truth = make_truth(cfg)
    f, t = out / "field.csv", out / "trajectories.csv"
    write_field(f, truth.field)
    write_trajectories(t, truth.trajectories)
    _manifest(out, "simulate", cfg, _seed(args, cfg), inputs, [f, t])


def _truth_from_files(args, cfg):
    from .data import read_trajectories
    from .experiment import Truth
    if args.field:
        field_ = read_field(_need_file(args.field, "field"))
        if args.trajectories:
            traj = read_trajectories(_need_file(args.trajectories, "trajectories"))
        else:
            traj = make_truth(cfg).trajectories
        return Truth(field_, traj), [args.field] + ([args.trajectories] if args.trajectories else [])
    return make_truth(cfg), []


def cmd_sample(args):
    cfg, inputs = _config(args)
    out = _out_dir(args, cfg)
    truth, extra = _truth_from_files(args, cfg)
    seed = _seed(args, cfg)
    obs = observe(cfg, truth, seed)
    o = out / "observations.csv"
    write_observations(o, obs)
    _manifest(out, "sample", cfg, seed, inputs + extra, [o])


def cmd_fit(args):
    cfg, inputs = _config(args)
    out = _out_dir(args, cfg)
    obs_path = _need_file(args.observations, "observations")
    obs = read_observations(obs_path)
    scenario = None
    if not cfg.scenario.field_path:
        from .experiment import build_scenario
        scenario = build_scenario(cfg)
    seed = _seed(args, cfg)
    state = train(obs, svgp_config(cfg, seed=seed, scenario=scenario))
    m, lg = out / "model.json", out / "train_log.csv"
    save_model(m, state)
    write_csv(lg, ("iteration", "best_elbo"),
              [(k, fmt(v)) for k, v in enumerate(state.meta.get("trace", []))])
    _manifest(out, "fit", cfg, seed, inputs + [obs_path], [m, lg])


def _grid_for(args, cfg) -> tuple[SpaceTimeGrid, list]:
    if args.field:
        p = _need_file(args.field, "field")
        return read_field(p).grid, [p]
    if cfg.scenario.grid is not None:
        return SpaceTimeGrid(**{k: float(v) for k, v in cfg.scenario.grid.items()}), []
    from .experiment import build_scenario
    return build_scenario(cfg).grid, []


def cmd_predict(args):
    cfg, inputs = _config(args)
    out = _out_dir(args, cfg)
    mp = _need_file(args.model, "model")
    state = load_model(mp)
    grid, extra = _grid_for(args, cfg)
    pf = predict_field(state, grid)
    f, v = out / "prediction.csv", out / "variance.csv"
    write_field(f, pf.as_field())
    rows = []
    for i, x in enumerate(grid.x_centers):
        for j, t in enumerate(grid.t_centers):
            rows.append((fmt(x), fmt(t), fmt(pf.var_rho_latent[i, j]), fmt(pf.var_v_latent[i, j]),
                         fmt(pf.var_rho_obs[i, j]), fmt(pf.var_v_obs[i, j])))
    write_csv(v, VARIANCE_HEADER, rows)
    _manifest(out, "predict", cfg, None, inputs + [mp] + extra, [f, v])


def cmd_evaluate(args):
    cfg, inputs = _config(args)
    out = _out_dir(args, cfg)
    tp = _need_file(args.truth, "truth")
    ep = _need_file(args.estimate, "estimate")
    truth = read_field(tp)
    est = read_field(ep, truth.grid)
    row = mae_rmse(truth, est, args.method, args.p if args.p is not None else "", args.seed
                   if args.seed is not None else "")
    row = row.convert(cfg.metrics.speed_unit, cfg.metrics.density_unit)
    m = out / "metrics.csv"
    write_results(m, [row])
    _manifest(out, "evaluate", cfg, args.seed, inputs + [tp, ep], [m])


def cmd_sweep(args):
    cfg, inputs = _config(args)
    out = _out_dir(args, cfg)
    rows = run_sweep(cfg, jobs=max(1, args.jobs))
    rows = [r.convert(cfg.metrics.speed_unit, cfg.metrics.density_unit) for r in rows]
    r, s = out / "results.csv", out / "summary.csv"
    write_results(r, rows)
    write_results(s, summarize(rows))
    failed = [x for x in rows if x.error]
    for x in failed:
        log.warning("failed cell %s p=%s seed=%s: %s", x.method, x.p, x.seed, x.error)
    _manifest(out, "sweep", cfg, _seed(args, cfg), inputs, [r, s])


def cmd_diagnose(args):
    cfg, inputs = _config(args)
    out = _out_dir(args, cfg)
    mp = _need_file(args.model, "model")
    state = load_model(mp)
    if args.field:
        fp = _need_file(args.field, "field")
        field_ = read_field(fp)
        extra = [fp]
    else:
        field_ = make_truth(cfg).field
        extra = []
    d = cfg.diagnostics
    seed = args.seed if args.seed is not None else d.seed
    rep, sims = diagnose(state, field_, d.n, seed, d.v_threshold)
    p = cfg.sampling.penetration
    sh, si = out / "shares.csv", out / "similarity.csv"
    write_shares(sh, share_rows(p, rep))
    write_similarity(si, similarity_rows(p, sims))
    _manifest(out, "diagnose", cfg, seed, inputs + [mp] + extra, [sh, si])


def _read_variance(path, grid):
    from .data import _read_csv
    a = np.array(_read_csv(path, VARIANCE_HEADER), dtype=float)
    i, j = grid.cell_index(a[:, 0], a[:, 1])
    vr = np.full(grid.shape, np.nan)
    vv = np.full(grid.shape, np.nan)
    vr[i, j] = a[:, 4]
    vv[i, j] = a[:, 5]
    return vr, vv


def cmd_plot(args):
    from .plotting import plot_field
    out = Path(args.out or "out")
    out.mkdir(parents=True, exist_ok=True)
    fp = _need_file(args.field, "field")
    f = read_field(fp)
    inputs = [fp]
    vr = vv = None
    if args.variance:
        vp = _need_file(args.variance, "variance")
        vr, vv = _read_variance(vp, f.grid)
        inputs.append(vp)
    png = out / (Path(fp).stem + ".png")
    rho = np.where(f.mask, f.rho, np.nan)
    v = np.where(f.mask, f.v, np.nan)
    plot_field(png, f.grid, rho, v, vr, vv, title=Path(fp).stem)
    _manifest(out, "plot", None, None, inputs, [png])


COMMANDS = {
    "simulate": (cmd_simulate, "simulate the truth field and probe trajectories"),
    "sample": (cmd_sample, "sample probe or loop observations"),
    "fit": (cmd_fit, "train a sparse GP on observations"),
    "predict": (cmd_predict, "predict a field and its variances on a grid"),
    "evaluate": (cmd_evaluate, "score an estimate against the truth"),
    "sweep": (cmd_sweep, "penetration-rate comparison of methods"),
    "diagnose": (cmd_diagnose, "physics/residual shares and similarity"),
    "plot": (cmd_plot, "render field (and variance) CSVs as PNG heatmaps"),
}


def _common(suppress: bool) -> argparse.ArgumentParser:
    """Global flags; on subcommands they default to SUPPRESS so either position works."""
    d = {"default": argparse.SUPPRESS} if suppress else {}
    c = _Parser(add_help=False)
    c.add_argument("--config", help="experiment config JSON", **d)
    c.add_argument("--seed", type=int, help="seed overriding the config", **d)
    c.add_argument("--out", help="output directory", **d)
    c.add_argument("--jobs", type=int, help="parallel sweep workers",
                   **(d or {"default": 1}))
    return c


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pegp", description="Physics-embedded GP traffic state estimation",
                parents=[_common(False)])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    common = _common(True)
    for name, (_, help_) in COMMANDS.items():
        sp = sub.add_parser(name, help=help_, parents=[common])
        if name in ("sample", "predict", "diagnose", "plot"):
            sp.add_argument("--field", help="field CSV")
        if name == "sample":
            sp.add_argument("--trajectories", help="trajectory CSV")
        if name == "fit":
            sp.add_argument("--observations", help="observation CSV")
        if name in ("predict", "diagnose"):
            sp.add_argument("--model", help="model JSON")
        if name == "evaluate":
            sp.add_argument("--truth", help="truth field CSV")
            sp.add_argument("--estimate", help="estimated field CSV")
            sp.add_argument("--method", default="estimate", help="method label")
            sp.add_argument("--p", type=float, help="penetration label")
        if name == "plot":
            sp.add_argument("--variance", help="variance CSV from predict")
    return p


def _fail(code: int, kind: str, message: str) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message, "exit_code": code}) + "\n")
    return code


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("PEGP_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        if not args.command:
            raise UsageError("a subcommand is required: " + ", ".join(COMMANDS))
        COMMANDS[args.command][0](args)
        return 0
    except UsageError as e:
        return _fail(1, "usage", str(e))
    except (ValidationError, FileNotFoundError) as e:
        return _fail(2, "validation", str(e))
    except (NumericalError, np.linalg.LinAlgError) as e:
        return _fail(3, "numerical", str(e))
    except ValueError as e:
        return _fail(2, "validation", str(e))


if __name__ == "__main__":
    sys.exit(main())
