"""Error metrics over the valid set and penetration-rate sweeps."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from multiprocessing import get_context
from typing import Callable

import numpy as np

from .data import Field, ObservationSet, TrajectorySet, fmt, sample_probe, write_csv
from .errors import ValidationError

log = logging.getLogger(__name__)

RESULTS_HEADER = ("method", "p", "seed", "mae_v", "rmse_v", "mae_rho", "rmse_rho", "N")
SPEED_UNITS = {"m/s": 1.0, "km/h": 3.6}
DENSITY_UNITS = {"veh/m": 1.0, "veh/km": 1000.0}


@dataclass(frozen=True)
class MetricRow:
    """One scored reconstruction; ``seed`` is ``"mean"`` on summary rows."""

    method: str
    p: float | str
    seed: int | str
    mae_v: float
    rmse_v: float
    mae_rho: float
    rmse_rho: float
    N: int
    error: str | None = None

    def convert(self, speed_unit: str = "m/s", density_unit: str = "veh/m") -> "MetricRow":
        """Same row with speeds and densities rescaled from SI units."""
        if speed_unit not in SPEED_UNITS or density_unit not in DENSITY_UNITS:
            raise ValidationError(f"unknown units {speed_unit!r}, {density_unit!r}")
        a, b = SPEED_UNITS[speed_unit], DENSITY_UNITS[density_unit]
        return MetricRow(self.method, self.p, self.seed, self.mae_v * a, self.rmse_v * a,
                         self.mae_rho * b, self.rmse_rho * b, self.N, self.error)

    def csv_row(self) -> list[str]:
        p = self.p if isinstance(self.p, str) else fmt(self.p)
        return [self.method, p, str(self.seed), fmt(self.mae_v), fmt(self.rmse_v),
                fmt(self.mae_rho), fmt(self.rmse_rho), str(self.N)]


def mae_rmse(truth: Field, estimate: Field, method: str = "", p: float | str = "",
             seed: int | str = "") -> MetricRow:
    """MAE and RMSE of speed and density over truth.mask & estimate.mask.

    Density is scored only where both fields also hold a finite density.
    """
    if truth.grid != estimate.grid:
        raise ValidationError("truth and estimate are on different grids")
    omega = truth.mask & estimate.mask
    n = int(omega.sum())
    if n == 0:
        raise ValidationError("empty valid set")
    ev = estimate.v[omega] - truth.v[omega]
    er = estimate.rho[omega] - truth.rho[omega]
    er = er[np.isfinite(er)]
    mae_r = float(np.mean(np.abs(er))) if len(er) else math.nan
    rmse_r = float(np.sqrt(np.mean(er**2))) if len(er) else math.nan
    return MetricRow(method, p, seed, float(np.mean(np.abs(ev))), float(np.sqrt(np.mean(ev**2))),
                     mae_r, rmse_r, n)


def failed_row(method: str, p, seed, err: Exception) -> MetricRow:
    return MetricRow(method, p, seed, math.nan, math.nan, math.nan, math.nan, 0,
                     f"{type(err).__name__}: {err}")


def summarize(rows: list[MetricRow]) -> list[MetricRow]:
    """Per-(method, p) means over seeds, ignoring failed cells."""
    keys = []
    for r in rows:
        if (r.method, r.p) not in keys:
            keys.append((r.method, r.p))
    out = []
    for method, p in keys:
        ok = [r for r in rows if r.method == method and r.p == p and r.error is None]
        if not ok:
            out.append(MetricRow(method, p, "mean", *([math.nan] * 4), 0, "all seeds failed"))
            continue
        vals = np.array([[r.mae_v, r.rmse_v, r.mae_rho, r.rmse_rho] for r in ok])
        out.append(MetricRow(method, p, "mean", *map(float, vals.mean(0)),
                             int(round(np.mean([r.N for r in ok])))))
    return out


def write_results(path, rows: list[MetricRow]) -> None:
    write_csv(path, RESULTS_HEADER, [r.csv_row() for r in rows])


# --------------------------------------------------------------------------
# Sweeps
# --------------------------------------------------------------------------

Method = Callable[[ObservationSet, Field, int], Field]
"""A reconstruction method: (observations, truth field for its grid, seed) -> estimate."""


def _run_cell(args):
    name, method, truth, traj, p, seed = args
    try:
        obs = sample_probe(traj, truth, p, seed)
        est = method(obs, truth, seed)
        return mae_rmse(truth, est, name, p, seed)
    except Exception as err:  # recorded per cell; the sweep goes on
        log.warning("sweep cell %s p=%s seed=%s failed: %s", name, p, seed, err)
        return failed_row(name, p, seed, err)


def penetration_sweep(methods: dict[str, Method], truth: Field, traj: TrajectorySet,
                      penetrations, seeds, jobs: int = 1) -> list[MetricRow]:
    """Score every (method, p, seed) cell; rows are ordered method, p, seed.

    ``methods`` must be picklable when ``jobs > 1`` (cells then run in
    spawned worker processes and are merged back in the fixed order).
    """
    cells = [(name, m, truth, traj, float(p), int(s))
             for name, m in methods.items() for p in penetrations for s in seeds]
    if jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=jobs, mp_context=get_context("spawn")) as ex:
            return list(ex.map(_run_cell, cells))
    return [_run_cell(c) for c in cells]


def is_non_increasing(values, rel_tol: float = 0.05) -> bool:
    """True when each value exceeds its predecessor by at most ``rel_tol``."""
    v = np.asarray(values, float)
    return bool(np.all(v[1:] <= v[:-1] * (1.0 + rel_tol)))


def row_dict(r: MetricRow) -> dict:
    return asdict(r)
