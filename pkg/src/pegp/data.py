"""Space-time grids, fields, observation sets and standardization.

CSV layouts (header required, floats written with 9 significant digits)::

    trajectories  vehicle_id,t_s,x_m,v_mps
    field         x_m,t_s,rho_vpm,v_mps,mask
    observations  x_m,t_s,output,value
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

DENSITY, SPEED = 0, 1
OUTPUT_NAMES = ("density", "speed")
FLOAT_FMT = "{:.9g}"


def make_rng(seed: int) -> np.random.Generator:
    """Philox-4x64 counter-based generator; streams are platform independent."""
    return np.random.Generator(np.random.Philox(int(seed) & (2**64 - 1)))


def fmt(x) -> str:
    return FLOAT_FMT.format(float(x))


@dataclass(frozen=True)
class SpaceTimeGrid:
    x_min: float
    x_max: float
    t_min: float
    t_max: float
    dx: float
    dt: float

    def __post_init__(self):
        if self.dx <= 0 or self.dt <= 0:
            raise ValueError("dx and dt must be positive")
        if self.nx < 2 or self.nt < 2:
            raise ValueError("grid needs at least two cells in each direction")

    @property
    def nx(self) -> int:
        return int(round((self.x_max - self.x_min) / self.dx))

    @property
    def nt(self) -> int:
        return int(round((self.t_max - self.t_min) / self.dt))

    @property
    def shape(self) -> tuple[int, int]:
        return self.nx, self.nt

    @property
    def x_centers(self) -> np.ndarray:
        return self.x_min + (np.arange(self.nx) + 0.5) * self.dx

    @property
    def t_centers(self) -> np.ndarray:
        return self.t_min + (np.arange(self.nt) + 0.5) * self.dt

    def cell_points(self) -> np.ndarray:
        """All cell centres as an (nx*nt, 2) array of (x, t), x-major."""
        X, T = np.meshgrid(self.x_centers, self.t_centers, indexing="ij")
        return np.column_stack([X.ravel(), T.ravel()])

    def contains(self, x, t) -> np.ndarray:
        x = np.asarray(x)
        t = np.asarray(t)
        return (x >= self.x_min) & (x <= self.x_max) & (t >= self.t_min) & (t <= self.t_max)

    def cell_index(self, x, t) -> tuple[np.ndarray, np.ndarray]:
        """Half-open binning; the upper domain edge falls into the last cell."""
        i = np.floor((np.asarray(x, dtype=float) - self.x_min) / self.dx).astype(int)
        j = np.floor((np.asarray(t, dtype=float) - self.t_min) / self.dt).astype(int)
        return np.clip(i, 0, self.nx - 1), np.clip(j, 0, self.nt - 1)

    def nearest_row(self, x: float) -> int:
        """Nearest cell centre in x; an exact tie goes to the lower index."""
        if not self.x_min <= x <= self.x_max:
            raise ValueError(f"position {x} outside [{self.x_min}, {self.x_max}]")
        u = (x - self.x_min) / self.dx - 0.5
        i = math.ceil(u - 0.5)  # rounds half down
        return int(min(max(i, 0), self.nx - 1))

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("x_min", "x_max", "t_min", "t_max", "dx", "dt")}


@dataclass
class Field:
    """Per-cell density (veh/m) and speed (m/s) with a validity mask."""

    grid: SpaceTimeGrid
    rho: np.ndarray
    v: np.ndarray
    mask: np.ndarray = None

    def __post_init__(self):
        self.rho = np.asarray(self.rho, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        if self.mask is None:
            self.mask = np.ones(self.grid.shape, dtype=bool)
        self.mask = np.asarray(self.mask, dtype=bool)
        for name in ("rho", "v", "mask"):
            if getattr(self, name).shape != self.grid.shape:
                raise ValueError(f"{name} has shape {getattr(self, name).shape}, grid {self.grid.shape}")
        if np.any(self.rho[self.mask] < 0) or np.any(self.v[self.mask] < 0):
            raise ValueError("density and speed must be non-negative on valid cells")

    @property
    def n_valid(self) -> int:
        return int(self.mask.sum())

    def values(self, output: int) -> np.ndarray:
        return self.rho if output == DENSITY else self.v


@dataclass
class TrajectorySet:
    """Flat arrays of trajectory samples.

    ``weight`` is the number of real vehicles each trajectory stands for; it
    is 1 for ordinary data and larger than 1 for dense synthetic swarms.
    """

    vehicle_id: np.ndarray
    t: np.ndarray
    x: np.ndarray
    v: np.ndarray
    weight: float = 1.0

    def __post_init__(self):
        self.vehicle_id = np.asarray(self.vehicle_id, dtype=np.int64)
        self.t = np.asarray(self.t, dtype=float)
        self.x = np.asarray(self.x, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        n = len(self.vehicle_id)
        if not (len(self.t) == len(self.x) == len(self.v) == n):
            raise ValueError("trajectory columns differ in length")

    def __len__(self) -> int:
        return len(self.vehicle_id)

    @property
    def ids(self) -> np.ndarray:
        return np.unique(self.vehicle_id)

    def subset(self, ids) -> "TrajectorySet":
        keep = np.isin(self.vehicle_id, ids)
        return TrajectorySet(self.vehicle_id[keep], self.t[keep], self.x[keep], self.v[keep], self.weight)

    def time_weights(self) -> np.ndarray:
        """Time each sample stands for: the gap to the vehicle's next sample.

        The last sample of a vehicle repeats its previous gap; a vehicle with a
        single sample gets the median gap of the whole set.
        """
        order = np.lexsort((self.t, self.vehicle_id))
        vid = self.vehicle_id[order]
        t = self.t[order]
        w = np.zeros(len(t))
        same_next = np.zeros(len(t), dtype=bool)
        same_next[:-1] = vid[1:] == vid[:-1]
        gaps = np.diff(t, append=np.nan)
        w[same_next] = gaps[same_next]
        valid = w[same_next]
        fallback = float(np.median(valid)) if valid.size else 0.0
        last = ~same_next
        same_prev = np.zeros(len(t), dtype=bool)
        same_prev[1:] = vid[1:] == vid[:-1]
        prev_gap = np.concatenate([[np.nan], np.diff(t)])
        w[last & same_prev] = prev_gap[last & same_prev]
        w[last & ~same_prev] = fallback
        out = np.empty_like(w)
        out[order] = w
        return out


@dataclass
class ObservationSet:
    """Scattered (x, t, output, value) observations in physical units."""

    x: np.ndarray
    t: np.ndarray
    output: np.ndarray
    value: np.ndarray
    seed: int = 0

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float).ravel()
        self.t = np.asarray(self.t, dtype=float).ravel()
        self.output = np.asarray(self.output, dtype=np.int64).ravel()
        self.value = np.asarray(self.value, dtype=float).ravel()
        n = len(self.x)
        if not (len(self.t) == len(self.output) == len(self.value) == n):
            raise ValueError("observation columns differ in length")
        order = np.lexsort((self.output, self.x, self.t))
        self.x, self.t = self.x[order], self.t[order]
        self.output, self.value = self.output[order], self.value[order]

    def __len__(self) -> int:
        return len(self.x)

    @classmethod
    def empty(cls, seed: int = 0) -> "ObservationSet":
        return cls([], [], [], [], seed)

    @property
    def points(self) -> np.ndarray:
        return np.column_stack([self.x, self.t])

    def select(self, output: int) -> "ObservationSet":
        keep = self.output == output
        return ObservationSet(self.x[keep], self.t[keep], self.output[keep], self.value[keep], self.seed)

    def locations(self) -> tuple[np.ndarray, np.ndarray]:
        """Unique (x, t) locations and, per observation, its location index."""
        pts = self.points
        if len(pts) == 0:
            return np.zeros((0, 2)), np.zeros(0, dtype=int)
        uniq, inverse = np.unique(pts, axis=0, return_inverse=True)
        return uniq, inverse.ravel()

    def paired(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Locations where both density and speed are observed.

        Returns (points, rho, v) sorted like :meth:`locations`.
        """
        locs, inv = self.locations()
        rho = np.full(len(locs), np.nan)
        v = np.full(len(locs), np.nan)
        rho[inv[self.output == DENSITY]] = self.value[self.output == DENSITY]
        v[inv[self.output == SPEED]] = self.value[self.output == SPEED]
        ok = np.isfinite(rho) & np.isfinite(v)
        return locs[ok], rho[ok], v[ok]

    def inside(self, grid: SpaceTimeGrid) -> bool:
        return bool(np.all(grid.contains(self.x, self.t)))


def _cells_to_observations(field_: Field, cells: np.ndarray, seed: int) -> ObservationSet:
    """Both outputs at each (i, j) cell that is valid in ``field_``."""
    if len(cells) == 0:
        return ObservationSet.empty(seed)
    i, j = cells[:, 0], cells[:, 1]
    ok = field_.mask[i, j]
    i, j = i[ok], j[ok]
    xs = field_.grid.x_centers[i]
    ts = field_.grid.t_centers[j]
    return ObservationSet(
        np.concatenate([xs, xs]),
        np.concatenate([ts, ts]),
        np.concatenate([np.full(len(i), DENSITY), np.full(len(i), SPEED)]),
        np.concatenate([field_.rho[i, j], field_.v[i, j]]),
        seed,
    )


def aggregate_trajectories(traj: TrajectorySet, grid: SpaceTimeGrid, return_dropped: bool = False):
    """Bin trajectory samples into cells.

    Speed is the mean of sample speeds in a cell; density is the total
    vehicle-time spent in the cell over its area (a generalized density).
    Samples outside the grid are dropped.
    """
    if len(traj) == 0:
        raise ValueError("no data")
    w = traj.time_weights() * traj.weight
    inside = grid.contains(traj.x, traj.t)
    n_dropped = int((~inside).sum())
    if n_dropped:
        log.info("dropped %d trajectory samples outside the grid", n_dropped)
    i, j = grid.cell_index(traj.x[inside], traj.t[inside])
    flat = i * grid.nt + j
    size = grid.nx * grid.nt
    count = np.bincount(flat, minlength=size)
    vsum = np.bincount(flat, weights=traj.v[inside], minlength=size)
    tsum = np.bincount(flat, weights=w[inside], minlength=size)
    mask = count > 0
    v = np.zeros(size)
    v[mask] = vsum[mask] / count[mask]
    rho = tsum / (grid.dx * grid.dt)
    out = Field(grid, rho.reshape(grid.shape), v.reshape(grid.shape), mask.reshape(grid.shape))
    return (out, n_dropped) if return_dropped else out


def sample_probe(traj: TrajectorySet, field_: Field, penetration: float, seed: int) -> ObservationSet:
    """Observe the cells visited by a random subset of probe vehicles.

    ``round(penetration * n_vehicles)`` vehicle ids are drawn without
    replacement.  Every valid cell of ``field_`` that one of them visits is
    observed in both outputs, with the values ``field_`` holds there.
    """
    if not 0.0 < penetration <= 1.0:
        raise ValueError("penetration must lie in (0, 1]")
    if len(traj) == 0:
        raise ValueError("no data")
    grid = field_.grid
    sub = traj.subset(probe_ids(traj.ids, penetration, seed))
    inside = grid.contains(sub.x, sub.t)
    i, j = grid.cell_index(sub.x[inside], sub.t[inside])
    cells = np.unique(np.column_stack([i, j]), axis=0) if len(i) else np.zeros((0, 2), int)
    return _cells_to_observations(field_, cells, seed)


def probe_ids(ids: np.ndarray, penetration: float, seed: int) -> np.ndarray:
    ids = np.sort(np.asarray(ids))
    n = int(round(penetration * len(ids)))
    rng = make_rng(seed)
    return np.sort(rng.choice(ids, size=n, replace=False)) if n else ids[:0]


def sample_loops(field_: Field, positions) -> ObservationSet:
    """Fixed detectors: the nearest cell row observed at every valid time."""
    grid = field_.grid
    rows = [grid.nearest_row(float(p)) for p in positions]
    if not rows:
        return ObservationSet.empty()
    cells = np.array([(i, j) for i in rows for j in range(grid.nt)], dtype=int)
    return _cells_to_observations(field_, cells, 0)


def field_observations(field_: Field, seed: int = 0) -> ObservationSet:
    """Every valid cell of a field as observations."""
    cells = np.argwhere(field_.mask)
    return _cells_to_observations(field_, cells, seed)


# --------------------------------------------------------------------------
# Standardization
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Standardizer:
    """Per-task affine maps y_z = (y - mean) / scale.

    ``names`` labels the tasks, e.g. ("density", "speed") or ("w1", "w2").
    Scales use the population standard deviation (denominator n).
    """

    mean: tuple[float, ...]
    scale: tuple[float, ...]
    names: tuple[str, ...] = OUTPUT_NAMES
    clamped: tuple[bool, ...] = (False, False)

    def standardize(self, values, output):
        output = np.asarray(output, dtype=int)
        m = np.asarray(self.mean)[output]
        s = np.asarray(self.scale)[output]
        return (np.asarray(values, dtype=float) - m) / s

    def destandardize(self, values, output):
        output = np.asarray(output, dtype=int)
        m = np.asarray(self.mean)[output]
        s = np.asarray(self.scale)[output]
        return np.asarray(values, dtype=float) * s + m

    @property
    def mean_rho(self) -> float:
        return self.mean[0]

    @property
    def scale_rho(self) -> float:
        return self.scale[0]

    @property
    def mean_v(self) -> float:
        return self.mean[-1]

    @property
    def scale_v(self) -> float:
        return self.scale[-1]

    def to_dict(self) -> dict:
        return {"mean": list(self.mean), "scale": list(self.scale),
                "names": list(self.names), "clamped": list(self.clamped)}

    @classmethod
    def from_dict(cls, d: dict) -> "Standardizer":
        return cls(tuple(d["mean"]), tuple(d["scale"]), tuple(d["names"]), tuple(d["clamped"]))


def fit_standardizer(values, output, n_tasks: int, names=None, center=None) -> Standardizer:
    """Sample mean and population std per task.

    ``center`` optionally fixes the per-task means (e.g. to an equilibrium
    value); the scale is then the root-mean-square deviation from it.
    A zero-variance task gets scale 1 and a ``clamped`` flag.
    """
    values = np.asarray(values, dtype=float)
    output = np.asarray(output, dtype=int)
    means, scales, clamped = [], [], []
    for k in range(n_tasks):
        y = values[output == k]
        if len(y) < 2:
            raise ValueError(f"task {k} needs at least two observations to standardize")
        m = float(np.mean(y)) if center is None else float(center[k])
        s = float(np.sqrt(np.mean((y - m) ** 2)))
        bad = not np.isfinite(s) or s <= 1e-12 * max(1.0, abs(m))
        if bad:
            log.warning("task %d has zero variance; scale clamped to 1", k)
            s = 1.0
        means.append(m)
        scales.append(s)
        clamped.append(bad)
    names = tuple(names) if names is not None else tuple(f"task{k}" for k in range(n_tasks))
    return Standardizer(tuple(means), tuple(scales), names, tuple(clamped))


@dataclass(frozen=True)
class CoordScaler:
    """Affine standardization of (x, t) kernel inputs."""

    x_mean: float
    x_scale: float
    t_mean: float
    t_scale: float

    @classmethod
    def fit(cls, points) -> "CoordScaler":
        pts = np.asarray(points, dtype=float)
        sx = float(pts[:, 0].std()) or 1.0
        st = float(pts[:, 1].std()) or 1.0
        return cls(float(pts[:, 0].mean()), sx, float(pts[:, 1].mean()), st)

    def __call__(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return np.column_stack([(pts[:, 0] - self.x_mean) / self.x_scale,
                                (pts[:, 1] - self.t_mean) / self.t_scale])

    def inverse(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return np.column_stack([pts[:, 0] * self.x_scale + self.x_mean,
                                pts[:, 1] * self.t_scale + self.t_mean])


# --------------------------------------------------------------------------
# CSV I/O
# --------------------------------------------------------------------------

def write_csv(path, header, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _read_csv(path, header):
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        got = next(r, None)
        if got != list(header):
            raise ValueError(f"{path}: expected header {','.join(header)}, got {got}")
        return list(r)


TRAJ_HEADER = ("vehicle_id", "t_s", "x_m", "v_mps")
FIELD_HEADER = ("x_m", "t_s", "rho_vpm", "v_mps", "mask")
OBS_HEADER = ("x_m", "t_s", "output", "value")


def write_trajectories(path, traj: TrajectorySet) -> None:
    order = np.lexsort((traj.t, traj.vehicle_id))
    rows = ((int(traj.vehicle_id[k]), fmt(traj.t[k]), fmt(traj.x[k]), fmt(traj.v[k])) for k in order)
    write_csv(path, TRAJ_HEADER, rows)


def read_trajectories(path) -> TrajectorySet:
    rows = _read_csv(path, TRAJ_HEADER)
    if not rows:
        return TrajectorySet([], [], [], [])
    a = np.array(rows, dtype=float)
    return TrajectorySet(a[:, 0].astype(np.int64), a[:, 1], a[:, 2], a[:, 3])


def write_field(path, f: Field) -> None:
    g = f.grid
    rows = []
    for i, x in enumerate(g.x_centers):
        for j, t in enumerate(g.t_centers):
            rows.append((fmt(x), fmt(t), fmt(f.rho[i, j]), fmt(f.v[i, j]), int(f.mask[i, j])))
    write_csv(path, FIELD_HEADER, rows)


def read_field(path, grid: SpaceTimeGrid | None = None) -> Field:
    """Read a field CSV; the grid is inferred from the cell centres if not given."""
    a = np.array(_read_csv(path, FIELD_HEADER), dtype=float)
    if grid is None:
        xs = np.unique(a[:, 0])
        ts = np.unique(a[:, 1])
        dx = float(np.median(np.diff(xs)))
        dt = float(np.median(np.diff(ts)))
        grid = SpaceTimeGrid(xs[0] - dx / 2, xs[-1] + dx / 2, ts[0] - dt / 2, ts[-1] + dt / 2, dx, dt)
    i, j = grid.cell_index(a[:, 0], a[:, 1])
    rho = np.zeros(grid.shape)
    v = np.zeros(grid.shape)
    mask = np.zeros(grid.shape, dtype=bool)
    rho[i, j] = a[:, 2]
    v[i, j] = a[:, 3]
    mask[i, j] = a[:, 4] > 0
    return Field(grid, rho, v, mask)


def write_observations(path, obs: ObservationSet) -> None:
    rows = ((fmt(x), fmt(t), OUTPUT_NAMES[o], fmt(v))
            for x, t, o, v in zip(obs.x, obs.t, obs.output, obs.value))
    write_csv(path, OBS_HEADER, rows)


def read_observations(path, seed: int = 0) -> ObservationSet:
    rows = _read_csv(path, OBS_HEADER)
    if not rows:
        return ObservationSet.empty(seed)
    x = [float(r[0]) for r in rows]
    t = [float(r[1]) for r in rows]
    o = [OUTPUT_NAMES.index(r[2]) for r in rows]
    v = [float(r[3]) for r in rows]
    return ObservationSet(x, t, o, v, seed)
