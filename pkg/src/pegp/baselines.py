"""Non-physics comparison methods: adaptive smoothing and a rotated SE GP.

Both reconstruct density and speed on a grid from scattered observations.
The adaptive smoothing method (ASM) mixes a free-flow and a congested
anisotropic exponential filter; the rotated GP is an exact dense GP per
output with a squared-exponential kernel in rotated coordinates.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import jax
import jax.numpy as jnp
import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize

from .data import DENSITY, SPEED, CoordScaler, Field, ObservationSet, SpaceTimeGrid, make_rng
from .errors import NumericalError, ValidationError

log = logging.getLogger(__name__)

KMH = 1.0 / 3.6


# --------------------------------------------------------------------------
# Adaptive smoothing
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ASMConfig:
    """Adaptive smoothing settings; speeds in m/s, widths in m and s."""

    dx: float = 10.0
    dt: float = 5.0
    sigma_x: float = 200.0
    tau_t: float = 10.0
    c_free: float = 80.0 * KMH
    c_cong: float = -15.0 * KMH
    v_thresh: float = 60.0 * KMH
    dv: float = 20.0 * KMH

    def __post_init__(self):
        if self.sigma_x <= 0 or self.tau_t <= 0:
            raise ValidationError("sigma_x and tau_t must be positive")
        if not self.c_cong < 0 < self.c_free:
            raise ValidationError("need c_cong < 0 < c_free")
        if self.dv <= 0:
            raise ValidationError("dv must be positive")


def _log_kernel(cells, pts, c, cfg: ASMConfig):
    """log phi for every (cell, observation) pair along characteristic speed c."""
    dx = cells[:, None, 0] - pts[None, :, 0]
    dt = cells[:, None, 1] - pts[None, :, 1]
    return -np.abs(dx) / cfg.sigma_x - np.abs(dt - dx / c) / cfg.tau_t


def _smooth(cells, pts, values, c, cfg: ASMConfig, chunk: int = 1024):
    """Normalized exponential smoothing; the max-shift keeps far cells finite."""
    out = np.empty(len(cells))
    for s in range(0, len(cells), chunk):
        lk = _log_kernel(cells[s:s + chunk], pts, c, cfg)
        lk -= lk.max(axis=1, keepdims=True)
        k = np.exp(lk)
        out[s:s + chunk] = (k @ values) / k.sum(axis=1)
    return out


def branch_weight(v_free, v_cong, cfg: ASMConfig):
    """Congested-branch weight from the smaller of the two speed estimates."""
    v = np.minimum(v_free, v_cong)
    return 0.5 * (1.0 + np.tanh((cfg.v_thresh - v) / cfg.dv))


def asm_reconstruct(obs: ObservationSet, grid: SpaceTimeGrid, config: ASMConfig | None = None) -> Field:
    """Two-branch adaptive smoothing of speed, with the same weights for density.

    Each cell value is a convex combination of observed values.  Cells get
    NaN density (and a False mask) only when no density is observed at all.

    Args:
        obs: scattered observations; at least one speed value is required.
        grid: output grid.
        config: smoothing widths and branch speeds.
    """
    cfg = config or ASMConfig()
    if len(obs) == 0:
        raise ValidationError("ASM needs at least one observation")
    sp = obs.select(SPEED)
    if len(sp) == 0:
        raise ValidationError("ASM needs speed observations to weight its branches")
    cells = grid.cell_points()
    v_free = _smooth(cells, sp.points, sp.value, cfg.c_free, cfg)
    v_cong = _smooth(cells, sp.points, sp.value, cfg.c_cong, cfg)
    w = branch_weight(v_free, v_cong, cfg)
    v = w * v_cong + (1.0 - w) * v_free
    de = obs.select(DENSITY)
    if len(de):
        r_free = _smooth(cells, de.points, de.value, cfg.c_free, cfg)
        r_cong = _smooth(cells, de.points, de.value, cfg.c_cong, cfg)
        rho = w * r_cong + (1.0 - w) * r_free
        mask = np.ones(grid.shape, bool)
    else:
        rho = np.full(len(cells), np.nan)
        mask = np.zeros(grid.shape, bool)
    return Field(grid, rho.reshape(grid.shape), v.reshape(grid.shape), mask)


# --------------------------------------------------------------------------
# Rotated anisotropic GP
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class RotatedGPConfig:
    """Rotated SE GP settings.

    Variances refer to standardized targets.  ``ell_rot_x`` (m) and
    ``ell_rot_t`` (s) are lengthscales along the rotated axes, converted to
    standardized coordinates with the data's coordinate scales.  ``theta``
    is the rotation angle in standardized coordinates; None picks the
    direction of the congested wave ``c_wave``.
    """

    signal_var: float = 0.2
    noise_var: float = 0.3
    ell_rot_x: float = 150.0
    ell_rot_t: float = 13.0
    theta: float | None = None
    c_wave: float = -15.0 * KMH
    train_theta: bool = False
    iterations: int = 200
    max_fit_points: int = 600
    jitter: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        for k in ("signal_var", "noise_var", "ell_rot_x", "ell_rot_t"):
            if getattr(self, k) <= 0:
                raise ValidationError(f"{k} must be positive")


@dataclass
class RotatedGPFit:
    """Reconstructed field plus per-cell latent variances and fitted hypers."""

    field: Field
    var_rho: np.ndarray
    var_v: np.ndarray
    params: list = field(default_factory=list)
    traces: list = field(default_factory=list)


def default_theta(c_wave: float, coords: CoordScaler) -> float:
    """Angle of the line dx/dt = c_wave in standardized coordinates, in (-pi/2, pi/2]."""
    cz = c_wave * coords.t_scale / coords.x_scale
    th = math.atan2(1.0, cz)
    if th > math.pi / 2:
        th -= math.pi
    return th


def rotate(X, theta):
    """Coordinates of X in axes turned by theta: u = R(-theta) X."""
    X = jnp.asarray(X)
    c, s = jnp.cos(theta), jnp.sin(theta)
    return jnp.stack([c * X[:, 0] + s * X[:, 1], -s * X[:, 0] + c * X[:, 1]], axis=1)


def rotated_se(X1, X2, theta, ell_a, ell_b, var):
    """SE kernel with lengthscales (ell_a, ell_b) along the rotated axes."""
    U1 = rotate(X1, theta) / jnp.array([ell_a, ell_b])
    U2 = rotate(X2, theta) / jnp.array([ell_a, ell_b])
    d2 = (jnp.sum(U1**2, 1)[:, None] + jnp.sum(U2**2, 1)[None, :] - 2.0 * U1 @ U2.T)
    return var * jnp.exp(-0.5 * jnp.maximum(d2, 0.0))


def _neg_lml(theta_vec, X, y, fixed_theta, jitter):
    """Negative log marginal likelihood; theta_vec = log(var, noise, ell_a, ell_b)[, angle]."""
    var, noise, la, lb = jnp.exp(theta_vec[:4])
    ang = theta_vec[4] if theta_vec.shape[0] > 4 else fixed_theta
    K = rotated_se(X, X, ang, la, lb, var) + (noise + jitter * var) * jnp.eye(X.shape[0])
    L = jnp.linalg.cholesky(K)
    a = jax.scipy.linalg.cho_solve((L, True), y)
    return 0.5 * y @ a + jnp.sum(jnp.log(jnp.diag(L))) + 0.5 * X.shape[0] * math.log(2 * math.pi)


_nlml_vg = jax.jit(jax.value_and_grad(_neg_lml))


def fit_rotated_hypers(X, y, init, theta, cfg: RotatedGPConfig):
    """Marginal-likelihood ascent (L-BFGS-B) returning the best-so-far point.

    Returns (params, trace) where trace holds the best log marginal
    likelihood after each evaluation.
    """
    x0 = np.log(np.asarray(init, float))
    if cfg.train_theta:
        x0 = np.append(x0, theta)
    Xj, yj = jnp.asarray(X), jnp.asarray(y)
    best = {"f": np.inf, "x": x0.copy()}
    trace = []

    def fun(v):
        f, g = _nlml_vg(jnp.asarray(v), Xj, yj, theta, cfg.jitter)
        f, g = float(f), np.asarray(g, float)
        if not np.isfinite(f) or not np.all(np.isfinite(g)):
            return 1e10, np.zeros_like(v)
        if f < best["f"]:
            best["f"], best["x"] = f, np.array(v)
        trace.append(-best["f"])
        return f, g

    bounds = [(-9.0, 4.0), (-9.0, 4.0), (-6.0, 4.0), (-6.0, 4.0)]
    if cfg.train_theta:
        bounds.append((-math.pi, math.pi))
    if cfg.iterations > 0:
        minimize(fun, x0, jac=True, method="L-BFGS-B", bounds=bounds,
                 options={"maxiter": cfg.iterations})
    else:
        fun(x0)
    v = best["x"]
    var, noise, la, lb = np.exp(v[:4])
    ang = float(v[4]) if cfg.train_theta else float(theta)
    return {"signal_var": var, "noise_var": noise, "ell_a": la, "ell_b": lb, "theta": ang}, trace


def gp_posterior(X, y, Xq, hp: dict, jitter: float = 1e-8, max_doublings: int = 3):
    """Exact posterior mean and latent variance at Xq."""
    K = np.asarray(rotated_se(X, X, hp["theta"], hp["ell_a"], hp["ell_b"], hp["signal_var"]))
    j = jitter
    for _ in range(max_doublings + 1):
        try:
            L = cholesky(K + (hp["noise_var"] + j * hp["signal_var"]) * np.eye(len(X)), lower=True)
            break
        except np.linalg.LinAlgError:
            j *= 2.0
    else:
        raise NumericalError("ill-conditioned rotated-GP Gram matrix")
    alpha = cho_solve((L, True), y)
    Kq = np.asarray(rotated_se(Xq, X, hp["theta"], hp["ell_a"], hp["ell_b"], hp["signal_var"]))
    mean = Kq @ alpha
    V = solve_triangular(L, Kq.T, lower=True)
    var = np.maximum(hp["signal_var"] - np.sum(V**2, axis=0), 0.0)
    return mean, var


def rotated_gp_reconstruct(obs: ObservationSet, grid: SpaceTimeGrid,
                           config: RotatedGPConfig | None = None) -> RotatedGPFit:
    """Exact rotated-SE GP per output, hyperparameters refined on a subsample.

    Targets are standardized per output; hyperparameters are fitted on at
    most ``max_fit_points`` observations and the posterior then uses all of
    them.

    Args:
        obs: scattered density/speed observations (>= 2 per output).
        grid: output grid.
        config: initial hyperparameters and fitting options.
    """
    cfg = config or RotatedGPConfig()
    coords = CoordScaler.fit(obs.points) if len(obs) else None
    cells = grid.cell_points()
    out_mean, out_var, params, traces = {}, {}, [], []
    for k in (DENSITY, SPEED):
        o = obs.select(k)
        if len(o) < 2:
            raise ValidationError("rotated GP needs at least two observations per output")
        X = coords(o.points)
        mu, sd = float(o.value.mean()), float(o.value.std()) or 1.0
        y = (o.value - mu) / sd
        theta = cfg.theta if cfg.theta is not None else default_theta(cfg.c_wave, coords)
        init = (cfg.signal_var, cfg.noise_var, cfg.ell_rot_x / coords.x_scale,
                cfg.ell_rot_t / coords.t_scale)
        sub = np.arange(len(X))
        if len(X) > cfg.max_fit_points:
            sub = np.sort(make_rng(cfg.seed + k).choice(len(X), cfg.max_fit_points, replace=False))
        hp, trace = fit_rotated_hypers(X[sub], y[sub], init, theta, cfg)
        m, v = gp_posterior(X, y, coords(cells), hp, cfg.jitter)
        out_mean[k] = m * sd + mu
        out_var[k] = v * sd**2
        params.append(hp)
        traces.append(trace)
    rho = np.maximum(out_mean[DENSITY], 0.0).reshape(grid.shape)
    v = np.maximum(out_mean[SPEED], 0.0).reshape(grid.shape)
    return RotatedGPFit(Field(grid, rho, v), out_var[DENSITY].reshape(grid.shape),
                        out_var[SPEED].reshape(grid.shape), params, traces)
