"""Physics/residual attribution, subspace similarity and uncertainty maps.

Means are split with a single alpha = K_uu^{-1} m so that the physics and
residual parts add up to the total exactly.  Components are reported in
de-standardized task units (invariants for ARZ, density/speed for the LWR
modes) without the per-task offsets, which belong to neither part.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .data import Field, SpaceTimeGrid, fmt, make_rng, write_csv
from .errors import ValidationError
from .svgp import SVGPState, mean_components, predict_field

log = logging.getLogger(__name__)

FREE_FLOW_THRESHOLD = 60.0 / 3.6
SHARES_HEADER = ("p", "output", "S_phys", "S_res", "E_phys", "E_res", "joint_ratio", "m")
SIMILARITY_HEADER = ("p", "regime", "output", "cka", "min_deg", "max_deg", "n")


# --------------------------------------------------------------------------
# Mean decomposition and shares
# --------------------------------------------------------------------------

def decompose_mean(state: SVGPState, points):
    """(mu, mu_phys, mu_res), each (n, P), de-standardized task deviations."""
    if state.mode == "plain_se":
        raise ValidationError("plain_se has no physics component to attribute")
    mu, phys, res = mean_components(state, points)
    s = np.asarray(state.standardizer.scale)[None, :]
    return mu * s, phys * s, res * s


@dataclass(frozen=True)
class ShareReport:
    """Aligned (S) and energy (E) shares per output plus the stacked joint ratio."""

    names: tuple
    S_phys: tuple
    S_res: tuple
    E_phys: tuple
    E_res: tuple
    joint_ratio: float
    m: int


def _aligned(mu, part):
    nrm = float(mu @ mu)
    if nrm == 0.0:
        raise ValidationError("degenerate mean")
    return float(mu @ part) / nrm


def shares(mu, mu_phys, mu_res, names=None) -> ShareReport:
    """Aligned shares mu.mu_part/|mu|^2 and energy shares |mu_part|^2/|mu|^2.

    Inputs are (m,) or (m, P); each column is one output.
    """
    mu, mu_phys, mu_res = (np.asarray(a, float).reshape(len(a), -1) for a in (mu, mu_phys, mu_res))
    P = mu.shape[1]
    sp, sr, ep, er = [], [], [], []
    for k in range(P):
        u, a, b = mu[:, k], mu_phys[:, k], mu_res[:, k]
        nrm = float(u @ u)
        if nrm == 0.0:
            raise ValidationError("degenerate mean")
        sp.append(_aligned(u, a))
        sr.append(_aligned(u, b))
        ep.append(float(a @ a) / nrm)
        er.append(float(b @ b) / nrm)
    names = tuple(names) if names is not None else tuple(f"task{k}" for k in range(P))
    try:
        jr = joint_ratio(mu, mu_phys, mu_res)
    except ValidationError:
        jr = float("nan")  # a report is still useful when the physics share vanishes
    return ShareReport(names, tuple(sp), tuple(sr), tuple(ep), tuple(er), jr, len(mu))


def joint_ratio(mu, mu_phys, mu_res) -> float:
    """S_res / S_phys with all outputs stacked into one vector."""
    u, a, b = (np.asarray(x, float).ravel() for x in (mu, mu_phys, mu_res))
    s_phys = _aligned(u, a)
    if s_phys == 0.0:
        raise ValidationError("physics share is zero; joint ratio undefined")
    return _aligned(u, b) / s_phys


def energy_gap(mu, mu_phys, mu_res) -> float:
    """Relative error of |mu|^2 = |phys|^2 + |res|^2 + 2 phys.res."""
    u, a, b = (np.asarray(x, float).ravel() for x in (mu, mu_phys, mu_res))
    lhs = float(u @ u)
    rhs = float(a @ a) + float(b @ b) + 2.0 * float(a @ b)
    return abs(lhs - rhs) / max(lhs, np.finfo(float).tiny)


# --------------------------------------------------------------------------
# Subspace similarity
# --------------------------------------------------------------------------

def _centered(X):
    X = np.asarray(X, float)
    if X.ndim == 1:
        X = X[:, None]
    if len(X) < 2:
        raise ValidationError("need at least two samples")
    return X - X.mean(0)


def cka(X, Y) -> float:
    """Linear centered kernel alignment |Xc^T Yc|_F^2 / (|Xc^T Xc|_F |Yc^T Yc|_F)."""
    Xc, Yc = _centered(X), _centered(Y)
    if len(Xc) != len(Yc):
        raise ValidationError("X and Y need the same number of rows")
    den = np.linalg.norm(Xc.T @ Xc) * np.linalg.norm(Yc.T @ Yc)
    if den == 0.0:
        raise ValidationError("zero-variance input")
    return float(np.clip(np.linalg.norm(Xc.T @ Yc) ** 2 / den, 0.0, 1.0))


def _orthobasis(Xc, tol=1e-10):
    Q, R = np.linalg.qr(Xc)
    d = np.abs(np.diag(R))
    keep = d > tol * max(d.max(initial=0.0), np.finfo(float).tiny)
    return Q[:, keep]


def principal_angles(X, Y, k: int = 5) -> np.ndarray:
    """Smallest ``k`` principal angles (degrees, ascending) between column spaces.

    Inputs are column-centred first.  Rank deficiency shortens the list.
    """
    Qx, Qy = _orthobasis(_centered(X)), _orthobasis(_centered(Y))
    r = min(Qx.shape[1], Qy.shape[1])
    if r < k:
        log.warning("rank %d below requested %d principal angles", r, k)
    if r == 0:
        return np.zeros(0)
    if Qx.shape[1] < Qy.shape[1]:
        Qx, Qy = Qy, Qx
    cos = np.clip(np.linalg.svd(Qx.T @ Qy, compute_uv=False), 0.0, 1.0)
    # arccos is inaccurate near 0 degrees, so small angles come from the sines
    sin = np.clip(np.linalg.svd(Qy - Qx @ (Qx.T @ Qy), compute_uv=False)[::-1], 0.0, 1.0)
    theta = np.where(cos > np.sqrt(0.5), np.arcsin(sin), np.arccos(cos))
    return np.sort(np.degrees(theta))[:min(r, k)]


# --------------------------------------------------------------------------
# Regimes and sampling
# --------------------------------------------------------------------------

def regime_mask(field: Field, v_threshold: float = FREE_FLOW_THRESHOLD) -> dict:
    """{"free": v >= threshold, "congested": v < threshold}, restricted to valid cells."""
    return {"free": field.mask & (field.v >= v_threshold),
            "congested": field.mask & (field.v < v_threshold)}


def sample_points(mask, grid: SpaceTimeGrid, n: int = 400, seed: int = 0) -> np.ndarray:
    """Up to ``n`` distinct cell centres drawn uniformly from ``mask``."""
    cells = np.flatnonzero(np.asarray(mask).ravel())
    if len(cells) <= n:
        if len(cells) < n:
            log.warning("mask has %d cells, fewer than n=%d; using all", len(cells), n)
        pick = cells
    else:
        pick = np.sort(make_rng(seed).choice(cells, size=n, replace=False))
    return grid.cell_points()[pick]


@dataclass(frozen=True)
class SimilarityReport:
    regime: str
    output: str
    cka: float
    angles: tuple
    n: int

    @property
    def min_deg(self) -> float:
        return min(self.angles) if self.angles else float("nan")

    @property
    def max_deg(self) -> float:
        return max(self.angles) if self.angles else float("nan")


def similarity(state: SVGPState, field: Field, n: int = 400, seed: int = 0,
               v_threshold: float = FREE_FLOW_THRESHOLD) -> list[SimilarityReport]:
    """Physics vs residual mean features per regime.

    CKA uses one column per output (a squared correlation); the principal
    angles compare the stacked multi-output feature matrices and are
    reported on every row of the regime.
    """
    out = []
    for regime, mask in regime_mask(field, v_threshold).items():
        pts = sample_points(mask, field.grid, n, seed)
        if len(pts) < 2:
            log.warning("regime %s has fewer than two cells; skipped", regime)
            continue
        _, phys, res = decompose_mean(state, pts)
        try:
            ang = tuple(float(a) for a in principal_angles(phys, res))
        except ValidationError:
            ang = ()
        for k, name in enumerate(state.standardizer.names):
            try:
                c = cka(phys[:, k], res[:, k])
            except ValidationError:
                c = float("nan")
            out.append(SimilarityReport(regime, name, c, ang, len(pts)))
    return out


# --------------------------------------------------------------------------
# Uncertainty maps
# --------------------------------------------------------------------------

def uq_fields(state: SVGPState, grid: SpaceTimeGrid) -> dict:
    """Latent and observation-space variance maps plus the noise-floor map.

    The floor is the observation variance with zero latent variance: the
    de-standardized noise for the LWR modes, its Jacobian pushforward for
    ARZ.
    """
    pf = predict_field(state, grid)
    out = {"mean": pf, "var_rho_latent": pf.var_rho_latent, "var_v_latent": pf.var_v_latent,
           "var_rho_obs": pf.var_rho_obs, "var_v_obs": pf.var_v_obs}
    s = np.asarray(state.standardizer.scale)
    lam = np.asarray(state.noise) * s**2
    if state.mode == "arz":
        dp = state.pressure.derivative(np.nan_to_num(pf.mu_rho))
        with np.errstate(divide="ignore", invalid="ignore"):
            out["floor_rho"] = np.where(dp > 0, (lam[0] + lam[1]) / dp**2, np.nan)
        out["floor_v"] = np.full(grid.shape, lam[1])
    elif state.mode == "lwr_scalar":
        F1 = float(state.fd.dspeed(state.rho0))
        out["floor_rho"] = np.full(grid.shape, lam[0] + state.extra_noise[0])
        out["floor_v"] = np.full(grid.shape, lam[0] * F1**2 + state.extra_noise[1])
    else:
        out["floor_rho"] = np.full(grid.shape, lam[0])
        out["floor_v"] = np.full(grid.shape, lam[1])
    return out


def coefficient_of_variation(a) -> float:
    a = np.asarray(a, float)
    a = a[np.isfinite(a)]
    m = float(a.mean())
    return float(a.std() / m) if m != 0 else float("inf")


# --------------------------------------------------------------------------
# Reports
# --------------------------------------------------------------------------

def share_rows(p, rep: ShareReport) -> list[list[str]]:
    return [[fmt(p), name, fmt(rep.S_phys[k]), fmt(rep.S_res[k]), fmt(rep.E_phys[k]),
             fmt(rep.E_res[k]), fmt(rep.joint_ratio), str(rep.m)]
            for k, name in enumerate(rep.names)]


def similarity_rows(p, reps: list[SimilarityReport]) -> list[list[str]]:
    return [[fmt(p), r.regime, r.output, fmt(r.cka), fmt(r.min_deg), fmt(r.max_deg), str(r.n)]
            for r in reps]


def write_shares(path, rows) -> None:
    write_csv(path, SHARES_HEADER, rows)


def write_similarity(path, rows) -> None:
    write_csv(path, SIMILARITY_HEADER, rows)


def diagnose(state: SVGPState, field: Field, n: int = 400, seed: int = 0,
             v_threshold: float = FREE_FLOW_THRESHOLD):
    """Shares over ``n`` sampled valid cells and per-regime similarity."""
    pts = sample_points(field.mask, field.grid, n, seed)
    mu, phys, res = decompose_mean(state, pts)
    rep = shares(mu, phys, res, state.standardizer.names)
    return rep, similarity(state, field, n, seed, v_threshold)


__all__ = [
    "decompose_mean", "shares", "joint_ratio", "energy_gap", "cka", "principal_angles",
    "regime_mask", "sample_points", "similarity", "uq_fields", "coefficient_of_variation",
    "ShareReport", "SimilarityReport", "diagnose",
]
