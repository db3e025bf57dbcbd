"""Sparse variational multi-output GP over operator-embedded kernels.

Latent outputs are stacked output-major: ``u = [u_0(Z), u_1(Z)]`` has length
``P * M`` for ``P`` outputs and ``M`` inducing inputs.  Observations are
``(location, output, value)`` triples; locations are stored once and
gathered, so kernel blocks are evaluated per location pair only.

Two training objectives are available:

``collapsed`` (default)
    q(u) is profiled out in closed form, leaving the Titsias bound
    ``log N(y | 0, Q_ff + Lam) - tr(K_ff - Q_ff) Lam^{-1} / 2``.  Its maximum
    over (m, S) equals the uncollapsed bound, so the optimal Gaussian q(u)
    is recovered exactly after training.
``joint``
    (m, S) are optimized alongside the hyperparameters in the whitened
    basis ``u = L_uu v``.

Either way the stored state exposes (m, S) in the K_uu basis.
"""

from __future__ import annotations

import functools
import json
import logging
import math
from dataclasses import dataclass, field, replace

import jax
import jax.numpy as jnp
import jax.scipy.linalg as jsl
import numpy as np
import optax
from scipy.linalg import cho_solve, solve_triangular

from . import kernels as kn
from .data import (DENSITY, CoordScaler, Field, ObservationSet, SpaceTimeGrid,
                   Standardizer, fit_standardizer, make_rng)
from .errors import NumericalError, ValidationError
from .physics import (FundamentalDiagram, PressureLaw, default_pressure,
                      equilibrium_constants, map_invariants)

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
LOG2PI = math.log(2.0 * math.pi)
MAX_JITTER_DOUBLINGS = 3


# --------------------------------------------------------------------------
# Configuration and state
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SVGPConfig:
    """Model and optimizer settings.

    Speeds (``c_f``, ``c_b``) are in m/s and ``tau0`` in seconds; the
    trainer converts them to standardized coordinates.  ``rho0=None`` picks
    the median observed density.  With ``normalize_sigma`` the initial base
    amplitude is ``sigma`` divided by the square root of the physics prior
    variance at zero lag, so operator kernels start at unit prior variance.
    """

    mode: str = "arz"
    arz_expansion: str = "as_printed"
    physical_map: str = "delta"
    M: int = 64
    iterations: int = 2000
    lr: float = 1e-2
    seed: int = 0
    q_mode: str = "collapsed"
    train_lambdas: bool = False
    train_z: bool = True
    task_coupling: bool = True
    tau0: float = 3.0
    rho0: float | None = None
    fd: FundamentalDiagram = field(default_factory=FundamentalDiagram)
    pressure: PressureLaw | None = None
    ell: float = 0.3
    sigma: float = 1.0
    b_res: float = 0.1
    ell_res: float = 0.1
    noise: float = 0.1
    jitter: float = kn.DEFAULT_JITTER
    c_f: float | None = None
    c_b: float | None = None
    w_f: float = 0.5
    extra_noise: tuple = (0.0, 0.0)
    pad_to: int = 128
    normalize_sigma: bool = True

    def __post_init__(self):
        if self.mode not in kn.MODES:
            raise ValidationError(f"unknown kernel mode {self.mode!r}")
        if self.arz_expansion not in ("as_printed", "full"):
            raise ValidationError(f"unknown arz_expansion {self.arz_expansion!r}")
        if self.physical_map not in ("delta", "affine"):
            raise ValidationError(f"unknown physical map {self.physical_map!r}")
        if self.q_mode not in ("collapsed", "joint"):
            raise ValidationError(f"unknown q_mode {self.q_mode!r}")
        if self.M < 1 or self.iterations < 0 or self.lr <= 0:
            raise ValidationError("need M >= 1, iterations >= 0 and lr > 0")
        for name in ("tau0", "ell", "sigma", "b_res", "ell_res", "noise"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be positive")

    @property
    def pressure_law(self) -> PressureLaw:
        return self.pressure if self.pressure is not None else default_pressure(self.fd)


@dataclass(frozen=True)
class SVGPState:
    """Trained sparse GP: everything needed for prediction.

    ``Z`` lives in standardized coordinates, ``noise`` holds standardized
    likelihood variances per output and ``params`` the constrained kernel
    hyperparameters in standardized coordinates (the dict fed to the kernel
    functions).
    """

    mode: str
    Z: np.ndarray
    m: np.ndarray
    S_factor: np.ndarray
    noise: np.ndarray
    params: dict
    standardizer: Standardizer
    coords: CoordScaler
    arz_expansion: str = "as_printed"
    physical_map: str = "delta"
    rho0: float = 0.05
    fd: FundamentalDiagram = field(default_factory=FundamentalDiagram)
    pressure: PressureLaw = field(default_factory=PressureLaw)
    jitter: float = kn.DEFAULT_JITTER
    extra_noise: tuple = (0.0, 0.0)
    unconstrained: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        P = kn.N_OUTPUTS[self.mode]
        M = len(self.Z)
        if M < 1:
            raise ValidationError("need at least one inducing point")
        if np.shape(self.m) != (P * M,) or np.shape(self.S_factor) != (P * M, P * M):
            raise ValidationError("m / S_factor do not match Z and the number of outputs")
        if np.any(np.diag(self.S_factor) <= 0):
            raise ValidationError("S_factor must have a positive diagonal")
        if np.shape(self.noise) != (P,) or np.any(np.asarray(self.noise) <= 0):
            raise ValidationError("noise must hold one positive variance per output")

    @property
    def n_outputs(self) -> int:
        return kn.N_OUTPUTS[self.mode]

    @property
    def S(self) -> np.ndarray:
        return self.S_factor @ self.S_factor.T

    @property
    def kernel(self) -> kn.KernelSpec:
        """Kernel in standardized coordinates."""
        return spec_from_params(self.params, self.mode, self.arz_expansion)


def spec_from_params(p: dict, mode: str, arz_expansion: str = "as_printed") -> kn.KernelSpec:
    P = kn.N_OUTPUTS[mode]
    res = tuple(kn.ResidualHyper(p[f"b_res{i}"], p[f"sigma_res{i}"], p[f"ell_x_res{i}"],
                                 p[f"ell_t_res{i}"]) for i in range(P))
    alpha, tau = p.get("alpha", 0.0), p.get("tau", 1.0)
    return kn.KernelSpec(
        mode=mode, base=kn.SEHyper(p["sigma"], p["ell_x"], p["ell_t"]), residual=res,
        lambda1=p.get("lambda1", 0.0), lambda2=p.get("lambda2", 0.0), alpha=alpha,
        beta=p.get("beta", 1.0 + alpha), tau=tau, arz_expansion=arz_expansion,
        lambda0=p.get("lambda0", 0.0), c_f=p.get("c_f", 1.0), c_b=p.get("c_b", -1.0),
        w_f=p.get("w_f", 0.5), coupling=p.get("coupling", 0.0),
        task_coupling="coupling" in p,
    )


def params_from_spec(spec: kn.KernelSpec) -> dict:
    """Kernel dict with the extra ``alpha``/``tau``/``beta`` keys kept."""
    p = {k: float(v) for k, v in spec.params().items()}
    p.update(alpha=float(spec.alpha), beta=float(spec.beta), tau=float(spec.tau))
    return p


def identity_standardizer(P: int) -> Standardizer:
    names = ("density", "speed") if P == 2 else ("density",)
    return Standardizer(tuple([0.0] * P), tuple([1.0] * P), names, tuple([False] * P))


def make_state(spec: kn.KernelSpec, Z, m=None, S_factor=None, noise=0.1,
               standardizer: Standardizer | None = None, coords: CoordScaler | None = None,
               **kwargs) -> SVGPState:
    """Assemble a state directly; m defaults to 0 and S to K_uu (the prior)."""
    P = spec.n_outputs
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    params = params_from_spec(spec)
    if m is None:
        m = np.zeros(P * len(Z))
    if S_factor is None:
        Kuu = _kuu(params, jnp.asarray(Z), spec.mode, spec.arz_expansion, P,
                   kwargs.get("jitter", kn.DEFAULT_JITTER))
        S_factor = np.linalg.cholesky(np.asarray(Kuu))
    noise = np.broadcast_to(np.asarray(noise, dtype=float), (P,)).copy()
    return SVGPState(
        mode=spec.mode, Z=Z, m=np.asarray(m, float), S_factor=np.asarray(S_factor, float),
        noise=noise, params=params,
        standardizer=standardizer or identity_standardizer(P),
        coords=coords or CoordScaler(0.0, 1.0, 0.0, 1.0),
        arz_expansion=spec.arz_expansion, **kwargs,
    )


# --------------------------------------------------------------------------
# Latent-space data
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class LatentData:
    """Standardized regression data: ``y[n]`` observes output ``out[n]`` at
    location ``X[idx[n]]``.  ``w`` masks padding entries (0 = ignore)."""

    X: np.ndarray
    idx: np.ndarray
    out: np.ndarray
    y: np.ndarray
    w: np.ndarray | None = None

    @classmethod
    def from_points(cls, points, outputs, y):
        """One observation per row of ``points`` (no location sharing)."""
        points = np.atleast_2d(np.asarray(points, float))
        return cls(points, np.arange(len(points)), np.asarray(outputs, int), np.asarray(y, float))

    @property
    def n(self) -> int:
        return int(np.sum(self.weights))

    @property
    def weights(self) -> np.ndarray:
        return np.ones(len(self.y)) if self.w is None else self.w

    def is_complete(self) -> bool:
        """Every location carries every output exactly once."""
        if self.idx is None:
            return True
        P = int(self.out.max()) + 1 if len(self.out) else 0
        if len(self.y) != P * len(self.X) or self.w is not None:
            return False
        key = self.out * len(self.X) + self.idx
        return len(np.unique(key)) == len(key)

    def canonical(self, multiple: int, n_outputs: int) -> "LatentData":
        """Layout used by the trainer.

        Complete data is reordered output-major (``y[o * n + i]`` observes
        output ``o`` at ``X[i]``) and marked by ``idx=None`` so K_uf is a plain
        reshape of the kernel blocks; other data keeps the gather layout.
        Both are padded to a multiple of ``multiple``.
        """
        if self.idx is None:
            return self
        if not self.is_complete() or int(self.out.max()) + 1 != n_outputs:
            return self.padded(multiple)
        n = len(self.X)
        nl = _bucket(n, multiple)
        y = np.zeros((n_outputs, nl))
        y[self.out, self.idx] = self.y
        w = np.zeros((n_outputs, nl))
        w[:, :n] = 1.0
        X = np.vstack([self.X, np.repeat(self.X[:1], nl - n, axis=0)])
        return LatentData(X, None, np.repeat(np.arange(n_outputs), nl), y.ravel(), w.ravel())

    def padded(self, multiple: int) -> "LatentData":
        """Pad locations and observations to a multiple of ``multiple`` so
        repeated fits of similar size reuse compiled code."""
        if multiple <= 1:
            return replace(self, w=self.weights)
        nl = _bucket(len(self.X), multiple)
        no = _bucket(len(self.y), multiple)
        X = np.vstack([self.X, np.repeat(self.X[:1], nl - len(self.X), axis=0)])
        pad = no - len(self.y)
        return LatentData(
            X,
            np.concatenate([self.idx, np.zeros(pad, int)]),
            np.concatenate([self.out, np.zeros(pad, int)]),
            np.concatenate([self.y, np.zeros(pad)]),
            np.concatenate([self.weights, np.zeros(pad)]),
        )


def _bucket(n: int, base: int) -> int:
    """Round n up to a coarse size grid (steps of base, 2 base, 4 base as n
    grows) so fits of similar size share one compiled objective."""
    if base <= 1:
        return n
    for limit, step in ((8 * base, base), (32 * base, 2 * base)):
        if n <= limit:
            return -(-n // step) * step
    return -(-n // (4 * base)) * (4 * base)


def _median_rho0(rho, fd: FundamentalDiagram) -> float:
    r = float(np.median(rho))
    return float(np.clip(r, 1e-3 * fd.rho_jam, 0.999 * fd.rho_jam))


def prepare_data(obs: ObservationSet, mode: str, pressure: PressureLaw, fd: FundamentalDiagram,
                 rho0: float | None = None, coords: CoordScaler | None = None,
                 standardizer: Standardizer | None = None):
    """Turn physical observations into standardized latent regression data.

    ARZ uses locations where both outputs are observed and regresses on the
    invariants (w1, w2); the scalar LWR mode regresses on density only with
    the standardizer centred at rho0.  Returns (data, standardizer, coords,
    rho0).
    """
    if len(obs) == 0:
        raise ValidationError("no observations")
    if mode == "arz":
        pts, rho, v = obs.paired()
        if len(pts) < 2:
            raise ValidationError("ARZ mode needs at least two locations observing both outputs")
        w1, w2 = map_invariants(rho, v, pressure)
        n = len(pts)
        idx = np.concatenate([np.arange(n), np.arange(n)])
        out = np.repeat([0, 1], n)
        y = np.concatenate([w1, w2])
        r0 = rho0 if rho0 is not None else _median_rho0(rho, fd)
        names = ("w1", "w2")
        center = None
    elif mode == "lwr_scalar":
        d = obs.select(DENSITY)
        pts, idx = d.locations()
        out = np.zeros(len(d), int)
        y = d.value
        r0 = rho0 if rho0 is not None else _median_rho0(y, fd)
        names = ("drho",)
        center = (r0,)
    else:
        pts, idx = obs.locations()
        out = obs.output.copy()
        y = obs.value.copy()
        dens = obs.value[obs.output == DENSITY]
        r0 = rho0 if rho0 is not None else (_median_rho0(dens, fd) if len(dens) else 0.5 * fd.rho_jam)
        names = ("density", "speed")
        center = None
    coords = coords or CoordScaler.fit(pts)
    P = kn.N_OUTPUTS[mode]
    standardizer = standardizer or fit_standardizer(y, out, P, names=names, center=center)
    yz = standardizer.standardize(y, out)
    return LatentData(coords(pts), idx, out, yz), standardizer, coords, float(r0)


# --------------------------------------------------------------------------
# Core linear algebra (JAX)
# --------------------------------------------------------------------------

def _blocks_to_matrix(blocks):
    """(P, P, n1, n2) -> (P n1, P n2), output-major."""
    P, _, n1, n2 = blocks.shape
    return blocks.transpose(0, 2, 1, 3).reshape(P * n1, P * n2)


def _kuu(p, Z, mode, expansion, P, jitter):
    K = _blocks_to_matrix(kn.total_blocks(Z, Z, p, mode, expansion))
    return K + jitter * jnp.mean(jnp.diag(K)) * jnp.eye(P * Z.shape[0])


def _kuf(p, Z, X, idx, out, mode, expansion, part="total"):
    """K_uf of shape (P M, N) for observations (X[idx], out).

    ``idx=None`` means complete output-major data, where no gather is needed.
    """
    if part == "total":
        b = kn.total_blocks(Z, X, p, mode, expansion)
    elif part == "physics":
        b = kn.physics_blocks(Z, X, p, mode, expansion)
    else:
        P = kn.N_OUTPUTS[mode]
        res = kn.residual_blocks(Z, X, p, P)
        b = jnp.eye(P)[:, :, None, None] * res[:, None]
    if idx is None:
        return _blocks_to_matrix(b)
    g = b[:, out, :, idx]  # advanced indices first: (N, P, M)
    P, M = b.shape[0], b.shape[2]
    return g.transpose(1, 2, 0).reshape(P * M, -1)


def _kff_diag(p, out, mode, expansion):
    return jnp.diag(kn.zero_lag(p, mode, expansion))[out]


def collapsed_terms(p, noise, Z, X, idx, out, y, w, mode, expansion, jitter):
    """Titsias bound plus the pieces needed to recover the optimal q(u)."""
    P = kn.N_OUTPUTS[mode]
    Kuu = _kuu(p, Z, mode, expansion, P, jitter)
    Luu = jnp.linalg.cholesky(Kuu)
    Kuf = _kuf(p, Z, X, idx, out, mode, expansion)
    lam = noise[out]
    sq = jnp.sqrt(w) / jnp.sqrt(lam)  # w is data, so no derivative through sqrt(0)
    # inverting the small triangular factor and multiplying is much faster
    # on CPU than a triangular solve against N right-hand sides
    Linv = jsl.solve_triangular(Luu, jnp.eye(Luu.shape[0]), lower=True)
    A = (Linv @ Kuf) * sq[None, :]
    B = jnp.eye(A.shape[0]) + A @ A.T
    LB = jnp.linalg.cholesky(B)
    yt = y * sq
    c = jsl.solve_triangular(LB, A @ yt, lower=True)
    kff = _kff_diag(p, out, mode, expansion)
    bound = (-0.5 * jnp.sum(w * (LOG2PI + jnp.log(lam)))
             - jnp.sum(jnp.log(jnp.diag(LB)))
             - 0.5 * jnp.dot(yt, yt) + 0.5 * jnp.dot(c, c)
             - 0.5 * jnp.sum(w * kff / lam) + 0.5 * jnp.sum(A * A))
    return bound, Luu, LB, c


def collapsed_bound(p, noise, Z, X, idx, out, y, w, mode, expansion, jitter):
    return collapsed_terms(p, noise, Z, X, idx, out, y, w, mode, expansion, jitter)[0]


def optimal_q(Luu, LB, c):
    """Closed-form optimum: m = L_uu LB^{-T} c, S = L_uu B^{-1} L_uu^T."""
    m = Luu @ jsl.solve_triangular(LB.T, c, lower=False)
    Linv = jsl.solve_triangular(LB, jnp.eye(LB.shape[0]), lower=True)
    # S = (Luu LB^{-T}) (Luu LB^{-T})^T
    F = Luu @ Linv.T
    return m, F


def explicit_elbo(p, noise, Z, X, idx, out, y, w, m, S_factor, mode, expansion, jitter):
    """Expected log-likelihood minus KL[q(u) || p(u)] with q = N(m, S)."""
    P = kn.N_OUTPUTS[mode]
    Kuu = _kuu(p, Z, mode, expansion, P, jitter)
    Luu = jnp.linalg.cholesky(Kuu)
    Kuf = _kuf(p, Z, X, idx, out, mode, expansion)
    Ainv = jsl.solve_triangular(Luu, Kuf, lower=True)  # Luu^{-1} Kuf
    mu = Ainv.T @ jsl.solve_triangular(Luu, m, lower=True)
    kff = _kff_diag(p, out, mode, expansion)
    W = jsl.solve_triangular(Luu, S_factor, lower=True)  # Luu^{-1} S^{1/2}
    Bm = W.T @ Ainv  # S^{T/2} Kuu^{-1} Kuf
    var = kff - jnp.sum(Ainv * Ainv, axis=0) + jnp.sum(Bm * Bm, axis=0)
    lam = noise[out]
    ell = -0.5 * jnp.sum(w * (LOG2PI + jnp.log(lam) + ((y - mu) ** 2 + var) / lam))
    return ell - kl_divergence(Luu, m, S_factor)


def kl_divergence(Luu, m, S_factor):
    """KL[N(m, S) || N(0, K_uu)] with K_uu = Luu Luu^T and S = S_factor S_factor^T."""
    n = m.shape[0]
    W = jsl.solve_triangular(Luu, S_factor, lower=True)
    a = jsl.solve_triangular(Luu, m, lower=True)
    logdet_k = 2.0 * jnp.sum(jnp.log(jnp.abs(jnp.diag(Luu))))
    logdet_s = 2.0 * jnp.sum(jnp.log(jnp.abs(jnp.diag(S_factor))))
    return 0.5 * (jnp.sum(W * W) + jnp.dot(a, a) - n + logdet_k - logdet_s)


def whitened_elbo(p, noise, Z, X, idx, out, y, w, mw, Lw, mode, expansion, jitter):
    """Bound with u = L_uu v, q(v) = N(mw, Lw Lw^T)."""
    P = kn.N_OUTPUTS[mode]
    Luu = jnp.linalg.cholesky(_kuu(p, Z, mode, expansion, P, jitter))
    Kuf = _kuf(p, Z, X, idx, out, mode, expansion)
    A = jsl.solve_triangular(Luu, Kuf, lower=True)
    mu = A.T @ mw
    LA = Lw.T @ A
    var = _kff_diag(p, out, mode, expansion) - jnp.sum(A * A, 0) + jnp.sum(LA * LA, 0)
    lam = noise[out]
    ell = -0.5 * jnp.sum(w * (LOG2PI + jnp.log(lam) + ((y - mu) ** 2 + var) / lam))
    kl = 0.5 * (jnp.sum(Lw * Lw) + jnp.dot(mw, mw) - mw.shape[0]
                - 2.0 * jnp.sum(jnp.log(jnp.abs(jnp.diag(Lw)))))
    return ell - kl


# --------------------------------------------------------------------------
# Parameterization
# --------------------------------------------------------------------------

def constrain(theta: dict, fixed: dict, mode: str):
    """Unconstrained dict -> (kernel params, noise variances, Z)."""
    a = {**fixed, **theta}
    P = kn.N_OUTPUTS[mode]
    p = {"sigma": jnp.exp(a["log_sigma"]), "ell_x": jnp.exp(a["log_ell_x"]),
         "ell_t": jnp.exp(a["log_ell_t"])}
    for i in range(P):
        p[f"b_res{i}"] = jnp.exp(a["log_b_res"][i])
        p[f"sigma_res{i}"] = 1.0
        p[f"ell_x_res{i}"] = jnp.exp(a["log_ell_x_res"][i])
        p[f"ell_t_res{i}"] = jnp.exp(a["log_ell_t_res"][i])
    if mode == "arz":
        tau = jnp.exp(a["log_tau"])
        p.update(lambda1=a["lambda1"], lambda2=a["lambda2"], alpha=a["alpha"], tau=tau,
                 beta=1.0 + a["alpha"], a=a["alpha"] / tau, b=(1.0 + a["alpha"]) / tau)
    elif mode == "lwr_scalar":
        p["lambda0"] = a["lambda0"]
    elif mode == "lwr_bidirectional":
        p.update(c_f=a["c_f"], c_b=a["c_b"], w_f=jax.nn.sigmoid(a["logit_w_f"]))
        if "coupling" in a:
            p["coupling"] = a["coupling"]
    return p, jnp.exp(a["log_noise"]), a["Z"]


def initial_parameters(cfg: SVGPConfig, data: LatentData, standardizer: Standardizer,
                       coords: CoordScaler, rho0: float):
    """Initial (trainable, fixed) unconstrained dicts."""
    P = kn.N_OUTPUTS[cfg.mode]
    pl = cfg.pressure_law
    eq = equilibrium_constants(rho0, cfg.fd, pl, cfg.tau0)
    r = coords.t_scale / coords.x_scale  # m/s -> standardized speed
    theta = {
        "log_sigma": np.log(cfg.sigma), "log_ell_x": np.log(cfg.ell), "log_ell_t": np.log(cfg.ell),
        "log_noise": np.full(P, np.log(cfg.noise)),
        "log_b_res": np.full(P, np.log(cfg.b_res)),
        "log_ell_x_res": np.full(P, np.log(cfg.ell_res)),
        "log_ell_t_res": np.full(P, np.log(cfg.ell_res)),
    }
    fixed = {}
    lam = fixed if not cfg.train_lambdas else theta
    if cfg.mode == "arz":
        theta["alpha"] = eq.alpha
        theta["log_tau"] = np.log(cfg.tau0 / coords.t_scale)
        lam["lambda1"] = eq.lambda1_0 * r
        lam["lambda2"] = eq.lambda2_0 * r
    elif cfg.mode == "lwr_scalar":
        lam["lambda0"] = eq.lambda0_lwr * r
    elif cfg.mode == "lwr_bidirectional":
        c_f = cfg.c_f if cfg.c_f is not None else cfg.fd.v_f
        c_b = cfg.c_b if cfg.c_b is not None else -cfg.fd.v_f
        lam["c_f"] = c_f * r
        lam["c_b"] = c_b * r
        w = min(max(cfg.w_f, 1e-6), 1 - 1e-6)
        theta["logit_w_f"] = np.log(w / (1 - w))
        if cfg.task_coupling:
            theta["coupling"] = eq.dspeed0 * standardizer.scale[0] / standardizer.scale[1]
    if cfg.normalize_sigma:
        # scale sigma so the physics prior has unit mean variance at zero lag
        p0, _, _ = constrain(_as_jnp({**theta, **fixed, "Z": np.zeros((1, 2))}), {}, cfg.mode)
        phys = kn.physics_blocks(np.zeros((1, 2)), np.zeros((1, 2)), p0, cfg.mode,
                                 cfg.arz_expansion)[:, :, 0, 0]
        v = float(np.mean(np.diag(np.asarray(phys)))) / cfg.sigma**2
        if np.isfinite(v) and v > 0:
            theta["log_sigma"] = np.log(cfg.sigma / math.sqrt(v))
    Z = farthest_point_inducing(data.X, min(cfg.M, len(data.X)), cfg.seed)
    (theta if cfg.train_z else fixed)["Z"] = Z
    return _as_jnp(theta), _as_jnp(fixed)


def _as_jnp(d: dict) -> dict:
    return {k: jnp.asarray(v, dtype=jnp.float64) for k, v in d.items()}


def farthest_point_inducing(X, M: int, seed: int = 0) -> np.ndarray:
    """Greedy farthest-point subset of the rows of X, first pick seeded."""
    X = np.asarray(X, dtype=float)
    if M >= len(X):
        return X.copy()
    rng = make_rng(seed)
    chosen = [int(rng.integers(len(X)))]
    d = np.sum((X - X[chosen[0]]) ** 2, axis=1)
    for _ in range(M - 1):
        k = int(np.argmax(d))
        chosen.append(k)
        d = np.minimum(d, np.sum((X - X[k]) ** 2, axis=1))
    return X[np.sort(chosen)].copy()


# --------------------------------------------------------------------------
# Training
# --------------------------------------------------------------------------

@functools.lru_cache(maxsize=None)
def _compiled(mode: str, expansion: str, q_mode: str):
    """Jitted Adam step (returning the pre-step objective) and its optimizer.

    The learning rate lives in the optimizer state, so one compiled step
    serves every fit with the same structure and padded data size.
    """
    opt = optax.inject_hyperparams(optax.adam)(learning_rate=1e-2)

    def objective(theta, fixed, X, idx, out, y, w, jitter):
        p, noise, Z = constrain(theta, fixed, mode)
        if q_mode == "collapsed":
            return -collapsed_bound(p, noise, Z, X, idx, out, y, w, mode, expansion, jitter)
        Lw = jnp.tril(theta["L_raw"], -1) + jnp.diag(jnp.exp(jnp.diag(theta["L_raw"])))
        return -whitened_elbo(p, noise, Z, X, idx, out, y, w, theta["m_w"], Lw, mode,
                              expansion, jitter)

    vg = jax.value_and_grad(objective)

    def step(theta, opt_state, fixed, X, idx, out, y, w, jitter, lo, hi):
        loss, g = vg(theta, fixed, X, idx, out, y, w, jitter)
        updates, opt_state = opt.update(g, opt_state, theta)
        new = optax.apply_updates(theta, updates)
        if "Z" in new:
            new = {**new, "Z": jnp.clip(new["Z"], lo, hi)}
        return new, opt_state, loss

    return jax.jit(step), opt


def _dump(theta, fixed, mode) -> str:
    p, noise, _ = constrain(theta, fixed, mode)
    return json.dumps({k: float(v) for k, v in p.items()} | {"noise": np.asarray(noise).tolist()})


def train(obs, config: SVGPConfig | None = None, data: LatentData | None = None,
          standardizer: Standardizer | None = None, coords: CoordScaler | None = None,
          rho0: float | None = None, Z=None) -> SVGPState:
    """Fit the sparse GP by Adam on the negative bound; returns the best state.

    ``obs`` is an ObservationSet in physical units.  Alternatively pass
    ``obs=None`` with prepared ``data`` (plus ``standardizer``/``coords``),
    which is how tests drive the trainer on latent-space data.  ``Z``
    overrides the inducing inputs (standardized coordinates).
    """
    cfg = config or SVGPConfig()
    if data is None:
        data, standardizer, coords, rho0 = prepare_data(
            obs, cfg.mode, cfg.pressure_law, cfg.fd, cfg.rho0 if rho0 is None else rho0)
    else:
        P = kn.N_OUTPUTS[cfg.mode]
        standardizer = standardizer or identity_standardizer(P)
        coords = coords or CoordScaler(0.0, 1.0, 0.0, 1.0)
        rho0 = rho0 if rho0 is not None else (cfg.rho0 or 0.5 * cfg.fd.critical_density)
    if data.n < 2 * cfg.M:
        log.warning("only %d observations for M=%d inducing points (>= 2M recommended)",
                    data.n, cfg.M)
    theta, fixed = initial_parameters(cfg, data, standardizer, coords, rho0)
    if Z is not None:
        (theta if cfg.train_z else fixed)["Z"] = jnp.asarray(np.atleast_2d(Z), dtype=jnp.float64)
    PM = kn.N_OUTPUTS[cfg.mode] * (theta.get("Z", fixed.get("Z"))).shape[0]
    if cfg.q_mode == "joint":
        theta["m_w"] = jnp.zeros(PM)
        theta["L_raw"] = jnp.zeros((PM, PM))

    pd = data.canonical(cfg.pad_to, kn.N_OUTPUTS[cfg.mode])
    span = pd.X.max(0) - pd.X.min(0)
    lo = jnp.asarray(data.X.min(0) - 0.1 * span)
    hi = jnp.asarray(data.X.max(0) + 0.1 * span)
    arrays = (jnp.asarray(pd.X), None if pd.idx is None else jnp.asarray(pd.idx), jnp.asarray(pd.out),
              jnp.asarray(pd.y), jnp.asarray(pd.w))
    step, opt = _compiled(cfg.mode, cfg.arz_expansion, cfg.q_mode)

    def fresh_state(th, lr):
        st = opt.init(th)
        st.hyperparams["learning_rate"] = jnp.asarray(lr, dtype=jnp.float64)
        return st

    def objective(th):
        return float(step(th, fresh_state(th, 0.0), fixed, *arrays, jitter, lo, hi)[2])

    jitter = _find_jitter(lambda th, j: float(step(th, fresh_state(th, 0.0), fixed, *arrays,
                                                   j, lo, hi)[2]),
                          theta, fixed, cfg)
    lr = cfg.lr
    opt_state = fresh_state(theta, lr)
    best_loss = objective(theta)
    best = theta
    trace = []
    for it in range(cfg.iterations):
        new, new_state, loss = step(theta, opt_state, fixed, *arrays, jitter, lo, hi)
        loss = float(loss)
        if not np.isfinite(loss):
            # fall back to the best point with a smaller step
            lr *= 0.5
            theta = best
            opt_state = fresh_state(theta, lr)
            trace.append(-best_loss)
            if lr < cfg.lr * 1e-4:
                log.warning("stopping early at iteration %d: objective not finite", it)
                break
            continue
        if loss < best_loss:
            best_loss, best = loss, theta
        trace.append(-best_loss)
        theta, opt_state = new, new_state
        if it % 100 == 0:
            log.debug("iter %d  -bound %.6g  best %.6g", it, loss, best_loss)
    final = objective(theta)
    if np.isfinite(final) and final < best_loss:
        best_loss, best = final, theta
        if trace:
            trace[-1] = -best_loss

    p, noise, Zb = constrain(best, fixed, cfg.mode)
    if cfg.q_mode == "collapsed":
        _, Luu, LB, c = collapsed_terms(p, noise, Zb, *arrays, cfg.mode, cfg.arz_expansion, jitter)
        m, S_factor = optimal_q(Luu, LB, c)
        S_factor = jnp.linalg.cholesky(S_factor @ S_factor.T)
    else:
        Luu = jnp.linalg.cholesky(_kuu(p, Zb, cfg.mode, cfg.arz_expansion,
                                       kn.N_OUTPUTS[cfg.mode], jitter))
        Lw = jnp.tril(best["L_raw"], -1) + jnp.diag(jnp.exp(jnp.diag(best["L_raw"])))
        m = Luu @ best["m_w"]
        S_factor = Luu @ Lw
    S_factor = _positive_diag(np.asarray(S_factor))
    if not np.all(np.isfinite(S_factor)):
        raise NumericalError("ill-conditioned K_uu: could not form the variational covariance")
    unconstrained = {k: np.asarray(v).tolist() for k, v in {**fixed, **best}.items()
                     if k not in ("Z", "m_w", "L_raw")}
    return SVGPState(
        mode=cfg.mode, Z=np.asarray(Zb), m=np.asarray(m), S_factor=S_factor,
        noise=np.asarray(noise), params={k: float(v) for k, v in p.items()},
        standardizer=standardizer, coords=coords, arz_expansion=cfg.arz_expansion,
        physical_map=cfg.physical_map, rho0=float(rho0), fd=cfg.fd, pressure=cfg.pressure_law,
        jitter=float(jitter), extra_noise=tuple(cfg.extra_noise), unconstrained=unconstrained,
        meta={"seed": cfg.seed, "iterations": cfg.iterations, "final_elbo": -best_loss,
              "q_mode": cfg.q_mode, "n_obs": int(data.n), "trace": trace},
    )


def _positive_diag(L: np.ndarray) -> np.ndarray:
    """Flip column signs so the triangular factor has a positive diagonal."""
    s = np.sign(np.diag(L))
    s[s == 0] = 1.0
    return L * s[None, :]


def _find_jitter(objective, theta, fixed, cfg) -> float:
    """Base jitter, doubled up to three times until the bound is finite."""
    p, _, Z = constrain(theta, fixed, cfg.mode)
    P = kn.N_OUTPUTS[cfg.mode]
    j = cfg.jitter
    for _ in range(MAX_JITTER_DOUBLINGS + 1):
        chol_ok = bool(np.all(np.isfinite(
            np.asarray(jnp.linalg.cholesky(_kuu(p, Z, cfg.mode, cfg.arz_expansion, P, j))))))
        if chol_ok and np.isfinite(objective(theta, j)):
            return j
        if not chol_ok:
            j *= 2.0
            continue
        raise ValidationError("non-finite ELBO at initialization; hyperparameters: "
                              + _dump(theta, fixed, cfg.mode))
    raise NumericalError("ill-conditioned K_uu")


# --------------------------------------------------------------------------
# Evaluation on a state
# --------------------------------------------------------------------------

def latent_data(state: SVGPState, obs) -> LatentData:
    """Observations mapped with the state's own standardizer and coordinates."""
    if isinstance(obs, LatentData):
        return obs
    data, *_ = prepare_data(obs, state.mode, state.pressure, state.fd, state.rho0,
                            coords=state.coords, standardizer=state.standardizer)
    return data


def _cholesky_escalating(K, jitter0: float):
    """Cholesky of K + j mean(diag) I for j = jitter0 * 2^k, k <= 3."""
    base = float(np.mean(np.diag(K)))
    j = jitter0
    for _ in range(MAX_JITTER_DOUBLINGS + 1):
        L = np.linalg.cholesky(K + j * base * np.eye(len(K))) if _is_pd(K, j * base) else None
        if L is not None:
            return L, j
        j *= 2.0
    raise NumericalError("ill-conditioned K_uu")


def _is_pd(K, add) -> bool:
    try:
        np.linalg.cholesky(K + add * np.eye(len(K)))
        return True
    except np.linalg.LinAlgError:
        return False


def _state_kuu(state: SVGPState):
    K = np.asarray(_blocks_to_matrix(kn.total_blocks(state.Z, state.Z, state.params,
                                                     state.mode, state.arz_expansion)))
    return _cholesky_escalating(K, state.jitter)


def _data_arrays(d: LatentData):
    return (jnp.asarray(d.X), None if d.idx is None else jnp.asarray(d.idx),
            jnp.asarray(d.out), jnp.asarray(d.y), jnp.asarray(d.weights))


def _state_args(state: SVGPState):
    return state.params, jnp.asarray(state.noise), jnp.asarray(state.Z)


def elbo(state: SVGPState, obs) -> float:
    """Uncollapsed bound at the state's (m, S) in nats."""
    d = latent_data(state, obs)
    _, j = _state_kuu(state)
    return float(explicit_elbo(*_state_args(state), *_data_arrays(d), jnp.asarray(state.m),
                               jnp.asarray(state.S_factor), state.mode, state.arz_expansion, j))


def kl_term(state: SVGPState) -> float:
    Luu, _ = _state_kuu(state)
    return float(kl_divergence(jnp.asarray(Luu), jnp.asarray(state.m), jnp.asarray(state.S_factor)))


def optimal_state(state: SVGPState, obs) -> SVGPState:
    """Replace (m, S) by the closed-form optimum for the given data."""
    d = latent_data(state, obs)
    _, j = _state_kuu(state)
    _, Luu, LB, c = collapsed_terms(*_state_args(state), *_data_arrays(d), state.mode,
                                    state.arz_expansion, j)
    m, F = optimal_q(Luu, LB, c)
    S_factor = _positive_diag(np.linalg.cholesky(np.asarray(F @ F.T)))
    return replace(state, m=np.asarray(m), S_factor=S_factor)


def collapsed_elbo(state: SVGPState, obs) -> float:
    """Bound with q(u) at its closed-form optimum."""
    d = latent_data(state, obs)
    _, j = _state_kuu(state)
    return float(collapsed_bound(*_state_args(state), *_data_arrays(d), state.mode,
                                 state.arz_expansion, j))


# --------------------------------------------------------------------------
# Prediction
# --------------------------------------------------------------------------

def _query_blocks(state: SVGPState, Xz, part="total"):
    if part == "total":
        return kn.total_blocks(state.Z, Xz, state.params, state.mode, state.arz_expansion)
    if part == "physics":
        return kn.physics_blocks(state.Z, Xz, state.params, state.mode, state.arz_expansion)
    P = state.n_outputs
    res = kn.residual_blocks(state.Z, Xz, state.params, P)
    return jnp.eye(P)[:, :, None, None] * res[:, None]


def predict_latent(state: SVGPState, points, standardized: bool = False, chunk: int = 2048):
    """Latent predictive mean (n, P) and covariance (n, P, P), standardized units.

    ``points`` are physical (x, t) unless ``standardized`` is set.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    Xz = pts if standardized else state.coords(pts)
    Luu, _ = _state_kuu(state)
    P = state.n_outputs
    a = _solve_chol(Luu, state.m)
    W = _tri(Luu, state.S_factor)
    kss = np.asarray(kn.zero_lag(state.params, state.mode, state.arz_expansion))
    means, covs = [], []
    for s in range(0, len(Xz), chunk):
        Xc = Xz[s:s + chunk]
        n = len(Xc)
        Kuq = np.asarray(_blocks_to_matrix(_query_blocks(state, Xc)))  # (PM, P n)
        mu = (Kuq.T @ a).reshape(P, n).T
        A = _tri(Luu, Kuq).reshape(-1, P, n)
        B = (W.T @ A.reshape(len(W), -1)).reshape(-1, P, n)
        cov = kss[None] - np.einsum("koi,kpi->iop", A, A) + np.einsum("koi,kpi->iop", B, B)
        means.append(mu)
        covs.append(cov)
    return np.concatenate(means), np.concatenate(covs)


def _tri(L, B):
    return solve_triangular(L, B, lower=True)


def _solve_chol(L, b):
    return cho_solve((L, True), b)


def mean_components(state: SVGPState, points, standardized: bool = False):
    """Posterior mean split into physics and residual parts (standardized).

    With alpha = K_uu^{-1} m: mu = K_xu alpha, mu_phys = K^phys_xu alpha and
    mu_res = K^res_xu alpha; each is (n, P).
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    Xz = pts if standardized else state.coords(pts)
    Luu, _ = _state_kuu(state)
    a = _solve_chol(Luu, state.m)
    P, n = state.n_outputs, len(Xz)
    out = []
    for part in ("total", "physics", "residual"):
        K = np.asarray(_blocks_to_matrix(_query_blocks(state, Xz, part)))
        out.append((K.T @ a).reshape(P, n).T)
    return tuple(out)


# --------------------------------------------------------------------------
# Physical maps
# --------------------------------------------------------------------------

@dataclass
class PredictiveField:
    grid: SpaceTimeGrid
    mu_rho: np.ndarray
    mu_v: np.ndarray
    var_rho_latent: np.ndarray
    var_v_latent: np.ndarray
    var_rho_obs: np.ndarray
    var_v_obs: np.ndarray

    def as_field(self) -> Field:
        g = self.grid
        return Field(g, np.maximum(np.nan_to_num(self.mu_rho), 0.0), np.maximum(self.mu_v, 0.0))


def delta_map(mu_w, cov_pred, cov_tot, pl: PressureLaw) -> dict:
    """Nonlinear inverse plus Jacobian pushforward for (w1, w2) -> (rho, v).

    rho = P^{-1}(max(w1 - w2, 0)); j_rho = [1, -1] / P'(rho), j_v = [0, 1].
    Density variances are NaN where rho = 0 (singular Jacobian).
    """
    mu_w = np.asarray(mu_w, float)
    rho = pl.inverse(np.maximum(mu_w[:, 0] - mu_w[:, 1], 0.0))
    dp = pl.derivative(rho)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.where(dp > 0, 1.0 / dp, np.nan)
    j = np.stack([inv, -inv], axis=1)

    def quad(C):
        return np.einsum("ni,nij,nj->n", j, C, j)

    return {"mu_rho": rho, "mu_v": mu_w[:, 1].copy(),
            "var_rho_latent": quad(cov_pred), "var_v_latent": cov_pred[:, 1, 1].copy(),
            "var_rho_obs": quad(cov_tot), "var_v_obs": cov_tot[:, 1, 1].copy()}


def affine_map(mu_w, cov_pred, cov_tot, rho0: float, pl: PressureLaw) -> dict:
    """Map linearized at rho0: rho = rho0 - P(rho0)/P'(rho0) + (w1 - w2)/P'(rho0)."""
    dp0 = float(pl.derivative(rho0))
    if dp0 == 0.0:
        raise ValidationError("affine map needs P'(rho0) != 0")
    A = np.array([[1.0 / dp0, -1.0 / dp0], [0.0, 1.0]])
    off = np.array([rho0 - float(pl(rho0)) / dp0, 0.0])
    mu = np.asarray(mu_w, float) @ A.T + off
    cp = A @ cov_pred @ A.T
    ct = A @ cov_tot @ A.T
    return {"mu_rho": mu[:, 0], "mu_v": mu[:, 1],
            "var_rho_latent": cp[:, 0, 0], "var_v_latent": cp[:, 1, 1],
            "var_rho_obs": ct[:, 0, 0], "var_v_obs": ct[:, 1, 1]}


def map_to_physical_arz(mu_z, cov_z, state: SVGPState, kind: str | None = None) -> dict:
    """De-standardize the invariants, add noise, then map to (rho, v)."""
    if state.mode != "arz":
        raise ValidationError("map_to_physical_arz needs an ARZ state")
    kind = kind or state.physical_map
    D = np.asarray(state.standardizer.scale)
    mu_w = np.asarray(state.standardizer.mean) + np.asarray(mu_z) * D
    cov_pred = np.asarray(cov_z) * np.outer(D, D)[None]
    cov_tot = cov_pred + np.diag(np.asarray(state.noise) * D**2)[None]
    if kind == "delta":
        return delta_map(mu_w, cov_pred, cov_tot, state.pressure)
    if kind == "affine":
        return affine_map(mu_w, cov_pred, cov_tot, state.rho0, state.pressure)
    raise ValidationError(f"unknown physical map {kind!r}")


def lwr_scalar_map(mu_z, var_z, noise_z, s_r: float, rho0: float, v0: float, dspeed0: float,
                   extra_noise=(0.0, 0.0)) -> dict:
    """(rho, v) = m0 + F s_r mu with F = [1, V'(rho0)]^T.

    Covariance F s_r^2 (Sigma + noise) F^T + diag(extra) for observations and
    F s_r^2 Sigma F^T for the latent field.
    """
    mu_z = np.asarray(mu_z, float).ravel()
    var_z = np.asarray(var_z, float).ravel()
    F = np.array([1.0, dspeed0])
    d = s_r * mu_z
    lat = s_r**2 * var_z
    obs = s_r**2 * (var_z + noise_z)
    return {"mu_rho": rho0 + F[0] * d, "mu_v": v0 + F[1] * d,
            "var_rho_latent": lat * F[0] ** 2, "var_v_latent": lat * F[1] ** 2,
            "var_rho_obs": obs * F[0] ** 2 + extra_noise[0],
            "var_v_obs": obs * F[1] ** 2 + extra_noise[1],
            "cov_obs": obs[:, None, None] * np.outer(F, F)[None] + np.diag(extra_noise)[None]}


def map_to_physical_lwr(mu_z, cov_z, state: SVGPState) -> dict:
    """Per-task de-standardization (two-output modes) or the F map (scalar)."""
    st = state.standardizer
    if state.mode == "lwr_scalar":
        return lwr_scalar_map(np.asarray(mu_z)[:, 0], np.asarray(cov_z)[:, 0, 0],
                              float(state.noise[0]), st.scale[0], state.rho0,
                              float(state.fd.speed(state.rho0)),
                              float(state.fd.dspeed(state.rho0)), state.extra_noise)
    if state.mode == "arz":
        raise ValidationError("map_to_physical_lwr needs an LWR or plain state")
    s = np.asarray(st.scale)
    mu = np.asarray(st.mean) + np.asarray(mu_z) * s
    var = np.stack([np.asarray(cov_z)[:, k, k] for k in range(2)], axis=1) * s**2
    noise = np.asarray(state.noise) * s**2
    return {"mu_rho": mu[:, 0], "mu_v": mu[:, 1],
            "var_rho_latent": var[:, 0], "var_v_latent": var[:, 1],
            "var_rho_obs": var[:, 0] + noise[0], "var_v_obs": var[:, 1] + noise[1]}


def predict_physical(state: SVGPState, points, kind: str | None = None) -> dict:
    mu, cov = predict_latent(state, points)
    if state.mode == "arz":
        return map_to_physical_arz(mu, cov, state, kind)
    return map_to_physical_lwr(mu, cov, state)


def predict_field(state: SVGPState, grid: SpaceTimeGrid, kind: str | None = None) -> PredictiveField:
    """Predict every cell centre of ``grid``."""
    r = predict_physical(state, grid.cell_points(), kind)
    sh = grid.shape
    return PredictiveField(grid, *(np.asarray(r[k]).reshape(sh) for k in
                                   ("mu_rho", "mu_v", "var_rho_latent", "var_v_latent",
                                    "var_rho_obs", "var_v_obs")))


# --------------------------------------------------------------------------
# Serialization
# --------------------------------------------------------------------------

def _r9(x):
    """Round floats (recursively) to 9 significant digits."""
    if isinstance(x, dict):
        return {k: _r9(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_r9(v) for v in x]
    if isinstance(x, np.ndarray):
        return _r9(x.tolist())
    if isinstance(x, (float, np.floating)):
        return float(f"{float(x):.9g}")
    if isinstance(x, np.integer):
        return int(x)
    return x


def state_to_dict(state: SVGPState) -> dict:
    return _r9({
        "schema_version": SCHEMA_VERSION,
        "mode": state.mode,
        "arz_expansion": state.arz_expansion,
        "physical_map": state.physical_map,
        "hyperparameters": {"constrained": state.params, "unconstrained": state.unconstrained},
        "noise": state.noise,
        "Z": state.Z,
        "m": state.m,
        "S_factor": state.S_factor,
        "standardizer": state.standardizer.to_dict(),
        "coords": {"x_mean": state.coords.x_mean, "x_scale": state.coords.x_scale,
                   "t_mean": state.coords.t_mean, "t_scale": state.coords.t_scale},
        "physics": {"rho0": state.rho0, "v_f": state.fd.v_f, "rho_jam": state.fd.rho_jam,
                    "pressure": {"kind": state.pressure.kind, "gamma": state.pressure.gamma,
                                 "scale": state.pressure.scale}},
        "jitter": state.jitter,
        "extra_noise": list(state.extra_noise),
        "training": {k: v for k, v in state.meta.items() if k != "trace"},
    })


def state_from_dict(d: dict) -> SVGPState:
    if d.get("schema_version") != SCHEMA_VERSION:
        raise ValidationError(f"unsupported model schema_version {d.get('schema_version')!r}")
    try:
        ph = d["physics"]
        c = d["coords"]
        return SVGPState(
            mode=d["mode"], Z=np.asarray(d["Z"], float), m=np.asarray(d["m"], float),
            S_factor=np.asarray(d["S_factor"], float), noise=np.asarray(d["noise"], float),
            params={k: float(v) for k, v in d["hyperparameters"]["constrained"].items()},
            standardizer=Standardizer.from_dict(d["standardizer"]),
            coords=CoordScaler(c["x_mean"], c["x_scale"], c["t_mean"], c["t_scale"]),
            arz_expansion=d["arz_expansion"], physical_map=d["physical_map"],
            rho0=float(ph["rho0"]), fd=FundamentalDiagram(ph["v_f"], ph["rho_jam"]),
            pressure=PressureLaw(**ph["pressure"]), jitter=float(d["jitter"]),
            extra_noise=tuple(d.get("extra_noise", (0.0, 0.0))),
            unconstrained=d["hyperparameters"]["unconstrained"], meta=d.get("training", {}),
        )
    except (KeyError, TypeError) as e:
        raise ValidationError(f"malformed model file: {e}") from e


def save_model(path, state: SVGPState) -> None:
    with open(path, "w") as fh:
        json.dump(state_to_dict(state), fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_model(path) -> SVGPState:
    with open(path) as fh:
        return state_from_dict(json.load(fh))
