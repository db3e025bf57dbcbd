"""Operator-embedded covariance kernels.

Every kernel here is built from one squared-exponential base kernel ``k0`` on
space-time points ``s = (x, t)`` and a first-order operator applied in each
argument.  A scalar operator is stored as a coefficient triple
``(c_t, c_x, c_0)`` meaning ``c_t d/dt + c_x d/dx + c_0``; applying ``O1`` in
the first argument and ``O2`` in the second only needs the nine SE derivative
quantities returned by :func:`se_family`.

The functions are written against ``jax.numpy`` so the SVGP trainer can
differentiate through them; they accept plain numpy input as well.

Coordinates are whatever the caller passes.  The trainer works in
standardized coordinates, where a wave speed ``lam`` in m/s becomes
``lam * s_t / s_x`` and a rate ``a`` in 1/s becomes ``a * s_t``
(see :meth:`KernelSpec.rescaled`).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping

import jax
import jax.numpy as jnp
import numpy as np

jax.config.update("jax_enable_x64", True)

MODES = ("arz", "lwr_scalar", "lwr_bidirectional", "plain_se")
N_OUTPUTS = {"arz": 2, "lwr_scalar": 1, "lwr_bidirectional": 2, "plain_se": 2}
DEFAULT_JITTER = 1e-6


@dataclass(frozen=True)
class SEHyper:
    sigma: float = 1.0
    ell_x: float = 0.3
    ell_t: float = 0.3

    def __post_init__(self):
        if min(self.sigma, self.ell_x, self.ell_t) <= 0:
            raise ValueError("SE hyperparameters must be positive")


@dataclass(frozen=True)
class ResidualHyper:
    b_res: float = 0.1
    sigma_res: float = 1.0
    ell_x: float = 0.1
    ell_t: float = 0.1

    def __post_init__(self):
        if self.b_res < 0 or min(self.sigma_res, self.ell_x, self.ell_t) <= 0:
            raise ValueError("residual hyperparameters must be positive")


@dataclass(frozen=True)
class KernelSpec:
    """Total kernel = operator-embedded physics part + per-output SE residual.

    Operator coefficients are expressed in the coordinates the kernel is
    evaluated in.  ``alpha``, ``beta`` and ``tau`` enter only through the
    relaxation rates ``a = alpha / tau`` and ``b = beta / tau``.
    """

    mode: str = "arz"
    base: SEHyper = field(default_factory=SEHyper)
    residual: tuple[ResidualHyper, ...] = ()
    # ARZ
    lambda1: float = 0.0
    lambda2: float = 0.0
    alpha: float = 0.0
    beta: float = 1.0
    tau: float = 1.0
    arz_expansion: str = "as_printed"
    # LWR scalar
    lambda0: float = 0.0
    # LWR bidirectional
    c_f: float = 1.0
    c_b: float = -1.0
    w_f: float = 0.5
    coupling: float = 0.0
    task_coupling: bool = True

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown kernel mode {self.mode!r}")
        if self.arz_expansion not in ("as_printed", "full"):
            raise ValueError(f"unknown arz_expansion {self.arz_expansion!r}")
        if not 0.0 <= self.w_f <= 1.0:
            raise ValueError("w_f must lie in [0, 1]")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if not self.residual:
            object.__setattr__(
                self, "residual", tuple(ResidualHyper() for _ in range(self.n_outputs))
            )
        if len(self.residual) != self.n_outputs:
            raise ValueError("need one residual hyperparameter set per output")
        values = [v for v in _flat_params(self).values() if not isinstance(v, str)]
        if not np.all(np.isfinite(values)):
            raise ValueError("NaN or infinite kernel hyperparameter")

    @property
    def n_outputs(self) -> int:
        return N_OUTPUTS[self.mode]

    @property
    def a(self) -> float:
        return self.alpha / self.tau

    @property
    def b(self) -> float:
        return self.beta / self.tau

    def params(self) -> dict:
        return _flat_params(self)

    def rescaled(self, x_scale: float, t_scale: float) -> "KernelSpec":
        """Convert speeds and rates from SI to coordinates scaled by (x_scale, t_scale)."""
        r = t_scale / x_scale
        return replace(
            self,
            lambda1=self.lambda1 * r,
            lambda2=self.lambda2 * r,
            lambda0=self.lambda0 * r,
            c_f=self.c_f * r,
            c_b=self.c_b * r,
            tau=self.tau / t_scale,
        )


def _flat_params(spec: KernelSpec) -> dict:
    p = {
        "sigma": spec.base.sigma,
        "ell_x": spec.base.ell_x,
        "ell_t": spec.base.ell_t,
        "lambda1": spec.lambda1,
        "lambda2": spec.lambda2,
        "a": spec.alpha / spec.tau,
        "b": spec.beta / spec.tau,
        "lambda0": spec.lambda0,
        "c_f": spec.c_f,
        "c_b": spec.c_b,
        "w_f": spec.w_f,
        "coupling": spec.coupling if spec.task_coupling else None,
    }
    for i, r in enumerate(spec.residual):
        p[f"b_res{i}"] = r.b_res
        p[f"sigma_res{i}"] = r.sigma_res
        p[f"ell_x_res{i}"] = r.ell_x
        p[f"ell_t_res{i}"] = r.ell_t
    return {k: v for k, v in p.items() if v is not None}


# --------------------------------------------------------------------------
# SE base kernel and its derivative family
# --------------------------------------------------------------------------

def se_family(X1, X2, sigma, ell_x, ell_t) -> dict:
    """The SE kernel and its eight first/second partial derivatives.

    Unprimed subscripts differentiate the first argument, primed ones the
    second; ``K_tx'`` is d^2 k / (dt dx').  Returns arrays of shape (n1, n2).
    """
    X1 = jnp.atleast_2d(jnp.asarray(X1, dtype=jnp.float64))
    X2 = jnp.atleast_2d(jnp.asarray(X2, dtype=jnp.float64))
    dx = X1[:, None, 0] - X2[None, :, 0]
    dt = X1[:, None, 1] - X2[None, :, 1]
    ix2 = 1.0 / ell_x**2
    it2 = 1.0 / ell_t**2
    K = sigma**2 * jnp.exp(-0.5 * (dx * dx * ix2 + dt * dt * it2))
    gx = dx * ix2
    gt = dt * it2
    K_x = -gx * K
    K_t = -gt * K
    cross = -gx * gt * K
    return {
        "K": K,
        "K_x": K_x,
        "K_xp": -K_x,
        "K_t": K_t,
        "K_tp": -K_t,
        "K_xxp": (ix2 - gx * gx) * K,
        "K_ttp": (it2 - gt * gt) * K,
        "K_txp": cross,
        "K_xtp": cross,
    }


def se_derivative_family(s, s_prime, hyper: SEHyper) -> dict:
    """Nine SE quantities at a single pair of points, as floats."""
    fam = se_family(np.reshape(s, (1, 2)), np.reshape(s_prime, (1, 2)),
                    hyper.sigma, hyper.ell_x, hyper.ell_t)
    return {k: float(v[0, 0]) for k, v in fam.items()}


def op_pair(fam: Mapping, o1, o2):
    """Apply ``o1`` in the first argument and ``o2`` in the second to k0."""
    t1, x1, c1 = o1
    t2, x2, c2 = o2
    out = c1 * c2 * fam["K"]
    out = out + t1 * t2 * fam["K_ttp"] + x1 * x2 * fam["K_xxp"]
    out = out + t1 * x2 * fam["K_txp"] + x1 * t2 * fam["K_xtp"]
    out = out + c2 * (t1 * fam["K_t"] + x1 * fam["K_x"])
    out = out + c1 * (t2 * fam["K_tp"] + x2 * fam["K_xp"])
    return out


def _op_sum(fam, row1, row2):
    """sum_k L1k(s) L2k(s') k0 for operator rows given as lists of triples."""
    total = 0.0
    for o1, o2 in zip(row1, row2):
        if o1 is None or o2 is None:
            continue
        total = total + op_pair(fam, o1, o2)
    return total


def arz_operator_rows(p, expansion: str):
    """Rows of the linearized ARZ operator as coefficient triples.

    ``full`` keeps the off-diagonal relaxation entries of
    ``L = d_t I + Lambda d_x - C / tau``; ``as_printed`` drops them, which
    makes the block kernel the covariance of ``(L11 g, L22 g)`` for a single
    latent ``g``.
    """
    a, b = p["a"], p["b"]
    l11 = (1.0, p["lambda1"], -a)
    l22 = (1.0, p["lambda2"], b)
    if expansion == "full":
        return [[l11, (0.0, 0.0, b)], [(0.0, 0.0, -a), l22]]
    return [[l11], [l22]]


def physics_blocks(X1, X2, p: Mapping, mode: str, arz_expansion: str = "as_printed"):
    """Physics kernel blocks, shape (P, P, n1, n2)."""
    fam = se_family(X1, X2, p["sigma"], p["ell_x"], p["ell_t"])
    if mode == "arz":
        rows = arz_operator_rows(p, arz_expansion)
        if arz_expansion == "full":
            return jnp.stack([
                jnp.stack([_op_sum(fam, rows[i], rows[j]) for j in range(2)])
                for i in range(2)
            ])
        ops = [rows[0][0], rows[1][0]]
        return jnp.stack([
            jnp.stack([op_pair(fam, ops[i], ops[j]) for j in range(2)])
            for i in range(2)
        ])
    if mode == "lwr_scalar":
        op = (1.0, p["lambda0"], 0.0)
        return op_pair(fam, op, op)[None, None]
    if mode == "lwr_bidirectional":
        of = (1.0, p["c_f"], 0.0)
        ob = (1.0, p["c_b"], 0.0)
        w = p["w_f"]
        k = w * op_pair(fam, of, of) + (1.0 - w) * op_pair(fam, ob, ob)
        if "coupling" in p:
            c = jnp.stack([jnp.ones_like(p["coupling"]), p["coupling"]])
        else:
            return jnp.stack([jnp.stack([k, jnp.zeros_like(k)]),
                              jnp.stack([jnp.zeros_like(k), k])])
        return c[:, None, None, None] * c[None, :, None, None] * k[None, None]
    if mode == "plain_se":
        K = fam["K"]
        z = jnp.zeros_like(K)
        return jnp.stack([jnp.stack([K, z]), jnp.stack([z, K])])
    raise ValueError(f"unknown kernel mode {mode!r}")


def residual_blocks(X1, X2, p: Mapping, n_outputs: int):
    """Per-output small-scale SE residual, shape (P, n1, n2)."""
    out = []
    for i in range(n_outputs):
        fam_sigma = jnp.sqrt(p[f"b_res{i}"]) * p[f"sigma_res{i}"]
        out.append(se_family(X1, X2, fam_sigma, p[f"ell_x_res{i}"], p[f"ell_t_res{i}"])["K"])
    return jnp.stack(out)


def residual_kernel(s, s_prime, hyper: ResidualHyper) -> float:
    """B_res sigma_res^2 exp(-dx^2 / 2 l_x^2 - dt^2 / 2 l_t^2) at one pair."""
    p = {"b_res0": hyper.b_res, "sigma_res0": hyper.sigma_res,
         "ell_x_res0": hyper.ell_x, "ell_t_res0": hyper.ell_t}
    return float(residual_blocks(np.reshape(s, (1, 2)), np.reshape(s_prime, (1, 2)), p, 1)[0, 0, 0])


def total_blocks(X1, X2, p: Mapping, mode: str, arz_expansion: str = "as_printed"):
    """Physics + task-diagonal residual, shape (P, P, n1, n2)."""
    phys = physics_blocks(X1, X2, p, mode, arz_expansion)
    res = residual_blocks(X1, X2, p, phys.shape[0])
    eye = jnp.eye(phys.shape[0])
    return phys + eye[:, :, None, None] * res[:, None]


def zero_lag(p: Mapping, mode: str, arz_expansion: str = "as_printed"):
    """Total kernel at zero lag, a (P, P) matrix; constant by stationarity."""
    origin = jnp.zeros((1, 2))
    return total_blocks(origin, origin, p, mode, arz_expansion)[:, :, 0, 0]


def gather(blocks, out1, idx1, out2, idx2):
    """Pick entries of ``blocks[o1, o2, i1, i2]`` for flattened index lists."""
    return blocks[out1[:, None], out2[None, :], idx1[:, None], idx2[None, :]]


def _as_points(points, outputs, n_outputs):
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if outputs is None:
        # every output at every point, output-major ordering
        idx = np.tile(np.arange(len(points)), n_outputs)
        out = np.repeat(np.arange(n_outputs), len(points))
    else:
        out = np.asarray(outputs, dtype=int)
        idx = np.arange(len(points))
        if len(out) != len(points):
            raise ValueError("outputs must match points")
    return points, out, idx


def total_kernel(s, s_prime, spec: KernelSpec) -> np.ndarray:
    """Total kernel matrix (P x P) between two single points."""
    b = total_blocks(np.reshape(s, (1, 2)), np.reshape(s_prime, (1, 2)),
                     spec.params(), spec.mode, spec.arz_expansion)
    return np.asarray(b[:, :, 0, 0])


def physics_kernel(s, s_prime, spec: KernelSpec) -> np.ndarray:
    b = physics_blocks(np.reshape(s, (1, 2)), np.reshape(s_prime, (1, 2)),
                       spec.params(), spec.mode, spec.arz_expansion)
    return np.asarray(b[:, :, 0, 0])


def arz_block_kernel(s, s_prime, spec: KernelSpec) -> np.ndarray:
    """Eqs.-as-printed 2x2 ARZ physics block at one pair of points."""
    if spec.mode != "arz":
        raise ValueError("arz_block_kernel needs mode='arz'")
    return physics_kernel(s, s_prime, replace(spec, arz_expansion="as_printed"))


def arz_block_kernel_full(s, s_prime, spec: KernelSpec) -> np.ndarray:
    """Complete L K0 L^T expansion including off-diagonal relaxation terms."""
    if spec.mode != "arz":
        raise ValueError("arz_block_kernel_full needs mode='arz'")
    return physics_kernel(s, s_prime, replace(spec, arz_expansion="full"))


def lwr_scalar_kernel(s, s_prime, spec: KernelSpec) -> float:
    if spec.mode != "lwr_scalar":
        raise ValueError("lwr_scalar_kernel needs mode='lwr_scalar'")
    return float(physics_kernel(s, s_prime, spec)[0, 0])


def lwr_bidirectional_kernel(s, s_prime, spec: KernelSpec) -> np.ndarray:
    if spec.mode != "lwr_bidirectional":
        raise ValueError("lwr_bidirectional_kernel needs mode='lwr_bidirectional'")
    return physics_kernel(s, s_prime, spec)


def gram(points, spec: KernelSpec, outputs=None, part: str = "total") -> np.ndarray:
    """Gram matrix over (point, output) pairs.

    With ``outputs=None`` every output is taken at every point (output-major
    ordering); otherwise ``outputs[i]`` selects the output observed at
    ``points[i]``.  ``part`` is ``total``, ``physics`` or ``residual``.
    """
    points, out, idx = _as_points(points, outputs, spec.n_outputs)
    p = spec.params()
    if part == "total":
        blocks = total_blocks(points, points, p, spec.mode, spec.arz_expansion)
    elif part == "physics":
        blocks = physics_blocks(points, points, p, spec.mode, spec.arz_expansion)
    elif part == "residual":
        res = residual_blocks(points, points, p, spec.n_outputs)
        blocks = jnp.eye(spec.n_outputs)[:, :, None, None] * res[:, None]
    else:
        raise ValueError(f"unknown kernel part {part!r}")
    return np.asarray(gather(blocks, out, idx, out, idx))


def add_jitter(G, jitter: float = DEFAULT_JITTER) -> np.ndarray:
    """Add ``jitter * mean(diag(G))`` to the diagonal."""
    if jitter < 0:
        raise ValueError("jitter must be non-negative")
    G = np.array(G, dtype=float, copy=True)
    G[np.diag_indices_from(G)] += jitter * np.mean(np.diag(G))
    return G
