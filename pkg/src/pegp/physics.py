"""Fundamental diagram, pressure law and frozen linearization constants.

All quantities are SI: metres, seconds, vehicles per metre.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class FundamentalDiagram:
    """Greenshields equilibrium speed V(rho) = v_f (1 - rho / rho_jam)."""

    v_f: float = 30.0
    rho_jam: float = 0.12
    kind: str = "greenshields"

    def __post_init__(self):
        if self.kind != "greenshields":
            raise ValueError(f"unsupported fundamental diagram {self.kind!r}")
        if self.v_f <= 0 or self.rho_jam <= 0:
            raise ValueError("v_f and rho_jam must be positive")

    def speed(self, rho):
        return self.v_f * (1.0 - np.asarray(rho) / self.rho_jam)

    def dspeed(self, rho):
        return np.full_like(np.asarray(rho, dtype=float), -self.v_f / self.rho_jam)

    def flux(self, rho):
        rho = np.asarray(rho)
        return rho * self.speed(rho)

    def dflux(self, rho):
        """Characteristic speed q'(rho) = V + rho V'."""
        return self.v_f * (1.0 - 2.0 * np.asarray(rho) / self.rho_jam)

    @property
    def critical_density(self) -> float:
        return 0.5 * self.rho_jam

    @property
    def capacity(self) -> float:
        return 0.25 * self.v_f * self.rho_jam


@dataclass(frozen=True)
class PressureLaw:
    """Pressure P(rho) entering the first Riemann invariant w1 = v + P(rho).

    ``half_square``: P = scale * rho**2 / 2.  ``power``: P = scale * rho**gamma.
    With ``scale=1`` the half-square law is the textbook ``rho**2 / 2``; in SI
    density units a scale of order ``2 v_f / rho_jam**2`` gives P(rho_jam) = v_f.
    """

    kind: str = "half_square"
    gamma: float = 2.0
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("half_square", "power"):
            raise ValueError(f"unsupported pressure law {self.kind!r}")
        if self.scale <= 0:
            raise ValueError("pressure scale must be positive")
        if self.kind == "power" and self.gamma <= 0:
            raise ValueError("gamma must be positive")

    def __call__(self, rho):
        rho = np.asarray(rho, dtype=float)
        if self.kind == "half_square":
            return 0.5 * self.scale * rho**2
        return self.scale * rho**self.gamma

    def derivative(self, rho):
        rho = np.asarray(rho, dtype=float)
        if self.kind == "half_square":
            return self.scale * rho
        return self.scale * self.gamma * rho ** (self.gamma - 1.0)

    def inverse(self, p):
        """rho from P(rho); negative arguments clamp to rho = 0."""
        p = np.maximum(np.asarray(p, dtype=float), 0.0)
        if self.kind == "half_square":
            return np.sqrt(2.0 * p / self.scale)
        return (p / self.scale) ** (1.0 / self.gamma)


def default_pressure(fd: FundamentalDiagram) -> PressureLaw:
    """Half-square pressure scaled so that P(rho_jam) = v_f."""
    return PressureLaw("half_square", scale=2.0 * fd.v_f / fd.rho_jam**2)


@dataclass(frozen=True)
class EquilibriumConstants:
    rho0: float
    v0: float
    lambda1_0: float
    lambda2_0: float
    alpha: float
    beta: float
    tau: float
    lambda0_lwr: float
    dspeed0: float  # V'(rho0), needed by the LWR joint map
    p0: float  # P(rho0)
    dp0: float  # P'(rho0)


def equilibrium_constants(
    rho0: float, fd: FundamentalDiagram, pl: PressureLaw, tau: float
) -> EquilibriumConstants:
    """Freeze the ARZ and LWR coefficients at a uniform equilibrium rho0."""
    if not 0.0 < rho0 < fd.rho_jam:
        raise ValueError("degenerate equilibrium: rho0 must lie strictly in (0, rho_jam)")
    if tau <= 0:
        raise ValueError("tau must be positive")
    dp0 = float(pl.derivative(rho0))
    if dp0 == 0.0:
        raise ValueError("singular pressure derivative at rho0")
    v0 = float(fd.speed(rho0))
    dv0 = float(fd.dspeed(rho0))
    alpha = dv0 / dp0
    return EquilibriumConstants(
        rho0=float(rho0),
        v0=v0,
        lambda1_0=v0 + rho0 * dp0,
        lambda2_0=v0,
        alpha=alpha,
        beta=1.0 + alpha,
        tau=float(tau),
        lambda0_lwr=v0 + rho0 * dv0,
        dspeed0=dv0,
        p0=float(pl(rho0)),
        dp0=dp0,
    )


def linear_constants(
    rho0: float, v0: float, dspeed0: float, pl: PressureLaw, tau: float
) -> EquilibriumConstants:
    """Constants from an explicit (rho0, V(rho0), V'(rho0)) triple.

    Useful when the equilibrium speed curve is not Greenshields.
    """
    dp0 = float(pl.derivative(rho0))
    if dp0 == 0.0:
        raise ValueError("singular pressure derivative at rho0")
    alpha = dspeed0 / dp0
    return EquilibriumConstants(
        rho0=float(rho0),
        v0=float(v0),
        lambda1_0=v0 + rho0 * dp0,
        lambda2_0=float(v0),
        alpha=alpha,
        beta=1.0 + alpha,
        tau=float(tau),
        lambda0_lwr=v0 + rho0 * dspeed0,
        dspeed0=float(dspeed0),
        p0=float(pl(rho0)),
        dp0=dp0,
    )


def map_invariants(rho, v, pl: PressureLaw):
    """(rho, v) -> (w1, w2) = (v + P(rho), v)."""
    rho = np.asarray(rho, dtype=float)
    if np.any(rho < 0):
        raise ValueError("density must be non-negative")
    v = np.asarray(v, dtype=float)
    return v + pl(rho), v.copy()


def invert_invariants(w1, w2, pl: PressureLaw):
    """(w1, w2) -> (rho, v); w1 < w2 clamps to rho = 0."""
    w1 = np.asarray(w1, dtype=float)
    w2 = np.asarray(w2, dtype=float)
    return pl.inverse(w1 - w2), w2.copy()
