"""
Closed-form transmission of a weakly probed cavity containing one or two
two-level atoms.

All frequencies are angular frequencies in rad/s. Use :func:`mhz` to convert
values quoted as ``2*pi x MHz``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TWO_PI_MHZ = 2.0 * np.pi * 1e6


def mhz(value):
    """Convert a frequency given in MHz to angular frequency (rad/s)."""
    return np.multiply(value, TWO_PI_MHZ)


def to_mhz(omega):
    """Inverse of :func:`mhz`."""
    return np.divide(omega, TWO_PI_MHZ)


@dataclass(frozen=True)
class CavityParams:
    """Coupling, cavity decay, atomic dipole decay (rad/s) and mode waist (m)."""

    g0: float
    kappa: float
    gamma: float
    waist: float

    def __post_init__(self):
        for name in ("g0", "kappa", "gamma", "waist"):
            if not getattr(self, name) > 0:
                raise ValueError(f"CavityParams.{name} must be > 0, got {getattr(self, name)!r}")

    @property
    def cooperativity(self) -> float:
        return self.g0**2 / (2.0 * self.kappa * self.gamma)

    @classmethod
    def bonn(cls) -> "CavityParams":
        """(g, kappa, gamma) = 2pi x (13.1, 0.4, 2.6) MHz, w0 = 23 um."""
        return cls(g0=mhz(13.1), kappa=mhz(0.4), gamma=mhz(2.6), waist=23e-6)


@dataclass(frozen=True)
class DetuningPoint:
    """Cavity-atom detuning and effective coupling (rad/s); arrays broadcast."""

    delta_ca: float
    g_eff: float

    def __post_init__(self):
        if np.any(np.asarray(self.g_eff) < 0):
            raise ValueError("g_eff must be >= 0")


@dataclass(frozen=True)
class TransmissionLevels:
    t0: float
    t1: float
    t2: float

    def as_array(self) -> np.ndarray:
        return np.array([self.t0, self.t1, self.t2])


def transmission_one_atom(p: CavityParams, d: DetuningPoint):
    """
    Normalized transmission with one atom in the coupled hyperfine state.

    Valid for weak driving with the probe resonant with the empty cavity.
    Works elementwise if ``d`` holds arrays.
    """
    kappa, gamma = p.kappa, p.gamma
    delta = np.asarray(d.delta_ca, dtype=float)
    g2 = np.asarray(d.g_eff, dtype=float) ** 2
    num = kappa**2 * (delta**2 + gamma**2)
    # (gamma*kappa + g^2)^2 + (delta*kappa)^2, arranged so g = 0 gives num / num
    den = num + g2 * (2 * gamma * kappa + g2)
    out = num / den
    return float(out) if out.ndim == 0 else out


def _dispersive_x(p: CavityParams, d: DetuningPoint):
    delta = np.asarray(d.delta_ca, dtype=float)
    if np.any(delta == 0):
        raise ValueError("dispersive formula is undefined at delta_ca = 0")
    return np.asarray(d.g_eff, dtype=float) ** 2 / (p.kappa * delta)


def transmission_dispersive(p: CavityParams, d: DetuningPoint, n_atoms: int = 1):
    """Dispersive-limit transmission for ``n_atoms`` (1 or 2) equally coupled atoms."""
    if n_atoms not in (1, 2):
        raise ValueError(f"n_atoms must be 1 or 2, got {n_atoms!r}")
    x = n_atoms * _dispersive_x(p, d)
    out = 1.0 / (1.0 + x**2)
    return float(out) if out.ndim == 0 else out


def level_difference(p: CavityParams, d: DetuningPoint):
    """T1 - T2 in the dispersive limit; peaks at 1/3 for g^2/(kappa*delta) = 1/sqrt(2)."""
    return transmission_dispersive(p, d, 1) - transmission_dispersive(p, d, 2)


def coupling_at_offset(p: CavityParams, g_center, dy):
    """Effective coupling at a displacement ``dy`` (m) from the mode center."""
    out = np.asarray(g_center, dtype=float) * np.exp(-np.asarray(dy, dtype=float) ** 2 / p.waist**2)
    return float(out) if out.ndim == 0 else out


def optimal_offset(p: CavityParams, g_center, delta_ca):
    """
    Displacement from the mode center that maximizes the one/two atom level
    difference at a given detuning.

    Returns 0 where even the center coupling is too weak to reach the
    optimum (the center is then the best placement).
    """
    delta = np.asarray(delta_ca, dtype=float)
    if np.any(delta <= 0):
        raise ValueError("delta_ca must be > 0")
    arg = np.sqrt(2.0) * np.asarray(g_center, dtype=float) ** 2 / (delta * p.kappa)
    with np.errstate(divide="ignore", invalid="ignore"):
        dy = p.waist * np.sqrt(0.5 * np.log(np.maximum(arg, 1.0)))
    return float(dy) if dy.ndim == 0 else dy


def transmission_levels(p: CavityParams, delta_ca, g1, g2=None) -> TransmissionLevels:
    """
    T0, T1, T2 from the full one-atom formula.

    ``g2`` is the effective coupling seen with two atoms in the coupled state;
    it defaults to sqrt(2)*g1 (two equally coupled atoms at rest).
    """
    if g2 is None:
        g2 = np.sqrt(2.0) * g1
    t1 = transmission_one_atom(p, DetuningPoint(delta_ca, g1))
    t2 = transmission_one_atom(p, DetuningPoint(delta_ca, g2))
    return TransmissionLevels(1.0, t1, t2)
