"""Surrogate transport-aircraft flight model.

Atmosphere, propulsion, aerodynamic coefficient buildup and the 8-state
nonlinear dynamics ``xdot = f(x, u)`` with the state ordered as
``[V, alpha, beta, p, q, r, phi, theta]`` and controls ``[dth, de, da, dr]``.

Sign conventions: positive elevator is trailing edge down, positive rudder
is trailing edge left (yaws the nose left), positive aileron is left wing
trailing edge up (rolls left).
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path

import numpy as np

from .units import DEG, G0

RHO_SL = 1.225  # kg/m^3
T_SL = 288.15  # K
P_SL = 101325.0  # Pa
LAPSE = 0.0065  # K/m
R_AIR = 287.05287  # J/(kg K)
H_TROPOPAUSE = 11000.0
H_MAX = 20000.0

STATE_NAMES = ("V", "alpha", "beta", "p", "q", "r", "phi", "theta")
CONTROL_NAMES = ("dth", "de", "da", "dr")
SURFACES = ("throttle", "elevator", "aileron", "rudder")


class DomainError(ValueError):
    """Input outside the modeled domain."""


# --------------------------------------------------------------------------
# state containers
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class AircraftState:
    V: float
    alpha: float
    beta: float
    p: float
    q: float
    r: float
    phi: float
    theta: float
    h: float = 0.0

    def __post_init__(self):
        if not self.V > 0:
            raise DomainError(f"airspeed must be positive, got {self.V}")
        for name in ("alpha", "beta", "phi", "theta"):
            if abs(getattr(self, name)) >= math.pi / 2:
                raise DomainError(f"|{name}| must be below pi/2")

    def as_array(self) -> np.ndarray:
        return np.array([self.V, self.alpha, self.beta, self.p, self.q,
                         self.r, self.phi, self.theta])

    @classmethod
    def from_array(cls, x, h=0.0) -> "AircraftState":
        return cls(*(float(v) for v in x), h=float(h))


@dataclass(frozen=True)
class ControlVector:
    dth: float
    de: float = 0.0
    da: float = 0.0
    dr: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.dth, self.de, self.da, self.dr])

    @classmethod
    def from_array(cls, u) -> "ControlVector":
        return cls(*(float(v) for v in u))


# --------------------------------------------------------------------------
# parameter sets
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class AeroDerivativeSet:
    """Dimensionless coefficient derivatives (per rad)."""

    CL0: float
    CLalpha: float
    alpha_crit: float
    CL_falloff: float
    CD0: float
    K: float
    CDbeta: float
    CYbeta: float
    Clbeta: float
    Clp: float
    Clr: float
    Clda: float
    Cldr: float
    Cm0: float
    Cmalpha: float
    Cmq: float
    Cmde: float
    Cnbeta: float
    Cnp: float
    Cnr: float
    Cnda: float
    Cndr: float
    # lateral offsets; nonzero values break left/right symmetry
    CY0: float = 0.0
    Cl0: float = 0.0
    Cn0: float = 0.0

    def __post_init__(self):
        checks = {
            "CLalpha > 0": self.CLalpha > 0,
            "CD0 > 0": self.CD0 > 0,
            "K > 0": self.K > 0,
            "CDbeta >= 0": self.CDbeta >= 0,
            "Clda < 0": self.Clda < 0,
            "Cndr < 0": self.Cndr < 0,
            "Cmalpha < 0": self.Cmalpha < 0,
            "CL_falloff >= 0": self.CL_falloff >= 0,
            "alpha_crit > 0": self.alpha_crit > 0,
        }
        bad = [k for k, ok in checks.items() if not ok]
        if bad:
            raise ValueError("invalid aero derivative set: " + ", ".join(bad))

    def lift(self, alpha: float) -> float:
        if alpha <= self.alpha_crit:
            return self.CL0 + self.CLalpha * alpha
        return self.CL0 + self.CLalpha * self.alpha_crit - self.CL_falloff * (alpha - self.alpha_crit)

    @property
    def CLmax(self) -> float:
        return self.lift(self.alpha_crit)

    @property
    def symmetric(self) -> bool:
        return self.CY0 == 0.0 and self.Cl0 == 0.0 and self.Cn0 == 0.0


@dataclass(frozen=True)
class PropulsionParams:
    TmaxS: float
    m_lapse: float = 1.0
    c1: float = 0.0
    c2: float = 0.0

    def __post_init__(self):
        if not self.TmaxS > 0:
            raise ValueError("TmaxS must be positive")


@dataclass(frozen=True)
class ConstraintConfig:
    """Trim box constraints; windows are (lower, upper) in rad, throttle in [0, 1]."""

    alpha_max: float = 10.5 * DEG
    phi_max: float = 30.0 * DEG
    throttle: tuple = (0.0, 1.0)
    elevator: tuple = (-30.0 * DEG, 30.0 * DEG)
    aileron: tuple = (-20.0 * DEG, 20.0 * DEG)
    rudder: tuple = (-30.0 * DEG, 30.0 * DEG)
    alpha_min: float = -10.0 * DEG
    beta_max: float = 45.0 * DEG

    def __post_init__(self):
        if not (self.alpha_max > 0 and self.phi_max > 0):
            raise ValueError("alpha_max and phi_max must be positive")
        for s in SURFACES:
            lo, hi = getattr(self, s)
            if lo > hi:
                raise ValueError(f"{s} window has lower limit above upper limit")

    def window(self, surface: str) -> tuple:
        return getattr(self, surface)


@dataclass(frozen=True)
class AircraftParams:
    W0: float
    S: float
    b: float
    cbar: float
    Ixx: float
    Iyy: float
    Izz: float
    Ixz: float
    aero: AeroDerivativeSet
    prop: PropulsionParams
    limits: ConstraintConfig = field(default_factory=ConstraintConfig)

    def __post_init__(self):
        for name in ("W0", "S", "b", "cbar", "Ixx", "Iyy", "Izz"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        inertia = np.array([[self.Ixx, 0, -self.Ixz], [0, self.Iyy, 0], [-self.Ixz, 0, self.Izz]])
        if np.linalg.eigvalsh(inertia).min() <= 0:
            raise ValueError("inertia tensor is not positive definite")

    @property
    def mass(self) -> float:
        return self.W0 / G0

    @property
    def symmetric(self) -> bool:
        return self.aero.symmetric

    @cached_property
    def _inertia_coeffs(self):
        Ixx, Iyy, Izz, Ixz = self.Ixx, self.Iyy, self.Izz, self.Ixz
        gam = Ixx * Izz - Ixz ** 2
        return (
            ((Iyy - Izz) * Izz - Ixz ** 2) / gam,
            (Ixx - Iyy + Izz) * Ixz / gam,
            Izz / gam,
            Ixz / gam,
            (Izz - Ixx) / Iyy,
            Ixz / Iyy,
            1.0 / Iyy,
            (Ixx * (Ixx - Iyy) + Ixz ** 2) / gam,
            Ixx / gam,
        )

    def with_limits(self, limits: ConstraintConfig) -> "AircraftParams":
        return dataclasses.replace(self, limits=limits)

    def to_dict(self) -> dict:
        """Parameter-file representation (angles in degrees)."""
        lim = self.limits
        aero = dataclasses.asdict(self.aero)
        aero["alpha_crit_deg"] = aero.pop("alpha_crit") / DEG
        return {
            "mass_geometry": {
                "W0": self.W0, "S": self.S, "b": self.b, "cbar": self.cbar,
                "Ixx": self.Ixx, "Iyy": self.Iyy, "Izz": self.Izz, "Ixz": self.Ixz,
            },
            "aero": aero,
            "propulsion": dataclasses.asdict(self.prop),
            "limits": {
                "alpha_max_deg": lim.alpha_max / DEG,
                "alpha_min_deg": lim.alpha_min / DEG,
                "beta_max_deg": lim.beta_max / DEG,
                "phi_max_deg": lim.phi_max / DEG,
                "throttle": list(lim.throttle),
                "elevator_deg": [v / DEG for v in lim.elevator],
                "aileron_deg": [v / DEG for v in lim.aileron],
                "rudder_deg": [v / DEG for v in lim.rudder],
            },
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def params_from_dict(data: dict) -> AircraftParams:
    """Build parameters from a parameter-file dictionary.

    Missing sections or keys fall back to the shipped defaults.
    """
    base = _default_dict()
    for section in ("mass_geometry", "aero", "propulsion", "limits"):
        extra = set(data.get(section, {})) - set(base[section]) - {"CY0", "Cl0", "Cn0", "mass"}
        if extra:
            raise ValueError(f"unknown keys in section {section!r}: {sorted(extra)}")
        base[section].update(data.get(section, {}))
    unknown = set(data) - {"mass_geometry", "aero", "propulsion", "limits", "description"}
    if unknown:
        raise ValueError(f"unknown sections: {sorted(unknown)}")

    mg = dict(base["mass_geometry"])
    if "mass" in mg:
        mg["W0"] = mg.pop("mass") * G0
    aero = dict(base["aero"])
    aero["alpha_crit"] = aero.pop("alpha_crit_deg") * DEG
    lim = base["limits"]
    limits = ConstraintConfig(
        alpha_max=lim["alpha_max_deg"] * DEG,
        alpha_min=lim["alpha_min_deg"] * DEG,
        beta_max=lim["beta_max_deg"] * DEG,
        phi_max=lim["phi_max_deg"] * DEG,
        throttle=tuple(float(v) for v in lim["throttle"]),
        elevator=tuple(v * DEG for v in lim["elevator_deg"]),
        aileron=tuple(v * DEG for v in lim["aileron_deg"]),
        rudder=tuple(v * DEG for v in lim["rudder_deg"]),
    )
    return AircraftParams(
        **mg,
        aero=AeroDerivativeSet(**aero),
        prop=PropulsionParams(**base["propulsion"]),
        limits=limits,
    )


def _default_dict() -> dict:
    text = resources.files("flightenv").joinpath("data/default_aircraft.json").read_text()
    data = json.loads(text)
    data.pop("description", None)
    return data


def load_params(path: str | Path | None = None) -> AircraftParams:
    """Load an aircraft parameter file; ``None`` gives the shipped defaults."""
    if path is None:
        return params_from_dict({})
    with open(path) as fh:
        return params_from_dict(json.load(fh))


def default_params() -> AircraftParams:
    return _DEFAULT


# --------------------------------------------------------------------------
# atmosphere and propulsion
# --------------------------------------------------------------------------

_RHO_TROP = RHO_SL * (1 - LAPSE * H_TROPOPAUSE / T_SL) ** (G0 / (R_AIR * LAPSE) - 1)
_T_TROP = T_SL - LAPSE * H_TROPOPAUSE
_EXP_TROP = G0 / (R_AIR * LAPSE) - 1


def isa_density(h: float) -> float:
    """ISA density (kg/m^3) for 0 <= h <= 20 km."""
    if not 0.0 <= h <= H_MAX:
        raise DomainError(f"altitude {h} m outside [0, {H_MAX}] m")
    if h <= H_TROPOPAUSE:
        return RHO_SL * (1.0 - LAPSE * h / T_SL) ** _EXP_TROP
    return _RHO_TROP * math.exp(-G0 * (h - H_TROPOPAUSE) / (R_AIR * _T_TROP))


def thrust_available(h: float, V: float, dth: float, prop: PropulsionParams) -> float:
    sigma = isa_density(h) / RHO_SL
    return _thrust(sigma, V, dth, prop)


def _thrust(sigma, V, dth, prop):
    speed = 1.0 + prop.c1 * V + prop.c2 * V * V
    return dth * prop.TmaxS * sigma ** prop.m_lapse * (speed if speed > 0.0 else 0.0)


# --------------------------------------------------------------------------
# aerodynamics and dynamics
# --------------------------------------------------------------------------


def aero_coefficients(state: AircraftState, controls: ControlVector, params: AircraftParams):
    """Return (CL, CD, CY, Cl, Cm, Cn)."""
    if not state.V > 0:
        raise DomainError("airspeed must be positive")
    return _coefficients(
        state.V, state.alpha, state.beta, state.p, state.q, state.r,
        controls.de, controls.da, controls.dr, params,
    )


def _coefficients(V, alpha, beta, p, q, r, de, da, dr, params):
    a = params.aero
    ph = p * params.b / (2.0 * V)
    qh = q * params.cbar / (2.0 * V)
    rh = r * params.b / (2.0 * V)
    if alpha <= a.alpha_crit:
        CL = a.CL0 + a.CLalpha * alpha
    else:
        CL = a.CL0 + a.CLalpha * a.alpha_crit - a.CL_falloff * (alpha - a.alpha_crit)
    CD = a.CD0 + a.K * CL * CL + a.CDbeta * beta * beta
    CY = a.CY0 + a.CYbeta * beta
    Cl = a.Cl0 + a.Clbeta * beta + a.Clp * ph + a.Clr * rh + a.Clda * da + a.Cldr * dr
    Cm = a.Cm0 + a.Cmalpha * alpha + a.Cmq * qh + a.Cmde * de
    Cn = a.Cn0 + a.Cnbeta * beta + a.Cnp * ph + a.Cnr * rh + a.Cnda * da + a.Cndr * dr
    return CL, CD, CY, Cl, Cm, Cn


def _derivative(x, u, rho, params):
    """Core dynamics on plain sequences; returns a tuple of 8 floats."""
    V, alpha, beta, p, q, r, phi, theta = x
    dth, de, da, dr = u
    if not V > 0:
        raise DomainError("airspeed must be positive")
    cth = math.cos(theta)
    if abs(cth) < 1e-12 or abs(theta) >= math.pi / 2:
        raise DomainError("pitch angle at +-pi/2")

    CL, CD, CY, Cl, Cm, Cn = _coefficients(V, alpha, beta, p, q, r, de, da, dr, params)
    qbar_s = 0.5 * rho * V * V * params.S
    m = params.W0 / G0
    T = _thrust(rho / RHO_SL, V, dth, params.prop)

    ca, sa = math.cos(alpha), math.sin(alpha)
    cb, sb = math.cos(beta), math.sin(beta)
    sth = math.sin(theta)
    cph, sph = math.cos(phi), math.sin(phi)

    # aerodynamic forces: drag/lift in stability axes, side force on body y
    D = qbar_s * CD
    L = qbar_s * CL
    Fx = T - D * ca + L * sa
    Fy = qbar_s * CY
    Fz = -D * sa - L * ca

    u_b = V * ca * cb
    v_b = V * sb
    w_b = V * sa * cb
    udot = r * v_b - q * w_b + Fx / m - G0 * sth
    vdot = p * w_b - r * u_b + Fy / m + G0 * sph * cth
    wdot = q * u_b - p * v_b + Fz / m + G0 * cph * cth

    Vdot = (u_b * udot + v_b * vdot + w_b * wdot) / V
    alphadot = (u_b * wdot - w_b * udot) / (u_b * u_b + w_b * w_b)
    betadot = (V * vdot - v_b * Vdot) / (V * V * cb)

    c1, c2, c3, c4, c5, c6, c7, c8, c9 = params._inertia_coeffs
    Lm = qbar_s * params.b * Cl
    Mm = qbar_s * params.cbar * Cm
    Nm = qbar_s * params.b * Cn
    pdot = (c1 * r + c2 * p) * q + c3 * Lm + c4 * Nm
    qdot = c5 * p * r - c6 * (p * p - r * r) + c7 * Mm
    rdot = (c8 * p - c2 * r) * q + c4 * Lm + c9 * Nm

    phidot = p + (sth / cth) * (q * sph + r * cph)
    thetadot = q * cph - r * sph
    return (Vdot, alphadot, betadot, pdot, qdot, rdot, phidot, thetadot)


def state_derivative(state: AircraftState, controls: ControlVector, params: AircraftParams) -> np.ndarray:
    """Return xdot ordered as [V, alpha, beta, p, q, r, phi, theta]."""
    rho = isa_density(state.h)
    x = (state.V, state.alpha, state.beta, state.p, state.q, state.r, state.phi, state.theta)
    u = (controls.dth, controls.de, controls.da, controls.dr)
    return np.array(_derivative(x, u, rho, params))


_DEFAULT = params_from_dict({})
