"""Steady-maneuver trim by constrained minimization of the state-derivative cost.

The maneuver target (h*, V*, gamma*, psidot*) fixes altitude and airspeed;
pitch angle and body rates are eliminated in closed form so the path-angle
and turn-rate relations hold exactly. The remaining decision variables
``(alpha, beta, phi, dth, de, da, dr)`` are searched inside the box
constraints with a Gauss-Newton SQP loop.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .failures import FailureSpec, apply_failure
from .model import (
    AircraftParams,
    AircraftState,
    ConstraintConfig,
    ControlVector,
    DomainError,
    _derivative,
    isa_density,
)
from .units import DEG


class GeometryError(DomainError):
    """Flight-path relation has no admissible pitch solution."""


class TrimStatus(str, enum.Enum):
    INFEASIBLE = "Infeasible"
    FEASIBLE = "Feasible"  # converged, not yet classified
    STABLE = "FeasibleStable"
    UNSTABLE_CONTROLLABLE = "FeasibleUnstableControllable"
    UNSTABLE_UNCONTROLLABLE = "FeasibleUnstableUncontrollable"

    @property
    def converged(self) -> bool:
        return self is not TrimStatus.INFEASIBLE

    @property
    def in_envelope(self) -> bool:
        return self in (TrimStatus.STABLE, TrimStatus.UNSTABLE_CONTROLLABLE)


# names of the box constraints, per decision variable (lower, upper)
_BOUND_NAMES = (
    ("AlphaLower", "AlphaLimit"),
    ("SideslipLimit", "SideslipLimit"),
    ("BankLimit", "BankLimit"),
    ("ThrottleLower", "ThrottleUpper"),
    ("ElevatorLL", "ElevatorUL"),
    ("AileronLL", "AileronUL"),
    ("RudderLL", "RudderUL"),
)
VARIABLES = ("alpha", "beta", "phi", "dth", "de", "da", "dr")


@dataclass(frozen=True)
class TrimTarget:
    h_star: float
    V_star: float
    gamma_star: float = 0.0
    psidot_star: float = 0.0

    def __post_init__(self):
        if not self.V_star > 0:
            raise DomainError("target airspeed must be positive")
        isa_density(self.h_star)

    def mirrored(self) -> "TrimTarget":
        return TrimTarget(self.h_star, self.V_star, self.gamma_star, -self.psidot_star)


@dataclass(frozen=True)
class SolverConfig:
    Q: np.ndarray | None = None  # 8x8 SPD weighting; None = identity
    tol: float = 1e-7  # convergence threshold on J
    residual_tol: float = 1e-7  # feasibility threshold on max |xdot|
    polish_tol: float = 1e-11  # keep iterating until max |xdot| below this
    constraint_tol: float = 1e-6
    max_iter: int = 80
    fd_step: float = 1e-6

    def __post_init__(self):
        if min(self.tol, self.residual_tol, self.constraint_tol, self.fd_step) <= 0:
            raise ValueError("tolerances must be positive")
        if self.Q is not None:
            Q = np.asarray(self.Q, dtype=float)
            if Q.shape != (8, 8) or not np.allclose(Q, Q.T):
                raise ValueError("Q must be a symmetric 8x8 matrix")
            if np.linalg.eigvalsh(Q).min() <= 0:
                raise ValueError("Q must be positive definite")

    @property
    def weight_factor(self) -> np.ndarray | None:
        """Upper factor R with Q = R^T R, or None for identity."""
        if self.Q is None:
            return None
        return np.linalg.cholesky(np.asarray(self.Q, dtype=float)).T

    def to_dict(self) -> dict:
        return {
            "Q_diag": None if self.Q is None else [float(v) for v in np.diag(self.Q)],
            "tol": self.tol, "residual_tol": self.residual_tol,
            "polish_tol": self.polish_tol, "constraint_tol": self.constraint_tol,
            "max_iter": self.max_iter, "fd_step": self.fd_step,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SolverConfig":
        data = dict(data)
        diag = data.pop("Q_diag", None)
        Q = None if diag is None else np.diag(np.asarray(diag, dtype=float))
        return cls(Q=Q, **data)


@dataclass
class TrimResult:
    target: TrimTarget
    state: AircraftState
    controls: ControlVector
    residual: float
    status: TrimStatus
    active: frozenset = field(default_factory=frozenset)
    reason: str | None = None
    iterations: int = 0
    xdot_max: float = math.inf

    @property
    def feasible(self) -> bool:
        return self.status.converged

    @property
    def in_envelope(self) -> bool:
        return self.status.in_envelope

    def describe(self) -> str:
        if self.status is TrimStatus.INFEASIBLE:
            detail = ",".join(sorted(self.active)) or self.reason
            return f"Infeasible({detail})"
        return self.status.value


# --------------------------------------------------------------------------
# closed-form eliminations
# --------------------------------------------------------------------------


def pitch_theta(alpha: float, beta: float, phi: float, gamma: float) -> float:
    """Pitch angle satisfying sin(gamma) = a sin(theta) - b cos(theta)."""
    a = math.cos(alpha) * math.cos(beta)
    b = math.sin(phi) * math.sin(beta) + math.cos(phi) * math.sin(alpha) * math.cos(beta)
    sg = math.sin(gamma)
    den = a * a - sg * sg
    if den <= 0.0:
        raise GeometryError("a^2 - sin^2(gamma) must be positive")
    theta = math.atan((a * b + sg * math.sqrt(den + b * b)) / den)
    if abs(theta) >= math.pi / 2:
        raise GeometryError("pitch angle at +-pi/2")
    return theta


def required_rates(theta: float, phi: float, psidot: float) -> tuple:
    """Body rates (p, q, r) of a steady turn at heading rate psidot."""
    cth = math.cos(theta)
    return (-psidot * math.sin(theta), psidot * cth * math.sin(phi), psidot * cth * math.cos(phi))


def flight_path_angle(state: AircraftState) -> float:
    a = math.cos(state.alpha) * math.cos(state.beta)
    b = math.sin(state.phi) * math.sin(state.beta) + math.cos(state.phi) * math.sin(state.alpha) * math.cos(state.beta)
    return math.asin(max(-1.0, min(1.0, a * math.sin(state.theta) - b * math.cos(state.theta))))


def constraint_residuals(state: AircraftState, controls: ControlVector, target: TrimTarget,
                         limits: ConstraintConfig | None = None) -> np.ndarray:
    """Equality residuals followed by signed box margins.

    Layout: [h - h*, V - V*, tan(theta) relation, p, q, r relations,
    then margins (>= 0 when satisfied) for alpha upper, |phi|, throttle
    lower/upper, elevator, aileron and rudder lower/upper].
    """
    limits = limits or ConstraintConfig()
    a = math.cos(state.alpha) * math.cos(state.beta)
    b = math.sin(state.phi) * math.sin(state.beta) + math.cos(state.phi) * math.sin(state.alpha) * math.cos(state.beta)
    sg = math.sin(target.gamma_star)
    den = a * a - sg * sg
    tan_rel = math.tan(state.theta) - (a * b + sg * math.sqrt(max(den + b * b, 0.0))) / den
    psd = target.psidot_star
    cth, sth = math.cos(state.theta), math.sin(state.theta)
    eq = [
        state.h - target.h_star,
        state.V - target.V_star,
        tan_rel,
        state.p + psd * sth,
        state.q - psd * cth * math.sin(state.phi),
        state.r - psd * cth * math.cos(state.phi),
    ]
    margins = [
        limits.alpha_max - state.alpha,
        limits.phi_max - abs(state.phi),
        controls.dth - limits.throttle[0], limits.throttle[1] - controls.dth,
        controls.de - limits.elevator[0], limits.elevator[1] - controls.de,
        controls.da - limits.aileron[0], limits.aileron[1] - controls.da,
        controls.dr - limits.rudder[0], limits.rudder[1] - controls.dr,
    ]
    return np.array(eq + margins)


# --------------------------------------------------------------------------
# bounded least-squares subproblem
# --------------------------------------------------------------------------


def bounded_lstsq(A: np.ndarray, b: np.ndarray, lo: np.ndarray, hi: np.ndarray,
                  max_iter: int = 100) -> np.ndarray:
    """Minimize 0.5 |A d - b|^2 subject to lo <= d <= hi.

    Primal active-set method; A must have full column rank and the box
    must contain the origin.
    """
    n = A.shape[1]
    d = np.zeros(n)
    # 0 free, -1 held at lo, +1 held at hi, 2 pinned (lo == hi)
    state = np.zeros(n, dtype=int)
    pinned = lo >= hi
    state[pinned] = 2
    d[pinned] = lo[pinned]
    for _ in range(max_iter):
        free = state == 0
        if free.any():
            rhs = b - A[:, ~free] @ d[~free]
            target = np.linalg.lstsq(A[:, free], rhs, rcond=None)[0]
            cur = d[free]
            step = target - cur
            lo_f, hi_f = lo[free], hi[free]
            with np.errstate(divide="ignore", invalid="ignore"):
                t_hi = np.where(step > 0, (hi_f - cur) / step, np.inf)
                t_lo = np.where(step < 0, (lo_f - cur) / step, np.inf)
            t_blk = np.minimum(t_hi, t_lo)
            t = min(1.0, float(t_blk.min()))
            d[free] = cur + t * step
            if t < 1.0:
                idx = np.flatnonzero(free)
                hit = idx[t_blk <= t + 1e-15]
                for i in hit:
                    if step[np.searchsorted(idx, i)] > 0:
                        d[i], state[i] = hi[i], 1
                    else:
                        d[i], state[i] = lo[i], -1
                continue
        grad = A.T @ (A @ d - b)
        # multiplier sign test for held variables
        viol = np.where(state == -1, -grad, 0.0) + np.where(state == 1, grad, 0.0)
        k = int(np.argmax(viol))
        if viol[k] <= 1e-14 * (1.0 + np.abs(grad).max()):
            return d
        state[k] = 0
    return d


# --------------------------------------------------------------------------
# solver
# --------------------------------------------------------------------------


class _Problem:
    """Reduced trim problem over z = (alpha, beta, phi, dth, de, da, dr)."""

    def __init__(self, target: TrimTarget, params: AircraftParams, limits: ConstraintConfig,
                 config: SolverConfig):
        self.target = target
        self.params = params
        self.limits = limits
        self.config = config
        self.rho = isa_density(target.h_star)
        self.R = config.weight_factor
        self.lo = np.array([limits.alpha_min, -limits.beta_max, -limits.phi_max, limits.throttle[0],
                            limits.elevator[0], limits.aileron[0], limits.rudder[0]])
        self.hi = np.array([limits.alpha_max, limits.beta_max, limits.phi_max, limits.throttle[1],
                            limits.elevator[1], limits.aileron[1], limits.rudder[1]])

    def expand(self, z):
        alpha, beta, phi = float(z[0]), float(z[1]), float(z[2])
        theta = pitch_theta(alpha, beta, phi, self.target.gamma_star)
        p, q, r = required_rates(theta, phi, self.target.psidot_star)
        x = (self.target.V_star, alpha, beta, p, q, r, phi, theta)
        u = (float(z[3]), float(z[4]), float(z[5]), float(z[6]))
        return x, u

    def xdot(self, z) -> np.ndarray:
        x, u = self.expand(z)
        return np.array(_derivative(x, u, self.rho, self.params))

    def weighted(self, z) -> np.ndarray:
        f = self.xdot(z)
        return f if self.R is None else self.R @ f

    def cost(self, z) -> float:
        try:
            w = self.weighted(z)
        except DomainError:
            return math.inf
        return 0.5 * float(w @ w)

    def jacobian(self, z) -> np.ndarray:
        h = self.config.fd_step
        J = np.empty((8, 7))
        for i in range(7):
            zp = z.copy()
            zm = z.copy()
            zp[i] += h
            zm[i] -= h
            J[:, i] = (self.weighted(zp) - self.weighted(zm)) / (2 * h)
        return J

    def active_set(self, z, tol) -> frozenset:
        names = set()
        for i, (nlo, nhi) in enumerate(_BOUND_NAMES):
            if z[i] <= self.lo[i] + tol:
                names.add(nlo)
            if z[i] >= self.hi[i] - tol:
                names.add(nhi)
        return frozenset(names)


def cold_start_guess(limits: ConstraintConfig) -> np.ndarray:
    z = np.array([3.0 * DEG, 0.0, 0.0, 0.5, 0.0, 0.0, 0.0])
    return z


def _guess_vector(initial_guess) -> np.ndarray | None:
    if initial_guess is None:
        return None
    if isinstance(initial_guess, TrimResult):
        s, c = initial_guess.state, initial_guess.controls
        return np.array([s.alpha, s.beta, s.phi, c.dth, c.de, c.da, c.dr])
    if isinstance(initial_guess, tuple) and len(initial_guess) == 2 and isinstance(initial_guess[0], AircraftState):
        s, c = initial_guess
        return np.array([s.alpha, s.beta, s.phi, c.dth, c.de, c.da, c.dr])
    z = np.asarray(initial_guess, dtype=float)
    if z.shape != (7,):
        raise ValueError("initial guess must be (state, controls) or a 7-vector")
    return z


def solve_trim(target: TrimTarget, failure: FailureSpec | None = None,
               params: AircraftParams | None = None, config: SolverConfig | None = None,
               initial_guess=None, classify: bool = True) -> TrimResult:
    """Find a trim for ``target``; the status is refined by linear analysis when converged."""
    from .model import default_params

    params = params or default_params()
    config = config or SolverConfig()
    limits = apply_failure(params.limits, failure)
    prob = _Problem(target, params, limits, config)

    z0 = _guess_vector(initial_guess)
    if z0 is None:
        z0 = cold_start_guess(limits)
    z = np.clip(z0, prob.lo, prob.hi)

    result = _iterate(prob, z)
    if classify and result.status is TrimStatus.FEASIBLE:
        from .linear import classify as _classify

        result.status = _classify(result, params, failure)
    return result


def _iterate(prob: _Problem, z: np.ndarray) -> TrimResult:
    cfg = prob.config
    try:
        w = prob.weighted(z)
    except GeometryError:
        return _package(prob, z, math.inf, math.inf, TrimStatus.INFEASIBLE, "Geometry", 0)
    J = 0.5 * float(w @ w)
    # Levenberg-Marquardt weight: damping = c * |w|^2 keeps steps short where
    # the residual cannot vanish and vanishes near a zero-residual trim
    c = 1.0
    history = [J]
    it = 0
    for it in range(1, cfg.max_iter + 1):
        if J <= cfg.tol and float(np.abs(prob.xdot(z)).max()) <= cfg.polish_tol:
            break
        A = prob.jacobian(z)
        mu = c * 2.0 * J
        A_aug = np.vstack([A, math.sqrt(mu) * np.eye(7)])
        b_aug = np.concatenate([-w, np.zeros(7)])
        d = bounded_lstsq(A_aug, b_aug, prob.lo - z, prob.hi - z)
        slope = float((A.T @ w) @ d)
        if not np.isfinite(d).all() or slope >= 0 or np.abs(d).max() < 1e-15:
            break
        t = 1.0
        while True:
            zt = np.clip(z + t * d, prob.lo, prob.hi)
            Jt = prob.cost(zt)
            if Jt <= J + 1e-4 * t * slope:
                break
            t *= 0.5
            if t < 1e-10:
                break
        if t < 1e-10:
            break
        c = max(c * 0.25, 1e-6) if t == 1.0 else min(c * 8.0, 1e6)
        z, J = zt, Jt
        w = prob.weighted(z)
        history.append(J)
        # clearly infeasible and no longer making progress
        if J > 1e3 * cfg.tol and len(history) > 6 and history[-6] - J <= 1e-4 * history[-6]:
            break

    fmax = float(np.abs(prob.xdot(z)).max())
    if J <= cfg.tol and fmax <= cfg.residual_tol:
        return _package(prob, z, J, fmax, TrimStatus.FEASIBLE, None, it)
    active = prob.active_set(z, 1e-9)
    reason = "Constrained" if active and it < cfg.max_iter else "NoConvergence"
    return _package(prob, z, J, fmax, TrimStatus.INFEASIBLE, reason, it, active)


def _package(prob, z, J, fmax, status, reason, it, active=None) -> TrimResult:
    try:
        x, u = prob.expand(z)
        state = AircraftState(*x, h=prob.target.h_star)
    except DomainError:
        state = AircraftState(prob.target.V_star, float(z[0]), float(z[1]), 0.0, 0.0, 0.0,
                              float(z[2]), 0.0, h=prob.target.h_star)
        u = tuple(float(v) for v in z[3:])
    if active is None:
        active = prob.active_set(z, prob.config.constraint_tol)
    return TrimResult(
        target=prob.target, state=state, controls=ControlVector(*u), residual=J,
        status=status, active=active, reason=reason, iterations=it, xdot_max=fmax,
    )
