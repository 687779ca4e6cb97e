"""Envelope boundaries, limiting factors and closed-form performance laws."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .envelope import EnvelopeSlice
from .failures import apply_failure
from .model import RHO_SL, AircraftParams, DomainError, default_params, isa_density
from .trim import SolverConfig, TrimResult, TrimStatus, TrimTarget, solve_trim
from .units import DEG, KT

# active-constraint tolerances
EPS_ALPHA = 0.05 * DEG
EPS_DEFLECTION = 0.05 * DEG
EPS_THROTTLE = 0.005

STALL = "StallAlpha"
AILERON = "AileronSaturation"
RUDDER = "RudderSaturation"
ELEVATOR = "ElevatorSaturation"
THRUST = "ThrustSaturation"
IDLE = "IdleThrust"
BANK_ONLY = "BankOnly"
MIXED = "Mixed"

_CONSTRAINT_FACTOR = {
    "AlphaLimit": STALL, "AlphaLower": "AlphaLower", "SideslipLimit": "SideslipLimit",
    "AileronLL": AILERON, "AileronUL": AILERON, "RudderLL": RUDDER, "RudderUL": RUDDER,
    "ElevatorLL": ELEVATOR, "ElevatorUL": ELEVATOR,
    "ThrottleUpper": THRUST, "ThrottleLower": IDLE,
}


# --------------------------------------------------------------------------
# performance laws
# --------------------------------------------------------------------------


def load_factor(phi: float) -> float:
    if abs(phi) >= math.pi / 2:
        raise DomainError("bank angle must satisfy |phi| < pi/2")
    return 1.0 / math.cos(phi)


@dataclass(frozen=True)
class PerformanceQuery:
    W: float
    rho: float
    S: float
    CLmax: float
    phi: float = 0.0
    gamma: float = 0.0
    K: float = 0.0
    CD0: float = 0.0
    TmaxS: float = 0.0
    m_lapse: float = 1.0

    @classmethod
    def from_params(cls, params: AircraftParams, h: float = 0.0, phi: float = 0.0,
                    gamma: float = 0.0) -> "PerformanceQuery":
        a = params.aero
        return cls(W=params.W0, rho=isa_density(h), S=params.S, CLmax=a.CLmax, phi=phi,
                   gamma=gamma, K=a.K, CD0=a.CD0, TmaxS=params.prop.TmaxS,
                   m_lapse=params.prop.m_lapse)


def stall_speed(query: PerformanceQuery) -> float:
    """Stall speed in a level banked turn, V_S0 / sqrt(cos phi)."""
    if not query.CLmax > 0:
        raise ValueError("CLmax must be positive")
    vs0 = math.sqrt(2.0 * query.W / (query.rho * query.CLmax * query.S))
    return vs0 * math.sqrt(load_factor(query.phi))


def thrust_required(V: float, phi: float, gamma: float, h: float,
                    params: AircraftParams | None = None, beta: float = 0.0) -> float:
    """Parabolic-polar thrust required, with optional sideslip drag."""
    if not V > 0:
        raise DomainError("airspeed must be positive")
    params = params or default_params()
    a = params.aero
    rho = isa_density(h)
    W, S = params.W0, params.S
    n = load_factor(phi)
    parasite = 0.5 * rho * V * V * S * (a.CD0 + a.CDbeta * beta * beta)
    induced = 2.0 * a.K * W * W * n * n / (rho * V * V * S)
    return W * gamma + parasite + induced


def gamma_max(h: float, phi: float = 0.0, params: AircraftParams | None = None) -> float:
    """Maximum sustainable path angle (rad) from static thrust and the drag polar."""
    params = params or default_params()
    sigma = isa_density(h) / RHO_SL
    a = params.aero
    return (params.prop.TmaxS / params.W0) * sigma ** params.prop.m_lapse \
        - 2.0 * math.cos(phi) * math.sqrt(a.K * a.CD0)


# --------------------------------------------------------------------------
# boundary extraction
# --------------------------------------------------------------------------


@dataclass
class BoundaryPoint:
    i: int
    j: int
    V_kt: float
    psidot_degps: float
    trim: TrimResult
    factor: str | None = None
    components: tuple = field(default_factory=tuple)

    @property
    def label(self) -> str:
        if self.factor == MIXED:
            return "Mixed(" + "+".join(self.components) + ")"
        return str(self.factor)


_NEIGHBORS = ((1, 0), (-1, 0), (0, 1), (0, -1))


def boundary_cells(mask: np.ndarray) -> set:
    """Member cells with a non-member or out-of-grid 4-neighbor."""
    nV, nP = mask.shape
    out = set()
    for i, j in zip(*np.nonzero(mask)):
        for di, dj in _NEIGHBORS:
            a, b = i + di, j + dj
            if not (0 <= a < nV and 0 <= b < nP) or not mask[a, b]:
                out.add((int(i), int(j)))
                break
    return out


def _walk_order(cells: set, mask: np.ndarray, psidots: np.ndarray) -> list:
    """Counterclockwise order in the (V, psidot) plane from the lowest-speed zero-turn cell."""
    members = np.argwhere(mask)
    ci, cj = members.mean(axis=0)
    zero = int(np.argmin(np.abs(psidots)))
    on_axis = [c for c in cells if c[1] == zero]
    if on_axis:
        start = min(on_axis)
    else:
        start = min(cells, key=lambda c: (abs(c[1] - zero), c[0]))

    def angle(c):
        return math.atan2(c[1] - cj, c[0] - ci)

    a0 = angle(start)

    def key(c):
        t = (angle(c) - a0) % (2 * math.pi)
        if c == start:
            t = 0.0
        return (t, math.hypot(c[0] - ci, c[1] - cj), c)

    return sorted(cells, key=key)


def extract_boundary(sl: EnvelopeSlice, classify: bool = True,
                     params: AircraftParams | None = None, **tolerances) -> list:
    """Boundary points of the envelope, walked counterclockwise in (V, psidot)."""
    mask = sl.mask()
    if not mask.any():
        return []
    cells = boundary_cells(mask)
    points = [BoundaryPoint(i, j, float(sl.V_kt[i]), float(sl.psidot_degps[j]), sl.cell(i, j))
              for i, j in _walk_order(cells, mask, sl.psidot_degps)]
    if classify:
        for pt in points:
            classify_limiting_factor(pt, sl, params, **tolerances)
    return points


def _saturations(trim: TrimResult, limits, eps_alpha, eps_delta, eps_th) -> tuple:
    """Factors whose constraint is active at the trim, plus a bank flag and jammed-surface factors."""
    s, c = trim.state, trim.controls
    found, jammed = [], []
    if s.alpha >= limits.alpha_max - eps_alpha:
        found.append(STALL)
    for surface, value, name in (("elevator", c.de, ELEVATOR), ("aileron", c.da, AILERON),
                                 ("rudder", c.dr, RUDDER)):
        lo, hi = limits.window(surface)
        if value <= lo + eps_delta or value >= hi - eps_delta:
            (jammed if lo == hi else found).append(name)
    lo, hi = limits.throttle
    if lo == hi:
        jammed.append(THRUST)
    elif c.dth >= hi - eps_th:
        found.append(THRUST)
    elif c.dth <= lo + eps_th:
        found.append(IDLE)
    bank = abs(s.phi) >= limits.phi_max - eps_delta
    return found, bank, jammed


_RELAX = {
    "AlphaLimit": lambda L: {"alpha_max": L.alpha_max + 10 * DEG},
    "AlphaLower": lambda L: {"alpha_min": L.alpha_min - 10 * DEG},
    "SideslipLimit": lambda L: {"beta_max": min(L.beta_max + 20 * DEG, 80 * DEG)},
    "BankLimit": lambda L: {"phi_max": min(L.phi_max + 30 * DEG, 80 * DEG)},
    "ThrottleUpper": lambda L: {"throttle": (L.throttle[0], L.throttle[1] + 1.0)},
    "ThrottleLower": lambda L: {"throttle": (L.throttle[0] - 1.0, L.throttle[1])},
}
for _s, _n in (("elevator", "Elevator"), ("aileron", "Aileron"), ("rudder", "Rudder")):
    _RELAX[_n + "UL"] = lambda L, s=_s: {s: (getattr(L, s)[0], getattr(L, s)[1] + 40 * DEG)}
    _RELAX[_n + "LL"] = lambda L, s=_s: {s: (getattr(L, s)[0] - 40 * DEG, getattr(L, s)[1])}


def _relaxation_test(target: TrimTarget, active: frozenset, seed: TrimResult, params, limits,
                     config) -> list:
    """Constraints whose relaxation alone makes ``target`` trimmable."""
    hits = []
    for name in sorted(active):
        if name not in _RELAX:
            continue
        relaxed = params.with_limits(dataclasses.replace(limits, **_RELAX[name](limits)))
        r = solve_trim(target, None, relaxed, config, initial_guess=seed, classify=False)
        if not r.feasible:
            r = solve_trim(target, None, relaxed, config, classify=False)
        if r.feasible:
            hits.append(name)
    return hits


def _neighbor_obstruction(pt: BoundaryPoint, sl: EnvelopeSlice, params, limits, bank: bool) -> list:
    """Factors blocking the non-member neighbors of a boundary point."""
    nV, nP = sl.shape
    config = _config(sl)
    factors, bank_hit = set(), False
    for di, dj in _NEIGHBORS:
        a, b = pt.i + di, pt.j + dj
        if 0 <= a < nV and 0 <= b < nP:
            other = sl.cell(a, b)
        else:
            other = _virtual_cell(sl, a, b, pt.trim, params)
        if other is None or other.feasible:
            continue
        active = set(other.active)
        if bank:
            active.add("BankLimit")
        hits = _relaxation_test(other.target, frozenset(active), pt.trim, params, limits, config)
        names = [h for h in hits if h != "BankLimit"]
        bank_hit |= "BankLimit" in hits
        if names:
            factors |= {_CONSTRAINT_FACTOR[n] for n in names}
        elif not hits:
            # jointly limiting: no single relaxation suffices
            factors |= {_CONSTRAINT_FACTOR[n] for n in active if n in _CONSTRAINT_FACTOR}
    if not factors and bank_hit:
        return [BANK_ONLY]
    return sorted(factors)


def _config(sl: EnvelopeSlice):
    if "solver" in sl.provenance:
        return SolverConfig.from_dict(sl.provenance["solver"])
    return None


def _virtual_cell(sl: EnvelopeSlice, a: int, b: int, seed: TrimResult, params):
    """Solve the grid position just outside the slice, continuing its spacing."""
    V, P = sl.V_kt, sl.psidot_degps
    dV = V[1] - V[0] if len(V) > 1 else 1.0
    dP = P[1] - P[0] if len(P) > 1 else 1.0
    Vk = V[0] + a * dV
    Pk = P[0] + b * dP
    if Vk <= 0:
        return None
    try:
        tgt = TrimTarget(sl.h, float(Vk) * KT, sl.gamma, float(Pk) * DEG)
    except DomainError:
        return None
    config = _config(sl)
    r = solve_trim(tgt, sl.failure, params, config, initial_guess=seed, classify=False)
    if not r.feasible:
        cold = solve_trim(tgt, sl.failure, params, config, classify=False)
        if cold.feasible:
            r = cold
    return r


def _nearest_margin(trim: TrimResult, limits) -> str:
    s, c = trim.state, trim.controls
    margins = {STALL: (limits.alpha_max - s.alpha) / (limits.alpha_max - limits.alpha_min)}
    for surface, value, name in (("elevator", c.de, ELEVATOR), ("aileron", c.da, AILERON),
                                 ("rudder", c.dr, RUDDER), ("throttle", c.dth, THRUST)):
        lo, hi = limits.window(surface)
        if hi > lo:
            margins[name] = min(value - lo, hi - value) / (hi - lo)
    return min(margins, key=margins.get)


def classify_limiting_factor(pt: BoundaryPoint, sl: EnvelopeSlice,
                             params: AircraftParams | None = None,
                             eps_alpha: float = EPS_ALPHA, eps_delta: float = EPS_DEFLECTION,
                             eps_th: float = EPS_THROTTLE) -> str:
    """Assign the limiting factor of a boundary point and return it.

    Constraints active at the point's own trim decide. Otherwise the
    infeasible neighbors are examined (solving one step past the grid edge
    if needed): each constraint active at a neighbor's best point is relaxed
    on its own, and those whose relaxation restores a trim are named. A point
    that only the bank limit holds back is BankOnly. As a last resort the
    constraint with the smallest relative margin is named.
    """
    params = params or default_params()
    limits = apply_failure(params.limits, sl.failure)
    found, bank, jammed = _saturations(pt.trim, limits, eps_alpha, eps_delta, eps_th)
    factors = found
    if not factors:
        factors = _neighbor_obstruction(pt, sl, params, limits, bank) or jammed
    if not factors:
        factors = [BANK_ONLY] if bank else [_nearest_margin(pt.trim, limits)]
    if len(factors) == 1:
        pt.factor, pt.components = factors[0], (factors[0],)
    else:
        pt.factor, pt.components = MIXED, tuple(factors)
    return pt.factor


def refine_to_limit(pt: BoundaryPoint, sl: EnvelopeSlice, params: AircraftParams | None = None,
                    iterations: int = 30) -> TrimResult:
    """Limit trim between a boundary cell and its first infeasible neighbor.

    Bisects on the straight segment from the cell's target to the neighbor's
    target, warm-starting from the last feasible trim. Returns the stored
    trim unchanged when every neighbor is feasible.
    """
    params = params or default_params()
    config = _config(sl)
    nV, nP = sl.shape
    outward = None
    for di, dj in _NEIGHBORS:
        a, b = pt.i + di, pt.j + dj
        if 0 <= a < nV and 0 <= b < nP:
            other = sl.cell(a, b)
        else:
            other = _virtual_cell(sl, a, b, pt.trim, params)
        if other is not None and not other.in_envelope:
            outward = other.target
            break
    if outward is None:
        return pt.trim
    t0 = pt.trim.target
    best, lo, hi = pt.trim, 0.0, 1.0
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        tgt = TrimTarget(t0.h_star, t0.V_star + mid * (outward.V_star - t0.V_star), t0.gamma_star,
                         t0.psidot_star + mid * (outward.psidot_star - t0.psidot_star))
        r = solve_trim(tgt, sl.failure, params, config, initial_guess=best)
        if r.in_envelope:
            best, lo = r, mid
        else:
            hi = mid
    return best


def factor_sequence(points: list, half: str = "left") -> list:
    """Distinct single factors in walk order along one half of the boundary.

    The left half holds negative turn rates; Mixed and BankOnly points are skipped.
    """
    if half not in ("left", "right"):
        raise ValueError("half must be 'left' or 'right'")
    sel = [p for p in points if (p.psidot_degps <= 0 if half == "left" else p.psidot_degps >= 0)]
    if half == "right":
        # walk the right half from the low-speed end as well
        sel = [sel[0]] + sel[1:][::-1] if sel and sel[0].psidot_degps == 0 else sel[::-1]
    seq = []
    for p in sel:
        if p.factor in (MIXED, BANK_ONLY, None):
            continue
        if not seq or seq[-1] != p.factor:
            seq.append(p.factor)
    return seq


# --------------------------------------------------------------------------
# envelope algebra
# --------------------------------------------------------------------------


def intersect_envelopes(a: EnvelopeSlice, b: EnvelopeSlice) -> EnvelopeSlice:
    """Cellwise intersection; stored trims come from ``a``."""
    a.check_grid(b)
    cells = []
    for row_a, row_b in zip(a.cells, b.cells):
        row = []
        for ca, cb in zip(row_a, row_b):
            if ca.in_envelope and not cb.in_envelope:
                ca = dataclasses.replace(ca, status=TrimStatus.INFEASIBLE, reason="Intersection")
            row.append(ca)
        cells.append(row)
    prov = dict(a.provenance)
    prov["intersection_of"] = [a.provenance.get("failure"), b.provenance.get("failure")]
    return EnvelopeSlice(a.h, a.gamma, a.V_kt.copy(), a.psidot_degps.copy(), cells, a.failure, prov)


def _edges(mask: np.ndarray, side: str) -> dict:
    """Edge index of the member set per row (left/right) or per column (bottom/top)."""
    out = {}
    if side in ("left", "right"):
        for i in range(mask.shape[0]):
            idx = np.flatnonzero(mask[i])
            if idx.size:
                out[i] = int(idx[0] if side == "left" else idx[-1])
    else:
        for j in range(mask.shape[1]):
            idx = np.flatnonzero(mask[:, j])
            if idx.size:
                out[j] = int(idx[0] if side == "bottom" else idx[-1])
    return out


def separation_report(impaired: EnvelopeSlice, unimpaired: EnvelopeSlice, tol_cells: int = 0) -> dict:
    """Per-side comparison of an impaired boundary with the unimpaired one.

    Sides follow the usual picture with turn rate horizontal and speed
    vertical: left/right are the negative/positive turn-rate edges of each
    speed row, bottom/top the low/high speed edges of each turn-rate column.
    Distances are in grid cells.
    """
    impaired.check_grid(unimpaired)
    mi, mu = impaired.mask(), unimpaired.mask()
    report = {}
    for side in ("left", "right", "bottom", "top"):
        ei, eu = _edges(mi, side), _edges(mu, side)
        dist = 0
        for k, ref in eu.items():
            if k in ei:
                d = abs(ei[k] - ref)
            else:
                line = mu[k] if side in ("left", "right") else mu[:, k]
                d = int(line.sum())
            dist = max(dist, d)
        report[side] = {"attached": dist <= tol_cells, "max_separation_cells": int(dist)}
    return report


# --------------------------------------------------------------------------
# grid-law helpers
# --------------------------------------------------------------------------


def speed_range(sl: EnvelopeSlice, psidot_degps: float = 0.0):
    """(min, max) member speed in knots on the given turn-rate column, or None."""
    hits = np.flatnonzero(np.isclose(sl.psidot_degps, psidot_degps))
    if hits.size == 0:
        raise ValueError(f"turn rate {psidot_degps} not on the grid")
    col = sl.mask()[:, hits[0]]
    if not col.any():
        return None
    V = sl.V_kt[col]
    return float(V.min()), float(V.max())
