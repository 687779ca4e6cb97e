"""Grid sweeps of trim solutions over (V, psidot) slices and gamma stacks."""

from __future__ import annotations

import dataclasses
import logging
import math
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .failures import FailureSpec
from .model import AircraftParams, AircraftState, ControlVector, default_params
from .trim import SolverConfig, TrimResult, TrimTarget, solve_trim
from .units import DEG, FT, KT

log = logging.getLogger(__name__)

# lateral components negated by the left/right mirror
_MIRROR_STATE = np.array([1, 1, -1, -1, 1, -1, -1, 1], dtype=float)
_MIRROR_CONTROL = np.array([1, 1, -1, -1], dtype=float)
_MIRROR_NAMES = {"AileronLL": "AileronUL", "AileronUL": "AileronLL",
                 "RudderLL": "RudderUL", "RudderUL": "RudderLL"}


class GridMismatchError(ValueError):
    pass


def _axis(lo: float, hi: float, step: float) -> np.ndarray:
    if not step > 0:
        raise ValueError("grid increments must be positive")
    if hi < lo:
        return np.zeros(0)
    n = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return np.round(lo + step * np.arange(n), 9)


@dataclass(frozen=True)
class GridSpec:
    """Sweep grid in external units: knots, deg/s, degrees and feet."""

    V_min: float = 50.0
    V_max: float = 190.0
    V_step: float = 1.0
    psidot_min: float = -20.0
    psidot_max: float = 20.0
    psidot_step: float = 0.2
    gamma_min: float = -5.0
    gamma_max: float = 5.0
    gamma_step: float = 1.0
    altitudes_ft: tuple = (0.0, 10000.0, 20000.0, 30000.0)

    def __post_init__(self):
        for name in ("V_step", "psidot_step", "gamma_step"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    @classmethod
    def desk(cls, **overrides) -> "GridSpec":
        """Coarse grid used for verification runs."""
        base = dict(V_min=60.0, V_max=180.0, V_step=5.0, psidot_min=-12.0, psidot_max=12.0,
                    psidot_step=1.0, gamma_min=0.0, gamma_max=0.0, altitudes_ft=(0.0,))
        base.update(overrides)
        return cls(**base)

    @property
    def V_axis(self) -> np.ndarray:
        return _axis(self.V_min, self.V_max, self.V_step)

    @property
    def psidot_axis(self) -> np.ndarray:
        return _axis(self.psidot_min, self.psidot_max, self.psidot_step)

    @property
    def gamma_axis(self) -> np.ndarray:
        return _axis(self.gamma_min, self.gamma_max, self.gamma_step)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["altitudes_ft"] = list(self.altitudes_ft)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "GridSpec":
        data = dict(data)
        if "altitudes_ft" in data:
            data["altitudes_ft"] = tuple(float(v) for v in data["altitudes_ft"])
        return cls(**data)


@dataclass
class EnvelopeSlice:
    """Trim results on a (V, psidot) grid at fixed altitude and path angle.

    ``cells[i][j]`` belongs to ``V_kt[i]`` and ``psidot_degps[j]``.
    """

    h: float  # m
    gamma: float  # rad
    V_kt: np.ndarray
    psidot_degps: np.ndarray
    cells: list
    failure: FailureSpec | None = None
    provenance: dict = field(default_factory=dict)

    @property
    def shape(self) -> tuple:
        return (len(self.V_kt), len(self.psidot_degps))

    @property
    def size(self) -> int:
        return self.shape[0] * self.shape[1]

    def cell(self, i: int, j: int) -> TrimResult:
        return self.cells[i][j]

    def status_table(self) -> np.ndarray:
        out = np.empty(self.shape, dtype=object)
        for i, row in enumerate(self.cells):
            for j, r in enumerate(row):
                out[i, j] = r.status.value
        return out

    def mask(self) -> np.ndarray:
        """Envelope membership (stable or controllable trims)."""
        out = np.zeros(self.shape, dtype=bool)
        for i, row in enumerate(self.cells):
            for j, r in enumerate(row):
                out[i, j] = r.in_envelope
        return out

    def same_grid(self, other: "EnvelopeSlice") -> bool:
        return (np.array_equal(self.V_kt, other.V_kt)
                and np.array_equal(self.psidot_degps, other.psidot_degps)
                and math.isclose(self.h, other.h, abs_tol=1e-9)
                and math.isclose(self.gamma, other.gamma, abs_tol=1e-12))

    def check_grid(self, other: "EnvelopeSlice"):
        if not self.same_grid(other):
            raise GridMismatchError("slices differ in altitude, path angle or grid axes")

    @property
    def gamma_deg(self) -> float:
        return self.gamma / DEG

    @property
    def h_ft(self) -> float:
        return self.h / FT


@dataclass
class Envelope3D:
    h: float
    slices: list

    def __post_init__(self):
        for s in self.slices[1:]:
            first = self.slices[0]
            if not (np.array_equal(s.V_kt, first.V_kt)
                    and np.array_equal(s.psidot_degps, first.psidot_degps)
                    and s.failure == first.failure):
                raise GridMismatchError("slices of a 3D envelope must share grid and failure")

    @property
    def gammas_deg(self) -> list:
        return [s.gamma_deg for s in self.slices]


def make_provenance(params: AircraftParams, config: SolverConfig,
                    failure: FailureSpec | None, grid: GridSpec | None = None) -> dict:
    prov = {
        "tool_version": __version__,
        "params_hash": params.digest(),
        "symmetric_params": params.symmetric,
        "failure": None if failure is None else failure.to_dict(),
        "solver": config.to_dict(),
    }
    if grid is not None:
        prov["grid"] = grid.to_dict()
    return prov


# --------------------------------------------------------------------------
# sweeping
# --------------------------------------------------------------------------


def _march_order(psidots: np.ndarray) -> list:
    """Indices starting at the turn rate closest to zero, then outward each way."""
    if len(psidots) == 0:
        return []
    k = int(np.argmin(np.abs(psidots)))
    chains = [[k]]
    chains.append(list(range(k + 1, len(psidots))))
    chains.append(list(range(k - 1, -1, -1)))
    return chains


def sweep_column(h: float, gamma: float, V_kt: float, psidots: np.ndarray,
                 failure: FailureSpec | None, params: AircraftParams,
                 config: SolverConfig) -> list:
    """Solve one V column: anchor cold, then warm-started marches outward."""
    out = [None] * len(psidots)
    if len(psidots) == 0:
        return out
    anchor, up, down = _march_order(psidots)
    V = V_kt * KT

    def solve(j, guess):
        tgt = TrimTarget(h, V, gamma, float(psidots[j]) * DEG)
        r = solve_trim(tgt, failure, params, config, initial_guess=guess)
        if guess is not None and not r.feasible:
            cold = solve_trim(tgt, failure, params, config)
            if cold.feasible:
                r = cold
        return r

    out[anchor[0]] = first = solve(anchor[0], None)
    for chain in (up, down):
        seed = first if first.feasible else None
        for j in chain:
            r = solve(j, seed)
            out[j] = r
            if r.feasible:
                seed = r
    return out


def _column_job(args):
    return sweep_column(*args)


def _run_columns(jobs: list, workers: int, progress=None) -> list:
    total = len(jobs)
    if workers <= 1 or total <= 1:
        results = []
        for k, job in enumerate(jobs):
            results.append(_column_job(job))
            if progress:
                progress(k + 1, total)
        return results
    results = [None] * total
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = {pool.submit(_column_job, job): k for k, job in enumerate(jobs)}
        done = 0
        for fut in as_completed(futures):
            results[futures[fut]] = fut.result()
            done += 1
            if progress:
                progress(done, total)
    return results


def sweep_slice(h: float, gamma: float, grid: GridSpec, failure: FailureSpec | None = None,
                params: AircraftParams | None = None, config: SolverConfig | None = None,
                workers: int = 1, progress=None) -> EnvelopeSlice:
    """Sweep the (V, psidot) grid at altitude h (m) and path angle gamma (rad)."""
    params = params or default_params()
    config = config or SolverConfig()
    V_axis, P_axis = grid.V_axis, grid.psidot_axis
    jobs = [(h, gamma, float(V), P_axis, failure, params, config) for V in V_axis]
    cells = _run_columns(jobs, workers, progress)
    return EnvelopeSlice(h, gamma, V_axis, P_axis, cells, failure,
                         make_provenance(params, config, failure, grid))


def sweep_3d(h: float, grid: GridSpec, failure: FailureSpec | None = None,
             params: AircraftParams | None = None, config: SolverConfig | None = None,
             workers: int = 1, progress=None) -> Envelope3D:
    """Stack of slices over the gamma axis at altitude h (m)."""
    params = params or default_params()
    config = config or SolverConfig()
    V_axis, P_axis, G_axis = grid.V_axis, grid.psidot_axis, grid.gamma_axis
    jobs = [(h, float(g) * DEG, float(V), P_axis, failure, params, config)
            for g in G_axis for V in V_axis]
    columns = _run_columns(jobs, workers, progress)
    prov = make_provenance(params, config, failure, grid)
    slices = []
    n = len(V_axis)
    for k, g in enumerate(G_axis):
        cells = columns[k * n:(k + 1) * n]
        slices.append(EnvelopeSlice(h, float(g) * DEG, V_axis, P_axis, cells, failure, dict(prov)))
    return Envelope3D(h, slices)


# --------------------------------------------------------------------------
# symmetry
# --------------------------------------------------------------------------


def mirror_trim(r: TrimResult) -> TrimResult:
    """Left/right mirror image of a trim result."""
    s = r.state
    x = s.as_array() * _MIRROR_STATE
    u = r.controls.as_array() * _MIRROR_CONTROL
    return dataclasses.replace(
        r,
        target=r.target.mirrored(),
        state=AircraftState.from_array(x, h=s.h),
        controls=ControlVector.from_array(u),
        active=frozenset(_MIRROR_NAMES.get(a, a) for a in r.active),
    )


def mirror_envelope(sl: EnvelopeSlice) -> EnvelopeSlice:
    """Slice for the mirrored failure window, obtained by reflecting psidot."""
    if not sl.provenance.get("symmetric_params", False):
        raise ValueError("mirroring requires a laterally symmetric parameter set")
    P = sl.psidot_degps
    if not np.array_equal(np.sort(-P), P):
        raise GridMismatchError("psidot axis must be symmetric about zero to mirror")
    n = len(P)
    cells = [[mirror_trim(row[n - 1 - j]) for j in range(n)] for row in sl.cells]
    failure = None if sl.failure is None else sl.failure.mirrored()
    prov = dict(sl.provenance)
    prov["failure"] = None if failure is None else failure.to_dict()
    if sl.failure is not None:
        prov["mirrored_from"] = sl.failure.to_dict()
    return EnvelopeSlice(sl.h, sl.gamma, sl.V_kt.copy(), P.copy(), cells, failure, prov)


def boundary_adjacent(mask: np.ndarray) -> list:
    """Cells whose membership differs from at least one 4-neighbor."""
    out = []
    nV, nP = mask.shape
    for i in range(nV):
        for j in range(nP):
            for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                a, b = i + di, j + dj
                if 0 <= a < nV and 0 <= b < nP and mask[a, b] != mask[i, j]:
                    out.append((i, j))
                    break
    return out


def validate_mirror(mirrored: EnvelopeSlice, params: AircraftParams | None = None,
                    config: SolverConfig | None = None, n_samples: int = 3,
                    seed: int = 0) -> list:
    """Recompute randomly chosen boundary-adjacent cells of a mirrored slice directly.

    Returns one record per sampled cell with the mirrored and direct membership.
    """
    params = params or default_params()
    config = config or SolverConfig()
    mask = mirrored.mask()
    candidates = boundary_adjacent(mask)
    rng = np.random.default_rng(seed)
    if not candidates:
        return []
    picks = rng.choice(len(candidates), size=min(n_samples, len(candidates)), replace=False)
    records = []
    for k in sorted(int(p) for p in picks):
        i, j = candidates[k]
        tgt = TrimTarget(mirrored.h, float(mirrored.V_kt[i]) * KT, mirrored.gamma,
                         float(mirrored.psidot_degps[j]) * DEG)
        guess = mirrored.cell(i, j) if mirrored.cell(i, j).feasible else None
        direct = solve_trim(tgt, mirrored.failure, params, config, initial_guess=guess)
        if not direct.in_envelope and guess is not None:
            direct = solve_trim(tgt, mirrored.failure, params, config)
        rec = {"V_kt": float(mirrored.V_kt[i]), "psidot_degps": float(mirrored.psidot_degps[j]),
               "mirrored": bool(mask[i, j]), "direct": bool(direct.in_envelope)}
        rec["agree"] = rec["mirrored"] == rec["direct"]
        if not rec["agree"]:
            log.warning("mirror validation mismatch at V=%g kt psidot=%g deg/s",
                        rec["V_kt"], rec["psidot_degps"])
        records.append(rec)
    return records


# --------------------------------------------------------------------------
# cold-start oracle
# --------------------------------------------------------------------------


@dataclass
class ColdStartReport:
    """Comparison of a swept slice against cold-start solves of the same cells.

    ``flags`` are cells whose envelope membership depends on the starting
    point (multi-branch cells). ``branches`` are cells where both solves
    converge but to trims more than ``state_tol`` apart; the trim set of a
    target is a curve, so these are expected and only informative.
    """

    cold_mask: np.ndarray
    flags: list
    branches: list


def cold_start_oracle(sl: EnvelopeSlice, params: AircraftParams | None = None,
                      config: SolverConfig | None = None, state_tol: float = 1e-4) -> ColdStartReport:
    """Re-solve every cell of ``sl`` from the cold-start guess."""
    params = params or default_params()
    config = config or SolverConfig()
    cold_mask = np.zeros(sl.shape, dtype=bool)
    flags, branches = [], []
    for i in range(sl.shape[0]):
        for j in range(sl.shape[1]):
            stored = sl.cell(i, j)
            cold = solve_trim(stored.target, sl.failure, params, config)
            cold_mask[i, j] = cold.in_envelope
            if cold.in_envelope != stored.in_envelope:
                log.info("membership depends on start point at V=%g kt psidot=%g deg/s",
                         sl.V_kt[i], sl.psidot_degps[j])
                flags.append((i, j))
            elif cold.feasible and stored.feasible:
                a = np.concatenate([cold.state.as_array(), cold.controls.as_array()])
                b = np.concatenate([stored.state.as_array(), stored.controls.as_array()])
                if np.abs(a - b).max() > state_tol:
                    branches.append((i, j))
    return ColdStartReport(cold_mask, flags, branches)
