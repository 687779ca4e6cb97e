"""Linearization about a trim point, eigenvalue stability and controllability."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass

import numpy as np

from .failures import FailureSpec
from .model import (
    CONTROL_NAMES,
    SURFACES,
    AircraftParams,
    AircraftState,
    ControlVector,
    DomainError,
    _derivative,
    isa_density,
)
from .trim import TrimResult, TrimStatus

log = logging.getLogger(__name__)

EPS_EIG = 1e-8  # 1/s
REL_STEP = 1e-5
ABS_STEP = 1e-7
TRIM_TOL = 1e-6


class LinearizationError(DomainError):
    pass


class Stability(str, enum.Enum):
    STABLE = "Stable"
    MARGINAL = "Marginal"
    UNSTABLE = "Unstable"


@dataclass(frozen=True)
class LinearModel:
    A: np.ndarray
    B: np.ndarray
    x_ref: np.ndarray
    u_ref: np.ndarray
    controls: tuple  # names of the B columns

    def __post_init__(self):
        if self.A.shape != (8, 8) or self.B.shape != (8, len(self.controls)):
            raise ValueError("inconsistent linear model dimensions")
        if not (np.isfinite(self.A).all() and np.isfinite(self.B).all()):
            raise LinearizationError("non-finite Jacobian entries")


def _steps(v: np.ndarray, rel: float, floor: float) -> np.ndarray:
    return np.maximum(rel * np.abs(v), floor)


def _column(fun, v, i, step, retries=4):
    """Central difference of ``fun`` along coordinate i, shrinking on domain exits."""
    for _ in range(retries + 1):
        vp, vm = v.copy(), v.copy()
        vp[i] += step
        vm[i] -= step
        try:
            return (fun(vp) - fun(vm)) / (2.0 * step)
        except DomainError:
            step *= 0.1
    raise LinearizationError(f"perturbation of component {i} leaves the model domain")


def linearize(state: AircraftState, controls: ControlVector, params: AircraftParams,
              failure: FailureSpec | None = None, rel_step: float = REL_STEP,
              abs_step: float = ABS_STEP, check_trim: bool = True) -> LinearModel:
    """Jacobians A = df/dx and B = df/du by central differences.

    A jammed surface contributes no column to B.
    """
    rho = isa_density(state.h)
    x0 = state.as_array()
    u0 = controls.as_array()

    def fx(x):
        return np.array(_derivative(tuple(x), tuple(u0), rho, params))

    def fu(u):
        return np.array(_derivative(tuple(x0), tuple(u), rho, params))

    if check_trim:
        f0 = fx(x0)
        if np.abs(f0).max() > TRIM_TOL:
            raise LinearizationError(f"not a trim point: max |xdot| = {np.abs(f0).max():.3e}")

    hx = _steps(x0, rel_step, abs_step)
    A = np.column_stack([_column(fx, x0, i, hx[i]) for i in range(8)])

    keep = [i for i, s in enumerate(SURFACES)
            if not (failure is not None and failure.surface == s and failure.is_jam)]
    hu = _steps(u0, rel_step, abs_step)
    B = np.column_stack([_column(fu, u0, i, hu[i]) for i in keep]) if keep else np.zeros((8, 0))
    return LinearModel(A, B, x0, u0, tuple(CONTROL_NAMES[i] for i in keep))


def stability(model: LinearModel, eps: float = EPS_EIG):
    """Return (Stability, eigenvalues) from the spectrum of A."""
    try:
        eig = np.linalg.eigvals(model.A)
    except np.linalg.LinAlgError as exc:
        raise LinearizationError("eigenvalue computation failed") from exc
    top = float(eig.real.max())
    if eps / 10.0 <= abs(top) <= eps * 10.0:
        log.info("max eigenvalue real part %.3e lies within a decade of the marginal threshold", top)
    if top < -eps:
        verdict = Stability.STABLE
    elif top <= eps:
        verdict = Stability.MARGINAL
    else:
        verdict = Stability.UNSTABLE
    return verdict, eig


def controllability_matrix(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    blocks = [B]
    for _ in range(A.shape[0] - 1):
        blocks.append(A @ blocks[-1])
    return np.hstack(blocks)


def controllability_rank(model: LinearModel, tol_scale: float = 8.0) -> int:
    """Numerical rank of [B AB ... A^7 B]; singular values below sigma_max*tol_scale*eps drop."""
    if model.B.size == 0:
        return 0
    C = controllability_matrix(model.A, model.B)
    sv = np.linalg.svd(C, compute_uv=False)
    if sv.size == 0 or sv[0] == 0.0:
        return 0
    return int((sv > sv[0] * tol_scale * np.finfo(float).eps).sum())


def classify(trim: TrimResult, params: AircraftParams, failure: FailureSpec | None = None) -> TrimStatus:
    """Refine a converged trim into stable / unstable-controllable / unstable-uncontrollable."""
    if not trim.status.converged:
        raise ValueError("classification needs a converged trim")
    model = linearize(trim.state, trim.controls, params, failure)
    verdict, _ = stability(model)
    if verdict is Stability.STABLE:
        return TrimStatus.STABLE
    return refine_status(verdict, controllability_rank(model))


def refine_status(verdict: Stability, rank: int) -> TrimStatus:
    """Stable trims belong to the envelope; others only when fully controllable."""
    if verdict is Stability.STABLE:
        return TrimStatus.STABLE
    if rank == 8:
        return TrimStatus.UNSTABLE_CONTROLLABLE
    return TrimStatus.UNSTABLE_UNCONTROLLABLE
