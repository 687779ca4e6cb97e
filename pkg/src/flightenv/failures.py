"""Control-surface failure windows (restriction and jam)."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from .model import SURFACES, ConstraintConfig
from .units import DEG

_LATERAL = ("aileron", "rudder")
_EPS = 1e-12


class FailureValidationError(ValueError):
    pass


@dataclass(frozen=True)
class FailureSpec:
    """Deflection window [LL, UL] imposed on one surface.

    Angles are radians (throttle is dimensionless). A jam is the special
    case ``LL == UL``.
    """

    surface: str
    LL: float
    UL: float

    def __post_init__(self):
        if self.surface not in SURFACES:
            raise FailureValidationError(f"unknown surface {self.surface!r}")
        if self.LL > self.UL:
            raise FailureValidationError(
                f"{self.surface} window lower limit {self.LL} above upper limit {self.UL}")

    @classmethod
    def from_deg(cls, surface: str, LL: float, UL: float | None = None) -> "FailureSpec":
        """Build from degrees; a single angle means a jam."""
        if UL is None:
            UL = LL
        if surface == "throttle":
            return cls(surface, float(LL), float(UL))
        return cls(surface, LL * DEG, UL * DEG)

    @property
    def is_jam(self) -> bool:
        return self.LL == self.UL

    @property
    def kind(self) -> str:
        return "jam" if self.is_jam else "restriction"

    def window_deg(self) -> tuple:
        if self.surface == "throttle":
            return (self.LL, self.UL)
        # round away the radian conversion so labels and provenance read cleanly
        return (round(self.LL / DEG, 10), round(self.UL / DEG, 10))

    def mirrored(self) -> "FailureSpec":
        """Failure seen by the left/right mirror image of the aircraft."""
        if self.surface not in _LATERAL:
            return self
        return FailureSpec(self.surface, -self.UL, -self.LL)

    def label(self) -> str:
        lo, hi = self.window_deg()
        if self.is_jam:
            return f"{self.surface} jam {lo:g}"
        return f"{self.surface} [{lo:g}, {hi:g}]"

    def to_dict(self) -> dict:
        lo, hi = self.window_deg()
        return {"surface": self.surface, "LL": lo, "UL": hi}

    @classmethod
    def from_dict(cls, data: dict) -> "FailureSpec":
        return cls.from_deg(data["surface"], data["LL"], data.get("UL", data["LL"]))


def apply_failure(limits: ConstraintConfig, failure: FailureSpec | None) -> ConstraintConfig:
    """Replace the failed surface's window by the failure window."""
    if failure is None:
        return limits
    lo, hi = limits.window(failure.surface)
    if failure.LL < lo - _EPS or failure.UL > hi + _EPS:
        raise FailureValidationError(
            f"{failure.label()} lies outside the nominal {failure.surface} window")
    return dataclasses.replace(limits, **{failure.surface: (failure.LL, failure.UL)})
