"""Envelope CSV files, boundary reports and run manifests."""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .envelope import EnvelopeSlice, GridSpec
from .failures import FailureSpec
from .model import AircraftState, ControlVector
from .trim import SolverConfig, TrimResult, TrimStatus, TrimTarget
from .units import DEG, FT, KT

MAGIC = "# flightenv envelope"
OUTPUT_ENV = "FLIGHTENV_OUTPUT_DIR"

ENVELOPE_COLUMNS = (
    "h", "V_kt", "gamma_deg", "psidot_degps", "status",
    "alpha_deg", "beta_deg", "phi_deg", "theta_deg", "p", "q", "r",
    "dth", "de_deg", "da_deg", "dr_deg", "residual",
    # exact radian copies, active set and solver bookkeeping
    "alpha", "beta", "phi", "theta", "de", "da", "dr",
    "active", "reason", "iterations", "xdot_max",
)
BOUNDARY_COLUMNS = ("V_kt", "psidot_degps", "factor", "alpha_deg", "phi_deg", "beta_deg",
                    "dth", "de_deg", "da_deg", "dr_deg")


class FormatError(ValueError):
    """File does not follow the expected layout."""


def _num(v: float) -> str:
    return repr(float(v))


def atomic_write(path: str | Path, text: str):
    """Write text so that the file appears complete or not at all."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# --------------------------------------------------------------------------
# envelope files
# --------------------------------------------------------------------------


def envelope_to_text(sl: EnvelopeSlice) -> str:
    meta = {"h_m": sl.h, "gamma_rad": sl.gamma,
            "V_kt": [float(v) for v in sl.V_kt],
            "psidot_degps": [float(v) for v in sl.psidot_degps],
            "failure": None if sl.failure is None else sl.failure.to_dict(),
            "failure_rad": None if sl.failure is None else [sl.failure.LL, sl.failure.UL]}
    prov = dict(sl.provenance)
    prov.setdefault("tool_version", __version__)
    buf = io.StringIO()
    buf.write(MAGIC + "\n")
    buf.write("# provenance " + json.dumps(prov, sort_keys=True) + "\n")
    buf.write("# slice " + json.dumps(meta, sort_keys=True) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ENVELOPE_COLUMNS)
    for i, V in enumerate(sl.V_kt):
        for j, P in enumerate(sl.psidot_degps):
            r = sl.cell(i, j)
            s, c = r.state, r.controls
            w.writerow([
                _num(sl.h), _num(V), _num(sl.gamma / DEG), _num(P), r.status.value,
                _num(s.alpha / DEG), _num(s.beta / DEG), _num(s.phi / DEG), _num(s.theta / DEG),
                _num(s.p), _num(s.q), _num(s.r),
                _num(c.dth), _num(c.de / DEG), _num(c.da / DEG), _num(c.dr / DEG), _num(r.residual),
                _num(s.alpha), _num(s.beta), _num(s.phi), _num(s.theta),
                _num(c.de), _num(c.da), _num(c.dr),
                "|".join(sorted(r.active)), r.reason or "", r.iterations, _num(r.xdot_max),
            ])
    return buf.getvalue()


def write_envelope(sl: EnvelopeSlice, path: str | Path) -> Path:
    atomic_write(path, envelope_to_text(sl))
    return Path(path)


def data_section(path: str | Path) -> str:
    """The record part of an envelope file (everything after the comment header)."""
    with open(path) as fh:
        return "".join(line for line in fh if not line.startswith("#"))


def read_envelope(path: str | Path) -> EnvelopeSlice:
    with open(path) as fh:
        text = fh.read()
    return envelope_from_text(text, str(path))


def envelope_from_text(text: str, name: str = "<text>") -> EnvelopeSlice:
    lines = text.splitlines()
    prov = meta = None
    k = 0
    while k < len(lines) and lines[k].startswith("#"):
        line = lines[k]
        if line.startswith("# provenance "):
            prov = json.loads(line[len("# provenance "):])
        elif line.startswith("# slice "):
            meta = json.loads(line[len("# slice "):])
        k += 1
    if not lines or lines[0] != MAGIC or prov is None or meta is None:
        raise FormatError(f"{name}: missing provenance header")
    rows = list(csv.DictReader(lines[k:]))
    V_axis = np.array(meta["V_kt"], dtype=float)
    P_axis = np.array(meta["psidot_degps"], dtype=float)
    if len(rows) != len(V_axis) * len(P_axis):
        raise FormatError(f"{name}: {len(rows)} records for a {len(V_axis)}x{len(P_axis)} grid")
    failure = None
    if meta["failure"] is not None:
        lo, hi = meta["failure_rad"]
        failure = FailureSpec(meta["failure"]["surface"], lo, hi)
    h, gamma = float(meta["h_m"]), float(meta["gamma_rad"])
    cells = []
    it = iter(rows)
    for V in V_axis:
        row = []
        for P in P_axis:
            rec = next(it)
            if float(rec["V_kt"]) != V or float(rec["psidot_degps"]) != P:
                raise FormatError(f"{name}: records out of grid order")
            row.append(_record_to_trim(rec, h, gamma, V, P))
        cells.append(row)
    return EnvelopeSlice(h, gamma, V_axis, P_axis, cells, failure, prov)


def _record_to_trim(rec: dict, h: float, gamma: float, V_kt: float, P: float) -> TrimResult:
    f = {k: float(rec[k]) for k in ("alpha", "beta", "phi", "theta", "p", "q", "r",
                                    "dth", "de", "da", "dr", "residual", "xdot_max")}
    target = TrimTarget(h, V_kt * KT, gamma, P * DEG)
    state = AircraftState(target.V_star, f["alpha"], f["beta"], f["p"], f["q"], f["r"],
                          f["phi"], f["theta"], h=h)
    return TrimResult(
        target=target, state=state, controls=ControlVector(f["dth"], f["de"], f["da"], f["dr"]),
        residual=f["residual"], status=TrimStatus(rec["status"]),
        active=frozenset(a for a in rec["active"].split("|") if a),
        reason=rec["reason"] or None, iterations=int(rec["iterations"]), xdot_max=f["xdot_max"],
    )


# --------------------------------------------------------------------------
# reports
# --------------------------------------------------------------------------


def boundary_to_text(points: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(BOUNDARY_COLUMNS)
    for p in points:
        s, c = p.trim.state, p.trim.controls
        w.writerow([_num(p.V_kt), _num(p.psidot_degps), p.label, _num(s.alpha / DEG),
                    _num(s.phi / DEG), _num(s.beta / DEG), _num(c.dth), _num(c.de / DEG),
                    _num(c.da / DEG), _num(c.dr / DEG)])
    return buf.getvalue()


def write_json(obj, path: str | Path) -> Path:
    atomic_write(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return Path(path)


def write_rows(path: str | Path, header, rows) -> Path:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_num(v) if isinstance(v, (float, np.floating)) else v for v in row])
    atomic_write(path, buf.getvalue())
    return Path(path)


# --------------------------------------------------------------------------
# run manifests
# --------------------------------------------------------------------------


@dataclass
class RunManifest:
    grid: GridSpec = field(default_factory=GridSpec.desk)
    failures: list = field(default_factory=lambda: [None])
    params_path: str | None = None
    solver: SolverConfig = field(default_factory=SolverConfig)
    output_dir: str = "flightenv-out"
    mirror: bool = False
    validation_samples: int = 3
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.params_path is not None and not Path(self.params_path).is_file():
            raise FileNotFoundError(f"parameter file {self.params_path} not found")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")
        if self.validation_samples < 0:
            raise ValueError("validation_samples must be non-negative")

    def resolved_output_dir(self) -> Path:
        return Path(os.environ.get(OUTPUT_ENV) or self.output_dir)

    def to_dict(self) -> dict:
        return {
            "grid": self.grid.to_dict(),
            "failures": [None if f is None else f.to_dict() for f in self.failures],
            "params_path": self.params_path,
            "solver": self.solver.to_dict(),
            "output_dir": self.output_dir,
            "mirror": self.mirror,
            "validation_samples": self.validation_samples,
            "seed": self.seed,
            "workers": self.workers,
        }

    @classmethod
    def from_dict(cls, data: dict, base_dir: str | Path | None = None) -> "RunManifest":
        known = {"grid", "failures", "params_path", "solver", "output_dir", "mirror",
                 "validation_samples", "seed", "workers"}
        extra = set(data) - known
        if extra:
            raise ValueError(f"unknown manifest keys: {sorted(extra)}")
        params_path = data.get("params_path")
        if params_path is not None and base_dir is not None and not os.path.isabs(params_path):
            params_path = str(Path(base_dir) / params_path)
        return cls(
            grid=GridSpec.from_dict(data.get("grid", {})) if "grid" in data else GridSpec.desk(),
            failures=[None if f is None else FailureSpec.from_dict(f)
                      for f in data.get("failures", [None])],
            params_path=params_path,
            solver=SolverConfig.from_dict(data.get("solver", {})),
            output_dir=data.get("output_dir", "flightenv-out"),
            mirror=bool(data.get("mirror", False)),
            validation_samples=int(data.get("validation_samples", 3)),
            seed=int(data.get("seed", 0)),
            workers=int(data.get("workers", 1)),
        )


def load_manifest(path: str | Path) -> RunManifest:
    with open(path) as fh:
        data = json.load(fh)
    return RunManifest.from_dict(data, base_dir=Path(path).parent)


def case_label(failure: FailureSpec | None) -> str:
    if failure is None:
        return "nominal"

    def fmt(v):
        return ("m" if v < 0 else "") + f"{abs(v):g}"

    lo, hi = failure.window_deg()
    if failure.is_jam:
        return f"{failure.surface}_jam_{fmt(lo)}"
    return f"{failure.surface}_{fmt(lo)}_{fmt(hi)}"


def slice_filename(failure: FailureSpec | None, h: float, gamma: float, kind: str = "envelope") -> str:
    return f"{kind}_{case_label(failure)}_h{round(h / FT):d}ft_g{gamma / DEG:+g}deg.csv"
