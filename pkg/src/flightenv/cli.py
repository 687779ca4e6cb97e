"""Command-line interface: trim, envelope, boundary, verify and plotdata."""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from .boundary import (
    PerformanceQuery,
    extract_boundary,
    intersect_envelopes,
    refine_to_limit,
    separation_report,
    speed_range,
    stall_speed,
    thrust_required,
)
from .envelope import Envelope3D, GridMismatchError, mirror_envelope, sweep_3d, validate_mirror
from .failures import FailureSpec, FailureValidationError
from .io import (
    OUTPUT_ENV,
    FormatError,
    atomic_write,
    boundary_to_text,
    case_label,
    load_manifest,
    read_envelope,
    slice_filename,
    write_envelope,
    write_json,
    write_rows,
)
from .linear import linearize
from .model import DomainError, load_params, thrust_available
from .trim import TrimTarget, solve_trim
from .units import DEG, FT, KT

EXIT_OK, EXIT_CHECK_FAILED, EXIT_VALIDATION, EXIT_INTERNAL = 0, 1, 2, 3

log = logging.getLogger("flightenv")


class CheckFailed(Exception):
    pass


def parse_failure(text: str | None) -> FailureSpec | None:
    """``surface:LL:UL`` (degrees) or ``surface:X`` for a jam."""
    if not text:
        return None
    parts = text.split(":")
    if len(parts) not in (2, 3):
        raise click.BadParameter("failure must look like surface:LL:UL or surface:X")
    try:
        values = [float(v) for v in parts[1:]]
    except ValueError as exc:
        raise click.BadParameter(f"bad angle in {text!r}") from exc
    return FailureSpec.from_deg(parts[0], *values)


def _params(path):
    return load_params(path)


def _check_params(sl, params, name):
    if sl.provenance.get("params_hash") != params.digest():
        raise FormatError(f"{name} was computed with a different parameter set")


@click.group()
@click.version_option(__version__)
@click.option("-v", "--verbose", count=True, help="More logging.")
def cli(verbose):
    """Maneuvering flight envelopes of a surrogate transport aircraft."""
    logging.basicConfig(level=logging.WARNING - 10 * verbose, format="%(levelname)s %(message)s")


# --------------------------------------------------------------------------
# trim
# --------------------------------------------------------------------------


@cli.command()
@click.option("--h-ft", type=float, default=0.0, show_default=True, help="Altitude (ft).")
@click.option("--v-kt", type=float, required=True, help="Airspeed (kt).")
@click.option("--gamma-deg", type=float, default=0.0, show_default=True, help="Path angle (deg).")
@click.option("--psidot-degps", type=float, default=0.0, show_default=True, help="Turn rate (deg/s).")
@click.option("--failure", default=None, help="surface:LL:UL or surface:X (deg).")
@click.option("--params", "params_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--linear-dump", type=click.Path(file_okay=False), default=None,
              help="Directory for A.csv and B.csv of the linearized model.")
@click.option("--json", "as_json", is_flag=True, help="Machine-readable output.")
def trim(h_ft, v_kt, gamma_deg, psidot_degps, failure, params_path, linear_dump, as_json):
    """Solve one trim point."""
    params = _params(params_path)
    fail = parse_failure(failure)
    target = TrimTarget(h_ft * FT, v_kt * KT, gamma_deg * DEG, psidot_degps * DEG)
    r = solve_trim(target, fail, params)
    s, c = r.state, r.controls
    out = {
        "status": r.describe(),
        "residual": r.residual,
        "xdot_max": r.xdot_max,
        "active": sorted(r.active),
        "state": {"V_kt": s.V / KT, "alpha_deg": s.alpha / DEG, "beta_deg": s.beta / DEG,
                  "p": s.p, "q": s.q, "r": s.r, "phi_deg": s.phi / DEG, "theta_deg": s.theta / DEG},
        "controls": {"dth": c.dth, "de_deg": c.de / DEG, "da_deg": c.da / DEG, "dr_deg": c.dr / DEG},
    }
    if as_json:
        click.echo(json.dumps(out, indent=2))
    else:
        click.echo(f"status   {out['status']}")
        click.echo(f"residual {r.residual:.3e}  max|xdot| {r.xdot_max:.3e}")
        click.echo("active   " + (", ".join(out["active"]) or "-"))
        click.echo("state    " + "  ".join(f"{k}={v:.6g}" for k, v in out["state"].items()))
        click.echo("controls " + "  ".join(f"{k}={v:.6g}" for k, v in out["controls"].items()))
    if linear_dump:
        if not r.feasible:
            raise click.UsageError("no linear model for an infeasible trim")
        m = linearize(s, c, params, fail)
        d = Path(linear_dump)
        write_rows(d / "A.csv", ["row", *("V", "alpha", "beta", "p", "q", "r", "phi", "theta")],
                   [[k, *m.A[k]] for k in range(8)])
        write_rows(d / "B.csv", ["row", *m.controls], [[k, *m.B[k]] for k in range(8)])


# --------------------------------------------------------------------------
# envelope
# --------------------------------------------------------------------------


@cli.command()
@click.argument("manifest", type=click.Path(exists=True, dir_okay=False))
@click.option("--workers", type=int, default=None, help="Override the manifest's parallelism bound.")
@click.option("--output-dir", type=click.Path(file_okay=False), default=None,
              help=f"Override the output directory (also ${OUTPUT_ENV}).")
def envelope(manifest, workers, output_dir):
    """Sweep the envelopes described by a JSON run manifest."""
    man = load_manifest(manifest)
    if workers is not None:
        if workers < 1:
            raise click.BadParameter("workers must be at least 1")
        man.workers = workers
    out = Path(output_dir) if output_dir else man.resolved_output_dir()
    params = _params(man.params_path)
    run_envelopes(man, params, out)
    click.echo(f"wrote {out}")


def run_envelopes(man, params, out: Path) -> dict:
    """Sweep every (failure, altitude) case and write envelope, boundary and separation files."""
    written = {}
    nominal = {}
    cases = list(man.failures)
    for h_ft in man.grid.altitudes_ft:
        h = h_ft * FT
        envs = {}
        for fail in cases:
            envs[fail] = sweep_3d(h, man.grid, fail, params, man.solver, workers=man.workers)
        if None not in envs:
            nominal[h] = sweep_3d(h, man.grid, None, params, man.solver, workers=man.workers)
        else:
            nominal[h] = envs[None]
        validation = []
        if man.mirror:
            for fail in list(envs):
                if fail is None or fail.mirrored() == fail or fail.mirrored() in envs:
                    continue
                mirrored = [mirror_envelope(sl) for sl in envs[fail].slices]
                for k, sl in enumerate(mirrored):
                    recs = validate_mirror(sl, params, man.solver, man.validation_samples,
                                           seed=man.seed + k)
                    validation.append({"case": case_label(sl.failure), "h_ft": h_ft,
                                       "gamma_deg": sl.gamma_deg, "samples": recs})
                envs[fail.mirrored()] = Envelope3D(h, mirrored)
        for fail, env3 in envs.items():
            for k, sl in enumerate(env3.slices):
                p = write_envelope(sl, out / slice_filename(fail, h, sl.gamma))
                pts = extract_boundary(sl, params=params)
                atomic_write(out / slice_filename(fail, h, sl.gamma, "boundary"), boundary_to_text(pts))
                sep = separation_report(sl, nominal[h].slices[k])
                write_json(sep, out / slice_filename(fail, h, sl.gamma, "separation").replace(".csv", ".json"))
                written[str(p)] = int(sl.mask().sum())
        if validation:
            write_json(validation, out / f"mirror_validation_h{round(h_ft):d}ft.json")
    write_json({"manifest": man.to_dict(), "outputs": written}, out / "run.json")
    return written


# --------------------------------------------------------------------------
# boundary
# --------------------------------------------------------------------------


@cli.command()
@click.argument("envelope_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--params", "params_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("-o", "--output", type=click.Path(dir_okay=False), default=None)
def boundary(envelope_file, params_path, output):
    """Boundary walk with limiting factors of one envelope file."""
    params = _params(params_path)
    sl = read_envelope(envelope_file)
    _check_params(sl, params, envelope_file)
    pts = extract_boundary(sl, params=params)
    text = boundary_to_text(pts)
    if output:
        atomic_write(output, text)
    else:
        click.echo(text, nl=False)


# --------------------------------------------------------------------------
# verify
# --------------------------------------------------------------------------


def _diff_cells(a, b) -> list:
    ma, mb = a.mask(), b.mask()
    return [{"V_kt": float(a.V_kt[i]), "psidot_degps": float(a.psidot_degps[j]),
             "left": bool(ma[i, j]), "right": bool(mb[i, j])}
            for i, j in np.argwhere(ma != mb)]


@cli.command()
@click.argument("kind", type=click.Choice(["intersection", "symmetry", "laws"]))
@click.argument("files", nargs=-1, type=click.Path(exists=True, dir_okay=False))
@click.option("--params", "params_path", type=click.Path(exists=True, dir_okay=False), default=None)
def verify(kind, files, params_path):
    """Check a structural law on envelope files.

    \b
    intersection JAM R_LOWER R_UPPER   jam mask equals the intersection of restrictions
    symmetry A [B]                     mirror of A equals B (A itself if B is omitted)
    laws FILE...                       stall-speed grid law and speed-range trends
    """
    slices = [read_envelope(f) for f in files]
    report = {"kind": kind, "files": list(files)}
    if kind == "intersection":
        if len(slices) != 3:
            raise click.UsageError("intersection needs JAM R_LOWER R_UPPER")
        jam, lo, hi = slices
        both = intersect_envelopes(lo, hi)
        jam.check_grid(both)
        report["mismatches"] = _diff_cells(jam, both)
    elif kind == "symmetry":
        if len(slices) not in (1, 2):
            raise click.UsageError("symmetry needs one or two files")
        a = slices[0]
        b = slices[1] if len(slices) == 2 else a
        m = mirror_envelope(a)
        m.check_grid(b)
        report["mismatches"] = _diff_cells(m, b)
    else:
        params = _params(params_path)
        report["mismatches"] = laws_report(slices, params)
    ok = not report["mismatches"]
    report["result"] = "pass" if ok else "fail"
    click.echo(json.dumps(report, indent=2))
    if not ok:
        raise CheckFailed()


def laws_report(slices, params) -> list:
    """Violations of the stall-speed grid law and of the speed-range trends."""
    bad = []
    for sl in slices:
        if not np.isclose(sl.psidot_degps, 0.0).any():
            continue
        rng = speed_range(sl, 0.0)
        if rng is None:
            continue
        i = int(np.flatnonzero(np.isclose(sl.V_kt, rng[0]))[0])
        j = int(np.flatnonzero(np.isclose(sl.psidot_degps, 0.0))[0])
        trim = sl.cell(i, j)
        dV = float(sl.V_kt[1] - sl.V_kt[0]) if len(sl.V_kt) > 1 else 0.0
        vs = stall_speed(PerformanceQuery.from_params(params, sl.h, trim.state.phi)) / KT
        # the grid law only applies where stall, not the grid edge, sets the minimum
        if rng[0] > sl.V_kt[0] and abs(rng[0] - vs) > dV + 1e-9:
            bad.append({"law": "stall_speed", "h_ft": sl.h_ft, "gamma_deg": sl.gamma_deg,
                        "V_min_kt": rng[0], "stall_speed_kt": vs})
    groups = {}
    for sl in slices:
        key = json.dumps(sl.provenance.get("failure"), sort_keys=True)
        groups.setdefault(key, []).append(sl)
    for group in groups.values():
        ranges = [(sl.h, sl.gamma, speed_range(sl, 0.0)) for sl in group
                  if np.isclose(sl.psidot_degps, 0.0).any()]
        ranges = [r for r in ranges if r[2] is not None]
        for h1, g1, r1 in ranges:
            for h2, g2, r2 in ranges:
                if g1 == g2 and h2 > h1:
                    if r2[1] > r1[1]:
                        bad.append({"law": "vmax_altitude", "h1_ft": h1 / FT, "h2_ft": h2 / FT,
                                    "gamma_deg": g1 / DEG})
                    if r2[0] < r1[0]:
                        bad.append({"law": "vmin_altitude", "h1_ft": h1 / FT, "h2_ft": h2 / FT,
                                    "gamma_deg": g1 / DEG})
                if h1 == h2 and g2 > g1 and r2[1] > r1[1]:
                    bad.append({"law": "vmax_gamma", "h_ft": h1 / FT,
                                "gamma1_deg": g1 / DEG, "gamma2_deg": g2 / DEG})
    return bad


# --------------------------------------------------------------------------
# plotdata
# --------------------------------------------------------------------------


@cli.command()
@click.argument("envelope_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--kind", type=click.Choice(["envelope", "boundary", "thrust_curves", "state_traces"]),
              required=True)
@click.option("-o", "--output", type=click.Path(dir_okay=False), required=True)
@click.option("--params", "params_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--svg", is_flag=True, help="Also render an SVG next to the data (needs matplotlib).")
def plotdata(envelope_file, kind, output, params_path, svg):
    """Emit plot-ready columnar data from an envelope file."""
    params = _params(params_path)
    sl = read_envelope(envelope_file)
    header, rows = plot_rows(sl, kind, params)
    write_rows(output, header, rows)
    if svg:
        render_svg(kind, header, rows, Path(output).with_suffix(".svg"))


def plot_rows(sl, kind: str, params):
    if kind == "envelope":
        mask = sl.mask()
        status = sl.status_table()
        rows = [[float(sl.psidot_degps[j]), float(sl.V_kt[i]), status[i, j], int(mask[i, j])]
                for i in range(sl.shape[0]) for j in range(sl.shape[1])]
        return ["psidot_degps", "V_kt", "status", "member"], rows
    if kind == "boundary":
        pts = extract_boundary(sl, params=params)
        rows = [[k, p.psidot_degps, p.V_kt, p.label] for k, p in enumerate(pts)]
        return ["order", "psidot_degps", "V_kt", "factor"], rows
    if kind == "state_traces":
        # trims refined from each boundary cell out to the limit it is held by
        pts = extract_boundary(sl, params=params)
        rows = []
        for k, p in enumerate(pts):
            lim = refine_to_limit(p, sl, params)
            s, c = lim.state, lim.controls
            T = thrust_available(sl.h, s.V, c.dth, params.prop)
            rows.append([k, p.V_kt, p.psidot_degps, p.label, s.V / KT,
                         lim.target.psidot_star / DEG, s.alpha / DEG, T, s.phi / DEG,
                         s.beta / DEG, c.da / DEG, c.dr / DEG, c.de / DEG, c.dth])
        return ["order", "V_kt", "psidot_degps", "factor", "limit_V_kt", "limit_psidot_degps",
                "alpha_deg", "thrust_N", "phi_deg", "beta_deg", "da_deg", "dr_deg", "de_deg",
                "dth"], rows
    # thrust_curves: phi- and beta-constant required thrust plus available thrust
    rows = []
    for V_kt in np.arange(40.0, 200.0 + 1e-9, 2.0):
        V = V_kt * KT
        Ta = thrust_available(sl.h, V, 1.0, params.prop)
        for phi_deg in (0.0, 10.0, 20.0, 30.0):
            rows.append([V_kt, "phi", phi_deg, thrust_required(V, phi_deg * DEG, sl.gamma, sl.h, params), Ta])
        for beta_deg in (5.0, 10.0, 15.0):
            rows.append([V_kt, "beta", beta_deg,
                         thrust_required(V, 0.0, sl.gamma, sl.h, params, beta=beta_deg * DEG), Ta])
    return ["V_kt", "family", "value_deg", "thrust_required_N", "thrust_available_N"], rows


def render_svg(kind, header, rows, path: Path):
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError as exc:
        raise click.UsageError("--svg needs matplotlib (pip install .[plot])") from exc
    fig, ax = plt.subplots(figsize=(6, 5))
    if kind == "envelope":
        pts = [(r[0], r[1]) for r in rows if r[3]]
        ax.scatter(*zip(*pts), s=6)
        ax.set_xlabel("turn rate (deg/s)")
        ax.set_ylabel("V (kt)")
    elif kind == "boundary":
        for label in sorted({r[3] for r in rows}):
            sel = [(r[1], r[2]) for r in rows if r[3] == label]
            ax.scatter(*zip(*sel), s=10, label=label)
        ax.legend(fontsize=7)
        ax.set_xlabel("turn rate (deg/s)")
        ax.set_ylabel("V (kt)")
    elif kind == "state_traces":
        ax.plot([r[4] for r in rows], [r[6] for r in rows], ".")
        ax.set_xlabel("V (kt)")
        ax.set_ylabel("alpha (deg)")
    else:
        for fam, val in sorted({(r[1], r[2]) for r in rows}):
            sel = [r for r in rows if r[1] == fam and r[2] == val]
            ax.plot([r[0] for r in sel], [r[3] for r in sel], label=f"{fam}={val:g}")
        first = [r for r in rows if r[1] == "phi" and r[2] == 0.0]
        ax.plot([r[0] for r in first], [r[4] for r in first], "k--", label="available")
        ax.legend(fontsize=7)
        ax.set_xlabel("V (kt)")
        ax.set_ylabel("thrust (N)")
    fig.savefig(path)
    plt.close(fig)


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------


def main(argv=None) -> int:
    try:
        cli.main(args=argv, prog_name="flightenv", standalone_mode=False)
    except CheckFailed:
        return EXIT_CHECK_FAILED
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return EXIT_INTERNAL
    except click.ClickException as exc:
        exc.show()
        return EXIT_VALIDATION
    except (FailureValidationError, FormatError, GridMismatchError, DomainError,
            FileNotFoundError, ValueError, json.JSONDecodeError) as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        click.echo(f"internal error: {exc}", err=True)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
