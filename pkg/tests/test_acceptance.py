"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``ACn: PASS/FAIL`` line (also collected in the
terminal summary) and then asserts.
"""

import json
import math
import time

import numpy as np
import pytest
from oracles import MARGINAL_BAND, march_verdict

from flightenv.boundary import (
    AILERON,
    STALL,
    THRUST,
    PerformanceQuery,
    extract_boundary,
    factor_sequence,
    gamma_max,
    intersect_envelopes,
    load_factor,
    speed_range,
    stall_speed,
)
from flightenv.cli import main
from flightenv.envelope import GridSpec, boundary_adjacent, cold_start_oracle, mirror_envelope, sweep_slice
from flightenv.failures import FailureSpec
from flightenv.io import data_section, envelope_from_text, envelope_to_text
from flightenv.linear import Stability, linearize, stability
from flightenv.model import state_derivative
from flightenv.trim import TrimTarget, pitch_theta, required_rates, solve_trim
from flightenv.units import DEG, FT, KT

pytestmark = pytest.mark.slow

DESK = GridSpec.desk()
ALTITUDES_FT = (0.0, 10000.0, 20000.0, 30000.0)
_cache = {}


def desk(failure=None, h_ft=0.0, gamma_deg=0.0):
    key = (failure, h_ft, gamma_deg)
    if key not in _cache:
        _cache[key] = sweep_slice(h_ft * FT, gamma_deg * DEG, DESK, failure)
    return _cache[key]


def column(h_ft=0.0, gamma_deg=0.0, V_min=40.0, V_max=220.0, V_step=1.0):
    """Wings-level psidot = 0 column, computed exactly like a sweep's anchor cells."""
    g = GridSpec.desk(V_min=V_min, V_max=V_max, V_step=V_step, psidot_min=0.0, psidot_max=0.0)
    return sweep_slice(h_ft * FT, gamma_deg * DEG, g)


def rudder(lo, hi=None):
    return FailureSpec.from_deg("rudder", lo, hi)


def exceptions_allowed(mismatch, slices):
    """Mismatched cells must all be flagged multi-branch and number at most 1% of boundary-adjacent cells."""
    if not mismatch:
        return True, 0, 0
    flagged = set()
    for sl in slices:
        flagged |= set(cold_start_oracle(sl).flags)
    n_adj = len(boundary_adjacent(slices[0].mask()))
    ok = set(mismatch) <= flagged and len(mismatch) <= 0.01 * n_adj
    return ok, len(flagged), n_adj


def test_ac01_trim_residual(acceptance, nominal_slice, params):
    _cache[(None, 0.0, 0.0)] = nominal_slice
    slices = [nominal_slice, desk(rudder(-30, 10)), desk(rudder(0))]
    worst, count = 0.0, 0
    for sl in slices:
        for row in sl.cells:
            for r in row:
                if r.feasible:
                    f = state_derivative(r.state, r.controls, params)
                    worst = max(worst, float(np.abs(f).max()))
                    count += 1
    ok = count > 0 and worst <= 1e-7
    acceptance("AC1 trim residual", ok, f"{count} feasible cells, max |xdot| = {worst:.2e}")
    assert ok


def test_ac02_closed_forms(acceptance):
    rng = np.random.default_rng(2)
    err_theta = max(abs(pitch_theta(a, 0.0, 0.0, g) - (a + g))
                    for a, g in zip(rng.uniform(-0.1, 0.3, 200), rng.uniform(-0.15, 0.15, 200)))
    rates_zero = all(v == 0.0 for th, ph in zip(rng.uniform(-0.5, 0.5, 50), rng.uniform(-1, 1, 50))
                     for v in required_rates(th, ph, 0.0))
    n30 = load_factor(30 * DEG)
    ok = err_theta <= 1e-12 and rates_zero and abs(n30 - 1.1547) <= 1e-6
    acceptance("AC2 closed forms (pitch, rates, load factor)", ok,
               f"theta err {err_theta:.1e}, rates exact zero {rates_zero}, n(30) = {n30:.8f}")
    assert ok


@pytest.mark.xfail(strict=True, reason="1/sqrt(cos 30 deg) = 1.0745699 lies 3.0e-5 from the quoted "
                                       "1.0746, outside the quoted 1e-6 tolerance")
def test_ac02_stall_speed_ratio(acceptance, params):
    ratio = (stall_speed(PerformanceQuery.from_params(params, phi=30 * DEG))
             / stall_speed(PerformanceQuery.from_params(params)))
    exact = 1.0 / math.sqrt(math.cos(30 * DEG))
    ok = abs(ratio - 1.0746) <= 1e-6
    acceptance("AC2 closed forms (V_St/V_S0 at 30 deg)", ok,
               f"V_St/V_S0 = {ratio:.8f} (exact {exact:.8f}), target 1.0746 +- 1e-6")
    assert abs(ratio - exact) <= 1e-12
    assert ok


def test_ac03_jam_equals_intersection(acceptance):
    t0 = time.perf_counter()
    details, ok = [], True
    for X in (-10, 0, 10):
        jam = desk(rudder(X))
        lo, hi = desk(rudder(-30, X)), desk(rudder(X, 30))
        both = intersect_envelopes(lo, hi).mask()
        mism = [tuple(c) for c in np.argwhere(jam.mask() != both)]
        good, n_flag, n_adj = exceptions_allowed(mism, [jam, lo, hi])
        ok &= good
        details.append(f"X={X:+d}: {len(mism)} mismatches")
    elapsed = time.perf_counter() - t0
    ok &= elapsed <= 600.0
    acceptance("AC3 jam = intersection", ok, "; ".join(details) + f"; {elapsed:.0f} s")
    assert ok


def test_ac04_symmetry(acceptance):
    src = desk(rudder(-30, 10))
    direct = desk(rudder(-10, 30))
    m = mirror_envelope(src)
    mism = [tuple(c) for c in np.argwhere(m.mask() != direct.mask())]
    good, _, _ = exceptions_allowed(mism, [direct, src])
    ok = good and m.failure == direct.failure
    acceptance("AC4 mirror symmetry", ok, f"{len(mism)} mismatches of {m.size} cells")
    assert ok


def test_ac05_nesting(acceptance):
    masks = [desk(None if w == 30 else rudder(-w, w)).mask() for w in (30, 20, 10)] + [desk(rudder(0)).mask()]
    violations = sum(int((inner & ~outer).sum()) for outer, inner in zip(masks, masks[1:]))
    sizes = [int(m.sum()) for m in masks]
    ok = violations == 0
    acceptance("AC5 failure nesting", ok, f"sizes {sizes}, {violations} violations")
    assert ok


def test_ac06_calibration(acceptance):
    lo, hi = speed_range(column(0.0, 0.0))
    ok = abs(lo - 58.0) <= 3.0 and abs(hi - 176.0) <= 5.0
    acceptance("AC6 calibration anchors", ok, f"speed range {lo:g}-{hi:g} kt")
    assert ok


def test_ac07_boundary_structure(acceptance, nominal_slice, params):
    pts = extract_boundary(nominal_slice, params=params)
    seq = factor_sequence(pts, "left")
    seq_ok = seq == [STALL, AILERON, THRUST]
    by_h = [speed_range(column(h, 0.0)) for h in (0.0, 10000.0, 20000.0)]
    by_g = [speed_range(column(0.0, g)) for g in (-5.0, 0.0, 5.0)]
    trends = (all(None not in (a, b) for a, b in zip(by_h, by_h[1:]))
              and all(b[1] <= a[1] for a, b in zip(by_h, by_h[1:]))
              and all(b[0] >= a[0] for a, b in zip(by_h, by_h[1:]))
              and all(b[1] <= a[1] for a, b in zip(by_g, by_g[1:])))
    ok = seq_ok and trends
    acceptance("AC7 boundary structure", ok,
               f"left half {' -> '.join(seq)}; Vmax(h) {[r[1] for r in by_h]}, "
               f"Vmin(h) {[r[0] for r in by_h]}, Vmax(gamma) {[r[1] for r in by_g]}")
    assert ok


def test_ac08_gamma_max(acceptance):
    gammas = np.arange(-5.0, 5.0 + 1e-9, 1.0)
    bad, notes = [], []
    for h_ft in ALTITUDES_FT:
        gm = gamma_max(h_ft * FT) / DEG
        above = [g for g in gammas if g > gm]
        notes.append(f"{h_ft:g} ft: gamma_max {gm:.2f} deg, empty above: {[float(g) for g in above]}")
        for g in gammas:
            if g > gm:
                if desk(None, h_ft, float(g)).mask().any():
                    bad.append(f"{h_ft:g} ft gamma {g:+g} not empty")
            else:
                coarse = column(h_ft, float(g), 60.0, 180.0, 5.0)
                if not coarse.mask().any() and not column(h_ft, float(g)).mask().any():
                    bad.append(f"{h_ft:g} ft gamma {g:+g} empty")
    ok = not bad
    acceptance("AC8 gamma_max consistency", ok, "; ".join(bad or notes))
    assert ok


def test_ac09_linear_oracle(acceptance, params):
    rng = np.random.default_rng(9)
    decided, agree, banded, sampled = 0, 0, 0, 0
    disagreements = []
    while decided < 24 and sampled < 200:
        sampled += 1
        t = TrimTarget(float(rng.choice([0.0, 10000.0])) * FT, rng.uniform(62, 170) * KT,
                       rng.uniform(-3, 1) * DEG, rng.uniform(-10, 10) * DEG)
        r = solve_trim(t, params=params)
        if not r.feasible:
            continue
        verdict, eig = stability(linearize(r.state, r.controls, params))
        top = float(eig.real.max())
        march, rate = march_verdict(r, params, seed=sampled)
        if abs(top) <= MARGINAL_BAND or march == "marginal":
            banded += 1
            continue
        decided += 1
        expected = "decay" if verdict is Stability.STABLE else "growth"
        if march == expected:
            agree += 1
        else:
            disagreements.append((t.V_star / KT, t.psidot_star / DEG, top, rate))
    # second-order step halving at a few trims
    ratios = []
    for V, psd in ((80.0, 4.0), (120.0, -6.0), (150.0, 0.0)):
        r = solve_trim(TrimTarget(0.0, V * KT, 0.0, psd * DEG), params=params)
        mats = [linearize(r.state, r.controls, params, rel_step=1e-2 / 2 ** k, abs_step=1e-3 / 2 ** k).A
                for k in range(3)]
        ratios.append(np.abs(mats[0] - mats[1]).max() / np.abs(mats[1] - mats[2]).max())
    ok = decided >= 20 and agree == decided and all(3.5 <= q <= 4.5 for q in ratios)
    acceptance("AC9 linear-analysis oracle", ok,
               f"{agree}/{decided} agree outside band ({banded} in band); "
               f"halving ratios {[round(float(q), 2) for q in ratios]}"
               + (f"; disagree {disagreements}" if disagreements else ""))
    assert ok


def test_ac10_high_drag(acceptance, nominal_slice):
    sl = desk(rudder(-30, -10))
    mask = sl.mask()
    betas = [abs(sl.cell(i, j).state.beta) / DEG for i, j in np.argwhere(mask)]
    vmax = float(sl.V_kt[np.flatnonzero(mask.any(axis=1))].max())
    vmax0 = float(nominal_slice.V_kt[np.flatnonzero(nominal_slice.mask().any(axis=1))].max())
    ok = bool(betas) and min(betas) > 0.1 and vmax < vmax0
    acceptance("AC10 high-drag law", ok,
               f"min |beta| = {min(betas):.2f} deg, Vmax {vmax:g} < {vmax0:g} kt")
    assert ok


def test_ac11_serialization(acceptance, nominal_slice, tmp_path):
    text = envelope_to_text(nominal_slice)
    back = envelope_from_text(text)
    lossless = envelope_to_text(back) == text and all(
        x == y for ra, rb in zip(back.cells, nominal_slice.cells) for x, y in zip(ra, rb))
    manifest = {"grid": DESK.to_dict(), "failures": [{"surface": "rudder", "LL": -30, "UL": 10}]}
    (tmp_path / "m.json").write_text(json.dumps(manifest))
    outs = []
    for w in (1, 2):
        out = tmp_path / f"w{w}"
        assert main(["envelope", str(tmp_path / "m.json"), "--workers", str(w), "--output-dir", str(out)]) == 0
        outs.append(out)
    names = sorted(p.name for p in outs[0].glob("envelope_*.csv"))
    identical = bool(names) and all(
        data_section(outs[0] / n) == data_section(outs[1] / n)
        and (outs[0] / n).read_bytes() == (outs[1] / n).read_bytes() for n in names)
    ok = lossless and identical
    acceptance("AC11 serialization", ok, f"round trip {'exact' if lossless else 'lossy'}, "
               f"{len(names)} files byte-identical across workers 1/2: {identical}")
    assert ok
