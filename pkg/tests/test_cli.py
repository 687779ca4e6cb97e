import csv
import json

import numpy as np
import pytest

from flightenv.boundary import thrust_required
from flightenv.cli import main
from flightenv.io import OUTPUT_ENV, read_envelope
from flightenv.model import default_params
from flightenv.units import DEG, KT

GRID = {"V_min": 60.0, "V_max": 180.0, "V_step": 30.0, "psidot_min": -12.0, "psidot_max": 12.0,
        "psidot_step": 6.0, "gamma_min": 0.0, "gamma_max": 0.0, "gamma_step": 1.0,
        "altitudes_ft": [0.0]}


def run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("run")
    manifest = {
        "grid": GRID,
        "failures": [None, {"surface": "rudder", "LL": 0, "UL": 0},
                     {"surface": "rudder", "LL": -30, "UL": 0}, {"surface": "rudder", "LL": 0, "UL": 30}],
        "mirror": True,
        "output_dir": str(d / "out"),
    }
    (d / "m.json").write_text(json.dumps(manifest))
    assert main([ "envelope", str(d / "m.json")]) == 0
    return d


class TestTrim:
    def test_feasible(self, capsys):
        code, out, _ = run(["trim", "--v-kt", "100", "--json"], capsys)
        data = json.loads(out)
        assert code == 0 and data["status"] == "FeasibleStable" and data["xdot_max"] <= 1e-7

    def test_infeasible_is_not_an_error(self, capsys):
        code, out, _ = run(["trim", "--v-kt", "50"], capsys)
        assert code == 0 and "Infeasible(" in out and "AlphaLimit" in out

    def test_bad_failure(self, capsys):
        code, _, err = run(["trim", "--v-kt", "100", "--failure", "rudder:10:-10"], capsys)
        assert code == 2 and "error" in err

    def test_missing_speed(self, capsys):
        assert run(["trim"], capsys)[0] == 2

    def test_altitude_domain(self, capsys):
        assert run(["trim", "--v-kt", "100", "--h-ft", "90000"], capsys)[0] == 2

    def test_linear_dump(self, tmp_path, capsys):
        code, _, _ = run(["trim", "--v-kt", "100", "--failure", "rudder:0",
                          "--linear-dump", str(tmp_path)], capsys)
        assert code == 0
        with open(tmp_path / "B.csv") as fh:
            header = next(csv.reader(fh))
        assert header == ["row", "dth", "de", "da"]
        A = np.loadtxt(tmp_path / "A.csv", delimiter=",", skiprows=1)
        assert A.shape == (8, 9)

    def test_version(self, capsys):
        code, out, _ = run(["--version"], capsys)
        assert code == 0 and "0.1.0" in out


class TestEnvelopeVerb:
    def test_outputs(self, run_dir):
        out = run_dir / "out"
        names = {p.name for p in out.iterdir()}
        for label in ("nominal", "rudder_jam_0", "rudder_m30_0", "rudder_0_30"):
            assert f"envelope_{label}_h0ft_g+0deg.csv" in names
            assert f"boundary_{label}_h0ft_g+0deg.csv" in names
        assert "run.json" in names

    def test_rerun_identical(self, run_dir, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv(OUTPUT_ENV, str(tmp_path))
        m = json.loads((run_dir / "m.json").read_text())
        del m["output_dir"]
        (tmp_path / "m.json").write_text(json.dumps(m))
        assert run(["envelope", str(tmp_path / "m.json"), "--workers", "2"], capsys)[0] == 0
        for p in (run_dir / "out").glob("envelope_*.csv"):
            assert (tmp_path / p.name).read_bytes() == p.read_bytes()

    def test_bad_manifest(self, tmp_path, capsys):
        (tmp_path / "m.json").write_text('{"grid": {"V_step": -1}}')
        assert run(["envelope", str(tmp_path / "m.json")], capsys)[0] == 2
        (tmp_path / "m.json").write_text("{not json")
        assert run(["envelope", str(tmp_path / "m.json")], capsys)[0] == 2


class TestVerify:
    def files(self, run_dir, *labels):
        return [str(run_dir / "out" / f"envelope_{lb}_h0ft_g+0deg.csv") for lb in labels]

    def test_intersection_pass(self, run_dir, capsys):
        code, out, _ = run(["verify", "intersection",
                            *self.files(run_dir, "rudder_jam_0", "rudder_m30_0", "rudder_0_30")], capsys)
        assert code == 0 and json.loads(out)["result"] == "pass"

    def test_intersection_tampered(self, run_dir, tmp_path, capsys):
        jam, lo, hi = self.files(run_dir, "rudder_jam_0", "rudder_m30_0", "rudder_0_30")
        lines = open(jam).read().splitlines()
        k = next(n for n, ln in enumerate(lines) if ",FeasibleStable," in ln)
        V, P = lines[k].split(",")[1], lines[k].split(",")[3]
        lines[k] = lines[k].replace(",FeasibleStable,", ",Infeasible,")
        bad = tmp_path / "jam.csv"
        bad.write_text("\n".join(lines) + "\n")
        code, out, _ = run(["verify", "intersection", str(bad), lo, hi], capsys)
        report = json.loads(out)
        assert code == 1 and report["result"] == "fail"
        assert report["mismatches"] == [{"V_kt": float(V), "psidot_degps": float(P),
                                         "left": False, "right": True}]

    def test_symmetry(self, run_dir, capsys):
        code, _, _ = run(["verify", "symmetry", *self.files(run_dir, "nominal")], capsys)
        assert code == 0
        code, _, _ = run(["verify", "symmetry", *self.files(run_dir, "rudder_m30_0", "rudder_0_30")], capsys)
        assert code == 0

    def test_symmetry_fail(self, run_dir, capsys):
        code, out, _ = run(["verify", "symmetry", *self.files(run_dir, "rudder_m30_0", "rudder_m30_0")],
                           capsys)
        assert code == 1 and json.loads(out)["mismatches"]

    def test_laws(self, run_dir, capsys):
        code, out, _ = run(["verify", "laws", *self.files(run_dir, "nominal")], capsys)
        assert code == 0

    def test_wrong_arity(self, run_dir, capsys):
        assert run(["verify", "intersection", *self.files(run_dir, "nominal")], capsys)[0] == 2

    def test_headerless_file(self, run_dir, tmp_path, capsys):
        src = self.files(run_dir, "nominal")[0]
        body = "".join(ln for ln in open(src) if not ln.startswith("#"))
        (tmp_path / "x.csv").write_text(body)
        assert run(["verify", "symmetry", str(tmp_path / "x.csv")], capsys)[0] == 2


class TestBoundaryAndPlots:
    def test_boundary(self, run_dir, tmp_path, capsys):
        src = str(run_dir / "out" / "envelope_nominal_h0ft_g+0deg.csv")
        assert run(["boundary", src, "-o", str(tmp_path / "b.csv")], capsys)[0] == 0
        rows = list(csv.DictReader(open(tmp_path / "b.csv")))
        ref = list(csv.DictReader(open(run_dir / "out" / "boundary_nominal_h0ft_g+0deg.csv")))
        assert rows == ref and rows

    def test_boundary_params_mismatch(self, run_dir, tmp_path, capsys):
        (tmp_path / "p.json").write_text(json.dumps({"aero": {"CD0": 0.03}}))
        src = str(run_dir / "out" / "envelope_nominal_h0ft_g+0deg.csv")
        assert run(["boundary", src, "--params", str(tmp_path / "p.json")], capsys)[0] == 2

    def test_thrust_curves(self, run_dir, tmp_path, capsys):
        src = str(run_dir / "out" / "envelope_nominal_h0ft_g+0deg.csv")
        out = tmp_path / "t.csv"
        assert run(["plotdata", src, "--kind", "thrust_curves", "-o", str(out)], capsys)[0] == 0
        p = default_params()
        for r in csv.DictReader(open(out)):
            V = float(r["V_kt"]) * KT
            v = float(r["value_deg"]) * DEG
            ref = thrust_required(V, v, 0.0, 0.0, p) if r["family"] == "phi" else \
                thrust_required(V, 0.0, 0.0, 0.0, p, beta=v)
            assert abs(float(r["thrust_required_N"]) - ref) <= 1e-9

    def test_state_traces(self, run_dir, tmp_path, capsys):
        src = str(run_dir / "out" / "envelope_nominal_h0ft_g+0deg.csv")
        out = tmp_path / "s.csv"
        assert run(["plotdata", src, "--kind", "state_traces", "-o", str(out)], capsys)[0] == 0
        rows = list(csv.DictReader(open(out)))
        stall = [float(r["alpha_deg"]) for r in rows if r["factor"] == "StallAlpha"]
        assert stall and max(stall) == pytest.approx(10.5, abs=1e-6)

    @pytest.mark.parametrize("kind", ["envelope", "boundary"])
    def test_other_kinds(self, run_dir, tmp_path, capsys, kind):
        src = str(run_dir / "out" / "envelope_nominal_h0ft_g+0deg.csv")
        out = tmp_path / f"{kind}.csv"
        assert run(["plotdata", src, "--kind", kind, "-o", str(out)], capsys)[0] == 0
        assert len(out.read_text().splitlines()) > 1

    def test_svg(self, run_dir, tmp_path, capsys):
        pytest.importorskip("matplotlib")
        src = str(run_dir / "out" / "envelope_nominal_h0ft_g+0deg.csv")
        out = tmp_path / "e.csv"
        assert run(["plotdata", src, "--kind", "envelope", "-o", str(out), "--svg"], capsys)[0] == 0
        assert out.with_suffix(".svg").read_text().lstrip().startswith("<?xml")

    def test_bad_kind(self, run_dir, tmp_path, capsys):
        src = str(run_dir / "out" / "envelope_nominal_h0ft_g+0deg.csv")
        assert run(["plotdata", src, "--kind", "bogus", "-o", str(tmp_path / "x")], capsys)[0] == 2


def test_mirror_validation_written(run_dir):
    path = run_dir / "out" / "mirror_validation_h0ft.json"
    if path.exists():
        recs = json.loads(path.read_text())
        assert all(s["agree"] for r in recs for s in r["samples"])
    env = read_envelope(run_dir / "out" / "envelope_rudder_0_30_h0ft_g+0deg.csv")
    assert env.failure is not None
