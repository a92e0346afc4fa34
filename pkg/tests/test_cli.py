import json

import pytest

from nonautlin.cli import main


def write(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


@pytest.fixture
def scalar(tmp_path):
    return write(tmp_path / "sys.json", {"catalog": "scalar_autonomous", "params": {"lam0": -1}})


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_certify(tmp_path, scalar, capsys):
    code, out, _ = run(capsys, "certify", "--system", scalar, "--out", tmp_path / "o", "--t-max", 10,
                       "--samples", 10)
    assert code == 0
    assert out.count("\n") == 1 and out.startswith("certify:")
    data = json.loads((tmp_path / "o" / "cert.json").read_text())
    assert data["contraction"]["alpha"] >= 0.99
    assert {"growth", "coefficient_bound", "note"} <= set(data)


def test_not_certifiable(tmp_path, capsys):
    sys_path = write(tmp_path / "up.json", {"catalog": "scalar_autonomous", "params": {"lam0": 1}})
    code, out, err = run(capsys, "certify", "--system", sys_path, "--out", tmp_path / "o", "--t-max", 5,
                         "--samples", 5)
    assert code == 3
    assert out == "" and "error" in err


def test_parse_error(tmp_path, capsys):
    sys_path = write(tmp_path / "bad.json", {"dim": 1, "A": [["-1 +* t"]]})
    code, out, err = run(capsys, "certify", "--system", sys_path, "--out", tmp_path / "o")
    assert code == 2
    assert out == "" and "error" in err


def test_missing_file(tmp_path, capsys):
    code, _, err = run(capsys, "certify", "--system", tmp_path / "nope.json", "--out", tmp_path / "o")
    assert code == 2 and "not found" in err


def test_contraction_ratio(tmp_path, scalar, capsys):
    pert = write(tmp_path / "p.json", {"f": ["2*sin(x1)"], "L_f": 2.0, "beta": 0, "K0": 0, "class": "A2"})
    code, out, err = run(capsys, "linearize", "--system", scalar, "--out", tmp_path / "o", "--t-max", 10,
                         "--samples", 10, "--method", "picard", "--perturbation", pert)
    assert code == 4
    assert "K*L_f/alpha" in err and out == ""


def test_empty_lambda_grid(tmp_path, scalar, capsys):
    code, _, _ = run(capsys, "spectrum", "--system", scalar, "--out", tmp_path / "o",
                     "--lambda-min", 0, "--lambda-max", -1)
    assert code == 2


def test_argparse_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["certify"])
    assert exc.value.code == 2


def test_spectrum_files(tmp_path, scalar, capsys):
    code, out, _ = run(capsys, "spectrum", "--system", scalar, "--out", tmp_path / "o", "--t-max", 10,
                       "--samples", 10, "--lambda-min", -2, "--lambda-max", 0, "--step", 0.1)
    assert code == 0 and "1 interval" in out
    rows = (tmp_path / "o" / "spectrum.csv").read_text().splitlines()
    assert len(rows) == 22
    assert json.loads((tmp_path / "o" / "intervals.json").read_text())["intervals"] == [[-1.0, -1.0]]


def test_lyapunov(tmp_path, scalar, capsys):
    code, out, _ = run(capsys, "lyapunov", "--system", scalar, "--out", tmp_path / "o", "--t-max", 10,
                       "--samples", 10, "--kind", "quadratic", "--n-points", 200)
    assert code == 0 and "pass" in out
    data = json.loads((tmp_path / "o" / "lyapunov.json").read_text())
    assert [a["axiom"] for a in data["axioms"]] == ["V1", "V2", "V3"]
    assert all(a["pass"] for a in data["axioms"])


def test_linearize_crossing_points(tmp_path, scalar, capsys):
    pts = tmp_path / "pts.csv"
    pts.write_text("tau,xi1\n0,2\n1,3\n")
    pert = write(tmp_path / "p.json", {"f": ["0.1*exp(-2*t)*sin(x1)"], "L_f": 0.1, "beta": 1, "K0": 0,
                                       "class": "A2"})
    code, _, _ = run(capsys, "linearize", "--system", scalar, "--out", tmp_path / "o", "--t-max", 10,
                     "--samples", 10, "--perturbation", pert, "--points", pts, "--alpha-v", 0.5)
    assert code == 0
    lines = (tmp_path / "o" / "mapped.csv").read_text().splitlines()
    assert lines[0] == "tau,xi1,H1,T"
    # with V = x^2 the crossing time is tau + ln(2 xi^2) / 2
    T = float(lines[1].split(",")[3])
    assert T == pytest.approx(0.5 * __import__("math").log(8.0), abs=1e-8)
    rep = json.loads((tmp_path / "o" / "verify.json").read_text())
    assert rep["method"] == "crossing" and rep["inverse_max"] <= 1e-5


def test_linearize_picard(tmp_path, scalar, capsys):
    pert = write(tmp_path / "p.json", {"f": ["0.5"], "L_f": 0, "beta": 0, "K0": 0.5, "class": "A1"})
    pts = tmp_path / "pts.csv"
    pts.write_text("1,2\n")
    code, _, _ = run(capsys, "linearize", "--system", scalar, "--out", tmp_path / "o", "--t-max", 10,
                     "--samples", 10, "--perturbation", pert, "--points", pts, "--method", "picard")
    assert code == 0
    row = (tmp_path / "o" / "mapped.csv").read_text().splitlines()[1].split(",")
    assert float(row[2]) - 2 == pytest.approx(0.3160603, abs=1e-7)


def test_pipeline_deterministic(tmp_path, capsys):
    sys_path = write(tmp_path / "bv.json", {"catalog": "bv_scalar", "params": {"omega": 3, "a": 1}})
    pert = write(tmp_path / "p.json", {"f": ["0.1*exp(-2*t)*sin(x1)"], "L_f": 0.1, "beta": 1, "K0": 0,
                                       "class": "A2"})
    outs = []
    for k in range(2):
        d = tmp_path / f"run{k}"
        code, out, _ = run(capsys, "pipeline", "--system", sys_path, "--out", d, "--t-max", 10,
                           "--samples", 10, "--perturbation", pert, "--n-points", 3, "--verify-points", 1,
                           "--lambda-min", -5, "--lambda-max", 0, "--step", 0.1)
        assert code == 0, out
        outs.append({p.name: p.read_bytes() for p in sorted(d.iterdir())})
    assert set(outs[0]) == {"cert.json", "spectrum.csv", "intervals.json", "lyapunov.json", "mapped.csv",
                            "verify.json"}
    assert outs[0] == outs[1]


def test_false_class_declaration(tmp_path, scalar, capsys):
    pert = write(tmp_path / "p.json", {"f": ["0.5"], "L_f": 0, "beta": 0, "K0": 0.5, "class": "A2"})
    code, _, err = run(capsys, "linearize", "--system", scalar, "--out", tmp_path / "o", "--t-max", 10,
                       "--samples", 10, "--perturbation", pert, "--method", "picard")
    assert code == 2 and "A2" in err
