import math
import subprocess
import sys

import pytest

from orthant_ld.cli import main, parse_grid
from orthant_ld.model import load_model


def run(args, capsys):
    code = main([str(a) for a in args])
    out = capsys.readouterr()
    return code, out.out, out.err


def rows(text):
    lines = text.strip().splitlines()
    head = lines[0].split(",")
    return [dict(zip(head, l.split(","))) for l in lines[1:]]


def test_grid_parsing():
    assert parse_grid("0:0.5:2").tolist() == [0.0, 0.5, 1.0, 1.5, 2.0]
    assert parse_grid("1.0").tolist() == [1.0]
    assert parse_grid("0:0.1:0.3").tolist() == pytest.approx([0, 0.1, 0.2, 0.3])


def test_validate(model_dir, capsys):
    code, out, _ = run(["validate", model_dir / "mm1.model"], capsys)
    assert code == 0
    assert rows(out)[0]["connected"] == "true"


def test_rate_row(model_dir, capsys):
    code, out, _ = run(["rate", model_dir / "mm1.model", "--face", "1", "--v", "1.0"], capsys)
    assert code == 0
    r = rows(out)[0]
    assert float(r["rate"]) == pytest.approx(math.log(2), abs=1e-12)
    assert r["converged"] == "true"


def test_lambda_trace(model_dir, capsys):
    code, out, _ = run(["lambda", model_dir / "mm1.model", "--face", "empty", "--alpha", "--kmax", "200"], capsys)
    assert code == 0
    trace = rows(out)
    assert [int(r["m"]) for r in trace][-1] == 200
    assert trace[-1]["converged"] == "true"
    assert abs(float(trace[-1]["lambda"])) < 1e-12


def test_lambda_alpha_sweep(model_dir, capsys):
    code, out, _ = run(["lambda", model_dir / "tandem.model", "--face", "1", "--alpha", "0:0.5:1", "--kmax", "8"], capsys)
    assert code == 0
    assert out.splitlines()[0] == "alpha_1,m,lambda,converged"
    assert len(rows(out)) == 3 * 3


def test_pathcost_and_refine(model_dir, tmp_path, capsys):
    p = tmp_path / "p.csv"
    p.write_text("t,x1\n0,1\n2,3\n")
    code, out, err = run(["pathcost", model_dir / "mm1.model", "--path", p], capsys)
    assert code == 0 and float(rows(out)[0]["cost"]) == pytest.approx(2 * math.log(2), abs=1e-10)
    assert "total cost" in err
    code, out, _ = run(["pathcost", model_dir / "mm1.model", "--path", p, "--refine", "1,2"], capsys)
    assert [r["grid"] for r in rows(out)] == ["1", "2"]


def test_tube_and_trajectory(model_dir, tmp_path, capsys):
    p = tmp_path / "p.csv"
    p.write_text("t,x1\n0,1\n1,2\n")
    traj = tmp_path / "traj.csv"
    args = ["tube", model_dir / "mm1.model", "--path", p, "--delta", "0.5", "--n", "1", "--reps", "2000",
            "--seed", "4", "--constrain-face", "1"]
    code, out, _ = run(args + ["--trajectory", traj], capsys)
    assert code == 0 and rows(out)[0]["method"] == "direct"
    assert traj.read_text().splitlines()[0] == "t,x1"
    code, out2, _ = run(args + ["--method", "twisted"], capsys)
    assert code == 0 and rows(out2)[0]["method"] == "twisted"


def test_seed_is_mandatory(model_dir, tmp_path):
    with pytest.raises(SystemExit) as info:
        main(["tube", str(model_dir / "mm1.model"), "--path", "x", "--delta", "1", "--n", "1", "--reps", "1"])
    assert info.value.code == 2


def test_ldcheck_deterministic_output(model_dir, tmp_path):
    outs = []
    for k in range(2):
        f = tmp_path / f"ld{k}.csv"
        assert main(["ldcheck", str(model_dir / "mm1.model"), "--x", "1", "--v", "0.5", "--T", "0.5", "--n", "20,40",
                     "--delta", "0.05", "--reps", "500", "--seed", "9", "--output", str(f)]) == 0
        outs.append(f.read_bytes())
    assert outs[0] == outs[1]
    assert outs[0].decode().splitlines()[0] == "n,method,reps,hits,p_hat,log_over_n,target,stderr"


def test_dump_round_trip(model_dir, tmp_path, capsys):
    d = tmp_path / "dump.model"
    assert run(["validate", model_dir / "tandem.model", "--dump", d], capsys)[0] == 0
    assert load_model(d) == load_model(model_dir / "tandem.model")


@pytest.mark.parametrize(
    "text, code",
    [("N 1\nfoo\n", 3), ("N 1\nmeasure 1\n2 : 1\nrange 1\n", 3)],
)
def test_parse_error_exit(tmp_path, capsys, text, code):
    f = tmp_path / "bad.model"
    f.write_text(text)
    rc, _, err = run(["validate", f], capsys)
    assert rc == code and err.startswith("error: line")


def test_module_error_codes(model_dir, tmp_path, capsys):
    p = tmp_path / "p.csv"
    p.write_text("t,x1,x2\n0,1,1\n1,1.5,1\n")
    rc, _, err = run(["tube", model_dir / "tandem.model", "--path", p, "--delta", "0.2", "--n", "40", "--reps", "5",
                      "--seed", "1", "--constrain-face", "1", "--method", "twisted", "--radius", "8"], capsys)
    assert rc == 9 and err.startswith("error:")
    rc, _, _ = run(["rate", model_dir / "mm1.model", "--face", "3", "--v", "1"], capsys)
    assert rc == 3
    rc, _, _ = run(["tube", model_dir / "mm1.model", "--path", tmp_path / "missing.csv", "--delta", "1", "--n", "1",
                    "--reps", "1", "--seed", "1"], capsys)
    assert rc == 12


def test_console_script(model_dir):
    res = subprocess.run([sys.executable, "-m", "orthant_ld.cli", "validate", str(model_dir / "mm1.model")],
                         capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("box_radius,")


def test_negative_grid_with_equals(model_dir, capsys):
    code, out, _ = run(["rate", model_dir / "mm1.model", "--face", "1", "--v=-1:1:1"], capsys)
    assert code == 0
    assert [float(r["rate"]) for r in rows(out)] == pytest.approx([0.0, 3 - 2 * math.sqrt(2), math.log(2)], abs=1e-10)
