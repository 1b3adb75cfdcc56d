import csv

import pytest

from flmpc.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_certify_preset_defaults(capsys):
    code, out, _ = run(capsys, "certify")
    assert code == 0
    assert "r_hat   = 1\n" in out and "[[16.  0.]" in out
    assert "margin (paper form) = 0.00142131" in out
    assert "certificate (paper form): PASS" in out


def test_certify_weak_gain(capsys):
    code, out, _ = run(capsys, "certify", "--K", "0.1")
    assert code == 2 and "FAIL" in out


def test_certify_large_disturbance(capsys):
    code, out, _ = run(capsys, "certify", "--rd", "1e6", "--form", "exact")
    assert code == 2 and "certificate (exact form): FAIL" in out
    # the paper form's disturbance term scales like 1/r_d and does not catch this
    assert run(capsys, "certify", "--rd", "1e6")[0] == 0


def test_generate(capsys, tmp_path):
    out_csv = tmp_path / "oval.csv"
    code, out, _ = run(capsys, "generate", "--scenario", "oval", "--ts", "0.01", "-o", str(out_csv))
    assert code == 0 and "r_d = " in out
    lines = out_csv.read_text().splitlines()
    assert lines[0].startswith("# r_d=") and lines[1] == "# ts=0.01"
    t = [float(r["t"]) for r in csv.DictReader(lines[2:])]
    assert sum(1 for v in t if v < 1.0 - 1e-9) == 100


def test_generate_missing_file(capsys, tmp_path):
    code, _, err = run(capsys, "generate", "--waypoints", str(tmp_path / "missing.csv"))
    assert code == 1 and "missing.csv" in err


def test_unknown_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["run", "--bogus"])
    assert exc.value.code != 0
    assert "usage" in capsys.readouterr().err


def test_invalid_value(capsys):
    code, _, err = run(capsys, "certify", "--K", "1,2,3")
    assert code == 1 and "K" in err


def test_run_both_modes(capsys, tmp_path):
    code, out, _ = run(capsys, "run", "--mode", "both", "--output-dir", str(tmp_path))
    assert code == 0
    rows = list(csv.DictReader((tmp_path / "metrics.csv").open()))
    assert [r["run"] for r in rows] == ["oval_0.6_dual_mode", "oval_0.6_always_qp"]
    assert {"ISE_xy", "ITSE_xy", "ISE_theta", "ITSE_theta", "ISE_phi", "ITSE_phi"} <= set(rows[0])
    assert all(r["infeasible_events"] == "0" and r["input_violations"] == "0" for r in rows)
    assert (tmp_path / "trace_oval_0.6_dual_mode.csv").is_file()


def test_run_far_start_always_qp(capsys, tmp_path):
    code, _, _ = run(capsys, "run", "--mode", "always_qp", "--offset", "0.3",
                     "--output-dir", str(tmp_path))
    assert code == 0
    row = next(csv.DictReader((tmp_path / "metrics.csv").open()))
    assert row["input_violations"] == "0" and row["infeasible_events"] == "0"


def test_run_infeasible_start(capsys, tmp_path):
    code, _, err = run(capsys, "run", "--offset", "1.0", "--output-dir", str(tmp_path))
    assert code == 2 and "infeasible" in err


def test_dump_config_round_trip(capsys, tmp_path):
    code, text, _ = run(capsys, "run", "--dump-config", "--offset", "0.1", "--mode", "always_qp",
                        "--output-dir", str(tmp_path / "a"))
    assert code == 0 and "offset = 0.1" in text
    cfg = tmp_path / "cfg.ini"
    cfg.write_text(text)
    assert run(capsys, "run", "--dump-config", "--config", str(cfg))[1] == text
    run(capsys, "run", "--offset", "0.1", "--mode", "always_qp", "--output-dir", str(tmp_path / "a"))
    run(capsys, "run", "--config", str(cfg), "--output-dir", str(tmp_path / "b"))

    def deterministic(path):
        return [{k: v for k, v in row.items() if k != "solve_time"}
                for row in csv.DictReader(path.open())]

    name = "trace_oval_0.6_always_qp.csv"
    assert deterministic(tmp_path / "a" / name) == deterministic(tmp_path / "b" / name)


def test_missing_config(capsys, tmp_path):
    code, _, err = run(capsys, "certify", "--config", str(tmp_path / "none.ini"))
    assert code == 1 and "none.ini" in err


def test_parallel_runs(capsys, tmp_path):
    code, _, _ = run(capsys, "run", "--scenarios", "all", "--parallel", "2",
                     "--output-dir", str(tmp_path))
    assert code == 0
    rows = list(csv.DictReader((tmp_path / "metrics.csv").open()))
    assert len(rows) == 2


def test_bench(capsys, tmp_path):
    code, out, _ = run(capsys, "bench", "--mode", "both", "--repetitions", "1",
                       "--output-dir", str(tmp_path))
    assert code == 0
    rows = list(csv.DictReader((tmp_path / "timing.csv").open()))
    assert [r["mode"] for r in rows] == ["dual_mode", "always_qp"]
    assert all(float(r["avg_ms"]) > 0 for r in rows)
