import json

import numpy as np
import pytest

from lrpolicy import cli
from lrpolicy.errors import NumericError
from lrpolicy.simlab import PRESETS, draw_sample

MAPPING = "outcome: y\ntreatment: d\ncovariates: [x1, x2]\nparental_outcome: parent\ncircumstances: [x1]\n"


def write_sample(tmp_path, y=None, d=None, n=200, rep=0):
    s = draw_sample(PRESETS["reference_shifted"], n, rep)
    data = s.data
    y = data.y if y is None else y
    d = data.d if d is None else d
    cols = np.column_stack([y, d, data.x, data.x1])
    rows = ["y,d,x1,x2,parent"] + [",".join(repr(float(v)) if k != 1 else str(int(v)) for k, v in enumerate(r))
                                    for r in cols]
    path = tmp_path / "sample.csv"
    path.write_text("\n".join(rows) + "\n")
    mapping = tmp_path / "map.yaml"
    mapping.write_text(MAPPING)
    return str(path), str(mapping)


def run(argv, capsys):
    code = cli.main(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def records(text):
    return [json.loads(line) for line in text.splitlines() if line.strip()]


def test_report_from_file(tmp_path, capsys):
    data, mapping = write_sample(tmp_path)
    code, out, _ = run(["report", "--data", data, "--mapping", mapping, "--json"], capsys)
    assert code == 0
    recs = records(out)
    assert recs[0]["record"] == "config" and recs[0]["config"]["data"] == data
    rep = recs[1]
    assert rep["n"] == 200 and 0 < rep["gini"] < 1 and 0 <= rep["iop_ratio"] <= 1
    assert -1 <= rep["kendall_tau"] <= 1
    assert all(r["config_hash"] == recs[0]["config_hash"] and r["seed"] == 0 for r in recs)


def test_report_degenerate_outcome(tmp_path, capsys):
    data, mapping = write_sample(tmp_path, y=np.full(200, 3.0))
    code, out, _ = run(["report", "--data", data, "--mapping", mapping, "--json"], capsys)
    assert code == 0
    rep = records(out)[1]
    assert rep["gini"] == 0.0
    assert rep["iop"] == pytest.approx(0.0, abs=1e-12)
    assert rep["ate"] == pytest.approx(0.0, abs=1e-12)


def test_report_reference_ate():
    out = cli.Emitter(cli.build_config("report", {}, {"dgp": "reference", "n": 2000, "seed": 1}))
    cli.cmd_report(out.cfg, out)
    rep = out.records[1]
    assert abs(rep["ate"] - 0.4) < 3 * rep["ate_se"]
    assert rep["gini"] is None  # reference outcomes can be negative


def test_table_output(tmp_path, capsys):
    data, mapping = write_sample(tmp_path)
    code, out, _ = run(["report", "--data", data, "--mapping", mapping], capsys)
    assert code == 0 and "ATE" in out and "IOp/G" in out


def test_optimize_comparison_rows(capsys, tmp_path):
    target = tmp_path / "opt.jsonl"
    code, out, _ = run(["optimize", "--dgp", "kendall", "--n", "240", "--family", "additive,kendall_tau",
                        "--folds", "3", "--grid", "quantiles:4", "--out", str(target)], capsys)
    assert code == 0
    assert "optimal" in out and "treat-all" in out and "<=" in out
    recs = records(target.read_text())
    for fam in ("additive", "kendall_tau"):
        rows = {r["rule"]: r for r in recs if r["record"] == "policy" and r["family"] == fam}
        assert set(rows) == {"optimal", "treat-none", "treat-all"}
        assert rows["optimal"]["welfare"] >= max(rows["treat-none"]["welfare"], rows["treat-all"]["welfare"])
        assert rows["treat-none"]["share_treated"] == 0.0 and rows["treat-all"]["share_treated"] == 1.0
        if fam == "kendall_tau":
            assert all(r["welfare"] <= 0 for r in rows.values())
    assert any(r["record"] == "diagnostics" for r in recs)


def test_optimize_all_favoring_treatment(tmp_path, capsys):
    s = draw_sample(PRESETS["reference_shifted"], 200, 0)
    y = s.data.y + 50.0 * s.data.d
    data, mapping = write_sample(tmp_path, y=y)
    code, out, _ = run(["optimize", "--data", data, "--mapping", mapping, "--family", "additive", "--depth", "1",
                        "--folds", "3", "--json"], capsys)
    assert code == 0
    opt = [r for r in records(out) if r["record"] == "policy" and r["rule"] == "optimal"][0]
    assert opt["share_treated"] == 1.0


def test_simulate_rows_and_rerun_bytes(tmp_path, capsys):
    files = []
    for k in range(2):
        target = tmp_path / f"sim{k}.jsonl"
        code, _, _ = run(["simulate", "--dgp", "reference", "--family", "additive", "--n-list", "100,200",
                          "--reps", "1", "--mc-draws", "10000", "--depth", "1", "--out", str(target)], capsys)
        assert code == 0
        files.append(target.read_bytes())
    assert files[0] == files[1]
    rows = [r for r in records(files[0].decode()) if r["record"] == "regret"]
    assert [r["n"] for r in rows] == [100, 200]


def test_optimize_byte_identical_across_threads(tmp_path, capsys):
    blobs = []
    for threads in ("1", "3", "1"):
        target = tmp_path / f"t{threads}_{len(blobs)}.jsonl"
        code, _, _ = run(["optimize", "--dgp", "reference", "--n", "150", "--family", "gini,iop_gini",
                          "--folds", "3", "--threads", threads, "--out", str(target)], capsys)
        assert code == 0
        blobs.append(target.read_bytes())
    assert blobs[0] == blobs[1] == blobs[2]


def test_probe_command(capsys):
    code, out, _ = run(["probe", "--dgp", "reference_shifted", "--family", "atkinson_iop", "--n", "200",
                        "--reps", "2", "--json"], capsys)
    assert code == 0
    rec = [r for r in records(out) if r["record"] == "probe"][0]
    assert rec["reps"] == 2 and len(rec["slopes_orthogonal"]) == 2


def test_config_file_with_flag_override(tmp_path, capsys):
    cfg = tmp_path / "run.yaml"
    cfg.write_text("dgp: reference\nn: 300\nseed: 4\nfamily: additive\n")
    code, out, _ = run(["report", "--config", str(cfg), "--seed", "7", "--json"], capsys)
    assert code == 0
    resolved = records(out)[0]["config"]
    assert resolved["n"] == 300 and resolved["seed"] == 7 and resolved["dgp"] == "reference"


def test_hash_ignores_runtime_keys():
    a = cli.build_config("report", {}, {"dgp": "reference", "threads": 1})
    b = cli.build_config("report", {}, {"dgp": "reference", "threads": 4, "out": "x.jsonl", "json": True})
    c = cli.build_config("report", {}, {"dgp": "reference", "seed": 1})
    assert a.config_hash() == b.config_hash() != c.config_hash()


@pytest.mark.parametrize("argv", [
    ["report"],
    ["report", "--dgp", "reference", "--family", "welfare"],
    ["report", "--dgp", "reference", "--trim", "0.7"],
    ["simulate", "--family", "additive"],
    ["report", "--dgp", "no_such_preset"],
])
def test_config_errors_exit_2(argv, capsys):
    code, _, err = run(argv, capsys)
    assert code == 2 and "ConfigError" in err


def test_unknown_config_key_exit_2(tmp_path, capsys):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text("dgp: reference\nbogus: 1\n")
    assert run(["report", "--config", str(cfg)], capsys)[0] == 2


def test_data_error_exit_3(tmp_path, capsys):
    d = draw_sample(PRESETS["reference"], 200, 0).data.d.copy()
    d[5] = 2
    data, mapping = write_sample(tmp_path, d=d)
    code, _, err = run(["report", "--data", data, "--mapping", mapping], capsys)
    assert code == 3 and "row" in err


def test_estimation_error_exit_4(tmp_path, capsys):
    d = np.ones(200, int)
    d[0] = 0
    data, mapping = write_sample(tmp_path, d=d)
    code, _, err = run(["report", "--data", data, "--mapping", mapping], capsys)
    assert code == 4 and "EstimationError" in err


def test_numeric_error_exit_5(tmp_path, capsys, monkeypatch):
    def boom(_):
        raise NumericError("forced")

    monkeypatch.setattr(cli, "gini_index", boom)
    data, mapping = write_sample(tmp_path)
    assert run(["report", "--data", data, "--mapping", mapping], capsys)[0] == 5


def test_argparse_usage_error_exit_2(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["optimize", "--depth", "two"])
    assert exc.value.code == 2
