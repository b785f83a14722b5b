import os
import subprocess
import sys

import pytest

from kaclab.cli import main
from kaclab.experiments import REGISTRY, run_experiment
from kaclab.records import ExperimentConfig, ExperimentRecord, UnknownExperiment
from kaclab.report import report


def run_cli(*args):
    return main([str(a) for a in args])


def test_list_names(capsys):
    assert run_cli("list") == 0
    names = capsys.readouterr().out.split()
    assert "two-stage" in names and "spectrum-event" in names and len(names) == len(REGISTRY)


def test_run_pass_writes_record(tmp_path, capsys):
    code = run_cli("run", "lie-roundtrip", "--n", 6, "--seed", 1, "--out", tmp_path)
    assert code == 0
    out = capsys.readouterr().out
    assert "verdict: pass" in out
    rec = ExperimentRecord.from_json((tmp_path / "lie-roundtrip-1.json").read_text())
    assert rec.verdict == "pass" and rec.config["n"] == 6 and rec.build
    assert rec.timing["seconds"] < 10


def test_run_fail_exit_code(tmp_path):
    # an impossible tolerance makes an honest check fail
    code = run_cli("run", "isotropy", "--n", 3, "--seed", 1, "--replicas", 2, "--tol", "isotropy=0",
                   "--out", tmp_path)
    assert code == 1
    assert ExperimentRecord.from_json((tmp_path / "isotropy-1.json").read_text()).verdict == "fail"


def test_unknown_experiment_no_output(tmp_path, capsys):
    out = tmp_path / "out"
    assert run_cli("run", "nope", "--seed", 1, "--out", out) == 2
    assert "error[unknown-experiment]" in capsys.readouterr().err
    assert not out.exists()
    with pytest.raises(UnknownExperiment):
        run_experiment(ExperimentConfig("nope", seed=1, out_dir=str(out)))


@pytest.mark.parametrize("args, code", [
    (["run", "bch", "--n", 1, "--seed", 1], "invalid-config"),
    (["run", "bch", "--c1", 9, "--seed", 1], "invalid-config"),
    (["run", "bch"], "invalid-config"),
    (["run", "bch", "--seed", 1, "--param", "oops"], "invalid-config"),
    (["run", "two-stage", "--n", 11, "--seed", 1], "invalid-config"),
])
def test_invalid_config_codes(args, code, capsys):
    assert run_cli(*args) == 2
    assert f"error[{code}]" in capsys.readouterr().err


def test_unwritable_output_dir(tmp_path, capsys):
    f = tmp_path / "file"
    f.write_text("")
    assert run_cli("run", "isotropy", "--n", 3, "--seed", 1, "--out", f / "x") == 2
    assert "error[output-unwritable]" in capsys.readouterr().err


def test_argparse_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        run_cli("run", "bch", "--n", "notanint")
    assert exc.value.code == 2


def test_config_file_and_flag_override(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text(f"[experiment]\nn = 3\nseed = 4\nreplicas = 2\nout = {tmp_path / 'o'}\n")
    assert run_cli("run", "isotropy", "--config", cfg, "--n", 4) == 0
    rec = ExperimentRecord.from_json((tmp_path / "o" / "isotropy-4.json").read_text())
    assert rec.config["n"] == 4 and rec.config["num_replicas"] == 2


def test_regime_refusal_exit_3(tmp_path, capsys):
    code = run_cli("run", "two-stage", "--n", 3, "--seed", 1, "--samples", 1000,
                   "--param", "inject_h=0.5", "--out", tmp_path)
    assert code == 3
    rec = ExperimentRecord.from_json((tmp_path / "two-stage-1.json").read_text())
    assert rec.verdict == "refused" and rec.status == "regime-violation"


def test_console_script_module_entry(tmp_path):
    res = subprocess.run([sys.executable, "-m", "kaclab", "run", "isotropy", "--n", "3", "--seed", "2",
                          "--replicas", "3", "--out", str(tmp_path), "--quiet"],
                         capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert (tmp_path / "isotropy-2.json").exists()


# --- report

def test_report_empty_dir(tmp_path, capsys):
    assert report(tmp_path) == 0
    assert "no records" in capsys.readouterr().out


def test_report_table_and_svg(tmp_path, capsys):
    run_cli("run", "spectrum-event", "--n", 4, "--seed", 1, "--replicas", 30, "--out", tmp_path)
    run_cli("run", "contraction", "--n", 3, "--seed", 1, "--replicas", 4, "--out", tmp_path)
    capsys.readouterr()
    assert run_cli("report", tmp_path, "--svg") == 0
    out = capsys.readouterr().out
    assert "spectrum-event" in out and "PASS" in out
    svg = (tmp_path / "spectrum-event-1.svg").read_text()
    assert svg.lstrip().startswith("<?xml") and "<svg" in svg
    assert (tmp_path / "contraction-1.svg").exists()


def test_report_skips_corrupt(tmp_path, capsys):
    run_cli("run", "isotropy", "--n", 3, "--seed", 1, "--replicas", 2, "--out", tmp_path)
    (tmp_path / "broken-1.json").write_text("{not json")
    capsys.readouterr()
    assert report(tmp_path) == 0
    cap = capsys.readouterr()
    assert "warning" in cap.err and "isotropy" in cap.out
    os.remove(tmp_path / "isotropy-1.json")
    assert report(tmp_path) == 1
