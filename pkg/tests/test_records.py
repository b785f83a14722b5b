import json
import math
import os

import numpy as np
import pytest

from kaclab.records import (
    CSV_HEADER, ExperimentConfig, ExperimentRecord, InvalidConfig, OutputUnwritable,
    atomic_write, format_csv, jsonable, prepare_output_dir, read_config_file, read_csv,
    write_outputs,
)
from kaclab.stats import TestReport


def make_record(**kw):
    base = dict(config=ExperimentConfig("isotropy", seed=3).to_dict(), build="x", started="s",
                finished="f", metrics={"a": np.float64(1.5), "b": (1, 2), "c": math.nan,
                                       "d": {"e": np.int64(4)}},
                reports=[TestReport("r", 0.1, 0.2, 10, 3), TestReport("p", 0.0, 0.05, 5, p_value=0.5)],
                verdict="pass")
    base.update(kw)
    return ExperimentRecord(**base)


@pytest.mark.parametrize("kw", [dict(n=1), dict(c1=10), dict(seed=None), dict(num_samples=0),
                                dict(n="x")])
def test_config_invariants(kw):
    args = dict(experiment="isotropy", seed=1)
    args.update(kw)
    with pytest.raises(InvalidConfig):
        ExperimentConfig(**args)


def test_config_param_and_tol():
    cfg = ExperimentConfig("bch", seed=1, params={"pairs": "12"}, tolerances={"factor": 3})
    assert cfg.param("pairs", 5, int) == 12
    assert cfg.param("missing", 7) == 7
    assert cfg.tol("factor", 2.0) == 3.0 and cfg.tol("other", 0.5) == 0.5
    with pytest.raises(InvalidConfig):
        ExperimentConfig("bch", seed=1, params={"pairs": "x"}).param("pairs", 1, int)
    assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg


def test_record_roundtrip():
    rec = make_record()
    assert rec.metrics == {"a": 1.5, "b": [1, 2], "c": None, "d": {"e": 4}}
    again = ExperimentRecord.from_json(rec.to_json())
    assert again == rec
    assert again.to_json() == rec.to_json()


def test_record_rejects_inconsistent_report():
    d = json.loads(make_record().to_json())
    d["reports"][0]["verdict"] = "fail"
    with pytest.raises(ValueError):
        ExperimentRecord.from_json(json.dumps(d))


def test_roundtrip_with_nan_statistic():
    rec = make_record(reports=[TestReport("deg", math.nan, 0.05, 10, reason="degenerate")], verdict="fail")
    again = ExperimentRecord.from_json(rec.to_json())
    assert again.reports[0].reason == "degenerate" and math.isnan(again.reports[0].statistic)


def test_jsonable():
    assert jsonable({"x": np.arange(3), 1: np.bool_(True)}) == {"x": [0, 1, 2], "1": True}


def test_csv_roundtrip(tmp_path):
    cols = {"trial": np.arange(4), "value": np.array([0.1, 1e-300, -2.5, 3.0])}
    text = format_csv(cols)
    assert text.splitlines()[0] == CSV_HEADER
    p = tmp_path / "a.csv"
    p.write_text(text)
    back = read_csv(p)
    np.testing.assert_array_equal(back["value"], cols["value"])
    np.testing.assert_array_equal(back["trial"], cols["trial"])
    with pytest.raises(ValueError):
        format_csv({"a": [1, 2], "b": [1]})
    (tmp_path / "bad.csv").write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        read_csv(tmp_path / "bad.csv")


def test_atomic_write_leaves_no_temp_on_failure(tmp_path):
    target = tmp_path / "r.json"
    atomic_write(target, "old")

    with pytest.raises(TypeError):
        atomic_write(target, 123)  # write() rejects non-text
    assert target.read_text() == "old"
    assert [p.name for p in tmp_path.iterdir()] == ["r.json"]


def test_write_outputs_names(tmp_path):
    rec = make_record()
    j, c = write_outputs(tmp_path, rec, {"x": [1, 2]})
    assert j.name == "isotropy-3.json" and c.name == "isotropy-3.csv"
    assert ExperimentRecord.from_json(j.read_text()) == rec
    j2, c2 = write_outputs(tmp_path / "", rec, None)
    assert c2 is None


def test_output_dir_checks(tmp_path):
    assert prepare_output_dir(tmp_path / "new" / "deep").is_dir()
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(OutputUnwritable):
        prepare_output_dir(blocker / "sub")
    if os.geteuid() != 0:  # root ignores permission bits
        ro = tmp_path / "ro"
        ro.mkdir()
        ro.chmod(0o500)
        with pytest.raises(OutputUnwritable):
            prepare_output_dir(ro)


def test_read_config_file(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text("[experiment]\nn = 5\nseed = 9\nreplicas = 7\npairs = 3\n"
                 "[tolerances]\nfactor = 2.5\n[params]\nscale = 0.02\n")
    d = read_config_file(p)
    assert d["n"] == "5" and d["seed"] == "9" and d["num_replicas"] == "7"
    assert d["params"] == {"pairs": "3", "scale": "0.02"}
    assert d["tolerances"] == {"factor": 2.5}
    with pytest.raises(InvalidConfig):
        read_config_file(tmp_path / "missing.ini")
    (tmp_path / "broken.ini").write_text("no section header\n")
    with pytest.raises(InvalidConfig):
        read_config_file(tmp_path / "broken.ini")


def test_read_config_inline_comments(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text("[experiment]\nn = 6\nreplicas = 100      ; alias\nout = results  # alias\n")
    d = read_config_file(p)
    assert d["n"] == "6" and d["num_replicas"] == "100" and d["out_dir"] == "results"
