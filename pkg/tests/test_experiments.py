
import numpy as np
import pytest

from kaclab.experiments import REGISTRY, run_experiment
from kaclab.records import ExperimentConfig, InvalidConfig


def run(name, **kw):
    params = kw.pop("params", {})
    rec, cols = run_experiment(ExperimentConfig(name, params=params, **kw), write=False)
    return rec, cols


def test_registry_codes_unique():
    assert len(REGISTRY) == 12


def test_same_seed_same_metrics():
    a, ca = run("spectrum-event", n=4, seed=5, num_replicas=20)
    b, cb = run("spectrum-event", n=4, seed=5, num_replicas=20)
    assert a.metrics == b.metrics
    np.testing.assert_array_equal(ca["deviation"], cb["deviation"])


def test_worker_count_does_not_change_result():
    a, _ = run("spectrum-event", n=4, seed=5, num_replicas=12, workers=1)
    b, _ = run("spectrum-event", n=4, seed=5, num_replicas=12, workers=2)
    assert a.metrics == b.metrics and a.reports == b.reports


def test_different_seeds_differ():
    a, _ = run("spectrum-event", n=4, seed=5, num_replicas=12)
    b, _ = run("spectrum-event", n=4, seed=6, num_replicas=12)
    assert a.metrics != b.metrics


def test_record_carries_config_and_timing():
    rec, _ = run("isotropy", n=3, seed=2, num_replicas=3)
    assert rec.config["experiment"] == "isotropy" and rec.config["seed"] == 2
    assert "seconds" in rec.timing and "seconds" not in rec.metrics
    assert rec.verdict == "pass"


def test_two_stage_identical_starts_is_exact():
    rec, cols = run("two-stage", n=3, seed=1, num_samples=2000,
                    params={"start": "same", "n_perm": 20, "n_boot": 20})
    s = rec.metrics["surrogate"]
    assert rec.metrics["h_norm"] == 0.0 and s["mismatch"] == 0.0 and s["exact_gaussian_tv"] == 0.0
    assert rec.metrics["stage1"]["reached"] and rec.status == "ok"
    assert rec.metrics["translate"]["shift_term"] == 0.0
    assert s["max_met_group_distance"] == 0.0


def test_two_stage_met_pairs_close_on_group():
    # met pairs share log coordinates; the group gap is the commutator term only
    rec, _ = run("two-stage", n=3, seed=2, num_samples=2000,
                 params={"inject_h": 1 / 81, "n_perm": 20, "n_boot": 20})
    s = rec.metrics["surrogate"]
    assert 0 < s["mismatch"] < 1
    assert 0 < s["max_met_group_distance"] < 0.5 * rec.metrics["h_hat_norm"]


def test_two_stage_big_offset_refused():
    rec, _ = run("two-stage", n=3, seed=1, num_samples=1000, params={"inject_h": 0.5})
    assert rec.verdict == "refused" and rec.status == "regime-violation"
    assert "reason" in rec.metrics


def test_two_stage_step_cap_marks_incomplete():
    rec, cols = run("two-stage", n=3, seed=1, num_samples=2000,
                    params={"step_cap": 5, "n_perm": 20, "n_boot": 20})
    assert rec.status == "stage1-incomplete"
    assert rec.metrics["stage1"]["steps"] == 5 and not rec.metrics["stage1"]["reached"]
    assert rec.metrics["h_source"] == "injected"
    assert cols["step"][-1] == 5


def test_two_stage_rejects_bad_start_and_n():
    with pytest.raises(InvalidConfig):
        run("two-stage", n=3, seed=1, params={"start": "sideways"})
    with pytest.raises(InvalidConfig):
        run("two-stage", n=2, seed=1)


def test_contraction_columns_and_decay():
    rec, cols = run("contraction", n=4, seed=3, num_replicas=6)
    assert set(cols) == {"replica", "step", "distance"}
    assert rec.verdict == "pass"
    d = cols["distance"]
    assert np.all(d >= 0) and np.all(np.isfinite(d))


def test_quadratic_columns():
    rec, cols = run("quadratic", n=3, seed=0, params={"directions": 3, "norms": 6})
    assert set(cols) == {"m", "delta_norm", "remainder_norm"}
    assert len(set(cols["m"].tolist())) == 3


def test_bch_spread_reported():
    rec, _ = run("bch", n=4, seed=0, params={"n_min": 3, "pairs": 40})
    assert rec.verdict == "pass"
    assert set(rec.metrics["constants"]) == {"3", "4"}
    assert all(len(v) == 3 and min(v) > 0 for v in rec.metrics["constants"].values())


def test_lie_roundtrip_records_log_ratios():
    rec, _ = run("lie-roundtrip", n=5, seed=0, params={"n_min": 2, "cases": 100})
    lo, hi = rec.metrics["log_over_dist"]
    assert abs(lo - 1) < 1e-10 and abs(hi - 1) < 1e-10
    lo, hi = rec.metrics["log_over_ambient"]
    assert 1 - 1e-12 <= lo <= hi < 1.2
