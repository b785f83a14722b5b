import math
import time

import numpy as np
import pytest
from scipy import stats as sps

from kaclab.chain import (
    CHUNK, ChainState, Update, apply_updates, haar_sample, log_grid, run, run_many,
    sample_update, sample_updates, sphere_projection, step, synchronous_couple,
)
from kaclab.lie import TOL_ORTH, check_rotation, geodesic_distance, n_planes, plane_rotation
from kaclab.rng import as_rng, make_rng


def test_update_angle_reduced():
    assert Update(0, 2 * math.pi + 0.25).angle == pytest.approx(0.25)
    assert 0 <= Update(0, -0.1).angle < 2 * math.pi


def test_streams_are_reproducible_and_distinct():
    a = sample_updates(make_rng(42, 0), 3, 50)
    b = sample_updates(make_rng(42, 0), 3, 50)
    c = sample_updates(make_rng(42, 1), 3, 50)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    assert not np.array_equal(a[1], c[1])
    assert sample_update(make_rng(42), 3) == sample_update(make_rng(42), 3)


def test_whole_chunks_do_not_depend_on_request_length():
    long = sample_updates(make_rng(3), 5, CHUNK + 10)
    head = sample_updates(make_rng(3), 5, CHUNK)
    assert np.array_equal(long[0][:CHUNK], head[0])
    assert np.array_equal(long[1][:CHUNK], head[1])


def test_seed_is_mandatory():
    with pytest.raises(ValueError):
        make_rng(None)
    with pytest.raises(TypeError):
        as_rng("seed")


def test_plane_frequencies_and_angle_mean():
    planes, angles = sample_updates(make_rng(7), 4, 10**6)
    counts = np.bincount(planes, minlength=6)
    p = 1 / 6
    sd = math.sqrt(10**6 * p * (1 - p))
    assert np.all(np.abs(counts - 10**6 * p) <= 5 * sd)
    assert sps.chisquare(counts).pvalue > 1e-4
    se = angles.std() / math.sqrt(angles.size)
    assert abs(angles.mean() - math.pi) <= 5 * se
    assert angles.min() >= 0 and angles.max() < 2 * math.pi


# --- step

def test_step_from_identity_and_zero_angle():
    s = step(ChainState(np.eye(5)), Update(3, 0.7))
    np.testing.assert_allclose(s.position, plane_rotation(3, 0.7, 5), atol=1e-16)
    assert s.step_count == 1
    x = haar_sample(5, make_rng(1))
    np.testing.assert_array_equal(step(ChainState(x), Update(2, 0.0)).position, x)


def test_two_steps_compose_angles():
    x = haar_sample(4, make_rng(2))
    s = step(step(ChainState(x), Update(4, 0.3)), Update(4, 1.1))
    np.testing.assert_allclose(s.position, step(ChainState(x), Update(4, 1.4)).position, atol=1e-14)


def test_step_is_left_multiplication():
    x = haar_sample(6, make_rng(3))
    np.testing.assert_allclose(step(ChainState(x), Update(7, 2.2)).position,
                               plane_rotation(7, 2.2, 6) @ x, atol=1e-14)


def test_step_cost_is_linear_in_n():
    ns = [16, 32, 64, 128]
    times = []
    for n in ns:
        state = ChainState(haar_sample(n, make_rng(n)))
        upd = Update(n_planes(n) // 2, 0.4)
        best = math.inf
        for _ in range(5):
            t0 = time.perf_counter()
            for _ in range(300):
                state = step(state, upd)
            best = min(best, (time.perf_counter() - t0) / 300)
        times.append(best)
    fit = sps.linregress(np.log(ns), np.log(times))
    upper = fit.slope + sps.t.ppf(0.975, len(ns) - 2) * fit.stderr
    assert upper < 2.0, (fit.slope, fit.stderr)


# --- run

def test_run_edge_cases():
    x = haar_sample(4, make_rng(4))
    s0 = run(x, 0, make_rng(1))
    np.testing.assert_array_equal(s0.position, x)
    assert s0.step_count == 0
    s1 = run(x, 1, make_rng(1))
    np.testing.assert_array_equal(s1.position, step(ChainState(x), sample_update(make_rng(1), 4)).position)
    with pytest.raises(ValueError):
        run(x, -1, make_rng(1))


def test_run_matches_sequential_steps():
    x = haar_sample(5, make_rng(5))
    planes, angles = sample_updates(make_rng(9), 5, 40)
    s = ChainState(x)
    for p, a in zip(planes, angles):
        s = step(s, Update(int(p), a))
    np.testing.assert_allclose(run(x, 40, make_rng(9)).position, s.position, atol=1e-13)


def test_run_many_equals_run():
    starts = haar_sample(4, make_rng(6), size=3)
    rngs = [make_rng(8, r) for r in range(3)]
    batch = run_many(starts, 5000, rngs)
    for r in range(3):
        np.testing.assert_array_equal(batch[r], run(starts[r], 5000, make_rng(8, r)).position)


def test_long_run_stays_orthogonal():
    s = run(np.eye(6), 30_000, make_rng(10))
    check_rotation(s.position, TOL_ORTH)


def test_long_run_second_moment_is_haar():
    n, reps, t = 4, 200, 10**5
    out = run_many(np.broadcast_to(np.eye(n), (reps, n, n)), t, [make_rng(12, r) for r in range(reps)])
    x = out[:, 0, 0] ** 2
    se = x.std(ddof=1) / math.sqrt(reps)
    assert abs(x.mean() - 1 / n) <= 3 * se


def test_one_step_preserves_haar_moments():
    n, reps = 4, 10**5
    z = haar_sample(n, make_rng(13), size=reps)
    rng = make_rng(14)
    planes = rng.integers(0, n_planes(n), size=(reps, 1))
    angles = rng.random((reps, 1)) * 2 * math.pi
    y = apply_updates(z, planes, angles)
    for p, target in ((1, 0.0), (2, 1 / n)):
        v = y ** p
        se = v.std(axis=0, ddof=1) / math.sqrt(reps)
        assert np.all(np.abs(v.mean(axis=0) - target) <= 5 * se)


# --- sphere projection and Haar sampler

def test_sphere_projection():
    np.testing.assert_array_equal(sphere_projection(ChainState(np.eye(3))), [1, 0, 0])
    for k in range(20):
        v = sphere_projection(ChainState(haar_sample(6, make_rng(15, k))))
        assert abs(np.linalg.norm(v) - 1) <= 1e-10


def test_sphere_projection_long_run_mean():
    reps = 2000
    out = run_many(np.broadcast_to(np.eye(3), (reps, 3, 3)), 200, [make_rng(16, r) for r in range(reps)])
    first = out[:, 0, 0]
    assert abs(first.mean()) <= 3 * first.std(ddof=1) / math.sqrt(reps)


def test_haar_moments_and_determinant():
    n, reps = 5, 10**5
    q = haar_sample(n, make_rng(17), size=reps)
    assert np.all(np.linalg.det(q) > 0)
    for p, target in ((1, 0.0), (2, 1 / n)):
        v = q ** p
        se = v.std(axis=0, ddof=1) / math.sqrt(reps)
        assert np.all(np.abs(v.mean(axis=0) - target) <= 5 * se)


def test_haar_single_is_rotation():
    check_rotation(haar_sample(7, make_rng(18)), 1e-12)


# --- coupling

def test_log_grid():
    assert log_grid(0) == [0]
    assert log_grid(1) == [0, 1]
    assert log_grid(10) == [0, 1, 2, 4, 8, 10]
    assert log_grid(8) == [0, 1, 2, 4, 8]


@pytest.mark.parametrize("mode", ["aligned", "synchronous"])
def test_coalesced_start_stays_together(mode):
    x = haar_sample(4, make_rng(19))
    a, b, trace = synchronous_couple(x, x.copy(), 100, make_rng(20), mode=mode)
    assert all(d == 0.0 for _, d in trace)
    np.testing.assert_array_equal(a.position, b.position)


def test_zero_steps_returns_initial_distance():
    x, y = haar_sample(4, make_rng(21)), haar_sample(4, make_rng(22))
    a, b, trace = synchronous_couple(x, y, 0, make_rng(1))
    assert trace == [(0, geodesic_distance(x, y))]
    np.testing.assert_array_equal(a.position, x)


@pytest.mark.parametrize("mode", ["aligned", "synchronous"])
def test_first_marginal_is_bit_identical_to_run(mode):
    x, y = haar_sample(5, make_rng(23)), haar_sample(5, make_rng(24))
    a, _, _ = synchronous_couple(x, y, 300, make_rng(25), mode=mode)
    np.testing.assert_array_equal(a.position, run(x, 300, make_rng(25)).position)


def test_long_coupling_first_marginal_matches_run_with_reorthonormalization():
    x, y = haar_sample(3, make_rng(26)), haar_sample(3, make_rng(27))
    a, b, _ = synchronous_couple(x, y, 12_000, make_rng(28))
    np.testing.assert_array_equal(a.position, run(x, 12_000, make_rng(28)).position)
    check_rotation(b.position, TOL_ORTH)


def test_pure_synchronous_preserves_distance():
    x, y = haar_sample(4, make_rng(29)), haar_sample(4, make_rng(30))
    _, _, trace = synchronous_couple(x, y, 500, make_rng(31), mode="synchronous")
    d0 = trace[0][1]
    assert max(abs(d - d0) for _, d in trace) <= 1e-10


def test_aligned_coupling_contracts():
    n = 4
    t = math.ceil(20 * n_planes(n) * math.log(n))
    first, last = [], []
    for r in range(50):
        rng = make_rng(32, r)
        x, y = haar_sample(n, rng), haar_sample(n, rng)
        _, _, trace = synchronous_couple(x, y, t, rng)
        first.append(trace[0][1])
        last.append(trace[-1][1])
    assert np.median(last) < np.median(first)


def test_second_marginal_one_step_law():
    # one aligned step from fixed (x, y): Y_1 has the law of a Kac step from y
    n, reps = 3, 20_000
    x, y = haar_sample(n, make_rng(33)), haar_sample(n, make_rng(34))
    coupled = np.stack([synchronous_couple(x, y, 1, make_rng(35, r))[1].position for r in range(reps)])
    plain = np.stack([run(y, 1, make_rng(36, r)).position for r in range(reps)])
    for p in (1, 2):
        d1, d2 = coupled ** p, plain ** p
        se = np.sqrt(d1.var(axis=0, ddof=1) / reps + d2.var(axis=0, ddof=1) / reps)
        assert np.all(np.abs(d1.mean(axis=0) - d2.mean(axis=0)) <= 5 * se + 1e-15)


def test_target_stops_early():
    x, y = haar_sample(3, make_rng(37)), haar_sample(3, make_rng(38))
    a, b, trace = synchronous_couple(x, y, 5000, make_rng(39), target=1e-3)
    assert trace[-1][1] <= 1e-3
    assert a.step_count == trace[-1][0] < 5000


def test_coupling_rejects_bad_input():
    with pytest.raises(ValueError):
        synchronous_couple(np.eye(3), np.eye(4), 1, make_rng(1))
    with pytest.raises(ValueError):
        synchronous_couple(np.eye(3), np.eye(3), 1, make_rng(1), mode="oliveira")
