"""Kac's walk on SO(n): update sampling, row-pair steps, runs and couplings.

A step left-multiplies by a plane rotation, which only touches two rows, so a
step costs O(n).  Replicas are simulated as a batch along a leading axis.
"""
from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np

from .lie import (
    geodesic_distance,
    n_planes,
    orthonormalize,
    plane_of,
    plane_pairs,
)
from .rng import as_rng

TWO_PI = 2.0 * math.pi

#: Draws are made in fixed-size chunks so the update stream of a generator
#: does not depend on the number of steps requested later.
CHUNK = 4096

#: Runs longer than this re-orthonormalize every ``REORTH_EVERY`` steps.
REORTH_AFTER = 10_000
REORTH_EVERY = 1_000


@dataclass(frozen=True)
class Update:
    plane: int
    angle: float

    def __post_init__(self):
        object.__setattr__(self, "angle", float(self.angle) % TWO_PI)


@dataclass(frozen=True)
class ChainState:
    position: np.ndarray
    step_count: int = 0

    @property
    def n(self) -> int:
        return self.position.shape[0]


def sample_updates(rng, n: int, t: int) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``t`` updates as ``(planes, angles)`` arrays.

    Planes are uniform on ``0..N-1`` and angles uniform on ``[0, 2 pi)``.
    """
    rng = as_rng(rng)
    N = n_planes(n)
    planes = np.empty(t, dtype=np.intp)
    angles = np.empty(t)
    for lo in range(0, t, CHUNK):
        k = min(CHUNK, t - lo)
        planes[lo:lo + k] = rng.integers(0, N, size=k)
        angles[lo:lo + k] = rng.random(k) * TWO_PI
    return planes, angles


def sample_update(rng, n: int) -> Update:
    planes, angles = sample_updates(rng, n, 1)
    return Update(int(planes[0]), float(angles[0]))


def _rotate_rows(x: np.ndarray, a, b, c, s) -> None:
    """In place: rows (a, b) of each matrix in the batch ``x`` get rotated."""
    idx = np.arange(x.shape[0])
    xa = x[idx, a]
    xb = x[idx, b]
    c = np.asarray(c)[:, None]
    s = np.asarray(s)[:, None]
    x[idx, a] = c * xa + s * xb
    x[idx, b] = c * xb - s * xa


def step(state: ChainState, upd: Update) -> ChainState:
    """One Kac step ``X <- R(i, theta) X``."""
    a, b = plane_of(upd.plane, state.n)
    x = state.position.copy()
    c, s = math.cos(upd.angle), math.sin(upd.angle)
    xa = x[a].copy()
    x[a] = c * xa + s * x[b]
    x[b] = c * x[b] - s * xa
    return ChainState(x, state.step_count + 1)


def _apply_inplace(out: np.ndarray, planes, angles, done: int, long_run: bool) -> None:
    iu, ju = plane_pairs(out.shape[1])
    cos, sin = np.cos(angles), np.sin(angles)
    for k in range(planes.shape[1]):
        p = planes[:, k]
        _rotate_rows(out, iu[p], ju[p], cos[:, k], sin[:, k])
        if long_run and (done + k + 1) % REORTH_EVERY == 0:
            for r in range(out.shape[0]):
                out[r] = orthonormalize(out[r])


def apply_updates(x: np.ndarray, planes, angles) -> np.ndarray:
    """Apply ``R(planes[-1], angles[-1]) ... R(planes[0], angles[0]) x``.

    ``x`` may be a single matrix or a batch ``(R, n, n)``; in the batch case
    ``planes`` and ``angles`` have shape ``(R, t)``.  Returns a new array.
    """
    single = x.ndim == 2
    out = np.array(x[None] if single else x, dtype=float)
    planes = np.atleast_2d(planes)
    angles = np.atleast_2d(angles)
    _apply_inplace(out, planes, angles, 0, planes.shape[1] > REORTH_AFTER)
    return out[0] if single else out


def run(start, t: int, rng) -> ChainState:
    """Run the walk for ``t`` steps from ``start``."""
    if t < 0:
        raise ValueError("t must be non-negative")
    start = np.asarray(start, dtype=float)
    planes, angles = sample_updates(rng, start.shape[0], t)
    return ChainState(apply_updates(start, planes, angles), t)


def run_many(starts, t: int, rngs) -> np.ndarray:
    """Independent replicas, one stream each; replica ``r`` equals ``run(starts[r], t, rngs[r])``.

    Updates are drawn and applied ``CHUNK`` steps at a time, consuming each
    stream exactly as :func:`sample_updates` does.
    """
    out = np.array(starts, dtype=float)
    rngs = [as_rng(r) for r in rngs]
    if len(rngs) != out.shape[0]:
        raise ValueError("need one stream per replica")
    N = n_planes(out.shape[1])
    long_run = t > REORTH_AFTER
    for lo in range(0, t, CHUNK):
        k = min(CHUNK, t - lo)
        planes = np.empty((len(rngs), k), dtype=np.intp)
        angles = np.empty((len(rngs), k))
        for r, g in enumerate(rngs):
            planes[r] = g.integers(0, N, size=k)
            angles[r] = g.random(k) * TWO_PI
        _apply_inplace(out, planes, angles, lo, long_run)
    return out


def sphere_projection(state: ChainState) -> np.ndarray:
    """First column of the position: the induced walk on the sphere."""
    return state.position[:, 0].copy()


def haar_sample(n: int, rng, size: int | None = None) -> np.ndarray:
    """Haar-distributed rotations from QR of a Gaussian matrix.

    R's diagonal is made positive, then a column sign flip forces det = +1.
    """
    rng = as_rng(rng)
    shape = (n, n) if size is None else (size, n, n)
    q, r = np.linalg.qr(rng.standard_normal(shape))
    d = np.sign(np.diagonal(r, axis1=-2, axis2=-1))
    d[d == 0] = 1.0
    q = q * d[..., None, :]
    neg = np.linalg.det(q) < 0
    q[..., :, 0] = np.where(neg[..., None], -q[..., :, 0], q[..., :, 0])
    return q


def log_grid(t: int) -> list[int]:
    """0, powers of two below ``t``, and ``t``."""
    grid = [0]
    s = 1
    while s < t:
        grid.append(s)
        s *= 2
    if t > 0:
        grid.append(t)
    return grid


def _aligning_angle(xa, xb, ya, yb) -> float:
    """Angle ``phi`` minimising ``||X_ab - R(phi) Y_ab||_F`` over 2x2 rotations."""
    # R(phi) = [[c, s], [-s, c]];  <X_ab, R Y_ab> = c (xa.ya + xb.yb) + s (xa.yb - xb.ya)
    return math.atan2(float(xa @ yb - xb @ ya), float(xa @ ya + xb @ yb))


def synchronous_couple(x, y, t: int, rng, *, mode: str = "aligned",
                       target: float | None = None):
    """Couple two Kac walks for ``t`` steps.

    Both chains always update the same plane.  In ``"synchronous"`` mode they
    also use the same angle; the metric is left-invariant, so the distance
    then never changes.  In ``"aligned"`` mode the second chain's angle is
    offset by the 2-D Procrustes angle that best aligns its two active rows
    with the first chain's; the offset depends only on the current state so
    the second angle stays uniform and both marginals are exact Kac walks.
    The first chain consumes exactly the update stream ``run`` would.

    ``target`` stops the coupling early once the distance drops to it.

    Returns
    -------
    (ChainState, ChainState, list of (step, distance))
        Distances are sampled on :func:`log_grid` (plus the stopping step).
    """
    if mode not in ("aligned", "synchronous"):
        raise ValueError(f"unknown coupling mode {mode!r}")
    xs = np.array(x.position if isinstance(x, ChainState) else x, dtype=float)
    ys = np.array(y.position if isinstance(y, ChainState) else y, dtype=float)
    if xs.shape != ys.shape:
        raise ValueError("chains must live in the same SO(n)")
    n = xs.shape[0]
    iu, ju = plane_pairs(n)
    planes, angles = sample_updates(rng, n, t)
    cos, sin = np.cos(angles), np.sin(angles)
    grid = set(log_grid(t))
    long_run = t > REORTH_AFTER
    trace = [(0, geodesic_distance(xs, ys))]
    done = t
    for k in range(t):
        a, b = iu[planes[k]], ju[planes[k]]
        if mode == "aligned":
            phi = _aligning_angle(xs[a], xs[b], ys[a], ys[b])
            th_y = (angles[k] + phi) % TWO_PI
            cy, sy = math.cos(th_y), math.sin(th_y)
        else:
            cy, sy = cos[k], sin[k]
        for m_, c, s in ((xs, cos[k], sin[k]), (ys, cy, sy)):
            ra = m_[a].copy()
            m_[a] = c * ra + s * m_[b]
            m_[b] = c * m_[b] - s * ra
        s_ = k + 1
        if long_run and s_ % REORTH_EVERY == 0:
            xs, ys = orthonormalize(xs), orthonormalize(ys)
        if s_ in grid or target is not None:
            dist = geodesic_distance(xs, ys)
            if s_ in grid:
                trace.append((s_, dist))
            if target is not None and dist <= target:
                if s_ not in grid:
                    trace.append((s_, dist))
                done = s_
                break
    return ChainState(xs, done), ChainState(ys, done), trace


__all__ = [
    "ChainState", "Update", "apply_updates", "haar_sample",
    "log_grid", "run", "run_many", "sample_update", "sample_updates",
    "sphere_projection", "step", "synchronous_couple",
]
