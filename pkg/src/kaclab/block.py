"""Perturbed update blocks, their linearisation, and the covariance spectrum.

For a block ``A = ((i_1, th_1), ..., (i_m, th_m))`` and angle jitter ``delta``
the perturbed product is ``L_A(delta) = R(i_m, th_m + d_m) ... R(i_1, th_1 + d_1)``
and the relative perturbation is ``H_A(delta) = L_A(delta) L_A(0)^T``.  Its
logarithm is linear to first order, ``u_A(delta) = J_A delta + r_A(delta)``,
with Jacobian columns ``sqrt(2) v_t`` where ``v_t = Ad(P_{t+1}) a_{i_t}`` and
``P_{t+1}`` is the product of the updates after ``t``.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
import math

import numpy as np

from .chain import apply_updates, sample_updates
from .errors import DomainError
from .lie import SQRT2, expm_skew, n_planes, plane_pairs, principal_log, to_skew
from .rng import as_rng, make_rng

#: Largest accepted value of ``sqrt(2 m) ||delta||_2``; it keeps
#: ``sum_t ||sqrt(2) delta_t v_t||_op <= 1/8``.
RADIUS_BUDGET = 1.0 / 8.0

#: Suffix products are stored densely up to this dimension.
DENSE_SUFFIX_MAX_N = 32


@dataclass(frozen=True)
class Scales:
    """Polynomial scales derived from ``(n, C1)``."""

    n: int
    c1: float = 12.0

    def __post_init__(self):
        if self.n < 2:
            raise DomainError(f"need n >= 2, got {self.n}")
        if not self.c1 > 10:
            raise DomainError(f"C1 must exceed 10, got {self.c1}")

    @property
    def N(self) -> int:
        return n_planes(self.n)

    @property
    def m(self) -> int:
        # log N = 0 when n = 2; keep at least one update.
        return max(1, math.ceil(self.c1 * self.N * math.log(self.N)))

    @property
    def sigma(self) -> float:
        return float(self.N) ** -3

    @property
    def omega(self) -> float:
        return float(self.N) ** -4

    def as_dict(self) -> dict:
        return {"n": self.n, "c1": self.c1, "N": self.N, "m": self.m,
                "sigma": self.sigma, "omega": self.omega}


@dataclass(frozen=True)
class UpdateBlock:
    """An ordered block of updates; index 0 is applied first."""

    n: int
    planes: np.ndarray
    angles: np.ndarray

    def __post_init__(self):
        planes = np.asarray(self.planes, dtype=np.intp)
        angles = np.asarray(self.angles, dtype=float) % (2 * math.pi)
        if planes.shape != angles.shape or planes.ndim != 1:
            raise DomainError("planes and angles must be 1-D arrays of equal length")
        if planes.size and (planes.min() < 0 or planes.max() >= n_planes(self.n)):
            raise DomainError("plane index out of range")
        object.__setattr__(self, "planes", planes)
        object.__setattr__(self, "angles", angles)

    @property
    def m(self) -> int:
        return self.planes.size

    @property
    def N(self) -> int:
        return n_planes(self.n)

    @classmethod
    def sample(cls, n: int, m: int, rng) -> "UpdateBlock":
        planes, angles = sample_updates(rng, n, m)
        return cls(n, planes, angles)


def _check_delta(block: UpdateBlock, delta) -> np.ndarray:
    delta = np.asarray(delta, dtype=float)
    if delta.shape != (block.m,):
        raise DomainError(f"delta must have length m={block.m}, got shape {delta.shape}")
    return delta


def perturbed_product(block: UpdateBlock, delta) -> np.ndarray:
    """``L_A(delta)``; the rightmost factor is the first update."""
    delta = _check_delta(block, delta)
    return apply_updates(np.eye(block.n), block.planes, block.angles + delta)


def perturbed_products(block: UpdateBlock, deltas) -> np.ndarray:
    """``L_A(delta)`` for each row of ``deltas`` (shape ``(R, m)``), as a batch."""
    deltas = np.atleast_2d(np.asarray(deltas, dtype=float))
    if deltas.shape[1] != block.m:
        raise DomainError(f"delta rows must have length m={block.m}")
    r = deltas.shape[0]
    starts = np.broadcast_to(np.eye(block.n), (r, block.n, block.n))
    planes = np.broadcast_to(block.planes, (r, block.m))
    return apply_updates(starts, planes, block.angles + deltas)


def relative_perturbation(block: UpdateBlock, delta) -> np.ndarray:
    """``H_A(delta) = L_A(delta) L_A(0)^T`` evaluated directly."""
    return perturbed_product(block, delta) @ perturbed_product(block, np.zeros(block.m)).T


@dataclass
class BlockAnalysis:
    """Linearisation of a block.

    Rows are 0-based in update order.  ``directions[t]`` holds ``v`` for
    update ``t`` and ``suffix_products[t]`` is the product of all updates
    after ``t``, so ``suffix_products[-1]`` is the identity.  The latter is
    ``None`` when not stored.
    """

    block: UpdateBlock
    directions: np.ndarray
    covariance: np.ndarray
    spectrum: tuple[float, float]
    suffix_products: np.ndarray | None = field(default=None, repr=False)

    @property
    def jacobian(self) -> np.ndarray:
        """``N x m`` matrix with columns ``sqrt(2) v_t``."""
        return SQRT2 * self.directions.T

    def in_good_event(self) -> bool:
        """Whether ``m/N <= lambda_min(M_A) <= lambda_max(M_A) <= 3 m/N``."""
        ratio = self.block.m / self.block.N
        lo, hi = self.spectrum
        return ratio <= lo and hi <= 3 * ratio

    def covariance_by_outer_products(self) -> np.ndarray:
        """``2 sum_t v_t v_t^T`` accumulated term by term."""
        out = np.zeros((self.block.N, self.block.N))
        for v in self.directions:
            out += np.outer(v, v)
        return 2.0 * out


def analyze_block(block: UpdateBlock, *, store_suffix: bool | None = None) -> BlockAnalysis:
    """One backward pass over the block computing ``v_t``, ``J_A`` and ``M_A``.

    ``P_t = P_{t+1} R(i_t, th_t)`` only changes columns ``a, b`` of ``P_{t+1}``.
    With ``p_a, p_b`` those columns, ``Ad(P) a_{ab}`` has coordinate
    ``p_a[k] p_b[l] - p_b[k] p_a[l]`` on plane ``(k, l)``.
    """
    n, m = block.n, block.m
    if store_suffix is None:
        store_suffix = n <= DENSE_SUFFIX_MAX_N
    iu, ju = plane_pairs(n)
    p = np.eye(n)
    cols_a = np.empty((m, n))
    cols_b = np.empty((m, n))
    suffix = np.empty((m + 1, n, n)) if store_suffix else None
    if store_suffix:
        suffix[m] = p
    cos, sin = np.cos(block.angles), np.sin(block.angles)
    for t in range(m - 1, -1, -1):
        a, b = iu[block.planes[t]], ju[block.planes[t]]
        pa, pb = p[:, a].copy(), p[:, b].copy()
        cols_a[t], cols_b[t] = pa, pb
        p[:, a] = cos[t] * pa - sin[t] * pb
        p[:, b] = sin[t] * pa + cos[t] * pb
        if store_suffix:
            suffix[t] = p
    directions = cols_a[:, iu] * cols_b[:, ju] - cols_b[:, iu] * cols_a[:, ju]
    jac = SQRT2 * directions.T
    cov = jac @ jac.T
    ev = np.linalg.eigvalsh(cov)
    return BlockAnalysis(block, directions, cov, (float(ev[0]), float(ev[-1])),
                         suffix[1:] if store_suffix else None)


def relative_perturbation_product(analysis: BlockAnalysis, delta) -> np.ndarray:
    """``prod_{t=m}^{1} exp(sqrt(2) delta_t v_t)`` with generic matrix exponentials."""
    block = analysis.block
    delta = _check_delta(block, delta)
    out = np.eye(block.n)
    for t in range(block.m):
        if delta[t] != 0.0:
            out = expm_skew(to_skew(SQRT2 * delta[t] * analysis.directions[t], block.n)) @ out
    return out


def radius_ok(m: int, delta) -> bool:
    return math.sqrt(2 * m) * float(np.linalg.norm(delta)) <= RADIUS_BUDGET


def log_coordinates(block: UpdateBlock, delta, analysis: BlockAnalysis | None = None,
                    *, check_radius: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """``u_A(delta) = log H_A(delta)`` and the remainder ``u_A(delta) - J_A delta``.

    With ``check_radius`` the jitter must satisfy ``sqrt(2m) ||delta|| <= 1/8``.
    Without it only the chart of the principal logarithm is enforced.
    """
    delta = _check_delta(block, delta)
    if check_radius and not radius_ok(block.m, delta):
        raise DomainError(
            f"sqrt(2m)*||delta|| = {math.sqrt(2 * block.m) * np.linalg.norm(delta):.4g} "
            f"exceeds {RADIUS_BUDGET}")
    if analysis is None:
        analysis = analyze_block(block, store_suffix=False)
    u = principal_log(relative_perturbation(block, delta))
    return u, u - analysis.jacobian @ delta


def log_derivative_fd(block: UpdateBlock, delta, eps: float = 1e-5) -> np.ndarray:
    """Central-difference estimate of ``d u_A(delta)`` (``N x m``)."""
    delta = _check_delta(block, delta)
    out = np.empty((block.N, block.m))
    for t in range(block.m):
        e = np.zeros(block.m)
        e[t] = eps
        plus = principal_log(relative_perturbation(block, delta + e))
        minus = principal_log(relative_perturbation(block, delta - e))
        out[:, t] = (plus - minus) / (2 * eps)
    return out


def isotropy_check(n: int, num_samples: int | None, rng, g=None) -> np.ndarray:
    """Average of ``w w^T`` for ``w = Ad(g) a_i``.

    ``num_samples=None`` averages exactly over all planes; otherwise planes are
    sampled uniformly.  ``g`` defaults to a fixed random rotation.
    """
    from .chain import haar_sample
    from .lie import adjoint_matrix

    rng = as_rng(rng)
    if g is None:
        g = haar_sample(n, rng)
    ad = adjoint_matrix(g)
    N = n_planes(n)
    if num_samples is None:
        return ad @ ad.T / N
    idx = rng.integers(0, N, size=num_samples)
    counts = np.bincount(idx, minlength=N).astype(float)
    return (ad * (counts / num_samples)) @ ad.T


@dataclass
class SpectrumSample:
    scales: Scales
    lam_min_ratio: np.ndarray
    lam_max_ratio: np.ndarray
    deviation: np.ndarray
    mean_covariance: np.ndarray
    covariance_se: np.ndarray

    @property
    def trials(self) -> int:
        return self.lam_min_ratio.size

    @property
    def good(self) -> np.ndarray:
        return (self.lam_min_ratio >= 1.0) & (self.lam_max_ratio <= 3.0)

    @property
    def fraction_good(self) -> float:
        return float(self.good.mean())

    def freedman_bound(self, s: float) -> float:
        """``2 N exp(-(s^2/2) / (m/N + s/3))``."""
        N, m = self.scales.N, self.scales.m
        return 2 * N * math.exp(-(s * s / 2) / (m / N + s / 3))

    def empirical_tail(self, s: float) -> float:
        """Fraction of trials with ``||sum_t Y_t||_op >= s``."""
        return float(np.mean(self.deviation >= s))

    def mean_deviation(self) -> tuple[float, float]:
        """``||mean(M_A) - (2m/N) I||_op`` and its Monte Carlo scale.

        The scale is the HS norm of the entrywise standard-error matrix, which
        bounds the root-mean-square operator-norm error of the mean.
        """
        N, m = self.scales.N, self.scales.m
        dev = self.mean_covariance - (2 * m / N) * np.eye(N)
        return float(np.linalg.norm(dev, 2)), float(np.linalg.norm(self.covariance_se))


def _spectrum_trial(n: int, m: int, key: tuple, k: int):
    an = analyze_block(UpdateBlock.sample(n, m, make_rng(*key, k)), store_suffix=False)
    N = an.block.N
    dev = np.linalg.norm(an.covariance / 2.0 - (m / N) * np.eye(N), 2)
    return an.spectrum, float(dev), an.covariance


def spectrum_event_experiment(scales: Scales, trials: int, rng, workers: int = 1) -> SpectrumSample:
    """Spectra of ``M_A`` over fresh blocks.

    ``rng`` is a seed or ``(seed, *stream)`` tuple; trial ``k`` uses the
    stream ``(*stream, k)`` so any subset of trials can be recomputed alone.
    With ``workers > 1`` trials run in a process pool; results are reduced in
    trial order, so they do not depend on the number of workers.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    key = rng if isinstance(rng, tuple) else (int(rng),)
    N, m = scales.N, scales.m
    job = partial(_spectrum_trial, scales.n, m, key)
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(job, range(trials), chunksize=max(1, trials // (4 * workers))))
    else:
        results = map(job, range(trials))
    lo = np.empty(trials)
    hi = np.empty(trials)
    dev = np.empty(trials)
    s1 = np.zeros((N, N))
    s2 = np.zeros((N, N))
    for k, ((lo[k], hi[k]), dev[k], cov) in enumerate(results):
        s1 += cov
        s2 += cov ** 2
    mean = s1 / trials
    var = np.maximum(s2 / trials - mean ** 2, 0.0) * trials / max(trials - 1, 1)
    return SpectrumSample(scales, lo * N / m, hi * N / m, dev, mean,
                          np.sqrt(var / trials))
