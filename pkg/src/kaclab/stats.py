"""Statistical checks used by the experiments.

Every check returns a :class:`TestReport` whose verdict is derived from its
statistic (or p-value) and threshold alone.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
import math

import numpy as np
from scipy import stats as sps

from .rng import as_rng

#: Upper limit on histogram bins per projection.
MAX_BINS = 4096


@dataclass(frozen=True)
class TestReport:
    """Outcome of one check.

    With a p-value the check passes iff ``p_value >= threshold``.  Otherwise
    it passes iff ``statistic <= threshold`` (``direction="le"``) or
    ``statistic >= threshold`` (``direction="ge"``).  A ``reason`` marks a
    check that could not be carried out; it always fails.
    """

    __test__ = False  # keep pytest from collecting this class

    name: str
    statistic: float
    threshold: float
    num_samples: int
    seed: int | None = None
    p_value: float | None = None
    direction: str = "le"
    reason: str | None = None

    @property
    def verdict(self) -> str:
        if self.reason is not None:
            return "fail"
        if self.p_value is not None:
            ok = self.p_value >= self.threshold
        elif self.direction == "ge":
            ok = self.statistic >= self.threshold
        else:
            ok = self.statistic <= self.threshold
        return "pass" if ok else "fail"

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["verdict"] = self.verdict
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TestReport":
        d = dict(d)
        verdict = d.pop("verdict", None)
        rep = cls(**d)
        if verdict is not None and verdict != rep.verdict:
            raise ValueError(f"stored verdict {verdict!r} disagrees with its data")
        return rep

    def line(self) -> str:
        val = f"p={self.p_value:.4g}" if self.p_value is not None else f"stat={self.statistic:.4g}"
        op = {"le": "<=", "ge": ">="}[self.direction] if self.p_value is None else ">="
        return f"[{self.verdict.upper()}] {self.name}: {val} {op} {self.threshold:.4g}"


def ks_test(sample, cdf, *, alpha: float = 0.05, name: str = "ks",
            seed: int | None = None) -> TestReport:
    """One-sample Kolmogorov-Smirnov test with the asymptotic p-value."""
    sample = np.asarray(sample, dtype=float).ravel()
    if sample.size < 8:
        raise ValueError(f"KS test needs at least 8 points, got {sample.size}")
    if np.all(sample == sample[0]):
        return TestReport(name, math.nan, alpha, sample.size, seed, p_value=None,
                          reason="degenerate sample: all values equal")
    res = sps.kstest(sample, cdf, method="asymp")
    return TestReport(name, float(res.statistic), alpha, sample.size, seed,
                      p_value=float(res.pvalue))


def chi_square_uniform(counts, *, alpha: float = 0.05, name: str = "chi2-uniform",
                       seed: int | None = None) -> TestReport:
    counts = np.asarray(counts, dtype=float)
    res = sps.chisquare(counts)
    return TestReport(name, float(res.statistic), alpha, int(counts.sum()), seed,
                      p_value=float(res.pvalue))


def moment_test(samples, target: float, multiplier: float = 5.0, *,
                name: str = "moment", seed: int | None = None) -> TestReport:
    """Pass iff ``|mean - target| <= multiplier * std / sqrt(size)``.

    The statistic is the z-score ``|mean - target| / (std / sqrt(size))``.
    """
    samples = np.asarray(samples, dtype=float).ravel()
    if samples.size < 100:
        raise ValueError(f"moment test needs at least 100 samples, got {samples.size}")
    if np.all(samples == samples[0]):
        # summation roundoff would otherwise fake a tiny, nonzero spread
        diff, se = abs(float(samples[0]) - target), 0.0
    else:
        diff = abs(float(samples.mean()) - target)
        se = float(samples.std(ddof=1)) / math.sqrt(samples.size)
    if se == 0.0:
        z = 0.0 if diff == 0.0 else math.inf
    else:
        z = diff / se
    return TestReport(name, z, multiplier, samples.size, seed)


def bonferroni(alpha: float, k: int) -> float:
    return alpha / k


def wilson_interval(successes: int, trials: int, level: float = 0.95) -> tuple[float, float]:
    ci = sps.binomtest(int(successes), int(trials)).proportion_ci(level, method="wilson")
    return float(ci.low), float(ci.high)


def random_directions(dim: int, k: int, rng) -> np.ndarray:
    """``k`` uniform unit vectors in ``R^dim`` as rows (a single one if ``dim == 1``)."""
    rng = as_rng(rng)
    if dim == 1:
        return np.ones((1, 1))
    d = rng.standard_normal((k, dim))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def fd_edges(pooled: np.ndarray) -> np.ndarray:
    """Freedman-Diaconis bin edges for a pooled 1-D sample."""
    edges = np.histogram_bin_edges(pooled, bins="fd")
    if edges.size - 1 > MAX_BINS:
        edges = np.linspace(pooled.min(), pooled.max(), MAX_BINS + 1)
    return edges


def binned_tv(x, y, edges=None) -> float:
    """Half-L1 distance between histograms on shared bins."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if edges is None:
        edges = fd_edges(np.concatenate([x, y]))
    lo, hi = edges[0], edges[-1]
    px = np.histogram(np.clip(x, lo, hi), edges)[0] / x.size
    py = np.histogram(np.clip(y, lo, hi), edges)[0] / y.size
    return 0.5 * float(np.abs(px - py).sum())


@dataclass
class ProjectionTV:
    estimate: float
    ci: tuple[float, float]
    per_projection: np.ndarray
    directions: np.ndarray = field(repr=False)
    boot_std: float = 0.0

    def contains(self, value: float) -> bool:
        return self.ci[0] <= value <= self.ci[1]


def _as_2d(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    return a[:, None] if a.ndim == 1 else a


def projected_tv_stat(x, y, directions) -> tuple[float, np.ndarray]:
    """Max over directions of the binned TV of the projected samples."""
    px, py = x @ directions.T, y @ directions.T
    per = np.array([binned_tv(px[:, k], py[:, k]) for k in range(directions.shape[0])])
    return float(per.max()), per


def projection_tv(sample_x, sample_y, num_projections: int = 20, rng=0, *,
                  n_boot: int = 200, level: float = 0.95,
                  min_size: int = 1000) -> ProjectionTV:
    """Lower-bound estimate of the TV distance between two laws from samples.

    The estimate is the largest binned TV over random 1-D projections (bins:
    Freedman-Diaconis on the pooled projection).  The interval is the basic
    bootstrap interval from ``n_boot`` resamples of both samples, which
    offsets the upward bias of the binned estimator.
    """
    rng = as_rng(rng)
    x, y = _as_2d(sample_x), _as_2d(sample_y)
    if x.shape[1] != y.shape[1]:
        raise ValueError(f"dimension mismatch: {x.shape[1]} vs {y.shape[1]}")
    if min(len(x), len(y)) < min_size:
        raise ValueError(f"projection_tv needs at least {min_size} points per sample")
    dirs = random_directions(x.shape[1], num_projections, rng)
    est, per = projected_tv_stat(x, y, dirs)
    if n_boot == 0:
        return ProjectionTV(est, (math.nan, math.nan), per, dirs, math.nan)
    px, py = x @ dirs.T, y @ dirs.T
    edges = [fd_edges(np.concatenate([px[:, k], py[:, k]])) for k in range(dirs.shape[0])]
    boots = np.empty(n_boot)
    for b in range(n_boot):
        ix = rng.integers(0, len(x), len(x))
        iy = rng.integers(0, len(y), len(y))
        boots[b] = max(binned_tv(px[ix, k], py[iy, k], edges[k])
                       for k in range(dirs.shape[0]))
    a = (1 - level) / 2
    q_lo, q_hi = np.quantile(boots, [a, 1 - a])
    ci = (max(0.0, 2 * est - q_hi), min(1.0, max(0.0, 2 * est - q_lo)))
    return ProjectionTV(est, ci, per, dirs, float(boots.std(ddof=1)) if n_boot > 1 else math.nan)


def permutation_pvalue(sample_x, sample_y, directions, n_perm: int = 200, rng=0) -> tuple[float, float]:
    """Permutation test of equal laws with the projection-TV statistic.

    Returns ``(observed statistic, p-value)``; the p-value includes the
    observed labelling, so it is never 0.
    """
    rng = as_rng(rng)
    x, y = _as_2d(sample_x), _as_2d(sample_y)
    obs, _ = projected_tv_stat(x, y, directions)
    pooled = np.concatenate([x, y])
    nx = len(x)
    hits = 0
    for _ in range(n_perm):
        perm = rng.permutation(len(pooled))
        stat, _ = projected_tv_stat(pooled[perm[:nx]], pooled[perm[nx:]], directions)
        hits += stat >= obs
    return obs, (1 + hits) / (1 + n_perm)


def gaussian_shift_tv(d: float) -> float:
    """Exact TV between ``N(0, 1)`` and ``N(d, 1)``: ``2 Phi(d/2) - 1``."""
    return math.erf(abs(d) / (2 * math.sqrt(2)))
