"""Gaussian machinery for comparing a block law with its small translates.

The law of ``U_A = log H_A(Delta)`` is compared with ``gamma_A = N(0, Sigma_A)``,
``Sigma_A = sigma_n^2 M_A``, and the cost of a right translation by
``exp(h)`` is split into a Gaussian-approximation term, a Gaussian shift term
and a BCH (non-commutativity) term.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np
import scipy.linalg
from scipy import stats as sps

from .block import BlockAnalysis, Scales, UpdateBlock, analyze_block, perturbed_products
from .errors import DomainError, RegimeError
from .lie import mat_exp, principal_log
from .rng import as_rng
from .stats import (
    TestReport,
    bonferroni,
    gaussian_shift_tv,
    ks_test,
    permutation_pvalue,
    projection_tv,
    random_directions,
)

#: Chart radius for the BCH map; ``e^{2 r} - 1 <= 1/2`` holds for r = 0.2.
R_STAR = 0.2

#: Bound on ``(-log det(I + B) + Tr B) / ||B||_HS^2`` when ``||B||_op <= 1/2``:
#: ``sum_{k>=2} 2^{2-k} / k = 4 (log 2 - 1/2)``.
C_LOGDET = 4.0 * (math.log(2.0) - 0.5)

#: ``KL(T# gamma || gamma) <= alpha^2 / 2 + C_LOGDET d beta^2 <= C_NI (alpha^2 + d beta^2)``.
C_NI = max(0.5, C_LOGDET)


class GaussianLaw:
    """Centred-or-not Gaussian ``N(mean, cov)`` with a cached eigendecomposition."""

    def __init__(self, mean, cov):
        cov = np.asarray(cov, dtype=float)
        mean = np.asarray(mean, dtype=float)
        if cov.ndim != 2 or cov.shape[0] != cov.shape[1] or mean.shape != (cov.shape[0],):
            raise DomainError("mean/covariance shapes do not match")
        if np.max(np.abs(cov - cov.T), initial=0.0) > 1e-12:
            raise DomainError("covariance is not symmetric")
        cov = 0.5 * (cov + cov.T)
        w, q = np.linalg.eigh(cov)
        if w.size and w[0] < -1e-12:
            raise DomainError(f"covariance has negative eigenvalue {w[0]:.3g}")
        self.mean = mean
        self._w = np.clip(w, 0.0, None)
        self._q = q
        self.cov = (q * self._w) @ q.T

    @property
    def dim(self) -> int:
        return self.mean.size

    @property
    def eigenvalues(self) -> np.ndarray:
        return self._w

    def is_definite(self) -> bool:
        return self._w.size > 0 and self._w[0] > 1e-14 * max(self._w[-1], 1e-300)

    def _require_definite(self):
        if not self.is_definite():
            raise DomainError("covariance is singular")

    @property
    def condition_number(self) -> float:
        self._require_definite()
        return float(self._w[-1] / self._w[0])

    def inv_sqrt(self) -> np.ndarray:
        """Symmetric ``cov^{-1/2}``."""
        self._require_definite()
        return (self._q / np.sqrt(self._w)) @ self._q.T

    def sqrt(self) -> np.ndarray:
        return (self._q * np.sqrt(self._w)) @ self._q.T

    def whiten(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.mean) @ self.inv_sqrt()

    def sample(self, size: int, rng) -> np.ndarray:
        rng = as_rng(rng)
        z = rng.standard_normal((size, self.dim))
        return self.mean + z @ self.sqrt()


def whitened_norm(law: GaussianLaw, h, method: str = "eig") -> float:
    """``||cov^{-1/2} h||_2`` via eigen-whitening or a Cholesky solve."""
    h = np.asarray(h, dtype=float)
    if method == "eig":
        return float(np.linalg.norm(law.inv_sqrt() @ h))
    if method == "solve":
        law._require_definite()
        c = scipy.linalg.cho_factor(law.cov)
        return float(math.sqrt(max(h @ scipy.linalg.cho_solve(c, h), 0.0)))
    raise ValueError(f"unknown method {method!r}")


def gaussian_shift_tv_bound(law: GaussianLaw, h) -> tuple[float, float]:
    """``(||cov^{-1/2} h|| / sqrt(2), exact TV 2 Phi(d/2) - 1)`` for a shift by ``h``."""
    d = whitened_norm(law, h)
    return d / math.sqrt(2.0), gaussian_shift_tv(d)


class CutoffFn:
    """Radial cutoff ``Psi(x) = eta(||x||^2 / R^2)``: 1 inside ``2R``, 0 outside ``3R``.

    ``eta(s) = 1 - (3 w^2 - 2 w^3)`` with ``w = clip((s - 4)/5, 0, 1)``; it is
    C^1 with ``max |eta'| = 3/10``.
    """

    ETA_PRIME_MAX = 0.3
    C_CUT = 6 * ETA_PRIME_MAX

    def __init__(self, dim: int, radius: float):
        if radius <= 0:
            raise DomainError("radius must be positive")
        self.dim = dim
        self.radius = float(radius)

    @staticmethod
    def eta(s):
        w = np.clip((np.asarray(s, dtype=float) - 4.0) / 5.0, 0.0, 1.0)
        return 1.0 - (3 * w ** 2 - 2 * w ** 3)

    @staticmethod
    def eta_prime(s):
        w = np.clip((np.asarray(s, dtype=float) - 4.0) / 5.0, 0.0, 1.0)
        return -(6 * w - 6 * w ** 2) / 5.0

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        s = np.sum(x ** 2, axis=-1) / self.radius ** 2
        return self.eta(s)

    def gradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        s = np.sum(x ** 2, axis=-1) / self.radius ** 2
        return self.eta_prime(s)[..., None] * 2 * x / self.radius ** 2


def bch_remainder(xi, h, r_star: float = R_STAR) -> np.ndarray:
    """``log(exp(xi) exp(h)) - xi - h`` for ``||xi||, ||h|| <= r_star``."""
    xi = np.asarray(xi, dtype=float)
    h = np.asarray(h, dtype=float)
    if np.linalg.norm(xi) > r_star or np.linalg.norm(h) > r_star:
        raise DomainError(f"BCH arguments must have HS norm <= {r_star}")
    return principal_log(mat_exp(xi) @ mat_exp(h)) - xi - h


def logdet_gap(b) -> float:
    """``-log det(I + B) + Tr B``."""
    b = np.asarray(b, dtype=float)
    sign, logdet = np.linalg.slogdet(np.eye(b.shape[0]) + b)
    if sign <= 0:
        raise DomainError("I + B is not orientation preserving")
    return float(-logdet + np.trace(b))


@dataclass
class KLEstimate:
    estimate: float
    stderr: float
    max_beta: float
    num_samples: int


def pushforward_kl(residual, jacobian, dim: int, num_samples: int, rng,
                   beta_max: float = 0.5) -> KLEstimate:
    """Monte Carlo ``KL(T# gamma_d || gamma_d)`` for ``T = Id + residual``.

    Uses ``E[(||T X||^2 - ||X||^2)/2 - log det dT(X)]``, ``X ~ N(0, I_d)``.
    ``residual`` and ``jacobian`` act on a batch ``(S, d)`` and return
    ``(S, d)`` and ``(S, d, d)``.  Sampled ``||dR||_op`` must stay below
    ``beta_max``.
    """
    rng = as_rng(rng)
    x = rng.standard_normal((num_samples, dim))
    r = np.asarray(residual(x), dtype=float)
    jr = np.asarray(jacobian(x), dtype=float)
    beta = float(np.max(np.linalg.norm(jr, ord=2, axis=(1, 2)))) if num_samples else 0.0
    if beta > beta_max:
        raise DomainError(f"sampled ||dR||_op = {beta:.3g} exceeds {beta_max}")
    sign, logdet = np.linalg.slogdet(np.eye(dim) + jr)
    if np.any(sign <= 0):
        raise DomainError("non-invertible Jacobian encountered")
    tx = x + r
    vals = 0.5 * (np.sum(tx ** 2, axis=1) - np.sum(x ** 2, axis=1)) - logdet
    se = float(vals.std(ddof=1) / math.sqrt(num_samples)) if num_samples > 1 else math.nan
    return KLEstimate(float(vals.mean()), se, beta, num_samples)


def block_gaussian(analysis: BlockAnalysis, scales: Scales) -> GaussianLaw:
    """``gamma_A = N(0, sigma_n^2 M_A)``."""
    return GaussianLaw(np.zeros(analysis.block.N), scales.sigma ** 2 * analysis.covariance)


def sample_block_logs(block: UpdateBlock, sigma: float, count: int, rng, *,
                      right=None, batch: int = 2048) -> tuple[np.ndarray, float]:
    """Samples of ``log(H_A(Delta) g)`` conditioned on ``||Delta|| <= 2 sigma sqrt(m)``.

    ``g`` is ``right`` (identity by default).  Returns the coordinates and the
    acceptance rate of the conditioning.
    """
    rng = as_rng(rng)
    m = block.m
    base_t = perturbed_products(block, np.zeros((1, m)))[0].T
    if right is not None:
        base_t = base_t @ right
    out = []
    drawn = kept = accepted = 0
    while accepted < count:
        z = rng.standard_normal((batch, m))
        keep = np.linalg.norm(z, axis=1) <= 2 * math.sqrt(m)
        drawn += batch
        kept += int(keep.sum())
        z = z[keep][: count - accepted]
        accepted += len(z)
        if len(z):
            prods = perturbed_products(block, sigma * z) @ base_t
            out.extend(principal_log(p) for p in prods)
    return np.array(out), kept / drawn


def _require_good(analysis: BlockAnalysis):
    if not analysis.in_good_event():
        m, N = analysis.block.m, analysis.block.N
        lo, hi = analysis.spectrum
        raise RegimeError(
            f"block outside the good spectrum event: lambda in [{lo:.4g}, {hi:.4g}], "
            f"need [{m / N:.4g}, {3 * m / N:.4g}]")


@dataclass
class LawTestReport:
    accept_rate: float
    ks: list[TestReport]
    family: TestReport
    covariance: TestReport
    samples: np.ndarray = field(repr=False)

    @property
    def passed(self) -> bool:
        return self.family.passed and self.covariance.passed

    @property
    def min_p(self) -> float:
        return min(r.p_value for r in self.ks)


def log_coordinate_law_test(block: UpdateBlock, scales: Scales, num_samples: int, rng, *,
                            analysis: BlockAnalysis | None = None,
                            sigma: float | None = None, num_projections: int = 20,
                            family_alpha: float = 0.01, seed: int | None = None) -> LawTestReport:
    """Compare ``L(U_A | A; E)`` with ``gamma_A`` on a block in the good event.

    KS tests on ``num_projections`` random directions of the whitened samples
    (Bonferroni at ``family_alpha``), plus the relative operator-norm error of
    the second-moment matrix, required to be at most ``5 sqrt(N / samples)``.
    ``sigma`` overrides the jitter scale (``scales.sigma`` by default).
    """
    rng = as_rng(rng)
    if analysis is None:
        analysis = analyze_block(block, store_suffix=False)
    _require_good(analysis)
    sigma = scales.sigma if sigma is None else sigma
    law = GaussianLaw(np.zeros(block.N), sigma ** 2 * analysis.covariance)
    u, rate = sample_block_logs(block, sigma, num_samples, rng)
    w = law.whiten(u)
    dirs = random_directions(block.N, num_projections, rng)
    level = bonferroni(family_alpha, len(dirs))
    ks = [ks_test(w @ d, sps.norm.cdf, alpha=level, name=f"ks-projection-{k}", seed=seed)
          for k, d in enumerate(dirs)]
    pmin = min(r.p_value for r in ks)
    family = TestReport("ks-bonferroni", pmin * len(dirs), family_alpha, num_samples, seed,
                        p_value=min(1.0, pmin * len(dirs)))
    second = u.T @ u / len(u)
    rel = float(np.linalg.norm(second - law.cov, 2) / np.linalg.norm(law.cov, 2))
    cov_rep = TestReport("covariance-relative-error", rel, 5 * math.sqrt(block.N / num_samples),
                         num_samples, seed)
    return LawTestReport(rate, ks, family, cov_rep, u)


def default_h_max(scales: Scales) -> float:
    """Largest admitted ``||h||``: the point where the whitened shift reaches about 1."""
    return min(R_STAR, scales.sigma * math.sqrt(scales.m / scales.N))


@dataclass
class TranslateReport:
    h_norm: float
    ga_shape: float
    ga_empirical: float
    shift_term: float
    shift_term_solve: float
    shift_exact_tv: float
    bch_constant: float
    bch_term: float
    kappa: float
    projection_tv: float
    projection_tv_ci: tuple[float, float]
    projection_tv_pvalue: float
    accept_rate: float
    samples_x: np.ndarray = field(repr=False)
    samples_y: np.ndarray = field(repr=False)

    def terms(self) -> dict:
        return {k: v for k, v in self.__dict__.items()
                if not isinstance(v, np.ndarray)}


def translate_cost_experiment(block: UpdateBlock, scales: Scales, h, num_samples: int, rng, *,
                              analysis: BlockAnalysis | None = None,
                              h_max: float | None = None, num_projections: int = 20,
                              n_perm: int = 200, n_boot: int = 200) -> TranslateReport:
    """Evaluate each term bounding ``||nu_A - (T_g)# nu_A||_TV`` for ``g = exp(h)``.

    Also estimates the projection TV between samples of ``H_A(Delta)`` and
    ``H_A(Delta') g`` (in log coordinates) with a permutation p-value for the
    hypothesis that the two laws coincide.
    """
    rng = as_rng(rng)
    h = np.asarray(h, dtype=float)
    if analysis is None:
        analysis = analyze_block(block, store_suffix=False)
    _require_good(analysis)
    h_max = default_h_max(scales) if h_max is None else h_max
    hn = float(np.linalg.norm(h))
    if hn > h_max:
        raise RegimeError(f"||h||_HS = {hn:.4g} exceeds the admitted {h_max:.4g}")
    N, m, sigma = scales.N, block.m, scales.sigma
    law = block_gaussian(analysis, scales)
    kappa = law.condition_number
    shift = whitened_norm(law, h, "eig") / math.sqrt(2)
    shift_solve = whitened_norm(law, h, "solve") / math.sqrt(2)
    g = mat_exp(h, block.n)

    ux, rate_x = sample_block_logs(block, sigma, num_samples, rng)
    uy, rate_y = sample_block_logs(block, sigma, num_samples, rng, right=g)

    # C_* from the samples themselves, pulled into the BCH chart.
    probes = ux[: min(500, len(ux))]
    scale = np.minimum(1.0, 0.999 * R_STAR / np.maximum(np.linalg.norm(probes, axis=1), 1e-300))
    probes = probes * scale[:, None]
    if hn > 0:
        ratios = [np.linalg.norm(bch_remainder(p, h)) / (np.linalg.norm(p) * hn)
                  for p in probes if np.linalg.norm(p) > 0]
        c_star = float(max(ratios)) if ratios else 0.0
    else:
        c_star = 0.0

    ga_emp = projection_tv(ux, law.sample(len(ux), rng), num_projections, rng, n_boot=0).estimate
    ptv = projection_tv(ux, uy, num_projections, rng, n_boot=n_boot)
    _, pval = permutation_pvalue(ux, uy, ptv.directions, n_perm, rng)
    return TranslateReport(
        h_norm=hn,
        ga_shape=sigma * m ** 2 / math.sqrt(m / N),
        ga_empirical=ga_emp,
        shift_term=shift,
        shift_term_solve=shift_solve,
        shift_exact_tv=gaussian_shift_tv(shift * math.sqrt(2)),
        bch_constant=c_star,
        bch_term=c_star * math.sqrt(N * kappa) * hn,
        kappa=kappa,
        projection_tv=ptv.estimate,
        projection_tv_ci=ptv.ci,
        projection_tv_pvalue=pval,
        accept_rate=min(rate_x, rate_y),
        samples_x=ux,
        samples_y=uy,
    )


def reflection_coupling(mean_x, mean_y, cov, size: int, rng):
    """Reflection-maximal coupling of ``N(mean_x, cov)`` and ``N(mean_y, cov)``.

    Returns ``(X, Y, met)`` where ``met`` flags the draws with ``X == Y``.
    """
    rng = as_rng(rng)
    mean_x = np.asarray(mean_x, dtype=float)
    mean_y = np.asarray(mean_y, dtype=float)
    chol = np.linalg.cholesky(np.asarray(cov, dtype=float))
    z = scipy.linalg.solve_triangular(chol, mean_x - mean_y, lower=True)
    zn = float(np.linalg.norm(z))
    xi = rng.standard_normal((size, mean_x.size))
    x = mean_x + xi @ chol.T
    if zn == 0.0:
        return x, x.copy(), np.ones(size, dtype=bool)
    e = z / zn
    # accept "meet" with probability min(1, phi(xi + z) / phi(xi))
    log_ratio = -0.5 * (np.sum((xi + z) ** 2, axis=1) - np.sum(xi ** 2, axis=1))
    met = np.log(rng.random(size)) <= np.minimum(0.0, log_ratio)
    eta = np.where(met[:, None], xi + z, xi - 2 * (xi @ e)[:, None] * e)
    y = mean_y + eta @ chol.T
    y[met] = x[met]
    return x, y, met
