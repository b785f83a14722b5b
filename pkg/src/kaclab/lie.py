"""Linear-algebra substrate for SO(n) and its Lie algebra so(n).

Algebra elements are passed around as coordinate vectors of length
``N = n(n-1)/2`` in the orthonormal basis ``a_k = (E_ab - E_ba)/sqrt(2)``,
with planes ``(a, b)``, ``a < b``, ordered lexicographically.  Group elements
are plain ``(n, n)`` float arrays.  Plane indices are 0-based.
"""
from __future__ import annotations

from functools import lru_cache
import math

import numpy as np
import scipy.linalg

from .errors import DomainError

SQRT2 = math.sqrt(2.0)

#: Hilbert-Schmidt tolerance for ``||M^T M - I||``.
TOL_ORTH = 1e-9

#: principal_log refuses rotation angles within this margin of pi.
LOG_MARGIN = 1e-6


def n_planes(n: int) -> int:
    """Number of coordinate planes, ``N = n(n-1)/2``."""
    return n * (n - 1) // 2


def dim_from_planes(N: int) -> int:
    """Invert :func:`n_planes`."""
    n = int(round((1 + math.sqrt(1 + 8 * N)) / 2))
    if n_planes(n) != N:
        raise DomainError(f"{N} is not of the form n(n-1)/2")
    return n


@lru_cache(maxsize=None)
def _pairs(n: int) -> tuple[np.ndarray, np.ndarray]:
    iu, ju = np.triu_indices(n, k=1)
    iu.setflags(write=False)
    ju.setflags(write=False)
    return iu, ju


def plane_pairs(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Row and column arrays ``(a_k, b_k)`` of the ordered planes.

    ``np.triu_indices`` enumerates row-major, which is lexicographic on (a, b).
    """
    if n < 2:
        raise DomainError(f"need n >= 2, got {n}")
    return _pairs(n)


def plane_of(i: int, n: int) -> tuple[int, int]:
    """The pair ``(a, b)`` of plane index ``i``."""
    N = n_planes(n)
    if not 0 <= i < N:
        raise DomainError(f"plane index {i} out of range 0..{N - 1}")
    iu, ju = plane_pairs(n)
    return int(iu[i]), int(ju[i])


def plane_index(a: int, b: int, n: int) -> int:
    """Inverse of :func:`plane_of`."""
    if not 0 <= a < b < n:
        raise DomainError(f"need 0 <= a < b < n, got ({a}, {b}) with n={n}")
    return a * n - a * (a + 1) // 2 + (b - a - 1)


def basis_matrix(i: int, n: int) -> np.ndarray:
    """The basis element ``a_i = (E_ab - E_ba)/sqrt(2)``."""
    a, b = plane_of(i, n)
    out = np.zeros((n, n))
    out[a, b] = 1.0 / SQRT2
    out[b, a] = -1.0 / SQRT2
    return out


def to_skew(coords, n: int | None = None) -> np.ndarray:
    """Reconstruct the skew matrix ``sum_k coords_k a_k``."""
    coords = np.asarray(coords, dtype=float)
    if coords.ndim != 1:
        raise DomainError("coordinates must be a 1-D vector")
    if n is None:
        n = dim_from_planes(coords.size)
    elif coords.size != n_planes(n):
        raise DomainError(f"expected {n_planes(n)} coordinates, got {coords.size}")
    iu, ju = plane_pairs(n)
    u = np.zeros((n, n))
    u[iu, ju] = coords / SQRT2
    u[ju, iu] = -coords / SQRT2
    return u


def to_coords(u) -> np.ndarray:
    """Coordinates ``<u, a_k>_HS`` of a (numerically) skew matrix.

    Only the antisymmetric part of ``u`` is kept.
    """
    u = np.asarray(u, dtype=float)
    iu, ju = plane_pairs(u.shape[0])
    return (u[iu, ju] - u[ju, iu]) / SQRT2


def hs_norm(u) -> float:
    return float(np.linalg.norm(u))


def check_rotation(g, tol: float = TOL_ORTH) -> np.ndarray:
    """Validate that ``g`` is in SO(n) to tolerance and return it as an array."""
    g = np.asarray(g, dtype=float)
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise DomainError(f"expected a square matrix, got shape {g.shape}")
    err = np.linalg.norm(g.T @ g - np.eye(g.shape[0]))
    if err > tol:
        raise DomainError(f"matrix is not orthogonal (||g^T g - I||_HS = {err:.3g})")
    if np.linalg.det(g) <= 0:
        raise DomainError("matrix has non-positive determinant")
    return g


def orthonormalize(g) -> np.ndarray:
    """Nearest rotation in HS norm (polar factor)."""
    u, _, vt = np.linalg.svd(g)
    q = u @ vt
    if np.linalg.det(q) < 0:
        u[:, -1] = -u[:, -1]
        q = u @ vt
    return q


def plane_rotation(i: int, theta: float, n: int) -> np.ndarray:
    """Rotation by ``theta`` in plane ``i``; equals ``exp(sqrt(2) theta a_i)``.

    Entry ``(a, b)`` is ``sin(theta)`` and ``(b, a)`` is ``-sin(theta)``.
    """
    a, b = plane_of(i, n)
    theta = math.fmod(theta, 2 * math.pi)
    c, s = math.cos(theta), math.sin(theta)
    out = np.eye(n)
    out[a, a] = out[b, b] = c
    out[a, b] = s
    out[b, a] = -s
    return out


def expm_skew(u) -> np.ndarray:
    """Matrix exponential of a skew matrix (Pade scaling-and-squaring)."""
    u = np.asarray(u, dtype=float)
    if not np.any(u):
        return np.eye(u.shape[0])
    return scipy.linalg.expm(u)


def mat_exp(coords, n: int | None = None) -> np.ndarray:
    """Group exponential of the algebra element with the given coordinates."""
    return expm_skew(to_skew(coords, n))


def _log_matrix(g: np.ndarray, margin: float) -> np.ndarray:
    # Complex Schur form of a normal matrix is diagonal up to roundoff.
    t, z = scipy.linalg.schur(g.astype(complex), output="complex")
    ang = np.angle(np.diag(t))
    worst = float(np.max(np.abs(ang))) if ang.size else 0.0
    if worst >= math.pi - margin:
        raise DomainError(
            f"rotation angle {worst:.9f} is within {margin:g} of pi; "
            "principal logarithm undefined")
    log = ((z * ang) @ z.conj().T * 1j).real
    return 0.5 * (log - log.T)


def principal_log(g, *, margin: float = LOG_MARGIN) -> np.ndarray:
    """Coordinates of the principal logarithm of a rotation.

    Raises
    ------
    DomainError
        If some rotation angle of ``g`` is within ``margin`` of pi.
    """
    g = np.asarray(g, dtype=float)
    if np.array_equal(g, np.eye(g.shape[0])):
        return np.zeros(n_planes(g.shape[0]))
    return to_coords(_log_matrix(g, margin))


def rotation_angles(g) -> np.ndarray:
    """Eigen-angles of ``g`` in ``[0, pi]`` (one per eigenvalue)."""
    ev = np.linalg.eigvals(np.asarray(g, dtype=float))
    return np.abs(np.angle(ev))


def adjoint(g, coords) -> np.ndarray:
    """Coordinates of ``Ad(g) u = g u g^T``."""
    g = np.asarray(g, dtype=float)
    return to_coords(g @ to_skew(coords, g.shape[0]) @ g.T)


def adjoint_matrix(g) -> np.ndarray:
    """The ``N x N`` orthogonal matrix of ``Ad(g)`` in basis coordinates.

    Column ``k`` is ``Ad(g) a_k``: for ``a_k`` on plane ``(a, b)`` it has
    entry ``g_pa g_qb - g_pb g_qa`` on plane ``(p, q)``.
    """
    g = np.asarray(g, dtype=float)
    iu, ju = plane_pairs(g.shape[0])
    ga, gb = g[:, iu], g[:, ju]
    return ga[iu] * gb[ju] - gb[iu] * ga[ju]


def riem_dist(x, y) -> float:
    """Bi-invariant distance ``||log(x^T y)||_HS``; raises outside the chart."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return float(np.linalg.norm(principal_log(x.T @ y)))


def geodesic_distance(x, y) -> float:
    """Same metric as :func:`riem_dist`, defined for every pair.

    Uses the eigen-angles of ``x^T y``, so pairs at angle pi are allowed.
    """
    ang = rotation_angles(np.asarray(x, dtype=float).T @ np.asarray(y, dtype=float))
    return float(math.sqrt(np.sum(ang ** 2)))
