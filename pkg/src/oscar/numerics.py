"""Dense symmetric linear algebra and finite-difference oracles.

Matrices are plain ``float64`` numpy arrays. Everything here is a pure
function of its inputs.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import solve_triangular

from .errors import NonConvergence, NonFinite, NotPositiveDefinite

PIVOT_FLOOR = 1e-300


def as_symmetric(a, check: bool = True) -> np.ndarray:
    """Return ``a`` as a square float64 array, verifying exact symmetry."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise ValueError(f"expected a non-empty square matrix, got shape {a.shape}")
    if check and not np.array_equal(a, a.T):
        raise ValueError("matrix is not exactly symmetric")
    return a


@dataclass(frozen=True)
class EigenDecomp:
    eigenvalues: np.ndarray  # descending
    eigenvectors: np.ndarray  # columns, orthonormal
    sweeps: int

    def reconstruct(self) -> np.ndarray:
        q = self.eigenvectors
        return (q * self.eigenvalues) @ q.T


def cholesky(a, floor: float = PIVOT_FLOOR) -> np.ndarray:
    """Lower Cholesky factor of a symmetric positive definite matrix.

    Left-looking column algorithm. Raises :class:`NotPositiveDefinite` as soon
    as a pivot drops to ``floor`` or below (or is not finite).
    """
    a = as_symmetric(a, check=False)
    n = a.shape[0]
    lower = np.zeros_like(a)
    for j in range(n):
        row = lower[j, :j]
        pivot = a[j, j] - row @ row
        if not (pivot > floor) or not np.isfinite(pivot):
            raise NotPositiveDefinite(j, float(pivot))
        d = np.sqrt(pivot)
        lower[j, j] = d
        if j + 1 < n:
            lower[j + 1 :, j] = (a[j + 1 :, j] - lower[j + 1 :, :j] @ row) / d
    return lower


def cholesky_logdet(a, floor: float = PIVOT_FLOOR) -> float:
    """log det(A) = 2 * sum(log diag(L)) for SPD ``A``."""
    lower = cholesky(a, floor)
    return float(2.0 * np.sum(np.log(np.diag(lower))))


def psd_inverse(a, ridge: float, floor: float = PIVOT_FLOOR) -> np.ndarray:
    """(A + ridge*I)^-1 for PSD ``A`` via Cholesky; the result is exactly symmetric."""
    if not ridge > 0:
        raise ValueError("ridge must be positive")
    a = as_symmetric(a, check=False)
    return spd_inverse(a + ridge * np.eye(a.shape[0]), floor)


def spd_inverse(a, floor: float = PIVOT_FLOOR) -> np.ndarray:
    """Inverse of an SPD matrix through its Cholesky factor."""
    a = as_symmetric(a, check=False)
    lower = cholesky(a, floor)
    linv = solve_triangular(lower, np.eye(a.shape[0]), lower=True)
    inv = linv.T @ linv
    return 0.5 * (inv + inv.T)


def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    # Fixed tournament schedule: each round is a set of disjoint (p, q) pairs,
    # every pair appears exactly once per sweep.
    players = list(range(n)) + ([-1] if n % 2 else [])
    size = len(players)
    rounds = []
    for _ in range(size - 1):
        ps, qs = [], []
        for k in range(size // 2):
            p, q = players[k], players[size - 1 - k]
            if p >= 0 and q >= 0:
                ps.append(min(p, q))
                qs.append(max(p, q))
        rounds.append((np.array(ps, dtype=np.intp), np.array(qs, dtype=np.intp)))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def _off_norm(a: np.ndarray) -> float:
    return float(np.linalg.norm(a - np.diag(np.diag(a))))


def sym_eig(a, tol: float = 1e-15, max_sweeps: int | None = None) -> EigenDecomp:
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Rotations within a round of the round-robin ordering act on disjoint index
    pairs, so each round is applied as one vectorised update. The ordering is
    fixed, which keeps results bit-reproducible.
    """
    a = as_symmetric(a, check=False).copy()
    n = a.shape[0]
    if max_sweeps is None:
        max_sweeps = 100 * n
    v = np.eye(n)
    scale = np.linalg.norm(a)
    if n == 1 or scale == 0.0:
        return EigenDecomp(np.diag(a).copy(), v, 0)
    rounds = _round_robin(n)
    sweeps = 0
    off = _off_norm(a)
    while off > tol * scale:
        if sweeps >= max_sweeps:
            raise NonConvergence(sweeps, off / scale)
        for p, q in rounds:
            apq = a[p, q]
            active = np.abs(apq) > 1e-300
            if not np.any(active):
                continue
            p, q, apq = p[active], q[active], apq[active]
            theta = (a[q, q] - a[p, p]) / (2.0 * apq)
            t = np.sign(theta) / (np.abs(theta) + np.hypot(1.0, theta))
            t[theta == 0.0] = 1.0
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c
            rp, rq = a[p, :].copy(), a[q, :].copy()
            a[p, :] = c[:, None] * rp - s[:, None] * rq
            a[q, :] = s[:, None] * rp + c[:, None] * rq
            cp, cq = a[:, p].copy(), a[:, q].copy()
            a[:, p] = cp * c - cq * s
            a[:, q] = cp * s + cq * c
            vp, vq = v[:, p].copy(), v[:, q].copy()
            v[:, p] = vp * c - vq * s
            v[:, q] = vp * s + vq * c
        sweeps += 1
        a = 0.5 * (a + a.T)
        off = _off_norm(a)
    w = np.diag(a).copy()
    order = np.argsort(-w, kind="stable")
    return EigenDecomp(w[order], v[:, order], sweeps)


def finite_diff_grad(
    f: Callable[[np.ndarray], float], x, h: float = 1e-5, relative: bool = True
) -> np.ndarray:
    """Central-difference gradient of a scalar field.

    With ``relative=True`` the step for coordinate i is ``h * max(1, |x_i|)``.
    """
    x = np.asarray(x, dtype=np.float64)
    flat = x.ravel()
    grad = np.empty_like(flat)
    for i in range(flat.size):
        step = h * max(1.0, abs(flat[i])) if relative else h
        xp = flat.copy()
        xm = flat.copy()
        xp[i] += step
        xm[i] -= step
        fp = f(xp.reshape(x.shape))
        fm = f(xm.reshape(x.shape))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NonFinite(f"non-finite function value while differencing coordinate {i}")
        grad[i] = (fp - fm) / (xp[i] - xm[i])
    return grad.reshape(x.shape)
