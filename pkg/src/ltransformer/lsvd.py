"""Tensor SVD under an L-transform, built on a one-sided Jacobi matrix SVD."""

from dataclasses import dataclass

import numpy as np

from .exceptions import NumericalError, ShapeError
from .ltransform import facewise_product, l_forward, l_inverse

JACOBI_TOL = 1e-13
JACOBI_MAX_SWEEPS = 30
TUBAL_REL_EPS = 1e-10


def _complete_basis(q, m):
    """Extend the orthonormal columns of ``q`` (m x r) to an m x m orthogonal matrix."""
    cols = [q[:, i] for i in range(q.shape[1])]
    for e in np.eye(m):
        if len(cols) == m:
            break
        v = e.copy()
        for _ in range(2):  # two passes of Gram-Schmidt for stability
            for c in cols:
                v -= (c @ v) * c
        nrm = np.linalg.norm(v)
        if nrm > 1e-8:
            cols.append(v / nrm)
    return np.column_stack(cols) if cols else np.zeros((m, 0))


def _jacobi_tall(a, tol, max_sweeps):
    """Hestenes one-sided Jacobi on a tall matrix (m >= n)."""
    a = a.copy()
    m, n = a.shape
    v = np.eye(n)
    for _ in range(max_sweeps):
        rotated = False
        for i in range(n - 1):
            for j in range(i + 1, n):
                ai, aj = a[:, i], a[:, j]
                alpha = ai @ ai
                beta = aj @ aj
                gamma = ai @ aj
                if abs(gamma) <= tol * np.sqrt(alpha * beta) or gamma == 0.0:
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                t = np.copysign(1.0, zeta) / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                a[:, [i, j]] = np.column_stack((c * ai - s * aj, s * ai + c * aj))
                vi, vj = v[:, i].copy(), v[:, j].copy()
                v[:, i] = c * vi - s * vj
                v[:, j] = s * vi + c * vj
        if not rotated:
            return a, v
    off = 0.0
    for i in range(n - 1):
        for j in range(i + 1, n):
            denom = np.sqrt((a[:, i] @ a[:, i]) * (a[:, j] @ a[:, j]))
            if denom > 0:
                off = max(off, abs(a[:, i] @ a[:, j]) / denom)
    raise NumericalError(f"Jacobi SVD did not converge in {max_sweeps} sweeps", residual=off)


def matrix_svd(A, tol=JACOBI_TOL, max_sweeps=JACOBI_MAX_SWEEPS):
    """Full SVD ``A = U @ diag(s) @ V.T`` by cyclic one-sided Jacobi rotations.

    Returns ``U`` (m x m), ``s`` (min(m, n), descending) and ``V`` (n x n).
    Each column of ``U`` paired with a nonzero singular value has its
    largest-magnitude entry made positive.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2:
        raise ShapeError(f"expected a matrix, got ndim={A.ndim}")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix contains NaN or Inf")
    m, n = A.shape
    if m < n:
        V, s, U = matrix_svd(A.T, tol, max_sweeps)
        _fix_signs(U, V, _numerical_rank(s, m, n))
        return U, s, V

    a, v = _jacobi_tall(A, tol, max_sweeps)
    s = np.linalg.norm(a, axis=0)
    order = np.argsort(-s, kind="stable")
    s, a, v = s[order], a[:, order], v[:, order]

    r = _numerical_rank(s, m, n)
    u = a[:, :r] / s[:r]
    _fix_signs(u, v, r)
    return _complete_basis(u, m), s, v


def _numerical_rank(s, m, n):
    if not s.size:
        return 0
    return int(np.sum(s > max(m, n) * np.finfo(float).eps * s[0]))


def _fix_signs(u, v, r):
    """Make the largest-magnitude entry of each of the first ``r`` columns of ``u`` positive."""
    for i in range(r):
        if u[np.argmax(np.abs(u[:, i])), i] < 0:
            u[:, i] *= -1
            v[:, i] *= -1


@dataclass
class LSvdResult:
    """Factors of ``A = U *_L S *_L V^T`` (original domain) plus per-slice singular values.

    ``slice_singulars[k]`` holds the descending singular values of the
    ``k``-th transform-domain slice.
    """

    U: np.ndarray
    S: np.ndarray
    V: np.ndarray
    slice_singulars: list
    transform: object = None

    def tube_norms(self):
        r = min(self.S.shape[0], self.S.shape[1])
        idx = np.arange(r)
        return np.linalg.norm(self.S[idx, idx, :], axis=1)

    def reconstruct(self, k=None):
        L = self.transform
        u_hat, s_hat, v_hat = (l_forward(x, L) for x in (self.U, self.S, self.V))
        if k is not None:
            u_hat, s_hat, v_hat = u_hat[:, :k], s_hat[:k, :k], v_hat[:, :k]
        return l_inverse(facewise_product(facewise_product(u_hat, s_hat), np.swapaxes(v_hat, 0, 1)), L)


def l_svd(a, L):
    """L-SVD from ``p`` independent SVDs of the transform-domain slices.

    Singular tubes are finally ordered by descending l2 norm with a stable
    index tie-break.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 3:
        raise ShapeError(f"expected a 3-way tensor, got ndim={a.ndim}")
    m, n, p = a.shape
    a_hat = l_forward(a, L)
    r = min(m, n)
    u_hat = np.empty((m, m, p))
    s_hat = np.zeros((m, n, p))
    v_hat = np.empty((n, n, p))
    singulars = []
    for k in range(p):
        U, s, V = matrix_svd(a_hat[:, :, k])
        u_hat[:, :, k] = U
        v_hat[:, :, k] = V
        s_hat[np.arange(r), np.arange(r), k] = s
        singulars.append(s.copy())

    S = l_inverse(s_hat, L)
    norms = np.linalg.norm(S[np.arange(r), np.arange(r), :], axis=1)
    perm = np.argsort(-norms, kind="stable")
    if np.any(perm != np.arange(r)):
        full_u = np.concatenate([perm, np.arange(r, m)])
        full_v = np.concatenate([perm, np.arange(r, n)])
        u_hat = u_hat[:, full_u]
        v_hat = v_hat[:, full_v]
        diag = s_hat[np.arange(r), np.arange(r), :][perm]
        s_hat = np.zeros_like(s_hat)
        s_hat[np.arange(r), np.arange(r), :] = diag
        S = l_inverse(s_hat, L)
    return LSvdResult(l_inverse(u_hat, L), S, l_inverse(v_hat, L), singulars, L)


def tubal_rank(result, rel_eps=TUBAL_REL_EPS):
    """Number of singular tubes whose norm exceeds ``rel_eps`` times the largest."""
    norms = result.tube_norms()
    if norms.size == 0 or norms.max() == 0.0:
        return 0
    return int(np.sum(norms > rel_eps * norms.max()))


def average_rank(a, L, tol=TUBAL_REL_EPS):
    """Mean over transform-domain slices of the numerical matrix rank.

    A slice singular value counts when it exceeds ``tol`` times the largest
    singular value of the whole transformed tensor.
    """
    a_hat = l_forward(np.asarray(a, dtype=np.float64), L)
    svals = [matrix_svd(a_hat[:, :, k])[1] for k in range(a_hat.shape[2])]
    top = max((s[0] for s in svals if s.size), default=0.0)
    if top == 0.0:
        return 0.0
    return float(np.mean([np.sum(s > tol * top) for s in svals]))


def truncated_l_svd(a, L, k):
    """Keep the ``k`` leading singular tubes; returns ``(approx, err)``.

    For orthonormal transforms ``err`` comes from the discarded singular
    values, ``err**2 = sum of discarded s_hat**2``; otherwise it is measured
    directly as ``||a - approx||_F``.
    """
    a = np.asarray(a, dtype=np.float64)
    r = min(a.shape[0], a.shape[1])
    if not 1 <= k <= r:
        raise ValueError(f"k must lie in [1, {r}], got {k}")
    res = l_svd(a, L)
    approx = res.reconstruct(k)
    if L.orthonormal:
        s_hat = l_forward(res.S, L)
        tail = s_hat[np.arange(k, r), np.arange(k, r), :]
        err = float(np.sqrt(np.sum(tail**2)))
    else:
        err = float(np.linalg.norm(a - approx))
    return approx, err
