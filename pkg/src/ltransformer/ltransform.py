"""Invertible mode-3 transforms and the algebra they induce.

A :class:`TransformOp` wraps a ``p x p`` matrix ``Z``. The forward transform
multiplies every tube ``t[i, j, :]`` by ``Z``; products, transposes and
structural predicates are all computed slice by slice in that domain.

Functions accept tensors with extra leading axes, ``(..., n1, n2, p)``, and
act on the last three axes.
"""

from dataclasses import dataclass, field

import numpy as np

from .exceptions import ShapeError, TransformError

DEFAULT_TOL = 1e-10
_CHECK_TOL = 1e-12


@dataclass(frozen=True)
class TransformOp:
    """An invertible ``p x p`` transform applied along mode 3.

    Construction checks ``||Z @ Z_inv - I||_max <= 1e-12`` and, when
    ``orthonormal`` is set, that ``Z_inv`` is exactly ``Z.T``.
    """

    Z: np.ndarray
    Z_inv: np.ndarray
    orthonormal: bool = False
    name: str = field(default="custom", compare=False)

    def __post_init__(self):
        Z = np.array(self.Z, dtype=np.float64)
        Z_inv = np.array(self.Z_inv, dtype=np.float64)
        if Z.ndim != 2 or Z.shape[0] != Z.shape[1] or Z.shape != Z_inv.shape:
            raise TransformError(f"transform matrices must be square and equal-sized, got {Z.shape}, {Z_inv.shape}")
        err = np.max(np.abs(Z @ Z_inv - np.eye(Z.shape[0])))
        if err > _CHECK_TOL:
            raise TransformError(f"Z @ Z_inv deviates from identity by {err:.3e}")
        if self.orthonormal:
            ortho_err = np.max(np.abs(Z @ Z.T - np.eye(Z.shape[0])))
            if ortho_err > _CHECK_TOL or not np.array_equal(Z_inv, Z.T):
                raise TransformError(f"matrix flagged orthonormal but ||Z Z^T - I||_max = {ortho_err:.3e}")
        Z.flags.writeable = False
        Z_inv.flags.writeable = False
        object.__setattr__(self, "Z", Z)
        object.__setattr__(self, "Z_inv", Z_inv)

    @property
    def p(self):
        return self.Z.shape[0]


def dct_matrix(p):
    """Orthonormal DCT-II: ``Z[k, j] = c_k cos(pi (2j + 1) k / (2p))``."""
    if p < 1:
        raise TransformError(f"transform size must be positive, got p={p}")
    k = np.arange(p)[:, None]
    j = np.arange(p)[None, :]
    Z = np.cos(np.pi * (2 * j + 1) * k / (2 * p))
    Z[0] *= np.sqrt(1.0 / p)
    Z[1:] *= np.sqrt(2.0 / p)
    return TransformOp(Z, Z.T.copy(), orthonormal=True, name="dct")


def identity_transform(p):
    if p < 1:
        raise TransformError(f"transform size must be positive, got p={p}")
    return TransformOp(np.eye(p), np.eye(p), orthonormal=True, name="identity")


def orthogonal_transform(Z, tol=1e-10):
    """Wrap a user-supplied real orthogonal matrix (checked to ``tol``)."""
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[0] != Z.shape[1]:
        raise TransformError(f"transform matrix must be square, got shape {Z.shape}")
    err = np.max(np.abs(Z @ Z.T - np.eye(Z.shape[0])))
    if err > tol:
        raise TransformError(f"matrix is not orthogonal: ||Z Z^T - I||_max = {err:.3e}")
    # re-orthonormalize so that Z_inv = Z.T holds to machine precision
    u, _, vt = np.linalg.svd(Z)
    Z = u @ vt
    return TransformOp(Z, Z.T.copy(), orthonormal=True, name="orthogonal")


def invertible_transform(Z, cond_max=1e8):
    """Wrap a general invertible matrix; ``Z_inv`` is computed by ``numpy``."""
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[0] != Z.shape[1]:
        raise TransformError(f"transform matrix must be square, got shape {Z.shape}")
    cond = np.linalg.cond(Z)
    if not np.isfinite(cond) or cond > cond_max:
        raise TransformError(f"transform matrix is singular or ill-conditioned (cond={cond:.3e})")
    return TransformOp(Z, np.linalg.inv(Z), orthonormal=False, name="invertible")


def dft_transform(p):
    raise TransformError(
        "DFT / t-product transforms give complex slices and are not supported; "
        "use a real orthogonal transform such as the DCT"
    )


def load_transform(path):
    """Read a transform matrix from a text file (rows of space-separated decimals).

    Orthogonal matrices become orthonormal transforms; any other invertible
    matrix is accepted with a computed inverse.
    """
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line and not line.startswith("#"):
                rows.append([float(v) for v in line.split()])
    if not rows or any(len(r) != len(rows) for r in rows):
        raise TransformError(f"{path}: expected a non-empty square matrix")
    Z = np.array(rows)
    if np.max(np.abs(Z @ Z.T - np.eye(len(rows)))) <= 1e-10:
        return orthogonal_transform(Z)
    return invertible_transform(Z)


def make_transform(kind, p):
    """Build a transform from a name (``"dct"``, ``"identity"``, ``"dft"``) or a matrix file path."""
    if isinstance(kind, TransformOp):
        if kind.p != p:
            raise ShapeError(f"transform has size {kind.p}, expected {p}")
        return kind
    if kind == "dct":
        return dct_matrix(p)
    if kind == "identity":
        return identity_transform(p)
    if kind in ("dft", "fft", "t-product"):
        return dft_transform(p)
    op = load_transform(kind)
    if op.p != p:
        raise ShapeError(f"transform in {kind} has size {op.p}, expected {p}")
    return op


def _check_depth(t, L):
    if t.shape[-1] != L.p:
        raise ShapeError(f"tensor depth {t.shape[-1]} does not match transform size {L.p}")


def l_forward(t, L):
    t = np.asarray(t, dtype=np.float64)
    _check_depth(t, L)
    return t @ L.Z.T


def l_inverse(t, L):
    t = np.asarray(t, dtype=np.float64)
    _check_depth(t, L)
    return t @ L.Z_inv.T


def _slices_first(t):
    return np.moveaxis(t, -1, -3)


def _slices_last(t):
    return np.moveaxis(t, -3, -1)


def facewise_product(a_hat, b_hat):
    """Slice-wise matrix product ``out[:, :, k] = a_hat[:, :, k] @ b_hat[:, :, k]``."""
    a_hat = np.asarray(a_hat, dtype=np.float64)
    b_hat = np.asarray(b_hat, dtype=np.float64)
    if a_hat.ndim < 3 or b_hat.ndim < 3:
        raise ShapeError("facewise product needs 3-way operands")
    if a_hat.shape[-2] != b_hat.shape[-3] or a_hat.shape[-1] != b_hat.shape[-1]:
        raise ShapeError(f"cannot multiply {a_hat.shape} by {b_hat.shape} slice-wise")
    return _slices_last(_slices_first(a_hat) @ _slices_first(b_hat))


def l_product(a, b, L):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_depth(a, L)
    _check_depth(b, L)
    if a.shape[-2] != b.shape[-3]:
        raise ShapeError(f"inner dimensions differ: {a.shape} vs {b.shape}")
    return l_inverse(facewise_product(l_forward(a, L), l_forward(b, L)), L)


def l_transpose(a, L):
    return l_inverse(np.swapaxes(l_forward(a, L), -3, -2), L)


def l_identity(m, L):
    """Tensor whose every transform-domain slice is ``I_m``."""
    hat = np.repeat(np.eye(m)[:, :, None], L.p, axis=2)
    return l_inverse(hat, L)


def _square_slices(q, L):
    q = np.asarray(q, dtype=np.float64)
    if q.ndim != 3 or q.shape[0] != q.shape[1]:
        raise ShapeError(f"expected a square-faced tensor, got shape {q.shape}")
    return _slices_first(l_forward(q, L))


def is_l_orthogonal(q, L, tol=DEFAULT_TOL):
    slices = _square_slices(q, L)
    eye = np.eye(slices.shape[-1])
    return bool(np.all(np.abs(np.swapaxes(slices, -1, -2) @ slices - eye) <= tol))


def is_f_diagonal(q, L, tol=DEFAULT_TOL):
    """True if every transform-domain slice is diagonal (rectangular faces allowed)."""
    q = np.asarray(q, dtype=np.float64)
    slices = _slices_first(l_forward(q, L))
    off = slices.copy()
    n = min(off.shape[-2:])
    off[:, np.arange(n), np.arange(n)] = 0.0
    return bool(np.all(np.abs(off) <= tol))


def is_l_invertible(q, L, tol=DEFAULT_TOL):
    slices = _square_slices(q, L)
    smallest = np.linalg.svd(slices, compute_uv=False)[:, -1]
    return bool(np.all(smallest > tol))
