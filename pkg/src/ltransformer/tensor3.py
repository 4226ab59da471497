"""Dense third-order tensors stored as ``numpy`` arrays of shape ``(n1, n2, n3)``.

There is no wrapper class: a ``Tensor3`` is a float64 ``ndarray`` with three
non-empty axes and finite entries. :func:`as_tensor3` validates and copies.

Unfolding convention
--------------------
The mode-``n`` unfolding puts mode ``n`` on the rows and enumerates the
remaining modes in ascending order on the columns, the earlier mode varying
slowest (row-major). For a tensor ``A`` of shape ``(n1, n2, n3)``::

    unfold(A, 1)[i, j * n3 + k] == A[i, j, k]
    unfold(A, 2)[j, i * n3 + k] == A[i, j, k]
    unfold(A, 3)[k, i * n2 + j] == A[i, j, k]

so ``unfold(A, 3)`` holds every tube ``A[i, j, :]`` as a column.
"""

import numpy as np

from .exceptions import DivisibilityError, ShapeError, SliceIndexError

Tensor3 = np.ndarray
Matrix = np.ndarray

_MODES = (1, 2, 3)


def as_tensor3(data, copy=True):
    """Validate ``data`` as a finite, non-empty float64 array with three axes."""
    arr = np.array(data, dtype=np.float64, copy=copy)
    if arr.ndim != 3:
        raise ShapeError(f"expected a 3-way array, got ndim={arr.ndim}")
    if 0 in arr.shape:
        raise ShapeError(f"empty dimension in shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("tensor contains NaN or Inf")
    return arr


def as_matrix(data):
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"expected a matrix, got ndim={arr.ndim}")
    return arr


def _check_mode(mode):
    if mode not in _MODES:
        raise ValueError(f"mode must be one of {_MODES}, got {mode!r}")


def frontal_slice(t, k):
    """Return a copy of the frontal slice ``t[:, :, k]`` (``k`` is 0-based)."""
    t = np.asarray(t)
    if not 0 <= k < t.shape[2]:
        raise SliceIndexError(f"slice index {k} outside [0, {t.shape[2]})")
    return t[:, :, k].copy()


def unfold(t, mode):
    """Mode-``mode`` unfolding, ``mode`` in {1, 2, 3}; see the module docstring."""
    _check_mode(mode)
    t = np.asarray(t, dtype=np.float64)
    if t.ndim != 3:
        raise ShapeError(f"expected a 3-way array, got ndim={t.ndim}")
    return np.moveaxis(t, mode - 1, 0).reshape(t.shape[mode - 1], -1).copy()


def fold(m, mode, dims):
    """Inverse of :func:`unfold` for a tensor of shape ``dims``."""
    _check_mode(mode)
    dims = tuple(int(n) for n in dims)
    m = as_matrix(m)
    rest = [n for i, n in enumerate(dims) if i != mode - 1]
    if m.shape != (dims[mode - 1], rest[0] * rest[1]):
        raise ShapeError(f"matrix shape {m.shape} cannot fold to {dims} along mode {mode}")
    return np.moveaxis(m.reshape(dims[mode - 1], *rest), 0, mode - 1).copy()


def mode_n_product(t, x, mode):
    """n-mode product ``t ×_mode x``; the result satisfies ``unfold(out, n) = x @ unfold(t, n)``."""
    _check_mode(mode)
    t = np.asarray(t, dtype=np.float64)
    x = as_matrix(x)
    if t.ndim != 3:
        raise ShapeError(f"expected a 3-way array, got ndim={t.ndim}")
    if x.shape[1] != t.shape[mode - 1]:
        raise ShapeError(
            f"matrix has {x.shape[1]} columns but mode {mode} of the tensor has size {t.shape[mode - 1]}"
        )
    dims = list(t.shape)
    dims[mode - 1] = x.shape[0]
    return fold(x @ unfold(t, mode), mode, dims)


def tensorize(x, p):
    """Split the feature axis of ``x`` (shape ``(..., T, d)``) into ``p`` contiguous blocks.

    Returns shape ``(..., T, d // p, p)`` with ``out[..., t, j, k] == x[..., t, k * d_s + j]``.
    Leading batch axes are carried through.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim < 2:
        raise ShapeError("tensorize expects at least a (T, d) matrix")
    d = x.shape[-1]
    if p < 1 or d % p:
        raise DivisibilityError(d, p)
    d_s = d // p
    return np.swapaxes(x.reshape(*x.shape[:-1], p, d_s), -1, -2).copy()


def matricize(t):
    """Concatenate the ``p`` frontal slices along mode 2; inverse of :func:`tensorize`."""
    t = np.asarray(t, dtype=np.float64)
    if t.ndim < 3:
        raise ShapeError("matricize expects at least a (T, d_s, p) tensor")
    return np.swapaxes(t, -1, -2).reshape(*t.shape[:-2], t.shape[-2] * t.shape[-1]).copy()


def frobenius_norm(t):
    return float(np.sqrt(np.sum(np.square(np.asarray(t, dtype=np.float64)))))
