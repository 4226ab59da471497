import numpy as np
import pytest
import scipy.fft
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import rel
from ltransformer.exceptions import ShapeError, TransformError
from ltransformer.ltransform import (
    TransformOp,
    dct_matrix,
    facewise_product,
    identity_transform,
    invertible_transform,
    is_f_diagonal,
    is_l_invertible,
    is_l_orthogonal,
    l_forward,
    l_identity,
    l_inverse,
    l_product,
    l_transpose,
    load_transform,
    make_transform,
    orthogonal_transform,
)

P_VALUES = [1, 2, 3, 4, 8, 16]
seeds = st.integers(0, 2**31)
small_p = st.sampled_from([1, 2, 3, 4, 8])


def transforms(p, rng):
    """DCT, identity, a random orthogonal and a random well-conditioned invertible transform."""
    q, _ = np.linalg.qr(rng.standard_normal((p, p)))
    g = rng.standard_normal((p, p)) + p * np.eye(p)
    return [dct_matrix(p), identity_transform(p), orthogonal_transform(q), invertible_transform(g)]


@pytest.mark.parametrize("p", P_VALUES)
def test_dct_orthonormal_and_matches_scipy(p):
    Z = dct_matrix(p).Z
    assert np.max(np.abs(Z @ Z.T - np.eye(p))) <= 1e-12
    assert np.max(np.abs(Z - scipy.fft.dct(np.eye(p), axis=0, norm="ortho"))) <= 1e-14


def test_dct_small_values():
    np.testing.assert_array_equal(dct_matrix(1).Z, [[1.0]])
    r = np.sqrt(0.5)
    np.testing.assert_allclose(dct_matrix(2).Z, [[r, r], [r, -r]], atol=1e-15)


def test_transform_op_validation():
    with pytest.raises(TransformError):
        TransformOp(np.eye(2), 2 * np.eye(2))
    with pytest.raises(TransformError):
        TransformOp(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(TransformError):
        TransformOp(2 * np.eye(2), 0.5 * np.eye(2), orthonormal=True)
    with pytest.raises(TransformError):
        orthogonal_transform(np.array([[1.0, 1.0], [0.0, 1.0]]))
    with pytest.raises(TransformError):
        invertible_transform(np.array([[1.0, 2.0], [2.0, 4.0]]))
    with pytest.raises(TransformError, match="complex"):
        make_transform("dft", 4)
    with pytest.raises(TransformError):
        dct_matrix(0)
    with pytest.raises(ValueError):
        dct_matrix(2).Z[0, 0] = 5.0  # read-only


def test_load_transform(tmp_path, rng):
    q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    f = tmp_path / "z.txt"
    np.savetxt(f, q, fmt="%.17g")
    op = load_transform(str(f))
    assert op.orthonormal and np.max(np.abs(op.Z - q)) <= 1e-14
    g = tmp_path / "g.txt"
    g.write_text("# upper triangular\n2 1\n0 1\n")
    op = make_transform(str(g), 2)
    assert not op.orthonormal
    np.testing.assert_allclose(op.Z @ op.Z_inv, np.eye(2), atol=1e-15)
    bad = tmp_path / "bad.txt"
    bad.write_text("1 2\n3\n")
    with pytest.raises(TransformError):
        load_transform(str(bad))
    with pytest.raises(ShapeError):
        make_transform(str(f), 4)


def test_forward_trivial_cases(rng):
    t = rng.standard_normal((3, 2, 4))
    assert np.array_equal(l_forward(t, identity_transform(4)), t)
    s = rng.standard_normal((3, 2, 1))
    assert np.array_equal(l_forward(s, dct_matrix(1)), s)
    scaled = TransformOp(np.array([[2.0]]), np.array([[0.5]]))
    assert np.array_equal(l_forward(s, scaled), 2 * s)
    with pytest.raises(ShapeError):
        l_forward(t, dct_matrix(3))


def test_forward_inverse_roundtrip(rng):
    t = rng.standard_normal((3, 2, 4))
    assert rel(l_inverse(l_forward(t, dct_matrix(4)), dct_matrix(4)), t) <= 1e-13


def test_facewise_product_oracle(rng):
    a, b = rng.standard_normal((2, 3, 2)), rng.standard_normal((3, 4, 2))
    want = np.stack([a[:, :, k] @ b[:, :, k] for k in range(2)], axis=-1)
    assert rel(facewise_product(a, b), want) <= 1e-14
    eye = np.repeat(np.eye(3)[:, :, None], 2, axis=2)
    assert rel(facewise_product(eye, b), b) <= 1e-15
    with pytest.raises(ShapeError):
        facewise_product(a, a)


def test_p1_reduces_to_matrix_algebra(rng):
    L = dct_matrix(1)
    a, b = rng.standard_normal((3, 4, 1)), rng.standard_normal((4, 2, 1))
    assert rel(l_product(a, b, L)[:, :, 0], a[:, :, 0] @ b[:, :, 0]) <= 1e-15
    assert np.array_equal(l_transpose(a, L)[:, :, 0], a[:, :, 0].T)


def test_identity_transform_is_facewise(rng):
    L = identity_transform(3)
    a, b = rng.standard_normal((2, 3, 3)), rng.standard_normal((3, 2, 3))
    assert rel(l_product(a, b, L), facewise_product(a, b)) <= 1e-15
    want = np.stack([a[:, :, k].T for k in range(3)], axis=-1)
    assert np.array_equal(l_transpose(a, L), want)


@settings(max_examples=40, deadline=None)
@given(seeds, small_p)
def test_l_product_laws(seed, p):
    r = np.random.default_rng(seed)
    for L in transforms(p, r):
        a, b = r.standard_normal((3, 3, p)), r.standard_normal((3, 4, p))
        c, b2 = r.standard_normal((4, 2, p)), r.standard_normal((3, 4, p))
        eye = l_identity(3, L)
        assert rel(l_product(a, eye, L), a) <= 1e-12
        assert rel(l_product(eye, a, L), a) <= 1e-12
        assert rel(l_product(l_product(a, b, L), c, L), l_product(a, l_product(b, c, L), L)) <= 1e-11
        assert rel(l_product(a, b + b2, L), l_product(a, b, L) + l_product(a, b2, L)) <= 1e-11
        assert rel(l_transpose(l_transpose(b, L), L), b) <= 1e-12
        assert rel(l_transpose(l_product(a, b, L), L),
                   l_product(l_transpose(b, L), l_transpose(a, L), L)) <= 1e-11


@settings(max_examples=40)
@given(seeds, small_p)
def test_norm_preservation_orthonormal(seed, p):
    r = np.random.default_rng(seed)
    t = r.standard_normal((3, 5, p))
    for L in transforms(p, r)[:3]:
        assert abs(np.linalg.norm(l_forward(t, L)) - np.linalg.norm(t)) <= 1e-12 * np.linalg.norm(t)


@pytest.mark.parametrize("p", [1, 2, 4])
def test_predicates(p, rng):
    L = dct_matrix(p)
    eye = l_identity(3, L)
    assert is_l_orthogonal(eye, L) and is_f_diagonal(eye, L) and is_l_invertible(eye, L)
    # per-slice QR in the transform domain gives an L-orthogonal tensor
    q_hat = np.stack([np.linalg.qr(rng.standard_normal((4, 4)))[0] for _ in range(p)], axis=-1)
    q = l_inverse(q_hat, L)
    assert is_l_orthogonal(q, L)
    assert rel(l_product(l_transpose(q, L), q, L), l_identity(4, L)) <= 1e-12
    assert not is_l_orthogonal(2 * q, L)
    a = rng.standard_normal((3, 3, p))
    assert not is_f_diagonal(a, L)
    a_hat = l_forward(a, L)
    a_hat[:, :, p - 1] = 0.0
    assert not is_l_invertible(l_inverse(a_hat, L), L)
    with pytest.raises(ShapeError):
        is_l_orthogonal(rng.standard_normal((2, 3, p)), L)


def test_batched_leading_axes(rng):
    L = dct_matrix(3)
    a, b = rng.standard_normal((5, 2, 3, 3)), rng.standard_normal((5, 3, 4, 3))
    got = l_product(a, b, L)
    for i in range(5):
        assert rel(got[i], l_product(a[i], b[i], L)) <= 1e-15
