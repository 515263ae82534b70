import numpy as np
import pytest

from cncdtv import (
    Image,
    VectorField,
    apply_gradient,
    apply_gradient_adjoint,
    dtd_max_eigenvalue,
    gradient_matrix,
    operator_norm_sq,
)


def test_image_validation():
    with pytest.raises(ValueError):
        Image(width=2, height=2, data=np.zeros(3))
    with pytest.raises(ValueError):
        Image(width=2, height=2, data=np.array([0.0, 1.0, np.nan, 0.0]))
    with pytest.raises(ValueError):
        Image(width=0, height=2, data=np.zeros(0))
    img = Image.from_grid(np.ones((3, 5)))
    assert img.n == 15 and img.width == 5 and img.height == 3


def test_vectorfield_validation():
    with pytest.raises(ValueError):
        VectorField(n=3, data=np.zeros(5))
    vf = VectorField.zeros(4)
    assert vf.pair(2) == (0.0, 0.0)


def test_constant_image_has_zero_gradient():
    for w, h in ((1, 1), (3, 4), (7, 2)):
        g = apply_gradient(Image(width=w, height=h, data=np.full(w * h, 0.37)))
        assert np.all(g.data == 0.0)


def test_gradient_2x2_stencil():
    img = Image.from_grid(np.array([[0.0, 1.0], [2.0, 3.0]]))
    g = apply_gradient(img)
    dh = g.first().reshape(2, 2)
    dv = g.second().reshape(2, 2)
    assert dh[0, 0] == 1.0 and dh[1, 0] == 1.0
    assert np.all(dh[:, 1] == 0.0)
    assert dv[0, 0] == 2.0 and dv[0, 1] == 2.0
    assert np.all(dv[1, :] == 0.0)


def test_gradient_linearity(rng):
    w, h = 6, 5
    x = rng.standard_normal(w * h)
    y = rng.standard_normal(w * h)
    a, b = 2.75, -0.6
    lhs = apply_gradient(Image(w, h, a * x + b * y)).data
    rhs = a * apply_gradient(Image(w, h, x)).data + b * apply_gradient(Image(w, h, y)).data
    np.testing.assert_allclose(lhs, rhs, atol=1e-13)


def test_gradient_null_space(rng):
    w, h = 5, 4
    g = apply_gradient(Image(w, h, np.full(w * h, 0.8)))
    assert np.all(g.data == 0.0)
    # and conversely: Dx = 0 implies x constant on a connected grid
    mat = gradient_matrix(w, h)
    _, svals, vt = np.linalg.svd(mat)
    null_dim = int(np.sum(svals < 1e-12)) + (w * h - len(svals))
    assert null_dim == 1
    kernel_vec = vt[-1]
    assert np.std(kernel_vec) < 1e-12


def test_adjoint_zero_field():
    out = apply_gradient_adjoint(VectorField.zeros(12), width=4, height=3)
    assert np.all(out.data == 0.0)


def test_adjoint_identity_random(rng):
    for w, h in ((4, 4), (9, 5), (16, 16)):
        n = w * h
        for _ in range(5):
            x = rng.standard_normal(n)
            u = rng.standard_normal(2 * n)
            dx = apply_gradient(Image(w, h, x)).data
            dtu = apply_gradient_adjoint(VectorField(n, u), w, h).data
            lhs = float(np.dot(dx, u))
            rhs = float(np.dot(x, dtu))
            scale = np.linalg.norm(x) * np.linalg.norm(u) + 1.0
            assert abs(lhs - rhs) <= 1e-10 * scale


def test_adjoint_size_mismatch():
    with pytest.raises(ValueError):
        apply_gradient_adjoint(VectorField.zeros(6), width=4, height=3)


def test_dtd_matches_dense_matrix():
    img = Image.from_grid(np.array([[0.0, 1.0], [2.0, 3.0]]))
    mat = gradient_matrix(2, 2)
    dx = apply_gradient(img)
    dtdx = apply_gradient_adjoint(dx, 2, 2).data
    np.testing.assert_allclose(dtdx, mat.T @ mat @ img.data, atol=1e-13)


def test_dense_gradient_norm_bound():
    for w, h in ((2, 2), (4, 3), (8, 8)):
        mat = gradient_matrix(w, h)
        top = float(np.linalg.eigvalsh(mat.T @ mat)[-1])
        assert top <= 8.0
        np.testing.assert_allclose(top, dtd_max_eigenvalue(w, h), atol=1e-10)


def test_power_iteration_16x16_in_paper_range():
    est = operator_norm_sq(16, 16, 200)
    assert 7.0 < est <= 8.0


def test_power_iteration_1x1_zero():
    assert operator_norm_sq(1, 1, 5) == 0.0


def test_power_iteration_64x64():
    est = operator_norm_sq(64, 64, 200)
    assert 7.9 <= est <= 8.0


def test_power_iteration_bounded_by_8():
    for w, h in ((2, 2), (5, 9), (32, 32), (100, 3)):
        assert operator_norm_sq(w, h, 60) <= 8.0 + 1e-12


def test_power_iteration_monotone_in_iters():
    prev = 0.0
    for iters in (1, 2, 5, 10, 25, 60):
        est = operator_norm_sq(12, 12, iters)
        assert est >= prev - 1e-12
        prev = est
