import numpy as np
import pytest

from cncdtv import (
    AffineFieldOperator,
    DirectionField,
    GeneratorSpec,
    Image,
    VectorField,
    affine_norm_bound,
    apply_affine,
    dtv_value,
    estimate_directions,
    generate,
    load_direction_csv,
    save_direction_csv,
)


def angle_dist(a, b):
    """Distance between orientations (defined modulo pi)."""
    d = np.mod(a - b, np.pi)
    return np.minimum(d, np.pi - d)


def test_field_validation():
    with pytest.raises(ValueError):
        DirectionField(alpha=np.array([0.5]), theta=np.array([0.0]))
    with pytest.raises(ValueError):
        DirectionField(alpha=np.array([1.0]), theta=np.array([2.0]))
    fld = DirectionField.identity(5)
    assert fld.is_identity and fld.n == 5


def test_identity_field_all_modes_noop(rng):
    n = 17
    fld = DirectionField.identity(n)
    u = VectorField(n, rng.standard_normal(2 * n))
    for mode in ("forward", "inverse", "inverse_adjoint", "adjoint"):
        out = apply_affine(AffineFieldOperator(fld, mode), u)
        np.testing.assert_allclose(out.data, u.data, atol=0.0)


def test_forward_single_pixel_rotation():
    fld = DirectionField(alpha=np.array([2.0]), theta=np.array([np.pi / 2]))
    u = VectorField(1, np.array([1.0, 0.0]))
    out = apply_affine(AffineFieldOperator(fld, "forward"), u)
    np.testing.assert_allclose(out.data, [0.0, 1.0], atol=1e-15)


def test_inverse_undoes_forward_single_pixel():
    fld = DirectionField(alpha=np.array([2.0]), theta=np.array([np.pi / 2]))
    u = VectorField(1, np.array([0.3, -0.7]))
    fwd = apply_affine(AffineFieldOperator(fld, "forward"), u)
    back = apply_affine(AffineFieldOperator(fld, "inverse"), fwd)
    np.testing.assert_allclose(back.data, u.data, atol=1e-15)


def test_inverse_consistency_random_fields(random_field, rng):
    for seed in range(5):
        fld = random_field(40, seed=seed)
        u = rng.standard_normal(80)
        fwd = AffineFieldOperator(fld, "forward").apply_raw(u)
        back = AffineFieldOperator(fld, "inverse").apply_raw(fwd)
        np.testing.assert_allclose(back, u, rtol=1e-12, atol=1e-12)


def test_inverse_adjoint_is_adjoint_of_inverse(random_field, rng):
    fld = random_field(64, seed=3)
    inv = AffineFieldOperator(fld, "inverse")
    inv_adj = AffineFieldOperator(fld, "inverse_adjoint")
    for _ in range(20):
        u = rng.standard_normal(128)
        w = rng.standard_normal(128)
        lhs = float(np.dot(inv.apply_raw(u), w))
        rhs = float(np.dot(u, inv_adj.apply_raw(w)))
        assert abs(lhs - rhs) <= 1e-10 * (np.linalg.norm(u) * np.linalg.norm(w) + 1)


def test_adjoint_mode_is_adjoint_of_forward(random_field, rng):
    fld = random_field(32, seed=9)
    fwd = AffineFieldOperator(fld, "forward")
    adj = AffineFieldOperator(fld, "adjoint")
    for _ in range(10):
        u = rng.standard_normal(64)
        w = rng.standard_normal(64)
        lhs = float(np.dot(fwd.apply_raw(u), w))
        rhs = float(np.dot(u, adj.apply_raw(w)))
        assert abs(lhs - rhs) <= 1e-10 * (np.linalg.norm(u) * np.linalg.norm(w) + 1)


def test_contraction_of_inverse_modes(random_field, rng):
    for seed in range(3):
        fld = random_field(50, seed=seed)
        for mode in ("inverse", "inverse_adjoint"):
            op = AffineFieldOperator(fld, mode)
            for _ in range(34):
                u = rng.standard_normal(100)
                assert np.linalg.norm(op.apply_raw(u)) <= np.linalg.norm(u) + 1e-12


def test_affine_norm_bound():
    assert affine_norm_bound(DirectionField.identity(7)) == 1.0
    fld = DirectionField.constant(7, alpha=4.0, theta=0.3)
    assert affine_norm_bound(fld) == 1.0


def test_dtv_value_reduces_to_l12_for_identity(rng):
    n = 25
    u = VectorField(n, rng.standard_normal(2 * n))
    expect = float(np.sum(np.hypot(u.first(), u.second())))
    got = dtv_value(u, DirectionField.identity(n))
    np.testing.assert_allclose(got, expect, rtol=1e-13)


def test_estimate_constant_image_tie_break():
    img = Image.from_grid(np.full((12, 12), 0.6))
    fld = estimate_directions(img, alpha_global=3.0)
    assert np.all(fld.theta == 0.0)
    assert np.all(fld.alpha == 3.0)


def _interior_median_theta(fld, width, height, border):
    th = fld.theta.reshape(height, width)
    return np.median(th[border:-border, border:-border])


def test_estimate_stripe_orientations():
    img = generate(
        GeneratorSpec(kind="texture", width=96, height=96, seed=3, options={"angle_deg": 30.0})
    )
    border = 2 * int(np.ceil(3 * 2.0))
    # default: dominant gradient orientation, perpendicular to the stripes
    fld_g = estimate_directions(img, orientation="gradient")
    med_g = _interior_median_theta(fld_g, 96, 96, border)
    assert np.degrees(angle_dist(med_g, np.radians(30.0 - 90.0))) < 3.0
    # level-line mode returns the stripe direction itself
    fld_l = estimate_directions(img, orientation="level-line")
    med_l = _interior_median_theta(fld_l, 96, 96, border)
    assert np.degrees(angle_dist(med_l, np.radians(30.0))) < 3.0


def test_estimate_barcode_orientations():
    img = generate(GeneratorSpec(kind="barcode", width=96, height=96, seed=5))
    border = 2 * int(np.ceil(3 * 2.0))
    fld_g = estimate_directions(img, orientation="gradient")
    med_g = _interior_median_theta(fld_g, 96, 96, border)
    assert np.degrees(angle_dist(med_g, 0.0)) < 3.0  # horizontal gradients
    fld_l = estimate_directions(img, orientation="level-line")
    med_l = _interior_median_theta(fld_l, 96, 96, border)
    assert np.degrees(angle_dist(med_l, np.pi / 2)) < 3.0  # vertical level lines


def test_estimate_angle_range(random_field):
    img = generate(GeneratorSpec(kind="geometric", width=40, height=40, seed=1))
    fld = estimate_directions(img, alpha_global=2.0)
    assert np.all(fld.theta >= -np.pi / 2) and np.all(fld.theta <= np.pi / 2)


def test_estimate_rejects_bad_scales(piecewise_image):
    with pytest.raises(ValueError):
        estimate_directions(piecewise_image, sigma_g=0.0)
    with pytest.raises(ValueError):
        estimate_directions(piecewise_image, alpha_global=0.5)


def test_direction_csv_round_trip(tmp_path, random_field):
    fld = random_field(23, seed=12)
    path = tmp_path / "dirs.csv"
    save_direction_csv(path, fld)
    back = load_direction_csv(path)
    np.testing.assert_allclose(back.alpha, fld.alpha, rtol=1e-11)
    np.testing.assert_allclose(back.theta, fld.theta, rtol=0, atol=1e-11)
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        load_direction_csv(bad)
