import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ttiga.geometry import (
    GeometryError,
    Interface,
    MultiPatch,
    Patch,
    box_patch,
    builtin_geometry,
    eval_geometry,
    eval_jacobian,
    eval_omega,
    eval_Q,
    load_multipatch,
    quarter_annulus_patch,
    resolve_geometry,
    save_multipatch,
    validate_multipatch,
)
from ttiga.splines import make_space

points = st.tuples(*[st.floats(0.05, 0.95)] * 3).map(np.array)


def fd_jacobian(patch, x, h=1e-6):
    cols = []
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        cols.append((eval_geometry(patch, x + e) - eval_geometry(patch, x - e)) / (2 * h))
    return np.stack(cols, axis=-1)


@pytest.mark.parametrize("name", ["three_cubes", "four_cuboids", "two_annuli"])
def test_builtins_validate(name):
    mp = builtin_geometry(name)
    rep = validate_multipatch(mp)
    assert rep.ok, rep.issues
    assert all(g < 1e-12 for g in rep.max_gap.values())


def test_unknown_builtin():
    with pytest.raises(GeometryError):
        builtin_geometry("torus")


@settings(max_examples=30, deadline=None)
@given(points)
def test_annulus_jacobian_omega_q_vs_finite_differences(x):
    patch = quarter_annulus_patch(1.0, 2.0, 0.0, 1.0)
    J = fd_jacobian(patch, x)
    assert np.allclose(eval_jacobian(patch, x), J, atol=1e-5)
    assert np.isclose(eval_omega(patch, x), abs(np.linalg.det(J)), rtol=1e-5)
    Ji = np.linalg.inv(J)
    assert np.allclose(eval_Q(patch, x), Ji @ Ji.T * abs(np.linalg.det(J)), atol=1e-5)


@settings(max_examples=30, deadline=None)
@given(points)
def test_annulus_maps_onto_the_ring(x):
    X = eval_geometry(quarter_annulus_patch(1.0, 2.0, 0.0, 1.0), x)
    r = np.hypot(X[0], X[1])
    assert 1.0 - 1e-12 <= r <= 2.0 + 1e-12
    assert np.isclose(r, 1.0 + x[0])  # radial parameter is linear
    assert np.isclose(X[2], x[2])


def test_weight_grid_vs_finite_differences():
    patch = quarter_annulus_patch(1.0, 2.0, 0.0, 1.0)
    t = np.array([0.2, 0.5, 0.8])
    h = 1e-6
    W, dW = patch.weight_grid(t, t, t)
    Wp, _ = patch.weight_grid(t, t + h, t)
    Wm, _ = patch.weight_grid(t, t - h, t)
    assert np.allclose(dW[..., 1], (Wp - Wm) / (2 * h), atol=1e-6)
    assert np.allclose(dW[..., 0], 0) and np.allclose(dW[..., 2], 0)
    W1, dW1 = box_patch((0, 0, 0), (1, 1, 1)).weight_grid(t, t, t)
    assert np.all(W1 == 1) and np.all(dW1 == 0)


def test_box_patch_is_affine():
    patch = box_patch((1, 2, 3), (2, 4, 6), degree=2)
    x = np.array([0.3, 0.6, 0.9])
    assert np.allclose(eval_geometry(patch, x), [1.3, 3.2, 5.7])
    assert np.isclose(eval_omega(patch, x), 6.0)
    assert np.allclose(eval_Q(patch, x), np.diag([6.0, 1.5, 6.0 / 9]))


def test_singular_jacobian_raises():
    cp = np.zeros((2, 2, 2, 3))
    cp[1, :, :, 0] = 1.0
    cp[:, 1, :, 1] = 1.0  # third direction collapsed
    sp = make_space(1)
    with pytest.raises(GeometryError, match="singular Jacobian"):
        eval_omega(Patch((sp, sp, sp), cp), [0.5, 0.5, 0.5])


def test_point_outside_unit_cube():
    with pytest.raises(GeometryError):
        eval_geometry(box_patch((0, 0, 0), (1, 1, 1)), [1.2, 0.0, 0.0])


def test_patch_input_checks():
    sp = make_space(1)
    with pytest.raises(GeometryError):
        Patch((sp, sp, sp), np.zeros((3, 2, 2, 3)))
    with pytest.raises(GeometryError):
        Patch((sp, sp, sp), np.zeros((2, 2, 2, 3)), -np.ones((2, 2, 2)))


def test_interface_checks():
    with pytest.raises(GeometryError):
        Interface(1, 0, 0, "high", "low")
    with pytest.raises(GeometryError):
        Interface(0, 1, 0, "high", "high")
    with pytest.raises(GeometryError):
        Interface(0, 1, 3, "high", "low")


def test_gap_detected():
    a, b = box_patch((0, 0, 0), (1, 1, 1)), box_patch((1.1, 0, 0), (2.1, 1, 1))
    trims = ((True, False, True, True, True, True), (False, True, True, True, True, True))
    rep = validate_multipatch(MultiPatch((a, b), (Interface(0, 1, 0, "high", "low"),), trims))
    assert not rep.ok and "do not coincide" in rep.issues[0]


def test_mismatched_nurbs_weights_detected():
    a = quarter_annulus_patch(1.0, 2.0, 0.0, 1.0)
    w = np.array(a.weights)
    w[:, 1, 0] *= 1.5
    b = Patch(a.spaces, quarter_annulus_patch(1.0, 2.0, 1.0, 2.0).control_points, w)
    mp = MultiPatch((a, b), (Interface(0, 1, 2, "high", "low"),), builtin_geometry("two_annuli").boundary_trim)
    rep = validate_multipatch(mp)
    assert not rep.ok and any("weight" in s for s in rep.issues)


def test_non_nested_knots_detected():
    lo = box_patch((0, 0, 0), (1, 1, 1))
    s3, s4 = make_space(1, [1 / 3]), make_space(1, [0.5])
    spaces = [(lo.spaces[0], s3, s3), (lo.spaces[0], s4, s3)]
    mp = builtin_geometry("three_cubes")
    mp2 = MultiPatch(mp.patches[:2], mp.interfaces[:1], (mp.boundary_trim[0], (False,) + (True,) * 5))
    rep = validate_multipatch(mp2, spaces=spaces)
    assert not rep.ok


def test_trim_on_interface_face_rejected():
    mp = builtin_geometry("three_cubes")
    with pytest.raises(GeometryError):
        MultiPatch(mp.patches, mp.interfaces, ((True,) * 6,) * 3)


def test_file_round_trip(tmp_path):
    for name in ("four_cuboids", "two_annuli"):
        mp = builtin_geometry(name)
        path = tmp_path / f"{name}.json"
        save_multipatch(mp, path)
        back = load_multipatch(path)
        assert back.interfaces == mp.interfaces
        assert back.boundary_trim == mp.boundary_trim
        for p, q in zip(mp.patches, back.patches):
            assert np.array_equal(p.control_points, q.control_points)
            assert (p.weights is None) == (q.weights is None)
        assert validate_multipatch(resolve_geometry(str(path))).ok


def test_malformed_file(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"patches": [{"degrees": [1, 1, 1]}]}')
    with pytest.raises(GeometryError):
        load_multipatch(path)
