import numpy as np
import pytest

from oracles import dense_galerkin, dense_rhs, trimmed_index
from ttiga.assembly import (
    AssemblyError,
    AssemblyOptions,
    adaptive_weights,
    assemble_patch,
    assemble_rhs,
    discretize,
    evaluate_solution,
    geometry_weights,
    interpolate_function,
    interpolation_spaces,
    refined_space,
    weight_samples,
)
from ttiga.geometry import builtin_geometry
from ttiga.splines import greville_points, make_space

EPS = 1e-12


def rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


def patch_and_disc(name, j, p, e):
    mp = builtin_geometry(name)
    return mp.patches[j], discretize(mp, p, e)[j]


@pytest.mark.parametrize("name,j,p,e", [("three_cubes", 1, 3, 2), ("four_cuboids", 2, 2, 3), ("two_annuli", 0, 3, 2)])
def test_tt_operators_match_dense_with_same_weights(name, j, p, e):
    # same interpolated weights on both routes isolates the TT factorisation
    patch, disc = patch_and_disc(name, j, p, e)
    ops = assemble_patch(patch, disc, EPS)
    M, K = dense_galerkin(patch, disc, weights=ops.weights)
    assert rel(ops.mass.to_dense(), M) < 1e-11
    assert rel(ops.stiffness.to_dense(), K) < 1e-11


def test_annulus_operators_converge_to_exact_weights():
    patch, disc = patch_and_disc("two_annuli", 1, 2, 2)
    ops = assemble_patch(patch, disc, 1e-10)
    M, K = dense_galerkin(patch, disc)
    assert rel(ops.mass.to_dense(), M) < 1e-9
    assert rel(ops.stiffness.to_dense(), K) < 1e-9


def test_symmetric_positive_definite():
    patch, disc = patch_and_disc("two_annuli", 0, 2, 2)
    ops = assemble_patch(patch, disc, EPS)
    for A in (ops.mass.to_dense(), ops.stiffness.to_dense()):
        assert np.allclose(A, A.T, atol=1e-12 * np.abs(A).max())
        # one trimmed face per patch is Dirichlet, so K is definite as well
        assert np.linalg.eigvalsh(0.5 * (A + A.T)).min() > 0


def test_polynomial_solution_basis_option():
    patch, disc = patch_and_disc("two_annuli", 0, 2, 2)
    opts = AssemblyOptions(rational_basis=False)
    ops = assemble_patch(patch, disc, EPS, opts)
    M, K = dense_galerkin(patch, disc, rational=False)
    assert rel(ops.mass.to_dense(), M) < 1e-9
    assert rel(ops.stiffness.to_dense(), K) < 1e-9
    assert not any(k == "h" or k[0] == "g" for k in ops.weights if k != "omega")


def test_weights_interpolate_at_greville_nodes():
    patch = builtin_geometry("two_annuli").patches[0]
    isp = interpolation_spaces(patch, 2, 4)
    W = geometry_weights(patch, isp, 1e-14)
    g = [greville_points(s) for s in isp]
    exact = weight_samples(patch, *g)
    for key, w in W.items():
        assert np.allclose(w.evaluate(*g), exact[key], atol=1e-12)


def test_adaptive_interpolation_degree():
    cube = builtin_geometry("three_cubes").patches[0]
    ann = builtin_geometry("two_annuli").patches[0]
    assert adaptive_weights(cube, 3, 1e-8)[1] == 2
    W, off = adaptive_weights(ann, 3, 1e-6)
    assert 2 < off <= 16
    assert adaptive_weights(ann, 3, 1e-6, AssemblyOptions(interp_degree_offset=2))[1] == 2
    # axis-aligned boxes have diagonal Q
    assert set(adaptive_weights(cube, 3, 1e-8)[0]) == {"omega", (0, 0), (1, 1), (2, 2)}


@pytest.mark.parametrize("name", ["three_cubes", "two_annuli"])
def test_rhs_matches_dense_quadrature(name):
    patch, disc = patch_and_disc(name, 0, 3, 2)
    f = lambda x, y, z: np.sin(x) * np.cos(y) + z**2
    b = assemble_rhs(patch, disc, f, 1e-14)
    assert rel(b.full_vector(), dense_rhs(patch, disc, f, disc.degree + 2)) < 1e-12


def test_zero_source_gives_zero_rhs():
    patch, disc = patch_and_disc("three_cubes", 0, 2, 2)
    b = assemble_rhs(patch, disc, lambda x, y, z: 0 * x, 1e-10)
    assert b.norm() == 0.0 and b.shape == disc.trimmed_sizes


@pytest.mark.parametrize("name", ["three_cubes", "two_annuli"])
def test_interpolation_reproduces_space_members(name):
    # affine functions lie in every solution space, including the rational one on annuli
    patch, disc = patch_and_disc(name, 0, 3, 2)
    f = lambda x, y, z: 2 * x - y + 3 * z + 1
    c = interpolate_function(patch, disc, f, 1e-14)
    t = np.linspace(0, 1, 5)
    X, _ = patch.grid(t, t, t)
    full = type(disc)(disc.spaces, (False,) * 6)
    v = evaluate_solution(patch, full, c, [t, t, t])
    assert np.allclose(v, f(X[..., 0], X[..., 1], X[..., 2]), atol=1e-10)


def test_trimming_matches_dense_index():
    patch, disc = patch_and_disc("three_cubes", 1, 2, 2)
    ops = assemble_patch(patch, disc, EPS)
    full = type(disc)(disc.spaces, (False,) * 6)
    Mf = assemble_patch(patch, full, EPS).mass.to_dense()
    idx = trimmed_index(disc)
    assert np.allclose(ops.mass.to_dense(), Mf[np.ix_(idx, idx)])
    assert ops.trimmed_sizes == (4, 2, 2)


def test_discretization_sizes_and_errors():
    mp = builtin_geometry("three_cubes")
    discs = discretize(mp, 5, [4, 2, 1])
    assert [d.full_sizes for d in discs] == [(9, 9, 9), (7, 7, 7), (6, 6, 6)]
    assert refined_space(make_space(1), 2, 3).n == 5
    with pytest.raises(AssemblyError):
        refined_space(make_space(1, [0.5]), 2, 3)
