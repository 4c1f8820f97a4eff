import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from lieflow.spectral_domain import (
    BasisError,
    DomainSpec,
    build_basis,
    build_fourier_basis,
    build_neumann_basis,
    build_weighted_basis,
    dealias_filter,
    divergence,
    gradient,
    laplacian,
    partial,
    quadrature_inner,
    weighted_operator,
)


def neumann_5point(grid, lengths):
    """Cell-centred 5-point Neumann Laplacian (ghost cells mirror the boundary cell)."""
    ops = []
    for g, L in zip(grid, lengths):
        h = L / g
        d = np.full(g, 2.0)
        d[0] = d[-1] = 1.0
        ops.append(sp.diags([-np.ones(g - 1), d, -np.ones(g - 1)], [-1, 0, 1]) / h**2)
    eye = [sp.identity(g) for g in grid]
    return sp.kron(ops[0], eye[1]) + sp.kron(eye[0], ops[1])


def test_neumann_1d_mode():
    d = DomainSpec("neumann_box", (np.pi,), (64,))
    b = build_neumann_basis(d, 5)
    np.testing.assert_allclose(b.eigenvalues, [0, 1, 4, 9, 16])
    x = d.mesh()[0]
    np.testing.assert_allclose(b.modes[2], np.sqrt(2 / np.pi) * np.cos(2 * x), atol=1e-14)
    np.testing.assert_allclose(b.modes[0], 1 / np.sqrt(np.pi), atol=1e-14)


def test_neumann_2d_against_five_point():
    d = DomainSpec("neumann_box", (1.0, 2.0), (32, 64))
    b = build_neumann_basis(d, 5)
    dense = np.linalg.eigvalsh(neumann_5point(d.grid, d.lengths).toarray())[:5]
    assert dense[0] == pytest.approx(0.0, abs=1e-9)
    np.testing.assert_allclose(b.eigenvalues[1:], dense[1:], rtol=0.02)


@pytest.mark.parametrize("kind, lengths, grid, N", [
    ("neumann_box", (1.0, 2.0), (12, 10), 40),
    ("neumann_box", (1.0, 1.0, 1.0), (6, 6, 6), 30),
    ("flat_torus", (2 * np.pi, 3.0), (16, 12), 60),
    ("flat_torus", (2 * np.pi,), (33,), 33),
])
def test_gram_identity(kind, lengths, grid, N):
    b = build_basis(DomainSpec(kind, lengths, grid), N)
    assert np.max(np.abs(b.gram() - np.eye(N))) < 1e-10
    assert b.eigenvalues[0] == 0.0
    assert np.ptp(b.modes[0]) < 1e-12
    assert np.all(np.diff(b.eigenvalues) >= -1e-12)


@given(st.integers(4, 12), st.integers(4, 12))
def test_tensor_capacity(gx, gy):
    d = DomainSpec("neumann_box", (1.0, 1.5), (gx, gy))
    build_neumann_basis(d, gx * gy)
    with pytest.raises(BasisError):
        build_neumann_basis(d, gx * gy + 1)


def test_fourier_excludes_nyquist():
    d = DomainSpec("flat_torus", (2 * np.pi,), (8,))
    b = build_fourier_basis(d, 7)
    np.testing.assert_allclose(b.eigenvalues, [0, 1, 1, 4, 4, 9, 9])
    with pytest.raises(BasisError):
        build_fourier_basis(d, 8)


def test_eigen_relation_on_grid():
    d = DomainSpec("flat_torus", (2 * np.pi, 2 * np.pi), (16, 16))
    b = build_fourier_basis(d, 40)
    for lam, w in zip(b.eigenvalues, b.modes):
        np.testing.assert_allclose(-laplacian(d, w), lam * w, atol=1e-10)


def test_weighted_constant_coupling():
    d = DomainSpec("flat_torus", (2 * np.pi,), (256,))
    one = build_weighted_basis(d, np.ones(d.grid), 7)
    # the three-point stencil gives (4/h^2) sin^2(k h / 2) for the integer squares
    np.testing.assert_allclose(one.eigenvalues, [0, 1, 1, 4, 4, 9, 9], rtol=1e-3, atol=1e-12)
    three = build_weighted_basis(d, np.full(d.grid, 3.0), 7)
    np.testing.assert_allclose(three.eigenvalues, 3 * one.eigenvalues, rtol=1e-12, atol=1e-12)


def test_weighted_sine_coupling_dense_oracle():
    d = DomainSpec("flat_torus", (2 * np.pi,), (256,))
    f = 2 + np.sin(d.mesh()[0])
    # seven modes close the degenerate pairs, so the spans are comparable
    b = build_weighted_basis(d, f, 7, method="sparse")
    mat = weighted_operator(d, f).toarray()
    lam, vec = np.linalg.eigh(mat)
    np.testing.assert_allclose(b.eigenvalues, lam[:7], atol=1e-8)
    assert abs(b.eigenvalues[0]) < 1e-10
    assert np.ptp(b.modes[0]) < 1e-8
    vecs = b.modes.reshape(7, -1).T * np.sqrt(d.cell_volume)
    proj = vec[:, :7].T @ vecs
    sv = np.linalg.svd(proj, compute_uv=False)
    assert np.min(sv) > 1 - 1e-8
    assert b.eigen_residual < 1e-8


def test_weighted_residual_and_2d():
    d = DomainSpec("flat_torus", (2 * np.pi, 2 * np.pi), (16, 16))
    X, Y = d.mesh()
    f = 1.5 + 0.5 * np.cos(X) * np.sin(Y)
    b = build_basis(d, 10, f)
    assert b.kind == "weighted"
    assert np.max(np.abs(b.gram() - np.eye(10))) < 1e-10


@pytest.mark.parametrize("fmin", [0.0, -1.0])
def test_weighted_rejects_nonpositive(fmin):
    d = DomainSpec("flat_torus", (2 * np.pi,), (32,))
    f = np.ones(32)
    f[3] = fmin
    with pytest.raises(BasisError):
        build_weighted_basis(d, f, 4)


def test_analyze_single_block():
    d = DomainSpec("flat_torus", (2 * np.pi, 2 * np.pi), (16, 16))
    b = build_fourier_basis(d, 9)
    u = np.zeros(d.grid + (3,))
    u[..., 0] = b.modes[1]
    beta = b.analyze(u)
    expected = np.zeros((9, 3))
    expected[1, 0] = 1.0
    np.testing.assert_allclose(beta, expected, atol=1e-13)


def test_analyze_orthogonal_complement():
    d = DomainSpec("neumann_box", (1.0, 1.0), (16, 16))
    big = build_neumann_basis(d, 20)
    small = build_neumann_basis(d, 10)
    u = np.stack([big.modes[15], big.modes[12]], -1)
    np.testing.assert_allclose(small.analyze(u), 0.0, atol=1e-13)


def test_parseval(rng):
    d = DomainSpec("neumann_box", (1.0, 2.0), (16, 12))
    b = build_neumann_basis(d, 30)
    beta = rng.standard_normal((30, 4))
    u = b.synthesize(beta)
    assert quadrature_inner(d, u, u) == pytest.approx(np.sum(beta**2), rel=1e-12)
    np.testing.assert_allclose(b.analyze(u), beta, atol=1e-12)


def test_analyze_shape_checked():
    d = DomainSpec("neumann_box", (1.0,), (16,))
    with pytest.raises(BasisError):
        build_neumann_basis(d, 4).analyze(np.zeros(15))


def test_derivatives_analytic():
    box = DomainSpec("neumann_box", (np.pi,), (64,))
    x = box.mesh()[0]
    np.testing.assert_allclose(partial(box, np.cos(2 * x), 0), -2 * np.sin(2 * x), atol=1e-9)
    torus = DomainSpec("flat_torus", (2 * np.pi, 2 * np.pi), (32, 32))
    X, Y = torus.mesh()
    u = np.sin(X)[..., None] * np.array([1.0, 0.0, 0.0])
    np.testing.assert_allclose(laplacian(torus, u), -u, atol=1e-12)
    np.testing.assert_allclose(laplacian(torus, np.ones(torus.grid)), 0.0, atol=1e-12)
    np.testing.assert_allclose(laplacian(box, np.ones(box.grid)), 0.0, atol=1e-9)
    g = gradient(torus, np.sin(X) * np.cos(2 * Y))
    assert g.shape == (2, 32, 32)
    np.testing.assert_allclose(divergence(torus, g), -5 * np.sin(X) * np.cos(2 * Y), atol=1e-11)


def test_quadrature_constants():
    d = DomainSpec("neumann_box", (1.0, 2.0, 0.5), (8, 8, 8))
    assert quadrature_inner(d, np.ones(d.grid), np.ones(d.grid)) == pytest.approx(1.0)


def test_quadrature_refinement():
    def integral(g):
        d = DomainSpec("neumann_box", (1.0, 1.0), (g, g))
        X, Y = d.mesh()
        u = np.exp(np.sin(3 * X) * np.cos(2 * Y))
        v = 1 + X * Y
        return quadrature_inner(d, u, v)

    assert integral(16) == pytest.approx(integral(256), rel=0.01)


def test_dealias_keeps_low_modes():
    d = DomainSpec("flat_torus", (2 * np.pi,), (24,))
    x = d.mesh()[0]
    low, high = np.cos(3 * x), np.cos(10 * x)
    np.testing.assert_allclose(dealias_filter(d, low + high), low, atol=1e-13)
    with pytest.raises(BasisError):
        dealias_filter(DomainSpec("neumann_box", (1.0,), (8,)), np.zeros(8))


@pytest.mark.parametrize("kwargs", [
    dict(kind="sphere", lengths=(1.0,), grid=(8,)),
    dict(kind="flat_torus", lengths=(1.0, 1.0), grid=(8,)),
    dict(kind="flat_torus", lengths=(-1.0,), grid=(8,)),
    dict(kind="neumann_box", lengths=(1.0,), grid=(2,)),
])
def test_domain_validation(kwargs):
    with pytest.raises(BasisError):
        DomainSpec(**kwargs)


def test_sparse_weighted_basis_is_reproducible():
    d = DomainSpec("flat_torus", (2 * np.pi,), (256,))
    f = 2 + np.sin(d.mesh()[0])
    a = build_weighted_basis(d, f, 8, method="sparse")
    b = build_weighted_basis(d, f, 8, method="sparse")
    np.testing.assert_array_equal(a.eigenvalues, b.eigenvalues)
    np.testing.assert_array_equal(a.modes, b.modes)
