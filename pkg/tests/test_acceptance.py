"""Desk-scale acceptance checks, one test per criterion.

Each test recomputes its quantities from the raw trajectory or operator (grid values,
coefficients, dense oracles) instead of reading the library's own summary numbers
where an independent route exists.  Runtime limits are asserted alongside.
"""
import io
import time

import numpy as np
import pytest
from scipy import integrate

from lieflow.continuation import continuation_alpha
from lieflow.extensions import AnisotropySpec
from lieflow.galerkin_flow import FlowParams, GalerkinSystem, simulate
from lieflow.lie_algebra import CrossProductAlgebra, builtin
from lieflow.selftest import run_selftest
from lieflow.spectral_domain import DomainSpec, build_fourier_basis, build_neumann_basis, build_weighted_basis
from lieflow.stray_field import DemagOperator
from lieflow.weak_verify import energy_ledger_check, weak_residual


class Clock:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.start


def angles(theta, phi):
    return np.stack([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)], -1)


def sphere_wrap(G, N):
    d = DomainSpec("flat_torus", (2 * np.pi, 2 * np.pi), (G, G))
    X, Y = d.mesh()
    return build_fourier_basis(d, N), angles(Y, X)


def polar_waves(G=32, N=45):
    d = DomainSpec("neumann_box", (np.pi, np.pi), (G, G))
    X, Y = d.mesh()
    th = 0.6 * np.cos(X) * np.cos(Y) + 0.3
    return build_neumann_basis(d, N), angles(th, np.cos(Y) + 0.5 * np.cos(2 * X))


def grid_field(basis, beta):
    """u(x) = sum_i beta_i w_i(x) on the grid."""
    return np.einsum("i...,ia->...a", basis.modes, beta)


def gram(algebra):
    return algebra.inner(np.eye(algebra.dim)[:, None, :], np.eye(algebra.dim)[None, :, :])


def test_criterion_1_algebra_identities(criterion):
    rng = np.random.default_rng(11)
    worst_inv = worst_jac = 0.0
    killing_ok = True
    with Clock() as clk:
        for name in ("so3", "su2", "so4"):
            alg = builtin(name)
            X, Y, Z = rng.standard_normal((3, 1000, alg.dim))
            inv = alg.inner(alg.bracket(X, Y), Z) + alg.inner(Y, alg.bracket(X, Z))
            scale = alg.norm(X) * alg.norm(Y) * alg.norm(Z)
            worst_inv = max(worst_inv, float(np.max(np.abs(inv) / scale)))
            jac = (alg.bracket(X, alg.bracket(Y, Z)) + alg.bracket(Y, alg.bracket(Z, X))
                   + alg.bracket(Z, alg.bracket(X, Y)))
            worst_jac = max(worst_jac, float(np.max(np.linalg.norm(jac, axis=-1) / scale)))
            # Killing form from the ad matrices themselves: trace(ad e_a ad e_b)
            ads = [alg.ad(e) for e in np.eye(alg.dim)]
            B = np.array([[np.trace(a @ b) for b in ads] for a in ads])
            killing_ok &= bool(np.linalg.eigvalsh(B)[-1] < 0)
    ok = worst_inv < 1e-12 and worst_jac < 1e-12 and killing_ok and clk.seconds < 5
    criterion(ok, f"ad-invariance {worst_inv:.1e}, jacobi {worst_jac:.1e}, {clk.seconds:.1f}s")


def test_criterion_2_antisymmetry(criterion):
    alg = builtin("so3")
    basis, _ = polar_waves(16, 20)
    system = GalerkinSystem(alg, basis, FlowParams(alpha=0.5, epsilon=0.05))
    rng = np.random.default_rng(12)
    anti = trip = 0.0
    M = np.kron(np.eye(basis.N), gram(alg))
    with Clock() as clk:
        for _ in range(10):
            beta = rng.normal(0, 0.3, (basis.N, 3))
            A = system.assemble_A(beta)
            for _ in range(20):
                v, w = rng.standard_normal((2, basis.N * 3))
                v /= np.linalg.norm(v)
                w /= np.linalg.norm(w)
                # antisymmetric in the block metric pairing
                anti = max(anti, abs((A @ v) @ M @ w + v @ M @ (A @ w)))
            rhs = rng.standard_normal((basis.N, 3))
            x = system.solve(system.ball(system.grid_values(beta)), rhs)
            back = x + system.apply_A(beta, x)
            trip = max(trip, float(np.max(np.abs(back - rhs))))
    ok = anti < 1e-10 and trip < 1e-12 and clk.seconds < 10
    criterion(ok, f"antisymmetry {anti:.1e}, round trip {trip:.1e}")


def test_criterion_3_l2_law(criterion):
    alg = builtin("so3")
    basis, u0 = sphere_wrap(32, 16)
    g = gram(alg)
    with Clock() as clk:
        p0 = FlowParams(mode="gill_torus", epsilon=0.0, T=1.0, dt=1e-3, stride=10)
        tr = simulate(alg, basis, p0, u0)
        mass = np.einsum("sia,ab,sib->s", tr.betas, g, tr.betas)
        drift = float(np.max(np.abs(mass - mass[0])) / mass[0])
        # eps > 0: integrate |grad u|^2 = sum lam_i |beta_i|^2 with Simpson on every step
        p1 = FlowParams(mode="gill_torus", epsilon=0.05, T=1.0, dt=1e-3, stride=1)
        tr = simulate(alg, basis, p1, u0)
        mass = np.einsum("sia,ab,sib->s", tr.betas, g, tr.betas)
        grad = np.einsum("i,sia,ab,sib->s", basis.eigenvalues, tr.betas, g, tr.betas)
        dissipated = np.concatenate([[0.0], integrate.cumulative_simpson(grad, x=tr.times)])
        law = mass + 2 * 0.05 * dissipated
        identity = float(np.max(np.abs(law - law[0])) / law[0])
    ok = drift < 1e-8 and identity < 1e-6 and clk.seconds < 60
    criterion(ok, f"eps=0 drift {drift:.1e}, eps=0.05 identity {identity:.1e}, {clk.seconds:.1f}s")


def test_criterion_4_sphere_bound(criterion):
    alg = builtin("so3")
    # full capacity of the 16^2 grid: the truncation holds every harmonic the flow excites
    basis, u0 = sphere_wrap(16, 225)
    with Clock() as clk:
        tr = simulate(alg, basis, FlowParams(mode="gill_torus", epsilon=0.05, T=1.0, dt=1e-3, stride=5), u0)
        dV = basis.domain.cell_volume
        over = q = 0.0
        for beta in tr.betas:
            r = alg.norm(grid_field(basis, beta))
            over = max(over, float(np.max(r - 1)))
            out = r > 1
            q = max(q, float(np.sum(r[out] ** 2 * (1 - 1 / r[out])) * dV))
    assert tr.times[-1] == pytest.approx(1.0)
    ok = over <= 1e-6 and q <= 1e-8 and clk.seconds < 60
    criterion(ok, f"max(|u|-1) {over:.1e}, q {q:.1e}, {clk.seconds:.1f}s")


def macrospin(algebra, theta=np.pi / 3):
    d = DomainSpec("neumann_box", (1.0,), (4,))
    u0 = np.broadcast_to(angles(theta, 0.0), (4, 3)).copy()
    p = FlowParams(anisotropy=AnisotropySpec.diagonal([0.0, 0.0, 1.0]), T=1.0, dt=1e-3)
    return simulate(algebra, build_neumann_basis(d, 1), p, u0)


def test_criterion_5_macrospin(criterion):
    with Clock() as clk:
        tr = macrospin(builtin("so3"))
    u = grid_field(tr.system.basis, tr.final_beta)
    # u_t = 2 u3 (u x e3): rotation about e3 at rate -2 cos(theta)
    theta, t = np.pi / 3, tr.times[-1]
    exact = angles(theta, -2 * np.cos(theta) * t)
    err = float(np.max(np.abs(u - exact)))
    ok = err < 1e-6 and clk.seconds < 5
    criterion(ok, f"terminal error {err:.1e}, {clk.seconds:.1f}s")


def test_criterion_6_cross_product(criterion):
    a, c = builtin("so3"), CrossProductAlgebra()
    with Clock() as clk:
        d1 = float(np.max(np.abs(macrospin(a).betas - macrospin(c).betas)))
        basis, u0 = sphere_wrap(16, 16)
        p = FlowParams(mode="gill_torus", epsilon=0.05, alpha=0.1, T=0.2, dt=1e-3, stride=20)
        d2 = float(np.max(np.abs(simulate(a, basis, p, u0).betas - simulate(c, basis, p, u0).betas)))
    ok = d1 < 1e-12 and d2 < 1e-12 and clk.seconds < 30
    criterion(ok, f"macrospin {d1:.1e}, torus {d2:.1e}")


def ball_field(G):
    d = DomainSpec("neumann_box", (1.0, 1.0, 1.0), (G, G, G))
    X, Y, Z = d.mesh()
    r = np.sqrt((X - 0.5) ** 2 + (Y - 0.5) ** 2 + (Z - 0.5) ** 2)
    u = np.zeros(d.grid + (3,))
    u[r < 0.4, 2] = 1.0
    return DemagOperator(d), u, r < 0.2


def test_criterion_7_stray_field(criterion):
    op, ball, core = ball_field(32)
    rng = np.random.default_rng(17)
    slack_c = slack_l = np.inf
    with Clock() as clk:
        for _ in range(100):
            u, v = rng.standard_normal((2,) + op.domain.grid + (3,))
            h = op.demag_field(u)
            slack_c = min(slack_c, float(np.sum(u * u) - np.sum(h * h)) / float(np.sum(u * u)))
            dh = h - op.demag_field(v)
            slack_l = min(slack_l, float(np.sum((u - v) ** 2) - np.sum(dh * dh)) / float(np.sum((u - v) ** 2)))
        h = op.demag_field(ball)
        ball_err = float(np.max(np.abs(h[core, 2] + 1 / 3)) * 3)
    ok = slack_c >= -1e-10 and slack_l >= -1e-10 and ball_err < 0.10 and clk.seconds < 120
    criterion(ok, f"slack {min(slack_c, slack_l):.3f}, ball error {ball_err:.1%}, {clk.seconds:.0f}s")


@pytest.mark.slow
def test_uniform_ball_64():
    op, ball, core = ball_field(64)
    h = op.demag_field(ball)
    assert np.max(np.abs(h[core, 2] + 1 / 3)) * 3 < 0.05


def test_criterion_8_energy_ledger(criterion):
    alg = builtin("so3")
    d = DomainSpec("neumann_box", (1.0, 1.0, 1.0), (8, 8, 8))
    basis = build_neumann_basis(d, 20)
    X, Y, Z = d.mesh()
    u0 = angles(0.8 * np.cos(np.pi * X) * np.cos(np.pi * Z) + 0.6, 2 * np.cos(np.pi * Y))
    p = FlowParams(alpha=0.1, epsilon=0.05, anisotropy=AnisotropySpec.diagonal([0.0, 1.0, 1.0]), demag=True,
                   T=0.2, dt=5e-4, stride=20)
    with Clock() as clk:
        rep = energy_ledger_check(simulate(alg, basis, p, u0), bounds_samples=20_000)
        never_exceeds = bool(np.all(rep.lhs <= rep.rhs))
        b2, w0 = polar_waves(16, 20)
        sch = simulate(alg, b2, FlowParams(T=0.5, dt=1e-3, scheme="implicit_midpoint", stride=50), w0)
        G = np.einsum("i,sia,ab,sib->s", b2.eigenvalues, sch.betas, gram(alg), sch.betas)
        drift = float(np.max(np.abs(G - G[0])) / (G[0] * sch.times[-1]))
    ok = never_exceeds and drift < 1e-6 and clk.seconds < 120
    criterion(ok, f"min margin {rep.min_margin:.2e}, Schroedinger drift {drift:.1e}/time")


def test_criterion_9_weak_residual(criterion):
    alg = builtin("so3")
    basis, u0 = polar_waves()
    res = {}
    with Clock() as clk:
        for eps in (0.1, 0.05, 0.025):
            for dt in (4e-3, 2e-3):
                tr = simulate(alg, basis, FlowParams(epsilon=eps, T=0.5, dt=dt, stride=5), u0)
                rep = weak_residual(tr, form="integrated")
                assert len(rep.entries) == 32
                res[eps, dt] = rep.max_abs
    dt_ratio = max(res[e, 2e-3] / res[e, 4e-3] for e in (0.1, 0.05, 0.025))
    eps_ratio = max(res[0.05, 2e-3] / res[0.1, 2e-3], res[0.025, 2e-3] / res[0.05, 2e-3])
    ok = dt_ratio <= 1.05 and eps_ratio <= 1.05 and clk.seconds < 300
    criterion(ok, f"worst ratio dt {dt_ratio:.4f}, eps {eps_ratio:.3f}")


def test_criterion_10_alpha_continuation(criterion):
    alg = builtin("so3")
    basis, u0 = polar_waves()
    with Clock() as clk:
        rep = continuation_alpha(alg, basis, FlowParams(epsilon=0.05, T=0.5, dt=2e-3, stride=5), u0,
                                 [0.1, 0.05, 0.01])
    energies = [r.damping_energy for r in rep.rows]
    # the a priori energy inequality gives a constant shared by every alpha
    bound = min(energy_ledger_check(tr).rhs[-1] for tr in rep.trajectories[:3])
    pairs = [abs(r.damping_pairing) for r in rep.rows] + [abs(rep.reference.damping_pairing)]
    decreasing = all(b < a for a, b in zip(pairs, pairs[1:]))
    ok = max(energies) <= bound and decreasing and clk.seconds < 300
    criterion(ok, f"max alpha D {max(energies):.3f} <= {bound:.3f}, pairings {', '.join(f'{x:.2e}' for x in pairs)}")


def test_criterion_11_weighted_basis(criterion):
    d = DomainSpec("flat_torus", (2 * np.pi,), (256,))
    x = d.mesh()[0]
    f = 2 + np.sin(x)
    with Clock() as clk:
        basis = build_weighted_basis(d, f, 8)
        # dense periodic three-point stencil with face values (f_i + f_{i+1}) / 2
        h = d.spacing[0]
        face = 0.5 * (f + np.roll(f, -1)) / h**2
        L = np.diag(face + np.roll(face, 1)) - np.diag(face[:-1], 1) - np.diag(face[:-1], -1)
        L[0, -1] = L[-1, 0] = -face[-1]
        dense = np.linalg.eigvalsh(L)[:8]
    err = float(np.max(np.abs(basis.eigenvalues - dense)))
    ground = basis.modes[0]
    flat = float(np.ptp(ground) / np.max(np.abs(ground)))
    ok = err < 1e-8 and abs(basis.eigenvalues[0]) < 1e-10 and flat < 1e-8 and clk.seconds < 10
    criterion(ok, f"eigenvalue error {err:.1e}, lambda_1 {basis.eigenvalues[0]:.1e}")


def test_criterion_12_selftest(criterion):
    outputs, times = [], []
    for _ in range(2):
        buf = io.StringIO()
        with Clock() as clk:
            passed = run_selftest(stream=buf)
        outputs.append((passed, buf.getvalue()))
        times.append(clk.seconds)
    same = outputs[0] == outputs[1]
    ok = outputs[0][0] and same and max(times) < 300
    criterion(ok, f"{'identical' if same else 'DIFFERING'} output, {max(times):.0f}s per run")
