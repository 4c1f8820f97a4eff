"""Desk-scale invariant suite behind ``lieflow selftest``.

Every check is deterministic (fixed seeds, fixed step counts) and the printed table
contains no timings, so two invocations produce identical output.
"""
from __future__ import annotations

import sys
from dataclasses import dataclass

import numpy as np

from .continuation import continuation_alpha
from .extensions import AnisotropySpec
from .galerkin_flow import FlowParams, GalerkinSystem, simulate
from .lie_algebra import (CrossProductAlgebra, LieAlgebra, adinvariance_residual, builtin, jacobi_residual,
                          killing_matrix)
from .spectral_domain import (DomainSpec, build_fourier_basis, build_neumann_basis, build_weighted_basis,
                              weighted_operator)
from .stray_field import DemagOperator
from .weak_verify import energy_ledger_check, weak_residual


@dataclass(frozen=True)
class Check:
    name: str
    value: float
    limit: float
    passed: bool

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{self.name:<46} {self.value:>11.3e} {self.limit:>10.1e}  {status}"


def _below(name, value, limit):
    return Check(name, float(value), float(limit), bool(value <= limit))


def _above(name, value, limit):
    return Check(name, float(value), float(limit), bool(value > limit))


def flip_bracket_table(algebra: LieAlgebra) -> LieAlgebra:
    """Copy of ``algebra`` whose bracket evaluation uses c[0,1,2] and c[1,0,2] with the
    wrong sign while the declared structure constants stay intact (mutation hook)."""
    m = algebra.dim
    table = algebra.structure_constants.copy()
    table[0, 1, 2] *= -1
    table[1, 0, 2] *= -1
    mutated = LieAlgebra(algebra.name, algebra.structure_constants, algebra.metric, algebra.scale)
    object.__setattr__(mutated, "_flat", table.reshape(m, m * m))
    return mutated


# ---------------------------------------------------------------- scenarios

def torus_so3(G=32, N=16):
    d = DomainSpec("flat_torus", (2 * np.pi, 2 * np.pi), (G, G))
    X, Y = d.mesh()
    u0 = np.stack([np.sin(Y) * np.cos(X), np.sin(Y) * np.sin(X), np.cos(Y)], -1)
    return d, build_fourier_basis(d, N), u0


def box_reference(G=32, N=45):
    d = DomainSpec("neumann_box", (np.pi, np.pi), (G, G))
    X, Y = d.mesh()
    th = 0.6 * np.cos(X) * np.cos(Y) + 0.3
    ph = np.cos(Y) + 0.5 * np.cos(2 * X)
    u0 = np.stack([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)], -1)
    return d, build_neumann_basis(d, N), u0


def macrospin(algebra, theta=np.pi / 3, T=1.0, dt=1e-3):
    d = DomainSpec("neumann_box", (1.0,), (4,))
    b = build_neumann_basis(d, 1)
    u0 = np.broadcast_to([np.sin(theta), 0.0, np.cos(theta)], (4, 3)).copy()
    p = FlowParams(anisotropy=AnisotropySpec.diagonal([0.0, 0.0, 1.0]), T=T, dt=dt)
    return simulate(algebra, b, p, u0)


# ---------------------------------------------------------------- checks

def check_algebras(sign_flip: bool = False):
    out = []
    for name in ("so3", "su2", "so4"):
        alg = builtin(name)
        if sign_flip and name == "so3":
            alg = flip_bracket_table(alg)
        c = alg.structure_constants
        out.append(_below(f"{name} jacobi identity", jacobi_residual(c), 1e-12))
        out.append(_above(f"{name} killing form negative definite",
                          np.linalg.eigvalsh(-killing_matrix(c))[0], 0.0))
        out.append(_below(f"{name} ad-invariance (1000 triples)", adinvariance_residual(alg, 1000, 0), 1e-12))
    return out


def check_su2_pauli():
    sigma = [np.array([[0, 1], [1, 0]], complex), np.array([[0, -1j], [1j, 0]]), np.array([[1, 0], [0, -1]], complex)]
    e = [1j * s for s in sigma]
    alg = builtin("su2")
    err = 0.0
    for i in range(3):
        for j in range(3):
            comm = e[i] @ e[j] - e[j] @ e[i]
            # coordinates in the basis i sigma_k: trace(e_k^H M) / 2
            coords = np.array([np.trace(ek.conj().T @ comm).real / 2 for ek in e])
            err = max(err, float(np.max(np.abs(alg.bracket(np.eye(3)[i], np.eye(3)[j]) - coords))))
    return [_below("su2 bracket = Pauli commutator", err, 1e-14)]


def check_antisymmetry():
    alg = builtin("so3")
    d, b, _ = box_reference(16, 20)
    system = GalerkinSystem(alg, b, FlowParams(alpha=0.5, epsilon=0.05))
    rng = np.random.default_rng(2)
    anti = trip = 0.0
    for _ in range(10):
        beta = rng.normal(0, 0.3, (b.N, 3))
        A = system.assemble_A(beta)
        for _ in range(20):
            v, w = rng.normal(size=(2, b.N * 3))
            anti = max(anti, abs(v @ A @ w + w @ A @ v) / (np.linalg.norm(v) * np.linalg.norm(w)))
        rhs = rng.normal(size=(b.N, 3))
        J = system.ball(system.grid_values(beta))
        x = system.solve(J, rhs)
        back = x + system.apply_A(beta, x)
        trip = max(trip, float(np.max(np.abs(back - rhs)) / np.max(np.abs(rhs))))
    return [_below("A(beta) antisymmetry", anti, 1e-10), _below("(Id + A) solve round trip", trip, 1e-12)]


def check_l2_law():
    alg = builtin("so3")
    d, b, u0 = torus_so3()
    out = []
    for eps, limit, label in ((0.0, 1e-8, "L2 conservation (eps = 0)"), (0.05, 1e-6, "L2 identity (eps = 0.05)")):
        tr = simulate(alg, b, FlowParams(mode="gill_torus", epsilon=eps, T=1.0, dt=1e-3, stride=50), u0)
        mi = tr.mass_identity()
        out.append(_below(label, np.max(np.abs(mi - mi[0])) / mi[0], limit))
    return out


def check_sphere_bound():
    alg = builtin("so3")
    d, b, u0 = torus_so3(16, 15 ** 2)
    tr = simulate(alg, b, FlowParams(mode="gill_torus", epsilon=0.05, T=1.0, dt=1e-3, stride=50), u0)
    return [_below("sphere bound max(|u| - 1)", tr.max_sphere_violation, 1e-6),
            _below("sphere functional q(t)", float(np.max(tr.ledger["q"])), 1e-8)]


def _macrospin_error(tr, theta=np.pi / 3):
    ang = -2 * np.cos(theta) * tr.times[-1]
    exact = np.array([np.sin(theta) * np.cos(ang), np.sin(theta) * np.sin(ang), np.cos(theta)])
    return float(np.max(np.abs(tr.system.grid_values(tr.final_beta)[0] - exact)))


def check_macrospin():
    return [_below("macrospin precession (t = 1)", _macrospin_error(macrospin(builtin("so3"))), 1e-6)]


def check_cross_product():
    a, c = builtin("so3"), CrossProductAlgebra()
    diff = float(np.max(np.abs(macrospin(a).betas - macrospin(c).betas)))
    d, b, u0 = torus_so3(16, 16)
    p = FlowParams(mode="gill_torus", epsilon=0.05, alpha=0.1, T=0.2, dt=1e-3, stride=20)
    diff2 = float(np.max(np.abs(simulate(a, b, p, u0).betas - simulate(c, b, p, u0).betas)))
    return [_below("cross product = structure constants (macrospin)", diff, 1e-12),
            _below("cross product = structure constants (torus)", diff2, 1e-12)]


def check_demag(fields: int = 100):
    d = DomainSpec("neumann_box", (1.0, 1.0, 1.0), (32, 32, 32))
    op = DemagOperator(d)
    rng = np.random.default_rng(3)
    slack_c = slack_l = np.inf
    for _ in range(fields):
        u = rng.normal(size=d.grid + (3,))
        u /= np.linalg.norm(u, axis=-1, keepdims=True)
        v = rng.normal(size=d.grid + (3,))
        v /= np.linalg.norm(v, axis=-1, keepdims=True)
        hh, uu = op.contraction_norms(u)
        slack_c = min(slack_c, (uu - hh) / uu)
        hh, uu = op.contraction_norms(u - v)
        slack_l = min(slack_l, (uu - hh) / uu)
    X, Y, Z = d.mesh()
    r2 = (X - 0.5) ** 2 + (Y - 0.5) ** 2 + (Z - 0.5) ** 2
    u = np.zeros(d.grid + (3,))
    u[r2 < 0.4 ** 2, 2] = 1.0
    h = op.demag_field(u)
    inner = r2 < 0.2 ** 2
    ball_err = float(np.max(np.abs(h[inner, 2] + 1 / 3)) * 3)
    return [Check("stray field contraction slack", slack_c, -1e-10, bool(slack_c >= -1e-10)),
            Check("stray field Lipschitz slack", slack_l, -1e-10, bool(slack_l >= -1e-10)),
            _below("uniform ball interior field -u/3 (32^3)", ball_err, 0.10)]


def energy_ledger_run(G=8, N=20, T=0.2, dt=5e-4):
    """3D box with anisotropy and stray field at alpha = 0.1, eps = 0.05."""
    alg = builtin("so3")
    d = DomainSpec("neumann_box", (1.0, 1.0, 1.0), (G, G, G))
    b = build_neumann_basis(d, N)
    X, Y, Z = d.mesh()
    th = 0.8 * np.cos(np.pi * X) * np.cos(np.pi * Z) + 0.6
    ph = 2 * np.cos(np.pi * Y)
    u0 = np.stack([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)], -1)
    p = FlowParams(alpha=0.1, epsilon=0.05, anisotropy=AnisotropySpec.diagonal([0.0, 1.0, 1.0]), demag=True,
                   T=T, dt=dt, stride=20)
    return simulate(alg, b, p, u0)


def schroedinger_run(T=0.5):
    alg = builtin("so3")
    d, b, u0 = box_reference(16, 20)
    p = FlowParams(T=T, dt=1e-3, scheme="implicit_midpoint", stride=50)
    return simulate(alg, b, p, u0)


def check_energy_ledger():
    tr = energy_ledger_run()
    rep = energy_ledger_check(tr, bounds_samples=20_000)
    sch = schroedinger_run()
    G = sch.ledger["grad_energy"]
    drift = float(np.max(np.abs(G - G[0])) / (G[0] * sch.times[-1]))
    return [Check("energy inequality margin (min)", rep.min_margin, 0.0, rep.passed),
            _below("energy identity residual / G(0)", np.max(np.abs(rep.identity_residual)) / tr.ledger["grad_energy"][0], 1e-8),
            _below("Schroedinger flow grad energy drift / time", drift, 1e-6)]


def weak_residual_table(eps_values=(0.1, 0.05, 0.025), dts=(4e-3, 2e-3), T=0.5, horizon_samples=5):
    alg = builtin("so3")
    d, b, u0 = box_reference()
    table = {}
    for eps in eps_values:
        for dt in dts:
            tr = simulate(alg, b, FlowParams(epsilon=eps, T=T, dt=dt, stride=horizon_samples), u0)
            table[eps, dt] = weak_residual(tr, form="integrated")
    return table


def check_weak_residual():
    table = weak_residual_table(dts=(4e-3, 2e-3))
    eps = sorted({k[0] for k in table}, reverse=True)
    dts = sorted({k[1] for k in table}, reverse=True)
    worst_dt = max(table[e, dts[1]].max_abs / table[e, dts[0]].max_abs for e in eps)
    worst_eps = max(table[b, dts[-1]].max_abs / table[a, dts[-1]].max_abs for a, b in zip(eps, eps[1:]))
    return [_below("weak residual ratio under dt halving", worst_dt, 1.05),
            _below("weak residual ratio under eps halving", worst_eps, 1.05)]


def check_alpha_continuation():
    alg = builtin("so3")
    d, b, u0 = box_reference(32, 45)
    rep = continuation_alpha(alg, b, FlowParams(epsilon=0.05, T=0.5, dt=2e-3, stride=5), u0, [0.1, 0.05, 0.01])
    bound = max(r.damping_energy for r in rep.rows)
    pairs = [r.damping_pairing for r in rep.rows]
    ratio = max(b / a for a, b in zip(pairs, pairs[1:]))
    return [_below("alpha int int |u_t|^2 (max over alpha)", bound, 1.0),
            _below("damping pairing ratio along alpha", ratio, 1.0)]


def check_weighted_basis():
    d = DomainSpec("flat_torus", (2 * np.pi,), (256,))
    f = 2 + np.sin(d.mesh()[0])
    b = build_weighted_basis(d, f, 8, method="sparse")
    dense = np.linalg.eigvalsh(weighted_operator(d, f).toarray())[:8]
    err = float(np.max(np.abs(b.eigenvalues - dense)))
    const = float(np.ptp(b.modes[0]) / np.max(np.abs(b.modes[0])))
    return [_below("weighted eigenvalues vs dense", err, 1e-8),
            _below("weighted lowest eigenvalue", abs(b.eigenvalues[0]), 1e-10),
            _below("weighted ground state constant", const, 1e-8)]


GROUPS = (
    ("algebra identities", check_algebras),
    ("su2 basis", check_su2_pauli),
    ("Galerkin operator", check_antisymmetry),
    ("L2 law", check_l2_law),
    ("sphere bound", check_sphere_bound),
    ("macrospin", check_macrospin),
    ("cross product", check_cross_product),
    ("stray field", check_demag),
    ("energy ledger", check_energy_ledger),
    ("weak residual", check_weak_residual),
    ("alpha continuation", check_alpha_continuation),
    ("weighted basis", check_weighted_basis),
)


def run_selftest(sign_flip: bool = False, stream=None) -> bool:
    stream = stream or sys.stdout
    print(f"{'check':<46} {'value':>11} {'limit':>10}  status", file=stream)
    all_ok = True
    for _, func in GROUPS:
        checks = func(sign_flip) if func is check_algebras else func()
        for c in checks:
            print(c.line(), file=stream)
            stream.flush()
            all_ok &= c.passed
    print(f"selftest {'passed' if all_ok else 'FAILED'}", file=stream)
    return all_ok
