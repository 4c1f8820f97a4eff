"""Observed convergence order of the time steppers inside and across the unit sphere.

Inside the ball the right-hand side is smooth and the RK4 error ratio under dt halving
approaches 16 (4 for implicit midpoint).  A field whose Galerkin projection crosses
|u| = 1 meets the kink of the ball projection u / max(|u|, 1) and the RK4 ratio drops.

    python scripts/time_order.py
"""
from dataclasses import replace

import numpy as np

from lieflow.galerkin_flow import FlowParams, GalerkinSystem, init_coeffs, run
from lieflow.lie_algebra import builtin
from lieflow.spectral_domain import DomainSpec, build_fourier_basis

T = 0.2


def final(system, beta0, dt, scheme):
    p = replace(system.params, dt=dt, T=T, stride=10**6, scheme=scheme)
    return run(GalerkinSystem(system.algebra, system.basis, p), beta0, check=False)


def main():
    alg = builtin("so3")
    d = DomainSpec("flat_torus", (2 * np.pi, 2 * np.pi), (16, 16))
    basis = build_fourier_basis(d, 8)
    system = GalerkinSystem(alg, basis, FlowParams(mode="gill_torus", alpha=0.2, epsilon=0.05))

    rng = np.random.default_rng(0)
    inside = 0.05 * rng.standard_normal((8, 3))
    inside[0] = (0.0, 0.0, np.pi)  # constant mode is 1 / (2 pi), so |u| is about 0.5
    X, Y = d.mesh()
    th, ph = 1.0 + 0.5 * np.sin(Y), X + 0.3 * np.cos(Y)
    unit = np.stack([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)], -1)
    crossing, _ = init_coeffs(basis, alg, unit)

    dts = (2e-2, 1e-2, 5e-3, 2.5e-3)
    for label, beta0 in (("inside the ball", inside), ("crossing the sphere", crossing)):
        ref = final(system, beta0, 1.25e-4 / 2, "rk4")
        print(f"{label}: max |u| along the reference run {ref.ledger['max_norm_seen'].max():.3f}")
        for scheme in ("rk4", "implicit_midpoint"):
            errs = [np.max(np.abs(final(system, beta0, dt, scheme).final_beta - ref.final_beta)) for dt in dts]
            ratios = ", ".join(f"{a / b:.2f}" for a, b in zip(errs, errs[1:]))
            print(f"  {scheme:<18} errors {', '.join(f'{e:.2e}' for e in errs)}  ratios {ratios}")


if __name__ == "__main__":
    main()
