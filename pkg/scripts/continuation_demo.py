"""Epsilon and alpha continuation on the reference box scenario.

Prints both comparison tables and optionally writes them as CSV.  The weak residual
should shrink with eps; alpha * int int |u_t|^2 stays bounded while the damping pairing
decays toward the undamped reference.

    python scripts/continuation_demo.py [--out DIR] [--jobs 1]
"""
import argparse
import csv
from pathlib import Path

import numpy as np

from lieflow.continuation import continuation_alpha, continuation_epsilon
from lieflow.galerkin_flow import FlowParams
from lieflow.lie_algebra import builtin
from lieflow.spectral_domain import DomainSpec, build_neumann_basis


def reference(G=32, N=45):
    d = DomainSpec("neumann_box", (np.pi, np.pi), (G, G))
    X, Y = d.mesh()
    th = 0.6 * np.cos(X) * np.cos(Y) + 0.3
    ph = np.cos(Y) + 0.5 * np.cos(2 * X)
    u0 = np.stack([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)], -1)
    return build_neumann_basis(d, N), u0


def _cell(text):
    try:
        return f"{float(text):14.6e}"
    except ValueError:
        return f"{text:>14}"


def show(title, report, out):
    rows = list(report.csv_rows())
    print(f"\n{title}")
    print("  ".join(f"{c:>14}" for c in rows[0]))
    for row in rows[1:]:
        print("  ".join(_cell(c) for c in row))
    for flag in report.flags:
        print(f"flag: {flag}")
    if out:
        with open(out / f"{title.split()[0]}.csv", "w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerows(rows)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--T", type=float, default=0.5)
    args = ap.parse_args()
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)

    alg = builtin("so3")
    basis, u0 = reference()
    params = FlowParams(epsilon=0.05, T=args.T, dt=2e-3, stride=5)
    show("epsilon continuation", continuation_epsilon(alg, basis, params, u0, [0.1, 0.05, 0.025],
                                                      workers=args.jobs), args.out)
    show("alpha continuation", continuation_alpha(alg, basis, params, u0, [0.1, 0.05, 0.01],
                                                  workers=args.jobs), args.out)


if __name__ == "__main__":
    main()
