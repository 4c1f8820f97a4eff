"""Interior stray field of a uniformly magnetized ball under grid refinement.

The exact interior field is -u/3.  The table lists the mean and worst deviation over
the inner half radius and the energy against vol/6 of the voxelized ball.

    python scripts/demag_ball_refinement.py [--grids 16,24,32,48,64]
"""
import argparse
import time

import numpy as np

from lieflow.spectral_domain import DomainSpec
from lieflow.stray_field import DemagOperator


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--grids", default="16,24,32,48,64")
    ap.add_argument("--radius", type=float, default=0.4)
    args = ap.parse_args()

    print(f"{'G':>4} {'mean rel err':>13} {'max rel err':>12} {'energy/(vol/6)':>15} {'seconds':>8}")
    for G in (int(v) for v in args.grids.split(",")):
        start = time.perf_counter()
        d = DomainSpec("neumann_box", (1.0, 1.0, 1.0), (G, G, G))
        op = DemagOperator(d)
        X, Y, Z = d.mesh()
        r = np.sqrt((X - 0.5) ** 2 + (Y - 0.5) ** 2 + (Z - 0.5) ** 2)
        inside = r < args.radius
        u = np.zeros(d.grid + (3,))
        u[inside, 2] = 1.0
        h = op.demag_field(u)[r < args.radius / 2, 2]
        rel = np.abs(h + 1 / 3) * 3
        energy = op.demag_energy(u) / (np.sum(inside) * d.cell_volume / 6)
        print(f"{G:4d} {rel.mean():13.3e} {rel.max():12.3e} {energy:15.4f} {time.perf_counter() - start:8.2f}")


if __name__ == "__main__":
    main()
