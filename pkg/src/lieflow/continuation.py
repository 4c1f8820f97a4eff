"""Parameter continuation in the regularization eps and the damping alpha.

Each value is an independent run on the same basis and initial data; runs may execute
in a process pool.  Expectations such as a decreasing weak residual are reported as
flags, and failed runs are collected instead of raised.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .galerkin_flow import FlowParams, GalerkinSystem, Trajectory, init_coeffs, run
from .lie_algebra import LieAlgebra
from .spectral_domain import ModeBasis
from .stray_field import DemagOperator
from .weak_verify import _sides, compute_pairings, standard_battery, weak_residual


class ContinuationError(RuntimeError):
    def __init__(self, parameter: str, value: float, cause: BaseException):
        super().__init__(f"run with {parameter} = {value!r} failed: {cause}")
        self.parameter = parameter
        self.value = value
        self.cause = cause

    def __reduce__(self):
        return type(self), (self.parameter, self.value, self.cause)


@dataclass
class ContinuationRow:
    value: float
    weak_residual: float
    mass_loss: float
    distance_to_previous: float
    damping_energy: float
    damping_pairing: float
    sphere_violation: float

    def as_tuple(self):
        return (self.value, self.weak_residual, self.mass_loss, self.distance_to_previous,
                self.damping_energy, self.damping_pairing, self.sphere_violation)


CSV_HEADER = ("value", "weak_residual", "mass_loss", "distance_to_previous",
              "damping_energy_integral", "damping_pairing", "sphere_violation")


@dataclass
class ContinuationReport:
    parameter: str
    rows: list[ContinuationRow]
    outcomes: list = field(repr=False, default_factory=list)  # Trajectory or ContinuationError per value
    flags: list[str] = field(default_factory=list)
    failures: list[ContinuationError] = field(default_factory=list)
    reference: ContinuationRow | None = None

    @property
    def trajectories(self) -> list[Trajectory]:
        return [o for o in self.outcomes if isinstance(o, Trajectory)]

    def csv_rows(self):
        yield ("parameter",) + CSV_HEADER
        for row in self.rows + ([self.reference] if self.reference else []):
            yield (self.parameter,) + tuple(f"{v:.17g}" for v in row.as_tuple())


def _run_one(job):
    algebra, basis, params, demag, beta0, err = job
    system = GalerkinSystem(algebra, basis, params, demag)
    return run(system, beta0, reconstruction_error=err)


def _execute(jobs, workers: int, parameter: str, values):
    """Run every job; failures are returned as ContinuationError in place of a trajectory."""
    results = []
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_one, job) for job in jobs]
            for v, fut in zip(values, futures):
                try:
                    results.append(fut.result())
                except Exception as exc:
                    results.append(ContinuationError(parameter, v, exc))
    else:
        for v, job in zip(values, jobs):
            try:
                results.append(_run_one(job))
            except Exception as exc:
                results.append(ContinuationError(parameter, v, exc))
    return results


def _damping_pairing(traj: Trajectory, phis, pairings) -> float:
    """Largest |alpha * int int <[u, u_t], phi>| over the battery."""
    lhs_with, _ = _sides(pairings, phis, "llg_derivative", traj.params.alpha, 1.0)
    lhs_without, _ = _sides(pairings, phis, "llg_derivative", 0.0, 1.0)
    diff = lhs_without - lhs_with
    return float(np.max(traj.system.algebra.dual_norm(diff)))


def _row(value, traj: Trajectory, previous: Trajectory | None) -> ContinuationRow:
    phis = standard_battery(float(traj.times[-1] - traj.times[0]) or 1.0, min(8, traj.system.basis.N))
    pairings = compute_pairings(traj, 1 + max(p.mode for p in phis))
    res = weak_residual(traj, phis, form="integrated", pairings=pairings)
    mass = traj.ledger["l2_norm_sq"]
    dist = math.nan
    if previous is not None and len(previous.times) == len(traj.times):
        diff = traj.betas - previous.betas
        dist = float(np.sqrt(np.max(np.sum(traj.system.algebra.inner(diff, diff), axis=1))))
    return ContinuationRow(
        value=float(value),
        weak_residual=res.normalized_max,
        mass_loss=float(mass[0] - mass[-1]),
        distance_to_previous=dist,
        damping_energy=float(traj.ledger["damping_energy_integral"][-1]),
        damping_pairing=_damping_pairing(traj, phis, pairings),
        sphere_violation=traj.max_sphere_violation,
    )


def _check_values(values, name):
    values = [float(v) for v in values]
    if not values:
        raise ValueError(f"{name} list is empty")
    if any(not v > 0 for v in values):
        raise ValueError(f"{name} values must be positive")
    if any(b > a for a, b in zip(values, values[1:])):
        raise ValueError(f"{name} values must be non-increasing")
    return values


def _continuation(parameter, algebra, basis, params, u0, values, workers, demag, reference=None,
                  raise_on_failure=True):
    beta0, err = init_coeffs(basis, algebra, u0)
    all_values = list(values) + ([reference] if reference is not None else [])
    jobs = [(algebra, basis, replace(params, **{parameter: v}), demag, beta0, err) for v in all_values]
    outcomes = _execute(jobs, workers, parameter, all_values)
    if raise_on_failure:
        for out in outcomes:
            if isinstance(out, ContinuationError):
                raise out
    report = ContinuationReport(parameter, [], outcomes)
    prev = None
    for v, out in zip(values, outcomes):
        if isinstance(out, ContinuationError):
            report.failures.append(out)
            continue
        report.rows.append(_row(v, out, prev))
        prev = out
    if reference is not None:
        out = outcomes[-1]
        if isinstance(out, ContinuationError):
            report.failures.append(out)
        else:
            report.reference = _row(reference, out, prev)
    return report


def continuation_epsilon(algebra: LieAlgebra, basis: ModeBasis, params: FlowParams, u0, eps_list,
                         workers: int = 1, demag: DemagOperator | None = None,
                         raise_on_failure: bool = True) -> ContinuationReport:
    """One run per eps; flags a weak residual or Cauchy distance that fails to decrease.

    A failed run raises ContinuationError tagged with its eps unless ``raise_on_failure``
    is off, in which case failures are collected in ``report.failures``.
    """
    values = _check_values(eps_list, "epsilon")
    report = _continuation("epsilon", algebra, basis, params, u0, values, workers, demag,
                           raise_on_failure=raise_on_failure)
    res = [r.weak_residual for r in report.rows]
    done = [r.value for r in report.rows]
    for a, b, va, vb in zip(res, res[1:], done, done[1:]):
        if not b < a:
            report.flags.append(f"weak residual did not decrease from eps={va:g} ({a:.3e}) to eps={vb:g} ({b:.3e})")
    dist = [r.distance_to_previous for r in report.rows[1:]]
    for a, b in zip(dist, dist[1:]):
        if not b < a:
            report.flags.append(f"successive distances not decreasing ({a:.3e} then {b:.3e})")
    return report


def continuation_alpha(algebra: LieAlgebra, basis: ModeBasis, params: FlowParams, u0, alpha_list,
                       workers: int = 1, include_reference: bool = True,
                       demag: DemagOperator | None = None, raise_on_failure: bool = True) -> ContinuationReport:
    """One run per alpha plus an alpha = 0 reference; flags a damping pairing that grows."""
    values = _check_values(alpha_list, "alpha")
    report = _continuation("alpha", algebra, basis, params, u0, values, workers, demag,
                           0.0 if include_reference else None, raise_on_failure)
    pair = [r.damping_pairing for r in report.rows]
    done = [r.value for r in report.rows]
    for a, b, va, vb in zip(pair, pair[1:], done, done[1:]):
        if not b < a:
            report.flags.append(f"damping pairing did not decrease from alpha={va:g} ({a:.3e}) to alpha={vb:g} ({b:.3e})")
    return report
