"""Galerkin ODE systems for algebra-valued Landau-Lifshitz flows and their integration.

The unknown is a block vector ``beta`` of shape ``(N, m)``; the field is
``u = sum_i beta_i w_i``.  Writing ``J = u / max(|u|, 1)``, ``P`` for the projection
onto the span of the modes and ``lam`` for the eigenvalues, the two supported systems
are

``llg_boundary`` (Neumann box)::

    beta' - alpha P[J, u_t] = -eps lam beta - P[J, lap u + h_d(u) - grad Phi(J)] + P F(J)

``gill_torus`` (flat torus, ``lap_f u = div(f grad u)``)::

    alpha0 beta' + alpha P[J, u_t] = -eps lam beta + P[J, lap_f u] + P F(J)

Both have the form ``(alpha0 Id + A) beta' = B`` with ``A`` antisymmetric.  Nonlinear
terms are evaluated on the grid and projected back with the quadrature rule.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse.linalg as spla

from .extensions import AnisotropySpec, ForcingSpec
from .lie_algebra import LieAlgebra
from .spectral_domain import ModeBasis, dealias_filter
from .stray_field import DemagOperator

MODES = ("llg_boundary", "gill_torus")
SCHEMES = ("rk4", "implicit_midpoint")
DENSE_SOLVE_LIMIT = 2048
FIXED_POINT_TOL = 1e-12
FIXED_POINT_MAXITER = 50
MAX_HALVINGS = 10


class ConfigError(ValueError):
    """Invalid parameter; ``field`` names the offending configuration key."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name
        self.detail = message

    def __reduce__(self):
        return type(self), (self.field, self.detail)


class InitialDataError(ValueError):
    pass


class StepRejected(RuntimeError):
    pass


class LedgerBreach(RuntimeError):
    """A runtime invariant failed; ``trajectory`` holds the samples recorded so far."""

    def __init__(self, message: str, trajectory: "Trajectory"):
        super().__init__(message)
        self.trajectory = trajectory

    def __reduce__(self):
        return type(self), (str(self), self.trajectory)


@dataclass(frozen=True)
class FlowParams:
    mode: str = "llg_boundary"
    alpha0: float = 1.0
    alpha: float = 0.0
    epsilon: float = 0.0
    anisotropy: AnisotropySpec | None = None
    forcing: ForcingSpec | None = None
    demag: bool = False
    T: float = 1.0
    dt: float = 1e-3
    scheme: str = "rk4"
    stride: int = 1
    dealias: bool = False
    l2_tolerance: float = 1e-6

    def validate(self, basis: ModeBasis, algebra: LieAlgebra) -> None:
        if self.mode not in MODES:
            raise ConfigError("mode", f"must be one of {MODES}, got {self.mode!r}")
        if self.scheme not in SCHEMES:
            raise ConfigError("scheme", f"must be one of {SCHEMES}, got {self.scheme!r}")
        for name in ("alpha0", "alpha", "epsilon", "T", "dt", "l2_tolerance"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigError(name, "must be finite")
        if self.alpha < 0:
            raise ConfigError("alpha", f"must be >= 0, got {self.alpha}")
        if self.epsilon < 0:
            raise ConfigError("epsilon", f"must be >= 0, got {self.epsilon}")
        if self.alpha0 <= 0:
            raise ConfigError("alpha0", f"must be > 0, got {self.alpha0}")
        if self.dt <= 0:
            raise ConfigError("dt", f"must be > 0, got {self.dt}")
        if self.T < 0:
            raise ConfigError("T", f"must be >= 0, got {self.T}")
        if self.stride < 1:
            raise ConfigError("output.stride", f"must be >= 1, got {self.stride}")
        kind = basis.domain.kind
        if self.mode == "llg_boundary":
            if self.alpha0 != 1.0:
                raise ConfigError("alpha0", "is fixed to 1 in llg_boundary mode")
            if kind != "neumann_box":
                raise ConfigError("domain.kind", "llg_boundary mode runs on a neumann_box")
        else:
            if kind != "flat_torus":
                raise ConfigError("domain.kind", "gill_torus mode runs on a flat_torus")
            if self.demag:
                raise ConfigError("demag", "the stray field is only available in llg_boundary mode")
            if self.anisotropy is not None:
                raise ConfigError("anisotropy.kind", "anisotropy is only available in llg_boundary mode")
        if self.demag and basis.domain.n != algebra.dim:
            raise ConfigError(
                "demag", f"requires space dimension ({basis.domain.n}) = algebra dimension ({algebra.dim})"
            )
        if self.dealias and kind != "flat_torus":
            raise ConfigError("dealias", "dealiasing is only available on flat_torus domains")
        if self.anisotropy is not None and self.anisotropy.matrix.shape[0] != algebra.dim:
            raise ConfigError("anisotropy.lambdas", f"needs {algebra.dim} coefficients")


@dataclass
class Evaluation:
    """Everything computed while evaluating the vector field at one state."""

    beta_dot: np.ndarray
    rates: np.ndarray          # grad energy, |beta'|^2, lam^2 |beta|^2, power
    max_norm: float


@dataclass
class GalerkinState:
    t: float
    beta: np.ndarray


class GalerkinSystem:
    def __init__(self, algebra: LieAlgebra, basis: ModeBasis, params: FlowParams,
                 demag: DemagOperator | None = None):
        params.validate(basis, algebra)
        self.algebra = algebra
        self.basis = basis
        self.params = params
        self.domain = basis.domain
        self.W = basis.matrix
        self.dV = basis.domain.cell_volume
        self.lam = np.asarray(basis.eigenvalues, dtype=float)
        self.points = basis.domain.points() if params.forcing is not None else None
        self.demag = None
        if params.demag:
            self.demag = demag if demag is not None else DemagOperator(basis.domain)
        self.sign = -1.0 if params.mode == "llg_boundary" else 1.0

    # ---------------------------------------------------------------- grid helpers
    @property
    def N(self) -> int:
        return self.basis.N

    @property
    def m(self) -> int:
        return self.algebra.dim

    def grid_values(self, beta) -> np.ndarray:
        """u on the flattened grid, shape (G, m)."""
        return self.W.T @ beta

    def project(self, g) -> np.ndarray:
        if self.params.dealias:
            g = dealias_filter(self.domain, g.reshape(self.domain.grid + (self.m,))).reshape(g.shape)
        return (self.W @ g) * self.dV

    def block_inner(self, x, y) -> float:
        return float(np.sum(self.algebra.inner(x, y)))

    def ball(self, u):
        return self.algebra.project_ball(u)

    def demag_grid(self, u) -> np.ndarray:
        h = self.demag.demag_field(u.reshape(self.domain.grid + (self.m,)))
        return h.reshape(u.shape)

    def source_field(self, u, J):
        """h_d(u) - grad Phi(J) on the grid (llg mode), or None when both are absent."""
        out = None
        if self.demag is not None:
            out = self.demag_grid(u)
        if self.params.anisotropy is not None:
            g = self.params.anisotropy.grad(self.algebra, J)
            out = -g if out is None else out - g
        return out

    def forcing_grid(self, t, J):
        if self.params.forcing is None:
            return None
        return self.params.forcing.value(self.algebra, self.points, t, J)

    def local_field(self, beta, t=0.0) -> np.ndarray:
        """The field bracketed with J: lap u + h_d - grad Phi (llg) or lap_f u (gill)."""
        u = self.grid_values(beta)
        lap = self.grid_values(-self.lam[:, None] * beta)
        if self.params.mode == "gill_torus":
            return lap
        src = self.source_field(u, self.ball(u))
        return lap if src is None else lap + src

    # ---------------------------------------------------------------- A and B
    def apply_A(self, beta, v) -> np.ndarray:
        if self.params.alpha == 0:
            return np.zeros_like(v)
        J = self.ball(self.grid_values(beta))
        return self._apply_A_grid(J, v)

    def _apply_A_grid(self, J, v):
        return self.sign * self.params.alpha * self.project(self.algebra.bracket(J, self.grid_values(v)))

    def assemble_A(self, beta) -> np.ndarray:
        """Dense matrix of A on the flattened (N*m) coordinates, row index i*m + a."""
        N, m = self.N, self.m
        if self.params.alpha == 0:
            return np.zeros((N * m, N * m))
        J = self.ball(self.grid_values(beta))
        return self._assemble_A_grid(J)

    def _assemble_A_grid(self, J):
        N, m = self.N, self.m
        adj = self.algebra.ad(J)                 # (G, m, m): [J, v]_a = adj[a, b] v_b
        Wd = self.W * self.dV
        mat = np.empty((N, m, N, m))
        for a in range(m):
            for b in range(m):
                mat[:, a, :, b] = Wd @ (self.W.T * adj[:, a, b][:, None])
        return self.sign * self.params.alpha * mat.reshape(N * m, N * m)

    def _rhs(self, t, beta):
        """Return B together with the grid quantities needed for the ledger."""
        p = self.params
        u = self.grid_values(beta)
        J = self.ball(u)
        lap = self.grid_values(-self.lam[:, None] * beta)
        B = -p.epsilon * self.lam[:, None] * beta
        src_proj = None
        if p.mode == "llg_boundary":
            B = B - self.project(self.algebra.bracket(J, lap))
            src = self.source_field(u, J)
            if src is not None:
                src_proj = self.project(self.algebra.bracket(J, src))
                B = B - src_proj
        else:
            B = B + self.project(self.algebra.bracket(J, lap))
        F = self.forcing_grid(t, J)
        f_proj = None
        if F is not None:
            f_proj = self.project(F)
            B = B + f_proj
        return B, u, J, src_proj, f_proj

    def assemble_B(self, beta, t=0.0) -> np.ndarray:
        return self._rhs(t, beta)[0]

    def solve(self, J, B) -> np.ndarray:
        """Solve (alpha0 Id + A) x = B."""
        p = self.params
        if p.alpha == 0:
            return B / p.alpha0
        size = self.N * self.m
        if size <= DENSE_SOLVE_LIMIT:
            mat = self._assemble_A_grid(J)
            mat[np.diag_indices(size)] += p.alpha0
            return np.linalg.solve(mat, B.ravel()).reshape(B.shape)
        op = spla.LinearOperator(
            (size, size), dtype=float,
            matvec=lambda x: p.alpha0 * x + self._apply_A_grid(J, x.reshape(B.shape)).ravel(),
        )
        x, info = spla.gmres(op, B.ravel(), x0=(B / p.alpha0).ravel(), rtol=1e-14, atol=0.0,
                             restart=min(size, 60), maxiter=200)
        if info != 0:
            raise StepRejected(f"iterative solve did not converge (info={info})")
        return x.reshape(B.shape)

    def velocity(self, beta, t=0.0) -> np.ndarray:
        B, u, J, _, _ = self._rhs(t, beta)
        return self.solve(J, B)

    def evaluate(self, t, beta) -> Evaluation:
        B, u, J, src_proj, f_proj = self._rhs(t, beta)
        beta_dot = self.solve(J, B)
        alpha = self.params.alpha
        lam = self.lam[:, None]
        ell = -lam * beta
        grad_energy = self.block_inner(lam * beta, beta)
        power = 0.0
        if src_proj is not None:
            power += self.block_inner(ell, src_proj) - alpha * self.block_inner(beta_dot, src_proj)
        if f_proj is not None:
            power += -self.block_inner(ell, f_proj) + alpha * self.block_inner(beta_dot, f_proj)
        rates = np.array([
            grad_energy,
            self.block_inner(beta_dot, beta_dot),
            self.block_inner(lam * lam * beta, beta),
            power,
        ])
        max_norm = float(np.max(self.algebra.norm(u)))
        return Evaluation(beta_dot, rates, max_norm)

    # ---------------------------------------------------------------- diagnostics
    def snapshot_diagnostics(self, beta) -> dict:
        u = self.grid_values(beta)
        r = self.algebra.norm(u)
        outside = r > 1
        q = float(np.sum(np.where(outside, r * r * (1 - 1 / np.where(outside, r, 1.0)), 0.0)) * self.dV)
        out = {
            "l2_norm_sq": self.block_inner(beta, beta),
            "grad_energy": self.block_inner(self.lam[:, None] * beta, beta),
            "sphere_violation": max(float(np.max(r)) - 1.0, 0.0),
            "q": q,
            "demag_energy": 0.0,
            "anisotropy_energy": 0.0,
        }
        if self.demag is not None:
            h = self.demag_grid(u)
            out["demag_energy"] = float(-0.5 * np.sum(self.algebra.inner(h, u)) * self.dV)
        if self.params.anisotropy is not None:
            out["anisotropy_energy"] = float(np.sum(self.params.anisotropy.value(self.algebra, self.ball(u))) * self.dV)
        return out


# -------------------------------------------------------------------- time stepping

def _rk4(system: GalerkinSystem, t, beta, dt, first: Evaluation):
    e1 = first
    e2 = system.evaluate(t + dt / 2, beta + dt / 2 * e1.beta_dot)
    e3 = system.evaluate(t + dt / 2, beta + dt / 2 * e2.beta_dot)
    e4 = system.evaluate(t + dt, beta + dt * e3.beta_dot)
    new = beta + dt / 6 * (e1.beta_dot + 2 * e2.beta_dot + 2 * e3.beta_dot + e4.beta_dot)
    inc = dt / 6 * (e1.rates + 2 * e2.rates + 2 * e3.rates + e4.rates)
    return new, inc, max(e2.max_norm, e3.max_norm, e4.max_norm)


def _midpoint(system: GalerkinSystem, t, beta, dt, first: Evaluation):
    guess = beta + dt * first.beta_dot
    scale = 1.0 + float(np.max(np.abs(beta)))
    for _ in range(FIXED_POINT_MAXITER):
        ev = system.evaluate(t + dt / 2, 0.5 * (beta + guess))
        new = beta + dt * ev.beta_dot
        delta = float(np.max(np.abs(new - guess)))
        guess = new
        if delta <= FIXED_POINT_TOL * scale:
            ev = system.evaluate(t + dt / 2, 0.5 * (beta + new))
            return new, dt * ev.rates, ev.max_norm
        if not np.isfinite(delta):
            break
    raise StepRejected(f"fixed-point iteration stalled at increment {delta:.3e}")


_STEPPERS = {"rk4": _rk4, "implicit_midpoint": _midpoint}


def step(system: GalerkinSystem, state: GalerkinState, dt: float, scheme: str | None = None,
         first: Evaluation | None = None, _depth: int = 0):
    """Advance one step; returns (new state, accumulator increment, max |u| seen, halvings)."""
    scheme = scheme or system.params.scheme
    first = first if first is not None else system.evaluate(state.t, state.beta)
    try:
        new, inc, seen = _STEPPERS[scheme](system, state.t, state.beta, dt, first)
        if not np.all(np.isfinite(new)):
            raise StepRejected("non-finite coefficients")
        return GalerkinState(state.t + dt, new), inc, max(seen, first.max_norm), _depth
    except StepRejected:
        if _depth >= MAX_HALVINGS:
            raise
    half, inc1, seen1, d1 = step(system, state, dt / 2, scheme, first, _depth + 1)
    end, inc2, seen2, d2 = step(system, half, dt / 2, scheme, None, _depth + 1)
    return end, inc1 + inc2, max(seen1, seen2), max(d1, d2)


LEDGER_COLUMNS = (
    "t", "l2_norm_sq", "grad_energy", "sphere_violation", "damping_energy_integral",
    "demag_energy", "weak_residual_latest",
)


@dataclass
class Trajectory:
    """Samples of a run plus the ledger time series (arrays indexed like ``times``)."""

    system: GalerkinSystem
    times: np.ndarray
    betas: np.ndarray
    beta_dots: np.ndarray
    ledger: dict
    max_sphere_violation: float = 0.0
    halvings: int = 0
    steps: int = 0
    reconstruction_error: float = 0.0
    status: str = "ok"

    @property
    def params(self) -> FlowParams:
        return self.system.params

    @property
    def final_beta(self) -> np.ndarray:
        return self.betas[-1]

    def fields(self) -> np.ndarray:
        """u at every sample on the grid, shape (S, *grid, m)."""
        grid = self.system.domain.grid
        return np.stack([self.system.grid_values(b).reshape(grid + (self.system.m,)) for b in self.betas])

    def velocities(self) -> np.ndarray:
        grid = self.system.domain.grid
        return np.stack([self.system.grid_values(b).reshape(grid + (self.system.m,)) for b in self.beta_dots])

    def mass_identity(self) -> np.ndarray:
        p = self.params
        return p.alpha0 * self.ledger["l2_norm_sq"] + 2 * p.epsilon * self.ledger["grad_int"]

    def energy_identity_residual(self) -> np.ndarray:
        """alpha alpha0 D + (alpha0 + alpha eps)/2 (G - G0) + eps L - W, which vanishes exactly."""
        p = self.params
        lg = self.ledger
        return (p.alpha * p.alpha0 * lg["damping_int"]
                + 0.5 * (p.alpha0 + p.alpha * p.epsilon) * (lg["grad_energy"] - lg["grad_energy"][0])
                + p.epsilon * lg["lap_int"] - lg["power_int"])


_ACCUMULATORS = ("grad_int", "damping_int", "lap_int", "power_int")


def init_coeffs(basis: ModeBasis, algebra: LieAlgebra, u0, tol: float = 1e-8):
    """Coefficients of the unit-norm initial field; returns (beta0, L2 reconstruction error)."""
    u0 = np.asarray(u0, dtype=float)
    expected = basis.domain.grid + (algebra.dim,)
    if u0.shape != expected:
        raise InitialDataError(f"initial field has shape {u0.shape}, expected {expected}")
    dev = float(np.max(np.abs(algebra.norm(u0) - 1.0)))
    if not dev <= tol:
        raise InitialDataError(f"initial field is not unit norm: max | |u0| - 1 | = {dev:.3e}")
    beta = basis.analyze(u0)
    diff = basis.synthesize(beta) - u0
    err = math.sqrt(float(np.sum(algebra.inner(diff, diff))) * basis.domain.cell_volume)
    return beta, err


def run(system: GalerkinSystem, beta0, t0: float = 0.0, reconstruction_error: float = 0.0,
        check: bool = True) -> Trajectory:
    """Integrate to ``params.T``, sampling every ``stride`` steps and at the end."""
    p = system.params
    n_steps = max(int(math.ceil(p.T / p.dt - 1e-9)), 0)
    state = GalerkinState(t0, np.array(beta0, dtype=float))
    acc = np.zeros(4)
    times, betas, dots = [], [], []
    rows = {k: [] for k in ("l2_norm_sq", "grad_energy", "sphere_violation", "q", "demag_energy",
                            "anisotropy_energy", "max_norm_seen") + _ACCUMULATORS}
    traj = Trajectory(system, np.array([]), np.zeros((0,) + state.beta.shape), np.zeros((0,) + state.beta.shape),
                      {}, reconstruction_error=reconstruction_error)
    seen = 0.0
    halvings = 0

    def record(ev: Evaluation):
        times.append(state.t)
        betas.append(state.beta.copy())
        dots.append(ev.beta_dot.copy())
        for k, v in system.snapshot_diagnostics(state.beta).items():
            rows[k].append(v)
        rows["max_norm_seen"].append(max(seen, ev.max_norm))
        for k, v in zip(_ACCUMULATORS, acc):
            rows[k].append(v)

    def finish(status):
        traj.times = np.array(times)
        traj.betas = np.array(betas)
        traj.beta_dots = np.array(dots)
        traj.ledger = {k: np.array(v) for k, v in rows.items()}
        traj.ledger["damping_energy_integral"] = p.alpha * traj.ledger["damping_int"]
        traj.max_sphere_violation = max(seen - 1.0, 0.0)
        traj.halvings = halvings
        traj.status = status
        return traj

    ev = system.evaluate(state.t, state.beta)
    seen = ev.max_norm
    record(ev)
    mass0 = p.alpha0 * rows["l2_norm_sq"][0]
    last_mass = rows["l2_norm_sq"][0]
    for k in range(1, n_steps + 1):
        dt = min(p.dt, p.T + t0 - state.t) if k == n_steps else p.dt
        state, inc, s, depth = step(system, state, dt, first=ev)
        traj.steps = k
        halvings = max(halvings, depth)
        acc += inc
        seen = max(seen, s)
        ev = system.evaluate(state.t, state.beta)
        seen = max(seen, ev.max_norm)
        if k % p.stride == 0 or k == n_steps:
            record(ev)
            if check:
                mass = p.alpha0 * rows["l2_norm_sq"][-1] + 2 * p.epsilon * rows["grad_int"][-1]
                drift = abs(mass - mass0)
                limit = p.l2_tolerance * max(mass0, 1e-300)
                growth = rows["l2_norm_sq"][-1] - last_mass
                last_mass = rows["l2_norm_sq"][-1]
                if not np.isfinite(mass) or drift > limit:
                    raise LedgerBreach(f"L2 identity drift {drift:.3e} exceeds {limit:.3e} at t = {state.t:.6g}",
                                       finish("breach"))
                if p.epsilon >= 0 and growth > limit:
                    raise LedgerBreach(f"L2 mass increased by {growth:.3e} at t = {state.t:.6g}", finish("breach"))
    traj.steps = n_steps
    return finish("ok")


def simulate(algebra: LieAlgebra, basis: ModeBasis, params: FlowParams, u0, demag: DemagOperator | None = None,
             check: bool = True) -> Trajectory:
    beta0, err = init_coeffs(basis, algebra, u0)
    system = GalerkinSystem(algebra, basis, params, demag)
    return run(system, beta0, reconstruction_error=err, check=check)


def with_params(system: GalerkinSystem, **changes) -> GalerkinSystem:
    """A new system on the same basis (and stray-field kernel) with modified parameters."""
    return GalerkinSystem(system.algebra, system.basis, replace(system.params, **changes), system.demag)
