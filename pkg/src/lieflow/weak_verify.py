"""Residuals of the weak formulations, energy bounds and pointwise identities on trajectories.

Test functions are products ``w_i(x) eta(t)`` of a basis mode and a temporal profile,
tested against every algebra direction at once: a residual is the functional
``e_a -> lhs_a - rhs_a`` and is measured in the dual norm.  Space integrals use the grid
quadrature with spectral derivatives; time integrals use the trapezoid rule on the
trajectory samples.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .extensions import anisotropy_bounds
from .galerkin_flow import Trajectory
from .spectral_domain import gradient

PROFILES = ("one", "t", "sin", "cos")
MIN_SAMPLES_PER_PERIOD = 10


@dataclass(frozen=True)
class TestFunction:
    """w_mode(x) * eta(t) with eta one of 1, t, sin(pi t / T), cos(pi t / T)."""

    mode: int
    profile: str
    horizon: float

    __test__ = False  # not a pytest class

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise ValueError(f"unknown temporal profile {self.profile!r}")
        if self.mode < 0:
            raise ValueError("mode index must be non-negative")
        if self.profile in ("sin", "cos") and not self.horizon > 0:
            raise ValueError("trigonometric profiles need a positive horizon")

    def eta(self, t):
        t = np.asarray(t, dtype=float)
        if self.profile == "one":
            return np.ones_like(t)
        if self.profile == "t":
            return t.copy()
        w = math.pi / self.horizon
        return np.sin(w * t) if self.profile == "sin" else np.cos(w * t)

    def eta_dot(self, t):
        t = np.asarray(t, dtype=float)
        if self.profile == "one":
            return np.zeros_like(t)
        if self.profile == "t":
            return np.ones_like(t)
        w = math.pi / self.horizon
        return w * np.cos(w * t) if self.profile == "sin" else -w * np.sin(w * t)

    @property
    def period(self) -> float:
        return 2 * self.horizon if self.profile in ("sin", "cos") else math.inf

    @property
    def label(self) -> str:
        return f"mode{self.mode + 1}:{self.profile}"


def standard_battery(horizon: float, n_modes: int = 8) -> list[TestFunction]:
    """First ``n_modes`` modes times the four temporal profiles, mode-major order."""
    return [TestFunction(i, p, horizon) for i in range(n_modes) for p in PROFILES]


@dataclass(frozen=True)
class WeakResidualEntry:
    index: int
    label: str
    lhs: np.ndarray
    rhs: np.ndarray
    lhs_norm: float
    rhs_norm: float
    absolute: float
    relative: float


@dataclass
class WeakResidualReport:
    form: str
    entries: list[WeakResidualEntry]
    scale: float = 1.0

    @property
    def max_abs(self) -> float:
        return max((e.absolute for e in self.entries), default=0.0)

    @property
    def mean_abs(self) -> float:
        return float(np.mean([e.absolute for e in self.entries])) if self.entries else 0.0

    @property
    def max_rel(self) -> float:
        return max((e.relative for e in self.entries), default=0.0)

    @property
    def normalized_max(self) -> float:
        """Largest absolute residual divided by the L2 norm of the initial field."""
        return self.max_abs / self.scale

    def absolutes(self) -> np.ndarray:
        return np.array([e.absolute for e in self.entries])

    def csv_rows(self):
        yield ("index", "test_function", "lhs_norm", "rhs_norm", "absolute", "relative")
        for e in self.entries:
            yield (e.index, e.label, f"{e.lhs_norm:.17g}", f"{e.rhs_norm:.17g}",
                   f"{e.absolute:.17g}", f"{e.relative:.17g}")

    def summary(self) -> str:
        return (f"{self.form}: {len(self.entries)} test functions, max residual {self.max_abs:.3e} "
                f"(normalized {self.normalized_max:.3e}), mean {self.mean_abs:.3e}, max relative {self.max_rel:.3e}")


@dataclass
class Pairings:
    """Space integrals of the trajectory against the first ``n_modes`` modes, per sample.

    Every array has shape (S, n_modes, m) and holds covector coordinates.
    """

    times: np.ndarray
    u: np.ndarray           # <u, w_i e_a>
    u_t: np.ndarray         # <u_t, w_i e_a>
    damping: np.ndarray     # <[u, u_t], w_i e_a>
    exchange: np.ndarray    # sum_p <[u, f d_p u], d_p w_i e_a>
    source: np.ndarray      # <[u, h_d(u) - grad Phi(u)], w_i e_a>
    forcing: np.ndarray     # <F(x, t, u), w_i e_a>


def compute_pairings(traj: Trajectory, n_modes: int, negate: bool = False) -> Pairings:
    """Evaluate all space integrals needed by the batteries.

    ``negate`` evaluates the pairings of the trajectory -u instead of u.
    """
    system = traj.system
    basis = system.basis
    if n_modes > basis.N:
        raise ValueError(f"test function mode {n_modes} is not resolvable: the basis has {basis.N} modes")
    alg = system.algebra
    dom = system.domain
    dV = dom.cell_volume
    sign = -1.0 if negate else 1.0
    modes = basis.matrix[:n_modes]                      # (K, G)
    mode_grads = gradient(dom, basis.modes[:n_modes].transpose(tuple(range(1, dom.n + 1)) + (0,)))
    mode_grads = mode_grads.reshape(dom.n, dom.size, n_modes)   # (n, G, K)
    f = basis.coupling.reshape(-1)
    grid = dom.grid
    params = system.params
    S = len(traj.times)
    out = {k: np.zeros((S, n_modes, alg.dim)) for k in ("u", "u_t", "damping", "exchange", "source", "forcing")}

    def pair(values):
        return alg.lower(modes @ values * dV)

    for s in range(S):
        u = sign * system.grid_values(traj.betas[s])
        ut = sign * system.grid_values(traj.beta_dots[s])
        out["u"][s] = pair(u)
        out["u_t"][s] = pair(ut)
        out["damping"][s] = pair(alg.bracket(u, ut))
        du = gradient(dom, u.reshape(grid + (alg.dim,))).reshape(dom.n, dom.size, alg.dim)
        acc = np.zeros((n_modes, alg.dim))
        for p in range(dom.n):
            acc += mode_grads[p].T @ alg.bracket(u, f[:, None] * du[p]) * dV
        out["exchange"][s] = alg.lower(acc)
        if params.mode == "llg_boundary":
            src = system.source_field(u, system.ball(u))
            if src is not None:
                out["source"][s] = pair(alg.bracket(u, src))
        F = system.forcing_grid(traj.times[s], u) if params.forcing is not None else None
        if F is not None:
            out["forcing"][s] = pair(F)
    return Pairings(np.asarray(traj.times, dtype=float), **out)


def _trapezoid_weights(times: np.ndarray) -> np.ndarray:
    w = np.zeros_like(times)
    if len(times) > 1:
        dt = np.diff(times)
        w[:-1] += dt / 2
        w[1:] += dt / 2
    return w


def _check_stride(times: np.ndarray, phis):
    if len(times) < 2:
        raise ValueError("a trajectory needs at least two samples for time quadrature")
    spacing = float(np.max(np.diff(times)))
    for phi in phis:
        if phi.period / spacing < MIN_SAMPLES_PER_PERIOD:
            raise ValueError(
                f"sampling too coarse for {phi.label}: {phi.period / spacing:.1f} samples per period, "
                f"need {MIN_SAMPLES_PER_PERIOD}"
            )


def _sides(pairings: Pairings, phis, form: str, alpha: float, alpha0: float):
    """Return lhs, rhs of shape (len(phis), m) for the requested form."""
    t = pairings.times
    w = _trapezoid_weights(t)
    idx = np.array([phi.mode for phi in phis])
    eta = np.stack([phi.eta(t) for phi in phis])           # (F, S)
    deta = np.stack([phi.eta_dot(t) for phi in phis])

    def integral(arr, prof):
        # sum_s w_s prof[f, s] arr[s, idx_f, :]
        return np.einsum("s,fs,fsa->fa", w, prof, arr[:, idx, :].transpose(1, 0, 2))

    def boundary(arr):
        return eta[:, -1, None] * arr[-1, idx, :] - eta[:, 0, None] * arr[0, idx, :]

    P = pairings
    if form == "llg_derivative":
        lhs = integral(P.u_t, eta) - alpha * integral(P.damping, eta)
        rhs = integral(P.exchange, eta) - integral(P.source, eta) + integral(P.forcing, eta)
    elif form == "llg_integrated":
        lhs = boundary(P.u) - alpha * integral(P.damping, eta) + integral(P.source, eta)
        rhs = integral(P.u, deta) + integral(P.exchange, eta) + integral(P.forcing, eta)
    elif form == "gill_derivative":
        lhs = alpha0 * integral(P.u_t, eta) + alpha * integral(P.damping, eta)
        rhs = -integral(P.exchange, eta) + integral(P.forcing, eta)
    elif form == "gill_integrated":
        lhs = alpha0 * boundary(P.u) + alpha * integral(P.damping, eta)
        rhs = alpha0 * integral(P.u, deta) - integral(P.exchange, eta) + integral(P.forcing, eta)
    else:
        raise ValueError(f"unknown weak form {form!r}")
    return lhs, rhs


def _report(traj: Trajectory, pairings: Pairings, phis, form, alpha, alpha0) -> WeakResidualReport:
    alg = traj.system.algebra
    _check_stride(pairings.times, phis)
    lhs, rhs = _sides(pairings, phis, form, alpha, alpha0)
    entries = []
    for k, phi in enumerate(phis):
        ln = float(alg.dual_norm(lhs[k]))
        rn = float(alg.dual_norm(rhs[k]))
        ab = float(alg.dual_norm(lhs[k] - rhs[k]))
        entries.append(WeakResidualEntry(k, phi.label, lhs[k], rhs[k], ln, rn, ab, ab / max(ln, rn, 1e-300)))
    scale = math.sqrt(max(float(traj.ledger["l2_norm_sq"][0]), 1e-300))
    return WeakResidualReport(form, entries, scale)


def _battery(traj: Trajectory, phis):
    if phis is None:
        phis = standard_battery(float(traj.times[-1] - traj.times[0]) or 1.0, min(8, traj.system.basis.N))
    return list(phis)


def weak_residual_llg(traj: Trajectory, phis=None, alpha: float | None = None, form: str = "derivative",
                      pairings: Pairings | None = None, negate: bool = False) -> WeakResidualReport:
    """Residuals of the Landau-Lifshitz-Gilbert weak identity.

    ``form='derivative'`` pairs u_t directly; ``form='integrated'`` moves the time
    derivative onto the test function and adds the boundary terms at both ends.
    """
    phis = _battery(traj, phis)
    alpha = traj.params.alpha if alpha is None else alpha
    if pairings is None:
        pairings = compute_pairings(traj, 1 + max(phi.mode for phi in phis), negate)
    return _report(traj, pairings, phis, f"llg_{form}", alpha, 1.0)


def weak_residual_gill(traj: Trajectory, phis=None, alpha0: float | None = None, alpha: float | None = None,
                       form: str = "derivative", pairings: Pairings | None = None) -> WeakResidualReport:
    """Residuals of the weak identity with coupling f, damping alpha and forcing."""
    phis = _battery(traj, phis)
    alpha = traj.params.alpha if alpha is None else alpha
    alpha0 = traj.params.alpha0 if alpha0 is None else alpha0
    if pairings is None:
        pairings = compute_pairings(traj, 1 + max(phi.mode for phi in phis))
    return _report(traj, pairings, phis, f"gill_{form}", alpha, alpha0)


def weak_residual(traj: Trajectory, phis=None, form: str = "derivative", pairings=None) -> WeakResidualReport:
    """Dispatch on the trajectory's mode with its own parameters."""
    if traj.params.mode == "llg_boundary":
        return weak_residual_llg(traj, phis, form=form, pairings=pairings)
    return weak_residual_gill(traj, phis, form=form, pairings=pairings)


def residual_history(traj: Trajectory, phis=None, pairings: Pairings | None = None) -> np.ndarray:
    """Largest integrated-form residual of the battery over [t_0, t_s], for every sample s."""
    phis = _battery(traj, phis)
    if pairings is None:
        pairings = compute_pairings(traj, 1 + max(phi.mode for phi in phis))
    p = traj.params
    alg = traj.system.algebra
    t = pairings.times
    S = len(t)
    out = np.zeros(S)
    if S < 2:
        return out
    idx = np.array([phi.mode for phi in phis])
    eta = np.stack([phi.eta(t) for phi in phis])
    deta = np.stack([phi.eta_dot(t) for phi in phis])

    def cumulative(arr, prof):
        g = prof[:, :, None] * arr[:, idx, :].transpose(1, 0, 2)       # (F, S, m)
        inc = 0.5 * np.diff(t)[None, :, None] * (g[:, 1:] + g[:, :-1])
        return np.concatenate([np.zeros_like(g[:, :1]), np.cumsum(inc, axis=1)], axis=1)

    P = pairings
    bnd = eta[:, :, None] * P.u[:, idx, :].transpose(1, 0, 2) - eta[:, :1, None] * P.u[0, idx, :][:, None, :]
    if p.mode == "llg_boundary":
        res = (bnd - p.alpha * cumulative(P.damping, eta) + cumulative(P.source, eta)
               - cumulative(P.u, deta) - cumulative(P.exchange, eta) - cumulative(P.forcing, eta))
    else:
        res = (p.alpha0 * bnd + p.alpha * cumulative(P.damping, eta)
               - p.alpha0 * cumulative(P.u, deta) + cumulative(P.exchange, eta) - cumulative(P.forcing, eta))
    norms = alg.dual_norm(res)                                         # (F, S)
    return np.max(norms, axis=0)


# ---------------------------------------------------------------- sphere functional

def q_functional(values, algebra, cell_volume: float) -> float:
    """Integral over {|v| > 1} of |v|^2 (1 - 1/|v|)."""
    r = algebra.norm(np.asarray(values, dtype=float))
    outside = r > 1
    return float(np.sum(np.where(outside, r * r * (1 - 1 / np.where(outside, r, 1.0)), 0.0)) * cell_volume)


@dataclass(frozen=True)
class SphereReport:
    times: np.ndarray
    q: np.ndarray
    max_violation: float
    tolerance: float

    @property
    def max_q(self) -> float:
        return float(np.max(self.q)) if self.q.size else 0.0

    @property
    def first_exceed_time(self) -> float | None:
        hits = np.nonzero(self.q > self.tolerance)[0]
        return float(self.times[hits[0]]) if hits.size else None


def sphere_functional(traj: Trajectory, tolerance: float = 1e-8) -> SphereReport:
    sys_ = traj.system
    q = np.array([q_functional(sys_.grid_values(b), sys_.algebra, sys_.dV) for b in traj.betas])
    return SphereReport(np.asarray(traj.times), q, traj.max_sphere_violation, tolerance)


# ---------------------------------------------------------------- energy ledger

@dataclass
class EnergyLedgerReport:
    times: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    identity_residual: np.ndarray
    mass_drift: np.ndarray
    constants: dict
    secondary_lhs: np.ndarray | None = None
    secondary_rhs: np.ndarray | None = None
    tolerance: float = 1e-8
    failures: list = field(default_factory=list)

    @property
    def margin(self) -> np.ndarray:
        return self.rhs - self.lhs

    @property
    def min_margin(self) -> float:
        return float(np.min(self.margin))

    @property
    def passed(self) -> bool:
        return not self.failures


def energy_ledger_check(traj: Trajectory, tolerance: float = 1e-8, bounds_samples: int = 100_000,
                        seed: int = 0) -> EnergyLedgerReport:
    """Evaluate the a priori energy inequality at every sample and the exact identities.

    On boxes the inequality is
    ``(1+a e) G(t) + a D(t) + 2 e L(t) <= (1+a e) G(0) + 2 a (1+M1^2) vol t + (2 M2 + 1 + n) M3 t``
    with G the exchange energy, D and L the time integrals of |u_t|^2 and |lap u|^2, and
    M3 the running maximum of G.  When eps > 0 the bound that does not use M3 is also
    checked.  On tori the inequality with coupling f and forcing constants C1, C2 is used.
    """
    sys_ = traj.system
    p = traj.params
    lg = traj.ledger
    t = np.asarray(traj.times) - traj.times[0]
    vol = sys_.domain.volume
    a, e, a0 = p.alpha, p.epsilon, p.alpha0
    G = lg["grad_energy"]
    D = lg["damping_int"]
    L = lg["lap_int"]
    constants = {}
    sec_l = sec_r = None
    if p.mode == "llg_boundary":
        m1 = m2 = 0.0
        if p.anisotropy is not None:
            b = anisotropy_bounds(p.anisotropy, sys_.algebra, bounds_samples, seed)
            m1, m2 = b.m1, b.m2
        m3 = np.maximum.accumulate(G)
        n = sys_.domain.n
        lhs = (1 + a * e) * G + a * D + 2 * e * L
        rhs = (1 + a * e) * G[0] + 2 * a * (1 + m1**2) * vol * t + (2 * m2 + 1 + n) * m3 * t
        constants.update(M1=m1, M2=m2, M3=float(m3[-1]), n=n)
        if e > 0:
            sec_l = a * D + (1 + a * e) * G + e * L
            sec_r = (2 * a * m1**2 + (2 * m1**2 + 2 * (1 + a)) / e) * vol * t + (1 + a * e) * G[0]
    else:
        c1 = c2 = 0.0
        if p.forcing is not None:
            c1, c2 = p.forcing.c1, p.forcing.c2
        fmax = float(np.max(sys_.basis.coupling))
        E = lg["grad_int"]
        lhs = 0.5 * (a0 + a * e) * G + e * L + 0.5 * a * a0 * D
        rhs = ((a * c2**2 / (2 * a0) + 1.5 * c1 * fmax) * vol * t + 1.5 * c1 * E
               + 0.5 * (a0 + a * e) * G[0])
        constants.update(C1=c1, C2=c2, f_max=fmax)
    identity = traj.energy_identity_residual()
    mass = traj.mass_identity()
    report = EnergyLedgerReport(np.asarray(traj.times), lhs, rhs, identity, mass - mass[0], constants,
                                sec_l, sec_r, tolerance)
    scale = max(1.0, float(np.max(np.abs(rhs))))
    if np.any(report.margin < -tolerance * scale):
        k = int(np.argmin(report.margin))
        report.failures.append(f"energy inequality violated at t = {report.times[k]:.6g} by {-report.margin[k]:.3e}")
    if sec_l is not None and np.any(sec_r - sec_l < -tolerance * max(1.0, float(np.max(np.abs(sec_r))))):
        report.failures.append("eps-dependent energy bound violated")
    return report


# ---------------------------------------------------------------- pointwise identities

@dataclass(frozen=True)
class OrthogonalityReport:
    max_pointwise_ratio: float
    mass_rate: np.ndarray          # d/dt sum |beta|^2 from beta'
    expected_rate: np.ndarray      # -2 eps G / alpha0
    finite_difference_rate: np.ndarray

    @property
    def max_rate_error(self) -> float:
        return float(np.max(np.abs(self.mass_rate - self.expected_rate)))

    @property
    def max_relative_rate_error(self) -> float:
        scale = np.maximum(np.abs(self.expected_rate), 1e-300)
        mask = np.abs(self.expected_rate) > 0
        if not np.any(mask):
            return 0.0
        return float(np.max(np.abs(self.mass_rate - self.expected_rate)[mask] / scale[mask]))


def orthogonality_probe(traj: Trajectory) -> OrthogonalityReport:
    sys_ = traj.system
    alg = sys_.algebra
    worst = 0.0
    rates = []
    for t, beta, bdot in zip(traj.times, traj.betas, traj.beta_dots):
        u = sys_.grid_values(beta)
        h = sys_.local_field(beta, t)
        pair = np.abs(alg.inner(u, alg.bracket(sys_.ball(u), h)))
        scale = alg.norm(u) * alg.norm(h)
        ok = scale > 0
        if np.any(ok):
            worst = max(worst, float(np.max(pair[ok] / scale[ok])))
        rates.append(2 * sys_.block_inner(beta, bdot))
    rates = np.array(rates)
    expected = -2 * traj.params.epsilon * traj.ledger["grad_energy"] / traj.params.alpha0
    mass = traj.ledger["l2_norm_sq"]
    fd = np.gradient(mass, traj.times) if len(mass) > 2 else np.zeros_like(mass)
    return OrthogonalityReport(worst, rates, expected, fd)
