"""C^2 extensions of anisotropy energies and tangent forcings to the closed unit ball.

Both extensions multiply by a cutoff ``zeta(|z|^2)`` that vanishes on ``[0, 2*delta0]``
and equals one at ``|z|^2 = 1``, and evaluate the original function at
``z / max(delta0, |z|)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.stats import qmc, norm as normal_dist

from .lie_algebra import ContractViolation, LieAlgebra

OUTSIDE_BALL_LIMIT = 1.1
TANGENCY_TOL = 1e-8


@dataclass(frozen=True)
class Cutoff:
    """Quintic smoothstep in s = (t - 2 delta0) / (1 - 2 delta0), clamped to [0, 1]."""

    delta0: float = 0.25

    def __post_init__(self):
        if not 0.0 < self.delta0 < 0.5:
            raise ContractViolation(f"delta0 must lie in (0, 1/2), got {self.delta0}")

    def _s(self, t):
        return np.clip((np.asarray(t, dtype=float) - 2 * self.delta0) / (1 - 2 * self.delta0), 0.0, 1.0)

    def __call__(self, t):
        s = self._s(t)
        return s**3 * (10.0 + s * (-15.0 + 6.0 * s))

    def derivative(self, t):
        s = self._s(t)
        return 30.0 * s**2 * (1.0 - s) ** 2 / (1 - 2 * self.delta0)

    def second_derivative(self, t):
        s = self._s(t)
        return 60.0 * s * (1.0 - s) * (1.0 - 2.0 * s) / (1 - 2 * self.delta0) ** 2


def _radius(algebra: LieAlgebra, z: np.ndarray, clamp: bool):
    r = algebra.norm(z)
    worst = float(np.max(r)) if r.size else 0.0
    if worst > OUTSIDE_BALL_LIMIT:
        raise ContractViolation(
            f"|z| = {worst:.4f} exceeds {OUTSIDE_BALL_LIMIT}; the sphere bound failed upstream"
        )
    if clamp and worst > 1.0:
        z = z / np.maximum(r, 1.0)[..., None]
        r = np.minimum(r, 1.0)
    return z, r


@dataclass(frozen=True, eq=False)
class AnisotropySpec:
    """Quadratic energy Phi(u) = u^T Q u restricted to the sphere and extended to the ball.

    ``kind='quadratic_diagonal'`` uses Q = diag(lambdas); ``kind='custom_table'`` takes a
    symmetric matrix.
    """

    kind: str
    lambdas: tuple[float, ...] = ()
    table: np.ndarray | None = None
    delta0: float = 0.25
    cutoff: Cutoff = field(init=False, repr=False)
    matrix: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "cutoff", Cutoff(self.delta0))
        if self.kind == "quadratic_diagonal":
            q = np.diag(np.asarray(self.lambdas, dtype=float))
        elif self.kind == "custom_table":
            if self.table is None:
                raise ContractViolation("custom_table anisotropy needs a table")
            q = np.asarray(self.table, dtype=float)
            if q.ndim != 2 or q.shape[0] != q.shape[1] or not np.allclose(q, q.T, atol=1e-14):
                raise ContractViolation("anisotropy table must be a symmetric square matrix")
        else:
            raise ContractViolation(f"unknown anisotropy kind {self.kind!r}")
        if not np.all(np.isfinite(q)):
            raise ContractViolation("anisotropy coefficients must be finite")
        q.setflags(write=False)
        object.__setattr__(self, "matrix", q)

    @classmethod
    def diagonal(cls, lambdas, delta0: float = 0.25) -> "AnisotropySpec":
        return cls("quadratic_diagonal", tuple(float(v) for v in lambdas), None, delta0)

    def _conform(self, algebra: LieAlgebra):
        if self.matrix.shape[0] != algebra.dim:
            raise ContractViolation(
                f"anisotropy has {self.matrix.shape[0]} coefficients, algebra dimension is {algebra.dim}"
            )

    def sphere_value(self, w):
        return np.einsum("...i,ij,...j->...", w, self.matrix, w)

    def value(self, algebra: LieAlgebra, z):
        self._conform(algebra)
        z, r = _radius(algebra, np.asarray(z, dtype=float), clamp=True)
        t = r * r
        w = z / np.maximum(self.delta0, r)[..., None]
        return np.where(t > self.delta0, self.cutoff(t) * self.sphere_value(w), 0.0)

    def grad(self, algebra: LieAlgebra, z):
        """Gradient with respect to the invariant inner product."""
        self._conform(algebra)
        z, r = _radius(algebra, np.asarray(z, dtype=float), clamp=True)
        t = r * r
        active = t > 2 * self.delta0
        r_safe = np.where(active, r, 1.0)[..., None]
        zhat = z / r_safe
        phi = self.sphere_value(zhat)[..., None]
        qz = algebra.raise_index(zhat @ self.matrix)
        g = 2.0 * self.cutoff.derivative(t)[..., None] * phi * z
        g = g + 2.0 * self.cutoff(t)[..., None] / r_safe * (qz - phi * zhat)
        return np.where(active[..., None], g, 0.0)

    def euclidean_grad(self, algebra: LieAlgebra, z):
        return algebra.lower(self.grad(algebra, z))


@dataclass(frozen=True, eq=False)
class BracketForcing:
    """F(x, t, z) = [a, z] with a fixed algebra element a."""

    algebra: LieAlgebra
    a: tuple[float, ...]

    def __call__(self, x, t, z):
        return self.algebra.bracket(np.broadcast_to(np.asarray(self.a), np.shape(z)), z)


@dataclass(frozen=True, eq=False)
class TravellingBracketForcing:
    """F(x, t, z) = cos(k.x - omega t) [a, z]."""

    algebra: LieAlgebra
    a: tuple[float, ...]
    wavevector: tuple[float, ...]
    omega: float = 0.0

    def __call__(self, x, t, z):
        phase = np.cos(np.asarray(x) @ np.asarray(self.wavevector, dtype=float) - self.omega * t)
        return phase[..., None] * self.algebra.bracket(np.broadcast_to(np.asarray(self.a), np.shape(z)), z)


@dataclass(frozen=True, eq=False)
class ForcingSpec:
    """A tangent forcing F(x, t, z) together with its cutoff extension and sampled bounds.

    Create instances through :func:`register_forcing`, which checks tangency.
    ``func`` must be vectorized: positions ``(P, n)``, scalar time, elements ``(P, m)``.
    """

    name: str
    func: Callable
    delta0: float = 0.25
    c1: float = float("nan")
    c2: float = float("nan")
    cutoff: Cutoff = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "cutoff", Cutoff(self.delta0))

    def value(self, algebra: LieAlgebra, x, t: float, z):
        z = np.asarray(z, dtype=float)
        x = np.asarray(x, dtype=float)
        z, r = _radius(algebra, z, clamp=False)
        t2 = r * r
        out = np.zeros_like(z)
        active = t2 > 2 * self.delta0
        if np.any(active):
            za = z[active]
            ra = r[active]
            w = za / np.maximum(self.delta0, ra)[:, None]
            xa = np.broadcast_to(x, z.shape[:-1] + x.shape[-1:])[active]
            out[active] = self.cutoff(t2[active])[:, None] * np.asarray(self.func(xa, t, w), dtype=float)
        return out


def sample_ball(algebra: LieAlgebra, count: int, seed: int = 0) -> np.ndarray:
    """Quasi-random points filling the closed unit ball of the invariant norm."""
    m = algebra.dim
    sampler = qmc.Sobol(d=m + 1, scramble=True, seed=seed)
    pts = sampler.random_base2(int(np.ceil(np.log2(max(count, 2)))))[:count]
    eps = 1e-12
    direction = normal_dist.ppf(np.clip(pts[:, :m], eps, 1 - eps))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    radius = pts[:, m] ** (1.0 / m)
    y = direction * radius[:, None]
    chol = np.linalg.cholesky(algebra.metric)
    # |L^{-T} y|_G = |y| for G = L L^T
    return np.linalg.solve(chol.T, y.T).T


def _metric_operator_norm(algebra: LieAlgebra, h: np.ndarray) -> np.ndarray:
    chol = np.linalg.cholesky(algebra.metric)
    linv = np.linalg.inv(chol)
    sym = linv @ h @ linv.T
    return np.linalg.norm(sym, ord=2, axis=(-2, -1))


@dataclass(frozen=True)
class AnisotropyBounds:
    m1: float
    m2: float
    samples: int


def anisotropy_bounds(spec: AnisotropySpec, algebra: LieAlgebra, samples: int = 100_000,
                      seed: int = 0, h: float = 1e-5) -> AnisotropyBounds:
    """Sampled sup of |grad Phi~| (M1) and of the Hessian operator norm (M2) on the ball."""
    z = sample_ball(algebra, samples, seed) * (1 - 2 * h)
    m1 = float(np.max(algebra.norm(spec.grad(algebra, z))))
    m = algebra.dim
    hess = np.empty((len(z), m, m))
    for j in range(m):
        step = np.zeros(m)
        step[j] = h
        hess[:, :, j] = (spec.euclidean_grad(algebra, z + step) - spec.euclidean_grad(algebra, z - step)) / (2 * h)
    hess = 0.5 * (hess + hess.transpose(0, 2, 1))
    m2 = float(np.max(_metric_operator_norm(algebra, hess)))
    return AnisotropyBounds(m1, m2, len(z))


def register_forcing(func: Callable, algebra: LieAlgebra, lengths, name: str = "forcing",
                     delta0: float = 0.25, samples: int = 10_000, seed: int = 0,
                     horizon: float = 1.0, h: float = 1e-6) -> ForcingSpec:
    """Check tangency of ``func`` by sampling, then estimate C2 = sup |F~| and C1.

    C1 bounds both |grad_x F~| and the operator norm of dF~/dz over the sampled set.
    """
    rng = np.random.default_rng(seed)
    lengths = np.asarray(lengths, dtype=float)
    n = lengths.size
    x = rng.uniform(0.0, 1.0, (samples, n)) * lengths
    t_samples = rng.uniform(0.0, horizon, samples)
    z = sample_ball(algebra, samples, seed + 1)
    # the bulk check evaluates with one time value per chunk to keep callbacks vectorized
    vals = np.concatenate([np.asarray(func(x[k:k + 1000], t_samples[k], z[k:k + 1000]), dtype=float)
                           for k in range(0, samples, 1000)]) if samples else np.zeros((0, algebra.dim))
    if vals.shape != z.shape:
        raise ContractViolation(f"forcing {name!r} returned shape {vals.shape}, expected {z.shape}")
    pairing = np.abs(algebra.inner(vals, z))
    limit = TANGENCY_TOL * algebra.norm(vals) * algebra.norm(z)
    bad = pairing > limit
    if np.any(bad):
        worst = int(np.argmax(pairing - limit))
        raise ContractViolation(
            f"forcing {name!r} is not tangent: |<F, z>| = {pairing[worst]:.3e} at sample {worst}"
        )
    spec = ForcingSpec(name, func, delta0)
    tval = 0.5 * horizon
    ext = spec.value(algebra, x, tval, z)
    c2 = float(np.max(algebra.norm(ext))) if samples else 0.0
    k = min(samples, 2000)
    c1 = 0.0
    for j in range(n):
        dx = np.zeros(n)
        dx[j] = h
        d = (spec.value(algebra, x[:k] + dx, tval, z[:k]) - spec.value(algebra, x[:k] - dx, tval, z[:k])) / (2 * h)
        c1 = max(c1, float(np.max(algebra.norm(d))))
    zk = z[:k] * (1 - 2 * h)
    jac = np.empty((k, algebra.dim, algebra.dim))
    for j in range(algebra.dim):
        dz = np.zeros(algebra.dim)
        dz[j] = h
        jac[:, :, j] = (spec.value(algebra, x[:k], tval, zk + dz) - spec.value(algebra, x[:k], tval, zk - dz)) / (2 * h)
    c1 = max(c1, float(np.max(np.linalg.norm(jac, ord=2, axis=(-2, -1)))))
    return ForcingSpec(name, func, delta0, c1, c2)
