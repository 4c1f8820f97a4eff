"""Grids, eigenbases and spectral differentiation on boxes and flat tori.

Two domain kinds are supported.  ``neumann_box`` is the rectangle ``prod [0, L_j]``
sampled at cell midpoints, where the cosine modes ``cos(k pi x / L)`` are exact
eigenfunctions of the Neumann Laplacian and the midpoint rule keeps them orthonormal.
``flat_torus`` is ``prod [0, L_j)`` with periodic wrap sampled at ``j L / G`` and the
trapezoid rule.

A :class:`ModeBasis` stores its modes as a dense ``(N, G)`` matrix over the flattened
grid, so ``analyze`` and ``synthesize`` are matrix products.  Grid fields carry the
algebra index last: shape ``(*grid, m)``.
"""
from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

DOMAIN_KINDS = ("neumann_box", "flat_torus")
DENSE_EIGEN_LIMIT = 4096


class BasisError(ValueError):
    pass


@dataclass(frozen=True)
class DomainSpec:
    kind: str
    lengths: tuple[float, ...]
    grid: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "lengths", tuple(float(v) for v in self.lengths))
        object.__setattr__(self, "grid", tuple(int(v) for v in self.grid))
        if self.kind not in DOMAIN_KINDS:
            raise BasisError(f"domain.kind must be one of {DOMAIN_KINDS}, got {self.kind!r}")
        if not 1 <= len(self.grid) <= 3 or len(self.lengths) != len(self.grid):
            raise BasisError("domain needs 1 to 3 axes with matching lengths and grid sizes")
        if min(self.grid) < 4:
            raise BasisError(f"grid sizes must be at least 4, got {self.grid}")
        if not all(v > 0 and np.isfinite(v) for v in self.lengths):
            raise BasisError(f"lengths must be positive, got {self.lengths}")

    @property
    def n(self) -> int:
        return len(self.grid)

    @property
    def size(self) -> int:
        return int(np.prod(self.grid))

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(L / g for L, g in zip(self.lengths, self.grid))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))

    @property
    def periodic(self) -> bool:
        return self.kind == "flat_torus"

    def axis_coords(self, axis: int) -> np.ndarray:
        h = self.spacing[axis]
        j = np.arange(self.grid[axis])
        return (j + 0.5) * h if self.kind == "neumann_box" else j * h

    def mesh(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*(self.axis_coords(a) for a in range(self.n)), indexing="ij"))

    def points(self) -> np.ndarray:
        """Grid coordinates flattened to shape (G, n) in row-major order."""
        return np.stack([c.ravel() for c in self.mesh()], axis=1)


# ---------------------------------------------------------------- 1D ingredients

def _neumann_axis(L: float, g: int):
    """Normalized cosine modes, wavenumbers k = 0..g-1, at midpoints."""
    x = (np.arange(g) + 0.5) * L / g
    k = np.arange(g)
    modes = np.cos(np.outer(k, x) * np.pi / L) * np.sqrt(2.0 / L)
    modes[0] /= np.sqrt(2.0)
    return modes, (k * np.pi / L) ** 2, k


def _fourier_axis(L: float, g: int):
    """Real Fourier modes 1, cos, sin for wavenumbers below the Nyquist index."""
    x = np.arange(g) * L / g
    kmax = (g - 1) // 2
    rows = [np.full(g, 1.0 / np.sqrt(L))]
    lam = [0.0]
    idx = [0]
    for k in range(1, kmax + 1):
        w = 2 * np.pi * k / L
        rows.append(np.cos(w * x) * np.sqrt(2.0 / L))
        rows.append(np.sin(w * x) * np.sqrt(2.0 / L))
        lam += [w * w, w * w]
        idx += [2 * k - 1, 2 * k]
    return np.array(rows), np.array(lam), np.array(idx)


def _tensor_basis(domain: DomainSpec, N: int, axis_builder):
    axes = [axis_builder(L, g) for L, g in zip(domain.lengths, domain.grid)]
    capacity = int(np.prod([len(a[1]) for a in axes]))
    if N < 1 or N > capacity:
        raise BasisError(f"N = {N} exceeds the {capacity} modes resolvable on grid {domain.grid}")
    # enumerate all multi-indices, order by (eigenvalue, multi-index)
    combos = list(itertools.product(*(range(len(a[1])) for a in axes)))
    lam = np.array([sum(axes[d][1][c[d]] for d in range(domain.n)) for c in combos])
    labels = [tuple(int(axes[d][2][c[d]]) for d in range(domain.n)) for c in combos]
    # round eigenvalues so that exact ties are not split by floating-point noise
    keys = np.round(lam, 9)
    order = sorted(range(len(combos)), key=lambda i: (keys[i], labels[i]))[:N]
    modes = np.empty((N,) + domain.grid)
    for out, i in enumerate(order):
        factors = [axes[d][0][combos[i][d]] for d in range(domain.n)]
        modes[out] = functools.reduce(np.multiply.outer, factors)
    return modes, lam[order], tuple(labels[i] for i in order)


@dataclass(frozen=True, eq=False)
class ModeBasis:
    domain: DomainSpec
    eigenvalues: np.ndarray
    modes: np.ndarray
    kind: str
    weight: np.ndarray | None = None
    labels: tuple = ()
    eigen_residual: float = 0.0
    _flat: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        flat = np.ascontiguousarray(self.modes.reshape(len(self.eigenvalues), -1))
        flat.setflags(write=False)
        object.__setattr__(self, "_flat", flat)

    @property
    def N(self) -> int:
        return len(self.eigenvalues)

    @property
    def matrix(self) -> np.ndarray:
        """Modes as an (N, G) matrix over the flattened grid."""
        return self._flat

    @property
    def coupling(self) -> np.ndarray:
        """The coefficient function f on the grid (ones for the unweighted bases)."""
        return np.ones(self.domain.grid) if self.weight is None else self.weight

    def gram(self) -> np.ndarray:
        return self._flat @ self._flat.T * self.domain.cell_volume

    def analyze(self, u: np.ndarray) -> np.ndarray:
        """Quadrature coefficients; u has shape grid or (*grid, m)."""
        u = np.asarray(u, dtype=float)
        g = self.domain.grid
        if u.shape[: len(g)] != g:
            raise BasisError(f"field shape {u.shape} does not match grid {g}")
        flat = u.reshape((self.domain.size,) + u.shape[len(g):])
        return np.tensordot(self._flat, flat, axes=(1, 0)) * self.domain.cell_volume

    def synthesize(self, beta: np.ndarray) -> np.ndarray:
        beta = np.asarray(beta, dtype=float)
        if beta.shape[0] != self.N:
            raise BasisError(f"expected {self.N} coefficient blocks, got {beta.shape[0]}")
        flat = np.tensordot(self._flat, beta, axes=(0, 0))
        return flat.reshape(self.domain.grid + beta.shape[1:])

    def project(self, u):
        return self.synthesize(self.analyze(u))


def build_neumann_basis(domain: DomainSpec, N: int) -> ModeBasis:
    if domain.kind != "neumann_box":
        raise BasisError("build_neumann_basis needs a neumann_box domain")
    modes, lam, labels = _tensor_basis(domain, N, _neumann_axis)
    return ModeBasis(domain, lam, modes, "cosine", None, labels)


def build_fourier_basis(domain: DomainSpec, N: int, coupling: float = 1.0) -> ModeBasis:
    """Eigenbasis of -c Laplace on a flat torus for a constant coupling c > 0."""
    if domain.kind != "flat_torus":
        raise BasisError("build_fourier_basis needs a flat_torus domain")
    if not coupling > 0:
        raise BasisError(f"coupling must be positive, got {coupling}")
    modes, lam, labels = _tensor_basis(domain, N, _fourier_axis)
    weight = None if coupling == 1.0 else np.full(domain.grid, float(coupling))
    return ModeBasis(domain, coupling * lam, modes, "fourier", weight, labels)


def weighted_operator(domain: DomainSpec, f: np.ndarray) -> sp.csr_matrix:
    """Conservative discretization of -div(f grad .) on a flat torus.

    Face values of f are arithmetic means of the two adjacent nodes, which makes the
    matrix exactly symmetric.  The result acts on flattened grid vectors.
    """
    f = np.asarray(f, dtype=float)
    G = domain.size
    idx = np.arange(G).reshape(domain.grid)
    rows, cols, vals = [], [], []
    diag = np.zeros(G)
    for axis in range(domain.n):
        h2 = domain.spacing[axis] ** 2
        nb = np.roll(idx, -1, axis=axis).ravel()
        face = 0.5 * (f.ravel() + f.ravel()[nb]) / h2
        here = idx.ravel()
        rows += [here, nb]
        cols += [nb, here]
        vals += [-face, -face]
        np.add.at(diag, here, face)
        np.add.at(diag, nb, face)
    rows.append(np.arange(G))
    cols.append(np.arange(G))
    vals.append(diag)
    mat = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(G, G))
    return mat.tocsr()


def _fix_signs(vecs: np.ndarray) -> np.ndarray:
    """Make the largest-magnitude entry of each column positive."""
    pivots = np.argmax(np.round(np.abs(vecs), 10), axis=0)
    signs = np.sign(vecs[pivots, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


def build_weighted_basis(domain: DomainSpec, f, N: int, tol: float = 1e-8, method: str = "auto") -> ModeBasis:
    """Lowest N eigenpairs of -div(f grad .) on a flat torus.

    ``method`` is "dense", "sparse" (shift-invert Lanczos) or "auto", which picks dense
    up to DENSE_EIGEN_LIMIT grid points.
    """
    if method not in ("auto", "dense", "sparse"):
        raise BasisError(f"unknown eigensolver method {method!r}")
    if domain.kind != "flat_torus":
        raise BasisError("build_weighted_basis needs a flat_torus domain")
    f = np.broadcast_to(np.asarray(f, dtype=float), domain.grid).copy()
    if not np.all(np.isfinite(f)) or np.min(f) <= 0:
        raise BasisError(f"coupling function must be positive, min f = {np.min(f):.3e}")
    G = domain.size
    if N < 1 or N > G:
        raise BasisError(f"N = {N} exceeds grid capacity {G}")
    mat = weighted_operator(domain, f)
    if method == "dense" or (method == "auto" and G <= DENSE_EIGEN_LIMIT):
        lam, vecs = scipy.linalg.eigh(mat.toarray(), subset_by_index=(0, N - 1))
    else:
        # fixed start vector: ARPACK otherwise draws a random one and results differ in the last bits
        v0 = np.cos(np.arange(G) * 0.61803398875) + 1.0
        try:
            lam, vecs = spla.eigsh(mat, k=N, sigma=-1e-3 * float(np.min(f)), which="LM", tol=tol * 1e-2, v0=v0)
        except spla.ArpackNoConvergence as exc:
            raise BasisError(f"eigensolver did not converge ({len(exc.eigenvalues)} of {N} pairs)") from exc
        order = np.argsort(lam)
        lam, vecs = lam[order], vecs[:, order]
    vecs = _fix_signs(vecs)
    residual = float(np.max(np.linalg.norm(mat @ vecs - vecs * lam, axis=0)))
    if residual > max(tol, 1e-8) * max(1.0, float(np.max(np.abs(lam)))):
        raise BasisError(f"eigensolver residual {residual:.3e} exceeds tolerance {tol:.1e}")
    lam = np.where(np.abs(lam) < 1e-11 * max(1.0, float(np.max(lam))), 0.0, lam)
    modes = (vecs / np.sqrt(domain.cell_volume)).T.reshape((N,) + domain.grid)
    return ModeBasis(domain, lam, modes, "weighted", f, (), residual)


def build_basis(domain: DomainSpec, N: int, coupling=None) -> ModeBasis:
    """Neumann cosines on boxes; Fourier modes or the weighted basis on tori."""
    if domain.kind == "neumann_box":
        if coupling is not None and not np.all(np.asarray(coupling) == 1.0):
            raise BasisError("a coupling function is only supported on flat_torus domains")
        return build_neumann_basis(domain, N)
    if coupling is None:
        return build_fourier_basis(domain, N)
    c = np.asarray(coupling, dtype=float)
    if c.ndim == 0 or np.all(c == c.flat[0]):
        return build_fourier_basis(domain, N, float(c.flat[0]))
    return build_weighted_basis(domain, c, N)


# ---------------------------------------------------------------- differentiation

@functools.lru_cache(maxsize=64)
def derivative_matrix(kind: str, L: float, g: int, order: int) -> np.ndarray:
    """Dense 1D spectral differentiation matrix on the grid of the given domain kind."""
    if kind == "flat_torus":
        k = np.fft.fftfreq(g, d=L / g) * 2 * np.pi
        symbol = (1j * k) ** order
        if order % 2 == 1 and g % 2 == 0:
            symbol[g // 2] = 0.0
        eye = np.eye(g)
        mat = np.real(np.fft.ifft(symbol[:, None] * np.fft.fft(eye, axis=0), axis=0))
    else:
        x = (np.arange(g) + 0.5) * L / g
        k = np.arange(g) * np.pi / L
        cos = np.cos(np.outer(x, k))
        coeff = np.linalg.inv(cos)
        if order == 1:
            mat = -np.sin(np.outer(x, k)) * k @ coeff
        elif order == 2:
            mat = -cos * k**2 @ coeff
        else:
            raise ValueError("only first and second derivatives are provided on boxes")
    mat.setflags(write=False)
    return mat


def _apply_axis(mat: np.ndarray, u: np.ndarray, axis: int) -> np.ndarray:
    return np.moveaxis(np.tensordot(mat, u, axes=(1, axis)), 0, axis)


def partial(domain: DomainSpec, u, axis: int, order: int = 1) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    mat = derivative_matrix(domain.kind, domain.lengths[axis], domain.grid[axis], order)
    return _apply_axis(mat, u, axis)


def gradient(domain: DomainSpec, u) -> np.ndarray:
    """Stack of partial derivatives, shape (n, *u.shape)."""
    return np.stack([partial(domain, u, a) for a in range(domain.n)])


def divergence(domain: DomainSpec, v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return sum(partial(domain, v[a], a) for a in range(domain.n))


def laplacian(domain: DomainSpec, u) -> np.ndarray:
    return sum(partial(domain, u, a, 2) for a in range(domain.n))


def quadrature_inner(domain: DomainSpec, u, v, metric: np.ndarray | None = None) -> float:
    """Grid quadrature of the pointwise inner product (Euclidean unless a metric is given)."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise BasisError(f"shape mismatch {u.shape} vs {v.shape}")
    if metric is not None and u.ndim > domain.n:
        v = v @ metric
    return float(np.sum(u * v) * domain.cell_volume)


def dealias_filter(domain: DomainSpec, u) -> np.ndarray:
    """Zero Fourier content above two thirds of the Nyquist wavenumber (torus only)."""
    if domain.kind != "flat_torus":
        raise BasisError("dealiasing is available on flat_torus domains only")
    axes = tuple(range(domain.n))
    spec = np.fft.fftn(u, axes=axes)
    for a, g in enumerate(domain.grid):
        k = np.abs(np.fft.fftfreq(g) * g)
        keep = k <= g / 3.0
        shape = [1] * spec.ndim
        shape[a] = g
        spec = spec * keep.reshape(shape)
    return np.real(np.fft.ifftn(spec, axes=axes))
