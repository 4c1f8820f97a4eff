"""Demagnetizing field of a cell-wise constant magnetization on a rectangular box.

The field is ``h = -grad w`` with ``w = grad N * u`` and ``N`` the Newtonian potential
(``-1/(4 pi r)`` in 3D, ``log(r)/(2 pi)`` in 2D, ``|x|/2`` in 1D).  On the grid this is
the discrete convolution ``h_i = -sum_j K_ij * u_j`` where ``K_ij`` is the
cell-to-cell average of ``d_i d_j N``.  Near the source cell ``K`` comes from closed-form
antiderivatives combined with second differences; further out a tensor Gauss rule for
the triangular weight is accurate to round-off.  The kernel is symmetric and even, so
the discrete operator is self-adjoint and positive semi-definite with norm at most one.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.fft

from .spectral_domain import DomainSpec

NEAR_FIELD_CELLS = 10
# Gauss rule for weight (1 - |s|) on [-1, 1]: exact for polynomials of degree 5
_TENT_NODES = np.array([-np.sqrt(0.4), 0.0, np.sqrt(0.4)])
_TENT_WEIGHTS = np.array([5.0 / 24.0, 7.0 / 12.0, 5.0 / 24.0])
_SECOND_DIFF = ((-1, 1.0), (0, -2.0), (1, 1.0))


class DemagError(ValueError):
    pass


def _safe_div(a, b):
    with np.errstate(all="ignore"):
        return np.where(b != 0, a / np.where(b != 0, b, 1.0), 0.0)


def _newell_f(x, y, z):
    """Antiderivative with d_y^2 d_z^2 f = 1/r, even in every argument."""
    x, y, z = np.abs(x), np.abs(y), np.abs(z)
    r = np.sqrt(x * x + y * y + z * z)
    with np.errstate(all="ignore"):
        t1 = np.where(y > 0, y / 2 * (z * z - x * x) * np.arcsinh(_safe_div(y, np.sqrt(x * x + z * z))), 0.0)
        t2 = np.where(z > 0, z / 2 * (y * y - x * x) * np.arcsinh(_safe_div(z, np.sqrt(x * x + y * y))), 0.0)
        t3 = np.where(x * y * z > 0, -x * y * z * np.arctan(_safe_div(y * z, x * r)), 0.0)
    return t1 + t2 + t3 + (2 * x * x - y * y - z * z) * r / 6


def _newell_g(x, y, z):
    """Antiderivative with d_x d_y d_z^2 g = 1/r, odd in x and y, even in z."""
    z = np.abs(z)
    r = np.sqrt(x * x + y * y + z * z)
    with np.errstate(all="ignore"):
        terms = (
            np.where(x * y * z != 0, x * y * z * np.arcsinh(_safe_div(z, np.sqrt(x * x + y * y))), 0.0),
            np.where(y != 0, y / 6 * (3 * z * z - y * y) * np.arcsinh(_safe_div(x, np.sqrt(y * y + z * z))), 0.0),
            np.where(x != 0, x / 6 * (3 * z * z - x * x) * np.arcsinh(_safe_div(y, np.sqrt(x * x + z * z))), 0.0),
            np.where(z != 0, -z**3 / 6 * np.arctan(_safe_div(x * y, z * r)), 0.0),
            np.where(y != 0, -z * y * y / 2 * np.arctan(_safe_div(x * z, y * r)), 0.0),
            np.where(x != 0, -z * x * x / 2 * np.arctan(_safe_div(y * z, x * r)), 0.0),
        )
    return sum(np.nan_to_num(t) for t in terms) - x * y * r / 3


def _log_r2(x, y):
    r2 = x * x + y * y
    with np.errstate(all="ignore"):
        return np.where(r2 > 0, np.log(np.where(r2 > 0, r2, 1.0)), 0.0)


def _planar_f(x, y):
    """Antiderivative with d_y^2 F = log r, even in both arguments."""
    x, y = np.abs(x), np.abs(y)
    return x * y * np.arctan(_safe_div(y, x)) - 0.75 * y * y + 0.25 * (y * y - x * x) * _log_r2(x, y)


def _planar_g(x, y):
    """Antiderivative with d_x d_y F = log r, odd in both arguments."""
    return (0.5 * x * y * _log_r2(x, y) - 1.5 * x * y
            + 0.5 * x * x * np.arctan(_safe_div(y, x)) + 0.5 * y * y * np.arctan(_safe_div(x, y)))


def _antiderivative(n: int, i: int, j: int):
    """Function F of physical offsets whose mixed second differences give K_ij."""
    if n == 3:
        if i == j:
            others = [a for a in range(3) if a != i]
            return lambda *r: _newell_f(r[i], r[others[0]], r[others[1]])
        k = 3 - i - j
        return lambda *r: _newell_g(r[i], r[j], r[k])
    if i == j:
        o = 1 - i
        return lambda *r: _planar_f(r[i], r[o])
    return lambda *r: _planar_g(r[0], r[1])


def _near_kernel(spacing, offsets, i, j):
    """Exact cell-averaged kernel at integer offsets (arrays of shape (P, n))."""
    n = len(spacing)
    F = _antiderivative(n, i, j)
    vol = float(np.prod(spacing))
    base = [offsets[:, a] * spacing[a] for a in range(n)]
    total = np.zeros(len(offsets))
    for combo in itertools.product(_SECOND_DIFF, repeat=n):
        w = np.prod([c[1] for c in combo])
        total += w * F(*(base[a] + combo[a][0] * spacing[a] for a in range(n)))
    prefactor = -1.0 / (4 * np.pi) if n == 3 else 1.0 / (2 * np.pi)
    return prefactor * total / vol


def _far_kernel(spacing, offsets, i, j):
    """Tensor Gauss rule for the average of d_i d_j N over two cells."""
    n = len(spacing)
    vol = float(np.prod(spacing))
    total = np.zeros(len(offsets))
    for combo in itertools.product(range(3), repeat=n):
        w = np.prod([_TENT_WEIGHTS[c] for c in combo])
        r = [(offsets[:, a] + _TENT_NODES[combo[a]]) * spacing[a] for a in range(n)]
        r2 = sum(c * c for c in r)
        if n == 3:
            val = ((i == j) * r2 - 3 * r[i] * r[j]) / (4 * np.pi * r2**2.5)
        else:
            val = ((i == j) * r2 - 2 * r[i] * r[j]) / (2 * np.pi * r2 * r2)
        total += w * val
    return vol * total


def kernel_orthant(spacing, extent, i: int, j: int, near: int = NEAR_FIELD_CELLS) -> np.ndarray:
    """K_ij at offsets 0..extent[a] along every axis."""
    n = len(spacing)
    shape = tuple(int(e) + 1 for e in extent)
    idx = np.indices(shape).reshape(n, -1).T.astype(float)
    # distance in units of the widest cell side: the Gauss rule error scales with
    # (widest side / distance), so anisotropic cells need a longer near zone
    h = np.asarray(spacing, dtype=float)
    reach = np.max(idx * h, axis=1) / h.max()
    out = np.empty(len(idx))
    close = reach <= near
    out[close] = _near_kernel(spacing, idx[close], i, j)
    if np.any(~close):
        out[~close] = _far_kernel(spacing, idx[~close], i, j)
    return out.reshape(shape)


def _reflect(orthant: np.ndarray, parity) -> np.ndarray:
    """Extend values at offsets 0..D to -D..D using the given per-axis parity (+1/-1)."""
    full = orthant
    for axis, sgn in enumerate(parity):
        mirrored = np.flip(np.take(full, np.arange(1, full.shape[axis]), axis=axis), axis=axis) * sgn
        full = np.concatenate([mirrored, full], axis=axis)
    return full


def _wrap(full: np.ndarray, sizes) -> np.ndarray:
    """Place a centered array of offsets -D..D into a circular buffer of the given sizes."""
    out = np.zeros(sizes)
    d = [(s - 1) // 2 for s in full.shape]
    src = full
    for axis, (D, M) in enumerate(zip(d, sizes)):
        pos = np.take(src, np.arange(D, 2 * D + 1), axis=axis)
        neg = np.take(src, np.arange(0, D), axis=axis)
        shape = list(src.shape)
        shape[axis] = M
        buf = np.zeros(shape)
        sl_pos = [slice(None)] * len(shape)
        sl_pos[axis] = slice(0, D + 1)
        buf[tuple(sl_pos)] = pos
        if D:
            sl_neg = [slice(None)] * len(shape)
            sl_neg[axis] = slice(M - D, M)
            buf[tuple(sl_neg)] = neg
        src = buf
    out[...] = src
    return out


@dataclass(eq=False)
class DemagOperator:
    """Stray-field operator for a ``neumann_box`` domain; requires algebra dimension = n."""

    domain: DomainSpec
    pad_factor: int = 2
    _spectra: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.domain.kind != "neumann_box":
            raise DemagError("the stray field is defined for neumann_box domains")
        if int(self.pad_factor) != self.pad_factor or self.pad_factor < 2:
            raise DemagError(f"pad_factor must be an integer >= 2, got {self.pad_factor}")

    @property
    def n(self) -> int:
        return self.domain.n

    @property
    def padded_grid(self) -> tuple[int, ...]:
        return tuple(self.pad_factor * g for g in self.domain.grid)

    @property
    def padded_offset(self) -> tuple[int, ...]:
        """Index of the first cell of the box inside the padded grid."""
        return tuple((p - g) // 2 for p, g in zip(self.padded_grid, self.domain.grid))

    def _check(self, u):
        u = np.asarray(u, dtype=float)
        if u.shape != self.domain.grid + (self.n,):
            raise DemagError(
                f"stray field needs a field of shape {self.domain.grid + (self.n,)}; "
                f"got {u.shape} (the algebra dimension must equal the space dimension)"
            )
        return u

    def components(self):
        return [(i, j) for i in range(self.n) for j in range(i, self.n)]

    def kernel_table(self, extent) -> dict:
        """Orthant kernel values keyed by component pair."""
        return {(i, j): kernel_orthant(self.domain.spacing, extent, i, j) for i, j in self.components()}

    def _spectrum(self, target: str):
        if target in self._spectra:
            return self._spectra[target]
        g = self.domain.grid
        if target == "box":
            reach = [x - 1 for x in g]
        else:
            lo = self.padded_offset
            reach = [max(o + x - 1, p - o - 1) for o, x, p in zip(lo, g, self.padded_grid)]
        sizes = tuple(scipy.fft.next_fast_len(2 * r + 1, real=True) for r in reach)
        spectra = {}
        if self.n > 1:
            for (i, j), orth in self.kernel_table(reach).items():
                parity = [(-1) ** ((a == i) + (a == j)) for a in range(self.n)]
                spectra[(i, j)] = scipy.fft.rfftn(_wrap(_reflect(orth, parity), sizes))
        self._spectra[target] = (sizes, spectra)
        return self._spectra[target]

    def _convolve(self, u, target: str):
        u = self._check(u)
        if self.n == 1:
            h = -u
            if target == "box":
                return h
            out = np.zeros(self.padded_grid + (1,))
            o = self.padded_offset[0]
            out[o:o + self.domain.grid[0]] = h
            return out
        sizes, spectra = self._spectrum(target)
        axes = tuple(range(self.n))
        uhat = [scipy.fft.rfftn(u[..., j], s=sizes, axes=axes) for j in range(self.n)]
        if target == "box":
            window = tuple(slice(0, x) for x in self.domain.grid)
        else:
            window = tuple(np.arange(-o, p - o) % s for o, p, s in zip(self.padded_offset, self.padded_grid, sizes))
        out = []
        for i in range(self.n):
            acc = sum(spectra[(min(i, j), max(i, j))] * uhat[j] for j in range(self.n))
            full = scipy.fft.irfftn(acc, s=sizes, axes=axes)
            out.append(-(full[window] if target == "box" else full[np.ix_(*window)]))
        return np.stack(out, axis=-1)

    def demag_field(self, u) -> np.ndarray:
        """Cell-averaged stray field on the box, shape (*grid, n)."""
        return self._convolve(u, "box")

    def demag_field_padded(self, u) -> np.ndarray:
        """Stray field on the padded box that stands in for the whole space."""
        return self._convolve(u, "padded")

    def demag_energy(self, u) -> float:
        u = self._check(u)
        return float(-0.5 * np.sum(self.demag_field(u) * u) * self.domain.cell_volume)

    def contraction_norms(self, u) -> tuple[float, float]:
        """(integral of |h|^2 over the padded box, integral of |u|^2 over the box)."""
        u = self._check(u)
        h = self.demag_field_padded(u)
        dv = self.domain.cell_volume
        return float(np.sum(h * h) * dv), float(np.sum(u * u) * dv)

    def magnetostatic_potential(self, u) -> np.ndarray:
        """w = grad N * u on the padded grid, midpoint rule with the self cell omitted."""
        u = self._check(u)
        n = self.n
        h = np.asarray(self.domain.spacing)
        lo = self.padded_offset
        reach = [max(o + x - 1, p - o - 1) for o, x, p in zip(lo, self.domain.grid, self.padded_grid)]
        sizes = tuple(scipy.fft.next_fast_len(2 * r + 1, real=True) for r in reach)
        axes = tuple(range(n))
        grids = np.meshgrid(*(np.arange(-r, r + 1) for r in reach), indexing="ij")
        r2 = sum((g * s) ** 2 for g, s in zip(grids, h))
        acc = 0
        for j in range(n):
            xj = grids[j] * h[j]
            with np.errstate(all="ignore"):
                if n == 3:
                    k = xj / (4 * np.pi * r2**1.5)
                elif n == 2:
                    k = xj / (2 * np.pi * r2)
                else:
                    k = 0.5 * np.sign(xj)
            k = np.where(r2 > 0, k, 0.0) * self.domain.cell_volume
            acc = acc + scipy.fft.rfftn(_wrap(k, sizes)) * scipy.fft.rfftn(u[..., j], s=sizes, axes=axes)
        full = scipy.fft.irfftn(acc, s=sizes, axes=axes)
        window = tuple(np.arange(-o, p - o) % s for o, p, s in zip(lo, self.padded_grid, sizes))
        return full[np.ix_(*window)]

    def kernel_cache(self) -> np.ndarray:
        """Kernel values on the box offsets, stacked by component, for persistence."""
        table = self.kernel_table([x - 1 for x in self.domain.grid]) if self.n > 1 else {}
        return np.stack([table[c] for c in self.components()], axis=-1) if table else np.zeros(self.domain.grid + (0,))
