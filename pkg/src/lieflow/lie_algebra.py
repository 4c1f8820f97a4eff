"""Finite-dimensional Lie algebras given by structure constants.

An algebra is stored as the rank-3 array ``c`` with ``[e_i, e_j] = sum_k c[i, j, k] e_k``
together with the metric matrix of the invariant inner product, which is a positive
multiple of the negated Killing form.  All element-wise operations broadcast over
leading axes, so a field sampled on a grid of shape ``(*grid, m)`` can be passed
directly.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class ContractViolation(ValueError):
    """Raised when an input does not satisfy the documented preconditions."""


class AlgebraError(ValueError):
    """Raised when structure constants do not define a compact semisimple algebra."""


VALIDATION_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class LieAlgebra:
    name: str
    structure_constants: np.ndarray
    metric: np.ndarray
    scale: float = 1.0
    _flat: np.ndarray = field(init=False, repr=False)
    _orthonormal: bool = field(init=False, repr=False)

    def __post_init__(self):
        c = np.ascontiguousarray(self.structure_constants, dtype=float)
        g = np.ascontiguousarray(self.metric, dtype=float)
        m = c.shape[0]
        if c.shape != (m, m, m) or g.shape != (m, m):
            raise ContractViolation(f"inconsistent shapes {c.shape} and {g.shape}")
        c.setflags(write=False)
        g.setflags(write=False)
        object.__setattr__(self, "structure_constants", c)
        object.__setattr__(self, "metric", g)
        object.__setattr__(self, "_flat", c.reshape(m, m * m))
        object.__setattr__(self, "_orthonormal", bool(np.array_equal(g, np.eye(m))))

    @property
    def dim(self) -> int:
        return self.structure_constants.shape[0]

    @property
    def is_orthonormal(self) -> bool:
        return self._orthonormal

    def _check(self, *xs):
        for x in xs:
            if np.shape(x)[-1:] != (self.dim,):
                raise ContractViolation(
                    f"{self.name}: expected trailing dimension {self.dim}, got shape {np.shape(x)}"
                )

    def bracket(self, x, y):
        """Lie bracket, broadcasting over leading axes."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        self._check(x, y)
        m = self.dim
        # (x @ c)[..., j, k] = sum_i x_i c[i, j, k]
        xc = (x @ self._flat).reshape(x.shape[:-1] + (m, m))
        return np.einsum("...j,...jk->...k", y, xc)

    def ad(self, x) -> np.ndarray:
        """Matrix of ad x acting on coordinate vectors: (ad x)[k, j] = sum_i x_i c[i, j, k]."""
        x = np.asarray(x, dtype=float)
        self._check(x)
        return np.einsum("...i,ijk->...kj", x, self.structure_constants)

    def killing_matrix(self) -> np.ndarray:
        return killing_matrix(self.structure_constants)

    def killing_form(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        self._check(x, y)
        return np.einsum("...i,ij,...j->...", x, self.killing_matrix(), y)

    def inner(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        self._check(x, y)
        if self._orthonormal:
            return np.sum(x * y, axis=-1)
        return np.einsum("...i,ij,...j->...", x, self.metric, y)

    def norm(self, x):
        return np.sqrt(np.maximum(self.inner(x, x), 0.0))

    def lower(self, x):
        """Coordinates of the functional <x, .> (metric applied to x)."""
        x = np.asarray(x, dtype=float)
        return x if self._orthonormal else x @ self.metric

    def raise_index(self, covector):
        """Inverse of :meth:`lower`."""
        covector = np.asarray(covector, dtype=float)
        if self._orthonormal:
            return covector
        return covector @ np.linalg.inv(self.metric)

    def dual_norm(self, covector):
        """Norm of a functional given by its values on the basis e_a."""
        covector = np.asarray(covector, dtype=float)
        if self._orthonormal:
            return np.sqrt(np.sum(covector * covector, axis=-1))
        ginv = np.linalg.inv(self.metric)
        return np.sqrt(np.maximum(np.einsum("...i,ij,...j->...", covector, ginv, covector), 0.0))

    def project_ball(self, x):
        """Map x to x / max(|x|, 1)."""
        return project_ball(self, x)

    def random_elements(self, rng: np.random.Generator, count: int) -> np.ndarray:
        return rng.standard_normal((count, self.dim))

    def with_structure_constants(self, c: np.ndarray, name: str | None = None) -> "LieAlgebra":
        """Same metric, different constants.  Intended for mutation tests only."""
        return LieAlgebra(name or self.name + "*", np.array(c, dtype=float), self.metric.copy(), self.scale)


class CrossProductAlgebra(LieAlgebra):
    """so(3) with the bracket hard-coded as the cross product of R^3."""

    def __init__(self):
        super().__init__("so3-cross", levi_civita(), np.eye(3), 0.5)

    def bracket(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        self._check(x, y)
        return np.cross(x, y)


def killing_matrix(c: np.ndarray) -> np.ndarray:
    """B_ab = trace(ad e_a ad e_b) = sum_{j,k} c[a, j, k] c[b, k, j]."""
    c = np.asarray(c, dtype=float)
    return np.einsum("ajk,bkj->ab", c, c)


def levi_civita() -> np.ndarray:
    eps = np.zeros((3, 3, 3))
    for (i, j, k), s in {(0, 1, 2): 1, (1, 2, 0): 1, (2, 0, 1): 1,
                         (1, 0, 2): -1, (0, 2, 1): -1, (2, 1, 0): -1}.items():
        eps[i, j, k] = s
    return eps


def from_structure_constants(c, name: str = "custom", scale: float | None = None) -> LieAlgebra:
    """Build an algebra with metric ``scale * (-B)``.

    The default scale is ``m / trace(-B)``, which makes the standard bases of the
    built-in algebras orthonormal.  Raises :class:`AlgebraError` when ``-B`` is not
    positive definite.
    """
    c = np.array(c, dtype=float)
    if c.ndim != 3 or len(set(c.shape)) != 1:
        raise AlgebraError(f"structure constants must have shape (m, m, m), got {c.shape}")
    if not np.all(np.isfinite(c)):
        raise AlgebraError("structure constants contain non-finite entries")
    m = c.shape[0]
    neg_b = -killing_matrix(c)
    neg_b = 0.5 * (neg_b + neg_b.T)
    eig_min = float(np.linalg.eigvalsh(neg_b)[0]) if m else 0.0
    if not eig_min > VALIDATION_TOL:
        raise AlgebraError(
            f"{name}: negated Killing form is not positive definite (smallest eigenvalue {eig_min:.3e})"
        )
    if scale is None:
        scale = m / float(np.trace(neg_b))
    if not scale > 0:
        raise AlgebraError(f"{name}: metric scale must be positive, got {scale}")
    metric = scale * neg_b
    # snap to the identity when the basis is orthonormal up to round-off
    if np.max(np.abs(metric - np.eye(m))) < 1e-14:
        metric = np.eye(m)
    return LieAlgebra(name, c, metric, float(scale))


def so3(scale: float | None = None) -> LieAlgebra:
    return from_structure_constants(levi_civita(), "so3", scale)


def su2(scale: float | None = None) -> LieAlgebra:
    """su(2) in the basis e_k = i sigma_k, for which [e_i, e_j] = -2 eps_ijk e_k."""
    return from_structure_constants(-2.0 * levi_civita(), "su2", scale)


def so4(scale: float | None = None) -> LieAlgebra:
    """so(4) in the basis E_ab = e_a e_b^T - e_b e_a^T, a < b, ordered lexicographically."""
    pairs = [(a, b) for a in range(4) for b in range(a + 1, 4)]

    def coords(mat):
        return np.array([mat[a, b] for a, b in pairs])

    basis = []
    for a, b in pairs:
        e = np.zeros((4, 4))
        e[a, b], e[b, a] = 1.0, -1.0
        basis.append(e)
    c = np.zeros((6, 6, 6))
    for i, x in enumerate(basis):
        for j, y in enumerate(basis):
            c[i, j] = coords(x @ y - y @ x)
    return from_structure_constants(c, "so4", scale)


BUILTINS = {"so3": so3, "su2": su2, "so4": so4}


def builtin(name: str, scale: float | None = None) -> LieAlgebra:
    try:
        return BUILTINS[name](scale)
    except KeyError:
        raise AlgebraError(f"unknown built-in algebra {name!r}; choose from {sorted(BUILTINS)}") from None


def parse_structure_constants(text: str, source: str = "<text>") -> np.ndarray:
    """Parse the ``dim m`` / ``i j k value`` text format (1-based indices)."""
    m = None
    c = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if m is None:
            if len(parts) != 2 or parts[0] != "dim":
                raise AlgebraError(f"{source}:{lineno}: expected header 'dim m'")
            m = int(parts[1])
            if m < 1:
                raise AlgebraError(f"{source}:{lineno}: dimension must be positive")
            c = np.zeros((m, m, m))
            continue
        if len(parts) != 4:
            raise AlgebraError(f"{source}:{lineno}: expected 'i j k value'")
        i, j, k = (int(p) - 1 for p in parts[:3])
        if not all(0 <= q < m for q in (i, j, k)):
            raise AlgebraError(f"{source}:{lineno}: index out of range 1..{m}")
        c[i, j, k] = float(parts[3])
    if c is None:
        raise AlgebraError(f"{source}: empty algebra file")
    return c


def format_structure_constants(c: np.ndarray) -> str:
    c = np.asarray(c)
    lines = [f"dim {c.shape[0]}"]
    for i, j, k in zip(*np.nonzero(c)):
        lines.append(f"{i + 1} {j + 1} {k + 1} {float(c[i, j, k])!r}")
    return "\n".join(lines) + "\n"


def load_algebra(spec: str, scale: float | None = None) -> LieAlgebra:
    """Resolve a built-in name or a path to a structure-constant file."""
    if spec in BUILTINS:
        return builtin(spec, scale)
    path = Path(spec)
    if not path.is_file():
        raise AlgebraError(f"algebra {spec!r} is neither a built-in name nor a readable file")
    c = parse_structure_constants(path.read_text(), str(path))
    return from_structure_constants(c, path.stem, scale)


def project_ball(algebra: LieAlgebra, x):
    x = np.asarray(x, dtype=float)
    r = algebra.norm(x)
    return x / np.maximum(r, 1.0)[..., None]


@dataclass(frozen=True)
class ValidationReport:
    antisymmetry_residual: float
    jacobi_residual: float
    killing_min_eigenvalue: float
    adinvariance_residual: float
    failures: tuple[str, ...]

    @property
    def passed(self) -> bool:
        return not self.failures

    def summary(self) -> str:
        status = "pass" if self.passed else "FAIL: " + ", ".join(self.failures)
        return (
            f"antisymmetry {self.antisymmetry_residual:.2e}  jacobi {self.jacobi_residual:.2e}  "
            f"min eig(-B) {self.killing_min_eigenvalue:.3e}  ad-invariance {self.adinvariance_residual:.2e}  {status}"
        )


def jacobi_residual(c: np.ndarray) -> float:
    c = np.asarray(c, dtype=float)
    t = np.einsum("ijl,lkp->ijkp", c, c)
    cyc = t + t.transpose(1, 2, 0, 3) + t.transpose(2, 0, 1, 3)
    return float(np.max(np.abs(cyc))) if cyc.size else 0.0


def adinvariance_residual(algebra: LieAlgebra, samples: int = 1000, seed: int = 0) -> float:
    """max |<[X,Y],Z> + <Y,[X,Z]>| / (|X||Y||Z|) over random triples."""
    rng = np.random.default_rng(seed)
    x, y, z = (algebra.random_elements(rng, samples) for _ in range(3))
    lhs = algebra.inner(algebra.bracket(x, y), z) + algebra.inner(y, algebra.bracket(x, z))
    scale = algebra.norm(x) * algebra.norm(y) * algebra.norm(z)
    return float(np.max(np.abs(lhs) / scale))


def validate_algebra(target, tol: float = VALIDATION_TOL, samples: int = 1000, seed: int = 0) -> ValidationReport:
    """Check antisymmetry, the Jacobi identity, definiteness of the Killing form and,
    when a metric is available, ad-invariance of the inner product.

    ``target`` may be a :class:`LieAlgebra` or a bare structure-constant array.
    """
    c = target.structure_constants if isinstance(target, LieAlgebra) else np.asarray(target, dtype=float)
    failures = []
    anti = float(np.max(np.abs(c + c.transpose(1, 0, 2)))) if c.size else 0.0
    if anti >= tol:
        failures.append("antisymmetry")
    jac = jacobi_residual(c)
    if jac >= tol:
        failures.append("jacobi")
    neg_b = -killing_matrix(c)
    eig_min = float(np.linalg.eigvalsh(0.5 * (neg_b + neg_b.T))[0]) if c.size else 0.0
    if not eig_min > tol:
        failures.append("killing-definiteness")
    adinv = float("nan")
    if isinstance(target, LieAlgebra):
        adinv = adinvariance_residual(target, samples, seed)
        if not adinv <= tol:
            failures.append("ad-invariance")
    return ValidationReport(anti, jac, eig_min, adinv, tuple(failures))


def bracket_norm_constant(algebra: LieAlgebra, samples: int = 4096, seed: int = 0) -> float:
    """Sampled sup of |[X, Y]| / (|X||Y|)."""
    rng = np.random.default_rng(seed)
    x = algebra.random_elements(rng, samples)
    y = algebra.random_elements(rng, samples)
    return float(np.max(algebra.norm(algebra.bracket(x, y)) / (algebra.norm(x) * algebra.norm(y))))
