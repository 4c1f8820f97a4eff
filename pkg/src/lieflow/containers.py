"""Binary field containers for snapshots, basis caches and kernel caches.

Layout (little-endian): 8-byte magic, uint32 version, uint32 n, n x uint32 grid sizes,
n x float64 lengths, uint32 m, float64 time, then the payload as row-major float64
with shape (*grid, m).
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .spectral_domain import DomainSpec, ModeBasis

MAGIC = b"LIEFLD\x00\x01"
VERSION = 1


class ContainerError(ValueError):
    def __init__(self, path, message: str):
        super().__init__(f"{path}: {message}")
        self.path = str(path)


@dataclass
class FieldContainer:
    grid: tuple[int, ...]
    lengths: tuple[float, ...]
    time: float
    data: np.ndarray  # (*grid, m)

    @property
    def m(self) -> int:
        return self.data.shape[-1]


def encode(grid, lengths, time: float, data) -> bytes:
    grid = tuple(int(g) for g in grid)
    lengths = tuple(float(L) for L in lengths)
    data = np.asarray(data, dtype="<f8")
    if len(grid) != len(lengths):
        raise ValueError("grid and lengths differ in dimension")
    if data.shape[:-1] != grid or data.ndim != len(grid) + 1:
        raise ValueError(f"payload shape {data.shape} does not match grid {grid}")
    n = len(grid)
    head = MAGIC + struct.pack(f"<II{n}I{n}dId", VERSION, n, *grid, *lengths, data.shape[-1], float(time))
    return head + np.ascontiguousarray(data).tobytes()


def decode(raw: bytes, path="<bytes>") -> FieldContainer:
    if len(raw) < 16 or raw[:8] != MAGIC:
        raise ContainerError(path, "not a field container (bad magic)")
    version, n = struct.unpack_from("<II", raw, 8)
    if version != VERSION:
        raise ContainerError(path, f"unsupported container version {version}")
    if not 1 <= n <= 8:
        raise ContainerError(path, f"implausible dimension {n}")
    fmt = f"<{n}I{n}dId"
    size = struct.calcsize(fmt)
    if len(raw) < 16 + size:
        raise ContainerError(path, "truncated header")
    vals = struct.unpack_from(fmt, raw, 16)
    grid, lengths, m, time = tuple(vals[:n]), tuple(vals[n:2 * n]), vals[2 * n], vals[2 * n + 1]
    count = int(np.prod(grid)) * m
    body = raw[16 + size:]
    if len(body) != 8 * count:
        raise ContainerError(path, f"payload holds {len(body)} bytes, header implies {8 * count}")
    data = np.frombuffer(body, dtype="<f8").reshape(grid + (m,)).astype(float)
    if not np.all(np.isfinite(data)):
        raise ContainerError(path, "payload contains non-finite values")
    return FieldContainer(grid, lengths, time, data)


def write_field(path, domain: DomainSpec, data, time: float = 0.0) -> Path:
    path = Path(path)
    path.write_bytes(encode(domain.grid, domain.lengths, time, data))
    return path


def read_field(path) -> FieldContainer:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ContainerError(path, f"cannot read ({exc.strerror})") from exc
    return decode(raw, path)


def write_basis(path, basis: ModeBasis) -> Path:
    """Modes as the m-axis of a container; eigenvalues go in a sibling .csv."""
    path = Path(path)
    modes = np.moveaxis(basis.modes.reshape((basis.N,) + basis.domain.grid), 0, -1)
    write_field(path, basis.domain, modes, 0.0)
    lines = ["index,eigenvalue,label"]
    lines += [f"{i},{lam:.17g},{lab}" for i, (lam, lab) in enumerate(zip(basis.eigenvalues, basis.labels))]
    path.with_suffix(".csv").write_text("\n".join(lines) + "\n")
    return path


def write_kernel(path, domain: DomainSpec, kernel: np.ndarray) -> Path:
    """A real kernel table of shape (*extent, c) stored with the cell spacing as lengths."""
    path = Path(path)
    kernel = np.asarray(kernel, dtype=float)
    extent = kernel.shape[:-1]
    lengths = tuple(h * e for h, e in zip(domain.spacing, extent))
    path.write_bytes(encode(extent, lengths, 0.0, kernel))
    return path
