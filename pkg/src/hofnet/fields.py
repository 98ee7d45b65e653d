"""Steady 3D vector fields and the axis-aligned block decomposition of their domain.

Two field families are supported: closed-form analytic fields (constant,
swirling-helix, sinusoidal-mixing) and regular-grid sampled fields with
trilinear interpolation.  A ``BlockGrid`` partitions the domain into
``nbx * nby * nbz`` half-open boxes; the upper domain boundary belongs to the
last block along each axis so the mapping is total on the closed domain.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np


class DomainError(ValueError):
    """A queried position lies outside the field domain."""


class FieldFormatError(ValueError):
    """A grid-field file is malformed or inconsistent."""


def _as_points(points):
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    if single:
        pts = pts[None, :]
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected points of shape (n, 3), got {pts.shape}")
    return pts, single


@dataclass(frozen=True)
class BlockGrid:
    """Uniform decomposition of an axis-aligned box into blocks.

    Flat block ids are x-fastest: ``id = ix + nbx * (iy + nby * iz)``.
    """

    lo: tuple[float, float, float]
    hi: tuple[float, float, float]
    nblocks: tuple[int, int, int]

    def __post_init__(self):
        if any(h <= l for l, h in zip(self.lo, self.hi)):
            raise ValueError("domain upper bound must exceed lower bound on every axis")
        if any(n < 1 for n in self.nblocks):
            raise ValueError("need at least one block per axis")

    @property
    def block_count(self) -> int:
        nx, ny, nz = self.nblocks
        return nx * ny * nz

    @property
    def edge_lengths(self) -> tuple[float, float, float]:
        return tuple(
            (h - l) / n for l, h, n in zip(self.lo, self.hi, self.nblocks)
        )

    @property
    def diagonal(self) -> float:
        return math.sqrt(sum((h - l) ** 2 for l, h in zip(self.lo, self.hi)))

    def contains(self, points) -> np.ndarray:
        pts, single = _as_points(points)
        lo = np.asarray(self.lo)
        hi = np.asarray(self.hi)
        ok = np.all((pts >= lo) & (pts <= hi), axis=1)
        return bool(ok[0]) if single else ok

    def block_of(self, points):
        """Map positions to flat block ids.

        Boxes are half-open except at the upper domain boundary, which maps to
        the last block of its axis.  Raises ``DomainError`` for positions
        outside the closed domain.
        """
        pts, single = _as_points(points)
        lo = np.asarray(self.lo)
        hi = np.asarray(self.hi)
        if np.any((pts < lo) | (pts > hi)):
            bad = pts[np.any((pts < lo) | (pts > hi), axis=1)][0]
            raise DomainError(f"position {tuple(bad)} outside domain {self.lo}..{self.hi}")
        nb = np.asarray(self.nblocks, dtype=np.int64)
        frac = (pts - lo) / (hi - lo)
        idx = np.floor(frac * nb).astype(np.int64)
        idx = np.minimum(idx, nb - 1)
        flat = idx[:, 0] + nb[0] * (idx[:, 1] + nb[1] * idx[:, 2])
        return int(flat[0]) if single else flat

    def block_corner(self, block_id: int) -> tuple[float, float, float]:
        nbx, nby, nbz = self.nblocks
        ix = block_id % nbx
        iy = (block_id // nbx) % nby
        iz = block_id // (nbx * nby)
        e = self.edge_lengths
        return (self.lo[0] + ix * e[0], self.lo[1] + iy * e[1], self.lo[2] + iz * e[2])


class ConstantField:
    """Spatially constant velocity, mostly useful for tests."""

    def __init__(self, v, lo=(0.0, 0.0, 0.0), hi=(1.0, 1.0, 1.0)):
        self.v = tuple(float(c) for c in v)
        self.lo = tuple(float(c) for c in lo)
        self.hi = tuple(float(c) for c in hi)

    def velocity(self, points):
        pts, single = _as_points(points)
        out = np.tile(np.asarray(self.v, dtype=np.float64), (pts.shape[0], 1))
        return out[0] if single else out


class SinusoidalMixingField:
    """Divergence-free field of crossed sine/cosine shears.

    v = (a*sin z + c*cos y, b*sin x + a*cos z, c*sin y + b*cos x)

    With the default coefficients (a = sqrt(3), b = sqrt(2), c = 1) the
    streamlines mix chaotically, which makes the field a good stress test for
    density estimation.  The natural domain is one period, [0, 2*pi]^3.
    """

    def __init__(self, a=math.sqrt(3.0), b=math.sqrt(2.0), c=1.0,
                 lo=(0.0, 0.0, 0.0), hi=(2.0 * math.pi,) * 3):
        self.a = float(a)
        self.b = float(b)
        self.c = float(c)
        self.lo = tuple(float(v) for v in lo)
        self.hi = tuple(float(v) for v in hi)

    def velocity(self, points):
        pts, single = _as_points(points)
        x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
        out = np.empty_like(pts)
        out[:, 0] = self.a * np.sin(z) + self.c * np.cos(y)
        out[:, 1] = self.b * np.sin(x) + self.a * np.cos(z)
        out[:, 2] = self.c * np.sin(y) + self.b * np.cos(x)
        return out[0] if single else out


class SwirlField:
    """Vertical helix with radius-dependent swirl around the domain's center axis."""

    def __init__(self, swirl=2.0, updraft=0.6, inflow=0.15, core=None,
                 lo=(0.0, 0.0, 0.0), hi=(1.0, 1.0, 1.0)):
        self.lo = tuple(float(v) for v in lo)
        self.hi = tuple(float(v) for v in hi)
        self.swirl = float(swirl)
        self.updraft = float(updraft)
        self.inflow = float(inflow)
        if core is None:
            core = 0.3 * min(self.hi[0] - self.lo[0], self.hi[1] - self.lo[1])
        self.core = float(core)
        self.cx = 0.5 * (self.lo[0] + self.hi[0])
        self.cy = 0.5 * (self.lo[1] + self.hi[1])

    def velocity(self, points):
        pts, single = _as_points(points)
        dx = pts[:, 0] - self.cx
        dy = pts[:, 1] - self.cy
        r2 = dx * dx + dy * dy
        s = self.swirl * np.exp(-r2 / (self.core * self.core))
        out = np.empty_like(pts)
        out[:, 0] = -s * dy - self.inflow * dx
        out[:, 1] = s * dx - self.inflow * dy
        out[:, 2] = self.updraft * np.exp(-r2 / (4.0 * self.core * self.core))
        return out[0] if single else out


class GridField:
    """Velocity sampled on a regular grid, queried by trilinear interpolation.

    ``data`` has shape (nx, ny, nz, 3) with samples at
    ``origin + (i*sx, j*sy, k*sz)``; the domain is the closed hull of the
    sample positions and queries at sample points are exact.
    """

    def __init__(self, data: np.ndarray, spacing, origin=(0.0, 0.0, 0.0)):
        data = np.ascontiguousarray(data, dtype=np.float64)
        if data.ndim != 4 or data.shape[3] != 3 or min(data.shape[:3]) < 2:
            raise ValueError(f"grid data must have shape (nx>=2, ny>=2, nz>=2, 3), got {data.shape}")
        self.data = data
        self.spacing = tuple(float(s) for s in spacing)
        if any(s <= 0 for s in self.spacing):
            raise ValueError("grid spacing must be positive")
        self.origin = tuple(float(o) for o in origin)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape[:3]

    @property
    def lo(self) -> tuple[float, float, float]:
        return self.origin

    @property
    def hi(self) -> tuple[float, float, float]:
        return tuple(
            o + (n - 1) * s for o, n, s in zip(self.origin, self.dims, self.spacing)
        )

    @classmethod
    def from_analytic(cls, field, dims) -> "GridField":
        """Sample an analytic field onto a regular grid spanning its domain."""
        nx, ny, nz = dims
        spacing = tuple(
            (h - l) / (n - 1) for l, h, n in zip(field.lo, field.hi, dims)
        )
        xs = field.lo[0] + spacing[0] * np.arange(nx)
        ys = field.lo[1] + spacing[1] * np.arange(ny)
        zs = field.lo[2] + spacing[2] * np.arange(nz)
        gx, gy, gz = np.meshgrid(xs, ys, zs, indexing="ij")
        pts = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
        vel = field.velocity(pts).reshape(nx, ny, nz, 3)
        return cls(vel, spacing, origin=field.lo)

    def velocity(self, points):
        """Trilinear interpolation; raises ``DomainError`` outside the domain."""
        pts, single = _as_points(points)
        lo = np.asarray(self.lo)
        hi = np.asarray(self.hi)
        if np.any((pts < lo) | (pts > hi)):
            bad = pts[np.any((pts < lo) | (pts > hi), axis=1)][0]
            raise DomainError(f"position {tuple(bad)} outside domain {self.lo}..{self.hi}")
        out = np.empty_like(pts)
        _trilinear(self.data, self.origin, self.spacing,
                   pts[:, 0], pts[:, 1], pts[:, 2], out)
        return out[0] if single else out

    def save(self, header_path: str) -> None:
        """Write the header JSON plus the raw sample file it points at.

        The raw file is little-endian float32, x-fastest, with the three
        velocity components interleaved per sample.
        """
        base = os.path.splitext(header_path)[0]
        raw_name = os.path.basename(base) + ".raw"
        raw_path = os.path.join(os.path.dirname(header_path), raw_name)
        # (nx, ny, nz, 3) -> x-fastest on disk means z is the slowest index.
        disk = np.transpose(self.data, (2, 1, 0, 3)).astype("<f4")
        with open(raw_path, "wb") as f:
            f.write(np.ascontiguousarray(disk).tobytes())
        header = {
            "dims": list(self.dims),
            "spacing": list(self.spacing),
            "data": raw_name,
        }
        with open(header_path, "w", encoding="utf-8") as f:
            json.dump(header, f, sort_keys=True)
            f.write("\n")

    @classmethod
    def load(cls, header_path: str) -> "GridField":
        with open(header_path, "r", encoding="utf-8") as f:
            try:
                header = json.load(f)
            except json.JSONDecodeError as e:
                raise FieldFormatError(f"invalid header JSON in {header_path}: {e}") from e
        for key in ("dims", "spacing", "data"):
            if key not in header:
                raise FieldFormatError(f"header {header_path} missing key {key!r}")
        dims = tuple(int(d) for d in header["dims"])
        spacing = tuple(float(s) for s in header["spacing"])
        raw_path = os.path.join(os.path.dirname(header_path), header["data"])
        expected = dims[0] * dims[1] * dims[2] * 3 * 4
        actual = os.path.getsize(raw_path)
        if actual != expected:
            raise FieldFormatError(
                f"{raw_path}: expected {expected} bytes for dims {dims}, found {actual}"
            )
        flat = np.fromfile(raw_path, dtype="<f4")
        disk = flat.reshape(dims[2], dims[1], dims[0], 3)
        data = np.transpose(disk, (2, 1, 0, 3)).astype(np.float64)
        return cls(data, spacing)


def _trilinear(data, origin, spacing, x, y, z, out):
    """Vectorized trilinear interpolation (the reference arithmetic).

    The compiled kernel mirrors this exact sequence of lerps so both
    backends produce bit-identical samples.
    """
    nx, ny, nz = data.shape[:3]
    gx = (x - origin[0]) / spacing[0]
    gy = (y - origin[1]) / spacing[1]
    gz = (z - origin[2]) / spacing[2]
    i = np.minimum(np.maximum(np.floor(gx).astype(np.int64), 0), nx - 2)
    j = np.minimum(np.maximum(np.floor(gy).astype(np.int64), 0), ny - 2)
    k = np.minimum(np.maximum(np.floor(gz).astype(np.int64), 0), nz - 2)
    fx = (gx - i)[:, None]
    fy = (gy - j)[:, None]
    fz = (gz - k)[:, None]
    v000 = data[i, j, k]
    v100 = data[i + 1, j, k]
    v010 = data[i, j + 1, k]
    v110 = data[i + 1, j + 1, k]
    v001 = data[i, j, k + 1]
    v101 = data[i + 1, j, k + 1]
    v011 = data[i, j + 1, k + 1]
    v111 = data[i + 1, j + 1, k + 1]
    c00 = v000 + (v100 - v000) * fx
    c10 = v010 + (v110 - v010) * fx
    c01 = v001 + (v101 - v001) * fx
    c11 = v011 + (v111 - v011) * fx
    c0 = c00 + (c10 - c00) * fy
    c1 = c01 + (c11 - c01) * fy
    out[:] = c0 + (c1 - c0) * fz


def field_bounds(field) -> tuple[tuple[float, float, float], tuple[float, float, float]]:
    return tuple(field.lo), tuple(field.hi)


def block_grid_for(field, nblocks) -> BlockGrid:
    lo, hi = field_bounds(field)
    return BlockGrid(lo, hi, tuple(int(n) for n in nblocks))
