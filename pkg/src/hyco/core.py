"""Grids, fields, scattered datasets and the small numerical helpers shared by
the physical models, the network and the trainer.

Point batches are plain ``(n, 3)`` float arrays with columns ``x, y, t``;
static problems carry ``t = 0``.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

PERIODIC = "periodic"
DIRICHLET_ZERO = "dirichlet_zero"
_BOUNDARY_FLAGS = {PERIODIC: 0, DIRICHLET_ZERO: 1}

FIELD_MAGIC = b"HYCO"
FIELD_VERSION = 1
_FIELD_HEADER = struct.Struct("<4sIII4dB")


class FieldFormatError(ValueError):
    """A field file could not be decoded."""


class BadMagicError(FieldFormatError):
    pass


class BadVersionError(FieldFormatError):
    pass


class TruncatedFileError(FieldFormatError):
    pass


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """PCG64 generator keyed on ``(seed, *stream)``.

    Every stochastic operation in the package draws from one of these, so
    the same key gives the same stream on every platform.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, stream)])))


@dataclass(frozen=True)
class Grid2D:
    nx: int
    ny: int
    x_min: float
    x_max: float
    y_min: float
    y_max: float
    boundary: str = DIRICHLET_ZERO

    def __post_init__(self):
        if self.nx < 3 or self.ny < 3:
            raise ValueError(f"grid needs at least 3 nodes per axis, got {self.nx}x{self.ny}")
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise ValueError("grid bounds must satisfy max > min")
        if self.boundary not in _BOUNDARY_FLAGS:
            raise ValueError(f"unknown boundary kind {self.boundary!r}")

    @property
    def periodic(self) -> bool:
        return self.boundary == PERIODIC

    @property
    def hx(self) -> float:
        n = self.nx if self.periodic else self.nx - 1
        return (self.x_max - self.x_min) / n

    @property
    def hy(self) -> float:
        n = self.ny if self.periodic else self.ny - 1
        return (self.y_max - self.y_min) / n

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    def x_coords(self) -> np.ndarray:
        return self.x_min + self.hx * np.arange(self.nx)

    def y_coords(self) -> np.ndarray:
        return self.y_min + self.hy * np.arange(self.ny)

    def meshgrid(self) -> tuple[np.ndarray, np.ndarray]:
        """Node coordinates as two ``(ny, nx)`` arrays."""
        return np.meshgrid(self.x_coords(), self.y_coords())

    def node_points(self, t: float = 0.0) -> np.ndarray:
        X, Y = self.meshgrid()
        return np.column_stack([X.ravel(), Y.ravel(), np.full(X.size, float(t))])

    def region(self) -> "Region":
        return Region(self.x_min, self.x_max, self.y_min, self.y_max)


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Node values on a grid, stored as a read-only ``(ny, nx)`` array.

    ``values.ravel()`` is the row-major layout used on disk (x varies fastest).
    """

    grid: Grid2D
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64).reshape(self.grid.shape)
        if not np.all(np.isfinite(vals)):
            raise ValueError("field values must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_function(cls, grid: Grid2D, fn: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> "ScalarField":
        X, Y = grid.meshgrid()
        return cls(grid, np.broadcast_to(fn(X, Y), grid.shape))

    def __call__(self, x, y):
        return bilinear_interpolate(self, x, y)


@dataclass(frozen=True)
class Region:
    """Axis-aligned rectangle, optionally times a time interval."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float
    t_min: float = 0.0
    t_max: float = 0.0

    @property
    def dynamic(self) -> bool:
        return self.t_max > self.t_min

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    @property
    def measure(self) -> float:
        """Lebesgue measure of the region (space-time measure when dynamic)."""
        return self.area * (self.t_max - self.t_min if self.dynamic else 1.0)

    def contains(self, points: np.ndarray, atol: float = 0.0) -> np.ndarray:
        p = np.atleast_2d(points)
        ok = (
            (p[:, 0] >= self.x_min - atol) & (p[:, 0] <= self.x_max + atol)
            & (p[:, 1] >= self.y_min - atol) & (p[:, 1] <= self.y_max + atol)
        )
        if p.shape[1] > 2:
            ok &= (p[:, 2] >= self.t_min - atol) & (p[:, 2] <= self.t_max + atol)
        return ok

    def within(self, other: "Region") -> bool:
        return (
            self.x_min >= other.x_min and self.x_max <= other.x_max
            and self.y_min >= other.y_min and self.y_max <= other.y_max
            and self.t_min >= other.t_min and self.t_max <= other.t_max
        )


def sample_uniform_points(region: Region, n: int, seed: int, *stream: int) -> np.ndarray:
    """``n`` i.i.d. uniform points over ``region`` as an ``(n, 3)`` array."""
    if n < 1:
        raise ValueError("need at least one point")
    if not (region.x_max > region.x_min and region.y_max > region.y_min):
        raise ValueError(f"degenerate sampling region {region}")
    if region.t_max < region.t_min:
        raise ValueError("time interval is reversed")
    rng = make_rng(seed, *stream)
    u = rng.random((n, 3))
    lo = np.array([region.x_min, region.y_min, region.t_min])
    hi = np.array([region.x_max, region.y_max, region.t_max])
    pts = lo + u * (hi - lo)
    if not region.dynamic:
        pts[:, 2] = region.t_min
    return pts


def bilinear_stencil(grid: Grid2D, x, y) -> tuple[np.ndarray, np.ndarray]:
    """Flat node indices and weights, each ``(n, 4)``, of the bilinear blend.

    Periodic grids wrap coordinates modulo the period; on other grids a point
    outside the closed domain raises ``ValueError``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("query coordinates must be finite")
    sx = (x - grid.x_min) / grid.hx
    sy = (y - grid.y_min) / grid.hy
    if grid.periodic:
        sx = np.mod(sx, grid.nx)
        sy = np.mod(sy, grid.ny)
        i0 = np.floor(sx).astype(np.intp)
        j0 = np.floor(sy).astype(np.intp)
        fx, fy = sx - i0, sy - j0
        i0 %= grid.nx
        j0 %= grid.ny
        i1 = (i0 + 1) % grid.nx
        j1 = (j0 + 1) % grid.ny
    else:
        # small slack absorbs round-off at the closing edge
        eps = 1e-9
        if np.any((sx < -eps) | (sx > grid.nx - 1 + eps) | (sy < -eps) | (sy > grid.ny - 1 + eps)):
            raise ValueError("query point outside the grid domain")
        sx = np.clip(sx, 0.0, grid.nx - 1)
        sy = np.clip(sy, 0.0, grid.ny - 1)
        i0 = np.minimum(np.floor(sx).astype(np.intp), grid.nx - 2)
        j0 = np.minimum(np.floor(sy).astype(np.intp), grid.ny - 2)
        fx, fy = sx - i0, sy - j0
        i1, j1 = i0 + 1, j0 + 1
    idx = np.stack([j0 * grid.nx + i0, j0 * grid.nx + i1, j1 * grid.nx + i0, j1 * grid.nx + i1], axis=1)
    w = np.stack([(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy], axis=1)
    return idx, w


def bilinear_interpolate(field: ScalarField, x, y):
    idx, w = bilinear_stencil(field.grid, x, y)
    out = np.sum(field.values.ravel()[idx] * w, axis=1)
    return out[0] if np.ndim(x) == 0 and np.ndim(y) == 0 else out


def _as_array(a) -> np.ndarray:
    if isinstance(a, ScalarField):
        return a.values
    return np.asarray(a, dtype=np.float64)


def normalized_l2_error(pred, ref) -> float:
    """``||pred - ref|| / ||ref||`` over all stored entries."""
    p, r = _as_array(pred), _as_array(ref)
    if p.shape != r.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {r.shape}")
    denom = np.linalg.norm(r.ravel())
    if denom == 0:
        raise ValueError("reference has zero norm")
    return float(np.linalg.norm((p - r).ravel()) / denom)


def parameter_error(params: Sequence[float], truth: Sequence[float]) -> float:
    p = np.asarray(params, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {t.shape}")
    denom = np.linalg.norm(t)
    if denom == 0:
        raise ValueError("true parameter vector has zero norm")
    return float(np.linalg.norm(p - t) / denom)


def write_field(field: ScalarField, path) -> None:
    g = field.grid
    header = _FIELD_HEADER.pack(
        FIELD_MAGIC, FIELD_VERSION, g.nx, g.ny, g.x_min, g.x_max, g.y_min, g.y_max, _BOUNDARY_FLAGS[g.boundary]
    )
    payload = np.ascontiguousarray(field.values, dtype="<f8").tobytes()
    Path(path).write_bytes(header + payload)


def read_field(path) -> ScalarField:
    data = Path(path).read_bytes()
    if len(data) < 8:
        raise TruncatedFileError(f"{path}: file too short for a header")
    if data[:4] != FIELD_MAGIC:
        raise BadMagicError(f"{path}: bad magic {data[:4]!r}")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != FIELD_VERSION:
        raise BadVersionError(f"{path}: unsupported field format version {version}")
    if len(data) < _FIELD_HEADER.size:
        raise TruncatedFileError(f"{path}: truncated header")
    _, _, nx, ny, x0, x1, y0, y1, flag = _FIELD_HEADER.unpack_from(data, 0)
    kinds = {v: k for k, v in _BOUNDARY_FLAGS.items()}
    if flag not in kinds:
        raise FieldFormatError(f"{path}: unknown boundary flag {flag}")
    expected = _FIELD_HEADER.size + 8 * nx * ny
    if len(data) < expected:
        raise TruncatedFileError(f"{path}: expected {expected} bytes, found {len(data)}")
    grid = Grid2D(nx, ny, x0, x1, y0, y1, kinds[flag])
    vals = np.frombuffer(data, dtype="<f8", count=nx * ny, offset=_FIELD_HEADER.size)
    return ScalarField(grid, vals.astype(np.float64))


@dataclass(frozen=True, eq=False)
class Dataset:
    points: np.ndarray
    observations: np.ndarray
    region: Region
    noise_std: float = 0.0
    seed: int = 0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        obs = np.asarray(self.observations, dtype=np.float64)
        if obs.ndim == 1:
            obs = obs[:, None]
        if len(pts) != len(obs):
            raise ValueError("points and observations differ in length")
        if not np.all(np.isfinite(obs)):
            raise ValueError("observations must be finite")
        if not np.all(self.region.contains(pts, atol=1e-12)):
            raise ValueError("dataset point outside its region")
        if self.noise_std < 0:
            raise ValueError("noise_std must be nonnegative")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "observations", obs)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def n_components(self) -> int:
        return self.observations.shape[1]

    def to_csv(self, path) -> None:
        header = ["x", "y", "t"] + [f"comp{c}" for c in range(self.n_components)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for p, o in zip(self.points, self.observations):
                w.writerow([repr(float(v)) for v in (*p, *o)])

    @classmethod
    def from_csv(cls, path, region: Region | None = None, noise_std: float = 0.0, seed: int = 0) -> "Dataset":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        if header[:3] != ["x", "y", "t"] or not header[3:]:
            raise ValueError(f"{path}: unexpected dataset header {header}")
        arr = np.array(body, dtype=np.float64).reshape(len(body), len(header))
        pts, obs = arr[:, :3], arr[:, 3:]
        if region is None:
            region = Region(pts[:, 0].min(), pts[:, 0].max(), pts[:, 1].min(), pts[:, 1].max(),
                            pts[:, 2].min(), pts[:, 2].max())
        return cls(pts, obs, region, noise_std, seed)


def build_dataset(
    reference: Callable[[np.ndarray], np.ndarray],
    region: Region,
    M: int,
    seed: int,
    noise_std: float = 0.0,
    domain: Region | None = None,
) -> Dataset:
    """Sample ``M`` uniform points in ``region`` and observe ``reference`` there.

    Noise, when requested, comes from a stream independent of the point draw,
    so the sensor layout does not depend on ``noise_std``.
    """
    if M < 1:
        raise ValueError("M must be at least 1")
    if domain is not None and not region.within(domain):
        raise ValueError(f"sampling region {region} leaves the reference domain {domain}")
    pts = sample_uniform_points(region, M, seed, 0)
    obs = np.asarray(reference(pts), dtype=np.float64)
    if obs.ndim == 1:
        obs = obs[:, None]
    if noise_std > 0:
        obs = obs + noise_std * make_rng(seed, 1).standard_normal(obs.shape)
    return Dataset(pts, obs, region, noise_std, seed)
