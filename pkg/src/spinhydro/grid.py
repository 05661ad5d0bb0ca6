"""Uniform periodic grids and the sampled-field containers built on them.

All vector fields carry three components whatever the grid dimension: the
first ``dims`` components live along the grid axes, the rest are out of
plane.  This keeps cross products with a spin axis uniform in 1D and 2D.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import GridError

MIN_POINTS = 16


def _frozen(values: np.ndarray) -> np.ndarray:
    arr = np.array(values, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Grid:
    """Square/line periodic grid with ``n`` points and length ``extent`` per axis.

    Sample ``j`` of each axis sits at ``-extent/2 + j*spacing``, so the
    origin is always a grid point.
    """

    dims: int
    n: int
    extent: float

    def __post_init__(self):
        if self.dims not in (1, 2):
            raise GridError(f"dims must be 1 or 2, got {self.dims}")
        if self.n < MIN_POINTS or self.n & (self.n - 1):
            raise GridError(f"n must be a power of two >= {MIN_POINTS}, got {self.n}")
        if not np.isfinite(self.extent) or self.extent <= 0:
            raise GridError(f"extent must be positive, got {self.extent}")

    @property
    def spacing(self) -> float:
        return self.extent / self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dims

    @property
    def size(self) -> int:
        return self.n**self.dims

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.dims

    @property
    def lower(self) -> float:
        return -0.5 * self.extent

    @cached_property
    def axis(self) -> np.ndarray:
        """1D coordinate array shared by every axis."""
        return _frozen(self.lower + self.spacing * np.arange(self.n))

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        """Angular wavenumbers in standard FFT ordering; index n/2 is the Nyquist mode."""
        return _frozen(2.0 * np.pi * np.fft.fftfreq(self.n, d=self.spacing))

    def coords(self) -> tuple[np.ndarray, ...]:
        """Coordinate arrays broadcast to ``shape`` (``ij`` indexing)."""
        return tuple(np.meshgrid(*([self.axis] * self.dims), indexing="ij"))

    def position_field(self) -> np.ndarray:
        """Position of every sample as a (3, *shape) array, out-of-plane entries zero."""
        out = np.zeros((3,) + self.shape)
        for i, c in enumerate(self.coords()):
            out[i] = c
        return out

    def integrate(self, values: np.ndarray) -> float:
        """Rectangle rule, which equals the trapezoid rule on a periodic grid."""
        return float(np.sum(values) * self.cell_volume)

    def to_dict(self) -> dict:
        return {"dims": self.dims, "n": self.n, "extent": self.extent}


def make_grid(dims: int, n: int, extent: float) -> Grid:
    return Grid(int(dims), int(n), float(extent))


@dataclass(frozen=True)
class ComplexField:
    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=complex)
        if vals.shape != self.grid.shape:
            raise GridError(f"complex field shape {vals.shape} does not match grid {self.grid.shape}")
        object.__setattr__(self, "values", _frozen(vals))

    def norm(self) -> float:
        """Total probability, integral of |psi|^2."""
        return self.grid.integrate(np.abs(self.values) ** 2)

    def normalized(self) -> "ComplexField":
        return ComplexField(self.grid, self.values / np.sqrt(self.norm()))

    def scaled(self, factor: complex) -> "ComplexField":
        return ComplexField(self.grid, factor * self.values)


@dataclass(frozen=True)
class ScalarField:
    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != self.grid.shape:
            raise GridError(f"scalar field shape {vals.shape} does not match grid {self.grid.shape}")
        object.__setattr__(self, "values", _frozen(vals))

    @classmethod
    def constant(cls, grid: Grid, value: float) -> "ScalarField":
        return cls(grid, np.full(grid.shape, float(value)))


@dataclass(frozen=True)
class VectorField:
    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (3,) + self.grid.shape:
            raise GridError(f"vector field shape {vals.shape} does not match (3, {self.grid.shape})")
        object.__setattr__(self, "values", _frozen(vals))

    @classmethod
    def zeros(cls, grid: Grid) -> "VectorField":
        return cls(grid, np.zeros((3,) + grid.shape))

    def magnitude(self) -> np.ndarray:
        return np.sqrt(np.sum(self.values**2, axis=0))

    def dot(self, other: "VectorField") -> np.ndarray:
        return np.sum(self.values * other.values, axis=0)
