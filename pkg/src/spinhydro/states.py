"""Initial-state specifications and the closed forms that go with them."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .errors import StateError
from .grid import ComplexField, Grid

GUARD_SPACINGS = 3.0
GUARD_WIDTHS = 5.0


def _per_axis(value, dims: int, name: str) -> tuple[float, ...]:
    vals = np.atleast_1d(np.asarray(value, dtype=float))
    if vals.size == 1:
        vals = np.repeat(vals, dims)
    if vals.size != dims:
        raise StateError(f"{name} needs {dims} component(s), got {vals.size}")
    return tuple(float(v) for v in vals)


@dataclass(frozen=True)
class GaussianState:
    """Packet exp(-(x-center)^2/(4 width^2) + i momentum (x-center)); ``width`` is the std of |psi|^2."""

    center: Sequence[float]
    width: Sequence[float]
    momentum: Sequence[float]


@dataclass(frozen=True)
class HarmonicState:
    quanta: Sequence[int]
    omega: Sequence[float]
    mass: float = 1.0


@dataclass(frozen=True)
class Superposition:
    components: Sequence[tuple[complex, "StateSpec"]] = field(default_factory=tuple)


StateSpec = Union[GaussianState, HarmonicState, Superposition]


def hermite_functions(nmax: int, xi: np.ndarray) -> np.ndarray:
    """Normalized Hermite functions h_0..h_nmax at ``xi`` by the stable three-term recurrence."""
    out = np.empty((nmax + 1,) + np.shape(xi))
    out[0] = np.pi**-0.25 * np.exp(-0.5 * xi**2)
    if nmax >= 1:
        out[1] = np.sqrt(2.0) * xi * out[0]
    for n in range(1, nmax):
        out[n + 1] = np.sqrt(2.0 / (n + 1)) * xi * out[n] - np.sqrt(n / (n + 1)) * out[n - 1]
    return out


def harmonic_eigenfunction_1d(n: int, x: np.ndarray, omega: float, mass: float) -> np.ndarray:
    scale = np.sqrt(mass * omega)
    return scale**0.5 * hermite_functions(n, scale * x)[n]


def harmonic_energy(spec: HarmonicState) -> float:
    dims = len(spec.quanta)
    omega = _per_axis(spec.omega, dims, "omega")
    return float(sum(w * (q + 0.5) for q, w in zip(spec.quanta, omega)))


def free_gaussian_1d(x: np.ndarray, t: float, center: float, width: float, momentum: float, mass: float) -> np.ndarray:
    """Closed-form free evolution of a 1D :class:`GaussianState` factor on the infinite line."""
    spread = 1.0 + 1j * t / (2.0 * mass * width**2)
    xi = x - center - momentum * t / mass
    amp = (2.0 * np.pi * width**2) ** -0.25 / np.sqrt(spread)
    phase = momentum * (x - center) - momentum**2 * t / (2.0 * mass)
    return amp * np.exp(-(xi**2) / (4.0 * width**2 * spread) + 1j * phase)


def free_gaussian(grid: Grid, spec: GaussianState, t: float, mass: float) -> np.ndarray:
    center = _per_axis(spec.center, grid.dims, "center")
    width = _per_axis(spec.width, grid.dims, "width")
    momentum = _per_axis(spec.momentum, grid.dims, "momentum")
    out = np.ones(grid.shape, dtype=complex)
    for c, x in enumerate(grid.coords()):
        out = out * free_gaussian_1d(x, t, center[c], width[c], momentum[c], mass)
    return out


def free_gaussian_velocities(grid: Grid, spec: GaussianState, t: float, mass: float) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form drift and osmotic velocities of the freely spreading packet, each (3, *shape)."""
    center = _per_axis(spec.center, grid.dims, "center")
    width = _per_axis(spec.width, grid.dims, "width")
    momentum = _per_axis(spec.momentum, grid.dims, "momentum")
    v_b = np.zeros((3,) + grid.shape)
    v_s = np.zeros((3,) + grid.shape)
    for c, x in enumerate(grid.coords()):
        xi = x - center[c] - momentum[c] * t / mass
        denom = 4.0 * mass**2 * width[c] ** 4 + t**2
        v_b[c] = momentum[c] / mass + xi * t / denom
        v_s[c] = -xi * 2.0 * mass * width[c] ** 2 / denom
    return v_b, v_s


def _raw_state(spec: StateSpec, grid: Grid) -> np.ndarray:
    if isinstance(spec, GaussianState):
        center = _per_axis(spec.center, grid.dims, "center")
        width = _per_axis(spec.width, grid.dims, "width")
        _per_axis(spec.momentum, grid.dims, "momentum")
        half = 0.5 * grid.extent
        for c, w in zip(center, width):
            if w < GUARD_SPACINGS * grid.spacing:
                raise StateError(
                    f"packet width {w} is below {GUARD_SPACINGS:g} grid spacings ({grid.spacing:g})"
                )
            if half - abs(c) < GUARD_WIDTHS * w:
                raise StateError(f"packet at {c} lies within {GUARD_WIDTHS:g} widths of the boundary")
        return free_gaussian(grid, spec, 0.0, 1.0)
    if isinstance(spec, HarmonicState):
        quanta = tuple(int(q) for q in spec.quanta)
        if len(quanta) != grid.dims or min(quanta) < 0:
            raise StateError(f"need {grid.dims} non-negative quantum number(s), got {spec.quanta}")
        omega = _per_axis(spec.omega, grid.dims, "omega")
        out = np.ones(grid.shape, dtype=complex)
        for q, w, x in zip(quanta, omega, grid.coords()):
            out = out * harmonic_eigenfunction_1d(q, x, w, spec.mass)
        return out
    if isinstance(spec, Superposition):
        if not spec.components:
            raise StateError("superposition has no components")
        total = np.zeros(grid.shape, dtype=complex)
        for coeff, sub in spec.components:
            total = total + complex(coeff) * _unit(_raw_state(sub, grid), grid)
        return total
    raise StateError(f"unsupported state spec {type(spec).__name__}")


def _unit(values: np.ndarray, grid: Grid) -> np.ndarray:
    norm = grid.integrate(np.abs(values) ** 2)
    if not np.isfinite(norm) or norm <= 0:
        raise StateError("state has zero or non-finite norm on this grid")
    return values / np.sqrt(norm)


def init_state(spec: StateSpec, grid: Grid) -> ComplexField:
    """Sample ``spec`` on ``grid`` and normalize to unit probability."""
    return ComplexField(grid, _unit(_raw_state(spec, grid), grid))
