"""Differential operators on periodic grids.

Two backends: ``spectral`` (FFT, default) and ``fd2`` (second-order central
differences).  The array-level helpers accept real or complex samples and
return the same kind; the field-level functions wrap them for
:class:`ScalarField` / :class:`VectorField`.
"""
from __future__ import annotations

import numpy as np

from .grid import Grid, ScalarField, VectorField

BACKENDS = ("spectral", "fd2")


def _check_backend(backend: str) -> None:
    if backend not in BACKENDS:
        raise ValueError(f"unknown derivative backend {backend!r}; expected one of {BACKENDS}")


def _shape_k(k: np.ndarray, axis: int, ndim: int) -> np.ndarray:
    shape = [1] * ndim
    shape[axis] = k.size
    return k.reshape(shape)


def _real_spectral(values: np.ndarray, multiplier: np.ndarray, n: int, axis: int) -> np.ndarray:
    return np.fft.irfft(multiplier * np.fft.rfft(values, axis=axis), n=n, axis=axis)


def _spectral(values: np.ndarray, multiplier: np.ndarray, n: int, axis: int) -> np.ndarray:
    # real and imaginary parts go through real transforms separately, so a
    # real input has an exactly real derivative
    if np.iscomplexobj(values):
        re = _real_spectral(values.real, multiplier, n, axis)
        im = _real_spectral(values.imag, multiplier, n, axis)
        return re + 1j * im
    return _real_spectral(values, multiplier, n, axis)


def _half_wavenumbers(grid: Grid) -> np.ndarray:
    return 2.0 * np.pi * np.fft.rfftfreq(grid.n, d=grid.spacing)


def partial(values: np.ndarray, grid: Grid, axis: int, backend: str = "spectral") -> np.ndarray:
    """First derivative along one grid axis.

    The spectral multiplier zeroes the Nyquist mode, whose derivative is not
    representable on the grid.
    """
    _check_backend(backend)
    if backend == "fd2":
        h = grid.spacing
        return (np.roll(values, -1, axis=axis) - np.roll(values, 1, axis=axis)) / (2.0 * h)
    k = _half_wavenumbers(grid)
    k[-1] = 0.0
    return _spectral(values, _shape_k(1j * k, axis, values.ndim), grid.n, axis)


def second_partial(values: np.ndarray, grid: Grid, axis: int, backend: str = "spectral") -> np.ndarray:
    _check_backend(backend)
    if backend == "fd2":
        h = grid.spacing
        return (np.roll(values, -1, axis=axis) - 2.0 * values + np.roll(values, 1, axis=axis)) / h**2
    k = _half_wavenumbers(grid)
    return _spectral(values, _shape_k(-(k**2), axis, values.ndim), grid.n, axis)


def gradient_array(values: np.ndarray, grid: Grid, backend: str = "spectral") -> np.ndarray:
    """(3, *shape) gradient; out-of-plane components are zero."""
    dtype = complex if np.iscomplexobj(values) else float
    out = np.zeros((3,) + grid.shape, dtype=dtype)
    for axis in range(grid.dims):
        out[axis] = partial(values, grid, axis, backend)
    return out


def laplacian_array(values: np.ndarray, grid: Grid, backend: str = "spectral") -> np.ndarray:
    return sum(second_partial(values, grid, axis, backend) for axis in range(grid.dims))


def gradient(f: ScalarField, backend: str = "spectral") -> VectorField:
    return VectorField(f.grid, gradient_array(f.values, f.grid, backend))


def laplacian(f: ScalarField, backend: str = "spectral") -> ScalarField:
    return ScalarField(f.grid, laplacian_array(f.values, f.grid, backend))


def divergence(v: VectorField, backend: str = "spectral") -> ScalarField:
    grid = v.grid
    out = sum(partial(v.values[axis], grid, axis, backend) for axis in range(grid.dims))
    return ScalarField(grid, out)


def curl(v: VectorField, backend: str = "spectral") -> VectorField:
    """Curl with zero derivatives along the axes the grid does not span."""
    grid = v.grid

    def d(component: int, axis: int) -> np.ndarray:
        if axis >= grid.dims:
            return np.zeros(grid.shape)
        return partial(v.values[component], grid, axis, backend)

    out = np.stack(
        [
            d(2, 1) - d(1, 2),
            d(0, 2) - d(2, 0),
            d(1, 0) - d(0, 1),
        ]
    )
    return VectorField(grid, out)
