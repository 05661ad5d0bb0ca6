"""Split-step Fourier propagation of the Schrödinger equation (hbar = 1)."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import LeakageError, StepGuardError
from .grid import ComplexField, Grid, ScalarField

log = logging.getLogger(__name__)

PHASE_GUARD = 0.5
LEAK_BAND = 3
LEAK_RATIO = 1e-8


@dataclass(frozen=True)
class Potential:
    """Time-independent external potential realized on a grid."""

    kind: str
    params: dict
    values: ScalarField = field(repr=False)

    @property
    def grid(self) -> Grid:
        return self.values.grid

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values.values)))

    def to_dict(self) -> dict:
        out = {"kind": self.kind, **self.params}
        if self.kind == "tabulated":
            out["values"] = self.values.values.ravel().tolist()
        return out

    @classmethod
    def free(cls, grid: Grid) -> "Potential":
        return cls("free", {}, ScalarField.constant(grid, 0.0))

    @classmethod
    def harmonic(cls, grid: Grid, omega: Sequence[float] | float, mass: float) -> "Potential":
        om = np.atleast_1d(np.asarray(omega, dtype=float))
        if om.size == 1:
            om = np.repeat(om, grid.dims)
        if om.size != grid.dims:
            raise ValueError(f"harmonic potential needs {grid.dims} frequencies, got {om.size}")
        values = sum(0.5 * mass * w**2 * x**2 for w, x in zip(om, grid.coords()))
        return cls("harmonic", {"omega": om.tolist()}, ScalarField(grid, values))

    @classmethod
    def barrier(cls, grid: Grid, height: float, center: float, width: float) -> "Potential":
        """Smooth Gaussian-profile barrier across the first axis (smooth so spectral steps stay exact)."""
        if width <= 0:
            raise ValueError("barrier width must be positive")
        x = grid.coords()[0]
        values = height * np.exp(-((x - center) ** 2) / (2.0 * width**2))
        return cls("barrier", {"height": height, "center": center, "width": width}, ScalarField(grid, values))

    @classmethod
    def tabulated(cls, grid: Grid, values) -> "Potential":
        vals = np.asarray(values, dtype=float).reshape(grid.shape)
        if not np.all(np.isfinite(vals)):
            raise ValueError("tabulated potential must be finite")
        return cls("tabulated", {}, ScalarField(grid, vals))


def kinetic_symbol(grid: Grid, mass: float) -> np.ndarray:
    """|k|^2 / 2m on the FFT grid."""
    k = grid.wavenumbers
    ks = np.meshgrid(*([k] * grid.dims), indexing="ij")
    return sum(kk**2 for kk in ks) / (2.0 * mass)


class SplitStepper:
    """Strang splitting exp(-iU dt/2) exp(-iK dt) exp(-iU dt/2) with cached phase factors."""

    def __init__(self, potential: Potential, mass: float, dt: float):
        if not mass > 0:
            raise StepGuardError(f"mass must be positive, got {mass}")
        if not dt > 0:
            raise StepGuardError(f"dt must be positive, got {dt}")
        if dt * potential.max_abs() >= PHASE_GUARD:
            raise StepGuardError(
                f"dt*max|U| = {dt * potential.max_abs():.3g} violates the phase-wrap guard (< {PHASE_GUARD})"
            )
        self.grid = potential.grid
        self.dt = dt
        self.mass = mass
        self._half_u = np.exp(-0.5j * dt * potential.values.values)
        self._kin = np.exp(-1j * dt * kinetic_symbol(self.grid, mass))

    def advance(self, psi: np.ndarray, steps: int = 1) -> np.ndarray:
        for _ in range(steps):
            psi = self._half_u * np.fft.ifftn(self._kin * np.fft.fftn(self._half_u * psi))
        return psi


def step(psi: ComplexField, pot: Potential, m: float, dt: float) -> ComplexField:
    if not np.all(np.isfinite(psi.values)):
        raise StepGuardError("wavefunction has non-finite samples")
    return ComplexField(psi.grid, SplitStepper(pot, m, dt).advance(psi.values))


def leakage_ratio(psi: np.ndarray, grid: Grid, band: int = LEAK_BAND) -> float:
    """Largest density within ``band`` spacings of the boundary, relative to the peak density."""
    rho = np.abs(psi) ** 2
    edge = np.zeros(grid.shape, dtype=bool)
    for axis in range(grid.dims):
        idx = [slice(None)] * grid.dims
        idx[axis] = np.r_[0:band, grid.n - band : grid.n]
        edge[tuple(idx)] = True
    return float(rho[edge].max() / rho.max())


def energy(psi: np.ndarray, grid: Grid, potential: Potential, mass: float) -> float:
    """<H> from the spectral kinetic term plus the potential expectation, per unit norm."""
    rho = np.abs(psi) ** 2
    norm = np.sum(rho)
    psi_k = np.fft.fftn(psi)
    kinetic = np.sum(kinetic_symbol(grid, mass) * np.abs(psi_k) ** 2) / grid.size
    return float((kinetic + np.sum(potential.values.values * rho)) / norm)


@dataclass(frozen=True)
class FrameSequence:
    """Time-stamped wavefunction frames with uniform spacing ``dt_field``."""

    grid: Grid
    times: np.ndarray
    frames: np.ndarray = field(repr=False)
    mass: float
    potential: Potential = field(repr=False)
    dt_field: float

    def __post_init__(self):
        times = np.array(self.times, dtype=float)
        frames = np.array(self.frames, dtype=complex)
        if frames.shape != (times.size,) + self.grid.shape:
            raise ValueError("frame array does not match times and grid")
        if times.size > 1 and not np.all(np.diff(times) > 0):
            raise ValueError("frame times must be strictly increasing")
        times.setflags(write=False)
        frames.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "frames", frames)

    def __len__(self) -> int:
        return self.times.size

    def __getitem__(self, index: int) -> ComplexField:
        return ComplexField(self.grid, self.frames[index])

    def norms(self) -> np.ndarray:
        return np.sum(np.abs(self.frames) ** 2, axis=tuple(range(1, self.grid.dims + 1))) * self.grid.cell_volume

    def energies(self) -> np.ndarray:
        return np.array([energy(f, self.grid, self.potential, self.mass) for f in self.frames])

    def index_of(self, t: float) -> int:
        i = int(round((t - self.times[0]) / self.dt_field))
        if i < 0 or i >= len(self) or abs(self.times[i] - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"t={t} is not a frame time")
        return i


def evolve(
    psi0: ComplexField,
    pot: Potential,
    m: float,
    T: float,
    dt: float,
    frame_stride: int = 10,
    check_leakage: bool = True,
) -> FrameSequence:
    """Propagate to time ``T`` keeping every ``frame_stride``-th step (frame 0 included)."""
    if not T > 0:
        raise StepGuardError(f"T must be positive, got {T}")
    if frame_stride < 1:
        raise StepGuardError("frame_stride must be >= 1")
    if not np.all(np.isfinite(psi0.values)):
        raise StepGuardError("wavefunction has non-finite samples")
    nsteps = int(round(T / dt))
    if abs(nsteps * dt - T) > 1e-9 * T or nsteps % frame_stride:
        raise StepGuardError(f"T={T} is not a whole number of frames of {frame_stride} steps of dt={dt}")
    stepper = SplitStepper(pot, m, dt)
    grid = psi0.grid
    nframes = nsteps // frame_stride + 1
    frames = np.empty((nframes,) + grid.shape, dtype=complex)
    psi = np.array(psi0.values)
    for j in range(nframes):
        if j:
            psi = stepper.advance(psi, frame_stride)
        if check_leakage:
            ratio = leakage_ratio(psi, grid)
            if ratio > LEAK_RATIO:
                raise LeakageError(
                    f"density near the boundary reached {ratio:.3g} of the peak at t={j * frame_stride * dt:g}"
                )
        frames[j] = psi
    dt_field = frame_stride * dt
    log.debug("evolved %d steps into %d frames", nsteps, nframes)
    return FrameSequence(grid, dt_field * np.arange(nframes), frames, m, pot, dt_field)
