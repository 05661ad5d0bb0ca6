"""Phase reconstruction and the time-balance residuals over a frame sequence."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import ComplexField, ScalarField, VectorField
from .hydro import NODE_EPS, HydroFields, nodal_mask, weighted_rms
from .operators import divergence
from .propagator import FrameSequence

PATH_TOL = 1e-6


def _interval_integrals(f: np.ndarray, valid: np.ndarray, h: float) -> np.ndarray:
    """Integral of ``f`` over [x_j, x_j+1] for each j; NaN unless both ends are valid.

    Fourth order when both outer neighbours are valid, third order with one,
    trapezoid with none.
    """
    n = f.size
    inner = valid[:-1] & valid[1:]
    left = np.zeros(n - 1, dtype=bool)
    left[1:] = valid[:-2]
    right = np.zeros(n - 1, dtype=bool)
    right[:-1] = valid[2:]
    fm = np.concatenate(([0.0], f[:-2]))
    f0, f1 = f[:-1], f[1:]
    fp = np.concatenate((f[2:], [0.0]))
    out = np.where(
        left & right,
        h / 24.0 * (-fm + 13.0 * f0 + 13.0 * f1 - fp),
        np.where(
            right,
            h / 12.0 * (5.0 * f0 + 8.0 * f1 - fp),
            np.where(left, h / 12.0 * (-fm + 8.0 * f0 + 5.0 * f1), 0.5 * h * (f0 + f1)),
        ),
    )
    return np.where(inner, out, np.nan)


def _cumulate(steps: np.ndarray, start: int, value: float) -> np.ndarray:
    """Running sums of interval increments outward from ``start``; NaN beyond the first gap."""
    n = steps.size + 1
    out = np.full(n, np.nan)
    gaps = np.flatnonzero(np.isnan(steps))
    hi = gaps[gaps >= start]
    stop = int(hi[0]) if hi.size else n - 1
    lo = gaps[gaps < start]
    first = int(lo[-1]) + 1 if lo.size else 0
    out[start] = value
    out[start + 1 : stop + 1] = value + np.cumsum(steps[start:stop])
    out[first:start] = value - np.cumsum(steps[first:start][::-1])[::-1]
    return out


def _branch_steps(psi: np.ndarray, f: np.ndarray, valid: np.ndarray, h: float) -> tuple[np.ndarray, float]:
    """Phase increment per interval, with its 2*pi branch picked by the line integral of ``f``.

    The sampled increment arg(psi_j+1 conj(psi_j)) is exact modulo 2*pi; the
    quadrature of m*v_B over the interval selects the branch.  Also returns
    the largest gap between quadrature and chosen increment.
    """
    quad = _interval_integrals(f, valid, h)
    wrapped = np.angle(psi[1:] * np.conj(psi[:-1]))
    steps = wrapped + 2.0 * np.pi * np.round((quad - wrapped) / (2.0 * np.pi))
    gap = np.abs(quad - steps)
    return steps, float(np.nanmax(gap)) if np.isfinite(gap).any() else 0.0


def _line(psi: np.ndarray, f: np.ndarray, valid: np.ndarray, h: float, start: int, value: float) -> tuple[np.ndarray, float]:
    if not valid[start] or not np.isfinite(value):
        return np.full(f.size, np.nan), 0.0
    steps, gap = _branch_steps(psi, f, valid, h)
    return _cumulate(steps, start, value), gap


@dataclass(frozen=True)
class PhaseReconstruction:
    """S recovered from m*v_B; NaN off the connected region reachable from the anchor."""

    S: ScalarField
    anchor: tuple
    anchor_phase: float
    path_residual: float
    consistent: bool
    anchor_jump: float = 0.0


def reconstruct_phase(
    psi: ComplexField,
    v_b: VectorField,
    m: float,
    previous: ScalarField | None = None,
    eps: float = NODE_EPS,
    tol: float = PATH_TOL,
) -> PhaseReconstruction:
    """Line-integrate m*v_B along grid axes from the point of maximum density.

    The anchor value is arg(psi) there, shifted by a multiple of 2*pi toward
    ``previous`` (the reconstruction of the preceding frame) when given.
    Each grid step uses the exact sampled phase increment on the branch the
    quadrature selects.  ``path_residual`` is the largest gap between the
    quadrature and the chosen increment, and in 2D also the disagreement
    between the two axis orderings (which an enclosed node would break).
    """
    grid = psi.grid
    values = psi.values
    rho = np.abs(values) ** 2
    valid = ~nodal_mask(rho, eps)
    anchor = np.unravel_index(int(np.argmax(rho)), grid.shape)
    phase = float(np.angle(values[anchor]))
    jump = 0.0
    if previous is not None and np.isfinite(previous.values[anchor]):
        ref = float(previous.values[anchor])
        phase += 2.0 * np.pi * round((ref - phase) / (2.0 * np.pi))
        jump = abs(phase - ref)
    h = grid.spacing
    f = m * v_b.values

    if grid.dims == 1:
        s_main, residual = _line(values, f[0], valid, h, anchor[0], phase)
    else:
        i0, j0 = anchor
        gaps = []

        def sweep(first: int) -> np.ndarray:
            # along axis ``first`` through the anchor, then along the other axis from there
            out = np.full(grid.shape, np.nan)
            if first == 0:
                spine, g = _line(values[:, j0], f[0][:, j0], valid[:, j0], h, i0, phase)
            else:
                spine, g = _line(values[i0, :], f[1][i0, :], valid[i0, :], h, j0, phase)
            gaps.append(g)
            for k in range(grid.n):
                if first == 0:
                    out[k, :], g = _line(values[k, :], f[1][k, :], valid[k, :], h, j0, spine[k])
                else:
                    out[:, k], g = _line(values[:, k], f[0][:, k], valid[:, k], h, i0, spine[k])
                gaps.append(g)
            return out

        s_main = sweep(0)
        s_alt = sweep(1)
        both = np.isfinite(s_main) & np.isfinite(s_alt)
        order_gap = float(np.abs(s_main - s_alt)[both].max()) if both.any() else 0.0
        # points only one ordering reaches still get a value
        s_main = np.where(np.isnan(s_main), s_alt, s_main)
        residual = max(max(gaps), order_gap)
    return PhaseReconstruction(
        S=ScalarField(grid, s_main),
        anchor=tuple(int(a) for a in anchor),
        anchor_phase=phase,
        path_residual=residual,
        consistent=residual <= tol,
        anchor_jump=jump,
    )


def reconstruct_phases(frames: FrameSequence, hydro: list[HydroFields], eps: float = NODE_EPS) -> list[PhaseReconstruction]:
    """Per-frame reconstructions chained so the anchor phase is continuous in time."""
    out = []
    prev = None
    for i in range(len(frames)):
        rec = reconstruct_phase(frames[i], hydro[i].v_B, frames.mass, prev, eps)
        out.append(rec)
        prev = rec.S
    return out


@dataclass(frozen=True)
class HJResidual:
    times: np.ndarray
    rms: np.ndarray
    anchor_flags: list = field(default_factory=list)
    path_residual: float = 0.0
    branch_points: np.ndarray | None = None

    @property
    def max(self) -> float:
        return float(self.rms.max())


def hj_residual(
    frames: FrameSequence,
    hydro: list[HydroFields],
    potential: ScalarField | None = None,
    phases: list[PhaseReconstruction] | None = None,
    eps: float = NODE_EPS,
) -> HJResidual:
    """rho-weighted RMS of dS/dt + (m/2)v_B^2 + (m/2)v_S^2 - lap(rho)/(4 m rho) + U at interior frames.

    dS/dt is a central difference of reconstructed phases.  S is only
    defined modulo 2*pi, so a difference of k*2*pi at a point (a branch
    relabelling across an unresolved near-node between frames) is removed
    before dividing by the time step; ``branch_points`` counts the off-nodal
    points per frame where that happened.  An interior frame is flagged when
    the anchor phase had to move by more than pi/2 between neighbouring frames.
    """
    if len(frames) < 3:
        raise ValueError("need at least 3 frames for a central difference")
    m = frames.mass
    u = (potential if potential is not None else frames.potential.values).values
    if phases is None:
        phases = reconstruct_phases(frames, hydro, eps)
    dt = frames.dt_field
    rms = []
    flags = []
    branches = []
    for j in range(1, len(frames) - 1):
        h = hydro[j]
        ds = phases[j + 1].S.values - phases[j - 1].S.values
        turns = np.round(ds / (2.0 * np.pi))
        branches.append(int(np.count_nonzero((turns != 0) & h.valid)))
        ds_dt = (ds - 2.0 * np.pi * turns) / (2.0 * dt)
        bracket = (
            0.5 * m * np.sum(h.v_B.values**2, axis=0)
            + 0.5 * m * np.sum(h.v_S.values**2, axis=0)
            - h.lap_rho_over_rho.values / (4.0 * m)
            + u
        )
        res = ds_dt + bracket
        valid = h.valid & np.isfinite(res)
        rms.append(weighted_rms(np.where(valid, res, 0.0), h.rho.values, valid))
        if max(phases[j - 1].anchor_jump, phases[j + 1].anchor_jump) > 0.5 * np.pi:
            flags.append(j)
    return HJResidual(
        times=frames.times[1:-1].copy(),
        rms=np.array(rms),
        anchor_flags=flags,
        path_residual=max(p.path_residual for p in phases),
        branch_points=np.array(branches),
    )


@dataclass(frozen=True)
class ContinuityResidual:
    times: np.ndarray
    drift: np.ndarray
    full: np.ndarray

    @property
    def max(self) -> float:
        return float(max(self.drift.max(), self.full.max()))

    @property
    def transparency(self) -> float:
        """Largest gap between the two current choices."""
        return float(np.abs(self.drift - self.full).max())


def continuity_residual(frames: FrameSequence, hydro: list[HydroFields], backend: str = "spectral") -> ContinuityResidual:
    """rho-weighted RMS of drho/dt + div J at interior frames, for J = rho v_B and for the spin-augmented J."""
    if len(frames) < 3:
        raise ValueError("need at least 3 frames for a central difference")
    dt = frames.dt_field
    drift, full = [], []
    for j in range(1, len(frames) - 1):
        h = hydro[j]
        drho = (hydro[j + 1].rho.values - hydro[j - 1].rho.values) / (2.0 * dt)
        r_drift = drho + divergence(h.J_B, backend).values
        r_full = drho + divergence(h.J, backend).values
        drift.append(weighted_rms(r_drift, h.rho.values, h.valid))
        full.append(weighted_rms(r_full, h.rho.values, h.valid))
    return ContinuityResidual(frames.times[1:-1].copy(), np.array(drift), np.array(full))
