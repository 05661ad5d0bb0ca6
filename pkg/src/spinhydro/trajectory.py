"""Causal trajectories under v = v_B + v_S x s with external/internal bookkeeping.

Positions are 3-vectors even on 1D/2D grids; only the in-grid components
are used for field lookup.  Fields are interpolated linearly in space
(bilinearly in 2D, periodic wrap) and linearly in time between frames.

Integration is vectorized over a batch of trajectories.  Every operation is
elementwise, so a trajectory's result does not depend on which batch it
was advected in.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import NodalTrapError
from .grid import Grid
from .hydro import HydroFields, SpinVector, Z_HAT, _as_spin
from .propagator import FrameSequence

MODES = ("total", "drift", "internal")
MAX_HOLD_STEPS = 3


class FieldCache:
    """Read-only per-frame velocity samples used by the interpolator."""

    def __init__(self, frames: FrameSequence, hydro: Sequence[HydroFields]):
        if len(hydro) != len(frames):
            raise ValueError("need one HydroFields per frame")
        grid = frames.grid
        d = grid.dims
        self.grid: Grid = grid
        self.times = frames.times
        self.t0 = float(frames.times[0])
        self.t_end = float(frames.times[-1])
        self.dt_field = frames.dt_field
        self.v_b = np.stack([h.v_B.values[:d] for h in hydro])
        self.v_s = np.stack([h.v_S.values[:d] for h in hydro])
        self.mask = np.stack([h.nodal_mask for h in hydro])
        self.rho = np.stack([h.rho.values for h in hydro])
        for arr in (self.v_b, self.v_s, self.mask, self.rho):
            arr.setflags(write=False)

    @property
    def nframes(self) -> int:
        return self.times.size

    def _time_slot(self, t: float) -> tuple[int, float]:
        span = self.t_end - self.t0
        tol = 1e-9 * max(1.0, abs(self.t_end))
        if t < self.t0 - tol or t > self.t_end + tol:
            raise ValueError(f"t={t} outside frame range [{self.t0}, {self.t_end}]")
        if self.nframes == 1 or span == 0:
            return 0, 0.0
        tau = (t - self.t0) / self.dt_field
        f = min(max(int(np.floor(tau)), 0), self.nframes - 2)
        return f, min(max(tau - f, 0.0), 1.0)

    def _spatial(self, x: np.ndarray):
        """Stencil indices and weights for in-grid coordinates ``x`` (N, dims)."""
        g = self.grid
        u = (x - g.lower) / g.spacing
        base = np.floor(u)
        frac = u - base
        i0 = base.astype(np.int64) % g.n
        i1 = (i0 + 1) % g.n
        if g.dims == 1:
            idx = [(i0[:, 0],), (i1[:, 0],)]
            w = [1.0 - frac[:, 0], frac[:, 0]]
        else:
            fx, fy = frac[:, 0], frac[:, 1]
            idx = [(i0[:, 0], i0[:, 1]), (i1[:, 0], i0[:, 1]), (i0[:, 0], i1[:, 1]), (i1[:, 0], i1[:, 1])]
            w = [(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy]
        return idx, w

    def sample(self, positions: np.ndarray, t: float):
        """Interpolated (v_B, v_S) as (N, 3) arrays plus a per-point nodal flag."""
        pos = np.atleast_2d(np.asarray(positions, dtype=float))
        d = self.grid.dims
        idx, w = self._spatial(pos[:, :d])
        f, wt = self._time_slot(t)
        slots = [(f, 1.0 - wt)] if wt == 0.0 else [(f, 1.0 - wt), (f + 1, wt)]
        n = pos.shape[0]
        v_b = np.zeros((n, 3))
        v_s = np.zeros((n, 3))
        nodal = np.zeros(n, dtype=bool)
        for frame, tw in slots:
            vb_f = self.v_b[frame]
            vs_f = self.v_s[frame]
            mask_f = self.mask[frame]
            for ix, wx in zip(idx, w):
                weight = tw * wx
                for c in range(d):
                    v_b[:, c] += weight * vb_f[c][ix]
                    v_s[:, c] += weight * vs_f[c][ix]
                nodal |= mask_f[ix]
        return v_b, v_s, nodal


def interpolate_velocity(cache: FieldCache, x, t: float, s=Z_HAT, mode: str = "total") -> np.ndarray:
    """Velocity at a single 3-space point: v_B + v_S x s, v_B alone, or v_S x s alone."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    spin = _as_spin(s).array
    v_b, v_s, _ = cache.sample(np.asarray(x, dtype=float).reshape(1, 3), t)
    perp = np.cross(v_s, spin)
    return _combine(mode, v_b, perp)[0]


def _combine(mode: str, v_b: np.ndarray, perp: np.ndarray) -> np.ndarray:
    if mode == "total":
        return v_b + perp
    if mode == "drift":
        return v_b
    return perp


@dataclass
class BatchResult:
    times: np.ndarray
    x_total: np.ndarray
    x_ext: np.ndarray | None
    x_int: np.ndarray | None
    v_total: np.ndarray | None
    v_b: np.ndarray | None
    v_perp: np.ndarray | None
    nodal_flags: np.ndarray
    trapped: np.ndarray
    events: list = field(default_factory=list)


def _step_count(cache: FieldCache, dt_traj: float, t_start: float, t_end: float) -> int:
    if not dt_traj > 0 or dt_traj > cache.dt_field * (1 + 1e-12):
        raise ValueError(f"dt_traj={dt_traj} must be positive and <= dt_field={cache.dt_field}")
    nsteps = int(round((t_end - t_start) / dt_traj))
    if nsteps < 1 or abs(nsteps * dt_traj - (t_end - t_start)) > 1e-9 * max(1.0, t_end):
        raise ValueError(f"duration {t_end - t_start} is not a whole number of steps of {dt_traj}")
    return nsteps


def advect_batch(
    x0: np.ndarray,
    cache: FieldCache,
    s=Z_HAT,
    mode: str = "total",
    dt_traj: float | None = None,
    t_start: float | None = None,
    t_end: float | None = None,
    x_ext0: np.ndarray | None = None,
    x_int0: np.ndarray | None = None,
    record_every: int = 1,
    full: bool = True,
    max_hold: int = MAX_HOLD_STEPS,
) -> BatchResult:
    """RK4 for N trajectories at once, accumulating the drift and internal integrals on the same path.

    A step whose stages touch a nodal cell reuses the trajectory's last clean
    step velocity; after ``max_hold`` consecutive held steps the trajectory
    is marked trapped and frozen.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    spin = _as_spin(s).array
    grid = cache.grid
    x = np.array(np.atleast_2d(x0), dtype=float)
    if x.shape[1] != 3:
        raise ValueError("positions must be 3-vectors")
    inside = (x[:, : grid.dims] >= grid.lower) & (x[:, : grid.dims] < grid.lower + grid.extent)
    if not inside.all():
        raise ValueError("initial positions must lie inside the grid")
    t_start = cache.t0 if t_start is None else float(t_start)
    t_end = cache.t_end if t_end is None else float(t_end)
    dt_traj = cache.dt_field if dt_traj is None else float(dt_traj)
    nsteps = _step_count(cache, dt_traj, t_start, t_end)
    h = dt_traj
    n = x.shape[0]
    ext = np.zeros((n, 3)) if x_ext0 is None else np.array(np.atleast_2d(x_ext0), dtype=float) * np.ones((n, 1))
    intl = np.zeros((n, 3)) if x_int0 is None else np.array(np.atleast_2d(x_int0), dtype=float) * np.ones((n, 1))
    use_b = mode in ("total", "drift")
    use_p = mode in ("total", "internal")

    def stage(pos, t):
        v_b, v_s, nodal = cache.sample(pos, t)
        perp = np.cross(v_s, spin)
        if not use_b:
            v_b = np.zeros_like(v_b)
        if not use_p:
            perp = np.zeros_like(perp)
        return v_b, perp, nodal

    rec_steps = list(range(0, nsteps + 1, record_every))
    if rec_steps[-1] != nsteps:
        rec_steps.append(nsteps)
    nrec = len(rec_steps)
    times = t_start + h * np.array(rec_steps, dtype=float)
    out_x = np.empty((nrec, n, 3))
    out_ext = np.empty((nrec, n, 3)) if full else None
    out_int = np.empty((nrec, n, 3)) if full else None
    out_vt = np.empty((nrec, n, 3)) if full else None
    out_vb = np.empty((nrec, n, 3)) if full else None
    out_vp = np.empty((nrec, n, 3)) if full else None
    flags = np.zeros((nrec, n), dtype=bool)

    trapped = np.zeros(n, dtype=bool)
    hold = np.zeros(n, dtype=np.int64)
    last_b = None
    last_p = None
    events = []
    r = 0
    k_b = k_p = None
    for step_i in range(nsteps + 1):
        t = t_start + h * step_i
        k1b, k1p, n1 = stage(x, t)
        if last_b is None:
            last_b, last_p = k1b.copy(), k1p.copy()
        if r < nrec and rec_steps[r] == step_i:
            out_x[r] = x
            flags[r] = n1
            if full:
                out_ext[r] = ext
                out_int[r] = intl
                out_vb[r] = k1b
                out_vp[r] = k1p
                out_vt[r] = k1b + k1p
            r += 1
        if step_i == nsteps:
            break
        k2b, k2p, n2 = stage(x + 0.5 * h * (k1b + k1p), t + 0.5 * h)
        k3b, k3p, n3 = stage(x + 0.5 * h * (k2b + k2p), t + 0.5 * h)
        k4b, k4p, n4 = stage(x + h * (k3b + k3p), t + h)
        k_b = (k1b + 2.0 * k2b + 2.0 * k3b + k4b) / 6.0
        k_p = (k1p + 2.0 * k2p + 2.0 * k3p + k4p) / 6.0
        nodal = (n1 | n2 | n3 | n4) & ~trapped
        if nodal.any():
            hold = np.where(nodal, hold + 1, 0)
            k_b = np.where(nodal[:, None], last_b, k_b)
            k_p = np.where(nodal[:, None], last_p, k_p)
            for i in np.flatnonzero(nodal):
                events.append((int(i), float(t), x[i].copy()))
            newly = hold > max_hold
            trapped |= newly
        else:
            hold[:] = 0
        clean = ~nodal & ~trapped
        last_b = np.where(clean[:, None], k_b, last_b)
        last_p = np.where(clean[:, None], k_p, last_p)
        moving = ~trapped[:, None]
        db = np.where(moving, h * k_b, 0.0)
        dp = np.where(moving, h * k_p, 0.0)
        x = x + (db + dp)
        ext = ext + db
        intl = intl + dp
    return BatchResult(times, out_x, out_ext, out_int, out_vt, out_vb, out_vp, flags, trapped, events)


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    x_total: np.ndarray
    x_ext: np.ndarray
    x_int: np.ndarray
    v_total: np.ndarray
    v_B_along: np.ndarray
    v_perp_along: np.ndarray
    nodal_events: list
    nodal_flags: np.ndarray

    def sum_offset(self) -> np.ndarray:
        """x_total - (x_ext + x_int) per sample; constant along an exact integration."""
        return self.x_total - (self.x_ext + self.x_int)

    def perpendicularity(self) -> float:
        return float(np.abs(np.sum(self.v_B_along * self.v_perp_along, axis=1)).max())

    def write_csv(self, path: str | Path) -> None:
        write_trajectory_csv(self, path)


@dataclass(frozen=True)
class SplitSpec:
    """Initial external/internal split of one starting point; x_ext0 + x_int0 must equal x0_total."""

    x0_total: tuple
    x_ext0: tuple
    x_int0: tuple

    def __post_init__(self):
        x0, xe, xi = (np.asarray(v, dtype=float).reshape(3) for v in (self.x0_total, self.x_ext0, self.x_int0))
        if np.abs(xe + xi - x0).max() > 1e-12 * (1.0 + np.abs(x0).max()):
            raise ValueError("x_ext0 + x_int0 must equal x0_total")
        object.__setattr__(self, "x0_total", tuple(x0))
        object.__setattr__(self, "x_ext0", tuple(xe))
        object.__setattr__(self, "x_int0", tuple(xi))

    @classmethod
    def from_external(cls, x0_total, x_ext0) -> "SplitSpec":
        x0 = np.asarray(x0_total, dtype=float)
        xe = np.asarray(x_ext0, dtype=float)
        return cls(tuple(x0), tuple(xe), tuple(x0 - xe))


def advect(
    x0,
    cache: FieldCache,
    s=Z_HAT,
    mode: str = "total",
    dt_traj: float | None = None,
    split: SplitSpec | None = None,
    t_end: float | None = None,
    max_hold: int = MAX_HOLD_STEPS,
) -> Trajectory:
    """Integrate one trajectory; raises :class:`NodalTrapError` if it stays in a nodal region too long."""
    x0 = np.asarray(x0, dtype=float).reshape(3)
    if split is not None and not np.array_equal(np.asarray(split.x0_total), x0):
        raise ValueError("split does not start at x0")
    res = advect_batch(
        x0[None, :],
        cache,
        s,
        mode,
        dt_traj,
        t_end=t_end,
        x_ext0=None if split is None else np.asarray(split.x_ext0),
        x_int0=None if split is None else np.asarray(split.x_int0),
        max_hold=max_hold,
    )
    if res.trapped[0]:
        _, t, pos = res.events[-1]
        raise NodalTrapError(f"trajectory from {x0.tolist()} trapped in a nodal region at t={t:g}", t, pos)
    return Trajectory(
        times=res.times,
        x_total=res.x_total[:, 0],
        x_ext=res.x_ext[:, 0],
        x_int=res.x_int[:, 0],
        v_total=res.v_total[:, 0],
        v_B_along=res.v_b[:, 0],
        v_perp_along=res.v_perp[:, 0],
        nodal_events=[(t, pos) for _, t, pos in res.events],
        nodal_flags=res.nodal_flags[:, 0],
    )


@dataclass(frozen=True)
class SplitReport:
    total_gap: float
    ext_gap_max: float
    ext_gap_min: float
    ext_offset_error: float
    int_offset_error: float

    def as_dict(self) -> dict:
        return {
            "total_gap": self.total_gap,
            "ext_gap_max": self.ext_gap_max,
            "ext_gap_min": self.ext_gap_min,
            "ext_offset_error": self.ext_offset_error,
            "int_offset_error": self.int_offset_error,
        }


def split_ambiguity_check(
    split_a: SplitSpec,
    split_b: SplitSpec,
    cache: FieldCache,
    s=Z_HAT,
    dt_traj: float | None = None,
    mode: str = "total",
) -> SplitReport:
    """Advect two splits of the same start and compare total and component paths."""
    if not np.array_equal(np.asarray(split_a.x0_total), np.asarray(split_b.x0_total)):
        raise ValueError("splits must share x0_total")
    ta = advect(split_a.x0_total, cache, s, mode, dt_traj, split_a)
    tb = advect(split_b.x0_total, cache, s, mode, dt_traj, split_b)
    ext_gap = np.linalg.norm(ta.x_ext - tb.x_ext, axis=1)
    ext_off = np.asarray(split_a.x_ext0) - np.asarray(split_b.x_ext0)
    int_off = np.asarray(split_a.x_int0) - np.asarray(split_b.x_int0)
    return SplitReport(
        total_gap=float(np.abs(ta.x_total - tb.x_total).max()),
        ext_gap_max=float(ext_gap.max()),
        ext_gap_min=float(ext_gap.min()),
        ext_offset_error=float(np.abs(ta.x_ext - tb.x_ext - ext_off).max()),
        int_offset_error=float(np.abs(ta.x_int - tb.x_int - int_off).max()),
    )


def _fmt(v: float) -> str:
    return repr(float(v))


def write_trajectory_csv(traj: Trajectory, path: str | Path) -> None:
    """Columns: time, x_total(3), x_ext(3), x_int(3), v_total(3), nodal."""
    header = ["time"]
    for name in ("x_total", "x_ext", "x_int", "v_total"):
        header += [f"{name}_{c}" for c in "xyz"]
    header.append("nodal")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for k, t in enumerate(traj.times):
            row = [_fmt(t)]
            for arr in (traj.x_total, traj.x_ext, traj.x_int, traj.v_total):
                row += [_fmt(v) for v in arr[k]]
            row.append(int(traj.nodal_flags[k]))
            w.writerow(row)
