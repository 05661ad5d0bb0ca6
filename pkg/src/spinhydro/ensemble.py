"""Ensembles sampled from |psi_0|^2, parallel advection and the equivariance metric.

Densities are treated as piecewise constant on cells centred at the grid
points; the sampler and the binned model of rho both use that picture so
that at t=0 the TV distance is pure sampling noise.
"""
from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EnsembleError
from .grid import Grid, ScalarField
from .hydro import Z_HAT
from .trajectory import FieldCache, advect_batch

MIN_SAMPLES = 100
CHUNK = 512
TRAP_LIMIT = 0.01


def default_bins(n: int) -> int:
    return max(1, min(64, int(np.sqrt(n) / 2)))


def _cell_masses(rho: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(rho)) or np.any(rho < 0):
        raise EnsembleError("density must be finite and non-negative")
    total = rho.sum()
    if not total > 0:
        raise EnsembleError("density has zero mass")
    return rho / total


def sample_initial(rho0: ScalarField, n: int, seed: int) -> np.ndarray:
    """Draw ``n`` 3-space positions distributed as rho0; out-of-grid components are 0."""
    if n < MIN_SAMPLES:
        raise EnsembleError(f"need at least {MIN_SAMPLES} samples, got {n}")
    grid = rho0.grid
    p = _cell_masses(rho0.values)
    rng = np.random.default_rng(seed)
    out = np.zeros((n, 3))
    if grid.dims == 1:
        cdf = np.cumsum(p)
        idx = np.minimum(np.searchsorted(cdf, rng.random(n) * cdf[-1], side="right"), grid.n - 1)
        cells = idx[:, None]
    else:
        marginal = np.cumsum(p.sum(axis=1))
        i = np.minimum(np.searchsorted(marginal, rng.random(n) * marginal[-1], side="right"), grid.n - 1)
        rows = np.cumsum(p, axis=1)
        u = rng.random(n) * rows[i, -1]
        j = np.minimum((rows[i] <= u[:, None]).sum(axis=1), grid.n - 1)
        cells = np.stack([i, j], axis=1)
    jitter = rng.random((n, grid.dims)) - 0.5
    x = grid.lower + (cells + jitter) * grid.spacing
    out[:, : grid.dims] = grid.lower + np.mod(x - grid.lower, grid.extent)
    return out


@dataclass(frozen=True)
class Ensemble:
    n_traj: int
    seed: int
    mode: str
    initial_positions: np.ndarray
    times: np.ndarray
    positions: np.ndarray
    trapped: np.ndarray

    @property
    def trapped_count(self) -> int:
        return int(self.trapped.sum())

    def write_csv(self, path: str | Path) -> None:
        """Per-trajectory dump: index, time, x, y, z, trapped."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["index", "time", "x", "y", "z", "trapped"])
            for i in range(self.n_traj):
                for k, t in enumerate(self.times):
                    w.writerow([i, repr(float(t))] + [repr(float(v)) for v in self.positions[k, i]] + [int(self.trapped[i])])


def run_ensemble(
    cache: FieldCache,
    s=Z_HAT,
    n: int = 10_000,
    seed: int = 0,
    mode: str = "total",
    dt_traj: float | None = None,
    workers: int = 1,
) -> Ensemble:
    """Sample from frame 0 and advect every member, recording positions at each frame time.

    Work is cut into fixed-size chunks by trajectory index, so the result
    does not depend on ``workers``.
    """
    dt_traj = cache.dt_field if dt_traj is None else float(dt_traj)
    ratio = cache.dt_field / dt_traj
    stride = int(round(ratio))
    if abs(stride - ratio) > 1e-9 * ratio:
        raise EnsembleError(f"dt_field={cache.dt_field} is not a whole multiple of dt_traj={dt_traj}")
    x0 = sample_initial(ScalarField(cache.grid, cache.rho[0]), n, seed)
    chunks = [(a, min(a + CHUNK, n)) for a in range(0, n, CHUNK)]

    def job(bounds):
        a, b = bounds
        return advect_batch(x0[a:b], cache, s, mode, dt_traj, record_every=stride, full=False)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(job, chunks))
    else:
        results = [job(c) for c in chunks]
    positions = np.concatenate([r.x_total for r in results], axis=1)
    trapped = np.concatenate([r.trapped for r in results])
    ens = Ensemble(n, seed, mode, x0, results[0].times, positions, trapped)
    if ens.trapped_count > TRAP_LIMIT * n:
        raise EnsembleError(f"{ens.trapped_count} of {n} trajectories trapped at nodes (limit {TRAP_LIMIT:.0%})")
    return ens


def _overlap(grid: Grid, bins: int) -> np.ndarray:
    """Fraction of each grid cell (centred on its point, periodic) falling in each of ``bins`` equal bins."""
    h = grid.spacing
    centers = grid.lower + h * np.arange(grid.n + 1)  # last one is the periodic image of cell 0
    lo, hi = centers - 0.5 * h, centers + 0.5 * h
    edges = np.linspace(grid.lower, grid.lower + grid.extent, bins + 1)
    o = np.clip(np.minimum(hi[:, None], edges[None, 1:]) - np.maximum(lo[:, None], edges[None, :-1]), 0.0, None) / h
    o[0] += o[-1]
    return o[:-1]


def binned_density(rho: ScalarField, bins: int) -> np.ndarray:
    """Probability of each bin under piecewise-constant rho."""
    p = _cell_masses(rho.values)
    o = _overlap(rho.grid, bins)
    return p @ o if rho.grid.dims == 1 else o.T @ p @ o


def empirical_histogram(positions: np.ndarray, grid: Grid, bins: int) -> np.ndarray:
    edges = np.linspace(grid.lower, grid.lower + grid.extent, bins + 1)
    if grid.dims == 1:
        counts, _ = np.histogram(positions[:, 0], bins=edges)
    else:
        counts, _, _ = np.histogram2d(positions[:, 0], positions[:, 1], bins=[edges, edges])
    return counts / counts.sum()


def tv_distance(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.abs(p - q).sum())


def equivariance_metric(ens: Ensemble, cache: FieldCache, t: float, bins: int | None = None) -> float:
    """TV distance between untrapped ensemble members at frame time t and rho(., t) over the same bins."""
    k = int(round((t - ens.times[0]) / (ens.times[1] - ens.times[0]))) if ens.times.size > 1 else 0
    if k < 0 or k >= ens.times.size or abs(ens.times[k] - t) > 1e-9 * max(1.0, abs(t)):
        raise ValueError(f"t={t} is not a recorded frame time")
    frame = int(round((t - cache.t0) / cache.dt_field))
    bins = default_bins(ens.n_traj) if bins is None else bins
    keep = ~ens.trapped
    pos = ens.positions[k, keep]
    grid = cache.grid
    wrapped = grid.lower + np.mod(pos[:, : grid.dims] - grid.lower, grid.extent)
    emp = empirical_histogram(wrapped, grid, bins)
    return tv_distance(emp, binned_density(ScalarField(grid, cache.rho[frame]), bins))


def tv_series(ens: Ensemble, cache: FieldCache, bins: int | None = None) -> np.ndarray:
    return np.array([equivariance_metric(ens, cache, t, bins) for t in ens.times])


def ensemble_summary(ens: Ensemble, tv: np.ndarray, bins: int, config_hash: str = "") -> dict:
    return {
        "config_hash": config_hash,
        "seed": ens.seed,
        "n": ens.n_traj,
        "mode": ens.mode,
        "bins": bins,
        "trapped": ens.trapped_count,
        "times": [float(t) for t in ens.times],
        "tv": [float(v) for v in tv],
    }


def write_summary(summary: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
