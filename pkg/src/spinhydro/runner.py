"""Scenario orchestration: propagate, extract, integrate, run diagnostics, write outputs.

Data outputs carry no timestamps or host details so that two runs of the
same config produce identical bytes; those live in ``run_meta.json``.
"""
from __future__ import annotations

import csv
import json
import logging
import os
import platform
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import hydro as hy
from .config import ScenarioConfig
from .ensemble import default_bins, ensemble_summary, run_ensemble, tv_series
from .frameio import write_frames
from .grid import ComplexField
from .propagator import FrameSequence, evolve
from .residuals import continuity_residual, hj_residual, reconstruct_phases
from .states import GaussianState, free_gaussian, free_gaussian_velocities, harmonic_energy, init_state
from .trajectory import FieldCache, SplitSpec, advect, split_ambiguity_check

log = logging.getLogger(__name__)

INVARIANCE_SCALE = 7.3
INVARIANCE_PHASE = 1.1
INTERIOR_RHO = 1e-8


def _clean(value):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to None."""
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, np.ndarray):
        return _clean(value.tolist())
    if isinstance(value, (np.floating, float)):
        v = float(value)
        return v if np.isfinite(v) else None
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value


def write_json(doc: dict, path: Path) -> None:
    path.write_text(json.dumps(_clean(doc), indent=2, sort_keys=True) + "\n")


@dataclass
class RunResult:
    config: ScenarioConfig
    frames: FrameSequence
    hydro: list
    diagnostics: dict = field(default_factory=dict)
    series: dict = field(default_factory=dict)
    trajectories: list = field(default_factory=list)
    ensembles: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(d["pass"] is not False for d in self.diagnostics.values())

    def report(self) -> dict:
        return {
            "scenario": self.config.name,
            "config_hash": self.config.config_hash(),
            "pass": self.passed,
            "diagnostics": self.diagnostics,
        }


class _Recorder:
    def __init__(self, cfg: ScenarioConfig, out: dict):
        self.cfg = cfg
        self.out = out

    def on(self, name: str) -> bool:
        return self.cfg.diagnostics[name].enabled

    def add(self, name: str, value: float, asserted: bool = True, **details) -> None:
        spec = self.cfg.diagnostics[name]
        entry = {"value": float(value), "tol": spec.tol, "compare": spec.compare}
        entry["pass"] = spec.passes(float(value)) if asserted else None
        entry.update(details)
        self.out[name] = entry


def _max_masked(values: np.ndarray, valid: np.ndarray) -> float:
    return float(np.abs(values)[..., valid].max()) if valid.any() else 0.0


def invariance_gap(psi: ComplexField, m: float, s, backend: str, eps: float,
                   scale: float = INVARIANCE_SCALE, phase: float = INVARIANCE_PHASE) -> float:
    """Largest change in v_B, v_S, Q and v_total when psi is multiplied by scale*exp(i*phase)."""
    base = hy.extract(psi, m, s, backend, eps)
    moved = hy.extract(ComplexField(psi.grid, psi.values * (scale * np.exp(1j * phase))), m, s, backend, eps)
    valid = base.valid & moved.valid
    gaps = [
        _max_masked(a.values - b.values, valid)
        for a, b in (
            (base.v_B, moved.v_B),
            (base.v_S, moved.v_S),
            (base.Q_amp, moved.Q_amp),
            (base.Q_kin, moved.Q_kin),
            (base.v_total, moved.v_total),
        )
    ]
    return max(gaps)


def _snapshot_indices(count: int, snapshots: int) -> list[int]:
    return sorted(set(int(round(v)) for v in np.linspace(0, count - 1, min(snapshots, count))))


def _single_gaussian(cfg: ScenarioConfig) -> GaussianState:
    st = cfg.state
    return GaussianState(st["center"], st["width"], st["momentum"])


def _identity_diagnostics(res: RunResult, rec: _Recorder, workers: int) -> None:
    cfg, frames, hydro = res.config, res.frames, res.hydro
    m, grid = cfg.mass, cfg.grid
    s = res.series
    s["times"] = frames.times
    norms = frames.norms()
    s["norm"] = norms
    if rec.on("unitarity"):
        rec.add("unitarity", np.abs(norms / norms[0] - 1.0).max())
    if rec.on("energy"):
        e = frames.energies()
        s["energy"] = e
        rec.add("energy", np.abs(e - e[0]).max() / max(abs(e[0]), 1e-300))
    if rec.on("dual_q"):
        gaps = np.array([h.dual_q_gap() for h in hydro])
        s["dual_q_gap"] = gaps
        rec.add("dual_q", gaps.max())
    if rec.on("irrotational"):
        curls = np.array([hy.irrotationality(frames[i], m, cfg.backend, cfg.node_eps) for i in range(len(frames))])
        s["curl_v_B"], s["curl_v_S"] = curls[:, 0], curls[:, 1]
        rec.add("irrotational", curls.max(), asserted=grid.dims > 1, note="zero by construction in 1D" if grid.dims == 1 else "")
    if rec.on("continuity") or rec.on("transparency"):
        cont = continuity_residual(frames, hydro, cfg.backend)
        s["continuity_drift"], s["continuity_full"] = cont.drift, cont.full
        if rec.on("continuity"):
            rec.add("continuity", cont.max)
        if rec.on("transparency"):
            rec.add("transparency", cont.transparency)
    if rec.on("hamilton_jacobi"):
        phases = reconstruct_phases(frames, hydro, cfg.node_eps)
        hj = hj_residual(frames, hydro, phases=phases, eps=cfg.node_eps)
        s["hamilton_jacobi"] = hj.rms
        s["hj_branch_points"] = hj.branch_points
        rec.add("hamilton_jacobi", hj.max, path_residual=hj.path_residual, anchor_flags=hj.anchor_flags,
                branch_points=int(hj.branch_points.sum()))
    if rec.on("spin_constraints"):
        reps = [h.constraints() for h in hydro]
        for key in ("unit_norm", "osmotic_spin", "drift_internal", "kinetic_identity", "expansion"):
            s[f"constraint_{key}"] = np.array([getattr(r, key) for r in reps])
        asserted = ["unit_norm", "osmotic_spin", "expansion"]
        if grid.dims == 1:
            asserted += ["drift_internal", "kinetic_identity"]
        value = max(float(s[f"constraint_{k}"].max()) for k in asserted)
        reported = {k: float(s[f"constraint_{k}"].max()) for k in ("drift_internal", "kinetic_identity") if k not in asserted}
        rec.add("spin_constraints", value, asserted_terms=asserted, reported=reported)
    if rec.on("cross_identities"):
        reps = [hy.cross_identities(frames[i], h.v_B, h.v_S, m, cfg.backend, cfg.node_eps) for i, h in enumerate(hydro)]
        s["cross_scalar"] = np.array([r.scalar_product for r in reps])
        s["cross_vector"] = np.array([r.vector_product for r in reps])
        rec.add("cross_identities", max(s["cross_scalar"].max(), s["cross_vector"].max()))
    if rec.on("invariance"):
        idx = _snapshot_indices(len(frames), 3)
        gaps = [invariance_gap(frames[i], m, cfg.spin, cfg.backend, cfg.node_eps) for i in idx]
        other = "fd2" if cfg.backend == "spectral" else "spectral"
        alt = [invariance_gap(frames[i], m, cfg.spin, other, cfg.node_eps) for i in idx]
        rec.add("invariance", max(gaps), frames=idx, backend=cfg.backend, **{f"value_{other}": max(alt)})
    _closed_form_diagnostics(res, rec)


def _closed_form_diagnostics(res: RunResult, rec: _Recorder) -> None:
    cfg, frames, hydro = res.config, res.frames, res.hydro
    m, grid = cfg.mass, cfg.grid
    s = res.series
    if rec.on("centroid"):
        coords = grid.coords()
        rho = np.abs(frames.frames) ** 2
        axes = tuple(range(1, grid.dims + 1))
        mean = np.stack([np.sum(rho * x, axis=axes) for x in coords], axis=1) * grid.cell_volume / frames.norms()[:, None]
        k = np.meshgrid(*([grid.wavenumbers] * grid.dims), indexing="ij")
        pk = np.abs(np.fft.fftn(frames.frames[0])) ** 2
        p0 = np.array([np.sum(kk * pk) / np.sum(pk) for kk in k])
        t = frames.times[:, None]
        if cfg.potential["kind"] == "free":
            pred = mean[0] + p0 * t / m
        else:
            om = np.resize(np.asarray(cfg.potential["omega"], dtype=float), grid.dims)
            pred = mean[0] * np.cos(om * t) + p0 / (m * om) * np.sin(om * t)
        s["centroid"] = mean
        rec.add("centroid", np.abs(mean - pred).max())
    if rec.on("free_packet_field") or rec.on("free_packet_velocity"):
        spec = _single_gaussian(cfg)
        field_err, vel_err = [], []
        for i, t in enumerate(frames.times):
            exact = free_gaussian(grid, spec, float(t), m)
            exact = exact / np.sqrt(grid.integrate(np.abs(exact) ** 2))
            field_err.append(np.sqrt(grid.integrate(np.abs(frames.frames[i] - exact) ** 2)))
            vb, vs = free_gaussian_velocities(grid, spec, float(t), m)
            valid = hydro[i].valid
            rel_b = _max_masked(hydro[i].v_B.values - vb, valid) / _max_masked(vb, valid)
            scale_s = _max_masked(vs, valid)
            rel_s = _max_masked(hydro[i].v_S.values - vs, valid) / scale_s if scale_s > 0 else 0.0
            vel_err.append(max(rel_b, rel_s))
        s["free_packet_field"] = np.array(field_err)
        s["free_packet_velocity"] = np.array(vel_err)
        if rec.on("free_packet_field"):
            rec.add("free_packet_field", max(field_err))
        if rec.on("free_packet_velocity"):
            rec.add("free_packet_velocity", max(vel_err))
    if cfg.state["kind"] == "harmonic" and cfg.potential["kind"] == "harmonic":
        om = np.resize(np.asarray(cfg.potential["omega"], dtype=float), grid.dims)
        # closed forms are checked on the prepared eigenstate; the evolved
        # frames carry O(dt^2) splitting error and are reported alongside
        target = np.zeros((3,) + grid.shape)
        for c, x in enumerate(grid.coords()):
            target[c] = -m * om[c] * x
        origin = tuple([grid.n // 2] * grid.dims)
        drift, osm, q0 = [], [], []
        for h in hydro:
            interior = h.rho.values >= INTERIOR_RHO * h.rho.values.max()
            drift.append(_max_masked(h.v_B.values, h.valid))
            osm.append(_max_masked(h.v_S.values - target, interior))
            q0.append(abs(h.Q_amp.values[origin] - 0.5 * om.sum()))
        if rec.on("harmonic_drift"):
            rec.add("harmonic_drift", drift[0], evolved_max=max(drift))
        if rec.on("harmonic_osmotic"):
            rec.add("harmonic_osmotic", osm[0], evolved_max=max(osm), interior_rho=INTERIOR_RHO)
        if rec.on("harmonic_q0"):
            rec.add("harmonic_q0", q0[0], evolved_max=max(q0))
        if rec.on("stationarity"):
            rho = np.abs(frames.frames) ** 2
            rec.add("stationarity", np.abs(rho - rho[0]).max())
        if rec.on("eigen_phase"):
            energy = harmonic_energy(cfg.build_state())
            rho0 = np.abs(frames.frames[0]) ** 2
            anchor = np.unravel_index(int(np.argmax(rho0)), grid.shape)
            phase = np.unwrap(np.angle(frames.frames[(slice(None),) + anchor]))
            rate = np.polyfit(frames.times, phase, 1)[0]
            rec.add("eigen_phase", abs(-rate - energy), rate=-rate, energy=energy)
    if rec.on("q_contrast"):
        rec.add("q_contrast", _q_contrast(res))


def _q_contrast(res: RunResult) -> float:
    """Relative rho-weighted RMS gap between the superposition's Q and each single packet's Q.

    Evaluated at the frame where the packets overlap most; the smaller of
    the per-packet values is returned.
    """
    cfg, frames, hydro = res.config, res.frames, res.hydro
    grid, m = cfg.grid, cfg.mass
    comps = [GaussianState(c["state"]["center"], c["state"]["width"], c["state"]["momentum"]) for c in cfg.state["components"]]
    overlaps = []
    for t in frames.times:
        amps = [np.abs(free_gaussian(grid, c, float(t), m)) for c in comps]
        overlaps.append(grid.integrate(amps[0] * amps[1]))
    i = int(np.argmax(overlaps))
    t = float(frames.times[i])
    h = hydro[i]
    out = []
    for c in comps:
        single = hy.extract(ComplexField(grid, free_gaussian(grid, c, t, m)), m, cfg.spin, cfg.backend, cfg.node_eps)
        valid = h.valid & single.valid
        gap = hy.weighted_rms(h.Q_amp.values - single.Q_amp.values, h.rho.values, valid)
        ref = hy.weighted_rms(single.Q_amp.values, h.rho.values, valid)
        out.append(gap / ref)
    return float(min(out))


def _trajectory_stage(res: RunResult, rec: _Recorder, cache: FieldCache, out_dir: Path | None) -> None:
    cfg = res.config
    tc = cfg.trajectories
    sums, perps = [], []
    for i, x0 in enumerate(tc["starts"]):
        traj = advect(x0, cache, cfg.spin, tc["mode"], tc["dt_traj"])
        res.trajectories.append(traj)
        off = traj.sum_offset()
        sums.append(float(np.abs(off - off[0]).max()))
        perps.append(traj.perpendicularity())
        if out_dir is not None:
            traj.write_csv(out_dir / f"traj_{i:03d}.csv")
    if tc["starts"]:
        if rec.on("trajectory_sum"):
            rec.add("trajectory_sum", max(sums))
        if rec.on("perpendicularity"):
            rec.add("perpendicularity", max(perps), asserted=cfg.grid.dims == 1,
                    note="" if cfg.grid.dims == 1 else "reported only: in 2D v_B need not be orthogonal to v_S x s")
    reports = []
    for i, sp in enumerate(tc["splits"]):
        a = SplitSpec.from_external(sp["x0"], sp["ext_a"])
        b = SplitSpec.from_external(sp["x0"], sp["ext_b"])
        rep = split_ambiguity_check(a, b, cache, cfg.spin, tc["dt_traj"], tc["mode"])
        reports.append(rep.as_dict())
        if out_dir is not None:
            for tag, spec in (("a", a), ("b", b)):
                advect(spec.x0_total, cache, cfg.spin, tc["mode"], tc["dt_traj"], spec).write_csv(
                    out_dir / f"split_{i:03d}_{tag}.csv"
                )
    if reports and rec.on("split_ambiguity"):
        worst = max(max(r["total_gap"], r["ext_offset_error"], r["int_offset_error"]) for r in reports)
        rec.add("split_ambiguity", worst, splits=reports)


def _ensemble_stage(res: RunResult, rec: _Recorder, cache: FieldCache, out_dir: Path | None, workers: int) -> dict:
    cfg = res.config
    ec = cfg.ensemble
    bins = ec["bins"] or default_bins(ec["n"])
    summaries = {}
    growth = {}
    for mode in ec["modes"]:
        ens = run_ensemble(cache, cfg.spin, ec["n"], ec["seed"], mode, ec["dt_traj"], workers)
        tv = tv_series(ens, cache, bins)
        res.ensembles[mode] = (ens, tv)
        summaries[mode] = ensemble_summary(ens, tv, bins, cfg.config_hash())
        growth[mode] = float(tv.max() - tv[0])
        if out_dir is not None and ec["dump"]:
            ens.write_csv(out_dir / f"ensemble_{mode}.csv")
    if rec.on("equivariance"):
        rec.add("equivariance", max(growth.values()), tv_growth=growth, bins=bins)
    return summaries


def write_hydro_csv(h: hy.HydroFields, path: Path) -> None:
    """One row per grid point: coordinates, rho, v_B, v_S, Q_amp, Q_kin, J, mask."""
    grid = h.grid
    names = "xy"[: grid.dims]
    header = list(names) + ["rho"]
    for vec in ("v_B", "v_S"):
        header += [f"{vec}_{c}" for c in "xyz"]
    header += ["Q_amp", "Q_kin"] + [f"J_{c}" for c in "xyz"] + ["mask"]
    cols = [x.ravel() for x in grid.coords()] + [h.rho.values.ravel()]
    for vec in (h.v_B, h.v_S):
        cols += [vec.values[c].ravel() for c in range(3)]
    cols += [h.Q_amp.values.ravel(), h.Q_kin.values.ravel()] + [h.J.values[c].ravel() for c in range(3)]
    mask = h.nodal_mask.ravel()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in range(grid.size):
            w.writerow([repr(float(c[r])) for c in cols] + [int(mask[r])])


def execute(cfg: ScenarioConfig, workers: int = 1, identities_only: bool = False, out_dir: Path | None = None) -> RunResult:
    """Run the scenario in memory, writing data files into ``out_dir`` when given."""
    grid = cfg.grid
    psi0 = init_state(cfg.build_state(), grid)
    frames = evolve(psi0, cfg.build_potential(), cfg.mass, cfg.T, cfg.dt, cfg.frame_stride)
    hydro = hy.extract_frames(frames, cfg.spin, cfg.backend, cfg.node_eps, workers)
    res = RunResult(cfg, frames, hydro)
    rec = _Recorder(cfg, res.diagnostics)
    _identity_diagnostics(res, rec, workers)
    summaries = {}
    if not identities_only and (cfg.trajectories["enabled"] or cfg.ensemble["enabled"]):
        cache = FieldCache(frames, hydro)
        if cfg.trajectories["enabled"]:
            _trajectory_stage(res, rec, cache, out_dir)
        if cfg.ensemble["enabled"]:
            summaries = _ensemble_stage(res, rec, cache, out_dir, workers)
    if out_dir is not None:
        write_frames(frames, out_dir / "frames.bin", {"scenario": cfg.name, "config_hash": cfg.config_hash()})
        for i in _snapshot_indices(len(frames), cfg.output["hydro_snapshots"]):
            write_hydro_csv(hydro[i], out_dir / f"hydro_{i:05d}.csv")
        write_json(res.series, out_dir / "residuals.json")
        if summaries:
            write_json(summaries, out_dir / "ensemble_summary.json")
        write_json(cfg.resolved(), out_dir / "config.json")
        write_json(res.report(), out_dir / "report.json")
    return res


def run_scenario(cfg: ScenarioConfig, out_dir: str | Path | None = None, workers: int | None = None,
                 source: str = "") -> RunResult:
    """Full run with files written to ``out_dir`` (default: the config's output directory)."""
    workers = workers or os.cpu_count() or 1
    out = Path(out_dir or cfg.output["dir"])
    out.mkdir(parents=True, exist_ok=True)
    started = datetime.now(timezone.utc)
    t0 = time.perf_counter()
    res = execute(cfg, workers, out_dir=out)
    meta = {
        "started": started.isoformat(),
        "duration_s": time.perf_counter() - t0,
        "workers": workers,
        "source": source,
        "python": platform.python_version(),
        "numpy": np.__version__,
    }
    write_json(meta, out / "run_meta.json")
    return res
