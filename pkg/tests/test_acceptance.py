"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -s`` to see the lines as they are
produced; they are also collected into a summary section at the end.
"""
import filecmp
import time
from pathlib import Path

import numpy as np
import pytest

from spinhydro import hydro as hy
from spinhydro.config import bundled_names, load_config
from spinhydro.ensemble import run_ensemble, tv_series
from spinhydro.grid import ComplexField, make_grid
from spinhydro.propagator import Potential, evolve
from spinhydro.residuals import continuity_residual, hj_residual
from spinhydro.runner import INVARIANCE_PHASE, INVARIANCE_SCALE, execute, invariance_gap, run_scenario
from spinhydro.states import GaussianState, init_state
from spinhydro.trajectory import FieldCache, SplitSpec, split_ambiguity_check

import oracles

SCENARIOS = bundled_names()


@pytest.fixture(scope="module")
def checked():
    """Identity-mode run of every bundled scenario with its wall time."""
    out = {}
    for name in SCENARIOS:
        cfg = load_config(name)
        t0 = time.perf_counter()
        res = execute(cfg, workers=1, identities_only=True)
        out[name] = (res, time.perf_counter() - t0)
    return out


@pytest.fixture(scope="module")
def free_runs():
    g = make_grid(1, 512, 64.0)
    psi0 = init_state(GaussianState(0.0, 1.0, 1.0), g)
    runs = {}
    for stride in (10, 5):
        frames = evolve(psi0, Potential.free(g), 1.0, 5.0, 1e-3, stride)
        runs[stride] = (frames, hy.extract_frames(frames))
    return runs


def test_criterion_01_dual_quantum_potential(checked, criterion):
    worst, slowest = 0.0, 0.0
    for name, (res, seconds) in checked.items():
        assert res.config.backend == "spectral"
        worst = max(worst, max(h.dual_q_gap() for h in res.hydro))
        slowest = max(slowest, seconds)
    ok = worst < 1e-8 and slowest < 10.0
    criterion(1, ok, f"max |Q_amp - Q_kin| = {worst:.2e} (< 1e-8) over {len(checked)} scenarios, slowest {slowest:.1f} s (< 10 s)")
    assert ok


def test_criterion_02_harmonic_closed_forms(checked, criterion):
    res, _ = checked["harmonic-ground"]
    g = res.config.grid
    h0 = res.hydro[0]
    interior = h0.rho.values >= 1e-8 * h0.rho.values.max()
    drift = np.abs(h0.v_B.values)[:, h0.valid].max()
    osm = np.abs(h0.v_S.values[0] - oracles.harmonic_osmotic(g.axis))[interior].max()
    q0 = abs(h0.Q_amp.values[g.n // 2] - 0.5)
    rho = np.abs(res.frames.frames) ** 2
    stationary = np.abs(rho - rho[0]).max()
    evolved_drift = max(np.abs(h.v_B.values)[:, h.valid].max() for h in res.hydro)
    ok = drift < 1e-10 and osm < 1e-8 and q0 < 1e-6 and stationary < 1e-8 and res.frames.times[-1] >= 10.0 - 1e-9
    criterion(2, ok, f"v_B {drift:.1e}, v_S+x {osm:.1e}, |Q(0)-1/2| {q0:.1e} on the eigenstate; "
                     f"rho drift {stationary:.1e} over T=10 (evolved v_B max {evolved_drift:.1e}, reported)")
    assert ok


def test_criterion_03_free_packet_oracle(free_runs, criterion):
    frames, hydro = free_runs[10]
    g = frames.grid
    k = int(np.argmin(np.abs(frames.times - 2.0)))
    assert abs(frames.times[k] - 2.0) < 1e-12
    exact = oracles.free_packet_1d(g.axis, 2.0, 0.0, 1.0, 1.0)
    l2 = np.sqrt(g.integrate(np.abs(frames.frames[k] - exact) ** 2))
    vb, vs = oracles.free_packet_velocities_1d(g.axis, 2.0, 0.0, 1.0, 1.0)
    h = hydro[k]
    valid = h.valid
    rel_b = np.abs(h.v_B.values[0] - vb)[valid].max() / np.abs(vb)[valid].max()
    rel_s = np.abs(h.v_S.values[0] - vs)[valid].max() / np.abs(vs)[valid].max()
    ok = l2 < 1e-8 and rel_b < 1e-6 and rel_s < 1e-6
    criterion(3, ok, f"L2 error at t=2 {l2:.1e} (< 1e-8); relative v_B {rel_b:.1e}, v_S {rel_s:.1e} (< 1e-6)")
    assert ok


def test_criterion_04_continuity(free_runs, criterion):
    coarse = continuity_residual(*free_runs[10])
    fine = continuity_residual(*free_runs[5])
    ratio = coarse.max / fine.max
    transparency = max(coarse.transparency, fine.transparency)
    ok = coarse.max < 1e-4 and 3.5 <= ratio <= 4.5 and transparency < 1e-12
    criterion(4, ok, f"rms {coarse.max:.2e} at dt_field=0.01 (< 1e-4), halving ratio {ratio:.2f} (in [3.5, 4.5]), "
                     f"J_B vs J gap {transparency:.1e} (< 1e-12)")
    assert ok


def test_criterion_05_hamilton_jacobi(free_runs, checked, criterion):
    coarse = hj_residual(*free_runs[10]).max
    fine = hj_residual(*free_runs[5]).max
    ratio = coarse / fine
    res, _ = checked["harmonic-ground"]
    assert abs(res.config.dt_field - 0.01) < 1e-12
    harmonic = hj_residual(res.frames, res.hydro).max
    ok = coarse < 1e-4 and harmonic < 1e-4 and 3.5 <= ratio <= 4.5
    criterion(5, ok, f"free rms {coarse:.2e}, harmonic rms {harmonic:.2e} at dt_field=0.01 (< 1e-4); "
                     f"free halving ratio {ratio:.2f} (in [3.5, 4.5])")
    assert ok


def test_criterion_06_spin_constraints(checked, criterion):
    worst = {"unit_norm": 0.0, "osmotic_spin": 0.0, "drift_internal": 0.0, "kinetic_identity": 0.0}
    count = 0
    for name, (res, _) in checked.items():
        if res.config.grid.dims != 1:
            continue
        assert res.config.spin.s == (0.0, 0.0, 1.0)
        count += 1
        for h in res.hydro:
            rep = h.constraints()
            for key in worst:
                worst[key] = max(worst[key], getattr(rep, key))
    ok = all(v < 1e-12 for v in worst.values())
    criterion(6, ok, f"{count} 1D scenarios, all frames: " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + " (< 1e-12)")
    assert ok


def test_criterion_07_cross_identities(criterion):
    rng = np.random.default_rng(20240607)
    worst = {"spectral": 0.0, "fd2": 0.0}
    for i in range(100):
        d = 1 if i % 2 == 0 else 2
        g = make_grid(d, 128, 2 * np.pi)
        psi = ComplexField(g, oracles.band_limited_field(g, rng))
        for backend in worst:
            h = hy.extract(psi, 1.0, hy.Z_HAT, backend)
            rep = hy.cross_identities(psi, h.v_B, h.v_S, 1.0, backend)
            worst[backend] = max(worst[backend], rep.scalar_product, rep.vector_product)
    ok = all(v < 1e-8 for v in worst.values())
    criterion(7, ok, f"100 random fields: spectral {worst['spectral']:.1e}, fd2 {worst['fd2']:.1e} (< 1e-8)")
    assert ok


def test_criterion_08_equivariance(criterion):
    cfg = load_config("free-gaussian")
    assert cfg.ensemble["n"] == 10_000 and cfg.ensemble["bins"] == 50 and cfg.T == 5.0
    frames = evolve(init_state(cfg.build_state(), cfg.grid), cfg.build_potential(), cfg.mass, cfg.T, cfg.dt, cfg.frame_stride)
    cache = FieldCache(frames, hy.extract_frames(frames, cfg.spin, workers=8))
    growth, trapped = {}, {}
    t0 = time.perf_counter()
    for mode in ("drift", "total"):
        ens = run_ensemble(cache, cfg.spin, 10_000, cfg.ensemble["seed"], mode, cfg.ensemble["dt_traj"], workers=8)
        tv = tv_series(ens, cache, 50)
        assert ens.times[-1] == pytest.approx(5.0)
        growth[mode] = float((tv - tv[0]).max())
        trapped[mode] = ens.trapped_count
    seconds = time.perf_counter() - t0
    ok = all(v <= 0.03 for v in growth.values()) and seconds < 60.0
    criterion(8, ok, f"max TV(t)-TV(0): drift {growth['drift']:.4f}, total {growth['total']:.4f} (<= 0.03); "
                     f"trapped {trapped['drift']}/{trapped['total']}; {seconds:.1f} s with 8 workers (< 60 s)")
    assert ok


def test_criterion_09_split_ambiguity(checked, criterion):
    worst_total, worst_offset = 0.0, 0.0
    for name, x0, ext_a, ext_b in [
        ("harmonic-ground", (1.0, 0, 0), (1.0, 0, 0), (0.5, 0.5, 0)),
        ("free-gaussian", (0.5, 0, 0), (0.5, 0, 0), (0.0, 0, 0)),
        ("2d-gaussian-oblique", (0.3, -0.2, 0), (0.1, 0.1, 0), (-0.4, 0.7, 0)),
    ]:
        res, _ = checked[name]
        cache = FieldCache(res.frames, res.hydro)
        a = SplitSpec.from_external(x0, ext_a)
        b = SplitSpec.from_external(x0, ext_b)
        rep = split_ambiguity_check(a, b, cache, res.config.spin, 0.01)
        worst_total = max(worst_total, rep.total_gap)
        worst_offset = max(worst_offset, rep.ext_offset_error, rep.int_offset_error)
    ok = worst_total < 1e-12 and worst_offset < 1e-12
    criterion(9, ok, f"total trajectory gap {worst_total:.1e}, deviation from initial offset {worst_offset:.1e} (< 1e-12)")
    assert ok


def test_criterion_10_scale_phase_invariance(checked, criterion):
    gaps = {"spectral": 0.0, "fd2": 0.0}
    for name, (res, _) in checked.items():
        cfg = res.config
        for i in (0, len(res.frames) // 2, len(res.frames) - 1):
            for backend in gaps:
                gap = invariance_gap(res.frames[i], cfg.mass, cfg.spin, backend, cfg.node_eps, INVARIANCE_SCALE, INVARIANCE_PHASE)
                gaps[backend] = max(gaps[backend], gap)
    ok = gaps["spectral"] < 1e-12
    criterion(10, ok, f"N=7.3, phase 1.1: spectral (default backend) {gaps['spectral']:.1e} (< 1e-12); "
                      f"fd2 {gaps['fd2']:.1e}; spectral gap is FFT roundoff divided by |psi| in the far tails")
    assert ok


def _data_files(root: Path) -> list[str]:
    return sorted(str(p.relative_to(root)) for p in root.rglob("*") if p.is_file() and p.name != "run_meta.json")


def test_criterion_11_determinism(tmp_path, criterion):
    mismatched = []
    compared = 0
    for name in SCENARIOS:
        cfg = load_config(name)
        a, b = tmp_path / f"{name}-w1", tmp_path / f"{name}-w8"
        run_scenario(cfg, a, workers=1)
        run_scenario(cfg, b, workers=8)
        files_a, files_b = _data_files(a), _data_files(b)
        if files_a != files_b:
            mismatched.append(f"{name}: file sets differ")
            continue
        for rel in files_a:
            compared += 1
            if not filecmp.cmp(a / rel, b / rel, shallow=False):
                mismatched.append(f"{name}/{rel}")
    ok = not mismatched
    criterion(11, ok, f"{len(SCENARIOS)} scenarios, {compared} files byte-compared with workers 1 vs 8"
                      + ("" if ok else f"; differing: {', '.join(mismatched[:5])}"))
    assert ok
