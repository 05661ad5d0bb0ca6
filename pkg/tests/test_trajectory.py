import csv

import numpy as np
import pytest

from spinhydro import hydro as hy
from spinhydro.errors import NodalTrapError
from spinhydro.grid import make_grid
from spinhydro.propagator import Potential, evolve
from spinhydro.states import GaussianState, HarmonicState, Superposition, init_state
from spinhydro.trajectory import (
    FieldCache,
    SplitSpec,
    advect,
    advect_batch,
    interpolate_velocity,
    split_ambiguity_check,
)


def _cache(psi0, pot, T, dt, stride):
    frames = evolve(psi0, pot, 1.0, T, dt, stride)
    return FieldCache(frames, hy.extract_frames(frames))


@pytest.fixture(scope="module")
def ground_cache():
    g = make_grid(1, 256, 20.0)
    psi0 = init_state(HarmonicState((0,), 1.0, 1.0), g)
    return _cache(psi0, Potential.harmonic(g, 1.0, 1.0), 2.0, 2.5e-4, 40)


@pytest.fixture(scope="module")
def free_cache():
    g = make_grid(1, 512, 64.0)
    psi0 = init_state(GaussianState(0.0, 1.0, 1.0), g)
    return _cache(psi0, Potential.free(g), 5.0, 1e-3, 10)


@pytest.fixture(scope="module")
def two_packet_cache():
    g = make_grid(1, 512, 48.0)
    spec = Superposition((
        (0.8, GaussianState(-5.0, 1.0, 1.5)),
        (0.6, GaussianState(5.0, 0.7, -1.5)),
    ))
    return _cache(init_state(spec, g), Potential.free(g), 5.0, 1e-3, 10)


def test_interpolation_identity_on_nodes(free_cache):
    g = free_cache.grid
    for j, k in [(256, 0), (263, 37), (300, 500)]:
        t = free_cache.times[k]
        v = interpolate_velocity(free_cache, [g.axis[j], 0.4, -2.0], t, mode="drift")
        assert v[0] == free_cache.v_b[k][0][j]
        assert v[1] == 0.0 and v[2] == 0.0


def test_interpolation_is_linear_between_samples(free_cache):
    g = free_cache.grid
    x = 0.5 * (g.axis[256] + g.axis[257])
    t = 0.5 * (free_cache.times[3] + free_cache.times[4])
    v = interpolate_velocity(free_cache, [x, 0, 0], t, mode="drift")[0]
    corners = free_cache.v_b[3:5, 0, 256:258]
    assert v == pytest.approx(corners.mean(), abs=1e-15)


def test_ground_state_drift_mode_is_still(ground_cache):
    v0 = interpolate_velocity(ground_cache, [0.3, 0, 0], 0.0, mode="drift")
    assert np.abs(v0).max() < 1e-12
    # evolved frames carry splitting error and tail roundoff in the phase
    for x, t in [(-1.7, 0.55), (2.2, 1.999)]:
        assert np.abs(interpolate_velocity(ground_cache, [x, 0, 0], t, mode="drift")).max() < 1e-6
    traj = advect([1.0, 0.0, 0.0], ground_cache, hy.Z_HAT, "drift", 0.01)
    assert np.abs(traj.x_total - traj.x_total[0]).max() < 1e-6


def test_packet_centre_velocity():
    g = make_grid(1, 512, 64.0)
    psi0 = init_state(GaussianState(0.0, 1.0, 1.0), g)
    cache = _cache(psi0, Potential.free(g), 0.1, 1e-3, 10)
    v = interpolate_velocity(cache, [0.0, 0.0, 0.0], 0.0, mode="total")
    np.testing.assert_allclose(v, [1.0, 0.0, 0.0], rtol=0, atol=1e-9)


def test_ground_state_internal_orbit(ground_cache):
    traj = advect([1.0, 0.0, 0.0], ground_cache, hy.Z_HAT, "total", 0.01, t_end=1.0)
    expected = np.stack([np.ones_like(traj.times), traj.times, np.zeros_like(traj.times)], axis=1)
    assert np.abs(traj.x_total - expected).max() < 1e-6


def test_ground_state_origin_is_fixed(ground_cache):
    traj = advect([0.0, 0.0, 0.0], ground_cache, hy.Z_HAT, "total", 0.01)
    assert np.abs(traj.x_total).max() < 1e-12
    assert np.abs(traj.v_perp_along[0]).max() < 1e-9


def test_free_packet_centre_rides_along(free_cache):
    traj = advect([0.0, 0.0, 0.0], free_cache, hy.Z_HAT, "drift", 0.01)
    assert np.abs(traj.x_total[:, 0] - traj.times).max() < 1e-4
    assert np.abs(traj.x_total[:, 1:]).max() == 0.0


def test_sum_consistency_and_perpendicularity(free_cache):
    for x0 in (-1.3, 0.2, 2.0):
        traj = advect([x0, 0.0, 0.0], free_cache, hy.Z_HAT, "total", 0.01)
        off = traj.sum_offset()
        assert np.abs(off - off[0]).max() < 1e-9
        assert traj.perpendicularity() < 1e-10


def test_rk4_fourth_order(free_cache):
    x0 = [0.3, 0.0, 0.0]
    ref = advect(x0, free_cache, hy.Z_HAT, "total", 0.01 / 16, t_end=1.0).x_total[-1]
    errs = [np.abs(advect(x0, free_cache, hy.Z_HAT, "total", d, t_end=1.0).x_total[-1] - ref).max() for d in (0.01, 0.005)]
    assert 12.0 <= errs[0] / errs[1] <= 20.0


def test_drift_trajectories_never_cross(two_packet_cache):
    starts = np.zeros((40, 3))
    starts[:, 0] = np.concatenate([np.linspace(-7.5, -2.5, 20), np.linspace(3.6, 6.4, 20)])
    res = advect_batch(starts, two_packet_cache, hy.Z_HAT, "drift", 0.01)
    keep = ~res.trapped
    x = res.x_total[:, keep, 0]
    assert keep.sum() >= 38
    assert np.all(np.diff(x, axis=1) > 0)


def test_split_swap_gives_same_total(free_cache):
    x0 = (0.5, 0.0, 0.0)
    a = SplitSpec(x0, x0, (0.0, 0.0, 0.0))
    b = SplitSpec(x0, (0.0, 0.0, 0.0), x0)
    rep = split_ambiguity_check(a, b, free_cache, hy.Z_HAT, 0.01)
    assert rep.total_gap < 1e-12
    assert rep.ext_offset_error < 1e-12 and rep.int_offset_error < 1e-12
    assert rep.ext_gap_min == pytest.approx(0.5, abs=1e-12)
    assert rep.ext_gap_max == pytest.approx(0.5, abs=1e-12)


def test_identical_splits(free_cache):
    a = SplitSpec.from_external((0.5, 0.0, 0.0), (0.2, 0.0, 0.0))
    rep = split_ambiguity_check(a, a, free_cache, hy.Z_HAT, 0.01)
    assert rep.total_gap == 0.0 and rep.ext_gap_max == 0.0 and rep.ext_offset_error == 0.0


def test_harmonic_split_offset(ground_cache):
    x0 = (1.0, 0.0, 0.0)
    a = SplitSpec.from_external(x0, (1.0, 0.0, 0.0))
    b = SplitSpec.from_external(x0, (0.5, 0.5, 0.0))
    ta = advect(x0, ground_cache, hy.Z_HAT, "total", 0.01, a)
    tb = advect(x0, ground_cache, hy.Z_HAT, "total", 0.01, b)
    assert np.abs(ta.x_total - tb.x_total).max() < 1e-12
    assert np.abs(ta.x_ext - tb.x_ext - np.array([0.5, -0.5, 0.0])).max() < 1e-12


def test_split_spec_checks_sum():
    with pytest.raises(ValueError):
        SplitSpec((1.0, 0.0, 0.0), (0.5, 0.0, 0.0), (0.4, 0.0, 0.0))


def test_nodal_trap_aborts():
    g = make_grid(1, 256, 20.0)
    psi0 = init_state(HarmonicState((1,), 1.0, 1.0), g)
    cache = _cache(psi0, Potential.harmonic(g, 1.0, 1.0), 0.2, 2.5e-4, 40)
    with pytest.raises(NodalTrapError) as info:
        advect([0.0, 0.0, 0.0], cache, hy.Z_HAT, "total", 0.01)
    assert info.value.time is not None
    held = advect([0.0, 0.0, 0.0], cache, hy.Z_HAT, "total", 0.01, max_hold=1000)
    assert held.nodal_events and held.nodal_flags.all()


def test_dt_traj_must_not_exceed_dt_field(free_cache):
    with pytest.raises(ValueError):
        advect([0.0, 0.0, 0.0], free_cache, hy.Z_HAT, "total", 0.02)


def test_trajectory_csv(tmp_path, free_cache):
    traj = advect([0.0, 0.0, 0.0], free_cache, hy.Z_HAT, "total", 0.01)
    path = tmp_path / "t.csv"
    traj.write_csv(path)
    rows = list(csv.reader(open(path)))
    assert rows[0][:4] == ["time", "x_total_x", "x_total_y", "x_total_z"]
    assert rows[0][-1] == "nodal" and len(rows[0]) == 14
    assert len(rows) - 1 == round(5.0 / 0.01) + 1
