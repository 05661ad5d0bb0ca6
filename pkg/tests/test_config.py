import numpy as np
import pytest

from spinhydro.config import SPIN_LOAD_TOL, bundled_names, load_config, parse_config
from spinhydro.errors import ConfigError

MINIMAL = """\
grid: {dims: 1, n: 128, extent: 16.0}
potential: {kind: harmonic, omega: 1.0}
state: {kind: harmonic, quanta: [0], omega: 1.0}
evolution: {T: 0.5, dt: 1.0e-3, frame_stride: 50}
"""

BUNDLED = [
    "2d-gaussian-oblique",
    "barrier-scatter",
    "free-gaussian",
    "harmonic-ground",
    "harmonic-superposition-01",
    "moving-gaussian",
    "two-packet-superposition",
]


def test_minimal_config_gets_defaults():
    cfg = parse_config(MINIMAL)
    assert cfg.mass == 1.0
    assert cfg.spin.s == (0.0, 0.0, 1.0)
    assert cfg.backend == "spectral" and cfg.node_eps == 1e-12
    assert cfg.dt_field == pytest.approx(0.05)
    assert cfg.diagnostics["dual_q"].enabled and cfg.diagnostics["dual_q"].tol == 1e-8
    assert not cfg.diagnostics["harmonic_q0"].enabled
    assert cfg.trajectories["enabled"] is False and cfg.ensemble["enabled"] is False
    assert cfg.output["hydro_snapshots"] == 3


def test_spin_norm_rejected_with_line():
    with pytest.raises(ConfigError) as info:
        parse_config(MINIMAL + "spin: [0, 0, 2]\n")
    assert "not unit norm" in str(info.value)
    assert info.value.key == "spin" and info.value.line == 5


def test_near_unit_spin_is_normalized():
    s = 1 + 0.5 * SPIN_LOAD_TOL
    cfg = parse_config(MINIMAL + f"spin: [0, 0, {s!r}]\n")
    assert np.linalg.norm(cfg.spin.s) == pytest.approx(1.0, abs=1e-15)


def test_unknown_key_reports_line():
    text = MINIMAL + "trajectories:\n  enabled: true\n  velocityy: 3\n"
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert "velocityy" in str(info.value)
    assert info.value.line == 7


def test_unknown_top_level_key():
    with pytest.raises(ConfigError, match="unknown key 'gird'"):
        parse_config(MINIMAL + "gird: 3\n")


def test_missing_section():
    with pytest.raises(ConfigError, match="evolution"):
        parse_config("\n".join(MINIMAL.splitlines()[:3]))


def test_malformed_yaml():
    with pytest.raises(ConfigError, match="malformed YAML") as info:
        parse_config(MINIMAL + "mass: [1.0\n")
    assert info.value.line is not None


@pytest.mark.parametrize("line", [
    "mass: -1.0",
    "hydro: {backend: fd4}",
    "trajectories: {mode: sideways}",
    "diagnostics: {dual_q: {tol: many}}",
    "diagnostics: {nonsense: {enabled: true}}",
])
def test_bad_values(line):
    with pytest.raises(ConfigError):
        parse_config(MINIMAL + line + "\n")


def test_bundled_scenarios_all_parse():
    assert bundled_names() == BUNDLED
    for name in BUNDLED:
        cfg = load_config(name)
        assert cfg.name == name


def test_unknown_reference():
    with pytest.raises(ConfigError, match="no scenario"):
        load_config("no-such-scenario")


def test_config_hash_ignores_output():
    a = parse_config(MINIMAL)
    b = parse_config(MINIMAL + "output: {dir: elsewhere}\n")
    c = parse_config(MINIMAL + "mass: 2.0\n")
    assert a.config_hash() == b.config_hash()
    assert a.config_hash() != c.config_hash()
    assert len(a.config_hash()) == 64


def test_resolved_roundtrips():
    import yaml

    cfg = load_config("free-gaussian")
    doc = cfg.resolved()
    again = parse_config(yaml.safe_dump(doc))
    assert again.config_hash() == cfg.config_hash()
