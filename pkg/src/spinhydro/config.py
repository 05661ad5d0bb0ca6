"""Scenario files: YAML with a fixed key set, defaults, and line-numbered errors.

Layout (all sections except ``grid``, ``state`` and ``evolution`` optional)::

    name: free-gaussian
    description: free text
    grid: {dims: 1, n: 512, extent: 64.0}
    mass: 1.0
    potential: {kind: free}          # harmonic: omega | barrier: height, center, width | tabulated: values
    state: {kind: gaussian, center: 0.0, width: 1.0, momentum: 1.0}
                                     # harmonic: quanta, omega | superposition: components
    spin: [0, 0, 1]
    evolution: {T: 5.0, dt: 1.0e-3, frame_stride: 10}
    hydro: {backend: spectral, node_eps: 1.0e-12}
    trajectories: {enabled: true, dt_traj: 0.01, mode: total, starts: [[0, 0, 0]], splits: []}
    ensemble: {enabled: true, n: 10000, seed: 1, bins: 50, modes: [drift, total], dt_traj: 0.01, dump: false}
    diagnostics: {dual_q: {enabled: true, tol: 1.0e-8}, ...}
    output: {dir: out/free-gaussian, hydro_snapshots: 3}
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigError, SpinHydroError
from .grid import Grid
from .hydro import NODE_EPS, SpinVector
from .operators import BACKENDS
from .propagator import PHASE_GUARD, Potential
from .states import GaussianState, HarmonicState, Superposition, init_state
from .trajectory import MODES, SplitSpec

SPIN_LOAD_TOL = 1e-6

# name -> (default tolerance, on by default, comparison)
DIAGNOSTICS = {
    "unitarity": (1e-10, True, "max"),
    "energy": (1e-8, True, "max"),
    "dual_q": (1e-8, True, "max"),
    "irrotational": (1e-8, True, "max"),
    "continuity": (1e-4, True, "max"),
    "transparency": (1e-12, True, "max"),
    "hamilton_jacobi": (1e-4, True, "max"),
    "spin_constraints": (1e-12, True, "max"),
    "cross_identities": (1e-8, True, "max"),
    "invariance": (1e-12, True, "max"),
    "centroid": (1e-2, False, "max"),
    "free_packet_field": (1e-8, False, "max"),
    "free_packet_velocity": (1e-6, False, "max"),
    "harmonic_drift": (1e-10, False, "max"),
    "harmonic_osmotic": (1e-8, False, "max"),
    "harmonic_q0": (1e-6, False, "max"),
    "stationarity": (1e-8, False, "max"),
    "eigen_phase": (1e-6, False, "max"),
    "q_contrast": (0.5, False, "min"),
    "trajectory_sum": (1e-9, True, "max"),
    "perpendicularity": (1e-10, True, "max"),
    "split_ambiguity": (1e-12, True, "max"),
    "equivariance": (3e-2, True, "max"),
}

SECTION_KEYS = {
    "grid": {"dims", "n", "extent"},
    "evolution": {"T", "dt", "frame_stride"},
    "hydro": {"backend", "node_eps"},
    "trajectories": {"enabled", "dt_traj", "mode", "starts", "splits"},
    "ensemble": {"enabled", "n", "seed", "bins", "modes", "dt_traj", "dump"},
    "output": {"dir", "hydro_snapshots"},
}
TOP_KEYS = {"name", "description", "mass", "potential", "state", "spin", "diagnostics"} | set(SECTION_KEYS)
POTENTIAL_KEYS = {"free": set(), "harmonic": {"omega"}, "barrier": {"height", "center", "width"}, "tabulated": {"values"}}
STATE_KEYS = {
    "gaussian": {"center", "width", "momentum"},
    "harmonic": {"quanta", "omega"},
    "superposition": {"components"},
}


@dataclass(frozen=True)
class DiagnosticSpec:
    enabled: bool
    tol: float
    compare: str

    def passes(self, value: float) -> bool:
        if not np.isfinite(value):
            return False
        return value >= self.tol if self.compare == "min" else value <= self.tol


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    description: str
    grid: Grid
    mass: float
    potential: dict
    state: dict
    spin: SpinVector
    T: float
    dt: float
    frame_stride: int
    backend: str
    node_eps: float
    trajectories: dict
    ensemble: dict
    diagnostics: dict
    output: dict

    @property
    def dt_field(self) -> float:
        return self.dt * self.frame_stride

    def resolved(self) -> dict:
        """Plain-data view with every default filled in."""
        return {
            "name": self.name,
            "description": self.description,
            "grid": {"dims": self.grid.dims, "n": self.grid.n, "extent": self.grid.extent},
            "mass": self.mass,
            "potential": copy.deepcopy(self.potential),
            "state": copy.deepcopy(self.state),
            "spin": list(self.spin.s),
            "evolution": {"T": self.T, "dt": self.dt, "frame_stride": self.frame_stride},
            "hydro": {"backend": self.backend, "node_eps": self.node_eps},
            "trajectories": copy.deepcopy(self.trajectories),
            "ensemble": copy.deepcopy(self.ensemble),
            "diagnostics": {k: {"enabled": d.enabled, "tol": d.tol} for k, d in self.diagnostics.items()},
            "output": copy.deepcopy(self.output),
        }

    def config_hash(self) -> str:
        doc = self.resolved()
        doc.pop("output")
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()

    def build_potential(self) -> Potential:
        return build_potential(self.potential, self.grid, self.mass)

    def build_state(self):
        return state_spec(self.state, self.mass)


def build_potential(spec: dict, grid: Grid, mass: float) -> Potential:
    kind = spec["kind"]
    if kind == "free":
        return Potential.free(grid)
    if kind == "harmonic":
        return Potential.harmonic(grid, spec["omega"], mass)
    if kind == "barrier":
        return Potential.barrier(grid, spec["height"], spec["center"], spec["width"])
    return Potential.tabulated(grid, spec["values"])


def state_spec(spec: dict, mass: float):
    kind = spec["kind"]
    if kind == "gaussian":
        return GaussianState(spec["center"], spec["width"], spec["momentum"])
    if kind == "harmonic":
        return HarmonicState(tuple(spec["quanta"]), spec["omega"], mass)
    return Superposition(
        tuple((complex(c["coefficient"][0], c["coefficient"][1]), state_spec(c["state"], mass)) for c in spec["components"])
    )


class _Lines:
    """Line numbers of mapping keys, addressed by dotted path."""

    def __init__(self, text: str):
        self.map: dict[str, int] = {}
        try:
            node = yaml.compose(text, Loader=yaml.SafeLoader)
        except yaml.YAMLError:
            return
        if node is not None:
            self._walk(node, "")

    def _walk(self, node, path):
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                sub = f"{path}.{k.value}" if path else str(k.value)
                self.map[sub] = k.start_mark.line + 1
                self._walk(v, sub)
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                sub = f"{path}[{i}]"
                self.map[sub] = v.start_mark.line + 1
                self._walk(v, sub)

    def __call__(self, path: str):
        while path:
            if path in self.map:
                return self.map[path]
            cut = max(path.rfind("."), path.rfind("["))
            path = path[:cut] if cut > 0 else ""
        return None


class _Parser:
    def __init__(self, text: str):
        self.lines = _Lines(text)

    def fail(self, message: str, key: str):
        raise ConfigError(message, key, self.lines(key))

    def mapping(self, value, key: str, allowed: set, required: set = frozenset()) -> dict:
        if value is None:
            value = {}
        if not isinstance(value, dict):
            self.fail("expected a mapping", key)
        for k in value:
            if k not in allowed:
                self.fail(f"unknown key '{k}'", f"{key}.{k}" if key else str(k))
        for k in sorted(required):
            if k not in value:
                self.fail(f"missing required key '{k}'", key)
        return value

    def number(self, value, key: str, positive: bool = False, integer: bool = False) -> float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            self.fail(f"expected a number, got {value!r}", key)
        if integer and (not isinstance(value, int)):
            self.fail(f"expected an integer, got {value!r}", key)
        if not np.isfinite(value):
            self.fail("value must be finite", key)
        if positive and not value > 0:
            self.fail(f"value must be positive, got {value!r}", key)
        return int(value) if integer else float(value)

    def numbers(self, value, key: str, length: int | None = None, **kw) -> list:
        items = value if isinstance(value, list) else [value]
        out = [self.number(v, f"{key}[{i}]" if isinstance(value, list) else key, **kw) for i, v in enumerate(items)]
        if length is not None and len(out) != length:
            self.fail(f"expected {length} values, got {len(out)}", key)
        return out

    def boolean(self, value, key: str) -> bool:
        if not isinstance(value, bool):
            self.fail(f"expected true or false, got {value!r}", key)
        return value

    def choice(self, value, key: str, options) -> str:
        if value not in options:
            self.fail(f"expected one of {sorted(options)}, got {value!r}", key)
        return value

    def state(self, value, key: str, dims: int) -> dict:
        value = self.mapping(value, key, {"kind"} | set().union(*STATE_KEYS.values()), {"kind"})
        kind = self.choice(value["kind"], f"{key}.kind", STATE_KEYS)
        self.mapping(value, key, {"kind"} | STATE_KEYS[kind], {"kind"} | STATE_KEYS[kind])
        if kind == "gaussian":
            return {
                "kind": kind,
                "center": self.numbers(value["center"], f"{key}.center"),
                "width": self.numbers(value["width"], f"{key}.width", positive=True),
                "momentum": self.numbers(value["momentum"], f"{key}.momentum"),
            }
        if kind == "harmonic":
            quanta = self.numbers(value["quanta"], f"{key}.quanta", length=dims, integer=True)
            if min(quanta) < 0:
                self.fail("quantum numbers must be non-negative", f"{key}.quanta")
            return {"kind": kind, "quanta": quanta, "omega": self.numbers(value["omega"], f"{key}.omega", positive=True)}
        comps = value["components"]
        if not isinstance(comps, list) or not comps:
            self.fail("expected a non-empty list of components", f"{key}.components")
        out = []
        for i, c in enumerate(comps):
            ck = f"{key}.components[{i}]"
            c = self.mapping(c, ck, {"coefficient", "state"}, {"coefficient", "state"})
            coeff = self.numbers(c["coefficient"], f"{ck}.coefficient")
            if len(coeff) == 1:
                coeff.append(0.0)
            if len(coeff) != 2:
                self.fail("coefficient is a real number or [re, im]", f"{ck}.coefficient")
            out.append({"coefficient": coeff, "state": self.state(c["state"], f"{ck}.state", dims)})
        return {"kind": kind, "components": out}

    def potential(self, value, key: str) -> dict:
        value = self.mapping(value, key, {"kind"} | set().union(*POTENTIAL_KEYS.values()))
        kind = self.choice(value.get("kind", "free"), f"{key}.kind", POTENTIAL_KEYS)
        self.mapping(value, key, {"kind"} | POTENTIAL_KEYS[kind], POTENTIAL_KEYS[kind])
        out = {"kind": kind}
        if kind == "harmonic":
            out["omega"] = self.numbers(value["omega"], f"{key}.omega", positive=True)
        elif kind == "barrier":
            out["height"] = self.number(value["height"], f"{key}.height")
            out["center"] = self.number(value["center"], f"{key}.center")
            out["width"] = self.number(value["width"], f"{key}.width", positive=True)
        elif kind == "tabulated":
            out["values"] = self.numbers(value["values"], f"{key}.values")
        return out

    def vec3_list(self, value, key: str) -> list:
        if not isinstance(value, list):
            self.fail("expected a list of 3-vectors", key)
        return [self.numbers(v, f"{key}[{i}]", length=3) for i, v in enumerate(value)]


def parse_config(text: str) -> ScenarioConfig:
    """Parse and validate scenario text; every problem raises :class:`ConfigError`."""
    p = _Parser(text)
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"malformed YAML: {getattr(exc, 'problem', exc)}", None, mark.line + 1 if mark else None)
    raw = p.mapping(raw, "", TOP_KEYS, {"grid", "state", "evolution"})

    g = p.mapping(raw["grid"], "grid", SECTION_KEYS["grid"], SECTION_KEYS["grid"])
    dims = p.number(g["dims"], "grid.dims", integer=True)
    n = p.number(g["n"], "grid.n", integer=True)
    extent = p.number(g["extent"], "grid.extent", positive=True)
    try:
        grid = Grid(dims, n, extent)
    except ValueError as exc:
        p.fail(str(exc), "grid")
    mass = p.number(raw.get("mass", 1.0), "mass", positive=True)
    potential = p.potential(raw.get("potential"), "potential")
    state = p.state(raw["state"], "state", dims)

    spin_raw = p.numbers(raw.get("spin", [0.0, 0.0, 1.0]), "spin", length=3)
    norm = float(np.linalg.norm(spin_raw))
    if abs(norm - 1.0) > SPIN_LOAD_TOL:
        p.fail(f"spin vector not unit norm (|s| = {norm:g})", "spin")
    spin = SpinVector.normalized(spin_raw)

    ev = p.mapping(raw["evolution"], "evolution", SECTION_KEYS["evolution"], {"T", "dt"})
    T = p.number(ev["T"], "evolution.T", positive=True)
    dt = p.number(ev["dt"], "evolution.dt", positive=True)
    stride = p.number(ev.get("frame_stride", 10), "evolution.frame_stride", positive=True, integer=True)
    nsteps = int(round(T / dt))
    if abs(nsteps * dt - T) > 1e-9 * T or nsteps % stride or nsteps // stride < 2:
        p.fail(f"T={T} must be a whole number (>= 2) of frames of {stride} steps of dt={dt}", "evolution")
    dt_field = dt * stride

    hy = p.mapping(raw.get("hydro"), "hydro", SECTION_KEYS["hydro"])
    backend = p.choice(hy.get("backend", "spectral"), "hydro.backend", BACKENDS)
    node_eps = p.number(hy.get("node_eps", NODE_EPS), "hydro.node_eps", positive=True)

    tr = p.mapping(raw.get("trajectories"), "trajectories", SECTION_KEYS["trajectories"])
    trajectories = {
        "enabled": p.boolean(tr.get("enabled", False), "trajectories.enabled"),
        "dt_traj": p.number(tr.get("dt_traj", dt_field), "trajectories.dt_traj", positive=True),
        "mode": p.choice(tr.get("mode", "total"), "trajectories.mode", MODES),
        "starts": p.vec3_list(tr.get("starts", []), "trajectories.starts"),
        "splits": [],
    }
    if trajectories["dt_traj"] > dt_field * (1 + 1e-12):
        p.fail("dt_traj must not exceed the frame spacing", "trajectories.dt_traj")
    splits = tr.get("splits", [])
    if not isinstance(splits, list):
        p.fail("expected a list", "trajectories.splits")
    for i, sp in enumerate(splits):
        key = f"trajectories.splits[{i}]"
        sp = p.mapping(sp, key, {"x0", "ext_a", "ext_b"}, {"x0", "ext_a", "ext_b"})
        trajectories["splits"].append({k: p.numbers(sp[k], f"{key}.{k}", length=3) for k in ("x0", "ext_a", "ext_b")})
    for i, x in enumerate(trajectories["starts"] + [s["x0"] for s in trajectories["splits"]]):
        if any(not (grid.lower <= c < grid.lower + grid.extent) for c in x[:dims]):
            p.fail(f"start {x} lies outside the grid", "trajectories")

    en = p.mapping(raw.get("ensemble"), "ensemble", SECTION_KEYS["ensemble"])
    ens_n = p.number(en.get("n", 10_000), "ensemble.n", positive=True, integer=True)
    bins = en.get("bins")
    modes = en.get("modes", ["drift", "total"])
    if not isinstance(modes, list) or not modes:
        p.fail("expected a non-empty list of modes", "ensemble.modes")
    ensemble = {
        "enabled": p.boolean(en.get("enabled", False), "ensemble.enabled"),
        "n": ens_n,
        "seed": p.number(en.get("seed", 0), "ensemble.seed", integer=True),
        "bins": None if bins is None else p.number(bins, "ensemble.bins", positive=True, integer=True),
        "modes": [p.choice(m, f"ensemble.modes[{i}]", MODES) for i, m in enumerate(modes)],
        "dt_traj": p.number(en.get("dt_traj", dt_field), "ensemble.dt_traj", positive=True),
        "dump": p.boolean(en.get("dump", False), "ensemble.dump"),
    }
    if ensemble["enabled"] and ens_n < 100:
        p.fail("ensembles need at least 100 trajectories", "ensemble.n")
    if not 0 <= ensemble["seed"] < 2**64:
        p.fail("seed must fit in 64 bits", "ensemble.seed")
    ratio = dt_field / ensemble["dt_traj"]
    if ensemble["dt_traj"] > dt_field * (1 + 1e-12) or abs(ratio - round(ratio)) > 1e-9 * ratio:
        p.fail("dt_traj must divide the frame spacing", "ensemble.dt_traj")

    diag_raw = p.mapping(raw.get("diagnostics"), "diagnostics", set(DIAGNOSTICS))
    diagnostics = {}
    for name, (tol, on, compare) in DIAGNOSTICS.items():
        entry = p.mapping(diag_raw.get(name), f"diagnostics.{name}", {"enabled", "tol"})
        diagnostics[name] = DiagnosticSpec(
            enabled=p.boolean(entry.get("enabled", on), f"diagnostics.{name}.enabled"),
            tol=p.number(entry.get("tol", tol), f"diagnostics.{name}.tol", positive=True),
            compare=compare,
        )

    out = p.mapping(raw.get("output"), "output", SECTION_KEYS["output"])
    name = raw.get("name", "scenario")
    if not isinstance(name, str) or not name:
        p.fail("name must be a non-empty string", "name")
    output = {
        "dir": str(out.get("dir", f"out/{name}")),
        "hydro_snapshots": p.number(out.get("hydro_snapshots", 3), "output.hydro_snapshots", positive=True, integer=True),
    }

    cfg = ScenarioConfig(
        name=name,
        description=str(raw.get("description", "")),
        grid=grid,
        mass=mass,
        potential=potential,
        state=state,
        spin=spin,
        T=T,
        dt=dt,
        frame_stride=stride,
        backend=backend,
        node_eps=node_eps,
        trajectories=trajectories,
        ensemble=ensemble,
        diagnostics=diagnostics,
        output=output,
    )
    _static_checks(cfg, p)
    return cfg


def _static_checks(cfg: ScenarioConfig, p: _Parser) -> None:
    """Guards of the downstream modules that can be decided before running anything."""
    try:
        pot = cfg.build_potential()
    except (ValueError, SpinHydroError) as exc:
        p.fail(str(exc), "potential")
    if cfg.dt * pot.max_abs() >= PHASE_GUARD:
        p.fail(f"dt*max|U| = {cfg.dt * pot.max_abs():.3g} violates the phase-wrap guard", "evolution.dt")
    try:
        init_state(cfg.build_state(), cfg.grid)
    except (ValueError, SpinHydroError) as exc:
        p.fail(str(exc), "state")
    for i, sp in enumerate(cfg.trajectories["splits"]):
        try:
            SplitSpec.from_external(sp["x0"], sp["ext_a"])
            SplitSpec.from_external(sp["x0"], sp["ext_b"])
        except ValueError as exc:
            p.fail(str(exc), f"trajectories.splits[{i}]")
    _check_applicable(cfg, p)


def _is_gaussian_list(state: dict) -> bool:
    if state["kind"] == "gaussian":
        return True
    return state["kind"] == "superposition" and all(c["state"]["kind"] == "gaussian" for c in state["components"])


def _check_applicable(cfg: ScenarioConfig, p: _Parser) -> None:
    on = {k for k, d in cfg.diagnostics.items() if d.enabled}
    pk, sk = cfg.potential["kind"], cfg.state["kind"]
    rules = {
        "free_packet_field": (pk == "free" and sk == "gaussian", "needs a free potential and a gaussian state"),
        "free_packet_velocity": (pk == "free" and sk == "gaussian", "needs a free potential and a gaussian state"),
        "harmonic_drift": (pk == "harmonic" and sk == "harmonic", "needs a harmonic potential and eigenstate"),
        "harmonic_osmotic": (
            pk == "harmonic" and sk == "harmonic" and not any(cfg.state["quanta"]),
            "needs the harmonic ground state",
        ),
        "harmonic_q0": (
            pk == "harmonic" and sk == "harmonic" and not any(cfg.state["quanta"]),
            "needs the harmonic ground state",
        ),
        "stationarity": (pk == "harmonic" and sk == "harmonic", "needs a harmonic eigenstate"),
        "eigen_phase": (pk == "harmonic" and sk == "harmonic", "needs a harmonic eigenstate"),
        "centroid": (pk in ("free", "harmonic"), "needs a free or harmonic potential"),
        "q_contrast": (
            pk == "free" and sk == "superposition" and _is_gaussian_list(cfg.state) and len(cfg.state["components"]) >= 2,
            "needs a free superposition of gaussian packets",
        ),
    }
    for name, (ok, why) in rules.items():
        if name in on and not ok:
            p.fail(f"diagnostic '{name}' {why}", f"diagnostics.{name}")
    if sk == "harmonic" and pk == "harmonic":
        om_state = np.resize(cfg.state["omega"], cfg.grid.dims)
        om_pot = np.resize(cfg.potential["omega"], cfg.grid.dims)
        if ("stationarity" in on or "eigen_phase" in on) and not np.allclose(om_state, om_pot):
            p.fail("eigenstate frequency differs from the trap frequency", "state.omega")


def bundled_names() -> list[str]:
    root = resources.files("spinhydro") / "scenarios"
    return sorted(f.name[:-5] for f in root.iterdir() if f.name.endswith(".yaml"))


def read_scenario_text(ref: str) -> tuple[str, str]:
    """Text of a scenario file path or bundled scenario name, plus where it came from."""
    path = Path(ref)
    if path.is_file():
        return path.read_text(), str(path)
    root = resources.files("spinhydro") / "scenarios" / f"{ref}.yaml"
    if root.is_file():
        return root.read_text(), f"bundled:{ref}"
    raise ConfigError(f"no scenario file or bundled scenario named '{ref}'")


def load_config(ref: str) -> ScenarioConfig:
    text, _ = read_scenario_text(ref)
    return parse_config(text)
