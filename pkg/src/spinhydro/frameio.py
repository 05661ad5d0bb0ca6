"""Binary frame container plus JSON sidecar.

Layout of ``<name>.bin`` (all little-endian)::

    8s   magic  b"SPHFRM01"
    u4   dims
    u4   n            points per axis
    f8   extent       length per axis
    f8   mass
    f8   dt_field
    u8   frame count
    then frame_count * n**dims complex samples, each as (re f8, im f8),
    frames in time order, samples in C order of the (n,)*dims array.

The sidecar ``<name>.json`` holds the potential description and any
scenario metadata the caller passes in.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .grid import Grid
from .propagator import FrameSequence, Potential

MAGIC = b"SPHFRM01"
HEADER = struct.Struct("<8sIIdddQ")


def write_frames(seq: FrameSequence, path: str | Path, metadata: dict | None = None) -> tuple[Path, Path]:
    path = Path(path)
    header = HEADER.pack(MAGIC, seq.grid.dims, seq.grid.n, seq.grid.extent, seq.mass, seq.dt_field, len(seq))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(seq.frames, dtype="<c16").tobytes())
    sidecar = path.with_suffix(".json")
    doc = {
        "format": "SPHFRM01",
        "grid": seq.grid.to_dict(),
        "mass": seq.mass,
        "dt_field": seq.dt_field,
        "frame_count": len(seq),
        "t0": float(seq.times[0]),
        "potential": seq.potential.to_dict(),
        "metadata": metadata or {},
    }
    sidecar.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path, sidecar


def _potential_from_dict(grid: Grid, spec: dict, mass: float) -> Potential:
    kind = spec["kind"]
    if kind == "free":
        return Potential.free(grid)
    if kind == "harmonic":
        return Potential.harmonic(grid, spec["omega"], mass)
    if kind == "barrier":
        return Potential.barrier(grid, spec["height"], spec["center"], spec["width"])
    if kind == "tabulated":
        return Potential.tabulated(grid, spec["values"])
    raise ValueError(f"unknown potential kind {kind!r} in sidecar")


def read_frames(path: str | Path) -> tuple[FrameSequence, dict]:
    path = Path(path)
    raw = path.read_bytes()
    magic, dims, n, extent, mass, dt_field, count = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"{path} is not a frame container")
    grid = Grid(dims, n, extent)
    data = np.frombuffer(raw, dtype="<c16", offset=HEADER.size)
    if data.size != count * grid.size:
        raise ValueError(f"{path}: expected {count * grid.size} samples, found {data.size}")
    frames = data.reshape((count,) + grid.shape).astype(complex)
    side = json.loads(path.with_suffix(".json").read_text())
    pot = _potential_from_dict(grid, side["potential"], mass)
    times = side.get("t0", 0.0) + dt_field * np.arange(count)
    return FrameSequence(grid, times, frames, mass, pot, dt_field), side.get("metadata", {})
