"""Hydrodynamic fields of a wavefunction and the identity checks between them.

Every ratio of a derivative to the wavefunction is formed from spectral (or
fd2) derivatives of psi itself, e.g. ``conj(psi) * grad(psi) / rho``.  The
drift and osmotic velocities grow linearly away from a packet and are not
periodic, so differentiating them directly on the grid would ring; their
gradients come from the quotient rule applied to the interpolant of psi.

Points where ``rho < node_eps * max(rho)`` form the nodal mask.  Velocities
there are copied from the nearest unmasked point and every residual
statistic ignores them.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage

from .errors import SpinError
from .grid import ComplexField, Grid, ScalarField, VectorField
from .operators import divergence, gradient_array, laplacian_array, partial, second_partial

NODE_EPS = 1e-12
SPIN_TOL = 1e-12


@dataclass(frozen=True)
class SpinVector:
    """Constant unit vector fixing the internal-motion axis; only its direction matters."""

    s: tuple

    def __post_init__(self):
        vec = np.asarray(self.s, dtype=float).ravel()
        if vec.size != 3 or not np.all(np.isfinite(vec)):
            raise SpinError(f"spin vector needs 3 finite components, got {self.s!r}")
        violation = abs(float(vec @ vec) - 1.0)
        if violation > SPIN_TOL:
            raise SpinError(f"spin vector not unit norm: |s|^2 - 1 = {violation:.6g}")
        object.__setattr__(self, "s", tuple(float(v) for v in vec))

    @classmethod
    def normalized(cls, vec: Sequence[float]) -> "SpinVector":
        arr = np.asarray(vec, dtype=float)
        n = np.linalg.norm(arr)
        if not n > 0:
            raise SpinError("spin vector has zero length")
        return cls(tuple(arr / n))

    @property
    def array(self) -> np.ndarray:
        return np.array(self.s)

    def flipped(self) -> "SpinVector":
        return SpinVector(tuple(-v for v in self.s))


Z_HAT = SpinVector((0.0, 0.0, 1.0))


def _as_spin(s) -> SpinVector:
    return s if isinstance(s, SpinVector) else SpinVector(tuple(s))


def nodal_mask(rho: np.ndarray, eps: float = NODE_EPS) -> np.ndarray:
    return rho < eps * rho.max()


def fill_nodal(values: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Copy each masked sample from its nearest unmasked neighbour (last axes match ``mask``)."""
    if not mask.any():
        return values
    idx = ndimage.distance_transform_edt(mask, return_distances=False, return_indices=True)
    out = np.array(values, copy=True)
    out[..., mask] = values[(Ellipsis,) + tuple(i[mask] for i in idx)]
    return out


def weighted_rms(values: np.ndarray, rho: np.ndarray, valid: np.ndarray | None = None) -> float:
    """sqrt(sum rho*r^2 / sum rho) over ``valid`` points; vector inputs use |r|^2."""
    sq = values**2 if values.ndim == rho.ndim else np.sum(values**2, axis=0)
    w = rho if valid is None else np.where(valid, rho, 0.0)
    sq = np.where(w > 0, sq, 0.0)
    return float(np.sqrt(np.sum(w * sq) / np.sum(w)))


class _PsiDerivatives:
    """conj(psi)*D(psi)/rho style ratios for one field, computed once and shared."""

    def __init__(self, psi: ComplexField, backend: str = "spectral", eps: float = NODE_EPS):
        grid = psi.grid
        values = psi.values
        self.grid = grid
        self.backend = backend
        self.rho = np.abs(values) ** 2
        self.mask = nodal_mask(self.rho, eps)
        self.valid = ~self.mask
        safe_rho = np.where(self.mask, 1.0, self.rho)
        conj = np.conj(values)
        self._psi = values
        self._conj = conj
        self._safe_rho = safe_rho
        self.first = [partial(values, grid, a, backend) for a in range(grid.dims)]
        # g_a = d_a psi / psi
        # flux_a = conj(psi) d_a psi, defined everywhere without division
        self.flux = np.zeros((3,) + grid.shape, dtype=complex)
        for a in range(grid.dims):
            self.flux[a] = conj * self.first[a]
        self.g = self.flux / safe_rho
        self.g = fill_nodal(self.g, self.mask)
        self._second = {}

    def second(self, a: int, b: int) -> np.ndarray:
        """d_a d_b psi / psi, nodal-filled."""
        key = (min(a, b), max(a, b))
        if key not in self._second:
            if a == b:
                d2 = second_partial(self._psi, self.grid, a, self.backend)
            else:
                d2 = partial(self.first[key[0]], self.grid, key[1], self.backend)
            self._second[key] = fill_nodal(self._conj * d2 / self._safe_rho, self.mask)
        return self._second[key]

    def laplacian_ratio(self) -> np.ndarray:
        return sum(self.second(a, a) for a in range(self.grid.dims))

    def log_hessian(self) -> np.ndarray:
        """(dims, dims, *shape) complex Hessian of log(psi)."""
        d = self.grid.dims
        out = np.empty((d, d) + self.grid.shape, dtype=complex)
        for a in range(d):
            for b in range(d):
                out[a, b] = self.second(a, b) - self.g[a] * self.g[b]
        return out


def density(psi: ComplexField) -> ScalarField:
    return ScalarField(psi.grid, np.abs(psi.values) ** 2)


def drift_velocity(psi: ComplexField, m: float, backend: str = "spectral", eps: float = NODE_EPS) -> VectorField:
    """Im(psi* grad psi) / (m rho): the single-valued grad(S)/m without unwrapping S."""
    return VectorField(psi.grid, _PsiDerivatives(psi, backend, eps).g.imag / m)


def osmotic_velocity(psi: ComplexField, m: float, backend: str = "spectral", eps: float = NODE_EPS) -> VectorField:
    """Re(psi* grad psi) / (m rho) = grad(rho) / (2 m rho)."""
    return VectorField(psi.grid, _PsiDerivatives(psi, backend, eps).g.real / m)


def quantum_potential_amplitude(
    psi: ComplexField,
    m: float,
    backend: str = "spectral",
    eps: float = NODE_EPS,
    method: str = "polar",
) -> ScalarField:
    """Q = -(1/2m) lap(R)/R.

    ``method="polar"`` evaluates lap(R)/R = Re(lap(psi)/psi) + |Im(grad(psi)/psi)|^2,
    which never forms R.  ``method="sqrt"`` differentiates R = sqrt(rho)
    directly; it is exact for node-free fields but amplifies transform
    roundoff by 1/R in the tails.
    """
    if method == "sqrt":
        rho = np.abs(psi.values) ** 2
        mask = nodal_mask(rho, eps)
        r = np.sqrt(rho)
        ratio = laplacian_array(r, psi.grid, backend) / np.where(mask, 1.0, r)
        return ScalarField(psi.grid, fill_nodal(-ratio / (2.0 * m), mask))
    if method != "polar":
        raise ValueError(f"unknown method {method!r}")
    d = _PsiDerivatives(psi, backend, eps)
    return ScalarField(psi.grid, _q_polar(d, m))


def _q_polar(d: _PsiDerivatives, m: float) -> np.ndarray:
    return -(d.laplacian_ratio().real + np.sum(d.g.imag**2, axis=0)) / (2.0 * m)


def _osmotic_divergence(d: _PsiDerivatives, m: float) -> np.ndarray:
    return sum((d.second(a, a) - d.g[a] ** 2).real for a in range(d.grid.dims)) / m


def osmotic_divergence(psi: ComplexField, m: float, backend: str = "spectral", eps: float = NODE_EPS) -> ScalarField:
    """div(v_S) by the quotient rule on psi: (1/m) sum_a Re(d_a^2 psi/psi - (d_a psi/psi)^2)."""
    return ScalarField(psi.grid, _osmotic_divergence(_PsiDerivatives(psi, backend, eps), m))


def quantum_potential_kinetic(
    v_s: VectorField,
    m: float,
    div_v_s: ScalarField | None = None,
    backend: str = "spectral",
) -> ScalarField:
    """Q = -(m/2)|v_S|^2 - (1/2) div(v_S).

    Without ``div_v_s`` the divergence is taken of ``v_s`` on the grid,
    which only suits periodic band-limited velocity fields.
    """
    div = div_v_s.values if div_v_s is not None else divergence(v_s, backend).values
    return ScalarField(v_s.grid, -0.5 * m * np.sum(v_s.values**2, axis=0) - 0.5 * div)


def velocity_gradients(
    psi: ComplexField, m: float, backend: str = "spectral", eps: float = NODE_EPS
) -> tuple[np.ndarray, np.ndarray]:
    """(dims, dims, *shape) tensors d_b v_a for the drift and osmotic velocities."""
    hess = _PsiDerivatives(psi, backend, eps).log_hessian()
    return hess.imag / m, hess.real / m


def irrotationality(psi: ComplexField, m: float, backend: str = "spectral", eps: float = NODE_EPS) -> tuple[float, float]:
    """Max off-nodal |curl| of the drift and osmotic velocities (zero in 1D by construction)."""
    if psi.grid.dims == 1:
        return 0.0, 0.0
    grad_b, grad_s = velocity_gradients(psi, m, backend, eps)
    valid = ~nodal_mask(np.abs(psi.values) ** 2, eps)
    curl_b = grad_b[1, 0] - grad_b[0, 1]
    curl_s = grad_s[1, 0] - grad_s[0, 1]
    return float(np.abs(curl_b[valid]).max()), float(np.abs(curl_s[valid]).max())


def current(rho: ScalarField, v_b: VectorField, v_s: VectorField, s) -> tuple[VectorField, VectorField]:
    """J = rho (v_B + v_S x s) and the total velocity v = v_B + v_S x s."""
    spin = _as_spin(s).array
    perp = np.cross(v_s.values, spin, axisa=0, axisc=0)
    v_total = v_b.values + perp
    return VectorField(rho.grid, rho.values * v_total), VectorField(rho.grid, v_total)


@dataclass(frozen=True)
class ConstraintReport:
    unit_norm: float
    osmotic_spin: float
    drift_internal: float
    kinetic_identity: float
    expansion: float

    def as_dict(self) -> dict:
        return {
            "unit_norm": self.unit_norm,
            "osmotic_spin": self.osmotic_spin,
            "drift_internal": self.drift_internal,
            "kinetic_identity": self.kinetic_identity,
            "expansion": self.expansion,
        }


def spin_constraint_residuals(
    v_b: VectorField, v_s: VectorField, s, rho: ScalarField, mask: np.ndarray | None = None
) -> ConstraintReport:
    """Residuals of |s|=1, v_S.s=0, v_B.(v_S x s)=0 and of the kinetic split.

    The two orthogonality residuals are rho-weighted RMS values normalized by
    rho-weighted RMS |v_S| and RMS(|v_B||v_S|) respectively (left raw when
    the normalizer vanishes).  ``kinetic_identity`` is the rho-weighted RMS
    of |v|^2 - v_B^2 - v_S^2; ``expansion`` is the RMS gap between |v|^2
    and its expansion v_B^2 + v_S^2 s^2 - (v_S.s)^2 + 2 v_B.(v_S x s).
    """
    spin = np.asarray(s.s if isinstance(s, SpinVector) else s, dtype=float)
    r = rho.values
    valid = None if mask is None else ~mask
    vb, vs = v_b.values, v_s.values
    perp = np.cross(vs, spin, axisa=0, axisc=0)
    vs_dot_s = np.tensordot(spin, vs, axes=1)
    vb_dot_perp = np.sum(vb * perp, axis=0)
    vb2 = np.sum(vb**2, axis=0)
    vs2 = np.sum(vs**2, axis=0)

    def normalized(num: np.ndarray, den: np.ndarray) -> float:
        top = weighted_rms(num, r, valid)
        bottom = weighted_rms(den, r, valid)
        return top / bottom if bottom > 0 else top

    v = vb + perp
    v2 = np.sum(v**2, axis=0)
    expanded = vb2 + vs2 * float(spin @ spin) - vs_dot_s**2 + 2.0 * vb_dot_perp
    return ConstraintReport(
        unit_norm=abs(float(spin @ spin) - 1.0),
        osmotic_spin=normalized(vs_dot_s, np.sqrt(vs2)),
        drift_internal=normalized(vb_dot_perp, np.sqrt(vb2 * vs2)),
        kinetic_identity=weighted_rms(v2 - vb2 - vs2, r, valid),
        expansion=weighted_rms(v2 - expanded, r, valid),
    )


@dataclass(frozen=True)
class IdentityReport:
    scalar_product: float
    vector_product: float


def cross_identities(
    psi: ComplexField,
    v_b: VectorField,
    v_s: VectorField,
    m: float,
    backend: str = "spectral",
    eps: float = NODE_EPS,
) -> IdentityReport:
    """Max off-nodal gaps in the wavefunction forms of v_B.v_S and v_B x v_S.

    v_B.v_S = Im{(grad psi/psi)^2} / 2m^2 and
    v_B x v_S = i (grad psi* x grad psi) / (2 m^2 psi* psi).
    """
    grid = psi.grid
    rho = np.abs(psi.values) ** 2
    mask = nodal_mask(rho, eps)
    valid = ~mask
    safe = np.where(mask, 1.0, psi.values)
    grad = gradient_array(psi.values, grid, backend)
    ratio = grad / safe
    rhs_dot = np.sum(ratio**2, axis=0).imag / (2.0 * m**2)
    lhs_dot = np.sum(v_b.values * v_s.values, axis=0)
    cross_psi = np.cross(np.conj(grad), grad, axisa=0, axisb=0, axisc=0)
    rhs_cross = 1j * cross_psi / (2.0 * m**2 * np.where(mask, 1.0, rho))
    lhs_cross = np.cross(v_b.values, v_s.values, axisa=0, axisb=0, axisc=0)
    gap_cross = np.sqrt(np.sum(np.abs(lhs_cross - rhs_cross) ** 2, axis=0))
    return IdentityReport(
        scalar_product=float(np.abs(lhs_dot - rhs_dot)[valid].max()),
        vector_product=float(gap_cross[valid].max()),
    )


@dataclass(frozen=True)
class HydroFields:
    grid: Grid
    mass: float
    spin: SpinVector
    rho: ScalarField
    v_B: VectorField
    v_S: VectorField
    Q_amp: ScalarField
    Q_kin: ScalarField
    J: VectorField
    v_total: VectorField
    nodal_mask: np.ndarray = field(repr=False)
    J_B: VectorField = field(repr=False)
    div_v_S: ScalarField = field(repr=False)
    lap_rho_over_rho: ScalarField = field(repr=False)

    @property
    def valid(self) -> np.ndarray:
        return ~self.nodal_mask

    def dual_q_gap(self) -> float:
        return float(np.abs(self.Q_amp.values - self.Q_kin.values)[self.valid].max())

    def constraints(self, mask: bool = True) -> ConstraintReport:
        return spin_constraint_residuals(
            self.v_B, self.v_S, self.spin, self.rho, self.nodal_mask if mask else None
        )


def extract(
    psi: ComplexField,
    m: float,
    s=Z_HAT,
    backend: str = "spectral",
    eps: float = NODE_EPS,
) -> HydroFields:
    """All hydrodynamic fields of one frame."""
    spin = _as_spin(s)
    grid = psi.grid
    d = _PsiDerivatives(psi, backend, eps)
    rho = ScalarField(grid, d.rho)
    v_b = VectorField(grid, d.g.imag / m)
    v_s = VectorField(grid, d.g.real / m)
    div_vs = ScalarField(grid, _osmotic_divergence(d, m))
    q_amp = ScalarField(grid, _q_polar(d, m))
    q_kin = quantum_potential_kinetic(v_s, m, div_vs)
    _, v_total = current(rho, v_b, v_s, spin)
    # rho v_B = Im(conj(psi) grad psi)/m and rho v_S = Re(conj(psi) grad psi)/m hold
    # exactly, so the currents are built from the flux and need no nodal fill
    j_b = d.flux.imag / m
    j = j_b + np.cross(d.flux.real / m, spin.array, axisa=0, axisc=0)
    # lap(rho)/rho = 2 Re(lap(psi)/psi) + 2 |grad(psi)/psi|^2
    lap_rho = 2.0 * d.laplacian_ratio().real + 2.0 * np.sum(np.abs(d.g) ** 2, axis=0)
    mask = d.mask.copy()
    mask.setflags(write=False)
    return HydroFields(
        grid=grid,
        mass=m,
        spin=spin,
        rho=rho,
        v_B=v_b,
        v_S=v_s,
        Q_amp=q_amp,
        Q_kin=q_kin,
        J=VectorField(grid, j),
        v_total=v_total,
        nodal_mask=mask,
        J_B=VectorField(grid, j_b),
        div_v_S=div_vs,
        lap_rho_over_rho=ScalarField(grid, lap_rho),
    )


def extract_frames(frames, s=Z_HAT, backend: str = "spectral", eps: float = NODE_EPS, workers: int = 1) -> list[HydroFields]:
    """Per-frame extraction; output order and values do not depend on ``workers``."""
    spin = _as_spin(s)

    def one(i: int) -> HydroFields:
        return extract(frames[i], frames.mass, spin, backend, eps)

    if workers <= 1:
        return [one(i) for i in range(len(frames))]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, range(len(frames))))
