"""Reference values computed without touching the package's own closed forms.

The free packet is propagated by direct quadrature of its momentum-space
representation, so it shares no code path with the split-step solver or
with ``spinhydro.states.free_gaussian``.
"""
from __future__ import annotations

import numpy as np


def _momentum_grid(width: float, momentum: float, span: float = 12.0, dp: float = 2 * np.pi / 400):
    half = span / width
    npts = int(np.ceil(2 * half / dp)) + 1
    p = np.linspace(momentum - half, momentum + half, npts)
    w = np.full(npts, p[1] - p[0])
    w[[0, -1]] *= 0.5
    return p, w


def free_packet_1d(x, t, center, width, momentum, mass=1.0, derivative=False):
    """psi(x, t) of the packet exp(-(x-c)^2/(4 w^2) + i k (x-c)) by trapezoid quadrature over p.

    phi(p) = (2 w^2/pi)^(1/4) exp(-w^2 (p-k)^2) exp(-i p c), and
    psi(x, t) = (2 pi)^(-1/2) int phi(p) exp(i p x - i p^2 t / 2m) dp.
    With ``derivative`` also returns d psi/dx from the same quadrature.
    """
    x = np.asarray(x, dtype=float)
    p, w = _momentum_grid(width, momentum)
    phi = (2 * width**2 / np.pi) ** 0.25 * np.exp(-(width**2) * (p - momentum) ** 2 - 1j * p * center)
    weights = w * phi * np.exp(-1j * p**2 * t / (2 * mass)) / np.sqrt(2 * np.pi)
    kernel = np.exp(1j * np.outer(x.ravel(), p))
    psi = (kernel @ weights).reshape(x.shape)
    if not derivative:
        return psi
    dpsi = (kernel @ (1j * p * weights)).reshape(x.shape)
    return psi, dpsi


def free_packet(coords, t, center, width, momentum, mass=1.0):
    """Product packet over the axes in ``coords`` (sequence of broadcastable arrays)."""
    out = 1.0
    for c, x in enumerate(coords):
        out = out * free_packet_1d(x, t, center[c], width[c], momentum[c], mass)
    return out


def free_packet_velocities_1d(x, t, center, width, momentum, mass=1.0):
    """v_B = Im(psi* psi')/(m rho) and v_S = Re(psi* psi')/(m rho) from the quadrature packet."""
    psi, dpsi = free_packet_1d(x, t, center, width, momentum, mass, derivative=True)
    flux = np.conj(psi) * dpsi
    rho = np.abs(psi) ** 2
    return flux.imag / (mass * rho), flux.real / (mass * rho)


def harmonic_ground(x, mass=1.0, omega=1.0):
    a = mass * omega
    return (a / np.pi) ** 0.25 * np.exp(-0.5 * a * x**2)


def harmonic_first(x, mass=1.0, omega=1.0):
    a = mass * omega
    return (a / np.pi) ** 0.25 * np.sqrt(2 * a) * x * np.exp(-0.5 * a * x**2)


def harmonic_osmotic(x, mass=1.0, omega=1.0):
    """grad(rho)/(2 m rho) for rho ~ exp(-m omega x^2)."""
    return -omega * x


def harmonic_q(x, mass=1.0, omega=1.0):
    """-(1/2m) R''/R for R = exp(-m omega x^2 / 2)."""
    return 0.5 * omega - 0.5 * mass * omega**2 * x**2


def gaussian_laplacian_2d(x, y, sigma):
    """Symbolic Laplacian of exp(-(x^2+y^2)/(2 sigma^2))."""
    r2 = x**2 + y**2
    return (r2 / sigma**4 - 2 / sigma**2) * np.exp(-r2 / (2 * sigma**2))


def band_limited_field(grid, rng, modes=4, amplitude=0.3):
    """Smooth periodic complex field exp(sum of low Fourier modes); nowhere zero."""
    log_psi = np.zeros(grid.shape, dtype=complex)
    for _ in range(modes):
        k = rng.integers(-3, 4, size=grid.dims)
        coef = amplitude * (rng.normal() + 1j * rng.normal())
        arg = sum(2 * np.pi * kk * x / grid.extent for kk, x in zip(k, grid.coords()))
        log_psi = log_psi + coef * np.exp(1j * arg)
    return np.exp(log_psi)
