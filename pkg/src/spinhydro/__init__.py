"""Spin-augmented quantum hydrodynamics on periodic grids.

Split-step propagation of the Schrodinger equation, extraction of the drift
and osmotic velocity fields and both forms of the quantum potential, causal
trajectories under v_B + v_S x s, and ensemble equivariance checks.
"""

__version__ = "0.1.0"
