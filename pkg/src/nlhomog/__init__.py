"""Finite-element toolkit for nonlinear divergence-form elliptic equations:
higher-order linearization hierarchies, periodic cell correctors, and the
Taylor expansion of the effective (homogenized) Lagrangian."""

__version__ = "0.1.0"
