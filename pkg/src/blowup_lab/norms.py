"""Discrete norms on H, the higher energy norm and the averaging operator K."""

from __future__ import annotations

from functools import lru_cache

import numpy as np
import scipy.linalg as sla

from .core import RadialDataPair
from .grid import Grid, StateVector, make_grid


def _h1_sq(u: np.ndarray, grid: Grid) -> float:
    du = grid.derivative(u)
    return float(np.real(grid.integrate(np.abs(u) ** 2 + np.abs(du) ** 2)))


def h_norm(u: StateVector) -> float:
    """``sqrt(||u1||_{H^1}^2 + ||u2||_{H^1}^2)`` by Clenshaw-Curtis quadrature."""
    return float(np.sqrt(_h1_sq(u.u1, u.grid) + _h1_sq(u.u2, u.grid)))


def triple_norm_1(u: StateVector) -> float:
    """``sqrt(|u1(1)+u2(1)|^2 + ||u1'||^2 + ||u2'||^2)``; equivalent to :func:`h_norm` on H."""
    grid = u.grid
    d1 = grid.derivative(u.u1)
    d2 = grid.derivative(u.u2)
    bdry = abs(u.u1[-1] + u.u2[-1]) ** 2
    return float(np.sqrt(bdry + np.real(grid.integrate(np.abs(d1) ** 2 + np.abs(d2) ** 2))))


def inner_1(u: StateVector, v: StateVector) -> complex:
    """Sesquilinear form ``(u, v)_1`` (conjugate-linear in ``v``)."""
    grid = u.grid
    bdry = (u.u1[-1] + u.u2[-1]) * np.conj(v.u1[-1] + v.u2[-1])
    du1, du2 = grid.derivative(u.u1), grid.derivative(u.u2)
    dv1, dv2 = grid.derivative(v.u1), grid.derivative(v.u2)
    return complex(bdry + grid.integrate(du1 * np.conj(dv1) + du2 * np.conj(dv2)))


@lru_cache(maxsize=16)
def h_gram(grid: Grid) -> np.ndarray:
    """Gram matrix ``W`` of the H norm on stacked values: ``||u||^2 = x^T W x``."""
    Wq = np.diag(grid.w)
    block = Wq + grid.D.T @ Wq @ grid.D
    W = sla.block_diag(block, block)
    W = 0.5 * (W + W.T)
    W.setflags(write=False)
    return W


def k_op(u, grid: Grid) -> np.ndarray:
    """Averaging operator ``Ku(rho) = rho^{-1} int_0^rho u``; ``Ku(0) = u(0)``."""
    return grid.average(u)


def higher_energy_norm(pair: RadialDataPair, R: float) -> float:
    """Local higher energy norm of ``(f, g)`` on ``[0, R]``.

    Square root of
    ``int |r f' + f|^2 + int |r f'' + 2 f'|^2 + int r^2 g^2 + int |r g' + g|^2``.
    The profiles are re-sampled on a Chebyshev grid over ``[0, R]`` of the same
    size as the data grid, so ``R`` may be any radius inside the data domain.
    """
    src = pair.grid
    if not R > 0:
        raise ValueError("radius must be positive")
    if R > src.b * (1.0 + 1e-12):
        raise ValueError(f"radius {R} exceeds the data domain [0, {src.b}]")
    if abs(R - src.b) <= 1e-12 * src.b and src.a == 0.0:
        grid, f, g = src, pair.f, pair.g
    else:
        grid = make_grid(src.n, 0.0, R)
        f = src.interpolate(pair.f, grid.nodes)
        g = src.interpolate(pair.g, grid.nodes)
    r = grid.nodes
    df = grid.derivative(f)
    ddf = grid.derivative(df)
    dg = grid.derivative(g)
    total = (
        np.abs(r * df + f) ** 2
        + np.abs(r * ddf + 2.0 * df) ** 2
        + r**2 * np.abs(g) ** 2
        + np.abs(r * dg + g) ** 2
    )
    return float(np.sqrt(max(float(np.real(grid.integrate(total))), 0.0)))


def frak_h_norm(v: RadialDataPair) -> float:
    """``H^1(0, 3/2)`` product norm of relative data ``v = (v1, v2)``."""
    return float(np.sqrt(_h1_sq(v.f, v.grid) + _h1_sq(v.g, v.grid)))


def similarity_eh_norm(phi: StateVector, s: float, p: float) -> float:
    """Higher energy norm of the perturbation encoded by ``phi`` at ``T - t = s``.

    Uses the change of variables ``r = s rho``:
    ``s^{(p-5)/(p-1)} int (phi1^2 + phi2^2) + s^{-(p+3)/(p-1)} int (phi1'^2 + phi2'^2)``.
    """
    grid = phi.grid
    l2 = grid.integrate(np.abs(phi.u1) ** 2 + np.abs(phi.u2) ** 2)
    d1, d2 = grid.derivative(phi.u1), grid.derivative(phi.u2)
    h1 = grid.integrate(np.abs(d1) ** 2 + np.abs(d2) ** 2)
    val = s ** ((p - 5.0) / (p - 1.0)) * l2 + s ** (-(p + 3.0) / (p - 1.0)) * h1
    return float(np.sqrt(np.real(val)))
