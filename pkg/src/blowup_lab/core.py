"""Physical parameters, the ODE blow-up family, similarity coordinates and data maps."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import Grid, StateVector, make_grid

#: admissible blow-up times (open interval)
T_INTERVAL = (0.5, 1.5)
#: radial extent of the free data
DATA_RADIUS = 1.5


@dataclass(frozen=True)
class PhysParams:
    """Exponent ``p`` with the derived constants.

    ``kappa_p = 2(p+1)/(p-1)^2`` and ``mu_p = 2/(p-1) - eps``.
    """

    p: float
    eps: float
    kappa_p: float
    mu_p: float

    @property
    def amp(self) -> float:
        """Amplitude ``kappa_p^{1/(p-1)}`` of the ODE blow-up solution."""
        return self.kappa_p ** (1.0 / (self.p - 1.0))

    @property
    def free_rate(self) -> float:
        """Decay rate ``2/(p-1)`` of the free similarity flow."""
        return 2.0 / (self.p - 1.0)


def derive_params(p: float, eps: float = 0.1) -> PhysParams:
    p = float(p)
    eps = float(eps)
    if not p > 3.0:
        raise ValueError(f"exponent must satisfy p > 3, got p={p}")
    rate = 2.0 / (p - 1.0)
    if not 0.0 < eps < rate:
        raise ValueError(f"eps must lie in (0, {rate:.6g}) for p={p}, got {eps}")
    return PhysParams(p=p, eps=eps, kappa_p=2.0 * (p + 1.0) / (p - 1.0) ** 2, mu_p=rate - eps)


def psi_T(t, r, T: float, params: PhysParams):
    """ODE blow-up solution ``kappa^{1/(p-1)} (T-t)^{-2/(p-1)}`` (independent of r)."""
    t = np.asarray(t, dtype=float)
    if np.any(t >= T):
        raise ValueError("psi_T is only defined before the blow-up time")
    val = params.amp * (T - t) ** (-params.free_rate)
    return val * np.ones_like(np.asarray(r, dtype=float)) if np.ndim(r) else val


def psi_T_t(t, r, T: float, params: PhysParams):
    """Time derivative of :func:`psi_T`."""
    t = np.asarray(t, dtype=float)
    if np.any(t >= T):
        raise ValueError("psi_T is only defined before the blow-up time")
    val = params.free_rate * params.amp * (T - t) ** (-params.free_rate - 1.0)
    return val * np.ones_like(np.asarray(r, dtype=float)) if np.ndim(r) else val


def _check_T(T: float):
    lo, hi = T_INTERVAL
    if not lo < T < hi:
        raise ValueError(f"blow-up time must lie in ({lo}, {hi}), got {T}")


@dataclass(frozen=True)
class SimilarityPoint:
    tau: float
    rho: float
    T: float

    def __post_init__(self):
        _check_T(self.T)
        if not -1e-12 <= self.rho <= 1.0 + 1e-12:
            raise ValueError(f"rho={self.rho} outside [0, 1]")


def to_similarity(t: float, r: float, T: float) -> SimilarityPoint:
    if t >= T:
        raise ValueError("point lies at or after the blow-up time")
    s = T - t
    if r < 0 or r > s * (1.0 + 1e-14):
        raise ValueError("point lies outside the backward lightcone")
    return SimilarityPoint(tau=-math.log(s), rho=min(r / s, 1.0), T=T)


def from_similarity(pt: SimilarityPoint) -> tuple[float, float]:
    s = math.exp(-pt.tau)
    return pt.T - s, pt.rho * s


@dataclass(frozen=True, eq=False)
class RadialDataPair:
    """Two radial profiles sampled on a data grid over ``[0, 3/2]``.

    Used both for free data ``(f, g)`` and for relative data
    ``v = (v1, v2)``; in the latter case ``f`` holds ``v1`` and ``g`` holds ``v2``.
    """

    f: np.ndarray
    g: np.ndarray
    grid: Grid

    @classmethod
    def from_functions(cls, f, g, n: int = 96, radius: float = DATA_RADIUS) -> "RadialDataPair":
        grid = make_grid(n, 0.0, radius)
        ones = np.ones(n)
        return cls(grid.sample(f) * ones, grid.sample(g) * ones, grid)

    @classmethod
    def zeros(cls, n: int = 96, radius: float = DATA_RADIUS) -> "RadialDataPair":
        grid = make_grid(n, 0.0, radius)
        return cls(np.zeros(n), np.zeros(n), grid)

    @property
    def v1(self) -> np.ndarray:
        return self.f

    @property
    def v2(self) -> np.ndarray:
        return self.g

    def in_frak_h(self, tol: float = 1e-10) -> bool:
        scale = max(1.0, float(np.max(np.abs(self.f))))
        return abs(self.f[0]) <= tol * scale

    def __add__(self, other: "RadialDataPair") -> "RadialDataPair":
        return RadialDataPair(self.f + other.f, self.g + other.g, self.grid)

    def __mul__(self, alpha) -> "RadialDataPair":
        return RadialDataPair(alpha * self.f, alpha * self.g, self.grid)

    __rmul__ = __mul__


def ode_blowup_data(T_prime: float, params: PhysParams, n: int = 96) -> RadialDataPair:
    """Free data ``(psi^{T'}(0, .), psi^{T'}_t(0, .))`` of the ODE blow-up family."""
    f0 = float(psi_T(0.0, 0.0, T_prime, params))
    g0 = float(psi_T_t(0.0, 0.0, T_prime, params))
    return RadialDataPair.from_functions(lambda r: f0, lambda r: g0, n=n)


def relative_data(free: RadialDataPair, params: PhysParams) -> RadialDataPair:
    """Relative data ``v`` of free data ``(f, g)`` with respect to ``psi^1``.

    ``v1 = r g - 2r/(p-1) amp`` and ``v2 = f + r f' - amp``.
    """
    r = free.grid.nodes
    amp = params.amp
    v1 = r * free.g - params.free_rate * r * amp
    v2 = free.f + r * free.grid.derivative(free.f) - amp
    return RadialDataPair(v1, v2, free.grid)


def kappa_profile(rho, params: PhysParams) -> tuple[np.ndarray, np.ndarray]:
    rho = np.asarray(rho, dtype=float)
    return params.amp * params.free_rate * rho, params.amp * np.ones_like(rho)


def initial_data_U(v: RadialDataPair, T: float, params: PhysParams, grid: Grid) -> StateVector:
    """Similarity-coordinate data ``T^{2/(p-1)} [v(T rho) + kappa(T rho)] - kappa(rho)``."""
    _check_T(T)
    if not v.in_frak_h():
        raise ValueError("relative data must satisfy v1(0) = 0")
    if v.grid.b < T * grid.b - 1e-12:
        raise ValueError("relative data do not cover [0, T]")
    rho = grid.nodes
    scale = T**params.free_rate
    k1, k2 = kappa_profile(rho, params)
    k1T, k2T = kappa_profile(T * rho, params)
    v1 = v.grid.interpolate(v.f, T * rho)
    v2 = v.grid.interpolate(v.g, T * rho)
    u1 = scale * (v1 + k1T) - k1
    u2 = scale * (v2 + k2T) - k2
    u1[0] = 0.0
    return StateVector(u1, u2, grid)


def gauge_mode(params: PhysParams, grid: Grid) -> StateVector:
    """Symmetry mode ``g = ((p+1)/(p-1) rho, 1)`` generated by shifting T."""
    rho = grid.nodes
    return StateVector((params.p + 1.0) / (params.p - 1.0) * rho, np.ones_like(rho), grid)


def ode_family_state(tau: float, T: float, T_prime: float, params: PhysParams, grid: Grid) -> StateVector:
    """Exact similarity representation of ``psi^{T'}`` relative to ``psi^T``.

    ``tau`` is the physical similarity time ``-log(T - t)``.
    """
    s = 1.0 + (T_prime - T) * math.exp(tau)
    if s <= 0:
        raise ValueError("psi^{T'} has already blown up at this tau")
    rho = grid.nodes
    a = params.amp
    u1 = a * params.free_rate * rho * (s ** (-(params.p + 1.0) / (params.p - 1.0)) - 1.0)
    u2 = a * (s ** (-params.free_rate) - 1.0) * np.ones_like(rho)
    return StateVector(u1, u2, grid)


def reconstruct_perturbation(phi: StateVector, tau: float, T: float, params: PhysParams):
    """``(t, r, psi - psi^T, psi_t - psi^T_t)`` at ``t = T - e^{-tau}`` on ``r = (T-t) rho``.

    Computed without forming ``psi^T``, so derivatives of the result are not
    polluted by cancellation against the large background.
    """
    if tau < -math.log(T) - 1e-14:
        raise ValueError("tau precedes the initial time -log T")
    grid = phi.grid
    s = math.exp(-tau)
    rho = grid.nodes
    dpsi = s ** (-params.free_rate) * grid.average(phi.u2)
    quot = np.empty_like(phi.u1)
    quot[1:] = phi.u1[1:] / rho[1:]
    # removable singularity: phi1 vanishes at 0
    quot[0] = grid.derivative(phi.u1)[0]
    dpsi_t = s ** (-params.free_rate - 1.0) * quot
    return T - s, s * rho, dpsi, dpsi_t


def reconstruct_field(phi: StateVector, tau: float, T: float, params: PhysParams):
    """Recover ``(t, r, psi, psi_t)`` at ``t = T - e^{-tau}`` on the radii ``r = (T-t) rho``."""
    t, r, dpsi, dpsi_t = reconstruct_perturbation(phi, tau, T, params)
    s = math.exp(-tau)
    base = params.amp * s ** (-params.free_rate)
    base_t = params.free_rate * params.amp * s ** (-params.free_rate - 1.0)
    return t, r, base + dpsi, base_t + dpsi_t
