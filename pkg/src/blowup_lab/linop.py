"""Collocation matrices for the linearised flow, linear semigroups and the projection P.

Full matrices act on stacked values ``x = (u1, u2)`` of length ``2n`` and carry
the differential expression at every node.  The condition ``u1(0) = 0`` is
imposed by working in reduced coordinates ``y = (u1[1:], u2)`` of length
``2n - 1``: ``A = R L E`` with ``E`` the zero-padding lift and ``R = E^T``.
No condition is placed on ``u2`` at the centre or on either component at
``rho = 1``; the PDE rows there are kept.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .core import PhysParams, gauge_mode
from .grid import Grid, StateVector, Trajectory
from .norms import h_gram


class NumericalBlowupError(RuntimeError):
    """The discrete solution exceeded the divergence threshold."""

    def __init__(self, msg, diagnostic=None):
        super().__init__(msg)
        self.diagnostic = diagnostic or {}


class ContourCollisionError(RuntimeError):
    """A resolvent solve on the projection contour was near-singular."""


@dataclass(frozen=True, eq=False)
class OperatorMatrices:
    grid: Grid
    params: PhysParams
    L0: np.ndarray
    Lp: np.ndarray
    L: np.ndarray
    E: np.ndarray = field(repr=False)
    R: np.ndarray = field(repr=False)
    A0: np.ndarray = field(repr=False)
    A: np.ndarray = field(repr=False)
    G: np.ndarray = field(repr=False)
    C: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.grid.n

    @property
    def m(self) -> int:
        return 2 * self.grid.n - 1

    def reduced(self, which: str = "L") -> np.ndarray:
        if which == "L":
            return self.A
        if which == "L0":
            return self.A0
        raise ValueError(f"unknown operator {which!r}")

    def to_reduced(self, u: StateVector) -> np.ndarray:
        return self.R @ u.as_array()

    def from_reduced(self, y) -> StateVector:
        return StateVector.from_array(self.E @ y, self.grid)

    def norm_reduced(self, y) -> float:
        """H norm of a reduced vector, ``||C y||_2`` with ``G = C^T C``."""
        return float(np.linalg.norm(self.C @ y))

    def norms_reduced(self, Y: np.ndarray) -> np.ndarray:
        """Row-wise H norms of a stack of reduced vectors."""
        return np.linalg.norm(Y @ self.C.T, axis=1)

    def apply_L(self, u: StateVector, which: str = "L") -> StateVector:
        """Generator action on H (the ``u1(0)`` equation is dropped)."""
        return self.from_reduced(self.reduced(which) @ self.to_reduced(u))

    def op_norm(self, X: np.ndarray) -> float:
        """Operator norm of a reduced matrix in the H metric."""
        Ci = sla.solve_triangular(self.C, np.eye(self.m))
        return float(np.linalg.norm(self.C @ X @ Ci, 2))


def build_operators(grid: Grid, params: PhysParams) -> OperatorMatrices:
    n = grid.n
    rho = grid.nodes
    D = grid.D
    c = params.free_rate
    I = np.eye(n)
    rD = rho[:, None] * D
    L0 = np.block([[-rD - c * I, D], [D, -rD - c * I]])
    Lp = np.zeros((2 * n, 2 * n))
    Lp[:n, n:] = params.p * params.kappa_p * grid.Q
    L = L0 + Lp
    E = np.eye(2 * n)[:, 1:]
    R = E.T.copy()
    A0 = R @ L0 @ E
    A = R @ L @ E
    G = R @ h_gram(grid) @ E
    C = sla.cholesky(0.5 * (G + G.T), lower=False)
    for arr in (L0, Lp, L, E, R, A0, A, G, C):
        arr.setflags(write=False)
    return OperatorMatrices(grid, params, L0, Lp, L, E, R, A0, A, G, C)


def rk4_step_matrix(A: np.ndarray, h: float) -> np.ndarray:
    """Exact one-step map of classical RK4 for the linear system ``y' = A y``."""
    hA = h * A
    I = np.eye(A.shape[0])
    hA2 = hA @ hA
    return I + hA + hA2 / 2.0 + hA2 @ hA / 6.0 + hA2 @ hA2 / 24.0


def _substeps(span: float, dt: float) -> tuple[int, float]:
    k = max(1, int(math.ceil(span / dt - 1e-9)))
    return k, span / k


def evolve_linear(
    ops: OperatorMatrices,
    u0: StateVector,
    tau: float,
    dt: float = 1e-4,
    which: str = "L",
    method: str = "rk4",
    blowup_norm: float = 1e12,
) -> StateVector:
    """Approximate ``S(tau) u0`` (``which="L"``) or ``S0(tau) u0`` (``which="L0"``).

    ``method="rk4"`` time-steps with classical Runge-Kutta; ``method="expm"``
    uses the matrix exponential as an independent route.
    """
    if tau < 0:
        raise ValueError("tau must be non-negative")
    if tau == 0:
        return u0
    A = ops.reduced(which)
    y = ops.to_reduced(u0)
    if method == "expm":
        return ops.from_reduced(sla.expm(tau * A) @ y)
    if method != "rk4":
        raise ValueError(f"unknown method {method!r}")
    k, h = _substeps(tau, dt)
    S = rk4_step_matrix(A, h)
    check = max(1, k // 100)
    for i in range(k):
        y = S @ y
        if (i + 1) % check == 0 or i + 1 == k:
            nrm = ops.norm_reduced(y)
            if not nrm <= blowup_norm:
                raise NumericalBlowupError(
                    "linear evolution diverged",
                    {"tau": (i + 1) * h, "norm": float(nrm), "dt": h, "which": which},
                )
    return ops.from_reduced(y)


def linear_trajectory(
    ops: OperatorMatrices,
    u0: StateVector,
    taus,
    dt: float = 1e-4,
    which: str = "L",
    blowup_norm: float = 1e12,
) -> Trajectory:
    """Sample the linear flow at the increasing times ``taus`` (starting at 0)."""
    taus = np.asarray(taus, dtype=float)
    A = ops.reduced(which)
    y = ops.to_reduced(u0)
    out = np.empty((len(taus), ops.m), dtype=y.dtype)
    out[0] = y
    cache: dict[float, np.ndarray] = {}
    for i in range(1, len(taus)):
        k, h = _substeps(taus[i] - taus[i - 1], dt)
        key = round(h, 15)
        if key not in cache:
            cache[key] = rk4_step_matrix(A, h)
        S = cache[key]
        for _ in range(k):
            y = S @ y
        nrm = ops.norm_reduced(y)
        if not nrm <= blowup_norm:
            raise NumericalBlowupError(
                "linear evolution diverged", {"tau": float(taus[i]), "norm": float(nrm)}
            )
        out[i] = y
    data = out @ ops.E.T
    return Trajectory(taus, data, ops.grid, ops.norms_reduced(out))


@dataclass(frozen=True, eq=False)
class ProjectionMatrix:
    """Rank-one spectral projection onto the gauge mode, in reduced coordinates."""

    P: np.ndarray
    center: float
    radius: float
    M: int
    ops: OperatorMatrices = field(repr=False)
    gauge: np.ndarray = field(repr=False)
    functional: np.ndarray = field(repr=False)

    def apply(self, u: StateVector) -> StateVector:
        return self.ops.from_reduced(self.P @ self.ops.to_reduced(u))

    def complement(self, u: StateVector) -> StateVector:
        return u - self.apply(u)

    def coefficient(self, u) -> complex | float:
        """Scalar ``c`` with ``P u = c g``; accepts a StateVector or a reduced vector."""
        y = self.ops.to_reduced(u) if isinstance(u, StateVector) else np.asarray(u)
        return self.functional @ y


def spectral_projection(
    ops: OperatorMatrices,
    M_nodes: int = 32,
    center: float = 1.0,
    radius: float = 0.5,
    cond_limit: float = 1e12,
) -> ProjectionMatrix:
    """Trapezoidal quadrature of ``(1/2 pi i) \\oint (lambda - A)^{-1} d lambda``."""
    A = ops.A
    m = ops.m
    I = np.eye(m)
    P = np.zeros((m, m), dtype=complex)
    for j in range(M_nodes):
        e = radius * np.exp(2j * np.pi * j / M_nodes)
        lam = center + e
        Ml = lam * I - A
        cond = np.linalg.cond(Ml)
        if not cond <= cond_limit:
            raise ContourCollisionError(f"resolvent near-singular at lambda={lam:.6g} (cond {cond:.3e})")
        P += e * np.linalg.solve(Ml, I)
    P /= M_nodes
    P = P.real.copy()
    g = ops.to_reduced(gauge_mode(ops.params, ops.grid))
    Gg = ops.G @ g
    ell = (Gg @ P) / (Gg @ g)
    for arr in (P, g, ell):
        arr.setflags(write=False)
    return ProjectionMatrix(P, center, radius, M_nodes, ops, g, ell)


def resolvent_norm_scan(ops: OperatorMatrices, lambda_list, cond_limit: float = 1e14):
    """``[(lambda, ||R_L(lambda)||), ...]`` in the H metric; singular solves give ``inf``."""
    m = ops.m
    I = np.eye(m)
    Ci = sla.solve_triangular(ops.C, I)
    out = []
    for lam in lambda_list:
        Ml = complex(lam) * I - ops.A
        if not np.linalg.cond(Ml) <= cond_limit:
            out.append((complex(lam), math.inf))
            continue
        X = np.linalg.solve(Ml, I)
        out.append((complex(lam), float(np.linalg.norm(ops.C @ X @ Ci, 2))))
    return out


@dataclass(frozen=True)
class SemigroupBound:
    M: float
    omega: float
    window: tuple[float, float]
    intercept: float

    def __post_init__(self):
        if not self.M >= 1.0:
            raise ValueError("M must be at least 1")


def fit_semigroup_bound(taus, norms, window=None) -> SemigroupBound:
    """Least-squares fit ``log ||Phi(tau)|| ~ intercept + omega tau`` on ``window``.

    ``M = max(1, exp(intercept))``.
    """
    taus = np.asarray(taus, dtype=float)
    norms = np.asarray(norms, dtype=float)
    if taus.shape != norms.shape:
        raise ValueError("taus and norms differ in length")
    if np.any(~(norms > 0)):
        raise ValueError("norms must be positive")
    lo, hi = (taus[0], taus[-1]) if window is None else window
    sel = (taus >= lo - 1e-12) & (taus <= hi + 1e-12)
    if sel.sum() < 10:
        raise ValueError("need at least 10 samples in the fit window")
    omega, intercept = np.polyfit(taus[sel], np.log(norms[sel]), 1)
    return SemigroupBound(
        M=max(1.0, float(math.exp(intercept))),
        omega=float(omega),
        window=(float(lo), float(hi)),
        intercept=float(intercept),
    )
