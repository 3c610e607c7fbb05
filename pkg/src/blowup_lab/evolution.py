"""Nonlinear similarity dynamics, the corrected fixed point and blow-up time selection.

Times are abstract: a trajectory starts at ``tau = 0``, which corresponds to the
physical similarity time ``-log T``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .core import (
    T_INTERVAL,
    PhysParams,
    RadialDataPair,
    initial_data_U,
    reconstruct_perturbation,
    relative_data,
)
from .grid import Grid, StateVector, Trajectory, make_grid
from .linop import OperatorMatrices, ProjectionMatrix, build_operators, spectral_projection
from .nonlin import n_scalar, n_vector
from .norms import higher_energy_norm, similarity_eh_norm


class DataTooLargeError(RuntimeError):
    """The fixed-point iteration failed to contract."""


class TailEstimateError(RuntimeError):
    """The truncated tau-integral has a tail above tolerance."""


class NoSignChangeError(RuntimeError):
    """The correction does not change sign on the admissible bracket."""


# ---------------------------------------------------------------- direct flow


def _reduced_nonlinearity(ops: OperatorMatrices):
    grid = ops.grid
    n = grid.n
    rho = grid.nodes
    Qr = grid.Q[1:] / rho[1:, None]
    params = ops.params

    def nl(y: np.ndarray) -> np.ndarray:
        u2 = y[n - 1 :]
        ku2 = Qr @ u2
        out = np.zeros_like(y)
        out[: n - 1] = n_scalar(ku2, rho[1:], params)
        return out

    return nl


def nonlinear_rhs(phi: StateVector, ops: OperatorMatrices) -> StateVector:
    """``L phi + N(phi)`` on H (first component vanishes at the centre)."""
    Lphi = ops.apply_L(phi)
    return Lphi + n_vector(phi, ops.params)


def evolve_nonlinear(
    phi0: StateVector,
    ops: OperatorMatrices,
    tau_end: float,
    dt: float = 1e-4,
    sample_dt: float = 0.02,
    projection: ProjectionMatrix | None = None,
    escape_norm: float = 1e6,
    guard: float = 10.0,
) -> Trajectory:
    """Classical RK4 for ``d/dtau Phi = L Phi + N(Phi)``.

    Samples every ``sample_dt`` (rounded to a multiple of ``dt``).  If the norm
    exceeds ``escape_norm`` the run stops with status ``"escaped"``; the sign of
    the gauge coefficient at that moment is recorded when a projection is given.
    """
    y = ops.to_reduced(phi0)
    if ops.norm_reduced(y) > guard:
        raise ValueError("initial data exceed the configured guard")
    stride = max(1, int(round(sample_dt / dt)))
    n_samples = int(math.floor(tau_end / (stride * dt) + 1e-9))
    A = ops.A
    nl = _reduced_nonlinearity(ops)

    def f(z):
        return A @ z + nl(z)

    out = [y.copy()]
    taus = [0.0]
    status, t_esc, sgn = "ok", None, None
    for k in range(1, n_samples + 1):
        for _ in range(stride):
            k1 = f(y)
            k2 = f(y + 0.5 * dt * k1)
            k3 = f(y + 0.5 * dt * k2)
            k4 = f(y + dt * k3)
            y = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        nrm = ops.norm_reduced(y)
        if not nrm <= escape_norm:
            status, t_esc = "escaped", k * stride * dt
            if projection is not None and np.all(np.isfinite(y)):
                sgn = int(np.sign(projection.coefficient(y)))
            if np.all(np.isfinite(y)):
                out.append(y.copy())
                taus.append(t_esc)
            break
        out.append(y.copy())
        taus.append(k * stride * dt)
    Y = np.array(out)
    return Trajectory(
        np.array(taus), Y @ ops.E.T, ops.grid, ops.norms_reduced(Y), status, t_esc, sgn
    )


# ------------------------------------------------------ corrected fixed point


@dataclass
class FixedPointInfo:
    iterations: int
    diffs: list[float]
    ratios: list[float]
    tau_max: float
    tail: float


class LyapunovPerronSolver:
    """Evaluates ``K(Psi, u)`` on a uniform tau grid and solves ``Psi = K(Psi, u)``.

    The map is used in the equivalent form

        K(Psi,u)(tau) = S(tau)(1-P)u + int_0^tau S(tau-s)(1-P)N(Psi(s)) ds
                        - g int_tau^inf e^{tau-s} c(s) ds,

    with ``c`` the gauge coefficient of ``N(Psi)``.  The stable part uses
    exponential integrators with ``N`` linear between grid points; the
    unstable part is a backward recursion with an exponential tail.
    """

    def __init__(
        self,
        ops: OperatorMatrices,
        projection: ProjectionMatrix | None = None,
        h: float = 0.02,
        tau_max: float = 12.0,
        tail_tol: float = 1e-10,
    ):
        self.ops = ops
        self.proj = projection if projection is not None else spectral_projection(ops)
        self.params = ops.params
        self.h = float(h)
        self.tail_tol = tail_tol
        m = ops.m
        Z = np.zeros((3 * m, 3 * m))
        Z[:m, :m] = self.h * ops.A
        Z[:m, m : 2 * m] = np.eye(m)
        Z[m : 2 * m, 2 * m :] = np.eye(m)
        X = sla.expm(Z)
        self.Eh = X[:m, :m].copy()
        self.W1 = self.h * X[:m, m : 2 * m]
        self.W2 = self.h * X[:m, 2 * m :]
        self.Qc = np.eye(m) - self.proj.P
        self._nl = _reduced_nonlinearity(ops)
        self.set_tau_max(tau_max)

    def set_tau_max(self, tau_max: float):
        steps = int(math.ceil(tau_max / self.h - 1e-9))
        self.taus = self.h * np.arange(steps + 1)
        self.tau_max = float(self.taus[-1])

    @property
    def mu(self) -> float:
        return self.params.mu_p

    def _trajectory(self, Y: np.ndarray) -> Trajectory:
        return Trajectory(self.taus.copy(), Y @ self.ops.E.T, self.ops.grid, self.ops.norms_reduced(Y))

    def _apply_reduced(self, Y: np.ndarray, y0: np.ndarray):
        """Returns ``(K(Psi,u) stacked, Q_0, tail)`` for reduced ``Psi`` rows ``Y``."""
        N = np.array([self._nl(y) for y in Y])
        ell = self.proj.functional
        c = N @ ell
        NQ = N @ self.Qc.T
        h = self.h
        J = len(self.taus)
        out = np.empty_like(Y)
        w = self.Qc @ y0
        out[0] = w
        for j in range(J - 1):
            w = self.Eh @ w + self.W1 @ NQ[j] + self.W2 @ (NQ[j + 1] - NQ[j])
            out[j + 1] = w
        eh = math.exp(-h)
        b0 = 1.0 - eh
        b1 = (1.0 - eh * (1.0 + h)) / h
        Qs = np.empty(J)
        tail = c[-1] / (1.0 + 2.0 * self.mu)
        Qs[-1] = tail
        for j in range(J - 2, -1, -1):
            Qs[j] = eh * Qs[j + 1] + c[j] * b0 + (c[j + 1] - c[j]) * b1
        out -= Qs[:, None] * self.proj.gauge[None, :]
        return out, float(Qs[0]), abs(float(tail))

    def lp_map(self, Psi: Trajectory, u: StateVector) -> Trajectory:
        """``K(Psi, u)`` on this solver's tau grid."""
        if len(Psi.taus) != len(self.taus) or not np.allclose(Psi.taus, self.taus):
            raise ValueError("trajectory is not on the solver's tau grid")
        Y = Psi.data @ self.ops.E
        out, _, tail = self._apply_reduced(Y, self.ops.to_reduced(u))
        if tail > self.tail_tol:
            raise TailEstimateError(f"tail of the tau-integral {tail:.3e} exceeds {self.tail_tol:.1e}")
        return self._trajectory(out)

    def x_norm_reduced(self, Y: np.ndarray) -> float:
        return float(np.max(np.exp(self.mu * self.taus) * self.ops.norms_reduced(Y)))

    def solve(self, u: StateVector, tol: float = 1e-10, max_iter: int = 200, max_tau: float = 60.0):
        """Banach iteration from ``Psi = 0``.

        Returns ``(Psi, info, Q0)``; ``Q0 = int_0^inf e^{-s} c(s) ds`` feeds the
        correction.  ``tau_max`` grows until the tail estimate is below
        tolerance.
        """
        y0 = self.ops.to_reduced(u)
        while True:
            Y = np.zeros((len(self.taus), self.ops.m))
            diffs: list[float] = []
            ratios: list[float] = []
            it = 0
            while True:
                it += 1
                Yn, q0, tail = self._apply_reduced(Y, y0)
                d = self.x_norm_reduced(Yn - Y)
                if diffs:
                    ratios.append(d / diffs[-1] if diffs[-1] > 0 else 0.0)
                diffs.append(d)
                Y = Yn
                if not np.isfinite(d) or (len(diffs) >= 3 and d > diffs[-2] and d > 1e-12):
                    raise DataTooLargeError(
                        f"fixed-point iteration does not contract (differences {diffs[-3:]})"
                    )
                if d <= tol:
                    break
                if it >= max_iter:
                    raise DataTooLargeError(f"no convergence after {max_iter} iterations")
            if tail <= self.tail_tol or self.tau_max >= max_tau:
                break
            extra = math.log(tail / self.tail_tol) / (2.0 * self.mu) + 1.0
            self.set_tau_max(min(max_tau, self.tau_max + extra))
        info = FixedPointInfo(it, diffs, ratios, self.tau_max, tail)
        if tail > self.tail_tol:
            raise TailEstimateError(f"tail {tail:.3e} above tolerance even at tau_max={self.tau_max}")
        return self._trajectory(Y), info, q0


def solve_fixed_point(u: StateVector, solver: LyapunovPerronSolver, delta: float = 0.1, **kw):
    """Fixed point ``Psi_u = K(Psi_u, u)``; also checks membership in ``X_delta``."""
    Psi, info, _ = solver.solve(u, **kw)
    xn = Psi.x_norm(solver.mu)
    if xn > delta:
        raise DataTooLargeError(f"solution leaves X_delta: sup e^(mu tau)||Psi|| = {xn:.3e} > {delta}")
    return Psi, info


def lp_map(Psi: Trajectory, u: StateVector, solver: LyapunovPerronSolver) -> Trajectory:
    return solver.lp_map(Psi, u)


def correction_F(v: RadialDataPair, T: float, solver: LyapunovPerronSolver):
    """``(F(v,T), f(v,T))`` with ``F = f g``."""
    ops = solver.ops
    u = initial_data_U(v, T, ops.params, ops.grid)
    _, _, q0 = solver.solve(u)
    f = float(solver.proj.coefficient(u)) + q0
    F = ops.from_reduced(f * solver.proj.gauge)
    return F, f


# ------------------------------------------------------------- modulation


@dataclass
class ModulationResult:
    T_star: float
    bracket: tuple[float, float]
    f_values: tuple[float, float]
    iterations: int
    f_star: float = float("nan")
    method: str = "correction"


def _initial_bracket(fun, bracket, max_widen: int = 6, margin: float = 0.02):
    lo, hi = bracket
    flo, fhi = fun(lo), fun(hi)
    width = 0.5 * (hi - lo)
    k = 0
    while np.sign(flo) == np.sign(fhi) and flo != 0 and fhi != 0:
        k += 1
        if k > max_widen:
            raise NoSignChangeError(f"no sign change of f on [{lo}, {hi}]")
        width *= 2.0
        lo = max(1.0 - width, T_INTERVAL[0] + margin)
        hi = min(1.0 + width, T_INTERVAL[1] - margin)
        flo, fhi = fun(lo), fun(hi)
    return lo, hi, flo, fhi


def _bisect(fun, lo, hi, flo, fhi, tol):
    it = 0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        fm = fun(mid)
        it += 1
        if fm == 0.0:
            return mid, fm, it
        if np.sign(fm) == np.sign(flo):
            lo, flo = mid, fm
        else:
            hi, fhi = mid, fm
    # report the endpoint with the smaller residual
    return (lo, flo, it) if abs(flo) <= abs(fhi) else (hi, fhi, it)


def find_blowup_time(
    v: RadialDataPair,
    solver: LyapunovPerronSolver,
    bracket: tuple[float, float] = (0.9, 1.1),
    tol: float = 1e-10,
) -> ModulationResult:
    """Bisection on ``T -> f(v, T)`` until the bracket is narrower than ``tol``."""
    cache: dict[float, float] = {}

    def fun(T):
        if T not in cache:
            cache[T] = correction_F(v, T, solver)[1]
        return cache[T]

    lo, hi, flo, fhi = _initial_bracket(fun, bracket)
    if flo == 0.0:
        return ModulationResult(lo, (lo, hi), (flo, fhi), 0, flo)
    if fhi == 0.0:
        return ModulationResult(hi, (lo, hi), (flo, fhi), 0, fhi)
    T_star, f_star, it = _bisect(fun, lo, hi, flo, fhi, tol)
    return ModulationResult(T_star, (lo, hi), (flo, fhi), it, f_star)


def shoot_blowup_time(
    v: RadialDataPair,
    ops: OperatorMatrices,
    projection: ProjectionMatrix,
    bracket: tuple[float, float] = (0.9, 1.1),
    tol: float = 1e-6,
    dt: float = 1e-3,
    escape_norm: float = 0.3,
    tau_end: float = 40.0,
) -> ModulationResult:
    """Independent route: bisect on the sign of the gauge coefficient at escape.

    A run that does not escape before ``tau_end`` counts as a zero.
    """

    def fun(T):
        u = initial_data_U(v, T, ops.params, ops.grid)
        traj = evolve_nonlinear(u, ops, tau_end, dt=dt, sample_dt=0.1, projection=projection,
                                escape_norm=escape_norm)
        if traj.status != "escaped":
            return 0.0
        return float(traj.escape_sign or 0)

    lo, hi, flo, fhi = _initial_bracket(fun, bracket)
    if flo == 0.0 or fhi == 0.0:
        T = lo if flo == 0.0 else hi
        return ModulationResult(T, (lo, hi), (flo, fhi), 0, 0.0, "shooting")
    T_star, f_star, it = _bisect(fun, lo, hi, flo, fhi, tol)
    return ModulationResult(T_star, (lo, hi), (flo, fhi), it, f_star, "shooting")


# ------------------------------------------------------ main decay estimate


@dataclass
class MainEstimateReport:
    T_star: float
    modulation: ModulationResult
    phys_taus: np.ndarray = field(repr=False)
    s_values: np.ndarray = field(repr=False)
    weighted_norm: np.ndarray = field(repr=False)
    weighted_norm_similarity: np.ndarray = field(repr=False)
    slope: float
    intercept: float
    C_eps: float
    mu: float
    window: tuple[float, float]
    trajectory: Trajectory = field(repr=False)

    @property
    def passes(self) -> bool:
        return bool(self.slope >= self.mu - 0.05)


def weighted_eh_norm(phi: StateVector, tau_phys: float, T: float, params: PhysParams) -> float:
    """``(T-t)^{(p+3)/(2(p-1))} ||(psi,psi_t) - (psi^T,psi^T_t)||_{E^h(T-t)}`` from the reconstruction."""
    t, r, dpsi, dpsi_t = reconstruct_perturbation(phi, tau_phys, T, params)
    s = math.exp(-tau_phys)
    grid = Grid(phi.grid.n, 0.0, s)
    pair = RadialDataPair(np.real(dpsi), np.real(dpsi_t), grid)
    return s ** ((params.p + 3.0) / (2.0 * (params.p - 1.0))) * higher_energy_norm(pair, s)


def verify_main_estimate(
    free: RadialDataPair,
    solver: LyapunovPerronSolver,
    window: tuple[float, float] = (1.0, 6.0),
    dt: float = 5e-4,
    sample_dt: float = 0.1,
    modulation: ModulationResult | None = None,
) -> MainEstimateReport:
    """Modulate, evolve and measure the decay of the weighted higher energy norm.

    ``free`` holds the data ``(f, g)`` on ``[0, 3/2]``.  The slope is fitted
    to ``log W`` against ``log(T-t)`` over physical similarity times in
    ``window``.
    """
    ops = solver.ops
    params = ops.params
    v = relative_data(free, params)
    mod = modulation if modulation is not None else find_blowup_time(v, solver)
    T = mod.T_star
    u = initial_data_U(v, T, params, ops.grid)
    shift = math.log(T)
    tau_end = window[1] + shift + 1e-9
    traj = evolve_nonlinear(u, ops, tau_end, dt=dt, sample_dt=sample_dt)
    if traj.status != "ok":
        raise RuntimeError("evolution escaped after modulation")
    phys = traj.taus - shift
    sel = (phys >= window[0] - 1e-9) & (phys <= window[1] + 1e-9)
    W, Ws = [], []
    for i in np.nonzero(sel)[0]:
        phi = traj.state(i)
        W.append(weighted_eh_norm(phi, phys[i], T, params))
        s = math.exp(-phys[i])
        Ws.append(s ** ((params.p + 3.0) / (2.0 * (params.p - 1.0))) * similarity_eh_norm(phi, s, params.p))
    W = np.array(W)
    Ws = np.array(Ws)
    svals = np.exp(-phys[sel])
    if np.all(W > 0):
        slope, intercept = np.polyfit(np.log(svals), np.log(W), 1)
        C = float(np.max(W / svals**params.mu_p))
    else:
        slope, intercept, C = math.inf, -math.inf, 0.0
    return MainEstimateReport(
        T_star=T,
        modulation=mod,
        phys_taus=phys[sel],
        s_values=svals,
        weighted_norm=W,
        weighted_norm_similarity=Ws,
        slope=float(slope),
        intercept=float(intercept),
        C_eps=C,
        mu=params.mu_p,
        window=window,
        trajectory=traj,
    )


def default_solver(params: PhysParams, n: int = 64, **kw) -> LyapunovPerronSolver:
    grid = make_grid(n)
    ops = build_operators(grid, params)
    return LyapunovPerronSolver(ops, spectral_projection(ops), **kw)
