"""Chebyshev-Lobatto collocation grids and the grid-function containers.

All grids are mapped to an interval ``[a, b]`` with nodes in increasing
order, so ``nodes[0] == a`` and ``nodes[-1] == b``.  A grid carries

* ``D``  -- the spectral differentiation matrix,
* ``Q``  -- the antiderivative matrix ``(Qu)(x_i) = int_a^{x_i} u``,
* ``w``  -- Clenshaw-Curtis quadrature weights,

each exact for polynomials of degree ``n - 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.polynomial import chebyshev as cheb


def _cheb_lobatto(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and differentiation matrix on [-1, 1], decreasing order (Trefethen)."""
    N = n - 1
    k = np.arange(n)
    x = np.cos(np.pi * k / N)
    c = np.ones(n)
    c[0] = c[-1] = 2.0
    c *= (-1.0) ** k
    dX = x[:, None] - x[None, :]
    D = np.outer(c, 1.0 / c) / (dX + np.eye(n))
    # negative-sum trick keeps rows summing to zero exactly
    D -= np.diag(D.sum(axis=1))
    return x, D


def _clenshaw_curtis(n: int) -> np.ndarray:
    """Clenshaw-Curtis weights on [-1, 1] for the Lobatto nodes cos(pi k/N)."""
    N = n - 1
    theta = np.pi * np.arange(n) / N
    w = np.zeros(n)
    v = np.ones(n - 2)
    inner = theta[1:-1]
    if N % 2 == 0:
        w[0] = w[-1] = 1.0 / (N**2 - 1)
        for k in range(1, N // 2):
            v -= 2.0 * np.cos(2 * k * inner) / (4 * k * k - 1)
        v -= np.cos(N * inner) / (N**2 - 1)
    else:
        w[0] = w[-1] = 1.0 / N**2
        for k in range(1, (N - 1) // 2 + 1):
            v -= 2.0 * np.cos(2 * k * inner) / (4 * k * k - 1)
    w[1:-1] = 2.0 * v / N
    return w


def _antiderivative(t: np.ndarray) -> np.ndarray:
    """Matrix mapping values at nodes ``t`` (in [-1,1]) to int_{-1}^{t_i}."""
    n = len(t)
    V = cheb.chebvander(t, n - 1)
    cols = np.empty((n, n))
    for k in range(n):
        e = np.zeros(n)
        e[k] = 1.0
        cols[:, k] = cheb.chebval(t, cheb.chebint(e, lbnd=-1.0))
    return np.linalg.solve(V.T, cols.T).T


@dataclass(frozen=True, eq=False)
class Grid:
    """Chebyshev-Lobatto grid with ``n`` nodes on ``[a, b]``."""

    n: int
    a: float = 0.0
    b: float = 1.0
    nodes: np.ndarray = field(init=False, repr=False)
    D: np.ndarray = field(init=False, repr=False)
    Q: np.ndarray = field(init=False, repr=False)
    w: np.ndarray = field(init=False, repr=False)
    bary: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.n < 3:
            raise ValueError(f"grid needs at least 3 nodes, got {self.n}")
        if not self.b > self.a:
            raise ValueError(f"empty interval [{self.a}, {self.b}]")
        x, D = _cheb_lobatto(self.n)
        half = 0.5 * (self.b - self.a)
        t = x[::-1]
        nodes = self.a + half * (t + 1.0)
        nodes[0], nodes[-1] = self.a, self.b
        bary = (-1.0) ** np.arange(self.n)
        bary[0] *= 0.5
        bary[-1] *= 0.5
        for name, val in (
            ("nodes", nodes),
            ("D", D[::-1, ::-1] / half),
            ("Q", _antiderivative(t) * half),
            ("w", _clenshaw_curtis(self.n)[::-1] * half),
            ("bary", bary),
        ):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def length(self) -> float:
        return self.b - self.a

    def integrate(self, values) -> complex | float:
        return self.w @ np.asarray(values)

    def antiderivative(self, values) -> np.ndarray:
        return self.Q @ np.asarray(values)

    def derivative(self, values) -> np.ndarray:
        return self.D @ np.asarray(values)

    def average(self, values) -> np.ndarray:
        """Running mean ``x -> (1/(x-a)) int_a^x u``; the value at ``a`` is ``u(a)``."""
        values = np.asarray(values)
        out = np.empty_like(values)
        out[1:] = (self.Q[1:] @ values) / (self.nodes[1:] - self.a)
        out[0] = values[0]
        return out

    def interpolate(self, values, points) -> np.ndarray:
        """Barycentric interpolation of grid values at arbitrary points in [a, b]."""
        values = np.asarray(values)
        points = np.atleast_1d(np.asarray(points, dtype=float))
        lo, hi = self.a, self.b
        tol = 1e-12 * max(1.0, abs(lo), abs(hi))
        if points.size and (points.min() < lo - tol or points.max() > hi + tol):
            raise ValueError("interpolation point outside the grid interval")
        diff = points[:, None] - self.nodes[None, :]
        exact = diff == 0.0
        with np.errstate(divide="ignore", invalid="ignore"):
            kern = self.bary[None, :] / diff
            out = (kern @ values) / kern.sum(axis=1)
        hit = exact.any(axis=1)
        if hit.any():
            out[hit] = values[exact[hit].argmax(axis=1)]
        return out

    def sample(self, func) -> np.ndarray:
        return np.asarray(func(self.nodes))


@lru_cache(maxsize=32)
def make_grid(n: int, a: float = 0.0, b: float = 1.0) -> Grid:
    """Cached grid factory; grids are immutable so sharing is safe."""
    return Grid(n, float(a), float(b))


@dataclass(frozen=True, eq=False)
class StateVector:
    """A pair of grid functions ``(u1, u2)`` on ``[0, 1]``, an element of H.

    Membership in H requires ``u1(0) = 0``; this is checked on construction
    up to a relative tolerance.
    """

    u1: np.ndarray
    u2: np.ndarray
    grid: Grid

    def __post_init__(self):
        u1 = np.asarray(self.u1)
        u2 = np.asarray(self.u2)
        if u1.shape != (self.grid.n,) or u2.shape != (self.grid.n,):
            raise ValueError("state components must match the grid size")
        scale = max(1.0, float(np.max(np.abs(u1), initial=0.0)))
        if abs(u1[0]) > 1e-8 * scale:
            raise ValueError(f"first component must vanish at rho=0, got {u1[0]!r}")
        object.__setattr__(self, "u1", u1)
        object.__setattr__(self, "u2", u2)

    @classmethod
    def zeros(cls, grid: Grid, dtype=float) -> "StateVector":
        return cls(np.zeros(grid.n, dtype), np.zeros(grid.n, dtype), grid)

    @classmethod
    def from_array(cls, arr, grid: Grid) -> "StateVector":
        arr = np.asarray(arr)
        return cls(arr[: grid.n].copy(), arr[grid.n :].copy(), grid)

    @classmethod
    def from_functions(cls, f1, f2, grid: Grid) -> "StateVector":
        return cls(grid.sample(f1) * np.ones(grid.n), grid.sample(f2) * np.ones(grid.n), grid)

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.u1, self.u2])

    def _check(self, other: "StateVector"):
        if other.grid is not self.grid and other.grid.n != self.grid.n:
            raise ValueError("states live on different grids")

    def __add__(self, other: "StateVector") -> "StateVector":
        self._check(other)
        return StateVector(self.u1 + other.u1, self.u2 + other.u2, self.grid)

    def __sub__(self, other: "StateVector") -> "StateVector":
        self._check(other)
        return StateVector(self.u1 - other.u1, self.u2 - other.u2, self.grid)

    def __mul__(self, alpha) -> "StateVector":
        return StateVector(alpha * self.u1, alpha * self.u2, self.grid)

    __rmul__ = __mul__

    def __neg__(self) -> "StateVector":
        return StateVector(-self.u1, -self.u2, self.grid)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """tau-sampled states on a shared grid; ``taus[0] == 0``.

    States are stored row-wise in ``data`` (shape ``(len(taus), 2n)``).
    ``status`` is ``"ok"`` or ``"escaped"``; escaped runs carry the escape
    time and the sign of the gauge coefficient at that time.
    """

    taus: np.ndarray
    data: np.ndarray
    grid: Grid
    norms: np.ndarray
    status: str = "ok"
    escape_time: float | None = None
    escape_sign: int | None = None

    def __post_init__(self):
        if len(self.taus) == 0 or self.taus[0] != 0.0:
            raise ValueError("trajectory must start at tau = 0")
        if np.any(np.diff(self.taus) <= 0):
            raise ValueError("trajectory times must increase")
        if self.data.shape != (len(self.taus), 2 * self.grid.n):
            raise ValueError("trajectory data has the wrong shape")

    def __len__(self) -> int:
        return len(self.taus)

    def state(self, i: int) -> StateVector:
        return StateVector.from_array(self.data[i], self.grid)

    @property
    def states(self) -> list[StateVector]:
        return [self.state(i) for i in range(len(self))]

    def x_norm(self, mu: float) -> float:
        """Weighted sup-norm ``sup_tau e^{mu tau} ||Psi(tau)||``."""
        return float(np.max(np.exp(mu * self.taus) * self.norms))
