"""The power nonlinearity around the ODE blow-up profile.

With ``a = kappa_p^{1/(p-1)}`` and ``y = x / a`` the scalar nonlinearity reads

    N(x, rho) = rho * a^p * [ |1+y|^{p-1} (1+y) - 1 - p y ],

which is O(x^2).  Evaluating the bracket naively loses all digits for small
``x`` (three O(1) terms cancel to O(x^2)); a binomial series is used there.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import PhysParams
from .grid import StateVector

_SERIES_RADIUS = 0.25
_SERIES_TERMS = 40


def signed_power(y, p: float):
    """``|y|^{p-1} y``, i.e. ``sign(y) |y|^p``, returning 0 at the origin."""
    y = np.asarray(y, dtype=float)
    ay = np.abs(y)
    out = np.zeros_like(y)
    nz = ay > 0
    out[nz] = np.sign(y[nz]) * np.exp(p * np.log(ay[nz]))
    return out


def _binomial_tail(y: np.ndarray, p: float, start: int) -> np.ndarray:
    """``sum_{j >= start} C(p, j) y^j`` for small ``|y|``."""
    coef = 1.0
    for j in range(1, start + 1):
        coef *= (p - j + 1) / j
    term = coef * y**start
    total = term.copy()
    ymax = float(np.max(np.abs(y), initial=0.0))
    if ymax == 0.0:
        return total
    # enough terms for the tail to drop below double precision
    count = min(_SERIES_TERMS, max(2, int(np.ceil(-17.0 / np.log10(ymax))) + 1))
    for j in range(start + 1, start + count):
        term = term * y * (p - j + 1) / j
        total += term
    return total


def _bracket(y: np.ndarray, p: float) -> np.ndarray:
    out = np.empty_like(y)
    small = np.abs(y) <= _SERIES_RADIUS
    out[small] = _binomial_tail(y[small], p, 2)
    big = ~small
    out[big] = signed_power(1.0 + y[big], p) - 1.0 - p * y[big]
    return out


def n_scalar(x, rho, params: PhysParams):
    """``N(x, rho)``; vectorised over broadcastable ``x`` and ``rho``."""
    x, rho = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(rho, dtype=float))
    a = params.amp
    y = np.atleast_1d(x / a)
    val = rho * a**params.p * _bracket(y, params.p).reshape(x.shape)
    return val[()] if val.ndim == 0 else val


def n_scalar_d1(x, rho, params: PhysParams):
    """``d/dx N(x, rho) = rho p kappa_p (|1+y|^{p-1} - 1)``."""
    x, rho = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(rho, dtype=float))
    p = params.p
    y = np.atleast_1d(x / params.amp)
    inner = np.empty_like(y)
    pos = 1.0 + y > 0
    inner[pos] = np.expm1((p - 1.0) * np.log1p(y[pos]))
    inner[~pos] = np.abs(1.0 + y[~pos]) ** (p - 1.0) - 1.0
    val = rho * p * params.kappa_p * inner.reshape(x.shape)
    return val[()] if val.ndim == 0 else val


def n_scalar_d2(x, rho, params: PhysParams):
    """``d^2/dx^2 N(x, rho) = rho p (p-1) a^{p-2} |1+y|^{p-2} sign(1+y)``."""
    x, rho = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(rho, dtype=float))
    p = params.p
    a = params.amp
    z = 1.0 + x / a
    val = rho * p * (p - 1.0) * a ** (p - 2.0) * np.sign(z) * np.abs(z) ** (p - 2.0)
    return val[()] if np.ndim(val) == 0 else val


def n_scalar_drho(x, rho, params: PhysParams):
    """``d/drho N(x, rho) = N(x, 1)`` since rho enters as a prefactor."""
    x = np.asarray(x, dtype=float)
    return n_scalar(x, np.ones_like(x), params)


@dataclass(frozen=True)
class NonlinConfig:
    params: PhysParams

    def __post_init__(self):
        if not self.params.p > 3:
            raise ValueError("the nonlinearity needs p > 3 to be C^2")


def n_vector(u: StateVector, cfg: NonlinConfig | PhysParams) -> StateVector:
    """``N(u) = (N(K u2(rho), rho), 0)``."""
    params = cfg.params if isinstance(cfg, NonlinConfig) else cfg
    grid = u.grid
    ku2 = np.real(grid.average(u.u2))
    first = n_scalar(ku2, grid.nodes, params)
    first[0] = 0.0
    return StateVector(first, np.zeros(grid.n), grid)
