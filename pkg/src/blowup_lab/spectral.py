"""Closed-form spectral analysis through the hypergeometric reduction.

For a spectral parameter ``lambda`` the eigenvalue equation of the linearised
operator reduces, in ``z = rho^2``, to the hypergeometric equation with

    a = (lambda - 2)/2,  b = (lambda + (p+3)/(p-1))/2,  c = 1/2.

The solution regular at ``z = 1`` is ``F(a, b; a+b+1-c; 1-z)``; expanding it in the
basis at ``z = 0`` gives coefficients ``c0`` (of ``F(a,b;c;z)``) and ``c1`` (of
``sqrt(z) F(a+1/2, b+1/2; 3/2; z)``).  Smoothness at the centre forces
``c0 = 0``, so eigenvalues are the zeros of

    h(lambda) = 1 / (Gamma(a+1-c) Gamma(b+1-c)),

an entire function.  Its zeros come in two families,
``lambda = 1 - 2k`` and ``lambda = -2k - 2(p+1)/(p-1)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .grid import Grid, StateVector
from .special import gamma_complex, hyp2f1, rgamma_complex

_SQRT_PI = math.sqrt(math.pi)


class DegenerateConnectionWarning(UserWarning):
    """``c - a - b = 0``: the solution at ``z = 1`` has a logarithmic branch."""


@dataclass(frozen=True)
class HypGeomParams:
    a: complex
    b: complex
    c: complex
    lam: complex
    p: float

    @property
    def indicial_exponents(self) -> tuple[complex, complex]:
        """Exponents ``{0, c-a-b}`` at ``z = 1``."""
        return 0.0, self.c - self.a - self.b


def hyp_params(lam, p: float) -> HypGeomParams:
    lam = complex(lam)
    return HypGeomParams(
        a=0.5 * (lam - 2.0),
        b=0.5 * (lam + (p + 3.0) / (p - 1.0)),
        c=0.5 + 0j,
        lam=lam,
        p=float(p),
    )


def _is_nonpos_int(z: complex, tol: float = 0.0) -> bool:
    z = complex(z)
    return abs(z.imag) <= tol and z.real <= tol and abs(z.real - round(z.real)) <= tol


def _check_degenerate(hp: HypGeomParams):
    if abs(hp.c - hp.a - hp.b) == 0.0:
        warnings.warn(
            f"c - a - b = 0 at lambda={hp.lam}: logarithmic case, connection formula degenerates",
            DegenerateConnectionWarning,
            stacklevel=3,
        )


def h_entire(lam, p: float):
    """``1/(Gamma((lambda-1)/2) Gamma(lambda/2 + (p+1)/(p-1)))``, vectorised."""
    lam = np.asarray(lam, dtype=complex)
    return rgamma_complex(0.5 * (lam - 1.0)) * rgamma_complex(0.5 * lam + (p + 1.0) / (p - 1.0))


def connection_c0(lam, p: float) -> complex:
    """``Gamma(a+b+1-c) Gamma(1-c) / (Gamma(a+1-c) Gamma(b+1-c))``."""
    hp = hyp_params(lam, p)
    num = hp.a + hp.b + 1.0 - hp.c
    if _is_nonpos_int(num):
        raise ValueError(f"numerator Gamma has a pole at lambda={hp.lam}")
    _check_degenerate(hp)
    return complex(gamma_complex(num) * _SQRT_PI * h_entire(hp.lam, p))


def connection_c1(lam, p: float) -> complex:
    """``Gamma(a+b+1-c) Gamma(c-1) / (Gamma(a) Gamma(b))``."""
    hp = hyp_params(lam, p)
    num = hp.a + hp.b + 1.0 - hp.c
    if _is_nonpos_int(num):
        raise ValueError(f"numerator Gamma has a pole at lambda={hp.lam}")
    _check_degenerate(hp)
    # Gamma(-1/2) = -2 sqrt(pi)
    return complex(
        gamma_complex(num) * (-2.0 * _SQRT_PI) * rgamma_complex(hp.a) * rgamma_complex(hp.b)
    )


@dataclass
class SpectralReport:
    p: float
    search_region: tuple[float, float, float, float]
    eigenvalues_found: list[complex]
    c0_at_eigenvalues: list[complex]
    argument_principle_count: int
    c0_samples: np.ndarray = field(repr=False)
    sample_lambdas: np.ndarray = field(repr=False)
    indicial_exponents: tuple = (0.0, "(p-3)/(p-1) - lambda")

    @property
    def consistent(self) -> bool:
        return self.argument_principle_count == len(self.eigenvalues_found)


def _newton(fun, z0: complex, tol: float = 1e-14, max_iter: int = 200):
    z = complex(z0)
    for _ in range(max_iter):
        fz = complex(fun(z))
        if fz == 0.0:
            return z, True
        d = 1e-6 * max(1.0, abs(z))
        dfz = complex((fun(z + d) - fun(z - d)) / (2.0 * d))
        if dfz == 0.0:
            return z, False
        step = fz / dfz
        z -= step
        if abs(step) <= tol * max(1.0, abs(z)):
            return z, True
    return z, False


def _winding_number(fun, re_lo, re_hi, im_lo, im_hi, n0: int = 400, n_max: int = 200_000) -> int:
    corners = [complex(re_lo, im_lo), complex(re_hi, im_lo), complex(re_hi, im_hi), complex(re_lo, im_hi)]
    n = n0
    while True:
        pts = []
        for k in range(4):
            z0, z1 = corners[k], corners[(k + 1) % 4]
            s = np.linspace(0.0, 1.0, n, endpoint=False)
            pts.append(z0 + (z1 - z0) * s)
        path = np.concatenate(pts + [corners[:1]])
        vals = fun(path)
        if np.any(vals == 0):
            raise ValueError("a zero lies on the counting contour")
        dphi = np.angle(vals[1:] / vals[:-1])
        if np.max(np.abs(dphi)) < 0.5 or n >= n_max:
            return int(round(np.sum(dphi) / (2.0 * np.pi)))
        n *= 2


def find_eigenvalues(
    p: float,
    region: tuple[float, float, float, float],
    admissible_only: bool = True,
    spacing: float = 0.1,
    c0_tol: float = 1e-8,
) -> SpectralReport:
    """Locate the zeros of the connection coefficient in a rectangle.

    ``region = (re_lo, re_hi, im_lo, im_hi)``.  The entire function ``h`` is
    scanned on a lattice, local minima of ``|h|`` are refined by Newton's method,
    and the number of zeros is confirmed by the argument principle on the
    rectangle boundary.  With ``admissible_only`` the rectangle must lie strictly
    right of the line ``Re lambda = -2/(p-1)``.
    """
    re_lo, re_hi, im_lo, im_hi = map(float, region)
    if not (re_hi > re_lo and im_hi > im_lo):
        raise ValueError("empty search region")
    if not p > 3:
        raise ValueError("p must exceed 3")
    edge = -2.0 / (p - 1.0)
    if admissible_only and re_lo <= edge:
        raise ValueError(f"region must satisfy Re lambda > {edge:.6g}")

    def fun(z):
        return h_entire(z, p)

    pad = 2.0 * spacing
    xs = np.arange(re_lo - pad, re_hi + pad + 0.5 * spacing, spacing)
    ys = np.arange(im_lo - pad, im_hi + pad + 0.5 * spacing, spacing)
    Z = xs[None, :] + 1j * ys[:, None]
    H = np.abs(fun(Z.ravel())).reshape(Z.shape)
    inner = H[1:-1, 1:-1]
    is_min = np.ones_like(inner, dtype=bool)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di == 0 and dj == 0:
                continue
            nb = H[1 + di : H.shape[0] - 1 + di, 1 + dj : H.shape[1] - 1 + dj]
            is_min &= inner <= nb
    seeds = Z[1:-1, 1:-1][is_min]

    roots: list[complex] = []
    for z0 in seeds:
        z, ok = _newton(fun, z0)
        if not ok:
            continue
        if not (re_lo <= z.real <= re_hi and im_lo <= z.imag <= im_hi):
            continue
        # snap rounding noise in the imaginary part of real roots
        if abs(z.imag) < 1e-12:
            z = complex(z.real, 0.0)
        if all(abs(z - r) > 1e-7 for r in roots):
            roots.append(z)

    c0s = []
    kept = []
    for z in sorted(roots, key=lambda w: (-w.real, w.imag)):
        hp = hyp_params(z, p)
        num = hp.a + hp.b + 1.0 - hp.c
        if _is_nonpos_int(num, 1e-12):
            # c0 itself has a removable 0*inf here; fall back on h
            val = complex(fun(z))
        else:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", DegenerateConnectionWarning)
                val = complex(gamma_complex(num) * _SQRT_PI * fun(z))
        if abs(val) <= c0_tol:
            kept.append(z)
            c0s.append(val)

    count = _winding_number(fun, re_lo, re_hi, im_lo, im_hi)
    # coarse samples of c0 for reporting
    sx = np.linspace(re_lo, re_hi, 41)
    sy = np.linspace(im_lo, im_hi, 41)
    SL = sx[None, :] + 1j * sy[:, None]
    num = SL + 2.0 / (p - 1.0)
    with np.errstate(all="ignore"):
        C0 = gamma_complex(num.ravel()).reshape(SL.shape) * _SQRT_PI * fun(SL.ravel()).reshape(SL.shape)
    return SpectralReport(
        p=float(p),
        search_region=(re_lo, re_hi, im_lo, im_hi),
        eigenvalues_found=kept,
        c0_at_eigenvalues=c0s,
        argument_principle_count=count,
        c0_samples=C0,
        sample_lambdas=SL,
    )


def _f(a, b, c, z):
    return hyp2f1(a, b, c, z)


def eigenfunction_profile(lam, p: float, grid: Grid, ops=None, tol: float = 1e-6) -> StateVector:
    """Eigenfunction of the linearised operator for an eigenvalue ``lam``.

    Built from ``u(rho) = F(a, b; a+b+1-c; 1-rho^2)``, ``u2 = u'`` and
    ``u1 = rho u2 + (lam + (3-p)/(p-1)) (u - u(0))``, normalised so that
    ``u2(1) = 1``.  The residual ``||(L - lam) u|| / ||u||`` is checked against
    the collocation operator and a ``ValueError`` is raised above ``tol``.
    """
    from .core import derive_params
    from .linop import build_operators
    from .norms import h_gram

    hp = hyp_params(lam, p)
    a, b, c = hp.a, hp.b, hp.c
    cc = a + b + 1.0 - c
    if _is_nonpos_int(cc):
        raise ValueError("lambda is not admissible: connection parameter is a pole")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateConnectionWarning)
        c0 = connection_c0(hp.lam, p)
        c1 = connection_c1(hp.lam, p)
    rho = grid.nodes
    z = rho**2
    u = np.empty(grid.n, dtype=complex)
    du = np.empty(grid.n, dtype=complex)

    near = z <= 0.5
    if near.any():
        r, zz = rho[near], z[near]
        G = _f(a + 0.5, b + 0.5, 1.5, zz)
        dG = (a + 0.5) * (b + 0.5) / 1.5 * _f(a + 1.5, b + 1.5, 2.5, zz)
        u[near] = c0 * _f(a, b, c, zz) + c1 * r * G
        du[near] = c0 * 2.0 * r * (a * b / c) * _f(a + 1.0, b + 1.0, c + 1.0, zz) + c1 * (G + 2.0 * zz * dG)
    far = ~near
    if far.any():
        r, w = rho[far], 1.0 - z[far]
        u[far] = _f(a, b, cc, w)
        du[far] = -2.0 * r * (a * b / cc) * _f(a + 1.0, b + 1.0, cc + 1.0, w)

    u0 = c0
    beta = hp.lam + (3.0 - p) / (p - 1.0)
    u1 = rho * du + beta * (u - u0)
    u2 = du
    scale = u2[-1]
    if abs(scale) < 1e-300:
        scale = u2[np.argmax(np.abs(u2))]
    u1, u2 = u1 / scale, u2 / scale
    u1[0] = 0.0
    if np.all(np.abs(u1.imag) == 0) and np.all(np.abs(u2.imag) == 0):
        u1, u2 = u1.real, u2.real

    if ops is None:
        ops = build_operators(grid, derive_params(p, 1.0 / (p - 1.0)))
    x = np.concatenate([u1, u2])
    res = ops.L @ x - hp.lam * x
    W = h_gram(grid)
    rel = math.sqrt(abs(np.vdot(res, W @ res)) / abs(np.vdot(x, W @ x)))
    if not rel <= tol:
        raise ValueError(f"lambda={hp.lam} is not an eigenvalue: residual {rel:.3e}")
    return StateVector(u1, u2, grid)
