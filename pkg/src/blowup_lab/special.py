"""Complex Gamma function and the Gauss hypergeometric series.

Only the regimes needed for the connection-coefficient analysis are covered:
``|z| <= 50`` for Gamma and ``|z| < 1`` for 2F1.
"""

from __future__ import annotations

import math

import numpy as np

# Lanczos coefficients, g = 7, n = 9
_LANCZOS_G = 7.0
_LANCZOS = np.array(
    [
        0.99999999999980993,
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ]
)
_SQRT_2PI = math.sqrt(2.0 * math.pi)


class SeriesConvergenceError(RuntimeError):
    """Raised when a hypergeometric series fails to converge."""

    def __init__(self, msg, partial_sum=None, last_term=None, terms=None):
        super().__init__(msg)
        self.partial_sum = partial_sum
        self.last_term = last_term
        self.terms = terms


def _is_pole(z: np.ndarray) -> np.ndarray:
    return (z.imag == 0) & (z.real <= 0) & (z.real == np.round(z.real))


def _sinpi(z: np.ndarray) -> np.ndarray:
    # exact argument reduction keeps sin(pi z) accurate near the integers
    m = np.round(z.real)
    frac = z - m
    sign = np.where(np.mod(m, 2) == 0, 1.0, -1.0)
    return sign * np.sin(np.pi * frac)


def _lanczos(w: np.ndarray) -> np.ndarray:
    """Gamma(w + 1) for Re w >= -1/2."""
    x = np.full(w.shape, _LANCZOS[0], dtype=complex)
    for i in range(1, len(_LANCZOS)):
        x = x + _LANCZOS[i] / (w + i)
    t = w + _LANCZOS_G + 0.5
    return _SQRT_2PI * np.exp((w + 0.5) * np.log(t) - t) * x


def gamma_complex(z):
    """Gamma function for complex arguments.

    Poles at ``0, -1, -2, ...`` are flagged by returning complex infinity.
    """
    z = np.asarray(z, dtype=complex)
    scalar = z.ndim == 0
    z = np.atleast_1d(z)
    out = np.empty(z.shape, dtype=complex)
    pole = _is_pole(z)
    refl = (z.real < 0.5) & ~pole
    direct = ~refl & ~pole
    if direct.any():
        out[direct] = _lanczos(z[direct] - 1.0)
    if refl.any():
        zr = z[refl]
        # within ~1e-308 of a pole the true value exceeds the double range
        den = _sinpi(zr) * _lanczos(-zr)
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            val = np.pi / den
        out[refl] = np.where(den == 0, complex(np.inf, 0.0), val)
    out[pole] = complex(np.inf, 0.0)
    return out[0] if scalar else out


def rgamma_complex(z):
    """Reciprocal Gamma ``1/Gamma(z)``, an entire function (exactly 0 at the poles)."""
    z = np.asarray(z, dtype=complex)
    scalar = z.ndim == 0
    z = np.atleast_1d(z)
    out = np.empty(z.shape, dtype=complex)
    refl = z.real < 0.5
    if (~refl).any():
        out[~refl] = 1.0 / _lanczos(z[~refl] - 1.0)
    if refl.any():
        zr = z[refl]
        out[refl] = _sinpi(zr) * _lanczos(-zr) / np.pi
    return out[0] if scalar else out


def _series(a, b, c, z: np.ndarray, tol: float, max_terms: int) -> np.ndarray:
    total = np.ones(z.shape, dtype=complex)
    term = np.ones(z.shape, dtype=complex)
    quiet = 0
    for k in range(max_terms):
        term = term * ((a + k) * (b + k) / ((c + k) * (k + 1.0))) * z
        total = total + term
        small = np.all(np.abs(term) <= tol * np.maximum(np.abs(total), 1e-300))
        quiet = quiet + 1 if small else 0
        if quiet >= 2 or not np.any(term):
            return total
    raise SeriesConvergenceError(
        f"2F1 series did not converge in {max_terms} terms",
        partial_sum=total,
        last_term=term,
        terms=max_terms,
    )


def hyp2f1(a, b, c, z, tol: float = 1e-16, max_terms: int = 200_000):
    """Gauss hypergeometric function ``2F1(a, b; c; z)`` for ``|z| < 1``.

    Power series for ``|z| <= 0.7``; Pfaff's transformation
    ``(1-z)^{-a} 2F1(a, c-b; c; z/(z-1))`` where it shrinks the argument;
    otherwise the (slowly converging) direct series.
    """
    a, b, c = complex(a), complex(b), complex(c)
    if c.imag == 0 and c.real <= 0 and c.real == round(c.real):
        raise ValueError(f"c = {c} is a non-positive integer")
    z = np.asarray(z, dtype=complex)
    scalar = z.ndim == 0
    z = np.atleast_1d(z)
    out = np.empty(z.shape, dtype=complex)
    terminating = any(x.imag == 0 and x.real <= 0 and x.real == round(x.real) for x in (a, b))
    az = np.abs(z)
    if terminating:
        out[:] = _series(a, b, c, z, tol, max_terms)
        return out[0] if scalar else out
    if np.any(az >= 1.0):
        raise ValueError("hyp2f1 is only implemented for |z| < 1")
    with np.errstate(divide="ignore", invalid="ignore"):
        w = z / (z - 1.0)
    inner = az <= 0.7
    pfaff = ~inner & (np.abs(w) < az)
    slow = ~inner & ~pfaff
    if inner.any():
        out[inner] = _series(a, b, c, z[inner], tol, max_terms)
    if pfaff.any():
        zp = z[pfaff]
        out[pfaff] = (1.0 - zp) ** (-a) * _series(a, c - b, c, w[pfaff], tol, max_terms)
    if slow.any():
        out[slow] = _series(a, b, c, z[slow], tol, max_terms)
    return out[0] if scalar else out
