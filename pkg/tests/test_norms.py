import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.polynomial import chebyshev as cheb

from blowup_lab.core import RadialDataPair, psi_T, psi_T_t, reconstruct_perturbation, relative_data
from blowup_lab.grid import Grid, StateVector, make_grid
from blowup_lab.norms import (
    frak_h_norm,
    h_gram,
    h_norm,
    higher_energy_norm,
    inner_1,
    k_op,
    similarity_eh_norm,
    triple_norm_1,
)


def _state(grid, f1, f2):
    return StateVector(f1(grid.nodes) * np.ones(grid.n), f2(grid.nodes) * np.ones(grid.n), grid)


def _random_states(grid, count, seed, degree=8):
    rng = np.random.default_rng(seed)
    t = 2 * grid.nodes - 1
    for _ in range(count):
        c1 = rng.standard_normal(degree + 1) / (1 + np.arange(degree + 1))
        c2 = rng.standard_normal(degree + 1) / (1 + np.arange(degree + 1))
        u1 = cheb.chebval(t, c1)
        u1 -= u1[0]
        u1[0] = 0.0
        yield StateVector(u1, cheb.chebval(t, c2), grid)


def test_h_norm_examples(grid64):
    assert h_norm(_state(grid64, lambda r: r, lambda r: 1.0)) == pytest.approx(math.sqrt(7 / 3), rel=1e-13)
    assert h_norm(StateVector.zeros(grid64)) == 0.0
    assert h_norm(_state(grid64, lambda r: 0.0, lambda r: r)) == pytest.approx(math.sqrt(4 / 3), rel=1e-13)


def test_triple_norm_examples(grid64):
    assert triple_norm_1(_state(grid64, lambda r: r, lambda r: 1.0)) == pytest.approx(math.sqrt(5), rel=1e-13)
    assert triple_norm_1(_state(grid64, lambda r: r, lambda r: -r)) == pytest.approx(math.sqrt(2), rel=1e-13)
    assert triple_norm_1(StateVector.zeros(grid64)) == 0.0


def test_inner_1_matches_triple_norm(grid64):
    for u in _random_states(grid64, 5, 3):
        assert inner_1(u, u).real == pytest.approx(triple_norm_1(u) ** 2, rel=1e-12)


def test_h_gram_matches_h_norm(grid64):
    W = h_gram(grid64)
    for u in _random_states(grid64, 5, 4):
        x = u.as_array()
        assert math.sqrt(x @ W @ x) == pytest.approx(h_norm(u), rel=1e-12)


def test_higher_energy_norm_examples():
    pair = RadialDataPair.from_functions(lambda r: 1.0, lambda r: 0.0)
    assert higher_energy_norm(pair, 1.0) == pytest.approx(1.0, rel=1e-12)
    zero = RadialDataPair.zeros()
    for R in (0.3, 1.0, 1.5):
        assert higher_energy_norm(zero, R) == 0.0


def test_higher_energy_norm_closed_form():
    # f = r^2, g = r on [0, 1]: (r f)' = 3 r^2, (r f)'' = 6 r, r g = r^2, (r g)' = 2 r
    pair = RadialDataPair.from_functions(lambda r: r**2, lambda r: r)
    expected = 9 / 5 + 36 / 3 + 1 / 5 + 4 / 3
    assert higher_energy_norm(pair, 1.0) ** 2 == pytest.approx(expected, rel=1e-11)


def test_higher_energy_norm_rejects():
    pair = RadialDataPair.zeros()
    with pytest.raises(ValueError):
        higher_energy_norm(pair, 2.0)
    with pytest.raises(ValueError):
        higher_energy_norm(pair, 0.0)


@pytest.mark.parametrize("p", [4.0, 5.0, 7.0])
def test_higher_energy_norm_of_blowup_profile_scaling(p):
    from blowup_lab.core import derive_params

    pr = derive_params(p, 0.5 * 2 / (p - 1))
    ss = np.array([1e-2, 3e-3, 1e-3, 3e-4])
    vals = []
    for s in ss:
        t = 1.0 - s
        pair = RadialDataPair.from_functions(
            lambda r: psi_T(t, r, 1.0, pr), lambda r: psi_T_t(t, r, 1.0, pr), n=48, radius=s
        )
        vals.append(higher_energy_norm(pair, s))
    slope = np.polyfit(np.log(ss), np.log(vals), 1)[0]
    # the squared norm is c s^{-(p+3)/(p-1)} (1 + O(s^2))
    assert slope == pytest.approx(-(p + 3) / (2 * (p - 1)), abs=2e-3)


def test_k_op_examples(grid64):
    rho = grid64.nodes
    assert np.allclose(k_op(np.ones(64), grid64), 1.0, atol=1e-14)
    assert np.allclose(k_op(rho, grid64), rho / 2, atol=1e-14)


@settings(max_examples=50)
@given(
    a=st.floats(-5, 5),
    b=st.floats(-5, 5),
    seed=st.integers(0, 2**31),
)
def test_k_op_linear(a, b, seed):
    grid = make_grid(32)
    rng = np.random.default_rng(seed)
    u, v = rng.standard_normal((2, 32))
    lhs = k_op(a * u + b * v, grid)
    rhs = a * k_op(u, grid) + b * k_op(v, grid)
    assert np.max(np.abs(lhs - rhs)) <= 1e-11 * (1 + abs(a) + abs(b)) * (1 + np.max(np.abs(u)) + np.max(np.abs(v)))


def test_k_op_sup_bound(grid64):
    rng = np.random.default_rng(11)
    rho = grid64.nodes
    ratios = []
    for _ in range(500):
        K = 5
        a = rng.standard_normal(K + 1)
        b = rng.standard_normal(K + 1)
        k = np.arange(K + 1)
        u = (a[None, :] * np.cos(np.pi * k[None, :] * rho[:, None]) + b[None, :] * np.sin(np.pi * k[None, :] * rho[:, None])).sum(1)
        du = grid64.derivative(u)
        h1 = math.sqrt(grid64.integrate(u**2 + du**2))
        ratios.append(np.max(np.abs(k_op(u, grid64))) / h1)
    c = max(ratios)
    # sup |Ku| <= sup |u| <= sqrt(2) ||u||_{H^1} on the unit interval (Sobolev constant coth(1)^{1/2})
    assert c <= math.sqrt(1 / math.tanh(1.0)) + 1e-10


def _ratio_interval(n, count=1000, seed=5):
    grid = make_grid(n)
    r = [triple_norm_1(u) / h_norm(u) for u in _random_states(grid, count, seed)]
    return min(r), max(r)


def test_norm_equivalence_interval_stable():
    lo64, hi64 = _ratio_interval(64)
    lo128, hi128 = _ratio_interval(128)
    assert 0 < lo64 <= hi64 < math.inf
    assert abs(lo64 - lo128) <= 0.05 * lo64
    assert abs(hi64 - hi128) <= 0.05 * hi64


def test_triple_norm_definite(grid64):
    # the only states killed by the seminorm part are constants (c1, c2) with u1(0)=0, i.e. (0, c),
    # and then the boundary term |c| is positive; so zero triple norm forces u = 0
    u = StateVector(np.zeros(64), np.zeros(64), grid64)
    assert triple_norm_1(u) <= 1e-12 and h_norm(u) <= 1e-10
    for c in (1e-3, 1.0):
        v = StateVector(np.zeros(64), c * np.ones(64), grid64)
        assert triple_norm_1(v) == pytest.approx(c, rel=1e-14)
    for u in _random_states(grid64, 200, 8):
        if triple_norm_1(u) <= 1e-12:
            assert h_norm(u) <= 1e-10


def test_relative_data_norm_identity(params5):
    d = 1e-2
    free = RadialDataPair.from_functions(
        lambda r: params5.amp + d * np.exp(-((r - 0.3) / 0.3) ** 2),
        lambda r: params5.free_rate * params5.amp + d * np.sin(r) ** 2,
        n=96,
    )
    v = relative_data(free, params5)
    perturb = RadialDataPair(free.f - params5.amp, free.g - params5.free_rate * params5.amp, free.grid)
    assert frak_h_norm(v) == pytest.approx(higher_energy_norm(perturb, 1.5), rel=1e-9)


def test_similarity_eh_identity(params5, grid64):
    rho = grid64.nodes
    phi = StateVector(np.sin(2 * rho) * rho, np.exp(-rho) * np.cos(rho), grid64)
    for tau in (0.5, 2.0, 4.0):
        s = math.exp(-tau)
        _, r, dpsi, dpsi_t = reconstruct_perturbation(phi, tau, 1.0, params5)
        pair = RadialDataPair(dpsi, dpsi_t, Grid(64, 0.0, s))
        assert higher_energy_norm(pair, s) == pytest.approx(similarity_eh_norm(phi, s, 5.0), rel=1e-9)
