import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nls3lab.evolution import EvolutionConfig
from nls3lab.radial import Field3, make_grid
from nls3lab.special import (
    SeedToleranceError,
    SpectrumCollision,
    _cub,
    _quad,
    _solve_shifted,
    build_series,
    default_t0,
    fit_rate,
    make_initial_data,
    order_coefficient,
    remainder,
    residual_epsilon,
    residual_floor,
    seed_time,
    transfer,
    verify_special,
)
from nls3lab.states import energy, nonlinearity


def _rand(rng, n, scale=1.0):
    return scale * (rng.normal(size=(3, n)) + 1j * rng.normal(size=(3, n)))


@given(st.integers(0, 2**32 - 1))
def test_remainder_is_quadratic_plus_cubic(seed):
    rng = np.random.default_rng(seed)
    Q = np.abs(rng.normal(size=(3, 20)))
    h = _rand(rng, 20)
    assert np.allclose(remainder(Q, h), _quad(Q, h, h) + _cub(h, h, h), atol=1e-12)


@given(st.integers(0, 2**32 - 1))
def test_remainder_definition(seed):
    # R(h) = F(Q + h) - F(Q) - dF_Q(h) with dF from a complex-step-free central difference
    rng = np.random.default_rng(seed)
    Q = np.abs(rng.normal(size=(3, 10)))
    h = _rand(rng, 10, 0.3)
    eps = 1e-6
    dF = (nonlinearity(Q + eps * h) - nonlinearity(Q - eps * h)) / (2 * eps)
    ref = nonlinearity(Q + h) - nonlinearity(Q) - dF
    assert np.allclose(remainder(Q, h), ref, atol=1e-8)


def test_order_two_coefficient(balanced256):
    _, gs, ops, pair = balanced256
    Q = gs.Qvec.values.real
    g1 = (pair.e1 + 1j * pair.e2).reshape(3, -1)
    assert np.allclose(order_coefficient(Q, {1: g1}, 2), _quad(Q, g1, g1))


@given(st.floats(0.2, 3.0))
def test_series_homogeneous_in_a(balanced256, a):
    _, _, ops, pair = balanced256
    s1 = build_series(1.0, 3, pair, ops)
    sa = build_series(a, 3, pair, ops)
    sm = build_series(-a, 3, pair, ops)
    for j, (g1, ga, gm) in enumerate(zip(s1.g, sa.g, sm.g), start=1):
        assert np.allclose(ga, a**j * g1, rtol=1e-9, atol=1e-12 * np.abs(g1).max())
        assert np.allclose(gm, (-1) ** j * ga, rtol=1e-9, atol=1e-12 * np.abs(ga).max())


def test_zero_coefficient_gives_ground_state(balanced256):
    _, gs, ops, pair = balanced256
    s = build_series(0.0, 4, pair, ops)
    assert np.all(s.U(1.0) == 0)
    assert residual_epsilon(s, 0.0) < 1e-8 * gs.K
    assert s.t0 == 0.0


@pytest.mark.parametrize("k", [1, 2, 3])
def test_residual_rate(balanced256, k):
    _, _, ops, pair = balanced256
    lam = pair.lambda1
    s = build_series(-1.0, k, pair, ops)
    ts = s.t0 + np.linspace(0, 3 / lam, 7)
    eps = [residual_epsilon(s, t) for t in ts]
    assert min(eps) > 1e3 * residual_floor(s)
    assert fit_rate(ts, eps) / lam == pytest.approx(k + 1, rel=0.05)


def test_residual_decreases_with_order(balanced256):
    _, _, ops, pair = balanced256
    t0 = default_t0(-1.0, pair.lambda1)
    eps = [residual_epsilon(build_series(-1.0, k, pair, ops), t0) for k in (1, 2, 3, 4)]
    assert all(a > b for a, b in zip(eps, eps[1:]))


def test_order_bounds(balanced256):
    _, _, ops, pair = balanced256
    for k in (0, 9):
        with pytest.raises(ValueError):
            build_series(1.0, k, pair, ops)


def test_collision_detected(balanced256):
    _, _, ops, pair = balanced256
    rhs = np.ones((3, ops.n), dtype=complex)
    with pytest.raises(SpectrumCollision):
        _solve_shifted(ops, pair.lambda1, rhs)


def test_seed_tolerance(balanced256):
    _, gs, ops, pair = balanced256
    s = build_series(-1.0, 2, pair, ops)
    with pytest.raises(SeedToleranceError):
        make_initial_data(s, seed_tol=1e-14 * gs.K)
    with pytest.raises(SeedToleranceError):
        seed_time(s, 1e-30, max_shift=1.0)
    t = seed_time(s, 1e-8 * gs.K)
    assert t >= s.t0
    assert residual_epsilon(s, t) <= 1e-8 * gs.K


def test_initial_data_near_threshold_energy(masses, balanced256):
    _, gs, ops, pair = balanced256
    s = build_series(-1.0, 6, pair, ops)
    t = seed_time(s, 1e-10 * gs.K)
    u = make_initial_data(s, t, seed_tol=1e-10 * gs.K)
    EQ = energy(gs.Qvec, masses)
    assert abs(energy(u, masses) - EQ) < 1e-8 * abs(EQ)


def test_fit_rate_exact():
    t = np.linspace(0, 10, 30)
    assert fit_rate(t, 3 * np.exp(-0.7 * t)) == pytest.approx(0.7, rel=1e-12)
    assert np.isnan(fit_rate(t[:2], [1.0, 0.5]))


def test_transfer_smooth_field():
    a = make_grid(np.inf, 512)
    b = make_grid(np.inf, 700, L=20.0)
    f = Field3(a, np.stack([np.exp(-(a.r**2))] * 3))
    out = transfer(f, b)
    assert np.max(np.abs(out.values - np.exp(-(b.r**2)))) < 1e-6


@pytest.mark.parametrize("a", [-1.0, 1.0])
def test_forward_decay_rate(balanced256, a):
    _, gs, ops, pair = balanced256
    rep = verify_special(a, 6, pair, ops, cfg=EvolutionConfig(dt=0.05, sample_every=10), seed_tol=1e-10 * gs.K, forward_periods=4, run_backward=False)
    assert rep.forward["status"] == "completed"
    assert rep.forward["delta_rate_over_lambda1"] == pytest.approx(1.0, abs=0.1)
    assert np.sign(rep.forward["K0_minus_KQ"]) == np.sign(a)
    assert rep.label.startswith("diagnostic")
