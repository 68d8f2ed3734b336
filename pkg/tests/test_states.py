import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nls3lab.radial import DomainOverflowWarning, Field3, MassTriple, make_grid
from nls3lab.states import (
    BUBBLE_ENERGY,
    apply_symmetry,
    balanced_grid,
    bubble,
    bubble_dr,
    bubble_integrals,
    charges,
    component_coefficients,
    discrete_bubble,
    DiscreteGroundStateError,
    energy,
    functionals,
    gn_constant,
    gn_constant_fourth_root,
    ground_state,
    kinetic,
    nonlinearity,
    potential,
    sobolev_g4,
    stationary_residual,
)

masses_st = st.tuples(st.floats(0.2, 5.0), st.floats(0.2, 5.0), st.floats(0.2, 5.0)).map(lambda t: MassTriple(*t))


def test_bubble_integrals_closed_form():
    q4, qg = bubble_integrals()
    assert q4 == pytest.approx(BUBBLE_ENERGY, rel=1e-12)
    assert qg == pytest.approx(BUBBLE_ENERGY, rel=1e-12)


def test_bubble_solves_critical_equation():
    # -Delta Q = Q^3 in R^4, checked pointwise with exact derivatives
    r = np.linspace(0.01, 30, 5000)
    Q = bubble(r)
    Qrr = np.gradient(bubble_dr(r), r, edge_order=2)
    lap = Qrr + 3 * bubble_dr(r) / r
    assert np.max(np.abs(-lap - Q**3)) < 1e-4


@given(masses_st)
def test_component_coefficients_solve_algebraic_system(m):
    # Q_k = c_k Q solves -(1/2m_k) Delta Q_k = F_k(Q) iff these hold
    c1, c2, c3 = component_coefficients(m)
    assert c1 / (2 * m.m1) == pytest.approx(2 * c1 * c2 * c3, rel=1e-12)
    assert c2 / (2 * m.m2) == pytest.approx(c1**2 * c3, rel=1e-12)
    assert c3 / (2 * m.m3) == pytest.approx(c1**2 * c2, rel=1e-12)


def test_stationary_residual_second_order(masses):
    errs = []
    for n in (512, 1024, 2048):
        g = make_grid(np.inf, n)
        res = stationary_residual(ground_state(masses, g))
        errs.append(np.max(np.abs(res)))
    assert errs[0] / errs[1] > 3.5 and errs[1] / errs[2] > 3.5


@given(masses_st)
def test_pohozaev_any_masses(m):
    g = make_grid(np.inf, 2048)
    gs = ground_state(m, g)
    rep = functionals(gs.Qvec, m, gs)
    assert abs(rep.K - 4 * rep.P) / rep.K < 1e-5
    assert rep.E == pytest.approx(rep.K / 2, rel=1e-5)
    assert rep.delta_abs == 0.0


@given(masses_st)
def test_gn_ratio_at_ground_state(m):
    g = make_grid(np.inf, 2048)
    gs = ground_state(m, g)
    rep = functionals(gs.Qvec, m, gs)
    assert rep.gn_ratio == pytest.approx(gn_constant(m), rel=1e-5)


def test_sobolev_constant_value():
    # G4^4 = int Q^4 / (int |grad Q|^2)^2 = 3 / (32 pi^2)
    assert sobolev_g4() ** 4 == pytest.approx(3 / (32 * np.pi**2), rel=1e-12)


def test_fourth_root_variant_is_not_sharp(masses, grid512, gs512):
    rep = functionals(gs512.Qvec, masses, gs512)
    assert abs(rep.gn_ratio - gn_constant_fourth_root(masses)) > 0.1 * rep.gn_ratio


@given(st.floats(-np.pi, np.pi), st.floats(-np.pi, np.pi))
def test_phase_action_preserves_functionals(masses, gs512, t1, t2):
    u = gs512.Qvec * 0.7 + 0.1j * gs512.Qp
    v = apply_symmetry(u, t1, t2, 1.0)
    assert kinetic(v, masses) == pytest.approx(kinetic(u, masses), rel=1e-12)
    assert potential(v) == pytest.approx(potential(u), rel=1e-10, abs=1e-12)
    assert np.allclose(charges(v), charges(u), rtol=1e-12)


@given(st.floats(0.7, 1.4))
def test_scaling_preserves_critical_functionals(masses, lam):
    g = make_grid(np.inf, 2048)
    gs = ground_state(masses, g)
    v = apply_symmetry(gs.Qvec, 0.0, 0.0, lam)
    assert kinetic(v, masses) == pytest.approx(gs.K, rel=1e-5)
    assert potential(v) == pytest.approx(potential(gs.Qvec), rel=1e-5)
    assert not v.warnings


def test_scaling_matches_closed_form(masses):
    g = make_grid(np.inf, 1024)
    gs = ground_state(masses, g)
    lam = 1.3
    v = apply_symmetry(gs.Qvec, 0.0, 0.0, lam)
    exact = gs.coeffs[:, None] * bubble(g.r / lam)[None, :] / lam
    assert np.max(np.abs(v.values - exact)) < 1e-7


def test_scaling_overflow_warns(masses, gs512):
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        v = apply_symmetry(gs512.Qvec, 0.0, 0.0, 1e-4)
    assert any(issubclass(w.category, DomainOverflowWarning) for w in rec)
    assert v.warnings


def test_scaling_rejects_nonpositive(gs512):
    with pytest.raises(ValueError):
        apply_symmetry(gs512.Qvec, 0.0, 0.0, 0.0)


def test_lambdaQ_is_dilation_generator(masses):
    g = make_grid(np.inf, 1024)
    gs = ground_state(masses, g)
    eps = 1e-5
    up = apply_symmetry(gs.Qvec, 0, 0, 1 + eps).values.real
    um = apply_symmetry(gs.Qvec, 0, 0, 1 - eps).values.real
    deriv = -(up - um) / (2 * eps)
    assert np.max(np.abs(deriv - gs.LambdaQ.values.real)) < 1e-5


def test_phase_generators_tangent(masses, gs512):
    # d/dtheta of the phase action at 0 is i (Q1, 2Q2, 0) and i (Q1, 0, 2Q3)
    eps = 1e-6
    d1 = (apply_symmetry(gs512.Qvec, eps, 0, 1).values - gs512.Qvec.values) / eps
    d2 = (apply_symmetry(gs512.Qvec, 0, eps, 1).values - gs512.Qvec.values) / eps
    Q = gs512.Qvec.values.real
    assert np.allclose(d1.imag, [Q[0], 2 * Q[1], 0 * Q[2]], atol=1e-5)
    assert np.allclose(d2.imag, [Q[0], 0 * Q[1], 2 * Q[2]], atol=1e-5)
    # Qp, Qq span the same plane
    Qp, Qq = gs512.Qp.values.real, gs512.Qq.values.real
    A = np.stack([d1.imag.ravel(), d2.imag.ravel()], axis=1)
    for v in (Qp.ravel(), Qq.ravel()):
        coef, *_ = np.linalg.lstsq(A, v, rcond=None)
        assert np.max(np.abs(A @ coef - v)) < 1e-4


@given(st.integers(0, 2**32 - 1))
def test_gn_inequality_random_fields(masses, seed):
    g = make_grid(np.inf, 512)
    gs = ground_state(masses, g)
    rng = np.random.default_rng(seed)
    r = g.r
    vals = sum(
        (rng.normal(size=3) + 1j * rng.normal(size=3))[:, None] * np.exp(-((r / rng.uniform(0.5, 5)) ** 2))[None, :]
        for _ in range(3)
    )
    rep = functionals(Field3(g, vals), masses, gs)
    assert rep.gn_ratio <= gn_constant(masses) * (1 + 1e-4)


def test_nonlinearity_is_gradient_of_potential(grid512):
    rng = np.random.default_rng(3)
    r = grid512.r
    u = Field3(grid512, (rng.normal(size=(3, 1)) + 1j * rng.normal(size=(3, 1))) * np.exp(-(r**2) / 4))
    v = Field3(grid512, (rng.normal(size=(3, 1)) + 1j * rng.normal(size=(3, 1))) * np.exp(-(r**2) / 9))
    eps = 1e-6
    fd = (potential(u + v * eps) - potential(u - v * eps)) / (2 * eps)
    F = nonlinearity(u)
    from nls3lab.radial import integrate

    # dP[v] = Re int sum_k conj(F_k(u)) v_k
    ana = float(np.real(integrate(grid512, np.sum(np.conj(F) * v.values, axis=0))))
    assert fd == pytest.approx(ana, rel=1e-6)


def test_energy_definition(masses, gs512):
    u = gs512.Qvec * 0.8
    assert energy(u, masses) == pytest.approx(kinetic(u, masses) - 2 * potential(u), rel=1e-14)


def test_report_json_keys(masses, gs512):
    import json

    rep = functionals(gs512.Qvec, masses, gs512)
    keys = set(json.loads(rep.to_json()))
    assert keys == {"K", "P", "E", "nehari", "delta_signed", "delta_abs", "charge12", "charge13", "gn_ratio"}


def test_functionals_reject_foreign_grid(masses, gs512):
    other = Field3.zeros(make_grid(np.inf, 100))
    with pytest.raises(ValueError):
        functionals(other, masses, gs512)


def test_balanced_grid_exact_equilibrium(masses):
    g = balanced_grid(512)
    q, beta = discrete_bubble(g)
    assert abs(beta) < 1e-12
    gs = ground_state(masses, g, discrete=True)
    assert np.max(np.abs(stationary_residual(gs))) < 1e-10
    assert np.max(np.abs(q - bubble(g.r))) < 1e-3


def test_discrete_bubble_needs_balanced_grid():
    # on a generic grid the bordered system has a nonzero multiplier
    g = make_grid(np.inf, 512, L=8.0)
    try:
        _, beta = discrete_bubble(g)
    except DiscreteGroundStateError:
        return
    assert abs(beta) > 1e-10
