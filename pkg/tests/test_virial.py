import csv

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nls3lab.radial import Field3, MassTriple, make_grid
from nls3lab.states import balanced_grid, ground_state
from nls3lab.virial import (
    DEFAULT_TRIPLES,
    PROFILES,
    SCAN_COLUMNS,
    DomainOverflowError,
    f_infinity_identity,
    identity_defects,
    identity_scan,
    make_weight,
    scan_datum,
    scan_heatmap,
    virial_functionals,
)

masses_st = st.tuples(st.floats(0.2, 5.0), st.floats(0.2, 5.0), st.floats(0.2, 5.0)).map(lambda t: MassTriple(*t))


@pytest.fixture(scope="module")
def grid1024():
    return make_grid(np.inf, 1024)


@pytest.mark.parametrize("profile", sorted(PROFILES))
def test_weight_shape(grid1024, profile):
    R = 2.0
    w = make_weight(R, grid1024, profile)
    r = grid1024.r
    inner = r <= R
    assert np.allclose(w.w[inner], r[inner] ** 2, atol=1e-12)
    assert np.allclose(w.w2[inner], 2.0)
    assert np.all(w.w[r >= w.support] == 0)
    # continuity of w, w', w'' across the blend
    x = np.linspace(0, w.support / R, 4001) * R
    prof = PROFILES[profile]()
    for d in range(3):
        vals = R ** (2 - d) * prof.evaluate(x / R, d)
        assert np.abs(np.diff(vals)).max() < 0.05 * max(1.0, np.abs(vals).max())


def test_curvature_bound_only_for_bounded_profile(grid1024):
    x = np.linspace(0, 5, 20001)
    peaks = {name: PROFILES[name]().evaluate(x, 2).max() for name in PROFILES}
    assert peaks["curvature-bounded"] <= 2 + 1e-9
    assert peaks["quintic"] > 2 and peaks["septic"] > 2


def test_quadratic_weight_at_infinity(grid1024):
    w = make_weight(np.inf, grid1024)
    assert np.allclose(w.w, grid1024.r**2)
    assert np.allclose(w.lap, 8.0) and np.allclose(w.bilap, 0.0)


def test_bilaplacian_of_polynomial_weight(grid1024):
    # inside the ball w = r^2, so lap lap w vanishes
    w = make_weight(3.0, grid1024)
    inner = grid1024.r < 3.0
    assert np.max(np.abs(w.bilap[inner])) < 1e-8
    assert np.allclose(w.lap[inner], 8.0)


def test_weight_overflow_and_bad_input():
    g = make_grid(5.0, 128, "uniform")
    with pytest.raises(DomainOverflowError):
        make_weight(3.0, g)
    with pytest.raises(ValueError):
        make_weight(-1.0, g)
    with pytest.raises(ValueError):
        make_weight(1.0, g, "cubic")


@given(masses_st, st.integers(0, 2**32 - 1))
def test_f_infinity_identity_machine_precision(m, seed):
    g = make_grid(np.inf, 256)
    rng = np.random.default_rng(seed)
    r = g.r
    vals = sum(
        (rng.normal(size=3) + 1j * rng.normal(size=3))[:, None] * np.exp(-((r / rng.uniform(0.5, 4)) ** 2) + 1j * rng.normal() * r**2)[None, :]
        for _ in range(2)
    )
    F, rhs = f_infinity_identity(Field3(g, vals), m)
    assert abs(F - rhs) <= 1e-11 * max(abs(rhs), abs(F), 1.0)


def test_momentum_vanishes_for_real_fields(masses, grid1024):
    u = ground_state(masses, grid1024).Qvec
    _, I, _ = virial_functionals(u, make_weight(3.0, grid1024), masses)
    assert I == 0.0


def test_momentum_from_chirp(masses, grid1024):
    # u = exp(i b r^2) f gives Im conj(u) u' = 2 b r |f|^2, so I_R = int 4 b r^2 sum |u_k|^2 (w = r^2)
    from nls3lab.radial import integrate

    b = 0.05
    f = np.exp(-(grid1024.r**2) / 4)
    u = Field3(grid1024, np.stack([f, 0.5 * f, 0.3 * f]) * np.exp(1j * b * grid1024.r**2))
    _, I, _ = virial_functionals(u, make_weight(np.inf, grid1024), masses)
    dens = np.sum(np.abs(u.values) ** 2, axis=0)
    exact = integrate(grid1024, 4 * b * grid1024.r**2 * dens)
    assert I == pytest.approx(exact, rel=1e-4)


def test_weight_grid_mismatch(masses, grid1024):
    u = Field3.zeros(make_grid(np.inf, 100))
    with pytest.raises(ValueError):
        virial_functionals(u, make_weight(2.0, grid1024), masses)


def test_defects_separate_conditions():
    g = make_grid(np.inf, 512)
    u0 = scan_datum(g)
    gal = identity_defects(u0, MassTriple(1, 1, 1), dt=2e-3, t_end=0.1)
    non = identity_defects(u0, MassTriple(1, 1, 3), dt=2e-3, t_end=0.1)
    assert gal.galilean_condition and not non.galilean_condition
    assert non.paper_condition
    assert gal.defect_V < 1e-4
    assert non.defect_V > 10 * gal.defect_V
    # the flux identity holds for all masses
    assert gal.defect_I < 1e-3 and non.defect_I < 1e-3


def test_stationary_scan_zero_dVdt():
    g = balanced_grid(512)
    res = identity_scan(None, [(1, 1, 3), (1, 1, 1)], grid=g, t_end=0.05, initial=lambda m: ground_state(m, g, discrete=True).Qvec)
    for row in res.rows:
        assert row.max_abs_dVdt < 1e-7


def test_empty_lattice():
    with pytest.raises(ValueError):
        identity_scan(triples=[])


def test_scan_outputs(tmp_path):
    g = make_grid(np.inf, 256)
    res = identity_scan(scan_datum(g), [(1, 1, 1), (1, 1, 3), (2, 1, 3)], t_end=0.05, grid=g)
    p = tmp_path / "scan.csv"
    res.to_csv(p)
    rows = list(csv.reader(p.open()))
    assert rows[0] == SCAN_COLUMNS
    assert len(rows) == 4
    assert rows[1][3:5] == ["false", "true"]
    scan_heatmap(res, tmp_path / "h.svg")
    assert (tmp_path / "h.svg").read_text().startswith("<svg")
    assert res.winner == "galilean"


def test_default_lattice_covers_both_conditions():
    ms = [MassTriple(*t) for t in DEFAULT_TRIPLES]
    assert len(ms) == 12
    assert any(m.resonance_paper for m in ms) and any(m.resonance_galilean for m in ms)
    assert any(not (m.resonance_paper or m.resonance_galilean) for m in ms)
