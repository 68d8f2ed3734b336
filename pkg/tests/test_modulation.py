import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nls3lab.modulation import (
    ModulationError,
    modulate,
    threshold_perturbation,
    track,
    wrap_phases,
)
from nls3lab.radial import Field3, h1_inner3, h1_norm3
from nls3lab.states import apply_symmetry, energy


def _perturbation(gs, seed):
    rng = np.random.default_rng(seed)
    r = gs.grid.r
    vals = sum((rng.normal(size=3) + 1j * rng.normal(size=3))[:, None] * np.exp(-((r / rng.uniform(1, 4)) ** 2))[None, :] for _ in range(4))
    w = Field3(gs.grid, vals)
    return w * (h1_norm3(gs.Qvec) / h1_norm3(w))


@given(st.floats(-1.2, 1.2), st.floats(-1.2, 1.2), st.floats(0.8, 1.25))
def test_roundtrip_on_orbit(gs512, ops512, t1, t2, lam):
    u = apply_symmetry(gs512.Qvec, t1, t2, lam)
    s = modulate(u, gs512, ops512)
    # the decomposition returns the inverse group element
    back = apply_symmetry(u, s.eta, s.theta, s.mu)
    assert np.max(np.abs(back.values - gs512.Qvec.values)) < 1e-6 * np.max(np.abs(gs512.Qvec.values))
    assert s.mu == pytest.approx(1 / lam, rel=1e-6)
    assert abs(s.alpha) < 1e-6
    assert s.h_norm < 1e-6 * h1_norm3(gs512.Qvec)


@given(st.integers(0, 1000), st.sampled_from([1e-3, 1e-2, 1e-1]))
def test_orthogonality_and_comparability(gs512, ops512, seed, eps):
    u = threshold_perturbation(gs512, _perturbation(gs512, seed), eps)
    s = modulate(u, gs512, ops512, delta0=0.5 * gs512.K)
    assert s.defect_max < 1e-9
    h = s.h.values
    g = gs512.grid
    Q, LQ = gs512.Qvec.values.real, gs512.LambdaQ.values.real
    # (Q, LambdaQ) vanishes in the continuum; on the grid it is O(h^2) and is projected out
    LQh = LQ - h1_inner3(LQ, Q, g) / h1_inner3(Q, Q, g) * Q
    for gen in (1j * gs512.Qp.values.real, 1j * gs512.Qq.values.real, LQh):
        assert abs(h1_inner3(h, gen, gs512.grid)) < 1e-8 * h1_norm3(gs512.Qvec)
    d = s.delta / gs512.K
    assert 0.1 <= abs(s.alpha) / d <= 10
    assert 0.1 <= s.h_norm / h1_norm3(gs512.Qvec) / d <= 10


def test_threshold_energy(masses, gs512):
    u = threshold_perturbation(gs512, _perturbation(gs512, 7), 0.03)
    assert energy(u, masses) == pytest.approx(energy(gs512.Qvec, masses), rel=1e-12)


def test_outside_tube_rejected(gs512, ops512):
    with pytest.raises(ModulationError):
        modulate(gs512.Qvec * 0.5, gs512, ops512)


@given(st.floats(-10, 10), st.floats(-10, 10), st.floats(-3, 3), st.floats(-3, 3))
def test_wrap_phases_same_action(eta, theta, r1, r2):
    e, t = wrap_phases(eta, theta, (r1, r2))
    # the action sees eta + theta, 2 eta, 2 theta modulo 2 pi
    for a, b in ((e + t, eta + theta), (2 * e, 2 * eta), (2 * t, 2 * theta)):
        assert np.cos(a - b) == pytest.approx(1.0, abs=1e-9)
    assert abs(e - r1) <= np.pi + 1e-9


def test_track_follows_trajectory(masses, gs512, ops512):
    from nls3lab.evolution import EvolutionConfig, evolve

    u0 = threshold_perturbation(gs512, _perturbation(gs512, 1), 0.01)
    tr = evolve(u0, EvolutionConfig(dt=0.05, t_end=2.0, sample_every=5, store_fields=True), masses, gs512)
    ms = track(tr.fields, tr.times, gs512, ops512)
    assert ms.status == "completed"
    assert len(ms.times) == len(tr.times)
    assert np.all(np.abs(np.diff(ms.column("eta"))) < 0.5)
    assert np.isfinite(ms.derivative_bound["max_ratio"])


def test_modulation_csv(tmp_path, masses, gs512, ops512):
    import csv

    from nls3lab.modulation import MOD_COLUMNS

    fields = [apply_symmetry(gs512.Qvec, 0.1 * k, 0.0, 1.0) for k in range(3)]
    ms = track(fields, np.arange(3.0), gs512, ops512)
    p = tmp_path / "m.csv"
    ms.to_csv(p)
    rows = list(csv.reader(p.open()))
    assert rows[0] == MOD_COLUMNS and len(rows) == 4
    assert float(rows[3][1]) == pytest.approx(-0.2, abs=1e-6)
