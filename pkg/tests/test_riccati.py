import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from covsteer.errors import FiniteEscapeError
from covsteer.propagation import gramian_table, transition
from covsteer.riccati import (
    RiccatiSolution,
    closed_loop_transition,
    existence_condition,
    maximal_interval,
    normalized_gain,
    pi_at,
)
from covsteer.system import sqrtm_psd

from helpers import closed_loop_ode, example2, random_feasible_pi0, random_system, riccati_ode, scalar_system

TS = np.linspace(0.0, 1.0, 21)


def test_existence_condition_scalar_cases():
    sys_ = scalar_system()
    assert existence_condition(sys_, 0.0, 0.0)[0]
    ok, margin = existence_condition(sys_, 0.5, 0.0)
    assert ok and margin == pytest.approx(0.5, abs=1e-10)
    assert not existence_condition(sys_, 2.0, 0.0)[0]
    # interior anchor: N(0,s)^-1 = -1/s < pi < 1/(1-s)
    assert existence_condition(sys_, -1.5, 0.5)[0]
    assert not existence_condition(sys_, -2.5, 0.5)[0]
    assert not existence_condition(sys_, 2.5, 0.5)[0]


def test_zero_anchor_always_feasible():
    rng = np.random.default_rng(5)
    for n in (1, 2, 3):
        assert existence_condition(random_system(rng, n), np.zeros((n, n)), 0.0)[0]


def test_zero_is_a_fixed_point():
    sys_ = example2()
    np.testing.assert_array_equal(pi_at(sys_, np.zeros((2, 2)), 0.3, TS), np.zeros((21, 2, 2)))


def test_scalar_solution_closed_form():
    sys_ = scalar_system()
    got = pi_at(sys_, 0.5, 0.0, TS)[:, 0, 0]
    np.testing.assert_allclose(got, 0.5 / (1 - 0.5 * TS), rtol=1e-10)
    assert pi_at(sys_, 0.5, 0.0, 1.0)[0, 0] == pytest.approx(1.0, rel=1e-10)


def test_finite_escape_time():
    with pytest.raises(FiniteEscapeError) as info:
        pi_at(scalar_system(), 2.0, 0.0, 1.0)
    assert info.value.escape_time == pytest.approx(0.5, abs=1e-6)


def test_maximal_interval_cases():
    sys_ = scalar_system()
    assert maximal_interval(sys_, 0.0, 0.3) == (0.0, 1.0)
    t0, t1 = maximal_interval(sys_, 2.0, 0.0)
    assert t0 == 0.0 and t1 == pytest.approx(0.5, abs=1e-8)
    t0, t1 = maximal_interval(sys_, -2.0, 1.0)
    assert t0 == pytest.approx(0.5, abs=1e-8) and t1 == 1.0


def test_riccati_solution_object():
    sol = RiccatiSolution(scalar_system(), 2.0)
    assert not sol.feasible
    assert sol.interval[1] == pytest.approx(0.5, abs=1e-8)
    with pytest.raises(FiniteEscapeError):
        sol.require_feasible()
    ok = RiccatiSolution(scalar_system(), 0.5).require_feasible()
    assert ok(0.5)[0, 0] == pytest.approx(0.5 / 0.75)
    assert ok.closed_loop(1.0, 0.0)[0, 0] == pytest.approx(0.5)


def test_closed_loop_scalar_and_trivial_cases():
    sys_ = scalar_system()
    for t in (0.2, 0.7, 1.0):
        assert closed_loop_transition(sys_, 0.5, t, 0.0)[0, 0] == pytest.approx(1 - 0.5 * t, rel=1e-10)
    np.testing.assert_array_equal(closed_loop_transition(sys_, 0.5, 0.4, 0.4), np.eye(1))
    sys2 = example2()
    for t, s in [(0.8, 0.1), (0.2, 0.9)]:
        np.testing.assert_allclose(closed_loop_transition(sys2, np.zeros((2, 2)), t, s), transition(sys2, t, s), atol=1e-12)


def test_closed_loop_composition():
    rng = np.random.default_rng(8)
    sys_ = random_system(rng, 3)
    pi0 = random_feasible_pi0(rng, sys_)
    for s in (0.3, 0.6):
        lhs = closed_loop_transition(sys_, pi0, 1.0, s)
        rhs = closed_loop_transition(sys_, pi0, 1.0, 0.0) @ closed_loop_transition(sys_, pi0, 0.0, s)
        np.testing.assert_allclose(lhs, rhs, rtol=1e-9, atol=1e-9)


def test_gain_uses_weighting():
    sys_ = scalar_system(r=4.0)
    assert normalized_gain(sys_, np.array([[2.0]]), 0.3)[0, 0] == pytest.approx(-0.5)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 100_000), st.integers(1, 4), st.floats(0.0, 1.0))
def test_closed_form_matches_direct_integration(seed, n, s):
    rng = np.random.default_rng(seed)
    sys_ = random_system(rng, n)
    pi0 = random_feasible_pi0(rng, sys_)
    pi_s = pi_at(sys_, pi0, 0.0, s)
    got = pi_at(sys_, pi_s, s, TS)
    want = riccati_ode(sys_, pi_s, s, TS)
    assert np.abs(got - want).max() <= 1e-6


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 100_000), st.integers(1, 4))
def test_bounds_preserved_and_symmetric(seed, n):
    rng = np.random.default_rng(seed)
    sys_ = random_system(rng, n)
    pi0 = random_feasible_pi0(rng, sys_)
    tab = gramian_table(sys_)
    for t, p in zip(TS, pi_at(sys_, pi0, 0.0, TS)):
        assert np.abs(p - p.T).max() < 1e-9
        for end, sign in ((1.0, 1.0), (0.0, -1.0)):
            if end == t:
                continue
            h = sqrtm_psd(sign * tab.gramian(end, t))
            # N(1,t)^-1 - Pi > 0  <=>  I - h Pi h > 0 ; same for the lower bound with N(0,t) < 0
            gap = np.eye(n) - sign * h @ p @ h
            assert np.linalg.eigvalsh(gap)[0] > 0


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 100_000), st.integers(1, 3))
def test_closed_loop_matches_ode(seed, n):
    rng = np.random.default_rng(seed)
    sys_ = random_system(rng, n)
    pi0 = random_feasible_pi0(rng, sys_)
    want = closed_loop_ode(sys_, pi0, TS)
    for t, w in zip(TS, want):
        np.testing.assert_allclose(closed_loop_transition(sys_, pi0, t, 0.0), w, rtol=0, atol=1e-6)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 100_000), st.integers(1, 3), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_pi_transported_by_closed_loop(seed, n, s, t):
    # Pi(t) = Phi_A(s,t)^T Pi(s) Phi_cl(s,t)
    rng = np.random.default_rng(seed)
    sys_ = random_system(rng, n)
    pi0 = random_feasible_pi0(rng, sys_)
    lhs = pi_at(sys_, pi0, 0.0, t)
    rhs = transition(sys_, s, t).T @ pi_at(sys_, pi0, 0.0, s) @ closed_loop_transition(sys_, pi0, s, t)
    assert np.abs(lhs - rhs).max() <= 1e-8 * max(1.0, np.abs(lhs).max())
