import numpy as np
import pytest
from scipy.integrate import quad

from covsteer.controller import (
    GainSchedule,
    drift_cancellation,
    expected_cost,
    gain_schedule,
    mean_feedforward,
    mean_trajectory,
    optimal_cost,
    residual_drift,
    synthesize,
)
from covsteer.errors import ModelValidationError
from covsteer.montecarlo import empirical_moments, simulate
from covsteer.noise import NoiseSpec, Wiener
from covsteer.riccati import closed_loop_transition, pi_at
from covsteer.steering import boundary_map, covariance_trajectory
from covsteer.system import LtvSystem, SteeringProblem

from helpers import example1, example2, random_feasible_pi0, random_system, scalar_system

EX1 = SteeringProblem([50.0], [[6.0]], [60.0], [[2.0]])
EX2 = SteeringProblem([0.0, 0.0], np.diag([0.6, 0.6]), [0.0, 0.0], np.diag([0.2, 0.1]))
GRID = np.linspace(0.0, 1.0, 11)


@pytest.fixture(scope="module")
def ex1():
    return synthesize(example1(), EX1)[0]


@pytest.fixture(scope="module")
def ex2():
    return synthesize(example2(), EX2)[0]


def test_zero_solution_gives_zero_law():
    sys_ = example2()
    sys0 = LtvSystem(sys_.A, sys_.B, sys_.C, NoiseSpec([Wiener([[0.2]])]))
    f0 = boundary_map(sys0, EX2.Sigma0, np.zeros((2, 2)))
    sched, _ = synthesize(sys0, SteeringProblem([0, 0], EX2.Sigma0, [0, 0], f0))
    assert np.abs(sched.pi).max() < 1e-9
    assert np.abs(sched.K).max() < 1e-9
    assert np.abs(sched.nu).max() == 0.0


def test_example1_law_structure(ex1):
    sys_ = example1()
    lam = 2.0 + GRID
    K, nu = ex1.resample(GRID)
    np.testing.assert_allclose(K[:, 0, 0], -pi_at(sys_, ex1.pi0, 0.0, GRID)[:, 0, 0], rtol=1e-12)
    np.testing.assert_allclose(drift_cancellation(sys_, GRID)[:, 0], 4 * lam, rtol=1e-14)
    np.testing.assert_allclose(residual_drift(sys_, GRID), 0.0, atol=1e-12)

    # independent scalar oracle for the feedforward: phi(1,t) by quadrature of pi - a
    def log_phi(t):
        return quad(lambda s: pi_at(sys_, ex1.pi0, 0.0, s)[0, 0] - (0.8 - 0.1 * s), t, 1.0, epsabs=1e-13)[0]

    def phi(t):
        return np.exp(-log_phi(t))

    gram = quad(lambda s: phi(s) ** 2, 0.0, 1.0, epsabs=1e-13)[0]
    want = np.array([phi(t) / gram * (60.0 - phi(0.0) * 50.0) for t in GRID])
    np.testing.assert_allclose(nu[:, 0] - 4 * lam, want, rtol=1e-8)


def test_example2_gain_row(ex2):
    K, _ = ex2.resample(GRID)
    pis = pi_at(example2(), ex2.pi0, 0.0, GRID)
    np.testing.assert_allclose(K[:, 0, :], -pis[:, 1, :], atol=1e-14)


def test_feedforward_trivial_cases():
    sys_ = scalar_system(wiener=1.0)
    ff = mean_feedforward(sys_, 0.0, 0.0, 0.0)
    assert np.all(ff(GRID) == 0.0)
    ff = mean_feedforward(sys_, 0.0, 1.0, 3.5)
    np.testing.assert_allclose(ff(GRID)[:, 0], 2.5, rtol=1e-12)


@pytest.mark.parametrize("which", ["ex1", "ex2"])
def test_terminal_moments_attained(which, request):
    sched = request.getfixturevalue(which)
    sys_, prob = (example1(), EX1) if which == "ex1" else (example2(), EX2)
    mu = mean_trajectory(sys_, sched, prob.mu0, [1.0])[0]
    assert np.abs(mu - prob.mu1).max() < 1e-8
    sig = covariance_trajectory(sys_, sched.pi0, prob.Sigma0, [1.0])[0]
    assert np.abs(sig - prob.Sigma1).max() < 1e-8


def test_feedforward_minimum_energy():
    # Stationarity of min int nu^T R nu subject to int Psi(1,t) B nu dt = const:
    # for every direction w, int nu^T R w dt = lam^T int Psi(1,t) B w dt.
    # Psi is evaluated through the closed-loop transition, independently of
    # the feedforward's own factorization.
    rng = np.random.default_rng(4)
    sys_ = random_system(rng, 2)
    pi0 = random_feasible_pi0(rng, sys_)
    sched = gain_schedule(sys_, pi0, [1.0, -1.0], [0.5, 2.0])
    ts = np.linspace(0, 1, 2001)
    nu = sched.feedforward(ts)
    psi = np.stack([closed_loop_transition(sys_, pi0, 1.0, t) for t in ts])
    R, B = sys_.R.eval_many(ts), sys_.B.eval_many(ts)
    for w in (np.sin(3 * np.pi * ts)[:, None] * np.ones((1, sys_.p)), np.outer(ts**2, np.arange(1, sys_.p + 1))):
        hit = np.trapezoid(np.einsum("kij,kjp,kp->ki", psi, B, w), ts, axis=0)
        inner = np.trapezoid(np.einsum("kp,kpq,kq->k", nu, R, w), ts)
        assert inner == pytest.approx(sched.feedforward.lam @ hit, rel=1e-5, abs=1e-9)


def test_feedforward_invariance_of_covariance(ex2):
    # same seed with and without nu: paths differ by a deterministic shift only
    sys_ = example2()
    bare = GainSchedule(ex2.grid, ex2.K, np.zeros_like(ex2.nu), ex2.pi, sys_, ex2.pi0, None)
    with_ff = simulate(sys_, ex2, EX2, 2000, seed=5)
    without = simulate(sys_, bare, EX2, 2000, seed=5)
    for t in (0.5, 1.0):
        a, b = empirical_moments(with_ff, t), empirical_moments(without, t)
        np.testing.assert_allclose(a.cov, b.cov, rtol=1e-8, atol=1e-10)
    np.testing.assert_allclose(covariance_trajectory(sys_, ex2.pi0, EX2.Sigma0, GRID)[-1], EX2.Sigma1, atol=1e-8)


def test_expected_cost_trivial_and_mean_only():
    sys_ = scalar_system()
    grid = np.linspace(0, 1, 101)
    zero = GainSchedule(grid, np.zeros((101, 1, 1)), np.zeros((101, 1)))
    assert expected_cost(sys_, zero, np.ones((101, 1, 1)), np.ones((101, 1)), grid) == 0.0
    mu0, mu1 = 1.0, 3.0
    sched = gain_schedule(sys_, 0.0, mu0, mu1, grid)
    assert np.abs(sched.K).max() == 0.0
    cost = optimal_cost(sys_, sched, [mu0], [[0.0]])
    assert cost == pytest.approx((mu1 - mu0) ** 2, rel=1e-10)
    with pytest.raises(ModelValidationError):
        expected_cost(sys_, sched, np.ones((5, 1, 1)), np.ones((5, 1)))


def test_example1_cost_quadrature_oracle(ex1):
    # independent route: E u^2 = pi^2 Sigma + (mean input)^2 with Sigma, mu from the ODE
    sys_ = example1()
    grid = np.linspace(0, 1, 4001)
    sig = covariance_trajectory(sys_, ex1.pi0, EX1.Sigma0, grid)[:, 0, 0]
    mu = mean_trajectory(sys_, ex1, EX1.mu0, grid)[:, 0]
    K, nu = ex1.resample(grid)
    integrand = K[:, 0, 0] ** 2 * sig + (K[:, 0, 0] * mu + nu[:, 0]) ** 2
    want = np.trapezoid(integrand, grid)
    assert optimal_cost(sys_, ex1, EX1.mu0, EX1.Sigma0) == pytest.approx(want, rel=1e-5)


def test_schedule_interpolation_and_exact_resampling(ex2):
    ts = np.array([0.12345, 0.5, 0.98765])
    K_exact, nu_exact = ex2.resample(ts)
    K_lin, nu_lin = ex2.interpolate(ts)
    np.testing.assert_allclose(K_lin, K_exact, rtol=1e-4, atol=1e-6)
    np.testing.assert_allclose(nu_lin, nu_exact, rtol=1e-4, atol=1e-6)
    k, nu = ex2(0.5)
    assert k.shape == (1, 2) and nu.shape == (1,)
    assert np.all(np.isfinite(ex2.K))
    assert ex2.grid.size == 1001


def test_infeasible_pi0_rejected():
    with pytest.raises(ModelValidationError):
        gain_schedule(scalar_system(), 2.0, 0.0, 0.0)


def test_weighted_input_feedforward_reaches_target():
    rng = np.random.default_rng(9)
    sys_ = random_system(rng, 3, jumps=True)
    pi0 = random_feasible_pi0(rng, sys_)
    mu0, mu1 = rng.normal(size=3), rng.normal(size=3)
    sched = gain_schedule(sys_, pi0, mu0, mu1)
    mu = mean_trajectory(sys_, sched, mu0, [1.0])[0]
    assert np.abs(mu - mu1).max() < 1e-8
