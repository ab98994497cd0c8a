"""
Optimal control law ``u(t) = K(t) x + nu_total(t)``.

* Feedback ``K(t) = -R^-1 B^T Pi(t)`` from the Riccati solution through ``Pi(0)``.
* Drift cancellation ``u_c(t) = -R^-1/2 (B R^-1/2)^+ C g(t)``: the part of the
  compensator drift ``C g`` of raw jump processes that the input can reach
  is cancelled pointwise.
* Mean steering ``nu(t)``: minimum-energy open-loop input through the closed
  loop ``Psi = Phi_{A - B R^-1 B^T Pi}`` that carries ``mu0`` to ``mu1`` in
  the presence of the uncancelled drift ``r = C g + B u_c``:

      nu(t) = R^-1 B^T Psi(1,t)^T M^-1 (mu1 - Psi(1,0) mu0 - int_0^1 Psi(1,tau) r(tau) dtau),
      M     = int_0^1 Psi(1,tau) B R^-1 B^T Psi(1,tau)^T dtau
            = Phi(1,0) N(1,0) (I - Pi0 N(1,0)) Phi(1,0)^T.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import simpson, solve_ivp

from .errors import ModelValidationError, NumericalError
from .propagation import ODE_ATOL, ODE_METHOD, ODE_RTOL, gramian_table
from .riccati import existence_condition, pi_at
from .steering import QUAD_RTOL, covariance_trajectory, gauss_mesh, graded_breaks, solve_pi0
from .system import LtvSystem, SteeringProblem, as_sym, sqrtm_psd, sym

GRID_POINTS = 1001


def drift_cancellation(system: LtvSystem, ts):
    """``u_c(t)`` at the times ``ts``, shape ``(len(ts), p)``."""
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    rih = sqrtm_psd(system.R.eval_many(ts), inverse=True)
    bt = system.B.eval_many(ts) @ rih
    cg = system.drift_many(ts)
    v = np.einsum("kij,kj->ki", np.linalg.pinv(bt), cg)
    return -np.einsum("kij,kj->ki", rih, v)


def residual_drift(system: LtvSystem, ts):
    """``C g + B u_c``: the drift the input cannot cancel pointwise."""
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    uc = drift_cancellation(system, ts)
    return system.drift_many(ts) + np.einsum("kij,kj->ki", system.B.eval_many(ts), uc)


class MeanFeedforward:
    """``nu(t) = R^-1 B^T Psi(1,t)^T lam`` for the constant vector ``lam``."""

    def __init__(self, system: LtvSystem, pi0, mu0, mu1, rtol=QUAD_RTOL):
        n = system.n
        self.system = system
        self.pi0 = as_sym(pi0)
        mu0 = np.asarray(mu0, dtype=float).reshape(n)
        mu1 = np.asarray(mu1, dtype=float).reshape(n)
        table = gramian_table(system)
        self._table = table
        F = table.phi10 @ (np.eye(n) - table.N10 @ self.pi0)  # Psi(1, 0)
        self.closed_loop_10 = F
        self.M = sym(table.phi10 @ table.N10 @ (np.eye(n) - self.pi0 @ table.N10) @ table.phi10.T)
        try:
            np.linalg.cholesky(self.M)
        except np.linalg.LinAlgError as exc:
            raise NumericalError("closed-loop Gramian is singular; the pair is not controllable") from exc
        self.forced = F @ self._drift_integral(rtol)
        self.lam = np.linalg.solve(self.M, mu1 - F @ mu0 - self.forced)

    def _psi_1t(self, ts):
        """``Psi(1, t) = Psi(1,0) X_t Phi(0,t)`` with ``X_t = (I - N(t,0) Pi0)^-1``."""
        n = self.system.n
        lhs = np.eye(n) - self._table.W(ts) @ self.pi0
        return self.closed_loop_10 @ np.linalg.solve(lhs, self._table.phi_inv(ts))

    def _drift_integral(self, rtol):
        """``int_0^1 X_t Phi(0,t) r(t) dt`` (the factor ``Psi(1,0)`` is applied by the caller)."""
        n = self.system.n
        breaks = graded_breaks()
        prev = None
        for level in range(0, 8):
            t, w, _ = gauss_mesh(breaks, level)
            lhs = np.eye(n) - self._table.W(t) @ self.pi0
            y = np.linalg.solve(lhs, self._table.phi_inv(t))
            cur = np.einsum("k,kij,kj->i", w, y, residual_drift(self.system, t))
            if prev is not None and np.linalg.norm(cur - prev) <= rtol * max(np.linalg.norm(cur), 1e-300):
                return cur
            if prev is not None and not np.any(cur) and not np.any(prev):
                return cur
            prev = cur
        return prev

    def __call__(self, ts):
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        sys_ = self.system
        psi = self._psi_1t(ts)
        b = sys_.B.eval_many(ts)
        rb = np.linalg.solve(sys_.R.eval_many(ts), np.swapaxes(b, 1, 2))
        return np.einsum("kpn,kmn,m->kp", rb, psi, self.lam)


def mean_feedforward(system: LtvSystem, pi0, mu0, mu1):
    """Minimum-energy mean-steering feedforward ``nu`` as a callable of time."""
    if hasattr(pi0, "pi0"):
        pi0 = pi0.pi0()
    return MeanFeedforward(system, pi0, mu0, mu1)


@dataclass(frozen=True, eq=False)
class GainSchedule:
    """Synthesized control law ``u = K(t) x + nu(t)``.

    ``grid``, ``K`` (``m x p x n``) and ``nu`` (``m x p``) are samples on a
    uniform grid with piecewise-linear interpolation. When the schedule was
    built by :func:`synthesize` it also keeps the exact Riccati anchor and
    feedforward, and :meth:`resample` evaluates those exactly at any times.
    """

    grid: np.ndarray
    K: np.ndarray
    nu: np.ndarray
    pi: np.ndarray | None = None
    system: LtvSystem | None = None
    pi0: np.ndarray | None = None
    feedforward: MeanFeedforward | None = None

    @property
    def exact(self):
        return self.system is not None and self.pi0 is not None

    def interpolate(self, ts):
        """Piecewise-linear ``(K(t), nu(t))`` from the stored samples."""
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        m, p, n = self.K.shape
        kf = np.stack([np.interp(ts, self.grid, self.K.reshape(m, -1)[:, j]) for j in range(p * n)], axis=1)
        nf = np.stack([np.interp(ts, self.grid, self.nu[:, j]) for j in range(p)], axis=1)
        return kf.reshape(-1, p, n), nf

    def resample(self, ts):
        """``(K(t), nu(t))`` at ``ts``: exact when available, else interpolated."""
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        if not self.exact:
            return self.interpolate(ts)
        return _gains(self.system, self.pi0, self.feedforward, ts)

    def __call__(self, t):
        k, nu = self.resample(np.atleast_1d(t))
        return (k[0], nu[0]) if np.ndim(t) == 0 else (k, nu)


def _gains(system, pi0, ff, ts):
    pis = pi_at(system, pi0, 0.0, ts)
    b = system.B.eval_many(ts)
    K = -np.linalg.solve(system.R.eval_many(ts), np.swapaxes(b, 1, 2) @ pis)
    nu = drift_cancellation(system, ts)
    if ff is not None:
        nu = nu + ff(ts)
    return K, nu


def gain_schedule(system: LtvSystem, pi0, mu0, mu1, grid=None):
    """Gain schedule for a given feasible ``Pi(0)`` and mean boundary data."""
    pi0 = as_sym(pi0)
    ok, margin = existence_condition(system, pi0, 0.0)
    if not ok:
        raise ModelValidationError(f"Pi(0) is infeasible on [0, 1] (margin {margin:.3e})")
    grid = np.linspace(0.0, 1.0, GRID_POINTS) if grid is None else np.asarray(grid, dtype=float)
    ff = MeanFeedforward(system, pi0, mu0, mu1)
    K, nu = _gains(system, pi0, ff, grid)
    if not np.all(np.isfinite(K)):
        raise NumericalError("gain schedule has non-finite entries")
    return GainSchedule(grid, K, nu, pi_at(system, pi0, 0.0, grid), system, pi0, ff)


def synthesize(system: LtvSystem, problem: SteeringProblem, grid=None, **solver_opts):
    """Solve for ``Pi(0)`` and assemble the optimal :class:`GainSchedule`.

    Returns ``(schedule, trace)``.
    """
    system.require_valid()
    problem.check(system.n)
    pi0, trace = solve_pi0(system, problem, **solver_opts)
    return gain_schedule(system, pi0, problem.mu0, problem.mu1, grid), trace


def mean_trajectory(system: LtvSystem, schedule: GainSchedule, mu0, ts):
    """Integrate ``mu' = (A + B K) mu + B nu + C g`` and sample it at ``ts``."""
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    n = system.n
    mu0 = np.asarray(mu0, dtype=float).reshape(n)

    def rhs(t, y):
        k, nu = schedule.resample(np.array([t]))
        return (system.A(t) + system.B(t) @ k[0]) @ y + system.B(t) @ nu[0] + system.drift(t)

    sol = solve_ivp(
        rhs, (0.0, float(ts.max())), mu0, method=ODE_METHOD, rtol=ODE_RTOL, atol=ODE_ATOL, dense_output=True
    )
    if not sol.success:
        raise NumericalError(f"mean integration failed: {sol.message}")
    return sol.sol(ts).T


def expected_cost(system: LtvSystem, schedule: GainSchedule, sigma_traj, mu_traj, grid=None):
    """``E int u^T R u dt = int tr(R K Sigma K^T) + (K mu + nu)^T R (K mu + nu) dt``.

    ``sigma_traj`` and ``mu_traj`` are the centered covariance and mean on
    ``grid`` (default: the schedule grid); Simpson's rule on that grid.
    """
    grid = schedule.grid if grid is None else np.asarray(grid, dtype=float)
    sigma_traj = np.asarray(sigma_traj, dtype=float)
    mu_traj = np.asarray(mu_traj, dtype=float)
    if sigma_traj.shape[0] != grid.size or mu_traj.shape[0] != grid.size:
        raise ModelValidationError("trajectory samples do not match the grid")
    K, nu = schedule.resample(grid)
    R = system.R.eval_many(grid)
    kt = np.swapaxes(K, 1, 2)
    fb = np.trace(R @ K @ sigma_traj @ kt, axis1=1, axis2=2)
    mean_u = np.einsum("kpn,kn->kp", K, mu_traj) + nu
    ff = np.einsum("kp,kpq,kq->k", mean_u, R, mean_u)
    return float(simpson(fb + ff, x=grid))


def optimal_cost(system: LtvSystem, schedule: GainSchedule, mu0, Sigma0, grid=None):
    """:func:`expected_cost` along the schedule's own mean and covariance."""
    grid = schedule.grid if grid is None else np.asarray(grid, dtype=float)
    sig = covariance_trajectory(system, schedule.pi0, Sigma0, grid)
    mu = mean_trajectory(system, schedule, mu0, grid)
    return expected_cost(system, schedule, sig, mu, grid)


__all__ = [
    "GainSchedule",
    "MeanFeedforward",
    "drift_cancellation",
    "expected_cost",
    "gain_schedule",
    "mean_feedforward",
    "mean_trajectory",
    "optimal_cost",
    "residual_drift",
    "synthesize",
]
