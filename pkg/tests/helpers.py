"""Random instance generators and independent reference integrators for the tests."""
from __future__ import annotations

import numpy as np
from scipy.integrate import solve_ivp

from covsteer.noise import CompoundPoisson, ConstantJump, NoiseSpec, NormalJump, Wiener
from covsteer.propagation import gramian_table
from covsteer.schedules import MatrixSchedule
from covsteer.system import LtvSystem, sqrtm_psd

REF_RTOL = 1e-11
REF_ATOL = 1e-13


def scalar_system(a=0.0, b=1.0, c=1.0, wiener=0.0, r=1.0):
    """``dx = a x dt + b u dt + c dm`` with ``dm = wiener dw``; schedules may be polynomials."""
    return LtvSystem(_sched(a), _sched(b), _sched(c), NoiseSpec([Wiener([[wiener]])]), _sched(r))


def _sched(v):
    if isinstance(v, MatrixSchedule):
        return v
    if isinstance(v, (list, tuple)):
        return MatrixSchedule.polynomial([[list(v)]])
    return MatrixSchedule.constant(v)


def example1():
    return LtvSystem(
        MatrixSchedule.polynomial([[[0.8, -0.1]]]),
        1.0,
        1.0,
        NoiseSpec([Wiener([[2.0]]), CompoundPoisson(MatrixSchedule.polynomial([[[2.0, 1.0]]]), [ConstantJump(-4.0)])]),
    )


def example2():
    b = MatrixSchedule.constant([[0.0], [1.0]])
    return LtvSystem(
        MatrixSchedule.constant([[0.0, 1.0], [0.0, 0.0]]),
        b,
        b,
        NoiseSpec(
            [Wiener([[0.2]]), CompoundPoisson(MatrixSchedule.polynomial([[[5.0, -1.0]]]), [NormalJump(-0.5, 0.1)])]
        ),
    )


def random_poly(rng, rows, cols, degree=2, scale=0.5):
    return MatrixSchedule.polynomial(rng.normal(0.0, scale, (rows, cols, degree + 1)).tolist())


def random_spd(rng, n, lo=0.3, hi=2.0):
    q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    return (q * rng.uniform(lo, hi, n)) @ q.T


def random_system(rng, n, noise=True, min_gramian=1e-4, jumps=False):
    """Random LTV system with polynomial entries whose Gramian N(1,0) is well conditioned."""
    for _ in range(100):
        p = int(rng.integers(1, n + 1))
        q = int(rng.integers(1, n + 1))
        A = random_poly(rng, n, n)
        B = random_poly(rng, n, p, degree=1, scale=1.0)
        C = random_poly(rng, n, q, degree=1, scale=0.7)
        R = MatrixSchedule.constant(random_spd(rng, p, 0.5, 2.0))
        comps = [Wiener(rng.normal(0.0, 0.5 if noise else 0.0, (q, q)))]
        if jumps and noise:
            rate = MatrixSchedule.polynomial(np.abs(rng.normal(1.0, 0.5, (q, 1, 2))).tolist())
            comps.append(CompoundPoisson(rate, [NormalJump(rng.normal(), 0.3) for _ in range(q)]))
        sys_ = LtvSystem(A, B, C, NoiseSpec(comps), R)
        if np.linalg.eigvalsh(gramian_table(sys_).N10)[0] > min_gramian:
            return sys_
    raise RuntimeError("could not draw a controllable system")


def matched_system(rng, n):
    """``C D C^T = B R^-1 B^T`` with ``C = B`` and a Wiener scale ``R^-1/2``."""
    base = random_system(rng, n, noise=False)
    rmat = base.R(0.0)
    return LtvSystem(base.A, base.B, base.B, NoiseSpec([Wiener(sqrtm_psd(rmat, inverse=True))]), base.R)


def random_feasible_pi0(rng, system, lo=-2.0, hi=0.8):
    """Symmetric ``Pi0`` with ``N10^1/2 Pi0 N10^1/2`` eigenvalues in ``(lo, hi)``."""
    n = system.n
    n10 = gramian_table(system).N10
    ih = sqrtm_psd(n10, inverse=True)
    q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    core = (q * rng.uniform(lo, hi, n)) @ q.T
    return 0.5 * (ih @ core @ ih + (ih @ core @ ih).T)


def riccati_ode(system, pi_s, s, ts):
    """Direct integration of ``Pi' = -A^T Pi - Pi A + Pi B R^-1 B^T Pi`` from ``(s, pi_s)``."""
    n = system.n
    ts = np.asarray(ts, dtype=float)
    out = np.empty((ts.size, n, n))

    def rhs(t, y):
        P = y.reshape(n, n)
        a = system.A(t)
        k = system.control_kernel(t)
        return (-a.T @ P - P @ a + P @ k @ P).ravel()

    for sel, end in ((ts >= s, 1.0), (ts < s, 0.0)):
        if not sel.any() or end == s:
            out[sel] = pi_s
            continue
        sol = solve_ivp(rhs, (s, end), np.asarray(pi_s).ravel(), method="DOP853",
                        rtol=REF_RTOL, atol=REF_ATOL, dense_output=True)
        assert sol.success, sol.message
        out[sel] = sol.sol(ts[sel]).T.reshape(-1, n, n)
    return out


def closed_loop_ode(system, pi0, ts):
    """Integrate ``[Pi, Phi_cl]`` jointly from ``t = 0``; returns ``Phi_cl(t, 0)``."""
    n, nn = system.n, system.n**2
    ts = np.asarray(ts, dtype=float)

    def rhs(t, y):
        P = y[:nn].reshape(n, n)
        F = y[nn:].reshape(n, n)
        a = system.A(t)
        k = system.control_kernel(t)
        return np.concatenate([(-a.T @ P - P @ a + P @ k @ P).ravel(), ((a - k @ P) @ F).ravel()])

    y0 = np.concatenate([np.asarray(pi0).ravel(), np.eye(n).ravel()])
    sol = solve_ivp(rhs, (0.0, 1.0), y0, method="DOP853", rtol=REF_RTOL, atol=REF_ATOL, dense_output=True)
    assert sol.success, sol.message
    return sol.sol(ts)[nn:].T.reshape(-1, n, n)


def covariance_ode_reference(system, pi0, Sigma0, ts):
    """Integrate the coupled ``[Pi, Sigma]`` ODE from ``t = 0``."""
    n, nn = system.n, system.n**2
    ts = np.asarray(ts, dtype=float)

    def rhs(t, y):
        P = y[:nn].reshape(n, n)
        S = y[nn:].reshape(n, n)
        a = system.A(t)
        k = system.control_kernel(t)
        f = a - k @ P
        return np.concatenate([(-a.T @ P - P @ a + P @ k @ P).ravel(), (f @ S + S @ f.T + system.noise_kernel(t)).ravel()])

    y0 = np.concatenate([np.asarray(pi0).ravel(), np.asarray(Sigma0, dtype=float).ravel()])
    sol = solve_ivp(rhs, (0.0, 1.0), y0, method="DOP853", rtol=REF_RTOL, atol=REF_ATOL, dense_output=True)
    assert sol.success, sol.message
    return sol.sol(ts)[nn:].T.reshape(-1, n, n)


def sym_basis(n):
    """Orthonormal-free basis ``E_ij + E_ji`` (``i <= j``) of symmetric directions."""
    out = []
    for i in range(n):
        for j in range(i, n):
            e = np.zeros((n, n))
            e[i, j] = e[j, i] = 1.0
            out.append(e)
    return out


def fd_jacobian_sym(f, pi0, h=1e-6):
    """Central differences of ``vec f`` along symmetric directions; columns follow :func:`sym_basis`."""
    cols = []
    for e in sym_basis(pi0.shape[0]):
        cols.append(((f(pi0 + h * e) - f(pi0 - h * e)) / (2 * h)).reshape(-1, order="F"))
    return np.stack(cols, axis=1)


def analytic_on_sym(J, n):
    return np.stack([J @ e.reshape(-1, order="F") for e in sym_basis(n)], axis=1)
