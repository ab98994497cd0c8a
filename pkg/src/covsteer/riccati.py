"""
Closed-form solution of the Riccati flow

    dPi/dt = -A^T Pi - Pi A + Pi B R^-1 B^T Pi

through the Gramian ``N(t, s)``:

    Pi(t) = Phi(s,t)^T (I - Pi_s N(t,s))^-1 Pi_s Phi(s,t)

together with its existence test, maximal interval of existence and the
closed-loop transition matrix ``Phi(t,s) (I - N(t,s) Pi(s))``.

Definiteness tests are done on congruences ``N^1/2 Pi N^1/2`` so that they
stay well scaled when ``N`` is tiny or huge.
"""
from __future__ import annotations

import math

import numpy as np

from .errors import FiniteEscapeError
from .propagation import gramian_table
from .system import LtvSystem, as_sym, sym

ESCAPE_TOL = 1e-8


def _congruence_max_eig(n_ts, pi_s, sign):
    """Largest eigenvalue of ``N(t,s) Pi_s`` (real: it is similar to a symmetric matrix).

    ``sign`` is +1 when ``n_ts`` is positive semidefinite (t > s), -1 when
    negative semidefinite (t < s).
    """
    w, v = np.linalg.eigh(n_ts)
    root = (v * np.sqrt(np.clip(sign * w, 0.0, None))) @ v.T
    return sign * np.linalg.eigvalsh(sym(root @ pi_s @ root))[-1 if sign > 0 else 0]


def escape_margin(system: LtvSystem, pi_s, s, t):
    """``1 - lambda_max(N(t,s) Pi_s)``; positive iff ``I - N(t,s) Pi_s`` stays invertible on [s, t]."""
    if t == s:
        return 1.0
    n_ts = gramian_table(system).gramian(t, s)
    return 1.0 - _congruence_max_eig(n_ts, as_sym(pi_s), 1.0 if t > s else -1.0)


def existence_condition(system: LtvSystem, pi_s, s: float):
    """Test ``N(0,s)^-1 < Pi_s < N(1,s)^-1``.

    Returns ``(feasible, margin)`` where the margin is the smallest eigenvalue
    of ``I -/+ N^1/2 Pi_s N^1/2`` over both sides, i.e. the gap measured in
    Gramian-normalized coordinates. The side at ``s = 0`` (resp. ``s = 1``)
    is unbounded and contributes ``+inf``.
    """
    pi_s = as_sym(pi_s)
    margin = math.inf
    if s < 1.0:
        margin = min(margin, escape_margin(system, pi_s, s, 1.0))
    if s > 0.0:
        margin = min(margin, escape_margin(system, pi_s, s, 0.0))
    return bool(margin > 0.0), float(margin)


def maximal_interval(system: LtvSystem, pi_s, s: float, tol: float = ESCAPE_TOL):
    """Maximal existence interval ``(t0, t1)`` of the flow through ``(s, Pi_s)``, clipped to [0, 1].

    Uses that ``{t > s : N(t,s)^-1 > Pi_s}`` is an interval starting at ``s``
    (``N(t,s)`` grows in the Loewner order), so the crossing is found by
    bisection to ``tol`` in time.
    """
    pi_s = as_sym(pi_s)

    def ok(t):
        return escape_margin(system, pi_s, s, t) > 0.0

    def crossing(end):
        if ok(end):
            return end
        good, bad = s, end
        while abs(bad - good) > tol:
            mid = 0.5 * (good + bad)
            if ok(mid):
                good = mid
            else:
                bad = mid
        return 0.5 * (good + bad)

    t1 = crossing(1.0) if s < 1.0 else 1.0
    t0 = crossing(0.0) if s > 0.0 else 0.0
    return t0, t1


def pi_at(system: LtvSystem, pi_s, s: float, t):
    """Evaluate the Riccati solution through ``(s, Pi_s)`` at ``t`` (scalar or array).

    Raises :class:`FiniteEscapeError` with the escape time when the solution
    does not exist at (some of) the requested times.
    """
    pi_s = as_sym(pi_s)
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    table = gramian_table(system)
    for tk in (ts.min(), ts.max()):
        if escape_margin(system, pi_s, s, float(tk)) <= 0.0:
            t0, t1 = maximal_interval(system, pi_s, s)
            esc = t1 if tk > s else t0
            raise FiniteEscapeError(
                f"Riccati solution from s={s:g} escapes at t~{esc:.9f} before t={tk:g}", esc
            )
    n = system.n
    phi_st = table.phi(s) @ table.phi_inv(ts)  # Phi(s, t)
    n_ts = table.gramian(ts, s)
    lhs = np.eye(n) - pi_s @ n_ts
    core = np.linalg.solve(lhs, np.broadcast_to(pi_s, lhs.shape))
    out = sym(np.swapaxes(phi_st, -1, -2) @ core @ phi_st)
    return out[0] if np.ndim(t) == 0 else out


def closed_loop_transition(system: LtvSystem, pi0, t, s):
    """``Phi_{A - B R^-1 B^T Pi}(t, s) = Phi(t,s) (I - N(t,s) Pi(s))`` for ``Pi(0) = pi0``."""
    pi0 = as_sym(pi0)
    feasible, _ = existence_condition(system, pi0, 0.0)
    if not feasible:
        t0, t1 = maximal_interval(system, pi0, 0.0)
        raise FiniteEscapeError(f"Pi(0) infeasible on [0, 1]: escape at t~{t1:.9f}", t1)
    if t == s:
        return np.eye(system.n)
    table = gramian_table(system)
    pi_s = pi_at(system, pi0, 0.0, s)
    return table.transition(t, s) @ (np.eye(system.n) - table.gramian(t, s) @ pi_s)


class RiccatiSolution:
    """Riccati solution anchored at ``(s, Pi_s)``.

    ``feasible`` tells whether it exists on all of [0, 1]; ``interval`` is the
    maximal existence interval clipped to [0, 1].
    """

    def __init__(self, system: LtvSystem, pi_s, s: float = 0.0):
        self.system = system
        self.s = float(s)
        self.pi_s = as_sym(pi_s)
        self.feasible, self.margin = existence_condition(system, self.pi_s, self.s)
        self._interval = None

    @property
    def anchor(self):
        return self.s, self.pi_s

    @property
    def interval(self):
        if self._interval is None:
            self._interval = (0.0, 1.0) if self.feasible else maximal_interval(self.system, self.pi_s, self.s)
        return self._interval

    def __call__(self, t):
        return pi_at(self.system, self.pi_s, self.s, t)

    def pi0(self):
        return self.pi_s if self.s == 0.0 else self(0.0)

    def require_feasible(self):
        if not self.feasible:
            t0, t1 = self.interval
            esc = t1 if t1 < 1.0 else t0
            raise FiniteEscapeError(f"Riccati solution escapes at t~{esc:.9f}", esc)
        return self

    def closed_loop(self, t, s):
        return closed_loop_transition(self.system, self.pi0(), t, s)


def normalized_gain(system: LtvSystem, pi_t, t):
    """Feedback gain ``K(t) = -R^-1 B^T Pi(t)``."""
    r = system.R(t)
    return -np.linalg.solve(r, system.B(t).T @ pi_t)


__all__ = [
    "RiccatiSolution",
    "closed_loop_transition",
    "escape_margin",
    "existence_condition",
    "maximal_interval",
    "normalized_gain",
    "pi_at",
]
