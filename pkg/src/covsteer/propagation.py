"""
State-transition matrices, controllability Gramians and rank diagnostics.

One augmented matrix ODE is integrated over [0, 1]:

    d/dt Phi(t,0) =  A(t) Phi(t,0)
    d/dt Phi(0,t) = -Phi(0,t) A(t)
    d/dt W(t)     =  Phi(0,t) B R^-1 B^T Phi(0,t)^T,     W(t) = N(t,0)

Everything else is algebra on the dense output:

    Phi(t,s) = Phi(t,0) Phi(0,s)
    N(t,s)   = Phi(s,0) (W(t) - W(s)) Phi(s,0)^T

``N(t,s)`` is negative definite for ``t < s``, matching the convention that
``N(0,s)^-1`` runs to minus infinity as ``s -> 0+``.
"""
from __future__ import annotations

import threading
import weakref
from dataclasses import dataclass, field
from math import comb

import numpy as np
from scipy.integrate import solve_ivp

from .errors import ModelValidationError, NumericalError
from .system import LtvSystem, sym

ODE_METHOD = "DOP853"
ODE_RTOL = 1e-12
ODE_ATOL = 1e-14

RANK_TOL = 1e-9
GRAMIAN_TOL = 1e-12


class GramianTable:
    """Dense-output cache of ``Phi(t,0)``, ``Phi(0,t)`` and ``N(t,0)``.

    Built once per system; read-only afterwards, so concurrent queries are
    safe. All query methods accept scalars or 1-D arrays of times and return
    stacked matrices for arrays.
    """

    def __init__(self, system: LtvSystem, method=ODE_METHOD, rtol=ODE_RTOL, atol=ODE_ATOL):
        self.system = system
        n = system.n
        self.n = n
        nn = n * n
        const_rhalf = None
        if system.R.form == "constant":
            from .system import sqrtm_psd

            const_rhalf = sqrtm_psd(system.R(0.0), inverse=True)

        def rhs(t, y):
            a = system.A(t)
            if const_rhalf is not None:
                bt = system.B(t) @ const_rhalf
            else:
                bt = system.normalized_B(t)
            phi = y[:nn].reshape(n, n)
            psi = y[nn : 2 * nn].reshape(n, n)
            pb = psi @ bt
            return np.concatenate([(a @ phi).ravel(), (-psi @ a).ravel(), (pb @ pb.T).ravel()])

        y0 = np.concatenate([np.eye(n).ravel(), np.eye(n).ravel(), np.zeros(nn)])
        sol = solve_ivp(rhs, (0.0, 1.0), y0, method=method, rtol=rtol, atol=atol, dense_output=True)
        if not sol.success:
            raise NumericalError(
                f"transition integration failed: {sol.message} "
                f"(t reached {sol.t[-1]:.6g}, {sol.t.size} steps, {sol.nfev} evaluations)"
            )
        self._sol = sol.sol
        self.nfev = sol.nfev
        self.nsteps = sol.t.size
        self.phi10 = self.phi(1.0)
        self.phi01 = self.phi_inv(1.0)
        self.N10 = self.W(1.0)

    def _eval(self, t, block):
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        n, nn = self.n, self.n * self.n
        y = self._sol(t_arr)  # (3 nn, m)
        out = y[block * nn : (block + 1) * nn].T.reshape(-1, n, n)
        out = np.where(t_arr[:, None, None] == 0.0, self._y0_block(block), out)
        return out[0] if np.ndim(t) == 0 else out

    def _y0_block(self, block):
        return np.zeros((self.n, self.n)) if block == 2 else np.eye(self.n)

    def phi(self, t):
        """``Phi(t, 0)``."""
        return self._eval(t, 0)

    def phi_inv(self, t):
        """``Phi(0, t)``."""
        return self._eval(t, 1)

    def W(self, t):
        """``N(t, 0)``, symmetrized."""
        return sym(self._eval(t, 2))

    def transition(self, t, s):
        return self.phi(t) @ self.phi_inv(s)

    def gramian(self, t, s):
        """``N(t, s)`` for any ordering of ``t`` and ``s``."""
        ps = self.phi(s)
        return sym(ps @ (self.W(t) - self.W(s)) @ np.swapaxes(ps, -1, -2))


_TABLES: "weakref.WeakKeyDictionary[LtvSystem, GramianTable]" = weakref.WeakKeyDictionary()
_TABLES_LOCK = threading.Lock()


def gramian_table(system: LtvSystem) -> GramianTable:
    """Cached :class:`GramianTable` for ``system``."""
    with _TABLES_LOCK:
        table = _TABLES.get(system)
    if table is None:
        table = GramianTable(system)
        with _TABLES_LOCK:
            table = _TABLES.setdefault(system, table)
    return table


def _check_time(*ts):
    for t in ts:
        if not 0.0 <= t <= 1.0:
            raise ModelValidationError(f"time {t!r} outside [0, 1]")


def transition(system: LtvSystem, t: float, s: float) -> np.ndarray:
    """State-transition matrix ``Phi_A(t, s)``; ``t < s`` is allowed."""
    _check_time(t, s)
    if t == s:
        return np.eye(system.n)
    return gramian_table(system).transition(t, s)


def gramian(system: LtvSystem, t1: float, t0: float) -> np.ndarray:
    """Controllability Gramian ``N(t1, t0)`` with the ``B R^-1 B^T`` integrand."""
    _check_time(t1, t0)
    if t1 < t0:
        raise ModelValidationError("gramian expects t0 <= t1")
    if t1 == t0:
        return np.zeros((system.n, system.n))
    return gramian_table(system).gramian(t1, t0)


# ----------------------------------------------------------------- ranks
def gamma_blocks(system: LtvSystem, t: float):
    """``[Gamma_0(t), ..., Gamma_n(t)]`` from ``Gamma_k = -A Gamma_{k-1} + d/dt Gamma_{k-1}``.

    Derivatives of the products are expanded with the Leibniz rule, so only
    derivatives of ``A`` (up to order n-1) and ``B`` (up to order n) are needed.
    """
    n = system.n
    a_der = [system.A.derivative(t, i, "A") for i in range(n)]
    # g[j] = j-th derivative of the current Gamma_k
    g = [system.B.derivative(t, j, "B") for j in range(n + 1)]
    blocks = [g[0]]
    for k in range(1, n + 1):
        nxt = []
        for j in range(n - k + 1):
            acc = g[j + 1].copy()
            for i in range(j + 1):
                acc -= comb(j, i) * a_der[i] @ g[j - i]
            nxt.append(acc)
        g = nxt
        blocks.append(g[0])
    return blocks


def controllability_matrix(system: LtvSystem, t: float):
    """Return ``(Theta_n(t), Theta_{n+1}(t))``."""
    blocks = gamma_blocks(system, t)
    return np.hstack(blocks[:-1]), np.hstack(blocks)


def numerical_rank(m: np.ndarray, rank_tol: float = RANK_TOL) -> int:
    s = np.linalg.svd(m, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > rank_tol * s[0]))


@dataclass
class ControllabilityReport:
    grid: np.ndarray
    theta_ranks: np.ndarray  # (len(grid), n+1): rank of Theta_1..Theta_{n+1}
    uniform: bool
    total: bool
    index_invariant: bool
    min_gramian_eig: dict  # (s, t) -> smallest eigenvalue of N(t, s)
    n: int
    uniform_witnesses: list = field(default_factory=list)
    total_witnesses: list = field(default_factory=list)
    index_witnesses: list = field(default_factory=list)
    rank_tol: float = RANK_TOL
    gramian_tol: float = GRAMIAN_TOL

    @property
    def certification(self):
        return "certified on grid" if self.total else "not certified"

    def to_dict(self):
        return {
            "n": self.n,
            "uniform": self.uniform,
            "total": self.total,
            "total_certification": self.certification,
            "index_invariant": self.index_invariant,
            "index_invariance_note": f"rank constancy certified only up to rank_tol={self.rank_tol:g}",
            "rank_tol": self.rank_tol,
            "gramian_tol": self.gramian_tol,
            "grid": [float(t) for t in self.grid],
            "theta_ranks": self.theta_ranks.tolist(),
            "uniform_witnesses": [float(t) for t in self.uniform_witnesses],
            "total_witnesses": [[float(a), float(b)] for a, b in self.total_witnesses],
            "index_witnesses": [float(t) for t in self.index_witnesses],
            "min_gramian_eig": [
                {"s": float(s), "t": float(t), "min_eig": float(v)}
                for (s, t), v in sorted(self.min_gramian_eig.items())
            ],
        }

    def format_table(self):
        n = self.n
        head = "     t  " + " ".join(f"rk(Th{i})" for i in range(1, n + 2))
        lines = [head, "-" * len(head)]
        for t, ranks in zip(self.grid, self.theta_ranks):
            lines.append(f"{t:6.3f}  " + " ".join(f"{r:8d}" for r in ranks))
        eig_min = min(self.min_gramian_eig.values()) if self.min_gramian_eig else float("nan")
        lines += [
            "",
            f"uniform controllability : {self.uniform}"
            + (f"  (rank deficient at t = {', '.join(f'{w:g}' for w in self.uniform_witnesses[:6])})" if not self.uniform else ""),
            f"total controllability   : {self.total}  [{self.certification}]",
            f"index invariant         : {self.index_invariant}  (up to rank_tol={self.rank_tol:g})",
            f"min eig N(t,s), s<t     : {eig_min:.3e}",
        ]
        return "\n".join(lines)


def check_controllability(
    system: LtvSystem,
    grid=None,
    rank_tol: float = RANK_TOL,
    gramian_tol: float = GRAMIAN_TOL,
    gramian_points: int = 21,
) -> ControllabilityReport:
    """Grid-based uniform / total controllability and index-invariance check.

    Total controllability needs every grid window ``[t_i, t_{i+1}]`` to hold a
    full-rank ``Theta_n`` point (endpoints or midpoint) and ``N(t,s) > 0`` on a
    triangular sample of ``gramian_points`` times. A finite grid cannot prove
    the property for every subinterval; the report says "certified on grid".
    """
    if grid is None:
        grid = np.linspace(0.0, 1.0, 101)
    grid = np.asarray(grid, dtype=float)
    if grid.size < 11:
        raise ModelValidationError("controllability grid needs at least 11 points")
    n = system.n

    ranks = np.zeros((grid.size, n + 1), dtype=int)
    for k, t in enumerate(grid):
        blocks = gamma_blocks(system, float(t))
        for i in range(1, n + 2):
            ranks[k, i - 1] = numerical_rank(np.hstack(blocks[:i]), rank_tol)
    full = ranks[:, n - 1] == n
    uniform = bool(full.all())
    uniform_w = [float(t) for t in grid[~full]]

    mids = 0.5 * (grid[1:] + grid[:-1])
    mid_full = np.array(
        [numerical_rank(controllability_matrix(system, float(t))[0], rank_tol) == n for t in mids]
    )
    window_ok = full[:-1] | full[1:] | mid_full
    total_w = [(float(grid[i]), float(grid[i + 1])) for i in np.flatnonzero(~window_ok)]

    idx = np.unique(np.round(np.linspace(0, grid.size - 1, min(gramian_points, grid.size))).astype(int))
    sample = grid[idx]
    table = gramian_table(system)
    min_eig = {}
    for a, s in enumerate(sample):
        for t in sample[a + 1 :]:
            min_eig[(float(s), float(t))] = float(np.linalg.eigvalsh(table.gramian(t, s))[0])
    gram_ok = all(v > gramian_tol for v in min_eig.values())
    if not gram_ok:
        total_w += [k for k, v in min_eig.items() if v <= gramian_tol]
    total = bool(window_ok.all() and gram_ok)

    const = np.all(ranks == ranks[0], axis=0)
    same_tail = ranks[:, n - 1] == ranks[:, n]
    index_invariant = bool(const.all() and same_tail.all())
    index_w = [float(t) for t in grid[(ranks != ranks[0]).any(axis=1) | ~same_tail]]

    return ControllabilityReport(
        grid=grid,
        theta_ranks=ranks,
        uniform=uniform,
        total=total,
        index_invariant=index_invariant,
        min_gramian_eig=min_eig,
        n=n,
        uniform_witnesses=uniform_w,
        total_witnesses=total_w,
        index_witnesses=index_w,
        rank_tol=rank_tol,
        gramian_tol=gramian_tol,
    )
