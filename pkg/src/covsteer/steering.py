"""
Boundary map ``f: Pi(0) -> Sigma(1)``, its Jacobian and its inversion.

With ``X_s = (I - N(s,0) Pi0)^-1`` and the closed-loop transition
``Phi_cl(t,0) = Phi(t,0) (I - N(t,0) Pi0)`` the covariance is

    Sigma(t) = Phi_cl(t,0) [Sigma0 + int_0^t P_s ds] Phi_cl(t,0)^T,
    P_s      = X_s Phi(0,s) K(s) Phi(0,s)^T X_s^T,

where ``K = C D C^T`` is the noise kernel. Differentiating in ``Pi0`` gives

    d vec f = -(Phi_cl(1,0) (x) Phi_cl(1,0)) S d vec Pi0,
    S = Sigma0 (x) T_1 + T_1 (x) Sigma0
        + int_0^1 P_s (x) (T_1 - T_s) + (T_1 - T_s) (x) P_s ds,

with ``T_s = X_s N(s,0) = (N(s,0)^-1 - Pi0)^-1``. ``vec`` stacks columns.

Integrals use composite Gauss-Legendre rules on a mesh that is graded
geometrically towards both ends of the interval: ``P_s`` develops boundary
layers at ``s = 0`` when ``Pi0`` is very negative and at ``s = 1`` when
``Pi0`` approaches ``N(1,0)^-1``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import (
    DomainError,
    InfeasibleProblemError,
    KernelMismatchError,
    ModelValidationError,
    SolverError,
)
from .propagation import gramian_table
from .system import LtvSystem, SteeringProblem, as_sym, sqrtm_psd, sym

GL_NODES = 16
QUAD_RTOL = 1e-10
MAX_LEVEL = 7
FEAS_TOL = 1e-10
NEWTON_MAX_ITER = 60
MAX_HALVINGS = 40
HOMOTOPY_THETAS = (0.0, 0.25, 0.5, 0.75, 1.0)
HOMOTOPY_MAX_SPLITS = 6
KERNEL_MATCH_TOL = 1e-9
ETA_RTOL = 1e-8

_GL_X, _GL_W = np.polynomial.legendre.leggauss(GL_NODES)


def vec(m):
    """Column-major stacking."""
    return np.asarray(m).reshape(-1, order="F")


def unvec(v, n):
    return np.asarray(v).reshape(n, n, order="F")


# ------------------------------------------------------------------ quadrature
def graded_breaks(a=0.0, b=1.0, depth=8, interior=8):
    """Panel breakpoints on [a, b], geometric towards both ends.

    The outermost panels have width ``(b - a) * 10^-depth``; the middle
    ``[a + 1%, b - 1%]`` is split uniformly into ``interior`` panels.
    """
    h = b - a
    rel = 10.0 ** -np.arange(depth, 1, -1, dtype=float)  # 1e-8 .. 1e-2
    left = a + h * rel
    mid = np.linspace(a + 0.01 * h, b - 0.01 * h, interior + 1)
    right = b - h * rel[::-1]
    return np.unique(np.concatenate([[a], left, mid, right, [b]]))


def gauss_mesh(breaks, level=0):
    """Nodes, weights and panel index of a composite Gauss-Legendre rule.

    Each panel of ``breaks`` is split into ``2**level`` equal sub-panels.
    """
    breaks = np.asarray(breaks, dtype=float)
    k = 2**level
    frac = np.linspace(0.0, 1.0, k + 1)
    lo = breaks[:-1, None] + (breaks[1:] - breaks[:-1])[:, None] * frac[None, :-1]
    hi = breaks[:-1, None] + (breaks[1:] - breaks[:-1])[:, None] * frac[None, 1:]
    lo, hi = lo.ravel(), hi.ravel()
    half = 0.5 * (hi - lo)
    nodes = (0.5 * (hi + lo))[:, None] + half[:, None] * _GL_X[None, :]
    weights = half[:, None] * _GL_W[None, :]
    panel = np.repeat(np.arange(breaks.size - 1), k * GL_NODES)
    return nodes.ravel(), weights.ravel(), panel


def _rel_change(new, old):
    return np.linalg.norm(new - old) / max(np.linalg.norm(new), 1e-300)


# ------------------------------------------------------------------ workspace
class _Nodes:
    """Gramian data sampled at the quadrature nodes of one mesh level."""

    def __init__(self, system, breaks, level):
        table = gramian_table(system)
        self.t, self.w, self.panel = gauss_mesh(breaks, level)
        self.phi_inv = table.phi_inv(self.t)  # Phi(0, s)
        self.W = table.W(self.t)  # N(s, 0)
        pt = np.swapaxes(self.phi_inv, 1, 2)
        self.G_noise = sym(self.phi_inv @ system.noise_kernel_many(self.t) @ pt)
        self.G_ctrl = sym(self.phi_inv @ system.control_kernel_many(self.t) @ pt)


class BoundaryMapWorkspace:
    """Cached quadrature data for repeated evaluations of ``f`` and its Jacobian.

    ``kernel = (alpha, beta)`` selects the noise kernel
    ``alpha * B R^-1 B^T + beta * C D C^T`` (the default ``(0, 1)`` is the
    system's own kernel); other values are used by the homotopy solver.

    The quadrature level is chosen by :meth:`refine` and then held fixed so
    that ``f`` is a smooth function of ``Pi0`` during Newton iterations and
    finite differencing. A workspace is not meant to be shared between
    concurrently running solves.
    """

    def __init__(self, system: LtvSystem, Sigma0, kernel=(0.0, 1.0), level=1):
        self.system = system
        self.n = system.n
        self.Sigma0 = as_sym(Sigma0)
        if self.Sigma0.shape != (self.n, self.n):
            raise ModelValidationError(f"Sigma0 must be {self.n}x{self.n}")
        self.kernel = tuple(float(k) for k in kernel)
        self.level = level
        table = gramian_table(system)
        self.phi10 = table.phi10
        self.N10 = table.N10
        self._n10_half = sqrtm_psd(self.N10)
        self._breaks = graded_breaks()
        self._cache = {}

    # -- data
    def nodes(self, level=None):
        level = self.level if level is None else level
        if level not in self._cache:
            self._cache[level] = _Nodes(self.system, self._breaks, level)
        return self._cache[level]

    def kernel_samples(self, level=None):
        nd = self.nodes(level)
        a, b = self.kernel
        g = b * nd.G_noise
        if a:
            g = g + a * nd.G_ctrl
        return g

    # -- feasibility
    def margin(self, pi0):
        """``1 - lambda_max(N10^1/2 Pi0 N10^1/2)``; positive iff ``Pi0 < N(1,0)^-1``."""
        r = self._n10_half
        return 1.0 - np.linalg.eigvalsh(sym(r @ as_sym(pi0) @ r))[-1]

    def require_feasible(self, pi0):
        m = self.margin(pi0)
        if not m > 0.0:
            raise DomainError(f"Pi0 violates Pi0 < N(1,0)^-1 (margin {m:.3e})")
        return m

    # -- core evaluations
    def _pieces(self, pi0, level):
        nd = self.nodes(level)
        n = self.n
        lhs = np.eye(n) - nd.W @ pi0
        X = np.linalg.solve(lhs, np.broadcast_to(np.eye(n), lhs.shape))
        G = self.kernel_samples(level)
        P = sym(X @ G @ np.swapaxes(X, 1, 2))
        return nd, X, P

    def closed_loop(self, pi0):
        """``Phi_cl(1, 0) = Phi(1,0) (I - N(1,0) Pi0)``."""
        return self.phi10 @ (np.eye(self.n) - self.N10 @ pi0)

    def noise_integral(self, pi0, level=None):
        """``int_0^1 P_s ds``."""
        _, _, P = self._pieces(pi0, self.level if level is None else level)
        nd = self.nodes(level)
        return sym(np.einsum("i,iab->ab", nd.w, P))

    def f(self, pi0, level=None):
        pi0 = as_sym(pi0)
        self.require_feasible(pi0)
        F = self.closed_loop(pi0)
        inner = self.Sigma0 + self.noise_integral(pi0, level)
        return sym(F @ inner @ F.T)

    def bracket(self, pi0, level=None):
        """The symmetric positive definite middle factor ``S`` of the Jacobian."""
        pi0 = as_sym(pi0)
        self.require_feasible(pi0)
        n = self.n
        nd, X, P = self._pieces(pi0, self.level if level is None else level)
        T = sym(X @ nd.W)
        T1 = sym(np.linalg.solve(np.eye(n) - self.N10 @ pi0, self.N10))
        D = T1[None] - T
        n2 = n * n
        S = np.kron(self.Sigma0, T1) + np.kron(T1, self.Sigma0)
        acc = np.einsum("i,iab,icd->acbd", nd.w, P, D).reshape(n2, n2)
        S += acc + np.einsum("i,iab,icd->acbd", nd.w, D, P).reshape(n2, n2)
        return 0.5 * (S + S.T)

    def jacobian(self, pi0, level=None, return_bracket=False):
        """``-(Phi_cl (x) Phi_cl) S``.

        ``f`` is defined on symmetric matrices, so only the action on
        ``vec`` of symmetric perturbations is meaningful.
        """
        pi0 = as_sym(pi0)
        S = self.bracket(pi0, level)
        F = self.closed_loop(pi0)
        J = -np.kron(F, F) @ S
        return (J, S) if return_bracket else J

    def refine(self, pi0, rtol=QUAD_RTOL, max_level=MAX_LEVEL):
        """Raise the quadrature level until ``f(pi0)`` is stable to ``rtol``; returns the level."""
        pi0 = as_sym(pi0)
        level = self.level
        prev = self.f(pi0, level)
        while level < max_level:
            cur = self.f(pi0, level + 1)
            if _rel_change(cur, prev) < rtol:
                break
            level += 1
            prev = cur
        self.level = level
        return level


# ---------------------------------------------------------- covariance in t
def _solve_level(evaluate, rtol=QUAD_RTOL, start=0, max_level=MAX_LEVEL):
    prev = evaluate(start)
    for level in range(start + 1, max_level + 1):
        cur = evaluate(level)
        if _rel_change(cur, prev) < rtol:
            return cur
        prev = cur
    return prev


def covariance_trajectory(system: LtvSystem, pi0, Sigma0, ts, rtol=QUAD_RTOL):
    """``Sigma(t)`` at the times ``ts`` for the optimal closed loop with ``Pi(0) = pi0``.

    Uses the explicit convolution formula; the quadrature mesh is graded
    towards both ends of [0, 1] and contains every requested time as a
    breakpoint. Refined until successive levels agree to ``rtol``.
    """
    pi0 = as_sym(pi0)
    Sigma0 = as_sym(Sigma0)
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    if ts.size and (ts.min() < 0.0 or ts.max() > 1.0):
        raise ModelValidationError("covariance times must lie in [0, 1]")
    ws = BoundaryMapWorkspace(system, Sigma0)
    ws.require_feasible(pi0)
    n = system.n
    table = gramian_table(system)
    breaks = np.unique(np.concatenate([graded_breaks(), ts]))
    # panel index j covers [breaks[j], breaks[j+1]]; time ts[i] sits at breaks[pos[i]]
    pos = np.searchsorted(breaks, ts)
    kernel = system.noise_kernel_many

    def evaluate(level):
        t, w, panel = gauss_mesh(breaks, level)
        phi_inv = table.phi_inv(t)
        W = table.W(t)
        G = phi_inv @ kernel(t) @ np.swapaxes(phi_inv, 1, 2)
        lhs = np.eye(n) - W @ pi0
        X = np.linalg.solve(lhs, np.broadcast_to(np.eye(n), lhs.shape))
        P = X @ G @ np.swapaxes(X, 1, 2)
        per_panel = np.zeros((breaks.size - 1, n, n))
        np.add.at(per_panel, panel, w[:, None, None] * P)
        cum = np.concatenate([np.zeros((1, n, n)), np.cumsum(per_panel, axis=0)])
        return cum[pos]

    integrals = _solve_level(evaluate, rtol)
    F = table.phi(ts) @ (np.eye(n) - table.W(ts) @ pi0)
    return sym(F @ (Sigma0 + integrals) @ np.swapaxes(F, 1, 2))


def propagate_covariance(system: LtvSystem, pi0, Sigma0, t):
    """``Sigma(t)`` of the optimal closed loop started from ``Sigma0`` with ``Pi(0) = pi0``."""
    out = covariance_trajectory(system, pi0, Sigma0, np.atleast_1d(t))
    return out[0] if np.ndim(t) == 0 else out


def boundary_map(system: LtvSystem, Sigma0, pi0, workspace=None):
    """``f(Pi0) = Sigma(1)``; raises :class:`DomainError` unless ``Pi0 < N(1,0)^-1``."""
    ws = workspace or BoundaryMapWorkspace(system, Sigma0)
    if workspace is None:
        ws.refine(pi0)
    return ws.f(pi0)


def jacobian(system: LtvSystem, Sigma0, pi0, return_bracket=False, workspace=None):
    """Analytic ``n^2 x n^2`` Jacobian of ``vec f`` w.r.t. ``vec Pi0`` (column-major)."""
    ws = workspace or BoundaryMapWorkspace(system, Sigma0)
    if workspace is None:
        ws.refine(pi0)
    return ws.jacobian(pi0, return_bracket=return_bracket)


# ------------------------------------------------------------------ closed form
def _closed_form(N10, phi01, Sigma0, Sigma1, scale):
    """Root of ``f`` when the noise kernel equals ``scale * B R^-1 B^T``."""
    n_inv = np.linalg.inv(N10)
    s_half = sqrtm_psd(Sigma0)
    s_ihalf = sqrtm_psd(Sigma0, inverse=True)
    z = sym(phi01 @ Sigma1 @ phi01.T)
    inner = sym(0.25 * scale**2 * np.eye(N10.shape[0]) + s_half @ n_inv @ z @ n_inv @ s_half)
    root = sqrtm_psd(inner)
    return sym(0.5 * scale * s_ihalf @ s_ihalf + n_inv - s_ihalf @ root @ s_ihalf)


def _kernel_scale(system, nodes):
    """``int tr(C D C^T) / int tr(B R^-1 B^T)`` on the quadrature nodes."""
    kn = np.trace(system.noise_kernel_many(nodes.t), axis1=1, axis2=2)
    kb = np.trace(system.control_kernel_many(nodes.t), axis1=1, axis2=2)
    den = float(nodes.w @ kb)
    return float(nodes.w @ kn) / den if den > 0 else 0.0


def kernels_match(system: LtvSystem, grid=None, tol=KERNEL_MATCH_TOL):
    grid = np.linspace(0.0, 1.0, 101) if grid is None else np.asarray(grid, dtype=float)
    kn = system.noise_kernel_many(grid)
    kb = system.control_kernel_many(grid)
    scale = max(1.0, float(np.abs(kb).max()))
    return bool(np.abs(kn - kb).max() <= tol * scale)


def closed_form_pi0(system: LtvSystem, Sigma0, Sigma1, grid=None, tol=KERNEL_MATCH_TOL):
    """Explicit ``Pi(0)`` for systems whose noise enters like the control (``C D C^T = B R^-1 B^T``)."""
    if not kernels_match(system, grid, tol):
        raise KernelMismatchError(
            "closed form needs C D C^T = B R^-1 B^T on the check grid; use solve_pi0"
        )
    Sigma0, Sigma1 = as_sym(Sigma0), as_sym(Sigma1)
    if np.linalg.eigvalsh(Sigma0)[0] <= 0 or np.linalg.eigvalsh(Sigma1)[0] <= 0:
        raise ModelValidationError("closed form needs Sigma0 > 0 and Sigma1 > 0")
    table = gramian_table(system)
    return _closed_form(table.N10, table.phi01, Sigma0, Sigma1, 1.0)


# ------------------------------------------------------------------ Newton
@dataclass
class Iterate:
    pi0: np.ndarray
    residual: float
    damping: float
    theta: float = 1.0


@dataclass
class SolverTrace:
    iterates: list = field(default_factory=list)
    converged: bool = False
    jacobian_condition: float = math.nan
    homotopy_used: bool = False
    stages: list = field(default_factory=list)
    quadrature_level: int = 0
    method: str = "newton"
    message: str = ""

    @property
    def residual(self):
        return self.iterates[-1].residual if self.iterates else math.inf

    def to_dict(self):
        return {
            "converged": self.converged,
            "method": self.method,
            "homotopy_used": self.homotopy_used,
            "homotopy_stages": [float(t) for t in self.stages],
            "jacobian_condition": float(self.jacobian_condition),
            "quadrature_level": self.quadrature_level,
            "final_residual": float(self.residual),
            "message": self.message,
            "iterates": [
                {
                    "pi0": it.pi0.tolist(),
                    "residual": float(it.residual),
                    "damping": float(it.damping),
                    "theta": float(it.theta),
                }
                for it in self.iterates
            ],
        }


def _newton(ws, target, pi0, tol, trace, theta=1.0, max_iter=NEWTON_MAX_ITER):
    """Damped Newton on ``vec(f(Pi0) - target)``; returns ``(pi0, ok)``."""
    n = ws.n
    r = ws.f(pi0) - target
    res = np.linalg.norm(r)
    trace.iterates.append(Iterate(pi0, res, 0.0, theta))
    for _ in range(max_iter):
        if res <= tol:
            return pi0, True
        J = ws.jacobian(pi0)
        try:
            step = np.linalg.solve(J, -vec(r))
        except np.linalg.LinAlgError:
            return pi0, False
        trace.jacobian_condition = float(np.linalg.cond(J))
        step = sym(unvec(step, n))
        alpha = 1.0
        for _ in range(MAX_HALVINGS):
            cand = sym(pi0 + alpha * step)
            if ws.margin(cand) > FEAS_TOL:
                r_new = ws.f(cand) - target
                res_new = np.linalg.norm(r_new)
                if res_new < (1.0 - 1e-4 * alpha) * res or res_new <= tol:
                    break
            alpha *= 0.5
        else:
            return pi0, False
        pi0, r, res = cand, r_new, res_new
        trace.iterates.append(Iterate(pi0, res, alpha, theta))
    return pi0, res <= tol


def initial_guess(system: LtvSystem, Sigma0, Sigma1):
    """Closed form for the surrogate kernel ``c B R^-1 B^T`` with matched total intensity."""
    table = gramian_table(system)
    ws = BoundaryMapWorkspace(system, Sigma0, level=0)
    c = _kernel_scale(system, ws.nodes(0))
    return _closed_form(table.N10, table.phi01, as_sym(Sigma0), as_sym(Sigma1), c), c


def solve_pi0(system: LtvSystem, problem: SteeringProblem, tol=1e-10, homotopy=True, pi_init=None):
    """Find the symmetric ``Pi0 < N(1,0)^-1`` with ``f(Pi0) = Sigma1``.

    Damped Newton from a closed-form warm start; each trial step must stay
    feasible and decrease the residual. If Newton stalls, continuation over
    the kernels ``(1 - theta) c B R^-1 B^T + theta C D C^T`` tracks the root
    from the surrogate problem to the true one. Returns ``(Pi0, trace)``.
    """
    n = system.n
    problem.check(n)
    Sigma0, Sigma1 = as_sym(problem.Sigma0), as_sym(problem.Sigma1)
    abs_tol = tol * max(1.0, np.linalg.norm(Sigma1))
    if n == 1 and Sigma0[0, 0] <= 0.0:
        pi0, trace = solve_pi0_scalar(system, 0.0, float(Sigma1[0, 0]), tol=tol)
        return pi0, trace

    guess, c = initial_guess(system, Sigma0, Sigma1)
    if pi_init is not None:
        guess = as_sym(pi_init)
    trace = SolverTrace()
    ws = BoundaryMapWorkspace(system, Sigma0)
    if ws.margin(guess) <= FEAS_TOL:
        guess = np.zeros((n, n))
    ws.refine(guess)
    # exact root check before Newton: zero is a common special case
    zero = np.zeros((n, n))
    if np.linalg.norm(ws.f(zero) - Sigma1) <= abs_tol:
        guess = zero

    pi0, ok = _newton(ws, Sigma1, guess, abs_tol, trace)
    if ok:
        pi0, ok = _polish(ws, Sigma1, pi0, abs_tol, trace)
    if not ok and homotopy:
        trace.homotopy_used = True
        trace.method = "homotopy"
        pi0, ok = _homotopy(system, Sigma0, Sigma1, c, abs_tol, trace)
        if ok:
            pi0, ok = _polish(ws, Sigma1, pi0, abs_tol, trace)
    trace.converged = bool(ok)
    trace.quadrature_level = ws.level
    if not ok:
        trace.message = f"no convergence: residual {trace.residual:.3e} > {abs_tol:.3e}"
        raise SolverError(trace.message, trace)
    trace.message = "converged"
    return pi0, trace


def _polish(ws, target, pi0, tol, trace):
    """Re-check the quadrature level at the root and re-converge if it moved."""
    for _ in range(3):
        old = ws.level
        if ws.refine(pi0) == old:
            return pi0, True
        pi0, ok = _newton(ws, target, pi0, tol, trace)
        if not ok:
            return pi0, False
    return pi0, True


def _homotopy(system, Sigma0, Sigma1, c, tol, trace):
    table = gramian_table(system)
    pi0 = _closed_form(table.N10, table.phi01, Sigma0, Sigma1, c)
    thetas = list(HOMOTOPY_THETAS[1:])
    theta_prev = 0.0
    splits = 0
    while thetas:
        theta = thetas[0]
        ws = BoundaryMapWorkspace(system, Sigma0, kernel=((1.0 - theta) * c, theta))
        ws.refine(pi0)
        cand, ok = _newton(ws, Sigma1, pi0, tol, trace, theta=theta)
        if ok:
            pi0, theta_prev = cand, theta
            trace.stages.append(theta)
            thetas.pop(0)
            continue
        if splits >= HOMOTOPY_MAX_SPLITS * len(HOMOTOPY_THETAS):
            return pi0, False
        splits += 1
        thetas.insert(0, 0.5 * (theta_prev + theta))
    return pi0, True


# ------------------------------------------------------------------ scalar path
def _require_scalar(system):
    if (system.n, system.p, system.q) != (1, 1, 1):
        raise ModelValidationError(
            f"scalar routine needs n = p = q = 1, got ({system.n}, {system.p}, {system.q})"
        )


ETA_EPS = (1e-2, 1e-3, 1e-4, 1e-5)
ETA_CONV_RTOL = 1e-4


def _eta_integrand(system, t):
    """``phi(1,0)^2 N(1,0)^2 phi(0,t)^2 c(t)^2 d(t) / N(t,0)^2``.

    ``N(t,0)`` is recomputed by a 32-point Gauss rule on [0, t] so that it
    keeps full relative accuracy as ``t -> 0``.
    """
    table = gramian_table(system)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    x, w = np.polynomial.legendre.leggauss(32)
    tau = 0.5 * t[:, None] * (x[None, :] + 1.0)
    g = table.phi_inv(tau.ravel())[:, 0, 0] ** 2 * system.control_kernel_many(tau.ravel())[:, 0, 0]
    n_t = 0.5 * t * (g.reshape(tau.shape) @ w)
    k = system.noise_kernel_many(t)[:, 0, 0]
    phi0t = table.phi_inv(t)[:, 0, 0]
    pre = (table.phi10[0, 0] * table.N10[0, 0]) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        return pre * phi0t**2 * k / n_t**2


def _eta_partial(system, eps):
    """``int_eps^1`` of the eta integrand on a mesh graded towards ``eps``."""
    decades = max(1, int(math.ceil(-math.log10(eps))))
    breaks = np.unique(np.concatenate([eps * 10.0 ** np.arange(decades + 1), np.linspace(0.1, 1.0, 10)]))
    breaks = breaks[(breaks >= eps) & (breaks <= 1.0)]

    def evaluate(level):
        t, w, _ = gauss_mesh(breaks, level)
        return np.array([w @ _eta_integrand(system, t)])

    return float(_solve_level(evaluate, rtol=1e-12, max_level=5)[0])


def eta(system: LtvSystem):
    """Supremum of ``sigma(1)`` reachable from ``sigma0 = 0`` in the scalar problem.

    ``+inf`` when the noise acts at ``t = 0``. Otherwise ``int_eps^1`` of the
    integrand is evaluated for shrinking ``eps`` and completed with the
    power-law tail ``eps h(eps) / (alpha + 1)`` fitted from the local slope
    ``alpha`` of the integrand. A non-integrable slope (``alpha <= -1``) with
    growing partial integrals returns ``+inf``; anything that neither
    converges nor clearly diverges returns ``nan`` (undetermined).
    """
    _require_scalar(system)
    if system.noise_kernel(0.0)[0, 0] > 0.0:
        return math.inf
    partial, corrected, slopes = [], [], []
    for eps in ETA_EPS:
        val = _eta_partial(system, eps)
        h_hi, h_lo = _eta_integrand(system, np.array([eps, eps / 10.0]))
        if h_hi > 0 and h_lo > 0:
            alpha = math.log10(h_hi / h_lo)
        elif h_hi == 0 and h_lo == 0:
            alpha = math.inf  # integrand vanishes near 0: no tail
        else:
            alpha = math.nan
        tail = eps * h_hi / (alpha + 1.0) if np.isfinite(alpha) and alpha > -1.0 else 0.0
        partial.append(val)
        corrected.append(val + tail)
        slopes.append(alpha)
    grow = [_rel(partial[k + 1], partial[k]) for k in range(len(partial) - 1)]
    if slopes[-1] <= -1.0 + 1e-3 and all(g > ETA_CONV_RTOL for g in grow[-2:]):
        return math.inf
    if np.isnan(slopes[-1]):
        return math.nan
    if _rel(corrected[-1], corrected[-2]) <= ETA_CONV_RTOL:
        return corrected[-1]
    return math.nan


def _rel(a, b):
    return abs(a - b) / max(abs(a), 1e-300)


def solve_pi0_scalar(system: LtvSystem, sigma0: float, sigma1: float, tol=1e-10):
    """Scalar root of ``f(pi0) = sigma1`` by bracketing and Brent's method.

    ``f`` is strictly decreasing on ``(-inf, 1/N(1,0))``. For ``sigma0 = 0``
    the reachable range is ``(0, eta)``; targets at or above ``eta`` raise
    :class:`InfeasibleProblemError`; so do targets within a relative
    ``ETA_RTOL`` below ``eta``, which quadrature cannot tell apart from it.
    Returns ``(pi0, trace)``.
    """
    _require_scalar(system)
    sigma0, sigma1 = float(sigma0), float(sigma1)
    if sigma1 <= 0 or sigma0 < 0:
        raise ModelValidationError("scalar solve needs sigma0 >= 0 and sigma1 > 0")
    abs_tol = tol * max(1.0, sigma1)
    trace = SolverTrace(method="bracket")
    if sigma0 == 0.0:
        e = eta(system)
        if not (np.isnan(e) or sigma1 < e * (1.0 - ETA_RTOL)):
            raise InfeasibleProblemError(
                f"sigma1 = {sigma1:g} is not reachable from sigma0 = 0: it must lie below "
                f"eta = {e:g}, the limit of sigma(1) as pi0 -> -inf"
            )
    ws = BoundaryMapWorkspace(system, [[sigma0]])
    n10 = float(ws.N10[0, 0])

    def g(p):
        ws.refine(np.array([[p]]))
        val = float(ws.f(np.array([[p]]))[0, 0]) - sigma1
        trace.iterates.append(Iterate(np.array([[p]]), abs(val), 1.0))
        return val

    if abs(g(0.0)) <= abs_tol:
        trace.converged, trace.message = True, "converged"
        return np.zeros((1, 1)), trace
    hi = None
    for k in range(2, 15):
        p = (1.0 - 10.0**-k) / n10
        if g(p) < 0.0:
            hi = p
            break
    lo = None
    span = 1.0
    for _ in range(60):
        if g(-span) > 0.0:
            lo = -span
            break
        span *= 10.0 if span < 1e6 else 2.0
    if hi is None or lo is None:
        trace.message = "could not bracket the root"
        raise SolverError(trace.message, trace)
    p = brentq(g, lo, hi, xtol=1e-15 * max(1.0, abs(lo)), rtol=4 * np.finfo(float).eps, maxiter=500)
    # Newton polish with the analytic derivative
    for _ in range(5):
        r = g(p)
        if abs(r) <= abs_tol:
            break
        d = float(ws.jacobian(np.array([[p]]))[0, 0])
        p_new = p - r / d
        if ws.margin(np.array([[p_new]])) <= FEAS_TOL:
            break
        p = p_new
    res = abs(g(p))
    trace.converged = res <= abs_tol
    trace.quadrature_level = ws.level
    if not trace.converged:
        trace.message = f"no convergence: residual {res:.3e} > {abs_tol:.3e}"
        raise SolverError(trace.message, trace)
    trace.message = "converged"
    return np.array([[p]]), trace


__all__ = [
    "BoundaryMapWorkspace",
    "Iterate",
    "SolverTrace",
    "boundary_map",
    "closed_form_pi0",
    "covariance_trajectory",
    "eta",
    "gauss_mesh",
    "graded_breaks",
    "initial_guess",
    "jacobian",
    "kernels_match",
    "propagate_covariance",
    "solve_pi0",
    "solve_pi0_scalar",
    "unvec",
    "vec",
]
