"""
Monte Carlo simulation of the closed-loop jump-diffusion

    dx = A x dt + B u dt + C dm,      u = K(t) x + nu(t),

and empirical moment estimation.

Randomness is keyed per path: path ``i`` of a run with master seed ``s``
draws its initial state, jump events and Wiener increments from three
independent generators seeded with ``(s, i, 0)``, ``(s, i, 1)`` and
``(s, i, 2)``. The draws of a path are therefore independent of the other
paths, of the block layout and of the thread count, and its initial state
and jump events do not depend on the step size. Runs with the same
arguments are bit-identical for any thread count; changing ``n_paths``
changes the block layout and hence rounding in the last bits only.

Jump arrival times are exact: each channel is sampled by thinning a
homogeneous process at rate ``sup_t lambda_i(t)``. Jumps enter the state at
their exact times, transported to the end of the step they fall in.

Two time-stepping schemes are available:

``exponential`` (default)
    The linear closed-loop drift is propagated exactly with the transition
    matrix ``Psi(t_{k+1}, t_k)`` of ``A + B K``, the deterministic forcing by
    Gauss quadrature of ``int Psi(t_{k+1}, tau) b(tau) dtau``, and Wiener
    increments are transported from the step midpoint. Diffusion is still
    weak order one, but there is no drift bias from large feedback gains.
``euler``
    Plain Euler-Maruyama; jumps use the first-order transport
    ``(I + F(t_k) (t_{k+1} - tau))``.

Moments are accumulated as per-step running sums in ``BATCH_GROUPS``
contiguous groups of paths; standard errors come from the spread of the
group estimates.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .errors import ModelValidationError, NumericalError, SimulationError
from .noise import PrecomputedMartingale, Wiener, compensator_drift, state_drift
from .propagation import ODE_ATOL, ODE_METHOD, ODE_RTOL, gramian_table
from .system import LtvSystem, SteeringProblem, as_sym, sqrtm_psd, sym

BATCH_GROUPS = 20
BLOCK_SIZE = 2500
MAX_DT = 1e-3
KEEP_PATHS = 10
SCHEMES = ("exponential", "euler")
_STEP_GL = np.polynomial.legendre.leggauss(6)


def thread_count():
    """Worker threads for path generation, capped by ``COVSTEER_THREADS``."""
    env = os.environ.get("COVSTEER_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise SimulationError(f"COVSTEER_THREADS must be an integer, got {env!r}") from exc
    return 1


def path_rngs(seed: int, index: int):
    """Independent generators for (initial state, jumps, Wiener) of one path."""
    return tuple(np.random.default_rng([int(seed), int(index), k]) for k in range(3))


# ------------------------------------------------------------------ sampling
def sample_arrivals(rng, rate, sup_rate):
    """Arrival times on [0, 1] of a Poisson process with intensity ``rate(t)`` by thinning."""
    if sup_rate <= 0.0:
        return np.empty(0)
    count = rng.poisson(sup_rate)
    cand = np.sort(rng.random(count))
    if count == 0:
        return cand
    keep = rng.random(count) * sup_rate < rate(cand)
    return cand[keep]


def _jump_channels(system):
    """Per jump channel: (channel index, rate function, sup rate, jump law)."""
    out = []
    for comp in system.noise.jump_components:
        sup = comp.rate.sup_norm_bound()[:, 0]
        for i, law in enumerate(comp.jumps):
            if not np.isfinite(sup[i]):
                raise SimulationError(f"rate schedule of jump channel {i} is unbounded on [0, 1]")

            def rate(ts, comp=comp, i=i):
                return comp.rate.eval_many(ts)[:, i, 0]

            out.append((i, rate, max(float(sup[i]), 0.0), law))
    return out


def sample_jumps(rng, channels):
    """Jump events ``(times, channels, sizes)`` of one path, sorted by time."""
    times, chans, sizes = [], [], []
    for ch, rate, sup, law in channels:
        t = sample_arrivals(rng, rate, sup)
        if t.size:
            times.append(t)
            chans.append(np.full(t.size, ch))
            sizes.append(np.asarray(law.sample(rng, t.size), dtype=float))
    if not times:
        return np.empty(0), np.empty(0, dtype=int), np.empty(0)
    t = np.concatenate(times)
    order = np.argsort(t, kind="stable")
    return t[order], np.concatenate(chans)[order], np.concatenate(sizes)[order]


# ------------------------------------------------------------------ closed loop
class ClosedLoopTable:
    """``Psi(t,0)`` and ``Psi(0,t)`` for ``A + B K`` with ``u = K x + nu``.

    Exact schedules use the closed form ``Psi(t,0) = Phi(t,0)(I - N(t,0) Pi0)``;
    otherwise the pair is integrated with dense output.
    """

    def __init__(self, system, schedule):
        self.system = system
        self.n = system.n
        if getattr(schedule, "exact", False):
            self._table = gramian_table(system)
            self._pi0 = schedule.pi0
            self._sol = None
            return
        n, nn = self.n, self.n * self.n

        def rhs(t, y):
            k, _ = schedule.resample(np.array([t]))
            f = system.A(t) + system.B(t) @ k[0]
            return np.concatenate([(f @ y[:nn].reshape(n, n)).ravel(), (-y[nn:].reshape(n, n) @ f).ravel()])

        y0 = np.concatenate([np.eye(n).ravel(), np.eye(n).ravel()])
        sol = solve_ivp(rhs, (0.0, 1.0), y0, method=ODE_METHOD, rtol=ODE_RTOL, atol=ODE_ATOL, dense_output=True)
        if not sol.success:
            raise NumericalError(f"closed-loop transition integration failed: {sol.message}")
        self._sol = sol.sol

    def forward(self, ts):
        """``Psi(t, 0)`` stacked over ``ts``."""
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        n = self.n
        if self._sol is None:
            return self._table.phi(ts) @ (np.eye(n) - self._table.W(ts) @ self._pi0)
        return self._sol(ts)[: n * n].T.reshape(-1, n, n)

    def backward(self, ts):
        """``Psi(0, t)`` stacked over ``ts``."""
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        n = self.n
        if self._sol is None:
            lhs = np.eye(n) - self._table.W(ts) @ self._pi0
            return np.linalg.solve(lhs, self._table.phi_inv(ts))
        return self._sol(ts)[n * n :].T.reshape(-1, n, n)


# ------------------------------------------------------------------ ensemble
@dataclass
class PathEnsemble:
    """Result of :func:`simulate`.

    ``sums``/``sq_sums`` hold per-group, per-step sums of ``x - shift`` and
    its outer products, ``counts`` the group sizes. ``paths`` holds the full
    trajectories of the first ``keep_paths`` paths, ``record_states`` the
    states of every path at ``record_times``. The jump log is kept as the
    parallel arrays ``jump_path``, ``jump_channel``, ``jump_time`` and
    ``jump_size``; ``seeds`` lists the per-path generator keys.
    """

    times: np.ndarray
    dt: float
    n_paths: int
    seed: int
    scheme: str
    shift: np.ndarray
    sums: np.ndarray
    sq_sums: np.ndarray
    counts: np.ndarray
    paths: np.ndarray
    record_times: np.ndarray
    record_states: np.ndarray
    energy: np.ndarray
    jump_path: np.ndarray
    jump_channel: np.ndarray
    jump_time: np.ndarray
    jump_size: np.ndarray

    @property
    def seeds(self):
        return [(self.seed, i) for i in range(self.n_paths)]

    @property
    def terminal_states(self):
        return self.record_states[-1]

    def jump_log(self, path):
        """``[(time, channel, size), ...]`` of one path."""
        sel = self.jump_path == path
        return list(zip(self.jump_time[sel].tolist(), self.jump_channel[sel].tolist(), self.jump_size[sel].tolist()))

    def jump_counts(self):
        return np.bincount(self.jump_path, minlength=self.n_paths)

    def step_index(self, t):
        k = int(round(t / self.dt))
        if k < 0 or k >= self.times.size or abs(self.times[k] - t) > 1e-9:
            raise ModelValidationError(f"t = {t!r} is not on the simulation step grid")
        return k

    @classmethod
    def from_states(cls, times, states, groups=BATCH_GROUPS):
        """Ensemble from explicit states of shape ``(n_paths, len(times), n)``."""
        times = np.asarray(times, dtype=float)
        states = np.asarray(states, dtype=float)
        n_paths, m, n = states.shape
        bounds = _group_bounds(n_paths, groups)
        g = len(bounds) - 1
        sums = np.zeros((g, m, n))
        sq = np.zeros((g, m, n, n))
        shift = np.zeros((m, n))
        for j in range(g):
            blk = states[bounds[j] : bounds[j + 1]]
            sums[j] = blk.sum(axis=0)
            sq[j] = np.einsum("pki,pkj->kij", blk, blk)
        dt = float(times[1] - times[0]) if m > 1 else 1.0
        return cls(
            times, dt, n_paths, 0, "given", shift, sums, sq, np.diff(bounds), states[:KEEP_PATHS],
            times.copy(), np.swapaxes(states, 0, 1), np.zeros(n_paths),
            np.empty(0, dtype=int), np.empty(0, dtype=int), np.empty(0), np.empty(0),
        )


def _group_bounds(n_paths, groups=BATCH_GROUPS):
    g = max(1, min(groups, n_paths))
    return np.array([(j * n_paths) // g for j in range(g + 1)])


@dataclass
class Moments:
    mean: np.ndarray
    cov: np.ndarray
    mean_se: np.ndarray
    cov_se: np.ndarray


def empirical_moments(ensemble: PathEnsemble, t: float) -> Moments:
    """Sample mean and covariance (divisor ``N - 1``) at a step-grid time.

    Standard errors come from the spread of the per-group estimates
    (``nan`` when fewer than two groups hold at least two paths).
    """
    if ensemble.n_paths < 2:
        raise ModelValidationError("covariance needs at least two paths")
    k = ensemble.step_index(t)
    s, q, c = ensemble.sums[:, k], ensemble.sq_sums[:, k], ensemble.counts
    shift = ensemble.shift[k]
    N = c.sum()
    m = s.sum(axis=0) / N
    cov = (q.sum(axis=0) - N * np.outer(m, m)) / (N - 1)
    ok = c >= 2
    if ok.sum() >= 2:
        gm = s[ok] / c[ok, None]
        gc = (q[ok] - c[ok, None, None] * np.einsum("gi,gj->gij", gm, gm)) / (c[ok, None, None] - 1)
        G = ok.sum()
        mean_se = gm.std(axis=0, ddof=1) / math.sqrt(G)
        cov_se = gc.std(axis=0, ddof=1) / math.sqrt(G)
    else:
        mean_se = np.full(m.shape, np.nan)
        cov_se = np.full(cov.shape, np.nan)
    return Moments(m + shift, sym(cov), mean_se, cov_se)


def energy_estimate(ensemble: PathEnsemble):
    """Sample mean of ``int u^T R u dt`` and its batch standard error."""
    e = ensemble.energy
    bounds = _group_bounds(ensemble.n_paths)
    gm = np.array([e[bounds[j] : bounds[j + 1]].mean() for j in range(len(bounds) - 1)])
    se = gm.std(ddof=1) / math.sqrt(gm.size) if gm.size >= 2 else math.nan
    return float(e.mean()), float(se)


# ------------------------------------------------------------------ simulate
class _Plan:
    """Per-step data shared by all blocks (read-only)."""

    def __init__(self, system, schedule, problem, dt, scheme):
        n = system.n
        self.system = system
        self.scheme = scheme
        steps = int(round(1.0 / dt))
        self.steps = steps
        self.times = np.linspace(0.0, 1.0, steps + 1)
        self.dt = 1.0 / steps
        t = self.times
        self.K, self.nu = schedule.resample(t)
        self.R = system.R.eval_many(t)
        self.mu0 = np.asarray(problem.mu0, dtype=float)
        self.sig0_half = sqrtm_psd(as_sym(problem.Sigma0))
        self.channels = _jump_channels(system)

        dw = np.zeros((system.q, system.q))
        for comp in system.noise.components:
            if isinstance(comp, PrecomputedMartingale):
                raise SimulationError("precomputed martingales carry no path law and cannot be simulated")
            if isinstance(comp, Wiener):
                dw = dw + comp.scale @ comp.scale.T
        self.wiener_half = sqrtm_psd(dw)
        self.has_wiener = bool(np.any(dw))

        # deterministic forcing without the raw jump drift: B nu - C g_compensated
        def forcing(ts):
            ts = np.atleast_1d(ts)
            k, nu = schedule.resample(ts)
            comp = np.array(
                [compensator_drift(system.noise, float(x)) - state_drift(system.noise, float(x)) for x in ts]
            )
            return np.einsum("kij,kj->ki", system.B.eval_many(ts), nu) - np.einsum(
                "kij,kj->ki", system.C.eval_many(ts), comp
            )

        self.forcing = forcing
        if scheme == "exponential":
            self.loop = ClosedLoopTable(system, schedule)
            fwd = self.loop.forward(t)
            bwd = self.loop.backward(t)
            self.step_T = fwd[1:] @ bwd[:-1]  # Psi(t_{k+1}, t_k)
            mid = 0.5 * (t[1:] + t[:-1])
            self.noise_T = fwd[1:] @ self.loop.backward(mid) @ system.C.eval_many(mid) @ self.wiener_half
            x, w = _STEP_GL
            nodes = (mid[:, None] + 0.5 * self.dt * x[None, :]).ravel()
            y = self.loop.backward(nodes) @ forcing(nodes)[:, :, None]
            y = (y[:, :, 0].reshape(steps, x.size, n) * (0.5 * self.dt * w)[None, :, None]).sum(axis=1)
            self.step_d = np.einsum("kij,kj->ki", fwd[1:], y)
        else:
            self.F = system.A.eval_many(t) + system.B.eval_many(t) @ self.K
            self.b = forcing(t)
            self.C = system.C.eval_many(t)
            self.noise_T = self.C[:-1] @ self.wiener_half

        # noise-free reference path, used as a shift for numerically stable sums
        ref = np.empty((steps + 1, n))
        ref[0] = self.mu0
        for k in range(steps):
            ref[k + 1] = self._drift_step(k, ref[k : k + 1])[0]
        self.shift = ref

    def _drift_step(self, k, x):
        if self.scheme == "exponential":
            return x @ self.step_T[k].T + self.step_d[k]
        return x + self.dt * (x @ self.F[k].T + self.b[k])

    def jump_transport(self, times, channels):
        """State increment per unit jump: ``Psi(t_{k+1}, tau) C(tau) e_channel``."""
        sys_ = self.system
        k = np.minimum((times / self.dt).astype(int), self.steps - 1)
        c = sys_.C.eval_many(times)[np.arange(times.size), :, channels]
        if self.scheme == "exponential":
            end = self.times[k + 1]
            return k, np.einsum("kij,kj->ki", self.loop.forward(end) @ self.loop.backward(times), c)
        lag = (self.times[k + 1] - times)[:, None]
        return k, c + lag * np.einsum("kij,kj->ki", self.F[k], c)


def _run_block(plan: _Plan, seed, start, stop, record_idx, keep):
    n = plan.system.n
    q = plan.system.q
    m = stop - start
    steps = plan.steps
    x = np.empty((m, n))
    wiener = np.zeros((m, steps, q))
    jp, jc, jt, js = [], [], [], []
    for j in range(m):
        r0, r1, r2 = path_rngs(seed, start + j)
        x[j] = plan.mu0 + plan.sig0_half @ r0.standard_normal(n)
        t, c, s = sample_jumps(r1, plan.channels)
        if t.size:
            jp.append(np.full(t.size, start + j))
            jc.append(c)
            jt.append(t)
            js.append(s)
        if plan.has_wiener:
            wiener[j] = r2.standard_normal((steps, q))
    wiener *= math.sqrt(plan.dt)
    if jp:
        jp, jc, jt, js = map(np.concatenate, (jp, jc, jt, js))
        jstep, jvec = plan.jump_transport(jt, jc)
        jvec = jvec * js[:, None]
        order = np.argsort(jstep, kind="stable")
        jstep, jvec, jrow = jstep[order], jvec[order], (jp - start)[order]
        edges = np.searchsorted(jstep, np.arange(steps + 1))
    else:
        jp = jc = np.empty(0, dtype=int)
        jt = js = np.empty(0)
        edges = None

    sums = np.zeros((steps + 1, n))
    sq = np.zeros((steps + 1, n, n))
    rec = np.empty((len(record_idx), m, n))
    kept = np.empty((keep, steps + 1, n))
    energy = np.zeros(m)
    rpos = {k: i for i, k in enumerate(record_idx)}

    def account(k, x):
        d = x - plan.shift[k]
        sums[k] = d.sum(axis=0)
        sq[k] = d.T @ d
        if k in rpos:
            rec[rpos[k]] = x
        if keep:
            kept[:, k] = x[:keep]
        u = x @ plan.K[k].T + plan.nu[k]
        return np.einsum("mp,pq,mq->m", u, plan.R[k], u)

    e_prev = account(0, x)
    for k in range(steps):
        x_new = plan._drift_step(k, x)
        if plan.has_wiener:
            x_new += wiener[:, k] @ plan.noise_T[k].T
        if edges is not None and edges[k + 1] > edges[k]:
            sl = slice(edges[k], edges[k + 1])
            np.add.at(x_new, jrow[sl], jvec[sl])
        x = x_new
        e_cur = account(k + 1, x)
        energy += 0.5 * plan.dt * (e_prev + e_cur)
        e_prev = e_cur
    return sums, sq, rec, kept, energy, (jp, jc, jt, js)


def simulate(
    system: LtvSystem,
    schedule,
    problem: SteeringProblem,
    n_paths: int,
    dt: float = MAX_DT,
    seed: int = 0,
    scheme: str = "exponential",
    record_times=(0.25, 0.5, 0.75, 1.0),
    keep_paths: int = KEEP_PATHS,
    threads: int | None = None,
) -> PathEnsemble:
    """Simulate ``n_paths`` closed-loop paths with step ``dt <= 1e-3``.

    Identical arguments give bit-identical results for any thread count.
    """
    if scheme not in SCHEMES:
        raise ModelValidationError(f"scheme must be one of {SCHEMES}")
    if not (0.0 < dt <= MAX_DT * (1 + 1e-12)):
        raise SimulationError(f"dt must lie in (0, {MAX_DT:g}], got {dt!r}")
    if n_paths < 1:
        raise SimulationError("n_paths must be positive")
    steps = int(round(1.0 / dt))
    if abs(steps * dt - 1.0) > 1e-9:
        raise SimulationError(f"dt = {dt!r} must divide the unit horizon")
    problem.check(system.n)
    w = np.linalg.eigvalsh(as_sym(problem.Sigma0))
    if w[0] < -1e-12 * max(1.0, abs(w).max()):
        raise ModelValidationError("Sigma0 must be positive semidefinite")
    for comp in system.noise.jump_components:
        if np.any(comp.rate.eval_many(np.linspace(0, 1, 101)) < 0):
            raise ModelValidationError("negative jump rate")

    plan = _Plan(system, schedule, problem, dt, scheme)
    record_times = np.unique(np.append(np.asarray(record_times, dtype=float), 1.0))
    record_idx = [int(round(t / plan.dt)) for t in record_times]
    keep_paths = min(keep_paths, n_paths)

    bounds = _group_bounds(n_paths)
    blocks = []  # (group, start, stop)
    for g in range(len(bounds) - 1):
        for s in range(bounds[g], bounds[g + 1], BLOCK_SIZE):
            blocks.append((g, s, min(s + BLOCK_SIZE, bounds[g + 1])))

    def run(blk):
        g, s, e = blk
        keep = max(0, min(keep_paths - s, e - s))
        return _run_block(plan, seed, s, e, record_idx, keep)

    workers = threads or thread_count()
    if workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, blocks))
    else:
        results = [run(b) for b in blocks]

    G, n, m = len(bounds) - 1, system.n, plan.steps + 1
    sums = np.zeros((G, m, n))
    sq = np.zeros((G, m, n, n))
    rec = np.empty((len(record_idx), n_paths, n))
    paths = np.empty((keep_paths, m, n))
    energy = np.empty(n_paths)
    logs = []
    for (g, s, e), (bs, bq, brec, bkept, ben, blog) in zip(blocks, results):
        sums[g] += bs
        sq[g] += bq
        rec[:, s:e] = brec
        if bkept.shape[0]:
            paths[s : s + bkept.shape[0]] = bkept
        energy[s:e] = ben
        logs.append(blog)
    jp, jc, jt, js = (np.concatenate([lg[i] for lg in logs]) for i in range(4))
    return PathEnsemble(
        times=plan.times,
        dt=plan.dt,
        n_paths=n_paths,
        seed=seed,
        scheme=scheme,
        shift=plan.shift,
        sums=sums,
        sq_sums=sq,
        counts=np.diff(bounds),
        paths=paths,
        record_times=plan.times[record_idx],
        record_states=rec,
        energy=energy,
        jump_path=jp.astype(int),
        jump_channel=jc.astype(int),
        jump_time=jt.astype(float),
        jump_size=js.astype(float),
    )


# ------------------------------------------------------------------ moment ODE
def covariance_ode(system: LtvSystem, gains, Sigma0, ts=None):
    """Integrate ``Sigma' = F Sigma + Sigma F^T + C D C^T`` with ``F = A + B K``.

    ``gains`` is a :class:`~covsteer.controller.GainSchedule` or a callable
    ``t -> K(t)``. Returns ``Sigma`` at ``ts`` (default: 1001 uniform times).
    """
    ts = np.linspace(0.0, 1.0, 1001) if ts is None else np.atleast_1d(np.asarray(ts, dtype=float))
    n = system.n
    if hasattr(gains, "resample"):
        def gain(t):
            return gains.resample(np.array([t]))[0][0]
    else:
        gain = gains

    def rhs(t, y):
        s = y.reshape(n, n)
        f = system.A(t) + system.B(t) @ gain(t)
        return (f @ s + s @ f.T + system.noise_kernel(t)).ravel()

    sol = solve_ivp(
        rhs, (0.0, float(ts.max())), as_sym(Sigma0).ravel(), method=ODE_METHOD,
        rtol=1e-12, atol=1e-14, dense_output=True,
    )
    if not sol.success:
        raise NumericalError(f"covariance integration failed: {sol.message} (t reached {sol.t[-1]:.6g})")
    return sym(sol.sol(ts).T.reshape(-1, n, n))


__all__ = [
    "BATCH_GROUPS",
    "ClosedLoopTable",
    "Moments",
    "PathEnsemble",
    "covariance_ode",
    "empirical_moments",
    "energy_estimate",
    "path_rngs",
    "sample_arrivals",
    "sample_jumps",
    "simulate",
    "thread_count",
]
