"""LTV stochastic system ``dx = A x dt + B u dt + C dm`` and boundary data."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ModelValidationError, OutOfScopeError
from .noise import NoiseSpec, effective_intensity, state_drift
from .schedules import MatrixSchedule


def sym(m):
    return 0.5 * (m + np.swapaxes(m, -1, -2))


def as_sym(x):
    """Coerce a scalar or square array to a symmetrized float matrix."""
    return sym(np.atleast_2d(np.asarray(x, dtype=float)))


def sqrtm_psd(m, inverse=False):
    """Symmetric square root by eigendecomposition, eigenvalues floored at 0."""
    w, v = np.linalg.eigh(sym(m))
    w = np.clip(w, 0.0, None)
    if inverse:
        if np.any(w <= 0):
            raise np.linalg.LinAlgError("matrix is singular")
        s = 1.0 / np.sqrt(w)
    else:
        s = np.sqrt(w)
    return (v * s[..., None, :]) @ np.swapaxes(v, -1, -2)


@dataclass(frozen=True, eq=False)
class LtvSystem:
    """Coefficient schedules of the controlled LTV system on ``t in [0, 1]``.

    ``R`` weights the control energy ``E int u^T R u dt``; it defaults to the
    identity. Instances are immutable and hashed by identity, so derived
    tables (transition matrices, Gramians) can be cached per instance.
    """

    A: MatrixSchedule
    B: MatrixSchedule
    C: MatrixSchedule
    noise: NoiseSpec
    R: MatrixSchedule = None

    def __post_init__(self):
        for name in ("A", "B", "C"):
            object.__setattr__(self, name, MatrixSchedule.coerce(getattr(self, name)))
        if self.R is None:
            object.__setattr__(self, "R", MatrixSchedule.constant(np.eye(self.B.cols)))
        else:
            object.__setattr__(self, "R", MatrixSchedule.coerce(self.R))

    @property
    def n(self):
        return self.A.rows

    @property
    def p(self):
        return self.B.cols

    @property
    def q(self):
        return self.C.cols

    # --- derived quantities -------------------------------------------------
    def D(self, t):
        return effective_intensity(self.noise, t)

    def noise_kernel(self, t):
        """``C(t) D(t) C(t)^T``."""
        c = self.C(t)
        return sym(c @ self.D(t) @ c.T)

    def noise_kernel_many(self, ts):
        cs = self.C.eval_many(ts)
        ds = np.array([effective_intensity(self.noise, float(t)) for t in np.ravel(ts)])
        return sym(cs @ ds @ np.swapaxes(cs, 1, 2))

    def normalized_B(self, t):
        """``B R^{-1/2}``; all Gramian and Riccati flows use this input matrix."""
        return self.B(t) @ sqrtm_psd(self.R(t), inverse=True)

    def normalized_B_many(self, ts):
        return self.B.eval_many(ts) @ sqrtm_psd(self.R.eval_many(ts), inverse=True)

    def control_kernel(self, t):
        """``B R^{-1} B^T``."""
        bt = self.normalized_B(t)
        return bt @ bt.T

    def control_kernel_many(self, ts):
        bt = self.normalized_B_many(ts)
        return bt @ np.swapaxes(bt, 1, 2)

    def drift(self, t):
        """Deterministic forcing ``C(t) g(t)`` from raw jump processes."""
        return self.C(t) @ state_drift(self.noise, t)

    def drift_many(self, ts):
        cs = self.C.eval_many(ts)
        gs = np.array([state_drift(self.noise, float(t)) for t in np.ravel(ts)])
        return np.einsum("kij,kj->ki", cs, gs)

    def require_valid(self, grid=None):
        report = validate(self, grid)
        if not report.ok:
            raise ModelValidationError(report.summary(), report)
        return report


@dataclass(frozen=True)
class Violation:
    kind: str
    message: str
    t: float | None = None


@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.violations

    def times(self, kind=None):
        return [v.t for v in self.violations if v.t is not None and (kind is None or v.kind == kind)]

    def summary(self, limit=5):
        if self.ok:
            return "ok"
        lines = [
            f"{v.kind}: {v.message}" + (f" (t={v.t:g})" if v.t is not None else "")
            for v in self.violations[:limit]
        ]
        extra = len(self.violations) - limit
        if extra > 0:
            lines.append(f"... {extra} more")
        return "; ".join(lines)


def validate(system: LtvSystem, grid=None, psd_tol=1e-12) -> ValidationReport:
    """Check dimensions, ``R > 0`` and ``D >= 0`` on a time grid.

    Never raises; every violation is collected with the offending time.
    """
    if grid is None:
        grid = np.linspace(0.0, 1.0, 101)
    grid = np.asarray(grid, dtype=float)
    rep = ValidationReport()
    n, p, q = system.n, system.p, system.q
    add = rep.violations.append
    if grid.size == 0 or grid.min() < 0 or grid.max() > 1:
        add(Violation("grid", "grid must be a nonempty subset of [0, 1]"))
        return rep

    if system.A.shape != (n, n):
        add(Violation("dimension", f"A must be square, got {system.A.shape}"))
    if system.B.rows != n:
        add(Violation("dimension", f"B has {system.B.rows} rows, expected n={n}"))
    if system.C.rows != n:
        add(Violation("dimension", f"C has {system.C.rows} rows, expected n={n}"))
    if system.R.shape != (p, p):
        add(Violation("dimension", f"R must be {p}x{p}, got {system.R.shape}"))
    comps = system.noise.components
    if not comps:
        add(Violation("dimension", "noise spec has no components"))
    for k, comp in enumerate(comps):
        if comp.channels != q:
            add(Violation("dimension", f"noise component {k} has {comp.channels} channels, C has q={q} columns"))
    from .noise import _component_problems

    for comp in comps:
        for msg in _component_problems(comp):
            add(Violation("noise", msg))
    if not rep.ok:
        return rep

    for t in grid:
        t = float(t)
        for name in ("A", "B", "C", "R"):
            if not np.all(np.isfinite(getattr(system, name)(t))):
                add(Violation("finite", f"{name}(t) has non-finite entries", t))
        r = system.R(t)
        if not np.allclose(r, r.T, rtol=0, atol=1e-12 * max(1.0, np.abs(r).max())):
            add(Violation("R", "R(t) not symmetric", t))
        try:
            np.linalg.cholesky(sym(r))
        except np.linalg.LinAlgError:
            add(Violation("R", "R(t) not positive definite", t))
        for comp in system.noise.jump_components:
            lam = comp.rates(t)
            if np.any(lam < 0):
                add(Violation("noise", f"negative jump rate {lam.min():g}", t))
        try:
            d = system.D(t)
        except ModelValidationError as exc:
            add(Violation("noise", str(exc), t))
            continue
        w = np.linalg.eigvalsh(d)
        if w.min() < -psd_tol * max(1.0, abs(w).max()):
            add(Violation("D", f"D(t) not PSD (min eig {w.min():g})", t))
    return rep


@dataclass(frozen=True, eq=False)
class SteeringProblem:
    """Boundary moments: ``x(0) ~ (mu0, Sigma0)`` steered to ``(mu1, Sigma1)``."""

    mu0: np.ndarray
    Sigma0: np.ndarray
    mu1: np.ndarray
    Sigma1: np.ndarray

    def __post_init__(self):
        for name in ("mu0", "mu1"):
            v = np.atleast_1d(np.asarray(getattr(self, name), dtype=float)).copy()
            v.setflags(write=False)
            object.__setattr__(self, name, v)
        for name in ("Sigma0", "Sigma1"):
            m = np.atleast_2d(np.asarray(getattr(self, name), dtype=float)).copy()
            m.setflags(write=False)
            object.__setattr__(self, name, m)

    @property
    def n(self):
        return self.mu0.size

    def check(self, n=None):
        """Raise :class:`ModelValidationError` unless the boundary data are admissible."""
        n = self.n if n is None else n
        for name, shape in (("mu0", (n,)), ("mu1", (n,)), ("Sigma0", (n, n)), ("Sigma1", (n, n))):
            if getattr(self, name).shape != shape:
                raise ModelValidationError(f"{name} must have shape {shape}")
        for name in ("Sigma0", "Sigma1"):
            m = getattr(self, name)
            if not np.allclose(m, m.T, atol=1e-12 * max(1.0, np.abs(m).max())):
                raise ModelValidationError(f"{name} must be symmetric")
        w1 = np.linalg.eigvalsh(self.Sigma1)
        if w1.min() <= 0:
            raise ModelValidationError("Sigma1 must be positive definite")
        w0 = np.linalg.eigvalsh(self.Sigma0)
        scale = max(1.0, abs(w0).max())
        if w0.min() < -1e-12 * scale:
            raise ModelValidationError("Sigma0 must be positive semidefinite")
        if w0.min() <= 1e-12 * scale and n > 1:
            raise OutOfScopeError("singular Sigma0 is only supported for n = 1")
