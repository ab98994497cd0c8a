"""
Time-varying matrix schedules on the unit horizon [0, 1].

A :class:`MatrixSchedule` is a matrix-valued function of time in one of four
forms:

``constant``
    A fixed matrix.
``polynomial``
    Each entry is a polynomial in ``t`` (coefficients in ascending powers).
    Derivatives of every order are exact.
``piecewise_constant``
    Values held constant on the cells of a breakpoint grid. Not
    differentiable, so derivative requests of order >= 1 raise.
``table``
    Samples at given times, linearly interpolated. Derivatives fall back to
    central finite differences with step ``FD_STEP``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from math import comb

import numpy as np

from .errors import DerivativeOrderError, ModelValidationError

FD_STEP = 1e-5

FORMS = ("constant", "polynomial", "piecewise_constant", "table")


def _as_matrix(value) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise ModelValidationError(f"expected a matrix, got shape {arr.shape}")
    return arr


@dataclass(frozen=True, eq=False)
class MatrixSchedule:
    """Matrix-valued function of time.

    Build instances through the classmethods :meth:`constant`,
    :meth:`polynomial`, :meth:`piecewise_constant` and :meth:`table`.
    """

    form: str
    rows: int
    cols: int
    data: dict = field(repr=False)

    # ------------------------------------------------------------------ build
    @classmethod
    def constant(cls, value) -> "MatrixSchedule":
        m = _as_matrix(value).copy()
        m.setflags(write=False)
        return cls("constant", m.shape[0], m.shape[1], {"value": m})

    @classmethod
    def polynomial(cls, coeffs) -> "MatrixSchedule":
        """Per-entry polynomial, ``coeffs[i][j]`` = ascending coefficient list.

        Entries may also be plain numbers (constant polynomials).
        """
        rows = [list(r) if isinstance(r, (list, tuple, np.ndarray)) else [r] for r in coeffs]
        if not rows:
            raise ModelValidationError("empty polynomial schedule")
        ncols = len(rows[0])
        if any(len(r) != ncols for r in rows):
            raise ModelValidationError("ragged polynomial coefficient matrix")
        deg = 0
        for r in rows:
            for e in r:
                deg = max(deg, len(np.atleast_1d(e)) - 1)
        c = np.zeros((len(rows), ncols, deg + 1))
        for i, r in enumerate(rows):
            for j, e in enumerate(r):
                e = np.atleast_1d(np.asarray(e, dtype=float))
                c[i, j, : e.size] = e
        c.setflags(write=False)
        return cls("polynomial", c.shape[0], c.shape[1], {"coeffs": c})

    @classmethod
    def piecewise_constant(cls, breaks, values) -> "MatrixSchedule":
        """``values[k]`` holds on ``[breaks[k], breaks[k+1])``; last cell is closed."""
        b = np.asarray(breaks, dtype=float)
        v = np.asarray([_as_matrix(x) for x in values])
        if b.ndim != 1 or b.size != v.shape[0] + 1:
            raise ModelValidationError("piecewise_constant needs len(breaks) == len(values) + 1")
        if np.any(np.diff(b) <= 0):
            raise ModelValidationError("breakpoints must be strictly increasing")
        b.setflags(write=False)
        v.setflags(write=False)
        return cls("piecewise_constant", v.shape[1], v.shape[2], {"breaks": b, "values": v})

    @classmethod
    def table(cls, times, values) -> "MatrixSchedule":
        tt = np.asarray(times, dtype=float)
        v = np.asarray([_as_matrix(x) for x in values])
        if tt.ndim != 1 or tt.size != v.shape[0] or tt.size < 2:
            raise ModelValidationError("table needs matching times/values with >= 2 samples")
        if np.any(np.diff(tt) <= 0):
            raise ModelValidationError("table times must be strictly increasing")
        tt.setflags(write=False)
        v.setflags(write=False)
        return cls("table", v.shape[1], v.shape[2], {"times": tt, "values": v})

    @classmethod
    def coerce(cls, obj) -> "MatrixSchedule":
        if isinstance(obj, MatrixSchedule):
            return obj
        return cls.constant(obj)

    # --------------------------------------------------------------- queries
    @property
    def shape(self):
        return (self.rows, self.cols)

    @property
    def deriv_order(self) -> float:
        """Number of analytically available derivatives (``inf`` if all)."""
        if self.form in ("constant", "polynomial"):
            return math.inf
        return 0

    @property
    def fd_fallback(self) -> bool:
        return self.form == "table"

    def __call__(self, t: float) -> np.ndarray:
        return self.eval_many(np.array([t], dtype=float))[0]

    def eval_many(self, ts) -> np.ndarray:
        """Evaluate at an array of times, returning shape ``(len(ts), rows, cols)``."""
        ts = np.asarray(ts, dtype=float).reshape(-1)
        form, d = self.form, self.data
        if form == "constant":
            return np.broadcast_to(d["value"], (ts.size, self.rows, self.cols)).copy()
        if form == "polynomial":
            c = d["coeffs"]
            out = np.broadcast_to(c[:, :, -1], (ts.size, self.rows, self.cols)).copy()
            tcol = ts[:, None, None]
            for k in range(c.shape[2] - 2, -1, -1):
                out = out * tcol + c[:, :, k]
            return out
        if form == "piecewise_constant":
            b = d["breaks"]
            idx = np.clip(np.searchsorted(b, ts, side="right") - 1, 0, len(b) - 2)
            return d["values"][idx].copy()
        # table
        tt, v = d["times"], d["values"]
        flat = v.reshape(v.shape[0], -1)
        out = np.empty((ts.size, flat.shape[1]))
        for j in range(flat.shape[1]):
            out[:, j] = np.interp(ts, tt, flat[:, j])
        return out.reshape(ts.size, self.rows, self.cols)

    def derivative(self, t: float, k: int = 1, name: str = "schedule") -> np.ndarray:
        """k-th time derivative at ``t``."""
        if k == 0:
            return self(t)
        if self.form == "constant":
            return np.zeros(self.shape)
        if self.form == "polynomial":
            c = self.data["coeffs"]
            deg = c.shape[2] - 1
            if k > deg:
                return np.zeros(self.shape)
            out = np.zeros(self.shape)
            for j in range(k, deg + 1):
                fac = math.perm(j, k)
                out += fac * c[:, :, j] * t ** (j - k)
            return out
        if not self.fd_fallback:
            raise DerivativeOrderError(name, k, self.deriv_order)
        # central difference of order k, step FD_STEP
        h = FD_STEP
        acc = np.zeros(self.shape)
        for i in range(k + 1):
            acc += (-1) ** i * comb(k, i) * self(t + (k / 2 - i) * h)
        return acc / h**k

    def sup_norm_bound(self) -> np.ndarray:
        """Entrywise supremum over [0, 1] (exact for every supported form)."""
        form, d = self.form, self.data
        if form == "constant":
            return d["value"].copy()
        if form in ("piecewise_constant", "table"):
            return d["values"].max(axis=0)
        c = d["coeffs"]
        out = np.empty(self.shape)
        for i in range(self.rows):
            for j in range(self.cols):
                p = np.polynomial.Polynomial(c[i, j])
                cand = [0.0, 1.0]
                for r in p.deriv().roots():
                    if abs(r.imag) < 1e-12 and 0.0 <= r.real <= 1.0:
                        cand.append(r.real)
                out[i, j] = max(p(x) for x in cand)
        return out

    def to_config(self):
        """Plain-data form used by scenario files."""
        form, d = self.form, self.data
        if form == "constant":
            return d["value"].tolist()
        if form == "polynomial":
            c = d["coeffs"]
            return [[_trim(c[i, j]) for j in range(self.cols)] for i in range(self.rows)]
        if form == "piecewise_constant":
            return {"form": form, "breaks": d["breaks"].tolist(), "values": d["values"].tolist()}
        return {"form": form, "times": d["times"].tolist(), "values": d["values"].tolist()}


def _trim(coeffs):
    c = list(map(float, coeffs))
    while len(c) > 1 and c[-1] == 0.0:
        c.pop()
    return c[0] if len(c) == 1 else c


def schedule_from_config(obj) -> MatrixSchedule:
    """Inverse of :meth:`MatrixSchedule.to_config`.

    A nested list whose entries are numbers becomes a constant; entries that
    are lists are ascending polynomial coefficients.
    """
    if isinstance(obj, MatrixSchedule):
        return obj
    if isinstance(obj, dict):
        form = obj.get("form")
        if form == "piecewise_constant":
            return MatrixSchedule.piecewise_constant(obj["breaks"], obj["values"])
        if form == "table":
            return MatrixSchedule.table(obj["times"], obj["values"])
        if form == "polynomial":
            return MatrixSchedule.polynomial(obj["coeffs"])
        if form == "constant":
            return MatrixSchedule.constant(obj["value"])
        raise ModelValidationError(f"unknown schedule form {form!r}")
    if isinstance(obj, (int, float)):
        return MatrixSchedule.constant(obj)
    rows = obj
    if rows and not isinstance(rows[0], (list, tuple)):
        rows = [[e] for e in rows]  # column vector
    if any(isinstance(e, (list, tuple)) for r in rows for e in r):
        return MatrixSchedule.polynomial(rows)
    return MatrixSchedule.constant(rows)
