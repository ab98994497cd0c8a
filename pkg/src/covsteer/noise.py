"""
Martingale noise models.

The system is driven by ``C(t) dm(t)`` where ``m`` is a sum of independent
components on the same ``q`` channels:

* :class:`Wiener` -- ``scale @ dw``.
* :class:`CompoundPoisson` -- per-channel nonhomogeneous compound Poisson
  processes. By default the *raw* jump process drives the system, so its
  compensator ``lambda_i(t) E[chi_i]`` appears as a deterministic drift.
* :class:`PrecomputedMartingale` -- only the covariance rate ``D(t)`` is known.
  Usable for synthesis, not for simulation.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ModelValidationError
from .schedules import MatrixSchedule


# ----------------------------------------------------------------- jump laws
@dataclass(frozen=True)
class ConstantJump:
    value: float

    def mean(self):
        return self.value

    def second_moment(self):
        return self.value**2

    def sample(self, rng, size):
        return np.full(size, float(self.value))


@dataclass(frozen=True)
class NormalJump:
    mean_: float
    std: float

    def mean(self):
        return self.mean_

    def second_moment(self):
        return self.mean_**2 + self.std**2

    def sample(self, rng, size):
        return rng.normal(self.mean_, self.std, size)


@dataclass(frozen=True)
class ExponentialJump:
    """``chi = mean * E`` with ``E ~ Exp(1)``; a negative mean flips the sign."""

    mean_: float

    def mean(self):
        return self.mean_

    def second_moment(self):
        return 2.0 * self.mean_**2

    def sample(self, rng, size):
        return self.mean_ * rng.standard_exponential(size)


@dataclass(frozen=True)
class TwoPointJump:
    """``chi = low`` with probability ``p_low``, else ``high``."""

    low: float
    high: float
    p_low: float

    def mean(self):
        return self.p_low * self.low + (1 - self.p_low) * self.high

    def second_moment(self):
        return self.p_low * self.low**2 + (1 - self.p_low) * self.high**2

    def sample(self, rng, size):
        return np.where(rng.random(size) < self.p_low, self.low, self.high)


JUMP_LAWS = {
    "constant": (ConstantJump, ("value",)),
    "normal": (NormalJump, ("mean", "std")),
    "exponential": (ExponentialJump, ("mean",)),
    "two_point": (TwoPointJump, ("low", "high", "p_low")),
}


def jump_law_from_config(cfg):
    law = cfg["law"]
    if law not in JUMP_LAWS:
        raise ModelValidationError(f"unknown jump law {law!r}")
    cls, keys = JUMP_LAWS[law]
    return cls(*(float(cfg[k]) for k in keys))


def jump_law_to_config(law):
    for name, (cls, keys) in JUMP_LAWS.items():
        if type(law) is cls:
            return {"law": name, **{k: float(v) for k, v in zip(keys, law.__dict__.values())}}
    raise TypeError(f"not a jump law: {law!r}")


# ---------------------------------------------------------------- components
@dataclass(frozen=True, eq=False)
class Wiener:
    scale: np.ndarray

    def __post_init__(self):
        s = np.atleast_2d(np.asarray(self.scale, dtype=float))
        s.setflags(write=False)
        object.__setattr__(self, "scale", s)

    @property
    def channels(self):
        return self.scale.shape[0]


@dataclass(frozen=True, eq=False)
class CompoundPoisson:
    """Independent per-channel compound Poisson jumps.

    ``rate`` is a ``q x 1`` schedule (one arrival rate per channel) and
    ``jumps`` holds one jump law per channel. With ``compensated=True`` the
    compensated martingale drives the system and no drift is induced.
    """

    rate: MatrixSchedule
    jumps: tuple
    compensated: bool = False

    def __post_init__(self):
        object.__setattr__(self, "rate", MatrixSchedule.coerce(self.rate))
        object.__setattr__(self, "jumps", tuple(self.jumps))

    @property
    def channels(self):
        return self.rate.rows

    def rates(self, t):
        return self.rate(t)[:, 0]


@dataclass(frozen=True, eq=False)
class PrecomputedMartingale:
    D: MatrixSchedule

    def __post_init__(self):
        object.__setattr__(self, "D", MatrixSchedule.coerce(self.D))

    @property
    def channels(self):
        return self.D.rows


@dataclass(frozen=True, eq=False)
class NoiseSpec:
    components: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))

    def channel_counts(self):
        return [c.channels for c in self.components]

    @property
    def jump_components(self):
        return [c for c in self.components if isinstance(c, CompoundPoisson)]

    @property
    def wiener_components(self):
        return [c for c in self.components if isinstance(c, Wiener)]


def _component_problems(comp):
    out = []
    if isinstance(comp, Wiener) and comp.scale.shape[0] != comp.scale.shape[1]:
        out.append(f"Wiener scale must be square, got {comp.scale.shape}")
    if isinstance(comp, CompoundPoisson):
        if comp.rate.cols != 1:
            out.append("CompoundPoisson rate must be a q x 1 schedule")
        if len(comp.jumps) != comp.rate.rows:
            out.append(
                f"CompoundPoisson has {comp.rate.rows} rate channels but {len(comp.jumps)} jump laws"
            )
        for law in comp.jumps:
            if not hasattr(law, "second_moment") or not np.isfinite(law.second_moment()):
                out.append(f"jump law {law!r} lacks a finite second moment")
    if isinstance(comp, PrecomputedMartingale) and comp.D.rows != comp.D.cols:
        out.append("precomputed D must be square")
    return out


def effective_intensity(noise: NoiseSpec, t: float) -> np.ndarray:
    """Covariance rate ``D(t) = d E[m m^T] / dt`` of the combined martingale.

    Independent components add: Wiener contributes ``scale scale^T``, each
    jump channel ``lambda_i(t) E[chi_i^2]`` on the diagonal.
    """
    q = None
    total = None
    for comp in noise.components:
        probs = _component_problems(comp)
        if probs:
            raise ModelValidationError("; ".join(probs))
        if isinstance(comp, Wiener):
            d = comp.scale @ comp.scale.T
        elif isinstance(comp, CompoundPoisson):
            lam = comp.rates(t)
            if np.any(lam < 0):
                raise ModelValidationError(f"negative jump rate {lam.min():g} at t={t:g}")
            d = np.diag(lam * np.array([law.second_moment() for law in comp.jumps]))
        elif isinstance(comp, PrecomputedMartingale):
            d = comp.D(t)
        else:
            raise ModelValidationError(f"unknown noise component {comp!r}")
        if q is None:
            q, total = d.shape[0], d.copy()
        elif d.shape[0] != q:
            raise ModelValidationError("noise components disagree on channel count")
        else:
            total += d
    if total is None:
        raise ModelValidationError("noise spec has no components")
    return 0.5 * (total + total.T)


def compensator_drift(noise: NoiseSpec, t: float, include_compensated: bool = True) -> np.ndarray:
    """Mean arrival rate of the jump part, ``g_i(t) = lambda_i(t) E[chi_i]``.

    With ``include_compensated=False`` only raw (uncompensated) jump
    components count, i.e. the drift actually felt by the state.
    """
    q = noise.channel_counts()[0] if noise.components else 0
    g = np.zeros(q)
    for comp in noise.jump_components:
        if comp.compensated and not include_compensated:
            continue
        lam = comp.rates(t)
        if np.any(lam < 0):
            raise ModelValidationError(f"negative jump rate {lam.min():g} at t={t:g}")
        g += lam * np.array([law.mean() for law in comp.jumps])
    return g


def state_drift(noise: NoiseSpec, t: float) -> np.ndarray:
    """Deterministic drift per channel induced by raw jump processes."""
    return compensator_drift(noise, t, include_compensated=False)


def noise_to_config(noise: NoiseSpec):
    out = []
    for comp in noise.components:
        if isinstance(comp, Wiener):
            out.append({"type": "wiener", "scale": comp.scale.tolist()})
        elif isinstance(comp, CompoundPoisson):
            out.append(
                {
                    "type": "compound_poisson",
                    "rate": comp.rate.to_config(),
                    "jumps": [jump_law_to_config(j) for j in comp.jumps],
                    "compensated": bool(comp.compensated),
                }
            )
        else:
            out.append({"type": "precomputed", "D": comp.D.to_config()})
    return out


def noise_from_config(items) -> NoiseSpec:
    from .schedules import schedule_from_config

    comps = []
    for item in items:
        kind = item.get("type")
        if kind == "wiener":
            comps.append(Wiener(np.atleast_2d(np.asarray(item["scale"], dtype=float))))
        elif kind == "compound_poisson":
            comps.append(
                CompoundPoisson(
                    schedule_from_config(item["rate"]),
                    tuple(jump_law_from_config(j) for j in item["jumps"]),
                    bool(item.get("compensated", False)),
                )
            )
        elif kind == "precomputed":
            comps.append(PrecomputedMartingale(schedule_from_config(item["D"])))
        else:
            raise ModelValidationError(f"unknown noise component type {kind!r}")
    return NoiseSpec(tuple(comps))
