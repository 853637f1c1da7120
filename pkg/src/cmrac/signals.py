"""Reference-input and disturbance generators.

A signal is a list of channels; each channel is the sum of a few primitives
(constant, decaying exponential, sinusoid, step, held Gaussian noise).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch


@dataclass(frozen=True)
class Constant:
    value: float

    def __call__(self, t):
        return self.value

    def sample(self, ts):
        return np.full(ts.shape, float(self.value))


@dataclass(frozen=True)
class Exponential:
    amplitude: float
    tau: float

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"exponential tau must be positive, got {self.tau}")

    def __call__(self, t):
        return self.amplitude * math.exp(-t / self.tau)

    def sample(self, ts):
        return self.amplitude * np.exp(-ts / self.tau)


@dataclass(frozen=True)
class Sinusoid:
    amplitude: float
    omega: float
    phase: float = 0.0

    def __call__(self, t):
        return self.amplitude * math.sin(self.omega * t + self.phase)

    def sample(self, ts):
        return self.amplitude * np.sin(self.omega * ts + self.phase)


@dataclass(frozen=True)
class Step:
    amplitude: float
    t_on: float

    def __call__(self, t):
        return self.amplitude if t >= self.t_on else 0.0

    def sample(self, ts):
        return np.where(ts >= self.t_on, float(self.amplitude), 0.0)


@dataclass(frozen=True)
class Noise:
    """Zero-mean Gaussian samples held constant over ``hold`` seconds.

    The sample for hold-interval k is drawn from a generator seeded with
    ``(seed, channel, k)``, so evaluation order does not matter.
    """

    sigma: float
    hold: float = 0.01
    channel: int = 0
    seed: int = 0

    def __call__(self, t):
        k = int(math.floor(t / self.hold))
        rng = np.random.default_rng([self.seed, self.channel, k])
        return self.sigma * float(rng.standard_normal())

    def sample(self, ts):
        return np.array([self(float(t)) for t in ts])


PRIMITIVES = {
    "constant": Constant,
    "exponential": Exponential,
    "sinusoid": Sinusoid,
    "step": Step,
    "noise": Noise,
}


def primitive_to_dict(p):
    kind = next(k for k, cls in PRIMITIVES.items() if isinstance(p, cls))
    out = {"type": kind}
    out.update({k: v for k, v in p.__dict__.items()})
    return out


@dataclass(frozen=True)
class SignalSpec:
    channels: tuple = ()

    @classmethod
    def constant(cls, values):
        return cls(tuple((Constant(float(v)),) for v in values))

    @property
    def dim(self):
        return len(self.channels)

    def __call__(self, t):
        return np.array([sum(p(t) for p in ch) for ch in self.channels], dtype=float)

    def sample(self, ts):
        """Vectorized evaluation; returns an array of shape (len(ts), dim)."""
        ts = np.asarray(ts, dtype=float)
        out = np.zeros((ts.shape[0], self.dim))
        for j, ch in enumerate(self.channels):
            for p in ch:
                out[:, j] += p.sample(ts)
        return out

    def is_monotone_decaying(self):
        """True when every primitive is a constant or a decaying exponential."""
        return all(isinstance(p, (Constant, Exponential)) for ch in self.channels for p in ch)


@dataclass(frozen=True)
class DisturbanceSpec:
    base: SignalSpec = field(default_factory=SignalSpec)
    onset: float = 0.0
    norm_cap: float = 0.0
    seed: int = 0

    @property
    def dim(self):
        return self.base.dim

    def __call__(self, t):
        return eval_disturbance(self, t)

    def sample(self, ts):
        ts = np.asarray(ts, dtype=float)
        d = self.base.sample(ts)
        nd = np.sqrt(np.sum(d * d, axis=1))
        over = nd > self.norm_cap
        d[over] *= (self.norm_cap / nd[over])[:, None]
        d[ts < self.onset] = 0.0
        return d


def eval_reference(spec, t, dim=None):
    if dim is not None and spec.dim != dim:
        raise DimensionMismatch(f"reference has {spec.dim} channels, expected {dim}")
    return spec(t)


def eval_disturbance(spec, t, dim=None):
    """Base signal after onset, radially capped to ``norm_cap``; zero before onset."""
    if dim is not None and spec.dim != dim:
        raise DimensionMismatch(f"disturbance has {spec.dim} channels, expected {dim}")
    if t < spec.onset or spec.dim == 0:
        return np.zeros(spec.dim)
    d = spec.base(t)
    nd = math.sqrt(float(d @ d))
    if nd > spec.norm_cap:
        d = d * (spec.norm_cap / nd) if nd > 0 else d
    return d


def sup_norm_bound(spec, horizon, samples):
    """Grid-sampled bound on ``||signal(t)||`` over ``[0, horizon]``.

    The sampled maximum is inflated by 0.1 % unless every primitive is a
    constant or decaying exponential and the maximum sits at t = 0, in which
    case the sample at t = 0 is already the supremum.
    """
    if samples < 2:
        raise ValueError("need at least two samples")
    ts = np.linspace(0.0, float(horizon), int(samples))
    norms = np.array([np.linalg.norm(spec(t)) for t in ts])
    peak = float(norms.max())
    if spec.is_monotone_decaying() and norms[0] >= peak:
        return peak
    return 1.001 * peak
