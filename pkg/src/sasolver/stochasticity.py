"""The stochasticity function ``tau(t)`` and its exact log-SNR integrals.

``tau = 0`` is the probability-flow ODE and ``tau = 1`` the usual reverse SDE; every
choice shares the same marginals.  Only constant and piecewise-constant ``tau``
are represented, which makes ``int tau^2 d lambda`` an exact finite sum.

Piece convention: a piece ``(t_lo, t_hi, v)`` owns the half-open interval
``(t_lo, t_hi]``; the lowest piece also owns its left endpoint.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import numpy as np

from .errors import InvalidEta, InvalidParams, OutOfDomain, OutOfRange
from .schedules import NoiseSchedule, TimeGrid


class TauKind(str, Enum):
    ZERO = "zero"
    CONSTANT = "constant"
    PIECEWISE_CONSTANT = "piecewise"


@dataclass(frozen=True)
class TauSchedule:
    kind: TauKind
    value: float = 0.0
    pieces: tuple[tuple[float, float, float], ...] = ()

    def __post_init__(self):
        kind = TauKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is TauKind.ZERO:
            object.__setattr__(self, "value", 0.0)
        if kind is TauKind.PIECEWISE_CONSTANT:
            pieces = tuple((float(a), float(b), float(v)) for a, b, v in self.pieces)
            if not pieces:
                raise InvalidParams("piecewise tau needs at least one piece")
            pieces = tuple(sorted(pieces))
            for (a, b, v) in pieces:
                if not a < b:
                    raise InvalidParams(f"empty piece ({a}, {b}]")
                if v < 0 or not math.isfinite(v):
                    raise InvalidParams("tau values must be finite and >= 0")
            for (_, b, _), (a, _, _) in zip(pieces, pieces[1:]):
                if a != b:
                    raise InvalidParams("pieces must tile an interval without gaps or overlap")
            object.__setattr__(self, "pieces", pieces)
        elif self.value < 0 or not math.isfinite(self.value):
            raise InvalidParams("tau must be finite and >= 0")
        else:
            object.__setattr__(self, "value", float(self.value))

    @classmethod
    def zero(cls):
        return cls(TauKind.ZERO)

    @classmethod
    def constant(cls, value):
        return cls(TauKind.CONSTANT, value=value)

    @classmethod
    def piecewise(cls, pieces):
        """``pieces`` are ``(t_lo, t_hi, value)`` triples tiling the time domain."""
        return cls(TauKind.PIECEWISE_CONSTANT, pieces=tuple(pieces))

    @classmethod
    def from_sigma_edm(cls, schedule: NoiseSchedule, pieces, fill=0.0):
        """Build ``tau`` from ``(sigma_lo, sigma_hi, value)`` intervals in ``sigma/alpha`` units.

        Outside the listed intervals ``tau = fill``.  Interval ends are clipped to the
        range the schedule attains.
        """
        s_lo_dom, s_hi_dom = schedule.sigma_edm(schedule.t_eps), schedule.sigma_edm(schedule.T)
        spans = []
        for smin, smax, v in pieces:
            if not 0 < smin < smax:
                raise InvalidParams("need 0 < sigma_lo < sigma_hi")
            lo, hi = max(smin, s_lo_dom), min(smax, s_hi_dom)
            if lo >= hi:
                continue
            t_lo = schedule.t_eps if lo == s_lo_dom else schedule.sigma_edm_inverse(lo)
            t_hi = schedule.T if hi == s_hi_dom else schedule.sigma_edm_inverse(hi)
            spans.append((t_lo, t_hi, float(v)))
        spans.sort()
        for (_, b, _), (a, _, _) in zip(spans, spans[1:]):
            if a < b:
                raise InvalidParams("sigma intervals overlap")
        out, cursor = [], schedule.t_eps
        for a, b, v in spans:
            if a > cursor:
                out.append((cursor, a, fill))
            out.append((a, b, v))
            cursor = b
        if cursor < schedule.T:
            out.append((cursor, schedule.T, fill))
        return cls.piecewise(out)

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "value": self.value, "pieces": [list(p) for p in self.pieces]}

    @property
    def is_constant(self) -> bool:
        return self.kind is not TauKind.PIECEWISE_CONSTANT

    @property
    def max_value(self) -> float:
        if self.is_constant:
            return self.value
        return max(v for _, _, v in self.pieces)


def tau_eval(ts: TauSchedule, t) -> float:
    t = float(t)
    if ts.is_constant:
        return ts.value
    first_lo, last_hi = ts.pieces[0][0], ts.pieces[-1][1]
    if not first_lo <= t <= last_hi:
        raise OutOfDomain(f"t={t} outside the pieces' span [{first_lo}, {last_hi}]")
    for lo, hi, v in ts.pieces:
        if t <= hi:
            return v
    raise AssertionError("unreachable")


@lru_cache(maxsize=256)
def _segments(ts: TauSchedule, schedule: NoiseSchedule):
    if ts.is_constant:
        lo, hi = schedule.lambda_range
        return np.array([lo]), np.array([hi]), np.array([ts.value**2])
    t_lo = np.array([p[0] for p in ts.pieces])
    t_hi = np.array([p[1] for p in ts.pieces])
    vals = np.array([p[2] for p in ts.pieces])
    t_lo = np.clip(t_lo, schedule.t_eps, schedule.T)
    t_hi = np.clip(t_hi, schedule.t_eps, schedule.T)
    keep = t_hi > t_lo
    # lambda decreases in t, so the piece (t_lo, t_hi] maps to [lambda(t_hi), lambda(t_lo))
    lam_lo = schedule.lambda_(t_hi[keep])[::-1]
    lam_hi = schedule.lambda_(t_lo[keep])[::-1]
    for arr in (lam_lo, lam_hi):
        arr.setflags(write=False)
    tau2 = (vals[keep] ** 2)[::-1].copy()
    tau2.setflags(write=False)
    return lam_lo, lam_hi, tau2


def lambda_segments(ts: TauSchedule, schedule: NoiseSchedule):
    """``(lam_lo, lam_hi, tau2)`` arrays, ascending in log-SNR."""
    return _segments(ts, schedule)


def step_segments(ts: TauSchedule, schedule: NoiseSchedule, lam_a: float, lam_b: float):
    """Constant-``tau^2`` pieces of ``[lam_a, lam_b]`` as ``(lo, hi, tau2)`` arrays.

    Sub-intervals thinner than ``1e-13`` of the step width are merged away so that
    piece edges which coincide with grid nodes never leave round-off slivers.
    """
    if ts.is_constant:
        return np.array([lam_a]), np.array([lam_b]), np.array([ts.value**2])
    lo, hi, tau2 = _segments(ts, schedule)
    snap = 1e-13 * max(1.0, abs(lam_b - lam_a))
    cuts = [lam_a]
    for edge in hi[:-1]:
        if lam_a + snap < edge < lam_b - snap:
            cuts.append(float(edge))
    cuts.append(lam_b)
    cuts = np.array(cuts)
    mids = 0.5 * (cuts[:-1] + cuts[1:])
    idx = np.clip(np.searchsorted(hi, mids, side="left"), 0, len(hi) - 1)
    return cuts[:-1], cuts[1:], tau2[idx]


def tau2_integral_lambda(ts: TauSchedule, lambda_a: float, lambda_b: float, s: NoiseSchedule) -> float:
    """Exact ``int_{lambda_a}^{lambda_b} tau^2 d lambda`` for ``lambda_a <= lambda_b``."""
    lo_dom, hi_dom = s.lambda_range
    slack = 1e-12 * max(1.0, abs(lo_dom), abs(hi_dom))
    if lambda_a > lambda_b:
        raise OutOfRange("need lambda_a <= lambda_b")
    if lambda_a < lo_dom - slack or lambda_b > hi_dom + slack:
        raise OutOfRange("log-SNR interval outside the schedule's range")
    if ts.is_constant:
        return float(ts.value**2 * (lambda_b - lambda_a))
    lo, hi, tau2 = _segments(ts, s)
    overlap = np.clip(np.minimum(hi, lambda_b) - np.maximum(lo, lambda_a), 0.0, None)
    return float(np.sum(tau2 * overlap))


def tau_from_eta(eta: float, s: NoiseSchedule, t_i: float, t_next: float) -> float:
    """Constant ``tau`` on ``[t_next, t_i]`` whose injected noise matches DDIM-``eta``."""
    if eta < 0:
        raise InvalidEta("eta must be >= 0")
    if eta == 0:
        return 0.0
    if not t_next < t_i:
        raise OutOfDomain("need t_next < t_i")
    log_a_i, log_a_n = math.log(s.alpha(t_i)), math.log(s.alpha(t_next))
    sig_i = s.sigma(t_i)
    h = s.lambda_(t_next) - s.lambda_(t_i)
    # 1 - alpha_i^2 / alpha_next^2
    shrink = -math.expm1(2.0 * (log_a_i - log_a_n))
    x = (eta / sig_i) ** 2 * shrink
    if not x < 1.0:
        raise InvalidEta(f"eta={eta} too large for this step (log argument {1 - x} <= 0)")
    return math.sqrt(-math.log1p(-x) / (2.0 * h))


def ddim_tau_schedule(s: NoiseSchedule, grid: TimeGrid, eta: float) -> TauSchedule:
    """Piecewise ``tau_eta`` with one piece per grid step."""
    t = grid.times
    pieces = [(t[i + 1], t[i], tau_from_eta(eta, s, t[i], t[i + 1])) for i in range(grid.M)]
    return TauSchedule.piecewise(pieces)
