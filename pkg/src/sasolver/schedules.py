"""Noise schedules, log-SNR maps and time-step grids.

A schedule fixes ``alpha_t`` and ``sigma_t`` with ``x_t | x_0 ~ N(alpha_t x_0, sigma_t^2 I)``.
The log signal-to-noise ratio ``lambda_t = log(alpha_t / sigma_t)`` is strictly
decreasing in ``t`` and every solver coefficient is an integral in ``lambda``.

All evaluation methods accept scalars or numpy arrays and return the same shape
(python floats for scalar input).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from enum import Enum

import numpy as np

from .errors import InvalidParams, OutOfDomain, OutOfRange

_BISECT_MAX_ITER = 200


class ScheduleKind(str, Enum):
    VP_LINEAR = "vp-linear"
    VP_COSINE = "vp-cosine"
    VE = "ve"
    EDM = "edm"


class GridKind(str, Enum):
    UNIFORM_T = "uniform-t"
    UNIFORM_LAMBDA = "uniform-lambda"
    EDM_RHO = "edm"


def _out(value, like):
    if np.ndim(like) == 0:
        return float(value)
    return value


@dataclass(frozen=True)
class NoiseSchedule:
    """Closed-form noise schedule.

    ``VP_LINEAR``: ``log alpha = -(beta_max - beta_min) t^2 / 4 - beta_min t / 2``.
    ``VP_COSINE``: ``alpha = cos(pi/2 (t+s)/(1+s)) / cos(pi/2 s/(1+s))``.
    ``VE``: ``alpha = 1``, ``sigma = sigma_min (sigma_max/sigma_min)^t`` on ``[0, 1]``.
    ``EDM``: ``alpha = 1``, ``sigma = t`` on ``[sigma_min, sigma_max]``.
    VP kinds satisfy ``alpha^2 + sigma^2 = 1``.
    """

    kind: ScheduleKind
    beta_min: float = 0.1
    beta_max: float = 20.0
    cosine_s: float = 0.008
    sigma_min: float = 0.02
    sigma_max: float = 80.0
    t_eps: float | None = None
    T: float | None = None
    _cos_norm: float = field(default=0.0, init=False, repr=False, compare=False)

    def __post_init__(self):
        kind = ScheduleKind(self.kind)
        object.__setattr__(self, "kind", kind)
        defaults = {
            ScheduleKind.VP_LINEAR: (1e-3, 1.0),
            ScheduleKind.VP_COSINE: (1e-3, 0.9946),
            ScheduleKind.VE: (0.0, 1.0),
            ScheduleKind.EDM: (self.sigma_min, self.sigma_max),
        }[kind]
        t_eps = defaults[0] if self.t_eps is None else float(self.t_eps)
        T = defaults[1] if self.T is None else float(self.T)
        object.__setattr__(self, "t_eps", t_eps)
        object.__setattr__(self, "T", T)

        if kind is ScheduleKind.VP_LINEAR:
            if not (0 <= self.beta_min < self.beta_max):
                raise InvalidParams("need 0 <= beta_min < beta_max")
            if t_eps <= 0:
                raise InvalidParams("VP schedules need t_eps > 0 (sigma_0 = 0)")
        elif kind is ScheduleKind.VP_COSINE:
            if self.cosine_s < 0:
                raise InvalidParams("cosine offset must be >= 0")
            if t_eps <= 0:
                raise InvalidParams("VP schedules need t_eps > 0 (sigma_0 = 0)")
            if T >= 1.0:
                raise InvalidParams("VP-cosine needs T < 1 (alpha_1 = 0)")
            s = self.cosine_s
            object.__setattr__(self, "_cos_norm", math.log(math.cos(0.5 * math.pi * s / (1 + s))))
        else:
            if not (0 < self.sigma_min < self.sigma_max):
                raise InvalidParams("need 0 < sigma_min < sigma_max")
            if kind is ScheduleKind.EDM and t_eps <= 0:
                raise InvalidParams("EDM schedule needs t_eps > 0")
        if not t_eps < T:
            raise InvalidParams("need t_eps < T")

    # -- construction helpers -------------------------------------------------

    @classmethod
    def vp_linear(cls, beta_min=0.1, beta_max=20.0, **kw):
        return cls(ScheduleKind.VP_LINEAR, beta_min=beta_min, beta_max=beta_max, **kw)

    @classmethod
    def vp_cosine(cls, s=0.008, **kw):
        return cls(ScheduleKind.VP_COSINE, cosine_s=s, **kw)

    @classmethod
    def ve(cls, sigma_min=0.02, sigma_max=80.0, **kw):
        return cls(ScheduleKind.VE, sigma_min=sigma_min, sigma_max=sigma_max, **kw)

    @classmethod
    def edm(cls, sigma_min=0.002, sigma_max=80.0, **kw):
        return cls(ScheduleKind.EDM, sigma_min=sigma_min, sigma_max=sigma_max, **kw)

    @property
    def is_vp(self) -> bool:
        return self.kind in (ScheduleKind.VP_LINEAR, ScheduleKind.VP_COSINE)

    @property
    def domain(self) -> tuple[float, float]:
        return self.t_eps, self.T

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "beta_min": self.beta_min,
            "beta_max": self.beta_max,
            "cosine_s": self.cosine_s,
            "sigma_min": self.sigma_min,
            "sigma_max": self.sigma_max,
            "t_eps": self.t_eps,
            "T": self.T,
        }

    # -- pointwise maps ---------------------------------------------------------

    def check_time(self, t):
        slack = 1e-12 * max(1.0, abs(self.T))
        if isinstance(t, (float, int)) and not isinstance(t, bool):
            if not (self.t_eps - slack <= t <= self.T + slack):
                raise OutOfDomain(f"time {t} outside [{self.t_eps}, {self.T}]")
            return np.float64(min(max(t, self.t_eps), self.T))
        t = np.asarray(t, dtype=float)
        if np.any(~np.isfinite(t)) or np.any(t < self.t_eps - slack) or np.any(t > self.T + slack):
            raise OutOfDomain(f"time outside [{self.t_eps}, {self.T}]")
        return np.clip(t, self.t_eps, self.T)

    def _log_alpha(self, t):
        k = self.kind
        if k is ScheduleKind.VP_LINEAR:
            return -0.25 * (self.beta_max - self.beta_min) * t**2 - 0.5 * self.beta_min * t
        if k is ScheduleKind.VP_COSINE:
            s = self.cosine_s
            return np.log(np.cos(0.5 * np.pi * (t + s) / (1 + s))) - self._cos_norm
        return np.zeros_like(t)

    def _log_sigma(self, t):
        k = self.kind
        if k in (ScheduleKind.VP_LINEAR, ScheduleKind.VP_COSINE):
            return 0.5 * np.log(-np.expm1(2.0 * self._log_alpha(t)))
        if k is ScheduleKind.VE:
            return math.log(self.sigma_min) + t * math.log(self.sigma_max / self.sigma_min)
        return np.log(t)

    def _dlog_alpha_dt(self, t):
        k = self.kind
        if k is ScheduleKind.VP_LINEAR:
            return -0.5 * (self.beta_max - self.beta_min) * t - 0.5 * self.beta_min
        if k is ScheduleKind.VP_COSINE:
            s = self.cosine_s
            return -0.5 * np.pi / (1 + s) * np.tan(0.5 * np.pi * (t + s) / (1 + s))
        return np.zeros_like(t)

    def _dlambda_dt(self, t):
        k = self.kind
        if k in (ScheduleKind.VP_LINEAR, ScheduleKind.VP_COSINE):
            # d/dt [log a - log(1-a^2)/2] = dlog a/dt * (1 + a^2/s^2) = dlog a/dt / s^2
            return self._dlog_alpha_dt(t) / -np.expm1(2.0 * self._log_alpha(t))
        if k is ScheduleKind.VE:
            return np.full_like(t, -math.log(self.sigma_max / self.sigma_min))
        return -1.0 / t

    def alpha(self, t):
        tt = self.check_time(t)
        return _out(np.exp(self._log_alpha(tt)), t)

    def sigma(self, t):
        tt = self.check_time(t)
        return _out(np.exp(self._log_sigma(tt)), t)

    def lambda_(self, t):
        tt = self.check_time(t)
        return _out(self._log_alpha(tt) - self._log_sigma(tt), t)

    def sigma_edm(self, t):
        """``sigma_t / alpha_t``, which equals ``exp(-lambda_t)``."""
        tt = self.check_time(t)
        return _out(np.exp(self._log_sigma(tt) - self._log_alpha(tt)), t)

    def dlambda_dt(self, t):
        tt = self.check_time(t)
        return _out(self._dlambda_dt(tt), t)

    def f(self, t):
        """Drift coefficient ``d log alpha / dt`` of the forward SDE."""
        tt = self.check_time(t)
        return _out(self._dlog_alpha_dt(tt), t)

    def g2(self, t):
        """Squared diffusion coefficient ``-2 sigma^2 d lambda / dt``."""
        tt = self.check_time(t)
        return _out(-2.0 * np.exp(2.0 * self._log_sigma(tt)) * self._dlambda_dt(tt), t)

    def __call__(self, t):
        """Return ``(alpha, sigma, lambda)`` at ``t``."""
        return self.alpha(t), self.sigma(t), self.lambda_(t)

    @cached_property
    def lambda_range(self) -> tuple[float, float]:
        """``(lambda(T), lambda(t_eps))``, lowest first."""
        return self.lambda_(self.T), self.lambda_(self.t_eps)

    # -- inverses -------------------------------------------------------------

    def lambda_inverse(self, lam):
        """Time with the given log-SNR, by vectorized bisection."""
        target = np.asarray(lam, dtype=float)
        lo_lam, hi_lam = self.lambda_range
        slack = 1e-12 * max(1.0, abs(lo_lam), abs(hi_lam))
        if np.any(~np.isfinite(target)) or np.any(target < lo_lam - slack) or np.any(target > hi_lam + slack):
            raise OutOfRange(f"log-SNR outside [{lo_lam}, {hi_lam}]")
        flat = target.ravel()
        lo = np.full(flat.shape, self.t_eps)  # lambda(lo) >= target
        hi = np.full(flat.shape, self.T)  # lambda(hi) <= target
        for _ in range(_BISECT_MAX_ITER):
            mid = 0.5 * (lo + hi)
            stalled = (mid <= lo) | (mid >= hi)
            if np.all(stalled):
                break
            above = (self._log_alpha(mid) - self._log_sigma(mid)) > flat
            lo = np.where(above & ~stalled, mid, lo)
            hi = np.where(~above & ~stalled, mid, hi)
            # no width tolerance: near t_eps |dlambda/dt| ~ 1e3, so a 1e-12 bracket
            # would leave ~1e-9 of log-SNR error; run to float resolution instead
        err_lo = np.abs(self._log_alpha(lo) - self._log_sigma(lo) - flat)
        err_hi = np.abs(self._log_alpha(hi) - self._log_sigma(hi) - flat)
        out = np.where(err_lo <= err_hi, lo, hi).reshape(target.shape)
        return _out(out, lam)

    def sigma_edm_inverse(self, sigma_edm):
        s = np.asarray(sigma_edm, dtype=float)
        if np.any(~(s > 0)):
            raise OutOfRange("sigma_edm must be positive")
        return self.lambda_inverse(-np.log(s) if s.ndim else -math.log(float(s)))


def make_schedule(kind, **params) -> NoiseSchedule:
    return NoiseSchedule(ScheduleKind(kind), **params)


@dataclass(frozen=True)
class TimeGrid:
    """Strictly decreasing times ``t_0 = T > ... > t_M``; ``M`` is the step count."""

    kind: GridKind
    times: np.ndarray

    def __post_init__(self):
        times = np.array(self.times, dtype=float)
        if times.ndim != 1 or times.size < 2:
            raise InvalidParams("a grid needs at least two times")
        if np.any(np.diff(times) >= 0):
            raise InvalidParams("grid times must be strictly decreasing")
        times.setflags(write=False)
        object.__setattr__(self, "kind", GridKind(self.kind))
        object.__setattr__(self, "times", times)

    @property
    def M(self) -> int:
        return self.times.size - 1

    def lambdas(self, schedule: NoiseSchedule) -> np.ndarray:
        return schedule.lambda_(self.times)

    def h_max(self) -> float:
        return float(np.max(-np.diff(self.times)))


def edm_sigmas(sigma_min, sigma_max, M, rho=7.0):
    """Karras et al. sigma ladder with ``M + 1`` entries, ``sigma_max`` first."""
    i = np.arange(M + 1) / M
    a, b = sigma_max ** (1.0 / rho), sigma_min ** (1.0 / rho)
    return (a + i * (b - a)) ** rho


def make_time_grid(schedule: NoiseSchedule, kind, M: int, rho: float = 7.0,
                   sigma_min: float | None = None, sigma_max: float | None = None) -> TimeGrid:
    kind = GridKind(kind)
    if int(M) != M or M < 2:
        raise InvalidParams("M must be an integer >= 2")
    M = int(M)
    t_eps, T = schedule.domain
    if kind is GridKind.UNIFORM_T:
        times = np.linspace(T, t_eps, M + 1)
    elif kind is GridKind.UNIFORM_LAMBDA:
        lam_T, lam_eps = schedule.lambda_(T), schedule.lambda_(t_eps)
        lams = np.linspace(lam_T, lam_eps, M + 1)
        times = schedule.lambda_inverse(lams)
        times[0], times[-1] = T, t_eps
    else:
        s_lo = schedule.sigma_edm(t_eps) if sigma_min is None else float(sigma_min)
        s_hi = schedule.sigma_edm(T) if sigma_max is None else float(sigma_max)
        if not (0 < s_lo < s_hi):
            raise InvalidParams("EDM grid needs 0 < sigma_min < sigma_max")
        if rho <= 0:
            raise InvalidParams("rho must be positive")
        sig = edm_sigmas(s_lo, s_hi, M, rho)
        times = schedule.sigma_edm_inverse(sig)
        # snap endpoints that coincide with the domain ends
        if math.isclose(sig[0], schedule.sigma_edm(T), rel_tol=1e-13):
            times[0] = T
        if math.isclose(sig[-1], schedule.sigma_edm(t_eps), rel_tol=1e-13):
            times[-1] = t_eps
    return TimeGrid(kind, times)


def refine_grid(schedule: NoiseSchedule, grid: TimeGrid, factor: int) -> TimeGrid:
    """Split every step into ``factor`` sub-steps of equal log-SNR width.

    The coarse nodes are kept bit-exactly so refinements nest.
    """
    if factor < 1 or int(factor) != factor:
        raise InvalidParams("refinement factor must be a positive integer")
    factor = int(factor)
    if factor == 1:
        return grid
    lams = grid.lambdas(schedule)
    frac = np.arange(1, factor) / factor
    inner = lams[:-1, None] + frac[None, :] * np.diff(lams)[:, None]
    inner_t = schedule.lambda_inverse(inner)
    times = np.empty(grid.M * factor + 1)
    times[::factor] = grid.times
    times[:-1].reshape(grid.M, factor)[:, 1:] = inner_t
    return TimeGrid(grid.kind, times)
