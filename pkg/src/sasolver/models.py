"""Analytic data-prediction oracles.

For Gaussian-mixture data ``p_0 = sum_k w_k N(mu_k, v_k I)`` the noisy marginal at
time ``t`` is again a mixture, ``sum_k w_k N(alpha mu_k, (alpha^2 v_k + sigma^2) I)``,
and the posterior mean ``E[x_0 | x_t]`` has a closed form.  That posterior mean is
the ideal data-prediction model ``x_theta``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
from scipy.special import ndtr

from .errors import DimensionError, InvalidParams
from .schedules import NoiseSchedule


class DataPredictionModel(Protocol):
    dim: int

    def __call__(self, x: np.ndarray, t: float) -> np.ndarray:
        """``x`` has shape ``(batch, dim)``; returns the same shape."""


@dataclass(frozen=True)
class GaussianMixtureData:
    weights: np.ndarray
    means: np.ndarray  # (K, dim)
    variances: np.ndarray  # (K,), isotropic

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        mu = np.asarray(self.means, dtype=float)
        if mu.ndim == 1:
            mu = mu[:, None]
        v = np.atleast_1d(np.asarray(self.variances, dtype=float))
        if not (w.ndim == 1 and mu.shape[0] == w.size == v.size):
            raise InvalidParams("weights, means and variances must have one entry per component")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise InvalidParams("weights must be a probability vector")
        if np.any(~(v > 0)):
            raise InvalidParams("variances must be positive")
        for arr in (w, mu, v):
            arr.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "variances", v)

    @classmethod
    def gaussian(cls, mean=0.0, variance=1.0, dim=1):
        mu = np.broadcast_to(np.asarray(mean, dtype=float), (dim,))
        return cls([1.0], mu[None, :], [variance])

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return self.weights.size

    def to_dict(self) -> dict:
        return {"weights": self.weights.tolist(), "means": self.means.tolist(),
                "variances": self.variances.tolist()}

    def marginal_params(self, s: NoiseSchedule, t: float):
        """Component means ``(K, dim)`` and variances ``(K,)`` of ``x_t``."""
        a, sig = s.alpha(t), s.sigma(t)
        return a * self.means, a * a * self.variances + sig * sig

    def _log_resp(self, x, a, sig):
        m = a * self.means
        var = a * a * self.variances + sig * sig
        d2 = np.sum((x[:, None, :] - m[None, :, :]) ** 2, axis=2)
        with np.errstate(divide="ignore"):
            logw = np.log(self.weights)
        logp = logw[None, :] - 0.5 * d2 / var[None, :] - 0.5 * self.dim * np.log(var)[None, :]
        top = logp.max(axis=1, keepdims=True)
        return logp - (top + np.log(np.sum(np.exp(logp - top), axis=1, keepdims=True))), var

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        k = rng.choice(self.n_components, size=n, p=self.weights)
        return self.means[k] + np.sqrt(self.variances[k])[:, None] * rng.standard_normal((n, self.dim))


def _as_batch(x, dim):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None] if dim == 1 else x[None, :]
    if x.ndim != 2 or x.shape[1] != dim:
        raise DimensionError(f"expected states of dimension {dim}, got shape {x.shape}")
    return x


def data_predict_gmm(g: GaussianMixtureData, s: NoiseSchedule, x, t: float) -> np.ndarray:
    """Exact posterior mean ``E[x_0 | x_t = x]``; ``x`` has shape ``(batch, dim)``."""
    x = _as_batch(x, g.dim)
    a, sig = s.alpha(t), s.sigma(t)
    if g.n_components == 1:
        v = g.variances[0]
        return (a * v * x + sig * sig * g.means[0]) / (a * a * v + sig * sig)
    log_r, var = g._log_resp(x, a, sig)
    r = np.exp(log_r)
    # per component: (x a v + sigma^2 mu) / (a^2 v + sigma^2)
    num = a * g.variances[None, :, None] * x[:, None, :] + sig * sig * g.means[None, :, :]
    post = num / var[None, :, None]
    return np.einsum("bk,bkd->bd", r, post)


def gmm_score(g: GaussianMixtureData, s: NoiseSchedule, x, t: float) -> np.ndarray:
    """``grad log p_t(x)`` of the noisy mixture."""
    x = _as_batch(x, g.dim)
    a, sig = s.alpha(t), s.sigma(t)
    log_r, var = g._log_resp(x, a, sig)
    r = np.exp(log_r)
    comp = -(x[:, None, :] - a * g.means[None, :, :]) / var[None, :, None]
    return np.einsum("bk,bkd->bd", r, comp)


def exact_marginal_cdf(g: GaussianMixtureData, s: NoiseSchedule, t: float, x):
    if g.dim != 1:
        raise DimensionError("marginal CDF needs one-dimensional data")
    m, var = g.marginal_params(s, t)
    xx = np.asarray(x, dtype=float)
    z = (xx[..., None] - m[:, 0]) / np.sqrt(var)
    out = np.sum(g.weights * ndtr(z), axis=-1)
    return float(out) if np.ndim(x) == 0 else out


def exact_marginal_quantile(g: GaussianMixtureData, s: NoiseSchedule, t: float, u) -> np.ndarray:
    """Inverse of :func:`exact_marginal_cdf` by vectorized bisection."""
    if g.dim != 1:
        raise DimensionError("marginal quantiles need one-dimensional data")
    u = np.asarray(u, dtype=float)
    m, var = g.marginal_params(s, t)
    sd = np.sqrt(var)
    lo = np.full(u.shape, np.min(m[:, 0] - 40 * sd))
    hi = np.full(u.shape, np.max(m[:, 0] + 40 * sd))
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if np.all((mid <= lo) | (mid >= hi)):
            break
        below = exact_marginal_cdf(g, s, t, mid) < u
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class GMMOracle:
    """``x_theta`` for mixture data under a fixed schedule."""

    data: GaussianMixtureData
    schedule: NoiseSchedule

    @property
    def dim(self) -> int:
        return self.data.dim

    @property
    def is_affine(self) -> bool:
        return self.data.n_components == 1

    def __call__(self, x, t):
        return data_predict_gmm(self.data, self.schedule, x, t)

    def score(self, x, t):
        return gmm_score(self.data, self.schedule, x, t)


@dataclass(frozen=True)
class PerturbedModel:
    """Shifts the implied score of ``base`` by ``epsilon * sin(omega x + phi)``.

    With ``x_theta = (x + sigma^2 score) / alpha`` a score shift ``d`` becomes the
    data-prediction shift ``sigma^2 d / alpha``.
    """

    base: GMMOracle
    epsilon: float
    seed: int
    omega: np.ndarray = field(init=False, repr=False, compare=False)
    phi: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.epsilon < 0:
            raise InvalidParams("epsilon must be >= 0")
        rng = np.random.Generator(np.random.Philox(int(self.seed)))
        object.__setattr__(self, "omega", rng.uniform(0.5, 2.0, self.base.dim))
        object.__setattr__(self, "phi", rng.uniform(0.0, 2 * np.pi, self.base.dim))

    @property
    def dim(self) -> int:
        return self.base.dim

    @property
    def is_affine(self) -> bool:
        return self.base.is_affine and self.epsilon == 0

    def perturbation(self, x, t):
        return np.sin(self.omega * _as_batch(x, self.dim) + self.phi)

    def __call__(self, x, t):
        out = self.base(x, t)
        if self.epsilon == 0:
            return out
        s = self.base.schedule
        a, sig = s.alpha(t), s.sigma(t)
        return out + (sig * sig * self.epsilon / a) * self.perturbation(x, t)


def perturb_model(base: GMMOracle, epsilon: float, seed: int) -> PerturbedModel:
    return PerturbedModel(base, float(epsilon), int(seed))
