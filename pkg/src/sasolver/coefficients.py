"""Step coefficients of the stochastic Adams predictor and corrector.

One step from ``t_i`` to ``t_{i+1}`` (log-SNR width ``h > 0``) reads

    x_{i+1} = state_decay * x_i + sum_j w_j * x_theta_j + noise_std * xi

with ``state_decay = (sigma_{i+1}/sigma_i) exp(-I)``, ``I = int tau^2 dlambda`` over
the step, ``noise_std = sigma_{i+1} sqrt(1 - exp(-2 I))`` and ``w_j`` the integral of
``(1 + tau^2) exp(lam - lam_{i+1} - int_lam^{lam_{i+1}} tau^2)`` against the Lagrange
basis of the buffered evaluations, scaled by ``alpha_{i+1}`` (``sigma_{i+1} e^lam``
rewritten so no large exponentials appear).

Weights are ordered newest evaluation first.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import kernels
from .errors import DegenerateNodes, InsufficientHistory, InvalidParams, NonConstantTau, OutOfDomain
from .schedules import NoiseSchedule, TimeGrid
from .stochasticity import TauSchedule, step_segments, tau2_integral_lambda

NODE_TOL = 1e-14
GRID_NODE_TOL = 1e-12


class CoeffMode(str, Enum):
    QUADRATURE = "quadrature"
    CLOSED_FORM = "closed_form"
    AUTO = "auto"


@dataclass(frozen=True)
class QuadratureRule:
    N: int
    nodes: np.ndarray
    weights: np.ndarray

    @classmethod
    def gauss_legendre(cls, N: int = 32) -> "QuadratureRule":
        if N < 1:
            raise InvalidParams("quadrature order must be >= 1")
        x, w = np.polynomial.legendre.leggauss(N)
        x.setflags(write=False)
        w.setflags(write=False)
        return cls(N, x, w)

    def integrate(self, f, a: float, b: float) -> float:
        half, mid = 0.5 * (b - a), 0.5 * (a + b)
        return half * float(np.dot(self.weights, f(mid + half * self.nodes)))


DEFAULT_RULE = QuadratureRule.gauss_legendre(32)


@dataclass(frozen=True)
class StepCoefficients:
    state_decay: float
    model_weights: tuple[float, ...]
    noise_std: float
    mode: CoeffMode
    tau2_integral: float = 0.0

    def checksum(self) -> str:
        data = np.array([self.state_decay, *self.model_weights, self.noise_std])
        return hashlib.sha256(data.tobytes()).hexdigest()[:16]


def lagrange_basis(lambdas, j: int, lam):
    nodes = np.asarray(lambdas, dtype=float)
    n = nodes.size
    for a in range(n):
        for b in range(a + 1, n):
            if abs(nodes[a] - nodes[b]) < NODE_TOL:
                raise DegenerateNodes(f"nodes {a} and {b} coincide")
    lam = np.asarray(lam, dtype=float)
    out = np.ones_like(lam)
    for k in range(n):
        if k != j:
            out = out * (lam - nodes[k]) / (nodes[j] - nodes[k])
    return float(out) if out.ndim == 0 else out


# -- per-step quantities ---------------------------------------------------------


def _step_lambdas(s: NoiseSchedule, t_i: float, t_next: float):
    if not t_next < t_i:
        raise OutOfDomain("a reverse step needs t_next < t_i")
    return s.lambda_(t_i), s.lambda_(t_next)


def _decay_and_noise(s, ts, t_i, t_next, lam_i=None, lam_n=None):
    if lam_i is None:
        lam_i, lam_n = _step_lambdas(s, t_i, t_next)
    integral = tau2_integral_lambda(ts, lam_i, lam_n, s)
    sig_i, sig_n = s.sigma(t_i), s.sigma(t_next)
    decay = (sig_n / sig_i) * math.exp(-integral)
    noise = sig_n * math.sqrt(-math.expm1(-2.0 * integral))
    return decay, noise, integral


def noise_std(s: NoiseSchedule, ts: TauSchedule, t_i: float, t_next: float) -> float:
    """Std of the exactly sampled Ito term over ``[t_next, t_i]``."""
    return _decay_and_noise(s, ts, t_i, t_next)[1]


def noise_param_variance(s: NoiseSchedule, ts: TauSchedule, t_i: float, t_next: float) -> float:
    """Injected variance of the exact one-step update in noise-prediction form.

    ``alpha_next^2 int 2 tau^2 e^{-2 lam} dlam``, summed piecewise in closed form and
    written relative to ``lambda_next`` so nothing overflows.
    """
    lam_i, lam_n = _step_lambdas(s, t_i, t_next)
    lo, hi, tau2 = step_segments(ts, s, lam_i, lam_n)
    sig_n = s.sigma(t_next)
    # alpha^2 e^{-2 lo} - alpha^2 e^{-2 hi} = sigma^2 e^{2(lam_n - hi)} (e^{2(hi-lo)} - 1)
    terms = tau2 * np.exp(2.0 * (lam_n - hi)) * np.expm1(2.0 * (hi - lo))
    return float(sig_n**2 * np.sum(terms))


def _segments_const(ts, s, lam_i, lam_n):
    lo, hi, tau2 = step_segments(ts, s, lam_i, lam_n)
    if np.any(tau2 != tau2[0]):
        return None
    return float(tau2[0])


# -- single-step coefficient functions ------------------------------------------


def _nodes_for(lams: np.ndarray, i: int, steps: int, corrector: bool) -> np.ndarray:
    if steps < 1:
        raise InvalidParams("steps must be >= 1")
    if i < steps - 1:
        raise InsufficientHistory(f"step {i} has only {i + 1} past evaluations, need {steps}")
    past = lams[i - steps + 1:i + 1][::-1]
    nodes = np.concatenate([[lams[i + 1]], past]) if corrector else past
    for a in range(nodes.size):
        for b in range(a + 1, nodes.size):
            if abs(nodes[a] - nodes[b]) < GRID_NODE_TOL:
                raise DegenerateNodes("two grid log-SNR values are closer than 1e-12")
    return nodes


def _closed_form_weights(alpha_n, tau2, h, nodes, corrector):
    """Second-order closed forms for one or two nodes.

    The weight on the node other than ``lambda_i`` is the leading Taylor term
    ``alpha (1+tau^2) h^2 / (2 (lam_other - lam_i))``; the weight on ``lambda_i``
    takes the remainder so the total stays exact.
    """
    c = 1.0 + tau2
    total = alpha_n * -math.expm1(-c * h)
    if nodes.size == 1:
        return (total,)
    if corrector:  # nodes = [lam_{i+1}, lam_i], lam_{i+1} - lam_i = h
        other = alpha_n * c * h * h / (2.0 * (nodes[0] - nodes[1]))
        return (other, total - other)
    other = alpha_n * c * h * h / (2.0 * (nodes[1] - nodes[0]))  # negative spacing
    return (total - other, other)


def _step_coefficients(s, ts, grid, i, steps, q, mode, corrector):
    mode = CoeffMode(mode)
    if not 0 <= i < grid.M:
        raise InvalidParams(f"step index {i} outside 0..{grid.M - 1}")
    lams = grid.lambdas(s)
    nodes = _nodes_for(lams, i, steps, corrector)
    t_i, t_n = grid.times[i], grid.times[i + 1]
    lam_i, lam_n = lams[i], lams[i + 1]
    decay, noise, integral = _decay_and_noise(s, ts, t_i, t_n, lam_i, lam_n)
    alpha_n = s.alpha(t_n)

    max_cf = 1 if corrector else 2
    tau2 = _segments_const(ts, s, lam_i, lam_n)
    eligible = steps <= max_cf and tau2 is not None
    if mode is CoeffMode.CLOSED_FORM and not eligible:
        if tau2 is None:
            raise NonConstantTau("closed-form coefficients need constant tau on the step")
        raise InvalidParams(f"closed form covers at most {max_cf} step(s) here")
    if mode is CoeffMode.CLOSED_FORM or (mode is CoeffMode.AUTO and eligible):
        weights = _closed_form_weights(alpha_n, tau2, lam_n - lam_i, nodes, corrector)
        return StepCoefficients(decay, tuple(float(w) for w in weights), noise,
                                CoeffMode.CLOSED_FORM, integral)

    q = q or DEFAULT_RULE
    lo, hi, t2 = step_segments(ts, s, lam_i, lam_n)
    w = kernels.weights_table([lam_i], [lam_n], [alpha_n], nodes[None, :], [nodes.size],
                              [0, lo.size], lo, hi, t2, q.nodes, q.weights)[0]
    return StepCoefficients(decay, tuple(float(x) for x in w), noise, CoeffMode.QUADRATURE, integral)


def predictor_coefficients(s: NoiseSchedule, ts: TauSchedule, grid: TimeGrid, i: int, steps: int,
                           q: QuadratureRule | None = None, mode="quadrature") -> StepCoefficients:
    """Weights ``[b_i, b_{i-1}, ...]`` on evaluations at ``t_i, t_{i-1}, ...``."""
    return _step_coefficients(s, ts, grid, i, steps, q, mode, corrector=False)


def corrector_coefficients(s: NoiseSchedule, ts: TauSchedule, grid: TimeGrid, i: int, steps: int,
                           q: QuadratureRule | None = None, mode="quadrature") -> StepCoefficients:
    """Weights ``[b_{i+1}, b_i, ...]``; the first multiplies the evaluation at ``t_{i+1}``."""
    return _step_coefficients(s, ts, grid, i, steps, q, mode, corrector=True)


def closed_form_2p1c(s: NoiseSchedule, ts: TauSchedule, grid: TimeGrid, i: int):
    """Second-order closed forms: 2-step predictor and 1-step corrector at step ``i``."""
    if i < 1:
        raise InsufficientHistory("the 2-step predictor needs i >= 1")
    pred = predictor_coefficients(s, ts, grid, i, 2, mode=CoeffMode.CLOSED_FORM)
    corr = corrector_coefficients(s, ts, grid, i, 1, mode=CoeffMode.CLOSED_FORM)
    return pred, corr


# -- whole-grid tables ------------------------------------------------------------


@dataclass(frozen=True)
class CoefficientTable:
    """Per-step coefficients for a whole grid, including warm-up truncation.

    ``predictor[i]`` and ``corrector[i]`` drive the step ``t_i -> t_{i+1}`` with
    ``min(i+1, s)`` history, mirroring the warm-up of the sampling loop.
    """

    predictor: tuple[StepCoefficients, ...]
    corrector: tuple[StepCoefficients, ...] | None
    backend: str

    def checksum(self) -> str:
        h = hashlib.sha256()
        for group in (self.predictor, self.corrector or ()):
            for c in group:
                h.update(np.array([c.state_decay, *c.model_weights, c.noise_std]).tobytes())
        return h.hexdigest()


def _table(s, ts, grid, steps, q, mode, corrector, lams, decay, noise, integ, alphas):
    M = grid.M
    K = steps + (1 if corrector else 0)
    counts = np.empty(M, dtype=np.int64)
    nodes = np.zeros((M, K))
    out: list[StepCoefficients | None] = [None] * M
    quad_idx = []
    seg_lo, seg_hi, seg_t2, seg_ptr = [], [], [], [0]
    max_cf = 1 if corrector else 2
    for i in range(M):
        k = min(i + 1, steps)
        nd = _nodes_for(lams, i, k, corrector)
        counts[i] = nd.size
        nodes[i, :nd.size] = nd
        tau2 = _segments_const(ts, s, lams[i], lams[i + 1])
        eligible = k <= max_cf and tau2 is not None
        if mode is CoeffMode.CLOSED_FORM and not eligible:
            if tau2 is None:
                raise NonConstantTau(f"step {i}: closed form needs constant tau")
            raise InvalidParams(f"closed form covers at most {max_cf} step(s) here")
        if mode is CoeffMode.CLOSED_FORM or (mode is CoeffMode.AUTO and eligible):
            w = _closed_form_weights(alphas[i + 1], tau2, lams[i + 1] - lams[i], nd, corrector)
            out[i] = StepCoefficients(decay[i], tuple(float(x) for x in w), noise[i],
                                      CoeffMode.CLOSED_FORM, integ[i])
        else:
            lo, hi, t2 = step_segments(ts, s, lams[i], lams[i + 1])
            seg_lo.append(lo)
            seg_hi.append(hi)
            seg_t2.append(t2)
            seg_ptr.append(seg_ptr[-1] + lo.size)
            quad_idx.append(i)
    if quad_idx:
        idx = np.array(quad_idx)
        W = kernels.weights_table(lams[idx], lams[idx + 1], alphas[idx + 1], nodes[idx], counts[idx],
                                  seg_ptr, np.concatenate(seg_lo), np.concatenate(seg_hi),
                                  np.concatenate(seg_t2), q.nodes, q.weights)
        for row, i in enumerate(quad_idx):
            out[i] = StepCoefficients(decay[i], tuple(float(x) for x in W[row, :counts[i]]), noise[i],
                                      CoeffMode.QUADRATURE, integ[i])
    return tuple(out)


def build_coefficient_table(s: NoiseSchedule, ts: TauSchedule, grid: TimeGrid, predictor_steps: int,
                            corrector_steps: int = 0, mode="quadrature",
                            q: QuadratureRule | None = None) -> CoefficientTable:
    """Precompute every step's coefficients in one kernel call per method."""
    if predictor_steps < 1 or corrector_steps < 0:
        raise InvalidParams("need predictor_steps >= 1 and corrector_steps >= 0")
    mode = CoeffMode(mode)
    q = q or DEFAULT_RULE
    lams = grid.lambdas(s)
    alphas = s.alpha(grid.times)
    sigmas = s.sigma(grid.times)
    M = grid.M
    integ = np.array([tau2_integral_lambda(ts, lams[i], lams[i + 1], s) for i in range(M)])
    decay = [float(sigmas[i + 1] / sigmas[i] * math.exp(-integ[i])) for i in range(M)]
    noise = [float(sigmas[i + 1] * math.sqrt(-math.expm1(-2.0 * integ[i]))) for i in range(M)]
    integ = [float(x) for x in integ]
    common = (lams, decay, noise, integ, alphas)
    pred = _table(s, ts, grid, predictor_steps, q, mode, False, *common)
    corr = _table(s, ts, grid, corrector_steps, q, mode, True, *common) if corrector_steps else None
    return CoefficientTable(pred, corr, kernels.BACKEND)
