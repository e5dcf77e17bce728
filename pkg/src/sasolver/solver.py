"""The stochastic Adams sampling loop and the one-step baselines it generalizes."""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import rng as _rng
from .coefficients import CoeffMode, CoefficientTable, StepCoefficients, build_coefficient_table, noise_param_variance
from .errors import DimensionError, GridTooShort, InsufficientHistory, InvalidEta, InvalidParams, NonVPSchedule
from .schedules import NoiseSchedule, TimeGrid
from .stochasticity import TauSchedule, step_segments, tau_eval


@dataclass(frozen=True)
class SolverConfig:
    predictor_steps: int = 3
    corrector_steps: int = 0
    coeff_mode: CoeffMode = CoeffMode.QUADRATURE
    seed: int = 0
    record_trajectory: bool = False
    trajectory_stride: int = 1

    def __post_init__(self):
        object.__setattr__(self, "coeff_mode", CoeffMode(self.coeff_mode))
        if self.predictor_steps < 1:
            raise InvalidParams("predictor_steps must be >= 1")
        if self.corrector_steps < 0:
            raise InvalidParams("corrector_steps must be >= 0")
        if self.trajectory_stride < 1:
            raise InvalidParams("trajectory_stride must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise InvalidParams("seed must fit in 64 bits")

    def to_dict(self) -> dict:
        return {"predictor_steps": self.predictor_steps, "corrector_steps": self.corrector_steps,
                "coeff_mode": self.coeff_mode.value, "seed": self.seed,
                "record_trajectory": self.record_trajectory, "trajectory_stride": self.trajectory_stride}


class EvalBuffer:
    """Most recent model evaluations, oldest first."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise InvalidParams("buffer capacity must be >= 1")
        self.capacity = capacity
        self._items: deque = deque(maxlen=capacity)

    def push(self, t: float, value: np.ndarray) -> None:
        if self._items and not t < self._items[-1][0]:
            raise InvalidParams("evaluations must arrive in reverse-time order")
        self._items.append((float(t), value))

    def newest(self, n: int) -> list[np.ndarray]:
        """The ``n`` newest evaluations, newest first."""
        if n > len(self._items):
            raise InsufficientHistory(f"need {n} buffered evaluations, have {len(self._items)}")
        return [self._items[-1 - k][1] for k in range(n)]

    def times(self) -> list[float]:
        return [t for t, _ in self._items]

    def __len__(self) -> int:
        return len(self._items)


@dataclass
class RunRecord:
    grid: TimeGrid
    config: SolverConfig
    seed: int
    final_state: np.ndarray
    nfe_count: int
    noise_std: np.ndarray
    coefficient_checksum: str
    backend: str
    trajectory: np.ndarray | None = None
    trajectory_times: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)


# -- single steps ---------------------------------------------------------------


def _combine(x, decay, weights, evals, noise_std, xi, noise):
    out = decay * x
    for w, e in zip(weights, evals):
        out = out + w * e
    if noise is not None:
        return out + noise
    if noise_std != 0.0:
        out = out + noise_std * xi
    return out


def sa_predictor_step(x_i, buffer: EvalBuffer, coeffs: StepCoefficients, xi, noise=None):
    """``decay * x_i + sum_j b_j * x_theta_j + noise_std * xi``.

    ``noise``, when given, replaces ``noise_std * xi`` (coupled runs).
    """
    evals = buffer.newest(len(coeffs.model_weights))
    return _combine(x_i, coeffs.state_decay, coeffs.model_weights, evals, coeffs.noise_std, xi, noise)


def sa_corrector_step(x_i, x_pred_eval, buffer: EvalBuffer, coeffs: StepCoefficients, xi, noise=None):
    """Corrector update; ``buffer`` must hold evaluations up to ``t_i`` only.

    The first weight multiplies ``x_pred_eval``, the evaluation at the predicted point.
    """
    past = buffer.newest(len(coeffs.model_weights) - 1)
    return _combine(x_i, coeffs.state_decay, coeffs.model_weights, [x_pred_eval, *past],
                    coeffs.noise_std, xi, noise)


# -- the sampling loop ----------------------------------------------------------


def initial_state(s: NoiseSchedule, t0: float, seed: int, rows, dim: int) -> np.ndarray:
    z = _rng.normals(seed, _rng.TAG_INIT, 0, rows, dim)
    return z if s.is_vp else s.sigma(t0) * z


def step_noise(seed: int, iteration: int, rows, dim: int) -> np.ndarray:
    """The ``xi`` of loop iteration ``iteration`` (1-based) for the given sample rows."""
    return _rng.normals(seed, _rng.TAG_XI, iteration, rows, dim)


def _check_batch(x, dim):
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != dim:
        raise DimensionError(f"states must have shape (batch, {dim})")
    return x


def sa_solve(model, s: NoiseSchedule, ts: TauSchedule, grid: TimeGrid, cfg: SolverConfig,
             batch: int = 1, x_init=None, sample_offset: int = 0,
             noise_fn: Callable[[int], np.ndarray] | None = None,
             table: CoefficientTable | None = None,
             start_evals=None) -> RunRecord:
    """Run the predictor-corrector loop from ``grid.times[0]`` to ``grid.times[-1]``.

    Iteration ``i`` (1-based) draws one ``xi`` that both the predictor and the
    corrector consume, evaluates the model at the predicted point and stores that
    evaluation for later steps.  The first ``max(s_p, s_c)`` iterations run with
    truncated orders ``min(i, s)``.

    ``noise_fn(i)`` may supply the injected noise of iteration ``i`` directly (shape
    ``(batch, dim)``), replacing ``noise_std * xi``.  ``start_evals`` optionally
    pre-seeds the buffer with exact past evaluations ``[(t, value), ...]`` taken on
    the extension of the grid above ``t_0``; this is only used by convergence
    studies that want to isolate the order of the main loop.
    """
    if grid.M < 1:
        raise GridTooShort("the grid needs at least one step")
    sp, sc = cfg.predictor_steps, cfg.corrector_steps
    dim = model.dim
    rows = np.arange(sample_offset, sample_offset + batch)
    if x_init is None:
        x = initial_state(s, grid.times[0], cfg.seed, rows, dim)
    else:
        x = _check_batch(x_init, dim).copy()
        batch = x.shape[0]
        rows = np.arange(sample_offset, sample_offset + batch)
    if table is None:
        table = build_coefficient_table(s, ts, grid, sp, sc, cfg.coeff_mode)

    buf = EvalBuffer(max(sp, sc) + 1)
    for t, val in (start_evals or ()):
        buf.push(t, val)
    buf.push(grid.times[0], model(x, grid.times[0]))
    nfe = 1
    traj, traj_t = [], []
    if cfg.record_trajectory:
        traj.append(x.copy())
        traj_t.append(grid.times[0])

    for i in range(1, grid.M + 1):
        t_next = grid.times[i]
        if noise_fn is None:
            xi, noise = step_noise(cfg.seed, i, rows, dim), None
        else:
            xi, noise = None, noise_fn(i)
        x_pred = sa_predictor_step(x, buf, table.predictor[i - 1], xi, noise)
        ev = model(x_pred, t_next)
        nfe += 1
        if sc > 0:
            x = sa_corrector_step(x, ev, buf, table.corrector[i - 1], xi, noise)
        else:
            x = x_pred
        buf.push(t_next, ev)
        if cfg.record_trajectory and (i % cfg.trajectory_stride == 0 or i == grid.M):
            traj.append(x.copy())
            traj_t.append(t_next)

    return RunRecord(
        grid=grid, config=cfg, seed=cfg.seed, final_state=x, nfe_count=nfe,
        noise_std=np.array([c.noise_std for c in table.predictor]),
        coefficient_checksum=table.checksum(), backend=table.backend,
        trajectory=np.stack(traj) if traj else None,
        trajectory_times=np.array(traj_t) if traj_t else None,
    )


# -- one-step baselines -----------------------------------------------------------


def ddim_sigma_hat(s: NoiseSchedule, eta: float, t_i: float, t_next: float) -> float:
    if not s.is_vp:
        raise NonVPSchedule("DDIM's eta parameterization assumes alpha^2 + sigma^2 = 1")
    if eta < 0:
        raise InvalidEta("eta must be >= 0")
    shrink = -math.expm1(2.0 * (math.log(s.alpha(t_i)) - math.log(s.alpha(t_next))))
    return eta * s.sigma(t_next) / s.sigma(t_i) * math.sqrt(shrink)


def ddim_step(x_i, model_eval, eta: float, s: NoiseSchedule, t_i: float, t_next: float, xi):
    """Generalized DDIM update written with the implied noise prediction."""
    a_i, sig_i = s.alpha(t_i), s.sigma(t_i)
    a_n, sig_n = s.alpha(t_next), s.sigma(t_next)
    sh = ddim_sigma_hat(s, eta, t_i, t_next)
    if sh > sig_n:
        raise InvalidEta("eta too large for this step")
    eps = (x_i - a_i * model_eval) / sig_i
    out = a_n * model_eval + math.sqrt(sig_n**2 - sh**2) * eps
    return out + sh * xi if sh != 0.0 else out


def ddim_solve(model, s: NoiseSchedule, grid: TimeGrid, eta: float, x_init, seed: int,
               sample_offset: int = 0, record_trajectory: bool = False):
    """DDIM-``eta`` sampling using the same per-iteration noise stream as :func:`sa_solve`."""
    x = _check_batch(x_init, model.dim).copy()
    rows = np.arange(sample_offset, sample_offset + x.shape[0])
    traj = [x.copy()]
    for i in range(1, grid.M + 1):
        xi = step_noise(seed, i, rows, model.dim)
        x = ddim_step(x, model(x, grid.times[i - 1]), eta, s, grid.times[i - 1], grid.times[i], xi)
        if record_trajectory:
            traj.append(x.copy())
    return np.stack(traj) if record_trajectory else x


def euler_maruyama_step(x_i, score_eval, s: NoiseSchedule, ts: TauSchedule, t_i: float, t_next: float, xi):
    """Explicit Euler-Maruyama step of the reverse SDE family in score form."""
    dt = t_next - t_i
    tau = tau_eval(ts, t_i)
    f, g2 = s.f(t_i), s.g2(t_i)
    drift = f * x_i - 0.5 * (1.0 + tau * tau) * g2 * score_eval
    out = x_i + drift * dt
    return out + tau * math.sqrt(g2 * abs(dt)) * xi if tau != 0.0 else out


def noise_param_onestep(x_i, model_eval, s: NoiseSchedule, ts: TauSchedule, t_i: float, t_next: float, xi):
    """Exact linear part plus a one-node noise-prediction integral.

    ``x_next = (alpha_n/alpha_i) x - sigma_n sum_k (1+tau_k^2) e^{lam_n - d_k}
    (e^{d_k - c_k} - 1) eps + sqrt(var) xi`` over the constant-``tau`` pieces
    ``[c_k, d_k]`` of the step, with ``eps = (x - alpha_i x_theta)/sigma_i``.
    """
    a_i, sig_i = s.alpha(t_i), s.sigma(t_i)
    a_n, sig_n = s.alpha(t_next), s.sigma(t_next)
    lam_i, lam_n = s.lambda_(t_i), s.lambda_(t_next)
    lo, hi, tau2 = step_segments(ts, s, lam_i, lam_n)
    weight = sig_n * float(np.sum((1.0 + tau2) * np.exp(lam_n - hi) * np.expm1(hi - lo)))
    eps = (x_i - a_i * model_eval) / sig_i
    var = noise_param_variance(s, ts, t_i, t_next)
    out = (a_n / a_i) * x_i - weight * eps
    return out + math.sqrt(var) * xi if var != 0.0 else out
