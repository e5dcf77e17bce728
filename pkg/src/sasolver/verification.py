"""Measurements that check the solver against exact facts.

* strong convergence orders with coupled Brownian paths
* the variance of the exactly sampled Ito term
* invariance of the final marginal under the choice of ``tau``
* the data- vs noise-parameterization variance inequality
* sample quality under a perturbed score, as a function of ``tau``
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import kstest

from . import rng as _rng
from .coefficients import noise_param_variance, noise_std
from .errors import DimensionError, InsufficientLevels, InvalidParams, NonAffineModel, PathCoverage
from .models import GaussianMixtureData, GMMOracle, exact_marginal_cdf, exact_marginal_quantile, perturb_model
from .schedules import NoiseSchedule, TimeGrid, refine_grid
from .solver import SolverConfig, initial_state, sa_solve
from .stochasticity import TauSchedule, lambda_segments

KS_COEFF = 1.95  # p ~ 0.001 critical value is about 1.95 / sqrt(n)
W1_PROBES = 4096


# -- tau helpers used by the Ito weights ---------------------------------------------


def _tau_values(ts: TauSchedule, t: np.ndarray) -> np.ndarray:
    if ts.is_constant:
        return np.full(t.shape, ts.value)
    his = np.array([p[1] for p in ts.pieces])
    vals = np.array([p[2] for p in ts.pieces])
    idx = np.clip(np.searchsorted(his, t, side="left"), 0, len(his) - 1)
    return vals[idx]


def _tau2_cumulative(ts: TauSchedule, s: NoiseSchedule, lam: np.ndarray) -> np.ndarray:
    """``int_{lambda_min}^{lam} tau^2`` for an array of log-SNR values."""
    lo, hi, tau2 = lambda_segments(ts, s)
    cover = np.clip(lam[..., None] - lo, 0.0, hi - lo)
    return np.sum(tau2 * cover, axis=-1)


# -- Brownian paths -------------------------------------------------------------


@dataclass
class BrownianPath:
    """Wiener increments on a dyadic refinement of ``grid``.

    Fine interval ``k`` of sample ``j`` is ``sqrt(|dt_k|)`` times the normal at
    row ``j`` of stream ``(seed, brownian, k)``, so any subset of samples can be
    regenerated on its own.  Increments of coarser intervals are sums of these.
    """

    schedule: NoiseSchedule
    grid: TimeGrid
    level: int
    n_samples: int
    dim: int = 1
    seed: int = 0
    sample_offset: int = 0
    fine: TimeGrid = field(init=False)
    increments: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.level < 0:
            raise InvalidParams("level must be >= 0")
        self.fine = refine_grid(self.schedule, self.grid, 2**self.level)
        rows = np.arange(self.sample_offset, self.sample_offset + self.n_samples)
        dt = np.abs(np.diff(self.fine.times))
        inc = np.empty((dt.size, self.n_samples, self.dim))
        for k in range(dt.size):
            inc[k] = math.sqrt(dt[k]) * _rng.normals(self.seed, _rng.TAG_BROWNIAN, k, rows, self.dim)
        self.increments = inc

    def index_of(self, t: float) -> int:
        times = self.fine.times
        k = int(np.searchsorted(-times, -t))
        if k >= times.size or times[k] != t:
            raise PathCoverage(f"t={t} is not a node of the path's fine grid")
        return k

    def ito_weights(self, ts: TauSchedule, stride: int) -> np.ndarray:
        """Per fine interval, the integrand weight for steps spanning ``stride`` intervals.

        The weight is ``sigma_end exp(-int_{lam_u}^{lam_end} tau^2) tau(u) sqrt(-2 dlam/du)``
        at the interval midpoint ``u``, with ``end`` the right node of the enclosing step.
        """
        s = self.schedule
        tf = self.fine.times
        n = tf.size - 1
        if n % stride:
            raise PathCoverage("stride does not divide the fine grid")
        mid = 0.5 * (tf[:-1] + tf[1:])
        end = (np.arange(n) // stride + 1) * stride
        lam_mid = s.lambda_(mid)
        lam_f = s.lambda_(tf)
        expo = _tau2_cumulative(ts, s, lam_mid) - _tau2_cumulative(ts, s, lam_f[end])
        return s.sigma(tf[end]) * np.exp(expo) * _tau_values(ts, mid) * np.sqrt(-2.0 * s.dlambda_dt(mid))

    def step_noise(self, ts: TauSchedule, stride: int) -> np.ndarray:
        """Coupled injected noise of every step of the level with ``stride`` fine intervals per step.

        Shape ``(n_steps, n_samples, dim)``.
        """
        w = self.ito_weights(ts, stride)
        weighted = w[:, None, None] * self.increments
        return weighted.reshape(-1, stride, self.n_samples, self.dim).sum(axis=1)


def ito_noise_from_path(path: BrownianPath, s: NoiseSchedule, ts: TauSchedule, t_i: float, t_next: float,
                        sample: int) -> np.ndarray:
    """Discretized ``sigma_next int e^{-int tau^2} tau sqrt(-2 dlam/du) dW`` over ``[t_next, t_i]``."""
    if s != path.schedule:
        raise InvalidParams("path was built for a different schedule")
    a, b = path.index_of(t_i), path.index_of(t_next)
    if not a < b:
        raise PathCoverage("need t_next < t_i")
    j = sample - path.sample_offset
    if not 0 <= j < path.n_samples:
        raise PathCoverage(f"sample {sample} not in path")
    tf = path.fine.times
    mid = 0.5 * (tf[a:b] + tf[a + 1:b + 1])
    lam_mid = s.lambda_(mid)
    expo = _tau2_cumulative(ts, s, lam_mid) - _tau2_cumulative(ts, s, np.array([s.lambda_(t_next)]))
    w = s.sigma(t_next) * np.exp(expo) * _tau_values(ts, mid) * np.sqrt(-2.0 * s.dlambda_dt(mid))
    return w @ path.increments[a:b, j, :]


def ito_variance_check(s: NoiseSchedule, ts: TauSchedule, t_i: float, t_next: float, n_paths: int,
                       level: int = 7, seed: int = 0) -> dict:
    """Monte Carlo variance of the coupled Ito term against the closed form."""
    grid = TimeGrid("uniform-lambda", [t_i, t_next])
    path = BrownianPath(s, grid, level, n_paths, dim=1, seed=seed)
    g = path.step_noise(ts, 2**level)[0, :, 0]
    var = float(np.var(g, ddof=1))
    exact = noise_std(s, ts, t_i, t_next) ** 2
    se = exact * math.sqrt(2.0 / (n_paths - 1))
    return {"t_i": t_i, "t_next": t_next, "sample_var": var, "exact_var": exact, "se": se,
            "z": (var - exact) / se if se > 0 else 0.0, "pass": abs(var - exact) <= 3 * se + 1e-300}


# -- strong order ------------------------------------------------------------------


@dataclass
class ConvergenceReport:
    h: np.ndarray
    errors: np.ndarray  # mean over paths of the max-over-nodes Euclidean error
    errors_l2: np.ndarray
    errors_end: np.ndarray
    slope: float
    slope_end: float
    slope_drop_largest: float
    reference_shift: float
    config: dict

    def rows(self):
        for k in range(self.h.size):
            yield {"h": self.h[k], "error_l1": self.errors[k], "error_l2": self.errors_l2[k],
                   "error_end": self.errors_end[k]}


def fit_slope(h, err) -> float:
    return float(np.polyfit(np.log(h), np.log(err), 1)[0])


def strong_order(model, s: NoiseSchedule, ts: TauSchedule, base_grid: TimeGrid, cfg: SolverConfig,
                 levels, n_paths: int = 64, L: int = 14, check_reference: bool = False) -> ConvergenceReport:
    """Strong errors of the solver on refinements of ``base_grid`` against a level-``L`` run.

    All runs share the initial state and one Brownian path per sample; errors are
    taken at the nodes of the coarsest tested level.  With ``check_reference`` the
    path is built one level deeper and the reference is recomputed there, giving
    ``reference_shift`` (mean endpoint change) as a quality guard.
    """
    if not getattr(model, "is_affine", False):
        raise NonAffineModel("strong-order references require an affine data prediction")
    levels = sorted(int(l) for l in levels)
    if len(levels) < 4:
        raise InsufficientLevels("need at least four levels for a slope fit")
    if levels[-1] >= L:
        raise InsufficientLevels("reference level must exceed every tested level")
    path_level = L + 1 if check_reference else L
    path = BrownianPath(s, base_grid, path_level, n_paths, dim=model.dim, seed=cfg.seed)
    rows = np.arange(n_paths)
    x0 = initial_state(s, base_grid.times[0], cfg.seed, rows, model.dim)
    lmin = levels[0]

    def run(level, stride_to_common):
        grid = refine_grid(s, base_grid, 2**level)
        noise = path.step_noise(ts, 2 ** (path_level - level))
        c = SolverConfig(cfg.predictor_steps, cfg.corrector_steps, cfg.coeff_mode, cfg.seed,
                         record_trajectory=True, trajectory_stride=stride_to_common)
        rec = sa_solve(model, s, ts, grid, c, x_init=x0, noise_fn=lambda i: noise[i - 1])
        return rec.trajectory, float(np.max(np.abs(np.diff(grid.lambdas(s)))))

    ref, _ = run(L, 2 ** (L - lmin))
    shift = float("nan")
    if check_reference:
        ref2, _ = run(L + 1, 2 ** (L + 1 - lmin))
        shift = float(np.mean(np.linalg.norm(ref2[-1] - ref[-1], axis=-1)))

    hs, e1, e2, ee = [], [], [], []
    for level in levels:
        traj, h = run(level, 2 ** (level - lmin))
        d = np.linalg.norm(traj - ref, axis=-1)  # (nodes, paths)
        worst = d.max(axis=0)
        hs.append(h)
        e1.append(worst.mean())
        e2.append(math.sqrt(np.mean(worst**2)))
        ee.append(d[-1].mean())
    hs, e1, e2, ee = map(np.array, (hs, e1, e2, ee))
    return ConvergenceReport(
        h=hs, errors=e1, errors_l2=e2, errors_end=ee,
        slope=fit_slope(hs, e1), slope_end=fit_slope(hs, ee),
        slope_drop_largest=fit_slope(hs[1:], e1[1:]) if hs.size > 2 else float("nan"),
        reference_shift=shift,
        config={"levels": levels, "L": L, "n_paths": n_paths, **cfg.to_dict()},
    )


# -- marginals -------------------------------------------------------------------


def _sample_final(model, s, ts, grid, cfg, n, chunk):
    out = []
    for start in range(0, n, chunk):
        b = min(chunk, n - start)
        out.append(sa_solve(model, s, ts, grid, cfg, batch=b, sample_offset=start).final_state)
    return np.concatenate(out)


def ks_statistic(samples: np.ndarray, g: GaussianMixtureData, s: NoiseSchedule, t: float) -> float:
    return float(kstest(samples, lambda x: exact_marginal_cdf(g, s, t, x)).statistic)


def marginal_invariance(g: GaussianMixtureData, s: NoiseSchedule, tau_list, grid: TimeGrid, n_samples: int,
                        cfg: SolverConfig | None = None, chunk: int = 50_000) -> list[dict]:
    """KS distance between solver output and the exact marginal at the grid's last time, per tau."""
    if g.dim != 1:
        raise DimensionError("marginal test needs one-dimensional data")
    cfg = cfg or SolverConfig(3, 3)
    model = GMMOracle(g, s)
    crit = KS_COEFF / math.sqrt(n_samples)
    rows = []
    for tau in tau_list:
        ts = tau if isinstance(tau, TauSchedule) else TauSchedule.constant(tau)
        x = _sample_final(model, s, ts, grid, cfg, n_samples, chunk)[:, 0]
        stat = ks_statistic(x, g, s, grid.times[-1])
        rows.append({"tau": ts.max_value if ts.is_constant else str(ts.to_dict()),
                     "ks": stat, "critical": crit, "pass": stat < crit})
    return rows


# -- variance inequality -----------------------------------------------------------


def variance_inequality_scan(schedules, tau_values=None, n_intervals: int = 1000, seed: int = 0,
                             slack: float = 1e-12) -> dict:
    """Scan random steps; the data-form injected variance must not exceed the noise-form one.

    ``tau_values=None`` draws ``tau`` uniformly from ``[0, 2]``.
    """
    gen = np.random.Generator(np.random.Philox(seed))
    schedules = list(schedules)
    worst, violations, rows = math.inf, 0, []
    for k in range(n_intervals):
        s = schedules[k % len(schedules)]
        tau = float(gen.choice(tau_values)) if tau_values is not None else float(gen.uniform(0.0, 2.0))
        ts = TauSchedule.constant(tau)
        a, b = np.sort(gen.uniform(s.t_eps, s.T, 2))
        if a == b:
            continue
        lhs = noise_std(s, ts, b, a) ** 2
        rhs = noise_param_variance(s, ts, b, a)
        margin = rhs - lhs
        if margin < -slack * max(1.0, rhs):
            violations += 1
        worst = min(worst, margin)
        rows.append({"schedule": s.kind.value, "tau": tau, "t_i": b, "t_next": a,
                     "data_var": lhs, "noise_var": rhs, "margin": margin})
    return {"n": len(rows), "violations": violations, "min_margin": worst, "pass": violations == 0,
            "rows": rows}


# -- perturbed score ---------------------------------------------------------------


def w1_to_marginal(samples: np.ndarray, g: GaussianMixtureData, s: NoiseSchedule, t: float) -> float:
    """W1 between the empirical law of ``samples`` and the exact marginal.

    Both quantile functions are compared at ``W1_PROBES`` midpoint probes.
    """
    u = (np.arange(W1_PROBES) + 0.5) / W1_PROBES
    q_true = exact_marginal_quantile(g, s, t, u)
    return float(np.mean(np.abs(np.quantile(samples, u) - q_true)))


def perturbed_score_sweep(g: GaussianMixtureData, s: NoiseSchedule, epsilon_list, tau_list, grid: TimeGrid,
                          n_samples: int, cfg: SolverConfig | None = None, perturb_seed: int = 0,
                          n_boot: int = 200, chunk: int = 50_000) -> list[dict]:
    """W1 to the exact final marginal for every ``(epsilon, tau)``.

    Standard errors come from a bootstrap; ``se_vs_first_tau`` is the paired
    bootstrap SE of ``W1(tau) - W1(tau_list[0])`` (runs share initial states, so
    the pairing matters).
    """
    if g.dim != 1:
        raise DimensionError("W1 sweep needs one-dimensional data")
    cfg = cfg or SolverConfig(3, 0)
    base = GMMOracle(g, s)
    t_end = grid.times[-1]
    u = (np.arange(W1_PROBES) + 0.5) / W1_PROBES
    q_true = exact_marginal_quantile(g, s, t_end, u)

    def w1(x):
        return float(np.mean(np.abs(np.quantile(x, u) - q_true)))

    def bootstrap(x):
        # the same resampling indices for every tau, so differences are paired
        gen = np.random.Generator(np.random.Philox(cfg.seed ^ 0x5EED))
        return np.array([w1(x[gen.integers(0, n_samples, n_samples)]) for _ in range(n_boot)])

    rows = []
    for eps in epsilon_list:
        model = perturb_model(base, eps, perturb_seed)
        first_boot = None
        for k, tau in enumerate(tau_list):
            ts = TauSchedule.constant(tau)
            x = _sample_final(model, s, ts, grid, cfg, n_samples, chunk)[:, 0]
            boots = bootstrap(x) if n_boot else np.array([np.nan])
            if k == 0:
                first_boot = boots
            rows.append({"epsilon": float(eps), "tau": float(tau), "w1": w1(x),
                         "se": float(np.std(boots, ddof=1)) if n_boot else float("nan"),
                         "se_vs_first_tau": float(np.std(boots - first_boot, ddof=1)) if n_boot and k else 0.0})
    return rows
