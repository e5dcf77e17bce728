import math

import numpy as np
import pytest

from sasolver.errors import InsufficientLevels, NonAffineModel, PathCoverage
from sasolver.models import GaussianMixtureData, GMMOracle
from sasolver.schedules import NoiseSchedule, make_time_grid
from sasolver.solver import SolverConfig
from sasolver.stochasticity import TauSchedule
from sasolver.verification import (BrownianPath, fit_slope, ito_noise_from_path, ito_variance_check, ks_statistic,
                                   marginal_invariance, perturbed_score_sweep, strong_order,
                                   variance_inequality_scan, w1_to_marginal)

COS = NoiseSchedule.vp_cosine()
VP = NoiseSchedule.vp_linear()
GMM1 = GaussianMixtureData([0.3, 0.7], [[-2.0], [1.5]], [0.25, 0.5])


def test_fit_slope_exact_power_law():
    h = np.array([0.4, 0.2, 0.1, 0.05])
    assert fit_slope(h, 3.0 * h**2) == pytest.approx(2.0, abs=1e-12)


def test_brownian_path_nesting_and_subsets():
    g = make_time_grid(COS, "uniform-lambda", 3)
    p = BrownianPath(COS, g, 4, 5, dim=2, seed=1)
    q = BrownianPath(COS, g, 4, 2, dim=2, seed=1, sample_offset=3)
    np.testing.assert_array_equal(p.increments[:, 3:], q.increments)
    dt = np.abs(np.diff(p.fine.times))
    big = BrownianPath(COS, g, 4, 20000, dim=1, seed=2)
    np.testing.assert_allclose(np.var(big.increments[:, :, 0], axis=1) / dt, 1.0, atol=0.06)


def test_step_noise_sums_fine_intervals():
    g = make_time_grid(COS, "uniform-lambda", 2)
    ts = TauSchedule.constant(1.0)
    p = BrownianPath(COS, g, 3, 4, dim=1, seed=0)
    coarse = p.step_noise(ts, 8)
    for step in range(2):
        for j in range(4):
            direct = ito_noise_from_path(p, COS, ts, g.times[step], g.times[step + 1], j)
            assert coarse[step, j, 0] == pytest.approx(direct[0], rel=1e-12, abs=1e-15)
    with pytest.raises(PathCoverage):
        ito_noise_from_path(p, COS, ts, 0.5123, g.times[-1], 0)
    with pytest.raises(PathCoverage):
        ito_noise_from_path(p, COS, ts, g.times[0], g.times[1], 9)


def test_tau_zero_gives_zero_noise():
    g = make_time_grid(VP, "uniform-t", 2)
    p = BrownianPath(VP, g, 2, 3, seed=0)
    assert np.all(p.step_noise(TauSchedule.zero(), 4) == 0.0)


@pytest.mark.parametrize("tau", [0.5, 1.0, 2.0])
def test_ito_variance_matches_closed_form(tau):
    res = ito_variance_check(COS, TauSchedule.constant(tau), 0.7, 0.4, n_paths=20000, level=6, seed=3)
    assert res["pass"], res


def test_strong_order_small_run_and_guards():
    data = GaussianMixtureData.gaussian([0.5, -1.0], 0.3, dim=2)
    model = GMMOracle(data, VP)
    base = make_time_grid(VP, "uniform-lambda", 4)
    rep = strong_order(model, VP, TauSchedule.zero(), base, SolverConfig(2, 0, seed=1), [1, 2, 3, 4],
                       n_paths=8, L=8, check_reference=True)
    assert rep.h.size == 4 and np.all(np.diff(rep.errors) < 0)
    assert abs(rep.slope - 2.0) < 0.5
    assert rep.reference_shift < 1e-2 * rep.errors[-1]
    with pytest.raises(NonAffineModel):
        strong_order(GMMOracle(GaussianMixtureData([0.5, 0.5], [[0.0], [1.0]], [1.0, 1.0]), VP),
                     VP, TauSchedule.zero(), base, SolverConfig(), [1, 2, 3, 4])
    with pytest.raises(InsufficientLevels):
        strong_order(model, VP, TauSchedule.zero(), base, SolverConfig(), [1, 2, 3])
    with pytest.raises(InsufficientLevels):
        strong_order(model, VP, TauSchedule.zero(), base, SolverConfig(), [1, 2, 3, 4], L=4)


def test_ks_statistic_on_exact_samples():
    t = 0.5
    rng = np.random.default_rng(0)
    x0 = GMM1.sample(rng, 20000)
    xt = COS.alpha(t) * x0 + COS.sigma(t) * rng.standard_normal(x0.shape)
    assert ks_statistic(xt[:, 0], GMM1, COS, t) < 1.95 / math.sqrt(20000)
    assert w1_to_marginal(xt[:, 0], GMM1, COS, t) < 0.03


def test_marginal_invariance_small():
    g = make_time_grid(COS, "uniform-lambda", 64)
    rows = marginal_invariance(GMM1, COS, [0.0, 1.0], g, 4000, SolverConfig(3, 3, seed=1), chunk=1500)
    assert [r["tau"] for r in rows] == [0.0, 1.0]
    assert all(r["pass"] for r in rows), rows


def test_inequality_scan_small():
    res = variance_inequality_scan([VP, COS, NoiseSchedule.ve(), NoiseSchedule.edm()], n_intervals=200, seed=1)
    assert res["n"] == 200 and res["violations"] == 0 and res["min_margin"] >= 0


def test_perturbed_sweep_shape_and_pairing():
    g = make_time_grid(COS, "uniform-lambda", 32)
    rows = perturbed_score_sweep(GMM1, COS, [0.0, 1.0], [0.0, 1.0], g, 3000, SolverConfig(2, 0, seed=3),
                                 perturb_seed=5, n_boot=30, chunk=1000)
    assert len(rows) == 4
    assert rows[0]["se_vs_first_tau"] == 0.0 and rows[1]["se_vs_first_tau"] > 0
    assert all(r["w1"] >= 0 and r["se"] > 0 for r in rows)
