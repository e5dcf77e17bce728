import numpy as np
import pytest

import sasolver.solver as solver_mod
from oracles import exp_adams_run
from sasolver.coefficients import build_coefficient_table
from sasolver.errors import DimensionError, InsufficientHistory, InvalidEta, InvalidParams, NonVPSchedule
from sasolver.models import GaussianMixtureData, GMMOracle
from sasolver.schedules import NoiseSchedule, TimeGrid, make_time_grid
from sasolver.solver import (EvalBuffer, SolverConfig, ddim_solve, ddim_step, euler_maruyama_step, initial_state,
                             noise_param_onestep, sa_corrector_step, sa_predictor_step, sa_solve, step_noise)
from sasolver.stochasticity import TauSchedule, ddim_tau_schedule

COS = NoiseSchedule.vp_cosine()
VP = NoiseSchedule.vp_linear()
GMM = GaussianMixtureData([0.4, 0.6], [[-1.5, 0.5], [1.0, -0.5]], [0.2, 0.4])
AFFINE = GaussianMixtureData.gaussian([0.5, -1.0], 0.3, dim=2)


def test_eval_buffer():
    b = EvalBuffer(2)
    b.push(1.0, np.array([1.0]))
    b.push(0.5, np.array([2.0]))
    b.push(0.2, np.array([3.0]))
    assert len(b) == 2 and b.times() == [0.5, 0.2]
    assert [v[0] for v in b.newest(2)] == [3.0, 2.0]
    with pytest.raises(InsufficientHistory):
        b.newest(3)
    with pytest.raises(InvalidParams):
        b.push(0.9, np.array([0.0]))
    with pytest.raises(InvalidParams):
        EvalBuffer(0)


def test_solver_config_validation():
    with pytest.raises(InvalidParams):
        SolverConfig(predictor_steps=0)
    with pytest.raises(InvalidParams):
        SolverConfig(corrector_steps=-1)
    assert SolverConfig().to_dict()["coeff_mode"] == "quadrature"


@pytest.mark.parametrize("sp,sc", [(1, 0), (2, 0), (3, 0), (1, 1), (2, 2), (3, 3), (3, 1)])
def test_nfe_is_one_per_iteration(sp, sc):
    g = make_time_grid(COS, "uniform-lambda", 7)
    rec = sa_solve(GMMOracle(GMM, COS), COS, TauSchedule.constant(0.5), g, SolverConfig(sp, sc, seed=1), batch=3)
    assert rec.nfe_count == 1 + g.M
    assert rec.final_state.shape == (3, 2)
    assert np.all(np.isfinite(rec.final_state))


def test_single_step_grid_runs_any_config():
    g = TimeGrid("uniform-t", [COS.T, COS.t_eps])
    rec = sa_solve(GMMOracle(GMM, COS), COS, TauSchedule.zero(), g, SolverConfig(3, 3), batch=2)
    assert rec.nfe_count == 2


def test_shared_xi_between_predictor_and_corrector(monkeypatch):
    seen = []
    orig_p, orig_c, orig_noise = solver_mod.sa_predictor_step, solver_mod.sa_corrector_step, solver_mod.step_noise
    draws = []

    def p(x, buf, c, xi, noise=None):
        seen.append(("p", id(xi)))
        return orig_p(x, buf, c, xi, noise)

    def c(x, ev, buf, co, xi, noise=None):
        seen.append(("c", id(xi)))
        return orig_c(x, ev, buf, co, xi, noise)

    def n(*args):
        out = orig_noise(*args)
        draws.append(args[1])
        return out

    monkeypatch.setattr(solver_mod, "sa_predictor_step", p)
    monkeypatch.setattr(solver_mod, "sa_corrector_step", c)
    monkeypatch.setattr(solver_mod, "step_noise", n)
    g = make_time_grid(COS, "uniform-t", 5)
    sa_solve(GMMOracle(GMM, COS), COS, TauSchedule.constant(1.0), g, SolverConfig(2, 2, seed=3), batch=2)
    assert draws == [1, 2, 3, 4, 5]
    assert len(seen) == 10
    for k in range(0, 10, 2):
        assert seen[k][0] == "p" and seen[k + 1][0] == "c" and seen[k][1] == seen[k + 1][1]


def test_corrector_uses_predicted_point_evaluation():
    buf = EvalBuffer(3)
    buf.push(1.0, np.array([[1.0]]))
    buf.push(0.5, np.array([[2.0]]))
    from sasolver.coefficients import StepCoefficients, CoeffMode
    co = StepCoefficients(0.5, (0.1, 0.2, 0.3), 0.0, CoeffMode.QUADRATURE)
    out = sa_corrector_step(np.array([[4.0]]), np.array([[10.0]]), buf, co, None)
    assert out[0, 0] == pytest.approx(0.5 * 4 + 0.1 * 10 + 0.2 * 2 + 0.3 * 1)
    pr = StepCoefficients(0.5, (0.2, 0.3), 0.7, CoeffMode.QUADRATURE)
    out = sa_predictor_step(np.array([[4.0]]), buf, pr, np.array([[1.0]]))
    assert out[0, 0] == pytest.approx(0.5 * 4 + 0.2 * 2 + 0.3 * 1 + 0.7)


def test_determinism_and_batch_independence():
    g = make_time_grid(COS, "edm", 12)
    model = GMMOracle(GMM, COS)
    cfg = SolverConfig(3, 2, seed=9)
    ts = TauSchedule.constant(1.0)
    a = sa_solve(model, COS, ts, g, cfg, batch=6).final_state
    b = sa_solve(model, COS, ts, g, cfg, batch=6).final_state
    assert np.array_equal(a, b)
    lo = sa_solve(model, COS, ts, g, cfg, batch=2).final_state
    hi = sa_solve(model, COS, ts, g, cfg, batch=4, sample_offset=2).final_state
    np.testing.assert_allclose(np.vstack([lo, hi]), a, rtol=1e-15, atol=0)
    c = sa_solve(model, COS, ts, g, SolverConfig(3, 2, seed=10), batch=6).final_state
    assert not np.allclose(a, c)


def test_initial_state_scale_for_ve():
    ve = NoiseSchedule.ve()
    x = initial_state(ve, ve.T, 0, np.arange(20000), 1)
    assert np.std(x) == pytest.approx(80.0, rel=0.03)
    z = step_noise(0, 1, np.arange(20000), 1)
    assert abs(np.mean(z)) < 0.03 and np.std(z) == pytest.approx(1.0, rel=0.03)


def test_dimension_mismatch():
    g = make_time_grid(COS, "uniform-t", 3)
    with pytest.raises(DimensionError):
        sa_solve(GMMOracle(GMM, COS), COS, TauSchedule.zero(), g, SolverConfig(), x_init=np.zeros((2, 3)))


def test_trajectory_stride():
    g = make_time_grid(COS, "uniform-t", 7)
    rec = sa_solve(GMMOracle(GMM, COS), COS, TauSchedule.zero(), g,
                   SolverConfig(2, 0, record_trajectory=True, trajectory_stride=3), batch=2)
    np.testing.assert_array_equal(rec.trajectory_times, g.times[[0, 3, 6, 7]])
    assert rec.trajectory.shape == (4, 2, 2)
    np.testing.assert_array_equal(rec.trajectory[-1], rec.final_state)


def test_coupled_noise_injection_matches_xi_path():
    g = make_time_grid(COS, "uniform-t", 6)
    ts = TauSchedule.constant(1.0)
    model = GMMOracle(GMM, COS)
    cfg = SolverConfig(2, 1, seed=4)
    table = build_coefficient_table(COS, ts, g, 2, 1)
    rows = np.arange(3)
    x0 = initial_state(COS, g.times[0], 4, rows, 2)
    ref = sa_solve(model, COS, ts, g, cfg, x_init=x0, table=table).final_state
    inject = lambda i: table.predictor[i - 1].noise_std * step_noise(4, i, rows, 2)
    got = sa_solve(model, COS, ts, g, cfg, x_init=x0, noise_fn=inject, table=table).final_state
    np.testing.assert_allclose(got, ref, rtol=1e-14, atol=1e-14)
    again = sa_solve(model, COS, ts, g, cfg, x_init=x0, noise_fn=inject, table=table).final_state
    assert np.array_equal(got, again)


# -- reductions -------------------------------------------------------------------


@pytest.mark.parametrize("eta", [0.0, 0.3, 1.0])
@pytest.mark.parametrize("sched", [VP, COS], ids=["vp-linear", "vp-cosine"])
def test_ddim_equivalence(eta, sched):
    g = make_time_grid(sched, "uniform-t", 15)
    model = GMMOracle(GMM, sched)
    x0 = initial_state(sched, g.times[0], 2, np.arange(5), 2)
    ddim = ddim_solve(model, sched, g, eta, x0, seed=2, record_trajectory=True)
    rec = sa_solve(model, sched, ddim_tau_schedule(sched, g, eta), g,
                   SolverConfig(1, 0, seed=2, record_trajectory=True), x_init=x0)
    assert np.max(np.abs(rec.trajectory - ddim)) <= 1e-10


def test_ddim_errors():
    ve = NoiseSchedule.ve()
    with pytest.raises(NonVPSchedule):
        ddim_step(np.zeros((1, 1)), np.zeros((1, 1)), 0.5, ve, 0.5, 0.4, np.zeros((1, 1)))
    with pytest.raises(InvalidEta):
        ddim_step(np.zeros((1, 1)), np.zeros((1, 1)), -0.5, COS, 0.5, 0.4, np.zeros((1, 1)))


@pytest.mark.parametrize("sp,sc", [(2, 0), (1, 1), (2, 2), (3, 3), (3, 0)])
def test_tau0_matches_exponential_adams_oracle(sp, sc):
    data = GaussianMixtureData.gaussian([0.5], 0.3, dim=1)
    model = GMMOracle(data, VP)
    g = make_time_grid(VP, "uniform-lambda", 12)
    x0 = np.array([[0.7], [-1.3]])
    got = sa_solve(model, VP, TauSchedule.zero(), g, SolverConfig(sp, sc), x_init=x0).final_state
    want = exp_adams_run(model, VP, g, x0, sp, sc)
    np.testing.assert_allclose(got, want, rtol=0, atol=1e-10)


def test_euler_maruyama_step_formula_and_consistency():
    ts = TauSchedule.constant(0.0)
    model = GMMOracle(GMM, COS)
    x = np.array([[0.3, -0.2]])
    ti, tn = 0.6, 0.59
    em = euler_maruyama_step(x, model.score(x, ti), COS, ts, ti, tn, np.zeros_like(x))
    drift = COS.f(ti) * x - 0.5 * COS.g2(ti) * model.score(x, ti)
    np.testing.assert_allclose(em, x + drift * (tn - ti), rtol=1e-14)
    # fine EM on the probability-flow ODE approaches the high-order solver
    g_fine = make_time_grid(COS, "uniform-t", 4000)
    y = x.copy()
    for i in range(g_fine.M):
        t0, t1 = g_fine.times[i], g_fine.times[i + 1]
        y = euler_maruyama_step(y, model.score(y, t0), COS, ts, t0, t1, np.zeros_like(y))
    g = make_time_grid(COS, "uniform-lambda", 60)
    ref = sa_solve(model, COS, ts, g, SolverConfig(3, 3), x_init=x).final_state
    np.testing.assert_allclose(y, ref, atol=5e-3)


def test_noise_param_onestep_reduces_to_ddim_at_tau0():
    model = GMMOracle(GMM, COS)
    x = np.random.default_rng(0).normal(size=(4, 2))
    ti, tn = 0.7, 0.45
    xi = np.zeros_like(x)
    a = noise_param_onestep(x, model(x, ti), COS, TauSchedule.zero(), ti, tn, xi)
    b = ddim_step(x, model(x, ti), 0.0, COS, ti, tn, xi)
    np.testing.assert_allclose(a, b, rtol=1e-13, atol=1e-14)
