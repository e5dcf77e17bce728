import numpy as np
import pytest
from scipy import integrate

from sasolver.errors import DimensionError, InvalidParams
from sasolver.models import (GaussianMixtureData, GMMOracle, data_predict_gmm, exact_marginal_cdf,
                             exact_marginal_quantile, gmm_score, perturb_model)
from sasolver.schedules import NoiseSchedule

S = NoiseSchedule.vp_cosine()
BIMODAL = GaussianMixtureData([0.3, 0.7], [[-2.0], [1.5]], [0.25, 0.5])


def _posterior_mean_by_quadrature(g, s, x, t):
    a, sig = s.alpha(t), s.sigma(t)

    def prior(x0):
        return sum(w * np.exp(-0.5 * (x0 - m[0]) ** 2 / v) / np.sqrt(2 * np.pi * v)
                   for w, m, v in zip(g.weights, g.means, g.variances))

    def lik(x0):
        return np.exp(-0.5 * (x - a * x0) ** 2 / sig**2)

    num = integrate.quad(lambda u: u * prior(u) * lik(u), -15, 15, limit=400, epsabs=1e-14)[0]
    den = integrate.quad(lambda u: prior(u) * lik(u), -15, 15, limit=400, epsabs=1e-14)[0]
    return num / den


@pytest.mark.parametrize("t", [0.1, 0.5, 0.9])
@pytest.mark.parametrize("x", [-3.0, 0.2, 2.5])
def test_posterior_mean_against_numerical_integration(t, x):
    got = data_predict_gmm(BIMODAL, S, np.array([[x]]), t)[0, 0]
    assert got == pytest.approx(_posterior_mean_by_quadrature(BIMODAL, S, x, t), rel=1e-8, abs=1e-10)


def test_tweedie_identity():
    rng = np.random.default_rng(0)
    g = GaussianMixtureData([0.5, 0.5], [[-1.0, 0.5], [2.0, -1.0]], [0.3, 0.8])
    x = rng.normal(size=(50, 2))
    for t in (0.2, 0.7):
        a, sig = S.alpha(t), S.sigma(t)
        lhs = data_predict_gmm(g, S, x, t)
        rhs = (x + sig**2 * gmm_score(g, S, x, t)) / a
        np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-12)


def test_single_gaussian_is_affine_and_matches_general_path():
    g1 = GaussianMixtureData.gaussian([0.5, -1.0], 0.3, dim=2)
    g2 = GaussianMixtureData([0.5, 0.5], [[0.5, -1.0], [0.5, -1.0]], [0.3, 0.3])
    rng = np.random.default_rng(2)
    x, y = rng.normal(size=(2, 8, 2))
    t = 0.4
    np.testing.assert_allclose(data_predict_gmm(g1, S, x, t), data_predict_gmm(g2, S, x, t), rtol=1e-13)
    f = lambda z: data_predict_gmm(g1, S, z, t)
    np.testing.assert_allclose(f(0.3 * x + 0.7 * y), 0.3 * f(x) + 0.7 * f(y), rtol=1e-12, atol=1e-14)
    assert GMMOracle(g1, S).is_affine and not GMMOracle(BIMODAL, S).is_affine


def test_far_tail_is_finite():
    out = data_predict_gmm(BIMODAL, S, np.array([[1e4], [-1e4]]), 0.05)
    assert np.all(np.isfinite(out))


def test_dimension_checks():
    with pytest.raises(DimensionError):
        data_predict_gmm(BIMODAL, S, np.zeros((3, 2)), 0.5)
    with pytest.raises(InvalidParams):
        GaussianMixtureData([0.4, 0.4], [[0.0], [1.0]], [1.0, 1.0])
    with pytest.raises(InvalidParams):
        GaussianMixtureData([1.0], [[0.0]], [0.0])


def test_marginal_cdf_and_quantile():
    t = 0.6
    u = np.linspace(0.01, 0.99, 25)
    q = exact_marginal_quantile(BIMODAL, S, t, u)
    np.testing.assert_allclose(exact_marginal_cdf(BIMODAL, S, t, q), u, atol=1e-13)
    # Monte Carlo check of the marginal itself
    rng = np.random.default_rng(5)
    x0 = BIMODAL.sample(rng, 200_000)
    xt = S.alpha(t) * x0 + S.sigma(t) * rng.standard_normal(x0.shape)
    emp = np.mean(xt[:, 0] <= 0.3)
    assert emp == pytest.approx(exact_marginal_cdf(BIMODAL, S, t, 0.3), abs=5e-3)


def test_perturbed_model():
    base = GMMOracle(BIMODAL, S)
    x = np.linspace(-2, 2, 7)[:, None]
    zero = perturb_model(base, 0.0, 3)
    assert np.array_equal(zero(x, 0.4), base(x, 0.4))
    p = perturb_model(base, 0.5, 3)
    a, sig = S.alpha(0.4), S.sigma(0.4)
    shift = (p(x, 0.4) - base(x, 0.4)) * a / sig**2
    np.testing.assert_allclose(shift, 0.5 * np.sin(p.omega * x + p.phi), rtol=1e-10, atol=1e-12)
    assert np.max(np.abs(shift)) <= 0.5 + 1e-12
    p2 = perturb_model(base, 0.5, 3)
    np.testing.assert_array_equal(p.omega, p2.omega)
    assert 0.5 <= p.omega[0] <= 2.0
    with pytest.raises(InvalidParams):
        perturb_model(base, -1.0, 0)
