import numpy as np
import pytest

from odisvi.dispersion import init_dispersion
from odisvi.estimator import (
    _weights,
    bbvi_gradient,
    control_variate_coeff,
    f_term,
    f_terms,
    obbvi_gradient,
    sample_variance_summary,
    GradEstimate,
)
from odisvi.expfam import FamilyKind, WeightOverflowError, family, random_stream
from odisvi.models import DEFHyper, GNTSModel, PoissonDEF, ToyData, ToyHyper, ToyModel, gnts_generate


def toy_params(model, mean, var):
    return {"mu": np.tile([mean, var], (model.replicas, 1)).astype(float)}


def tau_map(model, *taus):
    return {g.name: np.broadcast_to(np.array(taus, dtype=float), g.shape + (len(taus),)).copy() for g in model.groups}


def assert_same_estimate(a: GradEstimate, b: GradEstimate):
    for name in a.grad:
        np.testing.assert_array_equal(a.grad[name], b.grad[name])
        np.testing.assert_array_equal(a.variance[name], b.variance[name])


def within_se(estimates, target, k=3.0):
    """Componentwise |mean - target| < k SE over the replica axis (axis 0)."""
    mean = estimates.mean(axis=0)
    se = estimates.std(axis=0, ddof=1) / np.sqrt(estimates.shape[0])
    return np.abs(mean - target) < k * se, mean, se


# ---------------------------------------------------------------- f term


def test_f_term_vanishes_when_score_does():
    model = PoissonDEF(np.ones((2, 3)), DEFHyper(L=2, K=2))
    params = model.initial_params()
    params["z1"][..., 0] = 2.0
    z0 = model.sample_q(params, random_stream(0))
    n = model.latent_id("z1", (0, 1))
    np.testing.assert_array_equal(f_term(model, params, n, 2.0, z0), [0.0])


def test_f_term_single_latent_equals_global_definition():
    model = ToyModel()
    params = toy_params(model, 0.4, 0.7)
    fam = family(FamilyKind.GaussianMeanVar)
    for value in (-0.5, 1.2, 3.0):
        z = {"mu": np.array([value])}
        expected = fam.score(params["mu"][0], value) * (model.log_joint(z) - model.log_q(params, z))
        np.testing.assert_allclose(f_term(model, params, 0, value, z), expected, rtol=1e-13)


def test_f_mean_matches_analytic_elbo_gradient():
    model = ToyModel()
    params = toy_params(model, 0.5, 0.6)
    fam = family(FamilyKind.GaussianMeanVar)
    values = fam.sample(np.broadcast_to(params["mu"], (10**5, 1, 2)), random_stream(1))
    f, _, _ = f_terms(model, "mu", params["mu"], values, {"mu": values[0]})
    ok, mean, se = within_se(f[:, 0], model.elbo_grad(0.5, 0.6))
    assert ok.all(), (mean, se)


# ---------------------------------------------------------------- unbiasedness


def test_bbvi_unbiased_on_toy():
    model = ToyModel(replicas=10**5)
    params = toy_params(model, 0.3, 0.5)
    g = bbvi_gradient(model, params, 8, random_stream(2))
    ok, mean, se = within_se(g.grad["mu"], model.elbo_grad(0.3, 0.5))
    assert ok.all(), (mean, se)


@pytest.mark.parametrize("tau", [1.5, 2.0, 3.0])
def test_obbvi_unbiased_on_toy(tau):
    model = ToyModel(replicas=10**5)
    params = toy_params(model, 0.3, 0.5)
    g = obbvi_gradient(model, params, tau_map(model, tau), 8, random_stream(3), keep_batches=False)
    ok, mean, se = within_se(g.grad["mu"], model.elbo_grad(0.3, 0.5))
    assert ok.all(), (mean, se)


def test_bbvi_zero_at_optimum():
    model = ToyModel(replicas=10**5)
    m, v = model.posterior()
    g = bbvi_gradient(model, toy_params(model, m, v), 8, random_stream(4))
    # q equals the posterior: f is the score times a constant and the control
    # variate cancels it, leaving only rounding noise
    mean = g.grad["mu"].mean(axis=0)
    se = g.grad["mu"].std(axis=0, ddof=1) / np.sqrt(model.replicas)
    assert np.all(np.abs(mean) < 3 * se + 1e-12), (mean, se)
    np.testing.assert_allclose(model.elbo_grad(m, v), 0.0, atol=1e-12)


def test_bbvi_matches_finite_difference_of_elbo():
    model = ToyModel(ToyData(np.zeros(0)), ToyHyper(0.0, 1.0, 1.0))  # target N(0, 1)
    mean, var, h = 1.0, 1.0, 1e-5
    fd = np.array(
        [
            (model.elbo(mean + h, var) - model.elbo(mean - h, var)) / (2 * h),
            (model.elbo(mean, var + h) - model.elbo(mean, var - h)) / (2 * h),
        ]
    )
    g = bbvi_gradient(model, toy_params(model, mean, var), 10**5, random_stream(5))
    # the variance component is exactly 0 at var = 1, so the 1% is taken of |grad|
    np.testing.assert_allclose(g.grad["mu"][0], fd, rtol=0, atol=0.01 * np.linalg.norm(fd))


# ---------------------------------------------------------------- degeneracy


def small_gnts():
    data, _ = gnts_generate(3, 4, 2, 2, rng=np.random.default_rng(0))
    return GNTSModel(data, 2)


@pytest.mark.parametrize("make", [ToyModel, small_gnts, lambda: PoissonDEF(np.arange(12.0).reshape(3, 4) % 3, DEFHyper(L=2, K=2))])
def test_obbvi_at_unit_tau_is_bbvi(make):
    model = make()
    params = model.initial_params()
    a = bbvi_gradient(model, params, 8, random_stream(6))
    b = obbvi_gradient(model, params, tau_map(model, 1.0), 8, random_stream(6))
    assert_same_estimate(a, b)


@pytest.mark.parametrize("tau", [1.0, 2.5])
def test_equal_mixture_components_match_single_proposal(tau):
    model = small_gnts()
    params = model.initial_params()
    a = obbvi_gradient(model, params, tau_map(model, tau), 8, random_stream(7))
    b = obbvi_gradient(model, params, tau_map(model, tau, tau), 8, random_stream(7))
    assert_same_estimate(a, b)


def test_threads_do_not_change_output():
    model = small_gnts()
    params = model.initial_params()
    disp = init_dispersion(model, 2)
    a = obbvi_gradient(model, params, disp, 8, random_stream(8), threads=1)
    b = obbvi_gradient(model, params, disp, 8, random_stream(8), threads=3)
    assert_same_estimate(a, b)
    c = bbvi_gradient(model, params, 8, random_stream(8), threads=1)
    d = bbvi_gradient(model, params, 8, random_stream(8), threads=3)
    assert_same_estimate(c, d)


# ---------------------------------------------------------------- variance


def test_overdispersion_reduces_variance_for_poor_fit():
    # target N(0, 1), q = N(3, 1): the mean sits three standard deviations off
    model = ToyModel(ToyData(np.zeros(0)), replicas=200)
    params = toy_params(model, 3.0, 1.0)
    v_bbvi = bbvi_gradient(model, params, 8, random_stream(9)).variance["mu"].mean(axis=-1)
    v_obbvi = obbvi_gradient(model, params, tau_map(model, 2.0), 8, random_stream(10)).variance["mu"].mean(axis=-1)
    assert np.median(v_obbvi) < np.median(v_bbvi)


def test_control_variates_do_not_increase_variance():
    rng = np.random.default_rng(11)
    fam = family(FamilyKind.GaussianMeanVar)
    R, S = 2000, 8
    for _ in range(50):
        x = rng.normal(rng.uniform(-2, 2), 1.0, size=int(rng.integers(1, 6)))
        model = ToyModel(ToyData(x), ToyHyper(0.0, rng.uniform(0.5, 2), rng.uniform(0.5, 2)), replicas=R)
        params = toy_params(model, rng.uniform(-2, 2), rng.uniform(0.3, 2))
        theta = np.broadcast_to(params["mu"], (S,) + params["mu"].shape)
        f, h, _ = f_terms(model, "mu", params["mu"], fam.sample(theta, rng), None)
        f_cv, h_cv, _ = f_terms(model, "mu", params["mu"], fam.sample(theta, rng), None)
        a = np.stack([control_variate_coeff(f_cv[:, r], h_cv[:, r]) for r in range(R)])
        with_cv = (f - a * h).mean(axis=0)  # (R, 2) estimates
        plain = f.mean(axis=0)
        diff = with_cv.var(axis=0, ddof=1) - plain.var(axis=0, ddof=1)
        boot = []
        for _ in range(200):
            i = rng.integers(R, size=R)
            boot.append(with_cv[i].var(axis=0, ddof=1) - plain[i].var(axis=0, ddof=1))
        assert np.all(diff <= 3 * np.std(boot, axis=0))


def test_mixture_weights_have_unit_mean():
    model = ToyModel(replicas=20000)
    params = toy_params(model, 0.5, 0.8)
    g = obbvi_gradient(model, params, tau_map(model, 1.0, 3.0), 8, random_stream(12))
    w = np.exp(g.batches["mu"].log_w).ravel()
    assert abs(w.mean() - 1) < 3 * w.std(ddof=1) / np.sqrt(w.size)


def test_ess_bounds():
    model = small_gnts()
    g = obbvi_gradient(model, model.initial_params(), init_dispersion(model, 2), 8, random_stream(13))
    for ess in g.ess.values():
        assert np.all(ess > 0) and np.all(ess <= 8 + 1e-12)


def test_component_assignment_is_deterministic():
    model = small_gnts()
    g = obbvi_gradient(model, model.initial_params(), init_dispersion(model, 2), 8, random_stream(14))
    np.testing.assert_array_equal(g.batches["z"].component, [0, 0, 0, 0, 1, 1, 1, 1])


def test_sample_count_must_divide_by_components():
    model = ToyModel()
    with pytest.raises(ValueError):
        obbvi_gradient(model, model.initial_params(), tau_map(model, 1.0, 3.0), 9, random_stream(0))
    with pytest.raises(ValueError):
        bbvi_gradient(model, model.initial_params(), 1, random_stream(0))


def test_weight_overflow_reports_location():
    fam = family(FamilyKind.GaussianMeanVar)
    theta = np.array([[0.0, 1.0], [0.0, 1.0]])
    taus = np.array([[2.0], [2.0]])
    theta_r = np.stack([fam.overdisperse(theta, taus[..., 0])])
    values = np.array([[0.0, 1e200]])
    with pytest.raises(WeightOverflowError) as info:
        _weights(fam, theta, theta_r, values, taus, "mu")
    assert "mu[1]" in str(info.value)
    assert info.value.z == 1e200
    np.testing.assert_array_equal(info.value.taus, [2.0])


# ---------------------------------------------------------------- control variate coefficient


def test_cv_coefficient_perfect_correlation():
    h = np.random.default_rng(0).normal(size=(50, 3))
    np.testing.assert_allclose(control_variate_coeff(2 * h, h), 2.0, rtol=1e-13)


def test_cv_coefficient_independent():
    rng = np.random.default_rng(1)
    a = control_variate_coeff(rng.normal(size=(10**5, 2)), rng.normal(size=(10**5, 2)))
    assert np.all(np.abs(a) < 4 / np.sqrt(10**5))


def test_cv_coefficient_noisy_regression():
    rng = np.random.default_rng(2)
    n, sigma = 1000, 0.1
    h = rng.normal(size=n)
    a = control_variate_coeff(3 * h + sigma * rng.normal(size=n), h)
    # OLS slope standard error is about sigma / (sd(h) sqrt(n))
    assert abs(a - 3) < 4 * sigma / np.sqrt(n)


def test_cv_coefficient_degenerate_variance():
    np.testing.assert_array_equal(control_variate_coeff(np.arange(5.0), np.ones(5)), 0.0)


def test_cv_coefficient_needs_two_samples():
    with pytest.raises(ValueError):
        control_variate_coeff(np.ones((1, 2)), np.ones((1, 2)))


# ---------------------------------------------------------------- summary


def test_variance_summary_examples():
    g = GradEstimate(grad={}, variance={"a": np.full((2, 2), 0.7)}, ess={})
    assert sample_variance_summary(g) == pytest.approx(0.7)
    g = GradEstimate(grad={}, variance={"a": np.array([0.0]), "b": np.array([2.0])}, ess={})
    assert sample_variance_summary(g) == 1.0


def test_variance_summary_recomputed_from_raw_terms():
    model = ToyModel(ToyData(np.array([0.5, 1.0])), replicas=3)
    params = toy_params(model, 0.2, 0.9)
    g = obbvi_gradient(model, params, tau_map(model, 2.0), 8, random_stream(15))
    b = g.batches["mu"]
    # redo the estimator from the stored draws: the CV set comes second in the stream
    w = np.exp(b.log_w)[..., None]
    rng = random_stream(15)
    model.sample_q(params, rng)
    gen = rng.spawn(1)[0]
    fam = family(FamilyKind.GaussianMeanVar)
    theta_r = fam.overdisperse(params["mu"], 2.0)
    values = fam.sample(np.broadcast_to(theta_r, (8, 3, 2)), gen)
    np.testing.assert_array_equal(values, b.values)
    values_cv = fam.sample(np.broadcast_to(theta_r, (8, 3, 2)), gen)
    f_cv, h_cv, _ = f_terms(model, "mu", params["mu"], values_cv, None)
    w_cv = np.exp(fam.log_density(params["mu"], values_cv) - fam.log_density(theta_r, values_cv))[..., None]
    a = control_variate_coeff(w_cv * f_cv, w_cv * h_cv)
    terms = w * b.f - a * w * b.h
    expected = np.mean(terms.var(axis=0, ddof=1) / 8)
    assert sample_variance_summary(g) == pytest.approx(expected, rel=1e-12)
