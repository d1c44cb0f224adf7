import numpy as np
import pytest
from scipy import special, stats

from nbpss.families import (
    WEIGHT_FLOOR,
    apply_link,
    eval_terms,
    family_names,
    get_family,
    invert_link,
    logscore,
)

from oracles import bivariate_normal_logpdf, fd_curvature, fd_gradient, zip_logpmf


def simulate(famname, rng, n):
    """Draw predictor values in moderate ranges and a matching response."""
    if famname == "gaussian":
        eta = rng.uniform(-2, 2, (n, 1))
        y = eta[:, 0] + rng.normal(size=n)
        return y, eta, {"sigma2": 1.3}
    if famname == "gaussian_locscale":
        eta = np.column_stack([rng.uniform(-2, 2, n), rng.uniform(-1.5, 1.5, n)])
        y = eta[:, 0] + np.exp(eta[:, 1] / 2) * rng.normal(size=n)
        return y, eta, None
    if famname == "poisson":
        eta = rng.uniform(-1.5, 2.0, (n, 1))
        y = rng.poisson(np.exp(eta[:, 0]))
        return y.astype(float), eta, None
    if famname == "zip":
        eta = np.column_stack([rng.uniform(-1.5, 2.0, n), rng.uniform(-2, 2, n)])
        pi = special.expit(eta[:, 1])
        y = np.where(rng.uniform(size=n) < pi, 0, rng.poisson(np.exp(eta[:, 0])))
        return y.astype(float), eta, None
    if famname == "bivariate_normal":
        eta = np.column_stack(
            [
                rng.uniform(-2, 2, n),
                rng.uniform(-2, 2, n),
                rng.uniform(-1, 1, n),
                rng.uniform(-1, 1, n),
                rng.uniform(-1.5, 1.5, n),
            ]
        )
        rho = eta[:, 4] / np.sqrt(1 + eta[:, 4] ** 2)
        z1 = rng.normal(size=n)
        z2 = rho * z1 + np.sqrt(1 - rho**2) * rng.normal(size=n)
        y = np.column_stack(
            [eta[:, 0] + np.exp(eta[:, 2]) * z1, eta[:, 1] + np.exp(eta[:, 3]) * z2]
        )
        return y, eta, None
    raise AssertionError(famname)


class TestDerivativesAgainstFiniteDifferences:
    @pytest.mark.parametrize("famname", family_names())
    def test_gradient(self, famname):
        rng = np.random.default_rng(100)
        fam = get_family(famname)
        y, eta, aux = simulate(famname, rng, 500)
        for k in range(fam.n_params):
            terms = eval_terms(fam, y, eta, k, aux=aux)
            g_fd = fd_gradient(lambda e: fam.logdens(y, e, aux=aux), eta, k)
            rel = np.abs(terms.grad - g_fd) / np.maximum(np.abs(terms.grad), 1e-3)
            assert rel.max() < 1e-5

    @pytest.mark.parametrize("famname", family_names())
    def test_curvature(self, famname):
        rng = np.random.default_rng(101)
        fam = get_family(famname)
        y, eta, aux = simulate(famname, rng, 500)
        for k in range(fam.n_params):
            terms = eval_terms(fam, y, eta, k, aux=aux)
            c_fd = fd_curvature(lambda e: fam.logdens(y, e, aux=aux), eta, k)
            rel = np.abs(terms.curvature - c_fd) / np.maximum(np.abs(terms.curvature), 1e-3)
            assert rel.max() < 1e-4


class TestDensityValues:
    def test_gaussian_matches_norm(self):
        fam = get_family("gaussian")
        y = np.array([0.0, 1.0, -2.0])
        eta = np.array([[0.5], [0.0], [1.0]])
        expected = stats.norm.logpdf(y, loc=eta[:, 0], scale=np.sqrt(2.0))
        np.testing.assert_allclose(fam.logdens(y, eta, aux={"sigma2": 2.0}), expected, atol=1e-12)

    def test_locscale_matches_norm(self):
        fam = get_family("gaussian_locscale")
        rng = np.random.default_rng(5)
        eta = np.column_stack([rng.normal(size=6), rng.normal(size=6)])
        y = rng.normal(size=6)
        expected = stats.norm.logpdf(y, loc=eta[:, 0], scale=np.exp(eta[:, 1] / 2))
        np.testing.assert_allclose(fam.logdens(y, eta), expected, atol=1e-12)

    def test_poisson_matches_pmf(self):
        fam = get_family("poisson")
        y = np.array([0.0, 3.0, 10.0])
        eta = np.array([[0.0], [1.0], [2.0]])
        expected = stats.poisson.logpmf(y.astype(int), np.exp(eta[:, 0]))
        np.testing.assert_allclose(fam.logdens(y, eta), expected, atol=1e-12)

    def test_zip_matches_high_precision_pmf(self):
        fam = get_family("zip")
        cases = [(0, 0.5, 0.3), (0, 8.0, 0.1), (2, 1.5, 0.6), (7, 4.0, 0.05)]
        y = np.array([c[0] for c in cases], dtype=float)
        lam = np.array([c[1] for c in cases])
        pi = np.array([c[2] for c in cases])
        eta = np.column_stack([np.log(lam), special.logit(pi)])
        expected = [zip_logpmf(*c) for c in cases]
        np.testing.assert_allclose(fam.logdens(y, eta), expected, rtol=1e-10)

    def test_zip_pmf_sums_to_one(self):
        fam = get_family("zip")
        lam, pi = 3.7, 0.25
        ys = np.arange(200, dtype=float)
        eta = np.tile([np.log(lam), special.logit(pi)], (200, 1))
        total = np.exp(fam.logdens(ys, eta)).sum()
        assert total == pytest.approx(1.0, abs=1e-12)

    def test_zip_zero_mass_stable_at_extreme_rates(self):
        fam = get_family("zip")
        eta = np.array([[60.0, 0.0], [-60.0, 0.0]])
        y = np.zeros(2)
        ld = fam.logdens(y, eta)
        assert np.all(np.isfinite(ld))
        # huge rate: zero can only come from the point mass (prob 1/2)
        assert ld[0] == pytest.approx(np.log(0.5), abs=1e-12)
        # tiny rate: both branches produce zeros with certainty
        assert ld[1] == pytest.approx(0.0, abs=1e-10)

    def test_bivariate_matches_multivariate_normal(self):
        fam = get_family("bivariate_normal")
        rng = np.random.default_rng(6)
        y, eta, _ = simulate("bivariate_normal", rng, 20)
        s1, s2 = np.exp(eta[:, 2]), np.exp(eta[:, 3])
        rho = eta[:, 4] / np.sqrt(1 + eta[:, 4] ** 2)
        expected = bivariate_normal_logpdf(y, eta[:, 0], eta[:, 1], s1, s2, rho)
        np.testing.assert_allclose(fam.logdens(y, eta), expected, rtol=1e-9)


class TestLinks:
    @pytest.mark.parametrize("famname", family_names())
    def test_round_trip(self, famname):
        fam = get_family(famname)
        rng = np.random.default_rng(7)
        eta_k = rng.uniform(-3, 3, 50)
        for k in range(fam.n_params):
            theta = apply_link(fam, k, eta_k)
            back = invert_link(fam, k, theta)
            np.testing.assert_allclose(back, eta_k, rtol=1e-9, atol=1e-9)

    def test_correlation_link_range(self):
        fam = get_family("bivariate_normal")
        eta_k = np.array([-50.0, -1.0, 0.0, 1.0, 50.0])
        rho = apply_link(fam, 4, eta_k)
        assert np.all(np.abs(rho) < 1.0)
        assert rho[2] == 0.0
        assert rho[3] == pytest.approx(1 / np.sqrt(2))


class TestWeights:
    @pytest.mark.parametrize("famname", family_names())
    def test_weights_positive_and_floored(self, famname):
        fam = get_family(famname)
        rng = np.random.default_rng(8)
        y, eta, aux = simulate(famname, rng, 300)
        for k in range(fam.n_params):
            w = eval_terms(fam, y, eta, k, aux=aux).weight
            assert np.all(w >= WEIGHT_FLOOR)
            assert np.all(np.isfinite(w))

    def test_locscale_variance_weight_is_expected_half(self):
        fam = get_family("gaussian_locscale")
        rng = np.random.default_rng(9)
        y, eta, _ = simulate("gaussian_locscale", rng, 50)
        np.testing.assert_allclose(eval_terms(fam, y, eta, 1).weight, 0.5)

    def test_zip_weight_positive_where_observed_curvature_negative(self):
        fam = get_family("zip")
        # y = 0 with a large rate makes the observed lambda-curvature negative
        eta = np.array([[2.5, 0.0]])
        y = np.zeros(1)
        terms = eval_terms(fam, y, eta, 0)
        assert terms.curvature[0] < 0
        assert terms.weight[0] > 0


class TestValidation:
    def test_poisson_rejects_bad_response(self):
        fam = get_family("poisson")
        with pytest.raises(ValueError):
            fam.check_response(np.array([1.0, -2.0]))
        with pytest.raises(ValueError):
            fam.check_response(np.array([1.5]))

    def test_bivariate_rejects_wrong_shape(self):
        fam = get_family("bivariate_normal")
        with pytest.raises(ValueError):
            fam.check_response(np.ones(10))

    def test_unknown_family(self):
        with pytest.raises(ValueError):
            get_family("weibull")

    def test_eta_column_mismatch(self):
        fam = get_family("zip")
        with pytest.raises(ValueError):
            fam.logdens(np.zeros(3), np.zeros((3, 1)))


def test_logscore_sums_logdens():
    fam = get_family("poisson")
    rng = np.random.default_rng(11)
    y, eta, _ = simulate("poisson", rng, 40)
    assert logscore(fam, y, eta) == pytest.approx(float(fam.logdens(y, eta).sum()))


def test_initial_intercepts_reasonable():
    rng = np.random.default_rng(12)
    for famname in family_names():
        fam = get_family(famname)
        y, eta, _ = simulate(famname, rng, 200)
        start = fam.initial_intercepts(y)
        assert start.shape == (fam.n_params,)
        assert np.all(np.isfinite(start))
