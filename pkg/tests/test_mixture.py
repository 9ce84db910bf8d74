import numpy as np
import pytest

from guided_inpaint.contracts import UnsupportedCapability, denoiser_input_vjp
from guided_inpaint.mixture import (
    GaussianMixtureModel,
    MixtureClassifier,
    MixtureDenoiser,
    MixtureError,
    ScoreOnlyDenoiser,
    mixture_classifier_grad,
    mixture_classifier_logprob,
    mixture_eps_vjp,
    mixture_posterior_x0,
    mixture_predict_eps,
)
from guided_inpaint.sampler import predict_x0
from guided_inpaint.schedule import build_linear_schedule


def central_diff(f, x, h=1e-6):
    """Central-difference gradient of scalar f at x, elementwise."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = g.reshape(-1)
    xf = x.reshape(-1)
    for i in range(xf.size):
        e = np.zeros_like(xf)
        e[i] = h
        flat[i] = (f((xf + e).reshape(x.shape)) - f((xf - e).reshape(x.shape))) / (2 * h)
    return g


class TestPosterior:
    def test_symmetry_forces_zero(self, gmm_1d, sched250):
        for t in (1, 50, 250):
            post = mixture_posterior_x0(np.array([0.0]), t, gmm_1d, sched250)
            assert abs(post[0]) < 1e-12

    def test_low_noise_concentrates(self, gmm_1d):
        sched = build_linear_schedule(1, 1e-4, 1e-4)  # alpha_bar = 0.9999
        post = mixture_posterior_x0(np.array([1.0]), 1, gmm_1d, sched)
        assert abs(post[0] - 1.0) < 1e-3

    def test_single_component_shrinkage(self, sched250):
        gmm = GaussianMixtureModel(np.array([1.0]), np.zeros((1, 3)), np.array([1.0]))
        rng = np.random.default_rng(1)
        for t in (1, 100, 250):
            x = rng.normal(size=3)
            expected = np.sqrt(sched250.alpha_bar_at(t)) * x
            np.testing.assert_allclose(
                mixture_posterior_x0(x, t, gmm, sched250), expected, rtol=1e-12
            )

    def test_round_trip_with_eps(self, gmm_3c, sched250):
        rng = np.random.default_rng(2)
        for t in (1, 60, 130, 250):
            x = rng.normal(size=2)
            eps = mixture_predict_eps(x, t, gmm_3c, sched250)
            x0 = predict_x0(x, t, eps, sched250)
            np.testing.assert_allclose(
                x0, mixture_posterior_x0(x, t, gmm_3c, sched250), atol=1e-10
            )

    def test_batched_matches_loop(self, gmm_2d, sched250):
        rng = np.random.default_rng(3)
        xs = rng.normal(size=(7, 2))
        batch = mixture_posterior_x0(xs, 90, gmm_2d, sched250)
        single = np.stack([mixture_posterior_x0(x, 90, gmm_2d, sched250) for x in xs])
        np.testing.assert_array_equal(batch, single)

    def test_rejects_bad_inputs(self, gmm_1d, sched250):
        with pytest.raises(MixtureError):
            mixture_posterior_x0(np.array([0.0]), 0, gmm_1d, sched250)
        with pytest.raises(MixtureError):
            mixture_posterior_x0(np.array([0.0]), 251, gmm_1d, sched250)
        with pytest.raises(MixtureError):
            mixture_posterior_x0(np.zeros(3), 5, gmm_1d, sched250)


class TestPredictEps:
    def test_single_component_closed_form(self, sched250):
        gmm = GaussianMixtureModel(np.array([1.0]), np.zeros((1, 2)), np.array([1.0]))
        rng = np.random.default_rng(4)
        for t in (1, 125, 250):
            x = rng.normal(size=2)
            abar = sched250.alpha_bar_at(t)
            np.testing.assert_allclose(
                mixture_predict_eps(x, t, gmm, sched250),
                np.sqrt(1 - abar) * x,
                rtol=1e-10,
            )

    def test_on_manifold_point_is_noiseless(self, sched250):
        gmm = GaussianMixtureModel(
            np.array([1.0]), np.array([[0.4, -0.7]]), np.array([1e-8])
        )
        t = 100
        x = np.sqrt(sched250.alpha_bar_at(t)) * gmm.means[0]
        eps = mixture_predict_eps(x, t, gmm, sched250)
        assert np.max(np.abs(eps)) < 1e-6

    def test_var_head_is_lower_bound(self, gmm_1d, sched250):
        den = MixtureDenoiser(gmm_1d, sched250)
        v = den.predict_var_v(np.array([0.3]), 10)
        np.testing.assert_array_equal(v, [-1.0])


class TestClassifier:
    def test_symmetric_midpoint(self, gmm_1d):
        assert mixture_classifier_logprob(np.array([0.0]), 0, gmm_1d) == pytest.approx(
            np.log(0.5), abs=1e-12
        )

    def test_own_mean_is_certain(self, gmm_1d):
        # separation 20 sigma: the other responsibility is negligible
        lp = mixture_classifier_logprob(np.array([1.0]), 1, gmm_1d)
        assert lp <= 0.0
        assert np.exp(lp) == pytest.approx(1.0, abs=1e-12)

    def test_gradient_matches_finite_differences(self, gmm_3c):
        rng = np.random.default_rng(5)
        for _ in range(34):  # 34 x 3 labels: > 100 probes of the surface
            x = rng.normal(scale=0.8, size=2)
            for y in range(gmm_3c.K):
                an = mixture_classifier_grad(x, y, gmm_3c)
                fd = central_diff(lambda v: mixture_classifier_logprob(v, y, gmm_3c), x)
                np.testing.assert_allclose(an, fd, rtol=1e-6, atol=1e-9)

    def test_probabilities_sum_to_one(self, gmm_3c):
        rng = np.random.default_rng(6)
        clf = MixtureClassifier(gmm_3c)
        for _ in range(10):
            x = rng.normal(size=2)
            total = sum(np.exp(mixture_classifier_logprob(x, y, gmm_3c)) for y in range(3))
            assert total == pytest.approx(1.0, abs=1e-6)
            ranked = clf.top_k(x, 3)
            assert sorted(l for l, _ in ranked) == [0, 1, 2]
            probs = [p for _, p in ranked]
            assert probs == sorted(probs, reverse=True)

    def test_bayes_brute_force_oracle(self, gmm_3c):
        """Posterior must equal direct density computation within 1e-10."""
        rng = np.random.default_rng(7)
        d = 2
        for _ in range(25):
            x = rng.normal(size=d)
            dens = np.array(
                [
                    w * np.exp(-np.sum((x - m) ** 2) / (2 * s**2)) / (2 * np.pi * s**2) ** (d / 2)
                    for w, m, s in zip(gmm_3c.weights, gmm_3c.means, gmm_3c.sigmas)
                ]
            )
            bayes = dens / dens.sum()
            for y in range(3):
                got = np.exp(mixture_classifier_logprob(x, y, gmm_3c))
                assert got == pytest.approx(bayes[y], abs=1e-10)

    def test_unknown_label(self, gmm_1d):
        with pytest.raises(MixtureError):
            mixture_classifier_logprob(np.array([0.0]), 2, gmm_1d)


class TestVJP:
    def test_zero_cotangent(self, gmm_2d, sched250):
        x = np.array([0.2, -0.4])
        out = mixture_eps_vjp(x, 40, np.zeros(2), gmm_2d, sched250)
        np.testing.assert_array_equal(out, np.zeros(2))

    def test_linearity(self, gmm_3c, sched250):
        rng = np.random.default_rng(8)
        den = MixtureDenoiser(gmm_3c, sched250)
        for _ in range(20):
            x = rng.normal(size=2)
            u, v = rng.normal(size=2), rng.normal(size=2)
            a, b = rng.normal(), rng.normal()
            lhs = den.input_vjp(x, 77, a * u + b * v)
            rhs = a * den.input_vjp(x, 77, u) + b * den.input_vjp(x, 77, v)
            np.testing.assert_allclose(lhs, rhs, rtol=1e-8, atol=1e-12)

    def test_matches_finite_differences(self, gmm_3c, sched250):
        rng = np.random.default_rng(9)
        for t in (3, 80, 150, 200):
            for _ in range(25):  # 100 probes total
                x = rng.normal(size=2)
                u = rng.normal(size=2)
                an = mixture_eps_vjp(x, t, u, gmm_3c, sched250)
                fd = central_diff(
                    lambda v: float(mixture_predict_eps(v, t, gmm_3c, sched250) @ u), x
                )
                np.testing.assert_allclose(an, fd, rtol=1e-4, atol=1e-8)

    def test_stop_gradient_mode(self, gmm_2d, sched250):
        den = MixtureDenoiser(gmm_2d, sched250)
        u = np.array([1.0, 2.0])
        out = denoiser_input_vjp(den, np.array([0.1, 0.2]), 50, u, stop_grad=True)
        np.testing.assert_array_equal(out, np.zeros(2))

    def test_unsupported_capability(self, gmm_2d, sched250):
        den = ScoreOnlyDenoiser(gmm_2d, sched250)
        with pytest.raises(UnsupportedCapability):
            denoiser_input_vjp(den, np.array([0.1, 0.2]), 50, np.ones(2))


class TestSerialization:
    def test_json_round_trip(self, gmm_3c, tmp_path):
        path = tmp_path / "gmm.json"
        gmm_3c.save(path)
        back = GaussianMixtureModel.load(path)
        np.testing.assert_array_equal(back.weights, gmm_3c.weights)
        np.testing.assert_array_equal(back.means, gmm_3c.means)
        np.testing.assert_array_equal(back.sigmas, gmm_3c.sigmas)

    def test_invalid_construction(self):
        with pytest.raises(MixtureError):
            GaussianMixtureModel(np.array([0.7, 0.7]), np.zeros((2, 1)), np.ones(2))
        with pytest.raises(MixtureError):
            GaussianMixtureModel(np.array([0.5, 0.5]), np.zeros((2, 1)), np.array([1.0, 0.0]))
