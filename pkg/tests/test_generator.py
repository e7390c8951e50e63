import numpy as np
import pytest
from scipy import integrate
from scipy.stats import norm

from avae.errors import DimensionError
from avae.generator import GaussianParams, VaeModel, data_loss, kl_loss, reparametrize, sample_prior
from avae.gradcheck import grad_check
from avae.models import ModelConfig
from avae.tensor import Tensor, l1_mean, precision
from avae.utils import as_tensor

from conftest import tiny_model


def gaussian(mu, log_var) -> GaussianParams:
    return GaussianParams(
        mu=Tensor(np.atleast_2d(mu), dtype=np.float64),
        log_var=Tensor(np.atleast_2d(log_var), dtype=np.float64),
    )


def integrated_kl(mu: float, sigma: float) -> float:
    """KL(N(mu, sigma^2) || N(0, 1)) by quadrature."""
    def integrand(x):
        log_p = norm.logpdf(x, mu, sigma)
        return np.exp(log_p) * (log_p - norm.logpdf(x))

    value, _ = integrate.quad(integrand, mu - 20 * sigma, mu + 20 * sigma, epsabs=1e-10, epsrel=1e-10, limit=200)
    return value


class TestEncode:
    def test_zero_heads_give_standard_gaussian(self):
        vae = VaeModel.create(tiny_model(), seed=0)
        vae.encoder.mu_head.zero_()
        vae.encoder.log_var_head.zero_()
        g = vae.encode(Tensor(np.random.default_rng(0).uniform(size=(3, 1, 8, 8))))
        assert not g.mu.data.any()
        assert not g.log_var.data.any()

    def test_deterministic(self):
        x = Tensor(np.random.default_rng(1).uniform(size=(2, 1, 8, 8)))
        a = VaeModel.create(tiny_model(), seed=4).encode(x)
        b = VaeModel.create(tiny_model(), seed=4).encode(x)
        np.testing.assert_array_equal(a.mu.data, b.mu.data)
        np.testing.assert_array_equal(a.log_var.data, b.log_var.data)

    def test_distinct_images_distinct_means(self):
        vae = VaeModel.create(tiny_model(), seed=0)
        g = vae.encode(Tensor(np.random.default_rng(2).uniform(size=(2, 1, 8, 8))))
        assert not np.array_equal(g.mu.data[0], g.mu.data[1])

    def test_wrong_size(self):
        vae = VaeModel.create(tiny_model(), seed=0)
        with pytest.raises(DimensionError):
            vae.encode(Tensor(np.zeros((1, 1, 16, 16))))

    @pytest.mark.parametrize("size,widths", [(8, (2, 3, 3)), (16, (2, 3, 4)), (32, (2, 2, 2, 2))])
    def test_round_trip_shape(self, size, widths):
        config = ModelConfig(image_size=size, channels=3, latent_dim=5, widths=widths)
        vae = VaeModel.create(config, seed=0)
        x = Tensor(np.random.default_rng(0).uniform(size=(2, 3, size, size)))
        out = vae.decode(reparametrize(vae.encode(x), rng=0).z)
        assert out.shape == x.shape


class TestReparametrize:
    def test_zero_noise_gives_mean(self):
        g = gaussian([[0.5, -1.0]], [[0.3, 0.2]])
        np.testing.assert_array_equal(reparametrize(g, epsilon=np.zeros((1, 2))).z.data, g.mu.data)

    def test_unit_gaussian_passes_noise(self):
        e = np.array([[0.25, -1.75]])
        g = gaussian([[0.0, 0.0]], [[0.0, 0.0]])
        np.testing.assert_array_equal(reparametrize(g, epsilon=e).z.data, e)

    def test_monte_carlo_moments(self):
        n = 100_000
        g = gaussian(np.ones((n, 1)), np.full((n, 1), np.log(4.0)))
        z = reparametrize(g, rng=0).z.data
        assert z.mean() == pytest.approx(1.0, abs=0.02)
        assert z.std() == pytest.approx(2.0, abs=0.02)

    def test_gradient_reaches_mean_and_log_var_only(self):
        mu = Tensor([[0.2]], requires_grad=True, dtype=np.float64)
        log_var = Tensor([[0.0]], requires_grad=True, dtype=np.float64)
        sample = reparametrize(GaussianParams(mu=mu, log_var=log_var), epsilon=np.array([[2.0]]))
        sample.z.sum().backward()
        assert mu.grad[0, 0] == 1.0
        assert log_var.grad[0, 0] == pytest.approx(1.0)

    def test_epsilon_shape_mismatch(self):
        with pytest.raises(DimensionError):
            reparametrize(gaussian([[0.0, 0.0]], [[0.0, 0.0]]), epsilon=np.zeros((1, 3)))


class TestDecode:
    def test_deterministic(self):
        vae = VaeModel.create(tiny_model(), seed=0)
        z = sample_prior(3, 4, seed=1)
        np.testing.assert_array_equal(vae.decode(z).data, vae.decode(z).data)

    def test_zero_output_layer_gives_half_grey(self):
        vae = VaeModel.create(tiny_model(), seed=0)
        vae.decoder.zero_output_()
        out = vae.decode(sample_prior(2, 4, seed=0))
        np.testing.assert_array_equal(out.data, np.full(out.shape, 0.5, dtype=np.float32))

    def test_width_mismatch(self):
        vae = VaeModel.create(tiny_model(), seed=0)
        with pytest.raises(DimensionError):
            vae.decode(Tensor(np.zeros((1, 5))))

    def test_latent_gradient(self):
        with precision(np.float64):
            vae = VaeModel.create(ModelConfig(image_size=8, channels=1, latent_dim=4, widths=(2, 3, 3), init_std=0.5), seed=0)
            rng = np.random.default_rng(3)
            z = Tensor(rng.normal(size=(1, 4)), requires_grad=True)
            target = Tensor(rng.uniform(size=(1, 1, 8, 8)))
            error = grad_check(lambda: l1_mean(vae.decode(z), target), [z])
        assert error < 1e-4


class TestLosses:
    def test_data_loss_values(self):
        ones = Tensor(np.ones((2, 1, 4, 4)))
        assert data_loss(ones, ones).item() == 0.0
        assert data_loss(ones, Tensor(np.zeros((2, 1, 4, 4)))).item() == 1.0

    def test_data_loss_permutation(self):
        rng = np.random.default_rng(0)
        x, y = rng.uniform(size=(2, 48)), rng.uniform(size=(2, 48))
        order = rng.permutation(48)
        a = data_loss(Tensor(x, dtype=np.float64), Tensor(y, dtype=np.float64)).item()
        b = data_loss(Tensor(x[:, order], dtype=np.float64), Tensor(y[:, order], dtype=np.float64)).item()
        assert a == pytest.approx(b, abs=1e-15)

    def test_kl_hand_values(self):
        assert kl_loss(gaussian([[0.0]], [[0.0]])).item() == 0.0
        assert kl_loss(gaussian([[1.0]], [[0.0]])).item() == pytest.approx(0.5, abs=1e-12)
        assert kl_loss(gaussian([[0.0]], [[np.log(4.0)]])).item() == pytest.approx(0.5 * (4.0 - np.log(4.0) - 1.0), abs=1e-12)

    def test_kl_matches_quadrature(self):
        rng = np.random.default_rng(11)
        for mu, sigma in zip(rng.uniform(-2.0, 2.0, 50), rng.uniform(0.3, 3.0, 50)):
            closed = kl_loss(gaussian([[mu]], [[2.0 * np.log(sigma)]])).item()
            assert closed == pytest.approx(integrated_kl(mu, sigma), abs=1e-6)

    def test_kl_non_negative(self):
        rng = np.random.default_rng(12)
        g = gaussian(rng.normal(size=(8, 6)), rng.uniform(-3, 3, size=(8, 6)))
        assert kl_loss(g).item() >= 0.0

    def test_kl_sums_dims_and_averages_batch(self):
        g = gaussian([[1.0, 1.0], [0.0, 0.0]], [[0.0, 0.0], [0.0, 0.0]])
        assert kl_loss(g).item() == pytest.approx(0.5, abs=1e-12)


class TestSamplePrior:
    def test_same_seed(self):
        np.testing.assert_array_equal(sample_prior(4, 3, seed=9).data, sample_prior(4, 3, seed=9).data)

    def test_different_seeds(self):
        assert not np.array_equal(sample_prior(4, 3, seed=1).data, sample_prior(4, 3, seed=2).data)

    def test_moments(self):
        with precision(np.float64):
            z = sample_prior(100_000, 2, seed=0).data
        np.testing.assert_allclose(z.mean(axis=0), 0.0, atol=0.02)
        np.testing.assert_allclose(z.var(axis=0), 1.0, atol=0.02)

    def test_rejects_empty(self):
        with pytest.raises(DimensionError):
            sample_prior(0, 4)

    def test_accepts_generator(self):
        a = sample_prior(2, 3, seed=np.random.default_rng(5)).data
        b = sample_prior(2, 3, seed=5).data
        np.testing.assert_array_equal(a, b)


def test_as_tensor_uses_current_precision():
    with precision(np.float64):
        assert as_tensor(np.zeros(2, dtype=np.float32)).dtype == np.float64
