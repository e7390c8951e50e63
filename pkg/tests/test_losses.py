import numpy as np
import pytest

from avae.discriminator import DiscModel
from avae.generator import VaeModel
from avae.losses import composite_losses, discriminator_loss, forward_losses, generator_loss
from avae.models import TrainConfig
from avae.tensor import Tensor

from conftest import tiny_model

PARTS = dict(L_e=0.6, L_n=0.3, L_d=1.0, L_g=0.2, L_v=0.1, L_s=0.4)


class TestCompositeLosses:
    def test_hand_values(self):
        L_dis, L_gen, L_enc = composite_losses(k=0.5, config=TrainConfig(alpha=0.3, beta=0.1, gamma=0.1), **PARTS)
        assert L_dis == pytest.approx(0.885, abs=1e-12)
        assert L_gen == pytest.approx(0.33, abs=1e-12)
        assert L_enc == pytest.approx(0.40, abs=1e-12)

    def test_cold_start(self):
        assert discriminator_loss(1.0, 0.2, 0.1, 0.0, TrainConfig()) == 1.0

    def test_pure_distribution_matching(self):
        config = TrainConfig(alpha=0.3, beta=0.0, gamma=0.0)
        assert generator_loss(0.6, 0.2, 0.1, 0.4, config) == 0.2 + 0.3 * 0.1

    def test_tensor_inputs(self):
        parts = {name: Tensor(np.array(value), dtype=np.float64) for name, value in PARTS.items()}
        L_dis, L_gen, L_enc = composite_losses(k=0.5, config=TrainConfig(), **parts)
        assert L_dis.item() == pytest.approx(0.885, abs=1e-12)
        assert L_gen.item() == pytest.approx(0.33, abs=1e-12)
        assert L_enc.item() == pytest.approx(0.40, abs=1e-12)


class TestForwardLosses:
    def setup_method(self):
        model = tiny_model()
        rng = np.random.default_rng(0)
        self.vae = VaeModel.create(model, seed=0)
        self.disc = DiscModel.create(model, seed=0)
        self.x = Tensor(rng.uniform(size=(3, 1, 8, 8)))
        self.epsilon = rng.standard_normal((3, 4))
        self.z_g = Tensor(rng.standard_normal((3, 4)))

    def run(self, k: float = 0.5):
        return forward_losses(self.vae, self.disc, self.x, self.epsilon, self.z_g, k, TrainConfig())

    def test_losses_non_negative(self):
        out = self.run()
        for name in ("L_e", "L_n", "L_d", "L_g", "L_v", "L_s"):
            assert getattr(out, name).item() >= 0.0

    def test_generator_losses_leave_discriminator_gradients_alone(self):
        out = self.run()
        out.L_gen.backward(inputs=self.vae.decoder.parameters())
        assert all(p.grad is None for p in self.disc.parameters())
        assert all(p.grad is None for p in self.vae.encoder.parameters())
        assert any(np.any(p.grad) for p in self.vae.decoder.parameters())

    def test_discriminator_loss_depends_on_k(self):
        assert self.run(k=0.0).L_dis.item() == pytest.approx(self.run(k=0.0).L_d.item(), abs=0)
        assert self.run(k=0.5).L_dis.item() < self.run(k=0.0).L_dis.item()
