import math

import pytest

from avae.controller import (
    ControllerState,
    EquilibriumController,
    convergence_measure,
    diversity_ratio,
    error_signal,
    gains_for_mode,
    initial_state,
    peak_overshoot,
    settling_step,
    simulate_integrating_plant,
    update_k,
)
from avae.errors import NumericError
from avae.models import TrainConfig

PLANT_STEPS = 3000


def state(**overrides) -> ControllerState:
    return ControllerState(**overrides)


class TestErrorSignal:
    def test_equilibrium(self):
        assert error_signal(1.0, 0.47, 0.1, state(eta=0.5, alpha=0.3)) == pytest.approx(0.0, abs=1e-12)

    def test_hand_value(self):
        assert error_signal(1.0, 0.2, 0.1, state(eta=0.5, alpha=0.3)) == pytest.approx(0.27, abs=1e-12)

    def test_homogeneous(self):
        s = state(eta=0.5, alpha=0.3)
        assert error_signal(2.0, 0.4, 0.2, s) == pytest.approx(2 * error_signal(1.0, 0.2, 0.1, s), abs=1e-12)

    def test_literal_sign(self):
        s = state(eta=0.5, alpha=0.3, literal_error_sign=True)
        assert error_signal(1.0, 0.2, 0.1, s) == pytest.approx(0.33, abs=1e-12)

    def test_non_finite(self):
        with pytest.raises(NumericError):
            error_signal(math.nan, 0.2, 0.1, state())


class TestUpdateK:
    def test_hand_value(self):
        new = update_k(0.27, state(k=0.0, lambda1=1e-3, lambda2=1e-5, lambda3=1e-5))
        assert new.k == pytest.approx(2.754e-4, abs=1e-12)
        assert (new.e_prev, new.e_prev2) == (0.27, 0.0)

    def test_zero_error_keeps_k(self):
        assert update_k(0.0, state(k=0.4)).k == 0.4

    def test_clamped_at_one(self):
        assert update_k(1e6, state(k=1.0)).k == 1.0

    def test_clamped_at_zero(self):
        assert update_k(-1e6, state(k=0.2)).k == 0.0

    def test_zero_gains_freeze_k(self):
        s = state(k=0.3, lambda1=0.0, lambda2=0.0, lambda3=0.0)
        for e in (5.0, -2.0, 0.7):
            s = update_k(e, s)
            assert s.k == 0.3

    def test_history_shift(self):
        s = update_k(1.0, state())
        s = update_k(2.0, s)
        assert (s.e_prev, s.e_prev2) == (2.0, 1.0)


class TestDiagnostics:
    def test_diversity_ratio(self):
        assert diversity_ratio(0.2, 0.1, 0.5, 0.3) == pytest.approx(0.46, abs=1e-12)
        assert diversity_ratio(0.0, 0.0, 0.5, 0.3) == 0.0
        assert diversity_ratio(0.35, 0.5, 0.5, 0.3) == pytest.approx(1.0, abs=1e-12)

    def test_diversity_ratio_zero_denominator(self):
        with pytest.raises(NumericError):
            diversity_ratio(0.2, 0.1, 0.0, 0.3)

    def test_convergence_measure(self):
        assert convergence_measure(0.0, 0.0, 0.0, 0.5, 0.3) == 0.0
        assert convergence_measure(1.0, 0.2, 0.1, 0.5, 0.3) == pytest.approx(1.27, abs=1e-12)
        assert convergence_measure(1.0, 0.9, 0.3, 0.5, 0.3) >= 1.0


class TestModes:
    def test_gains(self):
        assert gains_for_mode("pid", 1.0, 2.0, 3.0) == (1.0, 2.0, 3.0)
        assert gains_for_mode("integral", 1.0, 2.0, 3.0) == (1.0, 0.0, 0.0)
        assert gains_for_mode("proportional", 1.0, 2.0, 3.0) == (1.0, 2.0, 0.0)

    def test_initial_state(self):
        s = initial_state(TrainConfig(k0=0.25, controller_mode="integral"))
        assert s.k == 0.25
        assert (s.lambda2, s.lambda3) == (0.0, 0.0)
        assert (s.e_prev, s.e_prev2) == (0.0, 0.0)


class TestEquilibriumController:
    def test_first_step(self):
        controller = EquilibriumController(TrainConfig())
        step = controller.step(1.0, 0.2, 0.1)
        assert step.k_prev == 0.0
        assert step.e_t == pytest.approx(0.27, abs=1e-12)
        assert step.k_t == pytest.approx(2.754e-4, abs=1e-12)
        assert step.M == pytest.approx(1.27, abs=1e-12)
        assert step.ratio == pytest.approx(0.23, abs=1e-12)
        assert controller.k == step.k_t

    def test_fixed_eta_by_default(self):
        controller = EquilibriumController(TrainConfig(eta=0.5))
        for _ in range(5):
            controller.step(1.0, 0.3, 0.2)
        assert controller.state.eta == 0.5

    def test_adaptive_eta_follows_running_ratio(self):
        controller = EquilibriumController(TrainConfig(adaptive_eta=True, eta_decay=0.5))
        step = controller.step(1.0, 0.2, 0.1)
        assert step.eta == pytest.approx(0.23, abs=1e-12)
        assert step.e_t == pytest.approx(0.0, abs=1e-12)
        step = controller.step(1.0, 0.6, 0.0)
        # running means: L_d 1.0, L_g 0.4, L_v 0.05
        assert step.eta == pytest.approx(0.415, abs=1e-12)

    def test_adaptive_eta_clamped(self):
        controller = EquilibriumController(TrainConfig(adaptive_eta=True))
        assert controller.step(0.1, 0.5, 0.5).eta == 1.0

    def test_state_dict_round_trip(self):
        a = EquilibriumController(TrainConfig())
        for losses in ((1.0, 0.2, 0.1), (0.8, 0.3, 0.2), (0.9, 0.1, 0.4)):
            a.step(*losses)
        b = EquilibriumController(TrainConfig())
        b.load_state_dict(a.state_dict())
        assert a.step(0.7, 0.2, 0.2) == b.step(0.7, 0.2, 0.2)

    def test_non_finite_loss(self):
        with pytest.raises(NumericError):
            EquilibriumController(TrainConfig()).step(1.0, math.inf, 0.0)


class TestIntegratingPlant:
    """Gains are the default 1e-3, 1e-5, 1e-5 scaled by 100."""

    def pid(self):
        return simulate_integrating_plant(state(k=0.5, lambda1=0.1, lambda2=1e-3, lambda3=1e-3, eta=0.5, alpha=0.3), PLANT_STEPS)

    def integral(self):
        return simulate_integrating_plant(state(k=0.5, lambda1=0.1, lambda2=0.0, lambda3=0.0, eta=0.5, alpha=0.3), PLANT_STEPS)

    def test_initial_error(self):
        assert self.pid().errors[0] == pytest.approx(1.0, abs=1e-12)

    def test_integral_only_oscillates(self):
        errors = self.integral().errors
        assert errors[:6] == pytest.approx([1.0, 0.0, -1.0, -1.0, 0.0, 1.0], abs=1e-9)
        assert settling_step(errors) is None

    def test_pid_settles_faster(self):
        pid_settle = settling_step(self.pid().errors)
        integral_settle = settling_step(self.integral().errors)
        assert pid_settle is not None
        assert integral_settle is None or pid_settle < integral_settle

    def test_pid_smaller_overshoot(self):
        pid = peak_overshoot(self.pid().errors)
        integral = peak_overshoot(self.integral().errors)
        assert pid == pytest.approx(0.9896, abs=1e-9)
        assert integral == pytest.approx(1.0, abs=1e-9)
        assert pid < integral

    def test_gain_stays_in_range(self):
        for trace in (self.pid(), self.integral()):
            assert all(0.0 <= k <= 1.0 for k in trace.gains)


class TestSettling:
    def test_never(self):
        assert settling_step([1.0, 0.5, 0.2]) is None

    def test_first_step_inside_band(self):
        assert settling_step([1.0, 0.5, 0.001, 0.0]) == 3

    def test_re_excursion(self):
        assert settling_step([1.0, 0.001, 0.5, 0.001]) == 4

    def test_overshoot(self):
        assert peak_overshoot([1.0, -0.3, 0.2]) == pytest.approx(0.3)
        assert peak_overshoot([-2.0, 0.5]) == pytest.approx(0.5)
        assert peak_overshoot([1.0, 0.5]) == 0.0
