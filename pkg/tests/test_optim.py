import inspect
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from homeopt import errors, optim
from homeopt.optim import (HyperParams, OptimizerKind, init_state, preset,
                           step, stepsize_function, update_moments, with_tau)

K = OptimizerKind


def hp(**kw):
    kw.setdefault("eta", 1e-2)
    return HyperParams(**kw)


class TestHyperParams:
    def test_beta_ranges_enforced(self):
        with pytest.raises(errors.ValidationError):
            hp(beta1=1.0)
        with pytest.raises(errors.ValidationError):
            hp(beta2=0.0)

    def test_lam_below_inverse_eta(self):
        with pytest.raises(errors.ValidationError):
            HyperParams(eta=0.5, lam=2.0)
        HyperParams(eta=0.5, lam=1.9)  # fine

    def test_tau_positive(self):
        with pytest.raises(errors.ValidationError):
            hp(tau=0.0)
        assert hp(tau=math.inf).tau == math.inf

    def test_momentum_rate_derived(self):
        h = hp(eta=0.01, beta1=0.9)
        assert h.momentum_rate() == pytest.approx(10.0)
        assert hp(c=3.0).momentum_rate() == 3.0


class TestUpdateMoments:
    def test_first_step_bias_correction_exact(self):
        h = hp(beta1=0.9, beta2=0.99)
        g = np.array([1.0, -1.0])
        m_hat, v_hat, st1 = update_moments(init_state(2), g, h)
        np.testing.assert_array_equal(st1.m, (1.0 - 0.9) * g)
        np.testing.assert_array_equal(st1.v, (1.0 - 0.99) * g * g)
        # dividing out the same factor recovers g and g^2 bit-exactly
        np.testing.assert_array_equal(m_hat, g)
        np.testing.assert_array_equal(v_hat, g * g)
        assert st1.t == 1

    def test_zero_gradient_decays_moments(self):
        h = hp(beta1=0.8, beta2=0.7)
        state = init_state(2)
        _, _, state = update_moments(state, np.array([2.0, 4.0]), h)
        m_prev, v_prev = state.m.copy(), state.v.copy()
        _, _, state = update_moments(state, np.zeros(2), h)
        np.testing.assert_allclose(state.m, 0.8 * m_prev)
        np.testing.assert_allclose(state.v, 0.7 * v_prev)

    def test_two_step_recursion_frozen_values(self):
        # hand-unrolled with beta1 = beta2 = 0.5 and g = [2] twice:
        # m: 0 -> 1 -> 1.5; m_hat at t=2: 1.5/0.75 = 2.0
        h = hp(beta1=0.5, beta2=0.5)
        state = init_state(1)
        _, _, state = update_moments(state, np.array([2.0]), h)
        m_hat, v_hat, state = update_moments(state, np.array([2.0]), h)
        assert state.m[0] == 1.5
        assert m_hat[0] == 2.0
        assert state.v[0] == 3.0
        assert v_hat[0] == 4.0

    def test_nonfinite_gradient_rejected(self):
        with pytest.raises(errors.NumericBlowupError):
            update_moments(init_state(2), np.array([1.0, np.inf]), hp())

    def test_dim_mismatch_rejected(self):
        with pytest.raises(errors.DimensionError):
            update_moments(init_state(2), np.ones(3), hp())


class TestStepRules:
    def test_adam_srf_first_step_frozen_value(self):
        # hand evaluation at t=1: theta' = -eta * 1/(1 + eps)
        h = hp(eta=1e-2, beta1=0.9, beta2=0.99, eps=1e-7)
        theta, _, _ = step(K.ADAM_SRF, h, init_state(2), np.zeros(2),
                           np.array([1.0, 1.0]))
        np.testing.assert_array_equal(theta, [-0.0099999990000001] * 2)

    def test_sgd_rule(self):
        h = hp(eta=0.1)
        theta, _, rec = step(K.SGD, h, init_state(2), np.array([1.0, 1.0]),
                             np.array([2.0, -4.0]))
        np.testing.assert_allclose(theta, [0.8, 1.4])
        assert rec.step_norm == pytest.approx(np.linalg.norm([0.2, -0.4]))

    def test_sgdm_uses_uncorrected_momentum(self):
        h = hp(eta=0.1, beta1=0.9)
        theta, state, _ = step(K.SGDM, h, init_state(1), np.zeros(1),
                               np.array([1.0]))
        assert theta[0] == pytest.approx(-0.1 * 0.1)
        assert state.m[0] == pytest.approx(0.1)

    def test_sgdm_bc_matches_home_fallback_formula(self):
        h = hp(eta=0.05, beta1=0.9, lam=0.0)
        g = np.array([0.3, -0.2])
        theta0 = np.array([1.0, -1.0])
        t_bc, _, _ = step(K.SGDM_BC, h, init_state(2), theta0, g)
        np.testing.assert_allclose(t_bc, theta0 - 0.05 * g)  # m_hat = g at t=1

    def test_home_switch_fires_adaptive_on_tie(self):
        # min v_hat == tau must take the adaptive branch
        h = hp(eta=0.1, eps=0.0, tau=4.0, beta2=0.5)
        g = np.array([2.0])  # v_hat at t=1 is exactly 4.0
        theta, _, rec = step(K.HOME_ADAM, h, init_state(1), np.zeros(1), g)
        assert rec.switched_home == 0.0
        assert theta[0] == pytest.approx(-0.1 * (2.0 / 4.0))

    def test_home_switch_below_threshold_goes_home(self):
        h = hp(eta=0.1, eps=0.0, tau=4.5, beta2=0.5)
        g = np.array([2.0])
        theta, _, rec = step(K.HOME_ADAM, h, init_state(1), np.zeros(1), g)
        assert rec.switched_home == 1.0
        assert theta[0] == pytest.approx(-0.1 * 2.0)

    def test_ew_fraction_reported(self):
        h = hp(eta=0.1, eps=0.0, tau=2.0, beta2=0.5)
        g = np.array([1.0, 4.0])  # v_hat = [1, 16]: one below tau, one above
        theta, _, rec = step(K.HOME_ADAM_EW, h, init_state(2), np.zeros(2), g)
        assert rec.switched_home == 0.5
        np.testing.assert_allclose(theta, [-0.1 * 1.0, -0.1 * (4.0 / 16.0)])

    def test_nonfinite_update_reports_coordinate(self):
        h = hp(eta=0.1, eps=0.0)
        with pytest.raises(errors.NumericBlowupError) as exc:
            # v_hat = 0 in coordinate 1 makes the srf denominator zero
            step(K.ADAM_SRF, h, init_state(2), np.zeros(2),
                 np.array([1.0, 0.0]))
        assert exc.value.coordinate == 1

    def test_kind_hp_mismatch_errors(self):
        with pytest.raises(errors.ValidationError):
            step(K.HOME_ADAM, hp(tau=None), init_state(1), np.zeros(1),
                 np.ones(1))
        with pytest.raises(errors.ValidationError):
            step(K.ADAMW, hp(lam=0.0), init_state(1), np.zeros(1), np.ones(1))
        with pytest.raises(errors.ValidationError):
            step(K.ADAM, hp(lam=0.5), init_state(1), np.zeros(1), np.ones(1))
        with pytest.raises(errors.ValidationError):
            step(K.SGD, hp(lam=0.5), init_state(1), np.zeros(1), np.ones(1))

    def test_weight_decay_contracts_parameters(self):
        # with zero gradients the decay term acts alone: theta -> (1-eta*lam)*theta
        h = hp(eta=0.1, lam=0.5, eps=1e-8, tau=None)
        theta = np.array([2.0, -3.0])
        state = init_state(2)
        theta2, _, _ = step(K.ADAMW_SRF, h, state, theta, np.zeros(2))
        np.testing.assert_allclose(theta2, (1.0 - 0.1 * 0.5) * theta)
        assert np.linalg.norm(theta2) < np.linalg.norm(theta)

    def test_decay_family_smaller_norm_than_zero_decay(self):
        h_w = hp(eta=0.1, lam=0.3)
        h_a = hp(eta=0.1, lam=0.0)
        theta = np.array([1.5, -2.0])
        g = np.array([0.4, 0.1])
        t_w, _, _ = step(K.ADAMW_SRF, h_w, init_state(2), theta, g)
        t_a, _, _ = step(K.ADAM_SRF, h_a, init_state(2), theta, g)
        assert np.linalg.norm(t_w) <= np.linalg.norm(t_a)


class TestBoundedness:
    @given(st.integers(0, 10**6), st.floats(0.05, 0.95), st.floats(0.05, 0.95))
    def test_moment_norms_contract(self, seed, beta1, beta2):
        # if every ||g_t|| <= G then ||m_t|| <= G and (v_t)_j <= G^2
        rng = np.random.default_rng(seed)
        h = HyperParams(eta=1e-2, beta1=beta1, beta2=beta2)
        G = 2.0
        state = init_state(3)
        for _ in range(12):
            g = rng.normal(size=3)
            g = g / max(1.0, np.linalg.norm(g) / G)
            _, _, state = update_moments(state, g, h)
            assert np.linalg.norm(state.m) <= G + 1e-12
            assert (state.v <= G * G + 1e-12).all()


class TestStepsizeFunction:
    def test_home_adaptive_branch(self):
        np.testing.assert_allclose(
            stepsize_function([2.0, 3.0], "home", tau=1.0, eps=0.0),
            [0.5, 1.0 / 3.0])

    def test_home_fallback_branch(self):
        np.testing.assert_array_equal(
            stepsize_function([0.5, 3.0], "home", tau=1.0, eps=0.0),
            [1.0, 1.0])

    def test_identity_is_all_ones(self):
        np.testing.assert_array_equal(
            stepsize_function([0.0, 9.0, 1e9], "identity"), [1.0, 1.0, 1.0])

    def test_srf_and_sqrt(self):
        np.testing.assert_allclose(stepsize_function([4.0], "srf", eps=1.0),
                                   [0.2])
        np.testing.assert_allclose(stepsize_function([4.0], "sqrt", eps=1.0),
                                   [1.0 / 3.0])

    def test_zero_denominator_is_error(self):
        with pytest.raises(errors.ValidationError):
            stepsize_function([0.0, 1.0], "srf", eps=0.0)
        with pytest.raises(errors.ValidationError):
            stepsize_function([0.0], "sqrt", eps=0.0)

    def test_negative_vhat_rejected(self):
        with pytest.raises(errors.ValidationError):
            stepsize_function([-1.0], "identity")


class TestNoSquareRootInSrfPaths:
    def test_structural(self):
        # the square root belongs to the classic-denominator branch only
        src = inspect.getsource(optim.step)
        srf_region = src.split("OptimizerKind.ADAM_SRF", 1)[1]
        assert "sqrt" not in srf_region.split("theta_next = theta - hp.eta", 1)[0]
        assert "sqrt" not in inspect.getsource(stepsize_function).split(
            'if mode == "srf"', 1)[1].split('if mode == "sqrt"', 1)[0]


class TestPresets:
    def test_cifar_home_adamw(self):
        h = preset("cifar_vgg16", K.HOME_ADAMW)
        assert (h.eta, h.eps, h.beta1, h.beta2, h.lam) == \
            (1e-6, 1e-7, 0.9, 0.99, 1e-5)

    def test_wikitext2_adam_srf(self):
        h = preset("wikitext2_tf8", K.ADAM_SRF)
        assert (h.eta, h.eps, h.beta1, h.beta2, h.lam) == \
            (1e-6, 1e-5, 0.9, 0.999, 0.0)

    def test_tinyimagenet_sgdm(self):
        h = preset("tinyimagenet_resnet34", K.SGDM)
        assert h.eta == 4e-4
        assert h.beta1 == 0.9

    def test_adam_classic_eps(self):
        assert preset("cifar_vgg16", K.ADAM).eps == 1e-8

    def test_unknown_name_lists_valid(self):
        with pytest.raises(errors.ValidationError) as exc:
            preset("mnist_lenet", K.ADAM)
        assert "cifar_vgg16" in str(exc.value)

    def test_every_pair_constructs(self):
        for name in optim.preset_names():
            for kind in K:
                preset(name, kind)


class TestDeterminism:
    def test_step_bit_identical_on_identical_inputs(self):
        h = hp(eta=0.03, beta1=0.77, beta2=0.92, eps=1e-6, tau=0.5)
        rng = np.random.default_rng(0)
        theta = rng.normal(size=4)
        g = rng.normal(size=4)
        out1 = step(K.HOME_ADAM, h, init_state(4), theta, g)
        out2 = step(K.HOME_ADAM, h, init_state(4), theta, g)
        assert np.array_equal(out1[0], out2[0])
        assert np.array_equal(out1[1].m, out2[1].m)
        assert np.array_equal(out1[1].v, out2[1].v)

    def test_step_does_not_mutate_inputs(self):
        h = hp()
        theta = np.ones(3)
        state = init_state(3)
        step(K.ADAM_SRF, h, state, theta, np.full(3, 0.5))
        np.testing.assert_array_equal(theta, np.ones(3))
        np.testing.assert_array_equal(state.m, np.zeros(3))
        assert state.t == 0
