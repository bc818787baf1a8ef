"""Integrator tests: hand-computed one-step oracles, sub-map identities,
deterministic chain behaviour and divergence reporting."""

import math

import numpy as np
import pytest

from sgmcmc.integrators import (
    DivergenceError,
    IntegratorConfig,
    IntegratorKind,
    SamplerConfig,
    State,
    run_chain,
    sghmc_aboba_step,
    sghmc_euler_step,
    sgld_step,
    sgnht_step,
)
from sgmcmc.models import GaussianConjugateModel, generate_dataset
from sgmcmc.schedules import StepSchedule

PRIOR_ONLY = GaussianConjugateModel(np.empty(0))  # grad U(theta) = theta


class ZeroGradient:
    """Stand-in model with identically vanishing gradient, for testing the
    friction sub-maps in isolation."""

    def grad_U(self, theta):
        return np.zeros_like(theta)

    def stoch_grad_U(self, theta, batch):
        return np.zeros_like(theta)


def aboba_oracle(theta, p, h, D, grad, zeta=0.0):
    """Independent composition of the five sub-maps (position half-drift,
    momentum half-decay, full kick with noise, half-decay, half-drift)."""
    theta1 = theta + p * h / 2.0
    p1 = math.exp(-D * h / 2.0) * p
    p2 = p1 - grad(theta1) * h + math.sqrt(2.0 * D * h) * zeta
    p_new = math.exp(-D * h / 2.0) * p2
    theta_new = theta1 + p_new * h / 2.0
    return theta_new, p_new


class TestZeroStepIdentity:
    def test_sgld(self):
        out = sgld_step(PRIOR_ONLY, State(theta=[0.4]), 0.0, None, np.array([1.3]))
        assert out.theta[0] == 0.4

    def test_sghmc_euler(self):
        out = sghmc_euler_step(PRIOR_ONLY, State(theta=[0.4], p=[-0.2]), 0.0, 5.0, None, np.array([1.3]))
        assert (out.theta[0], out.p[0]) == (0.4, -0.2)

    def test_sghmc_aboba(self):
        out = sghmc_aboba_step(PRIOR_ONLY, State(theta=[0.4], p=[-0.2]), 0.0, 5.0, None, np.array([1.3]))
        assert (out.theta[0], out.p[0]) == (0.4, -0.2)

    def test_sgnht(self):
        out = sgnht_step(PRIOR_ONLY, State(theta=[0.4], p=[-0.2], xi=3.0), 0.0, 5.0, None, np.array([1.3]))
        assert (out.theta[0], out.p[0], out.xi) == (0.4, -0.2, 3.0)


class TestSgldStep:
    def test_pure_drift(self):
        # data [0.0] makes grad U(theta) = 2*theta, so grad at theta=1 is 2
        model = GaussianConjugateModel(np.array([0.0]))
        out = sgld_step(model, State(theta=[1.0]), 0.1, None, np.zeros(1))
        assert out.theta[0] == pytest.approx(0.8, rel=1e-14)

    def test_pure_noise(self):
        out = sgld_step(PRIOR_ONLY, State(theta=[0.0]), 0.04, None, np.array([1.5]))
        assert out.theta[0] == pytest.approx(math.sqrt(0.08) * 1.5, rel=1e-12)
        assert out.theta[0] == pytest.approx(0.4242640687119285, rel=1e-12)

    def test_momentum_state_rejected(self):
        with pytest.raises(ValueError):
            sgld_step(PRIOR_ONLY, State(theta=[0.0], p=[1.0]), 0.1, None, np.zeros(1))


class TestSghmcEulerStep:
    def test_frictionless_drift(self):
        out = sghmc_euler_step(PRIOR_ONLY, State(theta=[0.0], p=[1.0]), 0.2, 0.0, None, np.zeros(1))
        assert out.p[0] == pytest.approx(1.0, rel=1e-14)
        assert out.theta[0] == pytest.approx(0.2, rel=1e-14)

    def test_momentum_first_then_position(self):
        out = sghmc_euler_step(PRIOR_ONLY, State(theta=[1.0], p=[0.0]), 0.1, 10.0, None, np.zeros(1))
        assert out.p[0] == pytest.approx(-0.1, rel=1e-12)
        assert out.theta[0] == pytest.approx(0.99, rel=1e-12)


class TestSghmcAbobaStep:
    def test_frictionless_composition(self):
        out = sghmc_aboba_step(PRIOR_ONLY, State(theta=[0.0], p=[1.0]), 0.2, 0.0, None, np.zeros(1))
        assert out.p[0] == pytest.approx(0.98, rel=1e-12)
        assert out.theta[0] == pytest.approx(0.198, rel=1e-12)

    def test_composition_with_friction(self):
        out = sghmc_aboba_step(PRIOR_ONLY, State(theta=[0.0], p=[1.0]), 0.2, 10.0, None, np.zeros(1))
        theta_ref, p_ref = aboba_oracle(0.0, 1.0, 0.2, 10.0, lambda t: t)
        assert out.theta[0] == pytest.approx(theta_ref, rel=1e-12)
        assert out.p[0] == pytest.approx(p_ref, rel=1e-12)
        # the exact composition: p2 = exp(-1) - 0.02, then decay and half drift
        assert out.p[0] == pytest.approx(0.12797769, abs=1e-7)
        assert out.theta[0] == pytest.approx(0.11279777, abs=1e-7)

    def test_random_states_match_oracle_with_noise(self):
        rng = np.random.default_rng(8)
        for _ in range(50):
            th, p, z = rng.standard_normal(3)
            h = float(rng.uniform(0.0, 0.5))
            friction = float(rng.uniform(0.0, 20.0))
            out = sghmc_aboba_step(PRIOR_ONLY, State(theta=[th], p=[p]), h, friction, None, np.array([z]))
            theta_ref, p_ref = aboba_oracle(th, p, h, friction, lambda t: t, zeta=z)
            assert out.theta[0] == pytest.approx(theta_ref, rel=1e-12, abs=1e-12)
            assert out.p[0] == pytest.approx(p_ref, rel=1e-12, abs=1e-12)

    def test_reduces_to_position_verlet_without_friction(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            th, p = rng.standard_normal(2)
            h = float(rng.uniform(0.0, 0.3))
            out = sghmc_aboba_step(PRIOR_ONLY, State(theta=[th], p=[p]), h, 0.0, None, np.zeros(1))
            theta1 = th + p * h / 2.0
            p_v = p - h * theta1  # grad U = theta for the prior-only model
            theta_v = theta1 + p_v * h / 2.0
            assert out.theta[0] == pytest.approx(theta_v, abs=1e-14)
            assert out.p[0] == pytest.approx(p_v, abs=1e-14)

    def test_momentum_decay_exact(self):
        # with a vanishing gradient the two half decays compose to exp(-D h)
        out = sghmc_aboba_step(ZeroGradient(), State(theta=[0.7], p=[1.3]), 0.25, 4.0, None, np.zeros(1))
        half = math.exp(-0.5 * 4.0 * 0.25)
        assert out.p[0] == half * (half * 1.3)  # same grouping as the two sub-maps
        assert out.p[0] == pytest.approx(math.exp(-1.0) * 1.3, rel=1e-14)


class TestSgnhtStep:
    def test_hand_values(self):
        out = sgnht_step(PRIOR_ONLY, State(theta=[0.0], p=[1.0], xi=1.0), 0.1, 0.0, None, np.zeros(1))
        assert out.p[0] == pytest.approx(0.9, rel=1e-12)
        assert out.theta[0] == pytest.approx(0.09, rel=1e-12)
        assert out.xi == pytest.approx(0.981, rel=1e-12)

    def test_thermostat_fixed_point_at_unit_temperature(self):
        out = sgnht_step(ZeroGradient(), State(theta=[0.0], p=[1.0], xi=0.0), 0.3, 0.0, None, np.zeros(1))
        assert out.p[0] == 1.0  # no friction, no gradient, no noise
        assert out.xi == 0.0

    def test_requires_thermostat(self):
        with pytest.raises(ValueError):
            sgnht_step(PRIOR_ONLY, State(theta=[0.0], p=[1.0]), 0.1, 1.0, None, np.zeros(1))


class TestEulerVsExponentialFriction:
    def test_first_order_agreement(self):
        # |(1 - D h) - exp(-D h)| / h^2 stays bounded away from 0 and infinity
        friction = 1.0
        for h in np.geomspace(1e-4, 1e-1, 16):
            euler = 1.0 - friction * h
            exact = math.exp(-friction * h)
            ratio = abs(euler - exact) / h**2
            assert 0.4 < ratio < 0.51


class TestRunChain:
    def make_config(self, kind, h, D=0.0, init=None, batch=None):
        return SamplerConfig(
            integrator=IntegratorConfig(kind, D),
            schedule=StepSchedule.fixed(h),
            batch_size=batch,
            init_state=init,
        )

    def test_single_zero_step_is_identity(self):
        init = State(theta=[1.7])
        cfg = self.make_config(IntegratorKind.SGLD_EULER, 0.0, init=init)
        trace = run_chain(PRIOR_ONLY, cfg, 1, rng_seed=0, record_phi=True)
        assert trace.L == 1
        assert trace.phi_trace[0] == pytest.approx(1.7**2, rel=1e-15)
        assert trace.phi_sum == trace.phi_trace[0]

    def test_same_seed_bit_identical(self):
        data = generate_dataset(1, 30, 0.0)
        model = GaussianConjugateModel(data)
        cfg = self.make_config(IntegratorKind.SGHMC_ABOBA, 0.01, D=5.0, batch=5)
        a = run_chain(model, cfg, 200, rng_seed=99, record_phi=True)
        b = run_chain(model, cfg, 200, rng_seed=99, record_phi=True)
        np.testing.assert_array_equal(a.phi_trace, b.phi_trace)
        assert a.phi_sum == b.phi_sum
        assert a.weighted_phi_sum == b.weighted_phi_sum

    def test_different_seeds_differ(self):
        cfg = self.make_config(IntegratorKind.SGLD_EULER, 0.001)
        a = run_chain(PRIOR_ONLY, cfg, 50, rng_seed=1)
        b = run_chain(PRIOR_ONLY, cfg, 50, rng_seed=2)
        assert a.phi_sum != b.phi_sum

    def test_divergence_reports_step_index(self):
        data = generate_dataset(2, 1000, 0.0)
        model = GaussianConjugateModel(data)  # curvature 1001: h=0.1 explodes
        cfg = self.make_config(IntegratorKind.SGHMC_EULER, 0.1, D=10.0)
        with pytest.raises(DivergenceError) as err:
            run_chain(model, cfg, 1000, rng_seed=0)
        assert err.value.step is not None
        assert err.value.trace.diverged_at == err.value.step
        # the trace never silently accumulated a non-finite value
        assert math.isfinite(err.value.trace.phi_sum)

    def test_weighted_accumulators_follow_schedule(self):
        sched = StepSchedule.power_decay(0.02, 0.5)
        cfg = SamplerConfig(
            integrator=IntegratorConfig(IntegratorKind.SGLD_EULER, 0.0), schedule=sched
        )
        trace = run_chain(PRIOR_ONLY, cfg, 100, rng_seed=4, record_phi=True)
        hs = sched.step_sizes(100)
        assert trace.S_L == pytest.approx(np.sum(hs), rel=1e-12)
        assert trace.weighted_phi_sum == pytest.approx(float(hs @ trace.phi_trace), rel=1e-12)

    def test_burn_in_excluded_from_accumulators(self):
        cfg = self.make_config(IntegratorKind.SGLD_EULER, 0.002)
        full = run_chain(PRIOR_ONLY, cfg, 30, rng_seed=5, record_phi=True)
        burned = run_chain(PRIOR_ONLY, cfg, 20, rng_seed=5, burn_in=10, record_phi=True)
        np.testing.assert_array_equal(burned.phi_trace, full.phi_trace[10:])

    def test_momentum_initialisation_drawn_for_momentum_kinds(self):
        cfg = self.make_config(IntegratorKind.SGNHT, 0.001, D=3.0)
        trace = run_chain(PRIOR_ONLY, cfg, 1, rng_seed=6)
        assert trace.L == 1  # xi was initialised to D internally; run completes

    def test_invalid_length(self):
        cfg = self.make_config(IntegratorKind.SGLD_EULER, 0.001)
        with pytest.raises(ValueError):
            run_chain(PRIOR_ONLY, cfg, 0, rng_seed=0)


class TestConfigTypes:
    def test_order_by_kind(self):
        assert IntegratorConfig(IntegratorKind.SGHMC_ABOBA, 1.0).order == 2
        assert IntegratorConfig(IntegratorKind.SGHMC_EULER, 1.0).order == 1
        assert IntegratorConfig(IntegratorKind.SGLD_EULER).order == 1
        assert IntegratorConfig(IntegratorKind.SGNHT, 1.0).order == 1

    def test_negative_friction_rejected(self):
        with pytest.raises(ValueError):
            IntegratorConfig(IntegratorKind.SGHMC_EULER, -1.0)

    def test_state_dimension_mismatch(self):
        with pytest.raises(ValueError):
            State(theta=[1.0, 2.0], p=[1.0])
