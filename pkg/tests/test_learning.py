"""
Test Suite for the samplers and the Q-learning simulator

Replayable randomness, behavior-chain checks, the sup-norm envelope and the
noise moment conditions
"""

import sys
import os
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import numpy as np
import pytest

from src.learning.samplers import (
    IidSampler,
    MarkovSampler,
    behavior_kernel,
    chain_period,
    derive_seed,
    stationary_distribution,
    step_uniforms,
    uniform_behavior,
)
from src.learning.simulator import (
    RecordOptions,
    noise_constant,
    qlearn_step_iid,
    qlearn_step_markov,
    recorded_ks,
    run_trajectory,
    sample_noise,
    simulate_runs,
    td_target_law,
)
from src.mdp.model import Mdp, bellman_optimality, random_mdp
from src.mdp.policies import StochasticPolicy
from src.utils.errors import ChainError, ConfigError, DimensionMismatchError


# ----------------------------------------------------------------------
# Samplers
# ----------------------------------------------------------------------

def test_step_uniforms_replay():
    full = step_uniforms(5, 100)
    tail = step_uniforms(5, 40, start=60)
    np.testing.assert_array_equal(full[60:], tail)


def test_derive_seed():
    assert derive_seed(12, 0) == 12
    assert derive_seed(12, 5) == 12 ^ 5
    assert len({derive_seed(7, i) for i in range(100)}) == 100


def test_stationary_distribution_two_states():
    pi = stationary_distribution(np.array([[0.9, 0.1], [0.5, 0.5]]))
    np.testing.assert_allclose(pi, [5.0 / 6.0, 1.0 / 6.0], atol=1e-14)


def test_stationary_rejects_bad_chains():
    with pytest.raises(ChainError):
        stationary_distribution(np.eye(2))
    flip = np.array([[0.0, 1.0], [1.0, 0.0]])
    assert chain_period(flip) == 2
    with pytest.raises(ChainError):
        stationary_distribution(flip)
    np.testing.assert_allclose(stationary_distribution(flip, require_aperiodic=False), [0.5, 0.5])


def test_markov_sampler_stationary_is_invariant(mdp_3x2):
    behavior = StochasticPolicy(np.array([[0.2, 0.8], [0.5, 0.5], [0.9, 0.1]]))
    sampler = MarkovSampler(mdp_3x2, behavior, seed=1)
    kernel = behavior_kernel(mdp_3x2, behavior)
    np.testing.assert_allclose(kernel.sum(axis=1), 1.0, atol=1e-14)
    np.testing.assert_allclose(sampler.stationary @ kernel, sampler.stationary, atol=1e-12)
    assert sampler.d_min > 0


def test_markov_sampler_dimension_checks(mdp_2x2):
    with pytest.raises(DimensionMismatchError):
        MarkovSampler(mdp_2x2, StochasticPolicy.uniform(3, 2))
    with pytest.raises(DimensionMismatchError):
        MarkovSampler(mdp_2x2, uniform_behavior(mdp_2x2), initial_coord=4)


def test_permutation_chain_is_visited_cyclically():
    """Deterministic s -> s + 1 transitions with a single action"""
    P = np.zeros((3, 1, 3))
    for s in range(3):
        P[s, 0, (s + 1) % 3] = 1.0
    mdp = Mdp(P, np.zeros((3, 1, 3)), 0.9)
    sampler = MarkovSampler(mdp, StochasticPolicy.uniform(3, 1), seed=0, require_aperiodic=False)
    record = run_trajectory('markov', mdp, sampler, 0.5, 9)
    np.testing.assert_array_equal(record.coords, [0, 1, 2, 0, 1, 2, 0, 1, 2])


def test_iid_sampler_from_state_behavior():
    behavior = StochasticPolicy(np.array([[0.25, 0.75], [0.5, 0.5]]))
    sampler = IidSampler.from_state_behavior(np.array([0.4, 0.6]), behavior)
    # pairs (0,0), (1,0), (0,1), (1,1)
    np.testing.assert_allclose(sampler.d, [0.1, 0.3, 0.3, 0.3], atol=1e-15)


# ----------------------------------------------------------------------
# Simulator
# ----------------------------------------------------------------------

def test_step_functions_agree_with_engine(mdp_2x2, q_star_2x2):
    d = np.array([0.1, 0.2, 0.3, 0.4])
    record = run_trajectory('iid', mdp_2x2, IidSampler(d, seed=31), 0.3, 50,
                            q0=np.ones(4), q_star=q_star_2x2, options=RecordOptions(keep_q=True))
    sampler = IidSampler(d, seed=31)
    q = np.ones(4)
    for k in range(50):
        q, w, sample = qlearn_step_iid(q, sampler, mdp_2x2, 0.3)
        assert sample.coord == record.coords[k]
        np.testing.assert_allclose(w, record.noise[k], atol=1e-12)
    np.testing.assert_array_equal(q, record.final_q)


def test_markov_step_agrees_with_engine(mdp_2x2, q_star_2x2):
    behavior = uniform_behavior(mdp_2x2)
    record = run_trajectory('markov', mdp_2x2, MarkovSampler(mdp_2x2, behavior, seed=4, initial_coord=2),
                            0.2, 40, q_star=q_star_2x2, options=RecordOptions(keep_q=True))
    sampler = MarkovSampler(mdp_2x2, behavior, seed=4, initial_coord=2)
    q = np.zeros(4)
    for k in range(40):
        q, xi, sample = qlearn_step_markov(q, sampler, mdp_2x2, 0.2)
        assert sample.coord == record.coords[k]
        np.testing.assert_allclose(xi, record.noise[k], atol=1e-12)
    np.testing.assert_array_equal(q, record.final_q)


def test_trajectory_is_deterministic_per_seed(mdp_3x2):
    d = np.full(6, 1.0 / 6.0)
    a = run_trajectory('iid', mdp_3x2, IidSampler(d, seed=9), 0.1, 500)
    b = run_trajectory('iid', mdp_3x2, IidSampler(d, seed=9), 0.1, 500)
    c = run_trajectory('iid', mdp_3x2, IidSampler(d, seed=10), 0.1, 500)
    np.testing.assert_array_equal(a.errors, b.errors)
    assert not np.array_equal(a.coords, c.coords)


def test_batch_matches_single_runs(mdp_2x2, q_star_2x2):
    d = np.full(4, 0.25)
    seeds = [derive_seed(100, i) for i in range(4)]
    batch = simulate_runs('iid', mdp_2x2, IidSampler(d), 0.1, 200, seeds,
                          np.zeros(4), q_star_2x2, record_every=25)
    for j, seed in enumerate(seeds):
        single = run_trajectory('iid', mdp_2x2, IidSampler(d, seed=seed), 0.1, 200, q_star=q_star_2x2,
                                options=RecordOptions(record_every=25))
        np.testing.assert_array_equal(batch.errors[j], single.errors)


def test_recorded_ks_include_last_step():
    np.testing.assert_array_equal(recorded_ks(10, 4), [0, 4, 8, 10])
    np.testing.assert_array_equal(recorded_ks(8, 4), [0, 4, 8])


def test_zero_steps(mdp_2x2):
    record = run_trajectory('iid', mdp_2x2, IidSampler(np.full(4, 0.25)), 0.1, 0, q0=np.ones(4))
    assert record.steps == 0
    assert record.errors.shape == (1, 4)


def test_trivial_mdp_stays_at_zero():
    mdp = Mdp(np.full((2, 2, 2), 0.5), np.zeros((2, 2, 2)), 0.9)
    record = run_trajectory('iid', mdp, IidSampler(np.full(4, 0.25), seed=1), 0.5, 300)
    assert np.all(record.errors == 0.0)


def test_sup_norm_envelope():
    """||Q_k||_inf <= max(||Q_0||_inf, R_max / (1 - gamma)) at every step"""
    mdp = random_mdp(3, 2, 0.9, reward_scale=1.0, seed=3)
    for q0 in (np.zeros(6), np.full(6, 25.0), np.linspace(-4.0, 4.0, 6)):
        record = run_trajectory('iid', mdp, IidSampler(np.full(6, 1.0 / 6.0), seed=2), 0.7, 5000, q0=q0,
                                options=RecordOptions(keep_q=True))
        assert np.max(np.abs(record.q)) <= record.b_q * (1.0 + 1e-12)


def test_mode_sampler_mismatch(mdp_2x2):
    with pytest.raises(TypeError):
        run_trajectory('markov', mdp_2x2, IidSampler(np.full(4, 0.25)), 0.1, 10)
    with pytest.raises(ValueError):
        run_trajectory('sarsa', mdp_2x2, IidSampler(np.full(4, 0.25)), 0.1, 10)


@pytest.mark.parametrize("alpha", [0.0, 1.0, 1.5, -0.1])
def test_step_size_checked_at_entry(mdp_2x2, alpha):
    with pytest.raises(ConfigError):
        run_trajectory('iid', mdp_2x2, IidSampler(np.full(4, 0.25)), alpha, 10)
    with pytest.raises(ConfigError):
        simulate_runs('iid', mdp_2x2, IidSampler(np.full(4, 0.25)), alpha, 10, [0, 1], np.zeros(4), np.zeros(4))


# ----------------------------------------------------------------------
# Noise
# ----------------------------------------------------------------------

def test_noise_constant_formula(mdp_2x2):
    q0 = np.array([3.0, -40.0, 1.0, 0.0])
    noise = noise_constant(mdp_2x2, q0)
    envelope = mdp_2x2.r_max / (1.0 - mdp_2x2.gamma)
    assert noise.b_q == max(40.0, envelope)
    assert noise.w_max == pytest.approx((mdp_2x2.r_max + 1.9 * noise.b_q) ** 2, rel=1e-15)
    assert (noise.normalized is None) == (40.0 > envelope)


@pytest.mark.parametrize("mode", ['iid', 'markov'])
def test_noise_is_centered_with_bounded_second_moment(mode, mdp_3x2):
    rng = np.random.Generator(np.random.Philox(key=8))
    q = rng.uniform(-3.0, 3.0, size=6)
    d = np.full(6, 1.0 / 6.0)
    samples = sample_noise(mode, mdp_3x2, q, 100_000, seed=77, d=d, coord=4)
    mean = samples.mean(axis=0)
    se = samples.std(axis=0, ddof=1) / np.sqrt(samples.shape[0])
    assert np.all(np.abs(mean) <= 4.0 * se + 1e-12)
    second = float(np.mean(np.sum(samples ** 2, axis=1)))
    assert second <= noise_constant(mdp_3x2, q).w_max


def test_td_target_law_matches_bellman(mdp_3x2):
    q = np.linspace(-2.0, 3.0, 6)
    expected = np.asarray(bellman_optimality(mdp_3x2, q))
    for coord in range(6):
        values, probs = td_target_law(mdp_3x2, q, coord)
        assert abs(probs.sum() - 1.0) <= 1e-14
        assert np.all(np.diff(values) > 0)
        assert float(values @ probs) == pytest.approx(expected[coord], abs=1e-12)
    with pytest.raises(DimensionMismatchError):
        td_target_law(mdp_3x2, q, 6)
