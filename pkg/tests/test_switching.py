"""
Test Suite for the switching family and the JSR bracket

Exact error recursions on simulated trajectories, convex-hull reconstruction,
row-sum structure and JSR bracket validity
"""

import sys
import os
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st
from scipy import linalg

from src.learning.samplers import IidSampler, MarkovSampler, uniform_behavior
from src.learning.simulator import RecordOptions, run_trajectory
from src.mdp.model import random_mdp, solve_q_star
from src.mdp.policies import DeterministicPolicy, StochasticPolicy, greedy_policy, pi_matrix
from src.switching.family import (
    affine_mode,
    build_family,
    check_distribution,
    direct_mode,
    hull_reconstruction_error,
    markov_bias,
    markov_mode,
    verify_affine_representation,
    verify_direct_representation,
    verify_markov_representation,
)
from src.switching.jsr import convex_hull_jsr_check, jsr_bounds, row_sum_rate, spectral_radii
from src.utils.errors import BudgetExceededError, ConfigError, DimensionMismatchError


def _rng(seed):
    return np.random.Generator(np.random.Philox(key=seed))


# ----------------------------------------------------------------------
# Modes
# ----------------------------------------------------------------------

def test_two_state_example_mode(example_mdp):
    """Single action, d = (0.1, 0.9), alpha = 0.9"""
    family = build_family(example_mdp, np.array([0.1, 0.9]), alpha=0.9)
    M = family.modes[0]
    np.testing.assert_allclose(M, [[0.9505, 0.0405], [0.3645, 0.5545]], atol=1e-12)
    assert abs(np.trace(M) - 1.505) <= 1e-12
    assert abs(linalg.det(M) - 0.51229) <= 1e-10
    rho = float(np.max(np.abs(linalg.eigvals(M))))
    assert abs(rho - 0.9848) <= 5e-4
    assert abs(row_sum_rate(family) - 0.991) <= 1e-12
    assert rho < row_sum_rate(family)


def test_direct_mode_formula(mdp_2x2):
    d = np.array([0.1, 0.2, 0.3, 0.4])
    mu = StochasticPolicy(np.array([[0.3, 0.7], [1.0, 0.0]]))
    M = direct_mode(mdp_2x2, d, 0.2, mu)
    D = np.diag(d)
    expected = np.eye(4) - 0.2 * D + 0.2 * mdp_2x2.gamma * D @ mdp_2x2.pair_kernel @ pi_matrix(mu)
    np.testing.assert_allclose(M, expected, atol=1e-15)


def test_zero_discount_modes_ignore_the_policy():
    mdp = random_mdp(2, 2, gamma=0.0, seed=3)
    d = np.array([0.1, 0.2, 0.3, 0.4])
    family = build_family(mdp, d, alpha=0.5)
    for M in family.modes:
        np.testing.assert_allclose(M, np.eye(4) - 0.5 * np.diag(d), atol=1e-15)


def test_family_row_structure(family_2x2):
    assert len(family_2x2) == 4
    assert np.all(family_2x2.modes >= 0)
    rho_row = 1.0 - 0.1 * 0.25 * (1.0 - 0.9)
    assert np.max(family_2x2.modes.sum(axis=2)) <= rho_row + 1e-12
    assert row_sum_rate(family_2x2) == pytest.approx(rho_row, abs=1e-15)


def test_family_mode_lookup(family_2x2):
    policy = DeterministicPolicy((1, 0), n_actions=2)
    np.testing.assert_array_equal(family_2x2.mode_of(policy), family_2x2.modes[2])
    np.testing.assert_allclose(family_2x2.mode_of(policy.to_stochastic()), family_2x2.modes[2], atol=1e-15)


def test_family_csv_export(family_2x2, tmp_path):
    paths = family_2x2.to_csv(tmp_path / "modes")
    assert [p.name for p in paths] == ["mode_00.csv", "mode_01.csv", "mode_10.csv", "mode_11.csv"]
    for path, M in zip(paths, family_2x2.modes):
        loaded = pd.read_csv(path, header=None).to_numpy()
        assert loaded.shape == (4, 4)
        np.testing.assert_allclose(loaded, M, rtol=0, atol=1e-12)


def test_step_size_and_distribution_checks(mdp_2x2):
    with pytest.raises(ConfigError):
        build_family(mdp_2x2, np.full(4, 0.25), alpha=1.0)
    with pytest.raises(ConfigError):
        check_distribution(np.array([0.5, 0.5, 0.0, 0.0]), 4)
    with pytest.raises(ConfigError):
        check_distribution(np.array([0.3, 0.3, 0.3, 0.3]), 4)
    with pytest.raises(DimensionMismatchError):
        check_distribution(np.array([0.5, 0.5]), 4)


def test_affine_mode_matches_greedy_direct_mode(mdp_2x2, q_star_2x2):
    q = q_star_2x2 + np.array([0.5, -0.3, -0.2, 0.4])
    d = np.full(4, 0.25)
    mode = affine_mode(mdp_2x2, d, 0.1, q, q_star_2x2)
    assert mode.policy == greedy_policy(q, 2, 2)
    np.testing.assert_array_equal(mode.A, direct_mode(mdp_2x2, d, 0.1, mode.policy))


def test_markov_mode_only_touches_its_row(mdp_3x2):
    mu = StochasticPolicy.uniform(3, 2)
    M = markov_mode(mdp_3x2, 0.3, 4, mu)
    eye = np.eye(6)
    np.testing.assert_array_equal(np.delete(M, 4, axis=0), np.delete(eye, 4, axis=0))
    assert not np.array_equal(M[4], eye[4])


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2 ** 31 - 1), coord=st.integers(0, 5))
def test_markov_mode_decomposition(seed, coord):
    """M_hat_{X,mu} e = M_mu e + alpha b^M"""
    rng = _rng(seed)
    mdp = random_mdp(3, 2, 0.9, seed=seed % 1000)
    d = rng.dirichlet(np.ones(6)) * 0.9 + 0.1 / 6
    mu = StochasticPolicy.random(rng, 3, 2)
    e = rng.normal(size=6)
    alpha = 0.3
    lhs = markov_mode(mdp, alpha, coord, mu) @ e
    rhs = direct_mode(mdp, d, alpha, mu) @ e + alpha * markov_bias(mdp, d, coord, mu, e)
    assert np.max(np.abs(lhs - rhs)) <= 1e-12


# ----------------------------------------------------------------------
# Trajectory recursions
# ----------------------------------------------------------------------

@pytest.mark.parametrize("n_states,n_actions,seed", [(2, 2, 3), (3, 2, 4)])
def test_direct_representation_iid(n_states, n_actions, seed):
    """e_{k+1} = M_{mu_k} e_k + alpha w_k along 10^4 i.i.d. steps"""
    mdp = random_mdp(n_states, n_actions, 0.9, seed=seed)
    d = np.full(mdp.n_pairs, 1.0 / mdp.n_pairs)
    family = build_family(mdp, d, alpha=0.1)
    q_star = np.asarray(solve_q_star(mdp))
    q0 = _rng(seed).normal(scale=2.0, size=mdp.n_pairs)
    record = run_trajectory('iid', mdp, IidSampler(d, seed=seed), 0.1, 10_000, q0=q0, q_star=q_star,
                            options=RecordOptions(keep_q=True))
    assert verify_direct_representation(record, family) <= 1e-9


def test_affine_representation_iid(mdp_2x2, q_star_2x2):
    d = np.full(4, 0.25)
    family = build_family(mdp_2x2, d, alpha=0.2)
    record = run_trajectory('iid', mdp_2x2, IidSampler(d, seed=5), 0.2, 1000,
                            q0=np.ones(4), q_star=q_star_2x2, options=RecordOptions(keep_q=True))
    assert verify_affine_representation(record, family) <= 1e-9


def test_markov_representation(mdp_2x2, q_star_2x2):
    sampler = MarkovSampler(mdp_2x2, uniform_behavior(mdp_2x2), seed=8)
    family = build_family(mdp_2x2, sampler.stationary, alpha=0.1)
    record = run_trajectory('markov', mdp_2x2, sampler, 0.1, 3000,
                            q0=np.zeros(4), q_star=q_star_2x2, options=RecordOptions(keep_q=True))
    residuals = verify_markov_representation(record, family)
    assert residuals['sample_path'] <= 1e-9
    assert residuals['decomposition'] <= 1e-9


# ----------------------------------------------------------------------
# Convex hull
# ----------------------------------------------------------------------

@pytest.mark.parametrize("n_states,n_actions", [(2, 2), (3, 2)])
def test_hull_reconstruction(n_states, n_actions):
    mdp = random_mdp(n_states, n_actions, 0.9, seed=21)
    family = build_family(mdp, np.full(mdp.n_pairs, 1.0 / mdp.n_pairs), alpha=0.5)
    rng = _rng(22)
    worst = max(
        hull_reconstruction_error(family, StochasticPolicy.random(rng, n_states, n_actions))
        for _ in range(100)
    )
    assert worst <= 1e-12


def test_convex_hull_jsr_check(family_2x2):
    rng = _rng(3)
    samples = [StochasticPolicy.random(rng, 2, 2) for _ in range(5)]
    assert convex_hull_jsr_check(family_2x2, samples, max_len=4) <= 1e-12


# ----------------------------------------------------------------------
# JSR bracket
# ----------------------------------------------------------------------

def test_jsr_bracket_on_random_families():
    rng = _rng(99)
    for i in range(20):
        mdp = random_mdp(2, 2, gamma=rng.uniform(0.5, 0.95), seed=200 + i)
        d = rng.dirichlet(np.ones(4)) * 0.8 + 0.05
        family = build_family(mdp, d, alpha=rng.uniform(0.05, 0.9))
        report = jsr_bounds(family, max_depth=8, budget=200_000)
        assert report.lower <= report.upper
        assert report.upper >= float(spectral_radii(family.modes).max()) - 1e-12
        assert report.lower <= report.rho_row + 1e-10
        assert report.certified_upper <= report.rho_row
        assert report.upper_by_depth == sorted(report.upper_by_depth, reverse=True)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2 ** 31 - 1), n_modes=st.integers(1, 3), dim=st.integers(2, 4))
def test_jsr_bounds_scale_with_the_family(seed, n_modes, dim):
    modes = _rng(seed).uniform(-1.0, 1.0, size=(n_modes, dim, dim))
    base = jsr_bounds(modes, max_depth=5)
    scaled = jsr_bounds(2.0 * modes, max_depth=5)
    assert scaled.lower == pytest.approx(2.0 * base.lower, rel=1e-9)
    assert scaled.upper == pytest.approx(2.0 * base.upper, rel=1e-9)


def test_jsr_strict_gap_on_example(example_mdp):
    family = build_family(example_mdp, np.array([0.1, 0.9]), alpha=0.9)
    report = jsr_bounds(family, max_depth=64)
    assert report.upper < report.rho_row
    assert abs(report.lower - 0.9848) <= 5e-4


def test_jsr_diagonal_family_is_exact():
    modes = np.array([np.diag([0.5, 0.9]), np.diag([0.7, 0.2])])
    report = jsr_bounds(modes, max_depth=4)
    assert report.rho_row is None
    assert report.lower == pytest.approx(0.9, abs=1e-12)
    assert report.upper == pytest.approx(0.9, abs=1e-12)


def test_jsr_budget_and_depth_errors():
    modes = np.array([np.eye(2) * 0.5] * 3)
    with pytest.raises(BudgetExceededError):
        jsr_bounds(modes, budget=2)
    with pytest.raises(ValueError):
        jsr_bounds(modes, max_depth=0)


def test_jsr_budget_stops_exploration():
    modes = np.array([[[0.5, 0.4], [0.0, 0.6]], [[0.6, 0.0], [0.3, 0.5]]])
    report = jsr_bounds(modes, max_depth=20, budget=100, prune_slack=0.0)
    assert report.depth == 5
    assert report.lower <= report.upper


def test_jsr_report_merge_is_commutative(family_2x2):
    a = jsr_bounds(family_2x2, max_depth=3)
    b = jsr_bounds(family_2x2, max_depth=6, norm="inf")
    ab, ba = a.merge(b), b.merge(a)
    assert ab.lower == ba.lower
    assert ab.upper == ba.upper == min(a.upper, b.upper)
    assert ab.witness == ba.witness
    assert a.merge(a).upper == a.upper
