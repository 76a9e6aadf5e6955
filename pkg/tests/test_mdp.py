"""
Test Suite for the MDP model and policies

Bellman operator, Q* solvers, document validation, Pi matrices,
the stochastic-policy linearization and convex-hull weights
"""

import sys
import os
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from src.mdp.model import (
    Mdp,
    QVector,
    bellman_optimality,
    bellman_residual,
    expected_reward,
    load_mdp,
    pair_index,
    q_star_by_enumeration,
    random_mdp,
    save_mdp,
    solve_q_star,
)
from src.mdp.policies import (
    DeterministicPolicy,
    StochasticPolicy,
    enumerate_policies,
    greedy_policy,
    hull_weights,
    linearization_residual,
    linearize_max,
    pi_matrix,
)
from src.utils.errors import DimensionMismatchError, EnumerationCapError, MdpValidationError


def _rng(seed):
    return np.random.Generator(np.random.Philox(key=seed))


# ----------------------------------------------------------------------
# Model
# ----------------------------------------------------------------------

def test_pair_ordering():
    """index(s, a) = a * n_states + s"""
    mdp = random_mdp(3, 2, 0.9, seed=0)
    assert mdp.index(0, 0) == 0
    assert mdp.index(2, 0) == 2
    assert mdp.index(0, 1) == 3
    assert mdp.coord(5) == (2, 1)
    assert pair_index(1, 1, 3) == 4
    np.testing.assert_array_equal(mdp.pair_kernel[mdp.index(2, 1)], mdp.P[2, 1])


def test_expected_reward_by_hand():
    P = np.array([[[0.25, 0.75], [1.0, 0.0]], [[0.5, 0.5], [0.0, 1.0]]])
    r = np.array([[[4.0, 0.0], [1.0, 9.0]], [[2.0, -2.0], [3.0, 5.0]]])
    mdp = Mdp(P, r, 0.5)
    # pairs: (0,0), (1,0), (0,1), (1,1)
    np.testing.assert_allclose(expected_reward(mdp), [1.0, 0.0, 1.0, 5.0], atol=1e-15)


def test_expected_reward_zero_rewards(example_mdp):
    np.testing.assert_array_equal(expected_reward(example_mdp), np.zeros(2))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2 ** 31 - 1))
def test_bellman_contraction(seed):
    """||F(Q1) - F(Q2)||_inf <= gamma ||Q1 - Q2||_inf"""
    rng = _rng(seed)
    mdp = random_mdp(3, 2, gamma=0.85, seed=seed)
    q1 = rng.normal(scale=5.0, size=mdp.n_pairs)
    q2 = rng.normal(scale=5.0, size=mdp.n_pairs)
    lhs = np.max(np.abs(np.asarray(bellman_optimality(mdp, q1)) - np.asarray(bellman_optimality(mdp, q2))))
    assert lhs <= mdp.gamma * np.max(np.abs(q1 - q2)) + 1e-12


@pytest.mark.parametrize("n_states,n_actions,seed", [(2, 2, 1), (3, 2, 2), (3, 3, 3), (4, 2, 4)])
def test_q_star_matches_enumeration(n_states, n_actions, seed):
    mdp = random_mdp(n_states, n_actions, gamma=0.9, seed=seed)
    q_vi = np.asarray(solve_q_star(mdp, tol=1e-10))
    q_enum = np.asarray(q_star_by_enumeration(mdp))
    assert np.max(np.abs(q_vi - q_enum)) <= 1e-9
    assert bellman_residual(mdp, q_vi) <= 1e-9


def test_q_star_envelope():
    mdp = random_mdp(3, 3, gamma=0.95, reward_scale=2.0, seed=5)
    q = np.asarray(solve_q_star(mdp))
    assert np.max(np.abs(q)) <= mdp.r_max / (1.0 - mdp.gamma) + 1e-10


def test_q_star_trivial_rewards(example_mdp):
    np.testing.assert_array_equal(np.asarray(solve_q_star(example_mdp)), np.zeros(2))


def test_mdp_validation_errors():
    P = np.full((2, 1, 2), 0.5)
    r = np.zeros((2, 1, 2))
    with pytest.raises(MdpValidationError):
        Mdp(P, r, 1.0)
    with pytest.raises(MdpValidationError):
        Mdp(P, r, -0.1)
    with pytest.raises(MdpValidationError):
        Mdp(P * 1.01, r, 0.9)
    bad = P.copy()
    bad[0, 0] = [1.5, -0.5]
    with pytest.raises(MdpValidationError):
        Mdp(bad, r, 0.9)
    with pytest.raises(MdpValidationError):
        Mdp(P, np.zeros((2, 2, 2)), 0.9)


def test_zero_discount_drops_lookahead():
    mdp = random_mdp(3, 2, gamma=0.0, reward_scale=2.0, seed=9)
    R = expected_reward(mdp)
    for q in (np.zeros(6), _rng(2).normal(size=6)):
        np.testing.assert_allclose(np.asarray(bellman_optimality(mdp, q)), R, atol=1e-15)
    np.testing.assert_allclose(np.asarray(solve_q_star(mdp)), R, atol=1e-15)


def test_mdp_document_errors():
    doc = random_mdp(2, 2, 0.9, seed=0).to_dict()
    with pytest.raises(MdpValidationError):
        Mdp.from_dict({k: v for k, v in doc.items() if k != 'gamma'})
    with pytest.raises(MdpValidationError):
        Mdp.from_dict({**doc, 'discount': 0.9})
    with pytest.raises(MdpValidationError):
        Mdp.from_dict({**doc, 'n_states': 3})


def test_random_mdp_deterministic_and_stochastic():
    a = random_mdp(3, 2, 0.9, reward_scale=2.0, seed=42)
    b = random_mdp(3, 2, 0.9, reward_scale=2.0, seed=42)
    c = random_mdp(3, 2, 0.9, reward_scale=2.0, seed=43)
    np.testing.assert_array_equal(a.P, b.P)
    np.testing.assert_array_equal(a.r, b.r)
    assert not np.array_equal(a.P, c.P)
    assert np.max(np.abs(a.P.sum(axis=2) - 1.0)) <= 1e-12
    assert np.all(np.abs(a.r) <= 2.0)


def test_mdp_file_round_trip(tmp_path):
    mdp = random_mdp(2, 3, 0.8, seed=9)
    path = save_mdp(mdp, tmp_path / "mdp.json")
    loaded = load_mdp(path)
    np.testing.assert_array_equal(loaded.P, mdp.P)
    np.testing.assert_array_equal(loaded.r, mdp.r)
    assert loaded.gamma == mdp.gamma


def test_load_mdp_rejects_garbage(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    with pytest.raises(MdpValidationError):
        load_mdp(path)


def test_qvector_table_view():
    table = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
    q = QVector.from_table(table)
    np.testing.assert_array_equal(np.asarray(q), [1.0, 3.0, 5.0, 2.0, 4.0, 6.0])
    np.testing.assert_array_equal(q.as_table(), table)
    assert q.sup_norm() == 6.0
    with pytest.raises(DimensionMismatchError):
        QVector(np.zeros(5), 3, 2)


# ----------------------------------------------------------------------
# Policies
# ----------------------------------------------------------------------

def test_pi_matrix_deterministic():
    policy = DeterministicPolicy((1, 0, 1), n_actions=2)
    Pi = pi_matrix(policy)
    assert Pi.shape == (3, 6)
    expected = np.zeros((3, 6))
    expected[0, 3] = expected[1, 1] = expected[2, 5] = 1.0
    np.testing.assert_array_equal(Pi, expected)


def test_pi_matrix_dimension_check():
    with pytest.raises(DimensionMismatchError):
        pi_matrix(StochasticPolicy.uniform(2, 2), n_states=3)


def test_greedy_policy_ties_go_to_lowest_action():
    q = np.array([1.0, 5.0, 1.0, 2.0])
    assert greedy_policy(q, 2, 2).actions == (0, 0)


def test_linearization_identity_on_random_q():
    """Pi^{mu_Q}(Q - Q*) = V_Q - V* on 1000 random Q, 3x3 MDPs"""
    rng = _rng(17)
    worst = 0.0
    for i in range(1000):
        if i % 100 == 0:
            mdp = random_mdp(3, 3, 0.9, seed=100 + i)
            q_star = np.asarray(solve_q_star(mdp))
        q = q_star + rng.normal(scale=rng.uniform(0.01, 10.0), size=mdp.n_pairs)
        worst = max(worst, linearization_residual(q, q_star, mdp.n_states))
    assert worst <= 1e-12


def test_linearization_with_ties():
    q_star = np.zeros(4)
    q = np.array([1.0, -1.0, 1.0, -1.0])
    mu = linearize_max(q, q_star, 2)
    assert mu.probs[0, 0] == 1.0
    assert linearization_residual(q, q_star, 2) == 0.0


def test_enumerate_policies_order_and_cap():
    policies = enumerate_policies(2, 3)
    assert len(policies) == 9
    assert policies[0].actions == (0, 0)
    assert policies[1].actions == (0, 1)
    assert policies[-1].actions == (2, 2)
    with pytest.raises(EnumerationCapError):
        enumerate_policies(13, 2)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2 ** 31 - 1), n_states=st.integers(1, 3), n_actions=st.integers(1, 3))
def test_hull_weights_reconstruct_pi(seed, n_states, n_actions):
    """Weights are a probability vector and sum_pi c_pi Pi^pi = Pi^mu"""
    mu = StochasticPolicy.random(_rng(seed), n_states, n_actions)
    weights = hull_weights(mu)
    values = np.array(list(weights.values()))
    assert np.all(values >= 0)
    assert abs(values.sum() - 1.0) <= 1e-12
    mixed = sum(c * pi_matrix(pi) for pi, c in weights.items())
    assert np.max(np.abs(mixed - pi_matrix(mu))) <= 1e-12


def test_hull_weights_of_deterministic_policy():
    policy = DeterministicPolicy((1, 0), n_actions=2)
    weights = hull_weights(policy.to_stochastic())
    assert weights[policy] == 1.0
    assert sum(weights.values()) == 1.0
