"""Finite MDP model and policies"""

from src.mdp.model import (
    Mdp,
    QVector,
    bellman_optimality,
    expected_reward,
    load_mdp,
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
