"""
Deterministic and stochastic policies

Pi matrices, the two-point stochastic-policy linearization of the Bellman max
and the convex-hull weights that express a stochastic policy as a mixture of
deterministic ones.
"""

import itertools
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from src.mdp.model import DEFAULT_POLICY_CAP, greedy_actions, state_values
from src.utils.errors import (
    DimensionMismatchError,
    EnumerationCapError,
    InvariantViolationError,
)

logger = logging.getLogger(__name__)

SIMPLEX_TOL = 1e-12
CLAMP_TOL = 1e-12


@dataclass(frozen=True)
class DeterministicPolicy:
    """
    Deterministic stationary policy

    Attributes:
        actions: actions[s] is the action taken in state s
        n_actions: Size of the action set
    """
    actions: Tuple[int, ...]
    n_actions: int

    def __post_init__(self):
        actions = tuple(int(a) for a in self.actions)
        if len(actions) < 1:
            raise DimensionMismatchError("A policy needs at least one state")
        if any(a < 0 or a >= self.n_actions for a in actions):
            raise DimensionMismatchError(f"Actions {actions} outside range(0, {self.n_actions})")
        object.__setattr__(self, 'actions', actions)

    @property
    def n_states(self) -> int:
        return len(self.actions)

    @property
    def probs(self) -> np.ndarray:
        """One-hot (n_states x n_actions) action distribution"""
        table = np.zeros((self.n_states, self.n_actions))
        table[np.arange(self.n_states), self.actions] = 1.0
        return table

    def to_stochastic(self) -> "StochasticPolicy":
        return StochasticPolicy(self.probs)

    def label(self) -> str:
        return "".join(str(a) for a in self.actions) if self.n_actions <= 10 else \
            "-".join(str(a) for a in self.actions)


@dataclass(frozen=True, eq=False)
class StochasticPolicy:
    """
    Stochastic stationary policy

    Attributes:
        probs: (n_states x n_actions) matrix; row s is mu(.|s)
    """
    probs: np.ndarray

    def __post_init__(self):
        probs = np.array(self.probs, dtype=float)
        if probs.ndim != 2 or probs.shape[0] < 1 or probs.shape[1] < 1:
            raise DimensionMismatchError(f"Policy table must be 2-D, got shape {probs.shape}")
        if np.any(probs < 0) or np.any(np.abs(probs.sum(axis=1) - 1.0) > SIMPLEX_TOL):
            raise DimensionMismatchError("Every policy row must lie in the probability simplex")
        probs.setflags(write=False)
        object.__setattr__(self, 'probs', probs)

    @property
    def n_states(self) -> int:
        return self.probs.shape[0]

    @property
    def n_actions(self) -> int:
        return self.probs.shape[1]

    @classmethod
    def uniform(cls, n_states: int, n_actions: int) -> "StochasticPolicy":
        return cls(np.full((n_states, n_actions), 1.0 / n_actions))

    @classmethod
    def random(cls, rng: np.random.Generator, n_states: int, n_actions: int) -> "StochasticPolicy":
        """Rows drawn uniformly from the simplex"""
        return cls(rng.dirichlet(np.ones(n_actions), size=n_states))


Policy = Union[DeterministicPolicy, StochasticPolicy]


def _check_dims(policy: Policy, n_states: Optional[int], n_actions: Optional[int]) -> None:
    if n_states is not None and policy.n_states != n_states:
        raise DimensionMismatchError(f"Policy has {policy.n_states} states, expected {n_states}")
    if n_actions is not None and policy.n_actions != n_actions:
        raise DimensionMismatchError(f"Policy has {policy.n_actions} actions, expected {n_actions}")


def pi_matrix(
    policy: Policy,
    n_states: Optional[int] = None,
    n_actions: Optional[int] = None,
) -> np.ndarray:
    """
    Pi^mu, shape (n_states x n_states*n_actions)

    Row s carries mu(a|s) at column index(s, a) = a*n_states + s.
    """
    _check_dims(policy, n_states, n_actions)
    S, A = policy.n_states, policy.n_actions
    Pi = np.zeros((S, S * A))
    states = np.arange(S)
    for a in range(A):
        Pi[states, a * S + states] = policy.probs[:, a]
    return Pi


def greedy_policy(q: np.ndarray, n_states: int, n_actions: int) -> DeterministicPolicy:
    """Greedy policy of a Q vector with lowest-index tie-breaking"""
    values = np.asarray(q, dtype=float)
    if values.shape != (n_states * n_actions,):
        raise DimensionMismatchError(f"Q of shape {values.shape} does not match {n_states}x{n_actions}")
    return DeterministicPolicy(tuple(greedy_actions(values, n_states)), n_actions)


def linearize_max(q: np.ndarray, q_star: np.ndarray, n_states: int) -> StochasticPolicy:
    """
    Stochastic policy mu_Q with Pi^{mu_Q}(Q - Q*) = V_Q - V*

    Per state, y = V_Q(s) - V*(s) is sandwiched between the smallest and the
    largest error e(s, .) = Q(s, .) - Q*(s, .). The policy mixes the argmin
    and argmax actions (lowest index on ties) with weight
    lambda = (y - e_min) / (e_max - e_min) on the argmax.

    Raises:
        InvariantViolationError: If y leaves [e_min, e_max] by more than rounding
    """
    q = np.asarray(q, dtype=float)
    q_star = np.asarray(q_star, dtype=float)
    if q.shape != q_star.shape or q.ndim != 1 or q.shape[0] % n_states:
        raise DimensionMismatchError(f"Q shapes {q.shape} and {q_star.shape} do not match {n_states} states")

    n_actions = q.shape[0] // n_states
    err = (q - q_star).reshape(n_actions, n_states).T
    y = state_values(q, n_states) - state_values(q_star, n_states)
    scale = np.maximum(1.0, np.maximum(np.abs(q), np.abs(q_star)).reshape(n_actions, n_states).max(axis=0))

    probs = np.zeros((n_states, n_actions))
    for s in range(n_states):
        a_min = int(np.argmin(err[s]))
        a_max = int(np.argmax(err[s]))
        e_min, e_max = err[s, a_min], err[s, a_max]
        slack = CLAMP_TOL * scale[s]
        if y[s] < e_min - slack or y[s] > e_max + slack:
            raise InvariantViolationError(
                f"State {s}: V_Q - V* = {y[s]:.17g} outside [{e_min:.17g}, {e_max:.17g}]"
            )
        if e_max == e_min:
            probs[s, a_min] = 1.0
            continue
        lam = min(1.0, max(0.0, (y[s] - e_min) / (e_max - e_min)))
        probs[s, a_min] += 1.0 - lam
        probs[s, a_max] += lam
    return StochasticPolicy(probs)


def linearization_residual(q: np.ndarray, q_star: np.ndarray, n_states: int) -> float:
    """||Pi^{mu_Q}(Q - Q*) - (V_Q - V*)||_inf"""
    q = np.asarray(q, dtype=float)
    q_star = np.asarray(q_star, dtype=float)
    mu = linearize_max(q, q_star, n_states)
    lhs = pi_matrix(mu) @ (q - q_star)
    rhs = state_values(q, n_states) - state_values(q_star, n_states)
    return float(np.max(np.abs(lhs - rhs)))


def enumerate_policies(
    n_states: int,
    n_actions: int,
    cap: int = DEFAULT_POLICY_CAP,
) -> List[DeterministicPolicy]:
    """All n_actions**n_states deterministic policies in lexicographic order"""
    count = n_actions ** n_states
    if count > cap:
        raise EnumerationCapError(
            f"{n_actions}^{n_states} = {count} deterministic policies exceed cap {cap}"
        )
    if count > 256:
        logger.warning(f"Enumerating {count} deterministic policies; downstream products grow as {count}^depth")
    return [
        DeterministicPolicy(actions, n_actions)
        for actions in itertools.product(range(n_actions), repeat=n_states)
    ]


def policy_action_table(policies: List[DeterministicPolicy]) -> np.ndarray:
    """(n_policies x n_states) integer table of actions"""
    return np.array([p.actions for p in policies], dtype=int)


def hull_weights(
    mu: Policy,
    cap: int = DEFAULT_POLICY_CAP,
) -> Dict[DeterministicPolicy, float]:
    """
    Convex-hull weights c_pi(mu) = prod_s mu(pi(s)|s)

    The weights are nonnegative, sum to one and reproduce Pi^mu as
    sum_pi c_pi Pi^pi. Keys follow the enumeration order.
    """
    policies = enumerate_policies(mu.n_states, mu.n_actions, cap)
    actions = policy_action_table(policies)
    weights = np.prod(mu.probs[np.arange(mu.n_states), actions], axis=1)
    return {p: float(w) for p, w in zip(policies, weights)}
