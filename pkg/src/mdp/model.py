"""
Finite discounted MDP model

State-action pairs are laid out in a single vector with
index(s, a) = a * n_states + s (0-based), so that the block for action a is
contiguous and the Kronecker selector e_a (x) e_s picks the pair.

Q* is produced by value iteration followed by an exact policy-evaluation
polish of the greedy policy.
"""

import itertools
import logging
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Any, Dict, Tuple, Union

import numpy as np

from src.utils.errors import (
    ConvergenceError,
    DimensionMismatchError,
    EnumerationCapError,
    InvariantViolationError,
    MdpValidationError,
)
from src.utils.io import load_json_safe, save_json_safe

logger = logging.getLogger(__name__)

SIMPLEX_TOL = 1e-12
DEFAULT_Q_TOL = 1e-10
DEFAULT_VI_CAP = 10 ** 6
DEFAULT_POLICY_CAP = 4096


@dataclass(frozen=True)
class Mdp:
    """
    Finite discounted MDP

    Attributes:
        P: Transition probabilities, shape (n_states, n_actions, n_states)
        r: Rewards r(s, a, s'), same shape as P
        gamma: Discount factor in [0, 1); gamma = 0 makes Q* the expected reward
    """
    P: np.ndarray
    r: np.ndarray
    gamma: float

    def __post_init__(self):
        P = np.array(self.P, dtype=float)
        r = np.array(self.r, dtype=float)

        if P.ndim != 3 or P.shape[0] != P.shape[2] or P.shape[0] < 1 or P.shape[1] < 1:
            raise MdpValidationError(f"P must have shape (S, A, S), got {P.shape}")
        if r.shape != P.shape:
            raise MdpValidationError(f"r shape {r.shape} does not match P shape {P.shape}")
        if not np.all(np.isfinite(P)) or not np.all(np.isfinite(r)):
            raise MdpValidationError("P and r must be finite")
        if np.any(P < 0):
            raise MdpValidationError("Transition probabilities must be nonnegative")
        row_err = np.abs(P.sum(axis=2) - 1.0)
        if np.any(row_err > SIMPLEX_TOL):
            s, a = np.unravel_index(np.argmax(row_err), row_err.shape)
            raise MdpValidationError(
                f"P(.|s={s}, a={a}) sums to {P[s, a].sum():.15f}, not 1"
            )
        gamma = float(self.gamma)
        if not 0.0 <= gamma < 1.0:
            raise MdpValidationError(f"gamma must lie in [0, 1), got {gamma}")

        P.setflags(write=False)
        r.setflags(write=False)
        object.__setattr__(self, 'P', P)
        object.__setattr__(self, 'r', r)
        object.__setattr__(self, 'gamma', gamma)

    @property
    def n_states(self) -> int:
        return self.P.shape[0]

    @property
    def n_actions(self) -> int:
        return self.P.shape[1]

    @property
    def n_pairs(self) -> int:
        return self.n_states * self.n_actions

    @cached_property
    def r_max(self) -> float:
        return float(np.max(np.abs(self.r)))

    @cached_property
    def pair_kernel(self) -> np.ndarray:
        """P as an (n_pairs x n_states) matrix; row index(s, a) is P(.|s, a)"""
        kernel = self.P.transpose(1, 0, 2).reshape(self.n_pairs, self.n_states)
        kernel.setflags(write=False)
        return kernel

    @cached_property
    def pair_rewards(self) -> np.ndarray:
        """r as an (n_pairs x n_states) matrix aligned with pair_kernel"""
        rewards = self.r.transpose(1, 0, 2).reshape(self.n_pairs, self.n_states)
        rewards.setflags(write=False)
        return rewards

    def index(self, s: int, a: int) -> int:
        return pair_index(s, a, self.n_states)

    def coord(self, i: int) -> Tuple[int, int]:
        """Inverse of index: returns (s, a)"""
        return pair_coord(i, self.n_states)

    # ------------------------------------------------------------------
    # Serialization
    # ------------------------------------------------------------------

    def to_dict(self) -> Dict[str, Any]:
        return {
            'n_states': self.n_states,
            'n_actions': self.n_actions,
            'gamma': self.gamma,
            'P': self.P.tolist(),
            'r': self.r.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> "Mdp":
        required = {'n_states', 'n_actions', 'gamma', 'P', 'r'}
        if not isinstance(doc, dict):
            raise MdpValidationError("MDP document must be a JSON object")
        missing = required - set(doc)
        if missing:
            raise MdpValidationError(f"MDP document missing keys: {sorted(missing)}")
        extra = set(doc) - required
        if extra:
            raise MdpValidationError(f"MDP document has unknown keys: {sorted(extra)}")

        try:
            P = np.array(doc['P'], dtype=float)
            r = np.array(doc['r'], dtype=float)
        except (TypeError, ValueError) as e:
            raise MdpValidationError(f"P and r must be rectangular numeric arrays: {e}")

        expected = (int(doc['n_states']), int(doc['n_actions']), int(doc['n_states']))
        if P.shape != expected:
            raise MdpValidationError(f"P has shape {P.shape}, expected {expected}")
        return cls(P, r, doc['gamma'])


@dataclass(frozen=True)
class QVector:
    """
    Q-function over state-action pairs in the fixed pair ordering

    Behaves as an array through np.asarray(q).
    """
    values: np.ndarray
    n_states: int
    n_actions: int

    def __post_init__(self):
        values = np.array(self.values, dtype=float).ravel()
        if values.shape[0] != self.n_states * self.n_actions:
            raise DimensionMismatchError(
                f"QVector length {values.shape[0]} != {self.n_states}*{self.n_actions}"
            )
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def __len__(self) -> int:
        return self.values.shape[0]

    @classmethod
    def zeros(cls, mdp: Mdp) -> "QVector":
        return cls(np.zeros(mdp.n_pairs), mdp.n_states, mdp.n_actions)

    @classmethod
    def from_table(cls, table: np.ndarray) -> "QVector":
        """Build from an (n_states x n_actions) table"""
        table = np.asarray(table, dtype=float)
        return cls(table.T.ravel(), table.shape[0], table.shape[1])

    def as_table(self) -> np.ndarray:
        """(n_states x n_actions) view of the values"""
        return self.values.reshape(self.n_actions, self.n_states).T

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))


QLike = Union[QVector, np.ndarray]


def pair_index(s: int, a: int, n_states: int) -> int:
    return a * n_states + s


def pair_coord(i: int, n_states: int) -> Tuple[int, int]:
    a, s = divmod(int(i), n_states)
    return s, a


def q_array(q: QLike, mdp: Mdp) -> np.ndarray:
    """Validated float view of a Q-like input for this MDP"""
    values = np.asarray(q, dtype=float)
    if values.ndim != 1 or values.shape[0] != mdp.n_pairs:
        raise DimensionMismatchError(
            f"Q vector of shape {values.shape} does not match {mdp.n_pairs} state-action pairs"
        )
    return values


def state_values(q: np.ndarray, n_states: int) -> np.ndarray:
    """V_Q(s) = max_a Q(s, a)"""
    return q.reshape(-1, n_states).max(axis=0)


def greedy_actions(q: np.ndarray, n_states: int) -> np.ndarray:
    """Greedy action per state; ties go to the lowest action index"""
    return np.argmax(q.reshape(-1, n_states), axis=0)


def expected_reward(mdp: Mdp) -> np.ndarray:
    """R(s, a) = sum_s' P(s'|s, a) r(s, a, s') in pair ordering"""
    return np.sum(mdp.pair_kernel * mdp.pair_rewards, axis=1)


def bellman_optimality(mdp: Mdp, q: QLike) -> QVector:
    """F(Q) = R + gamma * P V_Q"""
    values = q_array(q, mdp)
    fq = expected_reward(mdp) + mdp.gamma * mdp.pair_kernel @ state_values(values, mdp.n_states)
    return QVector(fq, mdp.n_states, mdp.n_actions)


def policy_selector(actions: np.ndarray, n_states: int, n_actions: int) -> np.ndarray:
    """One-hot Pi matrix (n_states x n_pairs) of a deterministic action assignment"""
    Pi = np.zeros((n_states, n_states * n_actions))
    states = np.arange(n_states)
    Pi[states, np.asarray(actions) * n_states + states] = 1.0
    return Pi


def evaluate_deterministic(mdp: Mdp, actions: np.ndarray) -> np.ndarray:
    """Q^pi from the linear system (I - gamma P Pi^pi) Q = R"""
    Pi = policy_selector(actions, mdp.n_states, mdp.n_actions)
    system = np.eye(mdp.n_pairs) - mdp.gamma * mdp.pair_kernel @ Pi
    return np.linalg.solve(system, expected_reward(mdp))


def bellman_residual(mdp: Mdp, q: QLike) -> float:
    values = q_array(q, mdp)
    return float(np.max(np.abs(np.asarray(bellman_optimality(mdp, values)) - values)))


def solve_q_star(
    mdp: Mdp,
    tol: float = DEFAULT_Q_TOL,
    max_iter: int = DEFAULT_VI_CAP,
    polish: bool = True,
) -> QVector:
    """
    Optimal Q-function

    Value iteration stops once the sup-norm change drops below
    tol * (1 - gamma) / (2 * gamma), which guarantees ||Q - Q*||_inf <= tol.
    The greedy policy of the result is then evaluated exactly; the polished
    vector replaces the iterate when its Bellman residual is smaller.

    Args:
        mdp: Model
        tol: Target sup-norm accuracy
        max_iter: Iteration cap
        polish: Run the policy-evaluation polish

    Returns:
        Q* as a QVector

    Raises:
        ConvergenceError: If the iteration cap is hit
    """
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")

    threshold = tol * (1.0 - mdp.gamma) / (2.0 * mdp.gamma) if mdp.gamma > 0.0 else np.inf
    R = expected_reward(mdp)
    q = np.zeros(mdp.n_pairs)
    for iteration in range(1, max_iter + 1):
        q_next = R + mdp.gamma * mdp.pair_kernel @ state_values(q, mdp.n_states)
        change = float(np.max(np.abs(q_next - q)))
        q = q_next
        if change < threshold:
            break
    else:
        raise ConvergenceError(
            f"Value iteration did not reach change < {threshold:.3e} in {max_iter} iterations"
        )
    logger.debug(f"Value iteration converged in {iteration} iterations (last change {change:.3e})")

    if polish:
        candidate = evaluate_deterministic(mdp, greedy_actions(q, mdp.n_states))
        if bellman_residual(mdp, candidate) < bellman_residual(mdp, q):
            q = candidate
        logger.debug(f"Q* Bellman residual after polish: {bellman_residual(mdp, q):.3e}")

    envelope = mdp.r_max / (1.0 - mdp.gamma)
    if np.max(np.abs(q)) > envelope + tol:
        raise InvariantViolationError(
            f"||Q*||_inf = {np.max(np.abs(q)):.6g} exceeds R_max/(1-gamma) = {envelope:.6g}"
        )
    return QVector(q, mdp.n_states, mdp.n_actions)


def q_star_by_enumeration(mdp: Mdp, cap: int = DEFAULT_POLICY_CAP) -> QVector:
    """Q* as the componentwise best Q^pi over all deterministic policies"""
    count = mdp.n_actions ** mdp.n_states
    if count > cap:
        raise EnumerationCapError(f"{count} deterministic policies exceed cap {cap}")

    best = np.full(mdp.n_pairs, -np.inf)
    for actions in itertools.product(range(mdp.n_actions), repeat=mdp.n_states):
        best = np.maximum(best, evaluate_deterministic(mdp, np.array(actions)))
    return QVector(best, mdp.n_states, mdp.n_actions)


def random_mdp(
    n_states: int,
    n_actions: int,
    gamma: float,
    reward_scale: float = 1.0,
    seed: int = 0,
) -> Mdp:
    """
    Seeded random MDP

    Transition rows are normalized exponentials; rewards are uniform on
    [-reward_scale, reward_scale]. Same seed, same MDP.
    """
    if n_states < 1 or n_actions < 1:
        raise MdpValidationError(f"Invalid dimensions n_states={n_states}, n_actions={n_actions}")
    rng = np.random.Generator(np.random.Philox(seed))
    weights = rng.exponential(1.0, size=(n_states, n_actions, n_states))
    P = weights / weights.sum(axis=2, keepdims=True)
    r = rng.uniform(-reward_scale, reward_scale, size=(n_states, n_actions, n_states))
    return Mdp(P, r, gamma)


def load_mdp(path: Union[str, Path]) -> Mdp:
    try:
        doc = load_json_safe(path)
    except (OSError, ValueError) as e:
        raise MdpValidationError(f"Cannot read MDP document {path}: {e}")
    return Mdp.from_dict(doc)


def save_mdp(mdp: Mdp, path: Union[str, Path]) -> Path:
    return save_json_safe(mdp.to_dict(), path)
