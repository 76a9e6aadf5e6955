"""
Observation models for Q-learning

IidSampler draws (s, a) independently from d; MarkovSampler follows the
behavior-induced chain P^b(s', a' | s, a) = P(s'|s, a) b(a'|s').

Randomness is counter-based: a run with seed k uses Philox keyed by k and
consumes exactly four uniforms per step (pair, next state, next action,
spare), so step j of any run can be replayed by advancing the counter j.
"""

import logging
import math
from dataclasses import dataclass, field
from functools import reduce

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import breadth_first_order, connected_components

from src.mdp.model import Mdp
from src.mdp.policies import StochasticPolicy
from src.switching.family import check_distribution
from src.utils.errors import ChainError, DimensionMismatchError, InvariantViolationError

logger = logging.getLogger(__name__)

UNIFORMS_PER_STEP = 4
STATIONARY_TOL = 1e-10


def step_uniforms(seed: int, steps: int, start: int = 0) -> np.ndarray:
    """Uniforms of shape (steps, 4) for steps start..start+steps-1 of a run"""
    bit_generator = np.random.Philox(key=int(seed))
    if start:
        bit_generator.advance(start)
    return np.random.Generator(bit_generator).random((steps, UNIFORMS_PER_STEP))


def cumulative_rows(probs: np.ndarray) -> np.ndarray:
    """Row-wise CDF with the last column pinned to exactly 1"""
    cdf = np.cumsum(np.atleast_2d(probs), axis=1)
    cdf[:, -1] = 1.0
    return cdf


def pick(cdf_rows: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF sampling, one uniform per row"""
    return np.sum(cdf_rows <= np.asarray(u)[..., None], axis=-1)


def _support_graph(kernel: np.ndarray) -> csr_matrix:
    return csr_matrix((kernel > 0).astype(np.int8))


def is_irreducible(kernel: np.ndarray) -> bool:
    n_components, _ = connected_components(_support_graph(kernel), directed=True, connection='strong')
    return n_components == 1


def chain_period(kernel: np.ndarray) -> int:
    """
    Period of an irreducible chain

    gcd over support edges (u, v) of level(u) + 1 - level(v), with levels
    taken from a breadth-first search rooted at node 0.
    """
    graph = _support_graph(kernel)
    order, predecessors = breadth_first_order(graph, 0, directed=True, return_predecessors=True)
    level = np.full(kernel.shape[0], -1)
    level[0] = 0
    for node in order[1:]:
        level[node] = level[predecessors[node]] + 1
    rows, cols = graph.nonzero()
    gaps = np.abs(level[rows] + 1 - level[cols])
    return int(reduce(math.gcd, gaps.tolist(), 0))


def stationary_distribution(kernel: np.ndarray, require_aperiodic: bool = True) -> np.ndarray:
    """
    Stationary distribution of an irreducible aperiodic chain (GTH elimination)

    Raises:
        ChainError: If the chain is reducible, or periodic while
            require_aperiodic is set
    """
    P = np.array(kernel, dtype=float)
    n = P.shape[0]
    if P.ndim != 2 or P.shape[1] != n:
        raise DimensionMismatchError(f"Kernel must be square, got shape {P.shape}")
    if np.any(P < 0) or np.any(np.abs(P.sum(axis=1) - 1.0) > 1e-12):
        raise ChainError("Kernel rows must be probability vectors")
    if not is_irreducible(P):
        raise ChainError("Chain is reducible: no unique stationary distribution")
    period = chain_period(P)
    if require_aperiodic and period != 1:
        raise ChainError(f"Chain is periodic with period {period}")

    A = P.copy()
    for k in range(n - 1, 0, -1):
        mass = A[k, :k].sum()
        A[:k, k] /= mass
        A[:k, :k] += np.outer(A[:k, k], A[k, :k])
    pi = np.zeros(n)
    pi[0] = 1.0
    for k in range(1, n):
        pi[k] = pi[:k] @ A[:k, k]
    pi /= pi.sum()

    residual = float(np.abs(pi @ P - pi).sum())
    if residual > STATIONARY_TOL:
        raise InvariantViolationError(f"Stationary residual {residual:.3e} above {STATIONARY_TOL}")
    return pi


@dataclass
class IidSampler:
    """
    Independent state-action sampling from d

    Attributes:
        d: Strictly positive distribution over pairs (pair ordering)
        seed: Philox key of the run
    """
    d: np.ndarray
    seed: int = 0
    _rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        self.d = check_distribution(self.d, np.asarray(self.d).shape[0])
        self.cdf = cumulative_rows(self.d)[0]
        self._rng = np.random.Generator(np.random.Philox(key=int(self.seed)))

    @classmethod
    def from_state_behavior(cls, p: np.ndarray, behavior: StochasticPolicy, seed: int = 0) -> "IidSampler":
        """d(s, a) = p(s) b(a|s)"""
        p = np.asarray(p, dtype=float)
        if p.shape != (behavior.n_states,):
            raise DimensionMismatchError(f"State distribution shape {p.shape} does not match policy")
        return cls((p[:, None] * behavior.probs).T.ravel(), seed)

    @property
    def d_min(self) -> float:
        return float(self.d.min())

    def with_seed(self, seed: int) -> "IidSampler":
        return IidSampler(self.d, seed)

    def draw(self) -> np.ndarray:
        """Next four uniforms of this sampler's stream"""
        return self._rng.random(UNIFORMS_PER_STEP)

    def sample_coord(self, u: float) -> int:
        return int(pick(self.cdf, u))


@dataclass
class MarkovSampler:
    """
    Single-trajectory sampling along the behavior chain

    Attributes:
        mdp: Model providing P
        behavior: Behavior policy b(a|s)
        seed: Philox key of the run
        initial_coord: X_0 (no burn-in)
        require_aperiodic: Reject periodic behavior chains
    """
    mdp: Mdp
    behavior: StochasticPolicy
    seed: int = 0
    initial_coord: int = 0
    require_aperiodic: bool = True
    _rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        if self.behavior.n_states != self.mdp.n_states or self.behavior.n_actions != self.mdp.n_actions:
            raise DimensionMismatchError("Behavior policy does not match the MDP dimensions")
        if not 0 <= self.initial_coord < self.mdp.n_pairs:
            raise DimensionMismatchError(f"Initial coordinate {self.initial_coord} out of range")
        self.kernel = behavior_kernel(self.mdp, self.behavior)
        self.stationary = stationary_distribution(self.kernel, self.require_aperiodic)
        self.action_cdf = cumulative_rows(self.behavior.probs)
        self.coord = int(self.initial_coord)
        self._rng = np.random.Generator(np.random.Philox(key=int(self.seed)))

    @property
    def d(self) -> np.ndarray:
        return self.stationary

    @property
    def d_min(self) -> float:
        return float(self.stationary.min())

    def with_seed(self, seed: int) -> "MarkovSampler":
        return MarkovSampler(self.mdp, self.behavior, seed, self.initial_coord, self.require_aperiodic)

    def draw(self) -> np.ndarray:
        return self._rng.random(UNIFORMS_PER_STEP)

    def sample_action(self, state: int, u: float) -> int:
        return int(pick(self.action_cdf[state], u))


def behavior_kernel(mdp: Mdp, behavior: StochasticPolicy) -> np.ndarray:
    """P^b over pairs: P^b[i, a' n_states + s'] = P(s'|i) b(a'|s')"""
    S, A = mdp.n_states, mdp.n_actions
    kernel = np.zeros((mdp.n_pairs, mdp.n_pairs))
    for a_next in range(A):
        kernel[:, a_next * S:(a_next + 1) * S] = mdp.pair_kernel * behavior.probs[:, a_next][None, :]
    return kernel


def uniform_behavior(mdp: Mdp) -> StochasticPolicy:
    return StochasticPolicy.uniform(mdp.n_states, mdp.n_actions)


def derive_seed(master_seed: int, run_index: int) -> int:
    """Per-run seed: master_seed XOR run_index"""
    return int(master_seed) ^ int(run_index)

