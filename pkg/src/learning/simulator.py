"""
Constant-step Q-learning simulation

Both observation models update a single coordinate per step:

    Q_{k+1}(x) = Q_k(x) + alpha (r + gamma max_u Q_k(s', u) - Q_k(x)),  x = (s, a)

The exact noise terms are extracted alongside:

    i.i.d.   w_k = e_x (TD target - Q_k(x)) - D (F(Q_k) - Q_k)
    Markov   xi_{k+1} = e_x (TD target - F(Q_k)(x))

Runs sharing an MDP are advanced in lockstep; each run keeps its own Philox
stream so a batch reproduces the single-run records bit for bit.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from src.learning.samplers import (
    IidSampler,
    MarkovSampler,
    cumulative_rows,
    pick,
    step_uniforms,
)
from src.mdp.model import Mdp, QVector, bellman_optimality, q_array, solve_q_star
from src.switching.family import check_step_size
from src.utils.errors import DimensionMismatchError, InvariantViolationError

logger = logging.getLogger(__name__)

Sampler = Union[IidSampler, MarkovSampler]

FULL_RECORD_LIMIT = 10 ** 5
BOUND_TOL = 1e-9


@dataclass
class SampleTuple:
    """One observed transition"""
    coord: int
    next_state: int
    reward: float
    next_coord: Optional[int] = None


@dataclass
class NoiseConstants:
    """
    Noise envelope of a run started at Q_0

    Attributes:
        w_max: (R_max + (1 + gamma) B_Q)^2
        b_q: max(||Q_0||_inf, R_max / (1 - gamma))
        normalized: 4 R_max^2 / (1 - gamma)^2 when ||Q_0||_inf <= R_max / (1 - gamma)
    """
    w_max: float
    b_q: float
    normalized: Optional[float]


def noise_constant(mdp: Mdp, q0: Union[QVector, np.ndarray]) -> NoiseConstants:
    q0 = q_array(q0, mdp)
    envelope = mdp.r_max / (1.0 - mdp.gamma)
    q0_norm = float(np.max(np.abs(q0)))
    b_q = max(q0_norm, envelope)
    w_max = (mdp.r_max + (1.0 + mdp.gamma) * b_q) ** 2
    normalized = 4.0 * mdp.r_max ** 2 / (1.0 - mdp.gamma) ** 2 if q0_norm <= envelope else None
    return NoiseConstants(w_max=w_max, b_q=b_q, normalized=normalized)


def td_target_law(mdp: Mdp, q: Union[QVector, np.ndarray], coord: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Exact law of r + gamma max_u Q(s', u) at a fixed pair

    Returns:
        (values, probs) with distinct sorted values
    """
    values = q_array(q, mdp)
    if not 0 <= coord < mdp.n_pairs:
        raise DimensionMismatchError(f"Coordinate {coord} out of range")
    v = values.reshape(-1, mdp.n_states).max(axis=0)
    targets = mdp.pair_rewards[coord] + mdp.gamma * v
    probs = mdp.pair_kernel[coord]
    support = probs > 0
    distinct, inverse = np.unique(targets[support], return_inverse=True)
    return distinct, np.bincount(inverse, weights=probs[support])


def _td_update(q: np.ndarray, coord: int, next_state: int, reward: float,
               alpha: float, gamma: float, n_states: int) -> Tuple[np.ndarray, float]:
    target = reward + gamma * np.max(q[next_state::n_states])
    q_next = q.copy()
    q_next[coord] = q[coord] + alpha * (target - q[coord])
    return q_next, target


def qlearn_step_iid(
    q: Union[QVector, np.ndarray],
    sampler: IidSampler,
    mdp: Mdp,
    alpha: float,
    u: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, np.ndarray, SampleTuple]:
    """
    One i.i.d. Q-learning step

    Args:
        q: Current Q
        sampler: Source of (s, a); its stream is advanced unless u is given
        mdp: Model
        alpha: Step size
        u: Optional four uniforms replacing the sampler draw

    Returns:
        (Q_{k+1}, w_k, sampled tuple)
    """
    values = q_array(q, mdp)
    u = sampler.draw() if u is None else u
    coord = sampler.sample_coord(u[0])
    next_state = int(pick(_kernel_cdf(mdp)[coord], u[1]))
    reward = float(mdp.r[coord % mdp.n_states, coord // mdp.n_states, next_state])
    q_next, target = _td_update(values, coord, next_state, reward, alpha, mdp.gamma, mdp.n_states)

    drift = np.asarray(bellman_optimality(mdp, values)) - values
    w = -sampler.d * drift
    w[coord] += target - values[coord]
    return q_next, w, SampleTuple(coord, next_state, reward)


def qlearn_step_markov(
    q: Union[QVector, np.ndarray],
    sampler: MarkovSampler,
    mdp: Mdp,
    alpha: float,
    u: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, np.ndarray, SampleTuple]:
    """
    One single-trajectory step at the sampler's current pair X_k

    The sampler moves to X_{k+1} = (s', a') with a' ~ b(.|s').

    Returns:
        (Q_{k+1}, xi_{k+1}, sampled tuple carrying next_coord)
    """
    values = q_array(q, mdp)
    u = sampler.draw() if u is None else u
    coord = sampler.coord
    next_state = int(pick(_kernel_cdf(mdp)[coord], u[1]))
    reward = float(mdp.r[coord % mdp.n_states, coord // mdp.n_states, next_state])
    q_next, target = _td_update(values, coord, next_state, reward, alpha, mdp.gamma, mdp.n_states)

    xi = np.zeros(mdp.n_pairs)
    xi[coord] = target - np.asarray(bellman_optimality(mdp, values))[coord]
    next_coord = sampler.sample_action(next_state, u[2]) * mdp.n_states + next_state
    sampler.coord = next_coord
    return q_next, xi, SampleTuple(coord, next_state, reward, next_coord)


def _kernel_cdf(mdp: Mdp) -> np.ndarray:
    return cumulative_rows(mdp.pair_kernel)


@dataclass
class RecordOptions:
    """
    What a trajectory keeps

    Attributes:
        keep_q: Full Q snapshots (default on up to 10^5 steps)
        keep_noise: Noise vector per step (requires keep_q)
        record_every: Spacing of the recorded error summaries
    """
    keep_q: Optional[bool] = None
    keep_noise: bool = True
    record_every: int = 1


@dataclass
class TrajectoryRecord:
    """
    One simulated run

    Attributes:
        mode: 'iid' or 'markov'
        alpha: Step size
        seed: Philox key
        q_star: Comparison point
        b_q: Sup-norm envelope max(||Q_0||_inf, R_max/(1-gamma))
        ks: Recorded iteration indices
        errors: e_k at each recorded k, shape (len(ks), n)
        q: Snapshots Q_0..Q_steps, shape (steps+1, n), or None
        noise: w_k (iid) or xi_{k+1} (markov) per step, or None
        coords / next_states / rewards: Observed transitions
    """
    mode: str
    alpha: float
    seed: int
    n_states: int
    n_actions: int
    q_star: np.ndarray
    b_q: float
    ks: np.ndarray
    errors: np.ndarray
    coords: np.ndarray
    next_states: np.ndarray
    rewards: np.ndarray
    q: Optional[np.ndarray] = None
    noise: Optional[np.ndarray] = None
    final_q: Optional[np.ndarray] = None

    @property
    def steps(self) -> int:
        return int(self.coords.shape[0])

    @property
    def err_inf(self) -> np.ndarray:
        return np.max(np.abs(self.errors), axis=1)

    @property
    def err_2(self) -> np.ndarray:
        return np.linalg.norm(self.errors, axis=1)


@dataclass
class BatchResult:
    """Error snapshots of many runs at shared k, shape (n_runs, len(ks), n)"""
    ks: np.ndarray
    errors: np.ndarray
    seeds: List[int] = field(default_factory=list)


def recorded_ks(steps: int, record_every: int) -> np.ndarray:
    ks = np.arange(0, steps + 1, max(1, record_every))
    if ks[-1] != steps:
        ks = np.append(ks, steps)
    return ks


class _Engine:
    """Lockstep simulation of several runs over one MDP"""

    def __init__(self, mode: str, mdp: Mdp, sampler: Sampler, alpha: float):
        if mode not in ('iid', 'markov'):
            raise ValueError(f"Unknown mode '{mode}' (expected 'iid' or 'markov')")
        if mode == 'iid' and not isinstance(sampler, IidSampler):
            raise TypeError("i.i.d. mode needs an IidSampler")
        if mode == 'markov' and not isinstance(sampler, MarkovSampler):
            raise TypeError("Markov mode needs a MarkovSampler")
        self.mode = mode
        self.mdp = mdp
        self.sampler = sampler
        self.alpha = check_step_size(alpha)
        self.kernel_cdf = _kernel_cdf(mdp)
        self.expected_reward = np.sum(mdp.pair_kernel * mdp.pair_rewards, axis=1)

    def run(
        self,
        seeds: Sequence[int],
        steps: int,
        q0: np.ndarray,
        q_star: np.ndarray,
        ks: np.ndarray,
        keep_q: bool = False,
        keep_noise: bool = False,
    ) -> dict:
        mdp = self.mdp
        S, n = mdp.n_states, mdp.n_pairs
        R = len(seeds)
        rows = np.arange(R)

        b_q = max(float(np.max(np.abs(q0))), mdp.r_max / (1.0 - mdp.gamma))
        ceiling = b_q * (1.0 + BOUND_TOL) + BOUND_TOL

        U = np.stack([step_uniforms(seed, steps) for seed in seeds]) if steps else np.zeros((R, 0, 4))
        Q = np.tile(q0, (R, 1))
        coords = np.zeros((R, steps), dtype=int)
        next_states = np.zeros((R, steps), dtype=int)
        rewards = np.zeros((R, steps))
        snapshots = np.zeros((R, steps + 1, n)) if keep_q else None
        noise = np.zeros((R, steps, n)) if keep_noise else None
        errors = np.zeros((R, len(ks), n))
        if keep_q:
            snapshots[:, 0] = Q

        k_slot = {int(k): j for j, k in enumerate(ks)}
        if 0 in k_slot:
            errors[:, k_slot[0]] = Q - q_star

        if self.mode == 'iid':
            pair_cdf = cumulative_rows(self.sampler.d)[0]
        else:
            x = np.full(R, self.sampler.coord, dtype=int)
            action_cdf = self.sampler.action_cdf

        for k in range(steps):
            u = U[:, k]
            if self.mode == 'iid':
                x = pick(pair_cdf, u[:, 0])
            s_next = pick(self.kernel_cdf[x], u[:, 1])
            r = mdp.r[x % S, x // S, s_next]
            v_next = Q.reshape(R, -1, S).max(axis=1)[rows, s_next]
            target = r + mdp.gamma * v_next
            old = Q[rows, x]

            if keep_noise:
                fq = self.expected_reward + mdp.gamma * Q.reshape(R, -1, S).max(axis=1) @ mdp.pair_kernel.T
                if self.mode == 'iid':
                    step_noise = -self.sampler.d[None, :] * (fq - Q)
                    step_noise[rows, x] += target - old
                else:
                    step_noise = np.zeros((R, n))
                    step_noise[rows, x] = target - fq[rows, x]
                noise[:, k] = step_noise

            new = old + self.alpha * (target - old)
            if np.any(np.abs(new) > ceiling):
                run = int(np.argmax(np.abs(new)))
                raise InvariantViolationError(
                    f"Run seed {seeds[run]} step {k}: |Q| = {abs(new[run]):.6g} exceeds B_Q = {b_q:.6g}"
                )
            Q[rows, x] = new

            coords[:, k] = x
            next_states[:, k] = s_next
            rewards[:, k] = r
            if self.mode == 'markov':
                a_next = pick(action_cdf[s_next], u[:, 2])
                x = a_next * S + s_next
            if keep_q:
                snapshots[:, k + 1] = Q
            if k + 1 in k_slot:
                errors[:, k_slot[k + 1]] = Q - q_star

        return {
            'b_q': b_q,
            'errors': errors,
            'coords': coords,
            'next_states': next_states,
            'rewards': rewards,
            'q': snapshots,
            'noise': noise,
            'final_q': Q,
        }


def run_trajectory(
    mode: str,
    mdp: Mdp,
    sampler: Sampler,
    alpha: float,
    steps: int,
    q0: Optional[np.ndarray] = None,
    q_star: Optional[np.ndarray] = None,
    options: Optional[RecordOptions] = None,
) -> TrajectoryRecord:
    """
    Simulate one run driven by the sampler's seed

    The boundedness envelope ||Q_k||_inf <= B_Q is asserted at every step.

    Raises:
        ConfigError: If alpha is outside (0, 1)
        InvariantViolationError: If an iterate leaves the envelope
    """
    if steps < 0:
        raise ValueError(f"steps must be >= 0, got {steps}")
    options = options or RecordOptions()
    keep_q = options.keep_q if options.keep_q is not None else steps <= FULL_RECORD_LIMIT
    keep_noise = keep_q and options.keep_noise

    q0 = np.zeros(mdp.n_pairs) if q0 is None else q_array(q0, mdp).copy()
    q_star = np.asarray(solve_q_star(mdp)) if q_star is None else q_array(q_star, mdp)
    ks = recorded_ks(steps, options.record_every)

    out = _Engine(mode, mdp, sampler, alpha).run(
        [sampler.seed], steps, q0, q_star, ks, keep_q=keep_q, keep_noise=keep_noise
    )
    return TrajectoryRecord(
        mode=mode,
        alpha=float(alpha),
        seed=int(sampler.seed),
        n_states=mdp.n_states,
        n_actions=mdp.n_actions,
        q_star=np.array(q_star),
        b_q=out['b_q'],
        ks=ks,
        errors=out['errors'][0],
        coords=out['coords'][0],
        next_states=out['next_states'][0],
        rewards=out['rewards'][0],
        q=None if out['q'] is None else out['q'][0],
        noise=None if out['noise'] is None else out['noise'][0],
        final_q=out['final_q'][0],
    )


def simulate_runs(
    mode: str,
    mdp: Mdp,
    sampler: Sampler,
    alpha: float,
    steps: int,
    seeds: Sequence[int],
    q0: np.ndarray,
    q_star: np.ndarray,
    record_every: int = 1,
) -> BatchResult:
    """Error snapshots of independent runs, one seed per run"""
    ks = recorded_ks(steps, record_every)
    out = _Engine(mode, mdp, sampler, alpha).run(
        list(seeds), steps, q_array(q0, mdp), q_array(q_star, mdp), ks
    )
    return BatchResult(ks=ks, errors=out['errors'], seeds=[int(s) for s in seeds])


def sample_noise(
    mode: str,
    mdp: Mdp,
    q: Union[QVector, np.ndarray],
    n_samples: int,
    seed: int,
    d: Optional[np.ndarray] = None,
    coord: Optional[int] = None,
) -> np.ndarray:
    """
    Independent noise draws at a fixed Q

    i.i.d. mode resamples (s, a, s') from d; Markov mode keeps X = coord and
    resamples s'. Returns an array of shape (n_samples, n).
    """
    values = q_array(q, mdp)
    S = mdp.n_states
    U = step_uniforms(seed, n_samples)
    drift = np.asarray(bellman_optimality(mdp, values)) - values
    rows = np.arange(n_samples)

    if mode == 'iid':
        if d is None:
            raise ValueError("i.i.d. noise needs the sampling distribution d")
        x = pick(cumulative_rows(d)[0], U[:, 0])
    elif mode == 'markov':
        if coord is None:
            raise ValueError("Markov noise needs a fixed coordinate")
        x = np.full(n_samples, int(coord))
    else:
        raise ValueError(f"Unknown mode '{mode}'")

    s_next = pick(_kernel_cdf(mdp)[x], U[:, 1])
    target = mdp.r[x % S, x // S, s_next] + mdp.gamma * values.reshape(-1, S).max(axis=0)[s_next]

    if mode == 'iid':
        out = np.tile(-np.asarray(d) * drift, (n_samples, 1))
        out[rows, x] += target - values[x]
    else:
        out = np.zeros((n_samples, mdp.n_pairs))
        out[rows, x] = target - values[x] - drift[x]
    return out
