"""
Switching-system matrices of constant-step Q-learning

    direct mode     M_mu = I - alpha D + alpha gamma D P Pi^mu
    affine mode     (A_pi, b_pi) with b_pi = alpha gamma D P (Pi^pi - Pi^pi*) Q*
    sample-path     M_hat_{i,mu} = I - alpha e_i e_i^T + alpha gamma e_i e_i^T P Pi^mu
    Markov bias     b^M = (e_X e_X^T - D)(gamma P Pi^mu - I) e

plus the trajectory checks of the exact error recursions they define.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Dict, List, Union

import numpy as np

from src.mdp.model import DEFAULT_POLICY_CAP, Mdp, q_array
from src.mdp.policies import (
    DeterministicPolicy,
    Policy,
    StochasticPolicy,
    enumerate_policies,
    greedy_policy,
    hull_weights,
    linearization_residual,
    linearize_max,
    pi_matrix,
)
from src.utils.errors import (
    ConfigError,
    DimensionMismatchError,
    InvariantViolationError,
)
from src.utils.io import save_matrix_csv

if TYPE_CHECKING:
    from src.learning.simulator import TrajectoryRecord

logger = logging.getLogger(__name__)

DIST_TOL = 1e-12
ROW_SUM_TOL = 1e-12


def check_step_size(alpha: float) -> float:
    alpha = float(alpha)
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"Step size alpha must lie in (0, 1), got {alpha}")
    return alpha


def check_distribution(d: np.ndarray, n_pairs: int) -> np.ndarray:
    """Strictly positive distribution over state-action pairs"""
    d = np.asarray(d, dtype=float)
    if d.shape != (n_pairs,):
        raise DimensionMismatchError(f"Sampling distribution has shape {d.shape}, expected ({n_pairs},)")
    if np.any(d <= 0):
        raise ConfigError("Sampling distribution must be strictly positive on every pair")
    if abs(d.sum() - 1.0) > DIST_TOL:
        raise ConfigError(f"Sampling distribution sums to {d.sum():.15f}, not 1")
    return d


def direct_mode(mdp: Mdp, d: np.ndarray, alpha: float, policy: Policy) -> np.ndarray:
    """M_mu = I - alpha D + alpha gamma D P Pi^mu"""
    alpha = check_step_size(alpha)
    d = check_distribution(d, mdp.n_pairs)
    Pi = pi_matrix(policy, mdp.n_states, mdp.n_actions)
    DP = d[:, None] * mdp.pair_kernel
    return np.eye(mdp.n_pairs) - alpha * np.diag(d) + alpha * mdp.gamma * DP @ Pi


@dataclass
class AffineMode:
    """
    Affine switching pair (A_pi, b_pi) for pi = greedy(Q)

    A equals the direct mode of the same deterministic policy.
    """
    A: np.ndarray
    b: np.ndarray
    policy: DeterministicPolicy
    optimal_policy: DeterministicPolicy


def affine_mode(
    mdp: Mdp,
    d: np.ndarray,
    alpha: float,
    q: np.ndarray,
    q_star: np.ndarray,
) -> AffineMode:
    q = q_array(q, mdp)
    q_star = q_array(q_star, mdp)
    pi_q = greedy_policy(q, mdp.n_states, mdp.n_actions)
    pi_star = greedy_policy(q_star, mdp.n_states, mdp.n_actions)

    A = direct_mode(mdp, d, alpha, pi_q)
    d = np.asarray(d, dtype=float)
    gap = pi_matrix(pi_q) - pi_matrix(pi_star)
    b = alpha * mdp.gamma * (d[:, None] * mdp.pair_kernel) @ (gap @ q_star)
    return AffineMode(A, b, pi_q, pi_star)


def markov_mode(mdp: Mdp, alpha: float, coord: int, policy: Policy) -> np.ndarray:
    """Sample-path matrix at coordinate i; only row i differs from the identity"""
    alpha = check_step_size(alpha)
    if not 0 <= coord < mdp.n_pairs:
        raise DimensionMismatchError(f"Coordinate {coord} outside range(0, {mdp.n_pairs})")
    Pi = pi_matrix(policy, mdp.n_states, mdp.n_actions)
    M = np.eye(mdp.n_pairs)
    M[coord, coord] -= alpha
    M[coord] += alpha * mdp.gamma * (mdp.pair_kernel[coord] @ Pi)
    return M


def markov_bias(
    mdp: Mdp,
    d: np.ndarray,
    coord: int,
    policy: Policy,
    e: np.ndarray,
) -> np.ndarray:
    """
    Coordinate-sampling bias (e_X e_X^T - D)(gamma P Pi^mu - I) e

    Carries no alpha: M_hat_{X,mu} e = M_mu e + alpha * b^M.
    """
    d = np.asarray(d, dtype=float)
    e = np.asarray(e, dtype=float)
    if d.shape != (mdp.n_pairs,) or e.shape != (mdp.n_pairs,):
        raise DimensionMismatchError("Bias inputs do not match the number of state-action pairs")
    if not 0 <= coord < mdp.n_pairs:
        raise DimensionMismatchError(f"Coordinate {coord} outside range(0, {mdp.n_pairs})")
    drift = mdp.gamma * mdp.pair_kernel @ (pi_matrix(policy, mdp.n_states, mdp.n_actions) @ e) - e
    bias = -d * drift
    bias[coord] += drift[coord]
    return bias


@dataclass
class SwitchingFamily:
    """
    Direct switching family {M_pi : pi deterministic}

    Attributes:
        mdp: Underlying model
        d: Sampling distribution (diagonal of D)
        alpha: Step size
        policies: Deterministic policies in lexicographic order
        modes: Array of shape (n_policies, n, n) aligned with policies
    """
    mdp: Mdp
    d: np.ndarray
    alpha: float
    policies: List[DeterministicPolicy]
    modes: np.ndarray
    _lookup: Dict[DeterministicPolicy, int] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._lookup = {p: i for i, p in enumerate(self.policies)}

    @property
    def D(self) -> np.ndarray:
        return np.diag(self.d)

    @property
    def d_min(self) -> float:
        return float(np.min(self.d))

    @property
    def gamma(self) -> float:
        return self.mdp.gamma

    @property
    def dim(self) -> int:
        return self.modes.shape[1]

    def __len__(self) -> int:
        return self.modes.shape[0]

    def mode_of(self, policy: Policy) -> np.ndarray:
        """M_mu; deterministic policies are read from the family"""
        if isinstance(policy, DeterministicPolicy) and policy in self._lookup:
            return self.modes[self._lookup[policy]]
        return direct_mode(self.mdp, self.d, self.alpha, policy)

    def to_csv(self, out_dir: Union[str, Path]) -> List[Path]:
        """One headerless CSV per mode, named by the policy's action string"""
        out_dir = Path(out_dir)
        return [
            save_matrix_csv(M, out_dir / f"mode_{p.label()}.csv")
            for p, M in zip(self.policies, self.modes)
        ]


def build_family(
    mdp: Mdp,
    d: np.ndarray,
    alpha: float,
    cap: int = DEFAULT_POLICY_CAP,
) -> SwitchingFamily:
    """
    Assemble all direct modes and assert their row-sum structure

    Raises:
        InvariantViolationError: A mode has a negative entry or a row sum
            above 1 - alpha d_min (1 - gamma)
    """
    alpha = check_step_size(alpha)
    d = check_distribution(d, mdp.n_pairs)
    policies = enumerate_policies(mdp.n_states, mdp.n_actions, cap)
    modes = np.stack([direct_mode(mdp, d, alpha, p) for p in policies])

    if np.any(modes < -ROW_SUM_TOL):
        raise InvariantViolationError("Direct mode with a negative entry")
    rho_row = 1.0 - alpha * float(d.min()) * (1.0 - mdp.gamma)
    worst = float(np.max(modes.sum(axis=2)))
    if worst > rho_row + ROW_SUM_TOL:
        raise InvariantViolationError(f"Row sum {worst:.15f} exceeds rho_row = {rho_row:.15f}")

    logger.debug(f"Built {len(policies)} modes of size {mdp.n_pairs} (max row sum {worst:.6f})")
    return SwitchingFamily(mdp, d, alpha, policies, modes)


def hull_reconstruction_error(family: SwitchingFamily, mu: StochasticPolicy) -> float:
    """||sum_pi c_pi(mu) M_pi - M_mu||_max"""
    weights = np.array(list(hull_weights(mu, cap=len(family)).values()))
    mixed = np.tensordot(weights, family.modes, axes=1)
    return float(np.max(np.abs(mixed - family.mode_of(mu))))


# ----------------------------------------------------------------------
# Trajectory checks
# ----------------------------------------------------------------------

def _errors(record: "TrajectoryRecord") -> np.ndarray:
    if record.q is None:
        raise DimensionMismatchError("Trajectory record carries no Q snapshots")
    return record.q - record.q_star[None, :]


def direct_residuals(record: "TrajectoryRecord", family: SwitchingFamily) -> np.ndarray:
    """Per-step ||e_{k+1} - M_{mu_k} e_k - alpha w_k||_inf"""
    e = _errors(record)
    n_states = family.mdp.n_states
    out = np.empty(record.steps)
    for k in range(record.steps):
        mu = linearize_max(record.q[k], record.q_star, n_states)
        pred = family.mode_of(mu) @ e[k] + record.alpha * record.noise[k]
        out[k] = np.max(np.abs(e[k + 1] - pred))
    return out


def verify_direct_representation(record: "TrajectoryRecord", family: SwitchingFamily) -> float:
    """max_k ||e_{k+1} - M_{mu_k} e_k - alpha w_k||_inf on an i.i.d. record"""
    if record.noise is None:
        raise DimensionMismatchError("Trajectory record carries no noise terms")
    if record.steps == 0:
        return 0.0
    return float(np.max(direct_residuals(record, family)))


def verify_affine_representation(record: "TrajectoryRecord", family: SwitchingFamily) -> float:
    """max_k ||e_{k+1} - A_{pi_k} e_k - b_{pi_k} - alpha w_k||_inf"""
    if record.noise is None:
        raise DimensionMismatchError("Trajectory record carries no noise terms")
    e = _errors(record)
    worst = 0.0
    for k in range(record.steps):
        mode = affine_mode(family.mdp, family.d, family.alpha, record.q[k], record.q_star)
        pred = mode.A @ e[k] + mode.b + record.alpha * record.noise[k]
        worst = max(worst, float(np.max(np.abs(e[k + 1] - pred))))
    return worst


def verify_markov_representation(
    record: "TrajectoryRecord",
    family: SwitchingFamily,
) -> Dict[str, float]:
    """
    Sample-path checks on a Markov record

    Returns:
        sample_path: max_k ||e_{k+1} - M_hat_{X_k,mu_k} e_k - alpha xi_{k+1}||_inf
        decomposition: max_k ||e_{k+1} - M_{mu_k} e_k - alpha b^M_k - alpha xi_{k+1}||_inf
            with M_{mu_k} built from the stationary distribution in the family
    """
    if record.noise is None:
        raise DimensionMismatchError("Trajectory record carries no noise terms")
    e = _errors(record)
    mdp = family.mdp
    sample_path = 0.0
    decomposition = 0.0
    for k in range(record.steps):
        mu = linearize_max(record.q[k], record.q_star, mdp.n_states)
        x = int(record.coords[k])
        xi = record.alpha * record.noise[k]
        pred = markov_mode(mdp, record.alpha, x, mu) @ e[k] + xi
        sample_path = max(sample_path, float(np.max(np.abs(e[k + 1] - pred))))
        bias = markov_bias(mdp, family.d, x, mu, e[k])
        pred = family.mode_of(mu) @ e[k] + record.alpha * bias + xi
        decomposition = max(decomposition, float(np.max(np.abs(e[k + 1] - pred))))
    return {'sample_path': sample_path, 'decomposition': decomposition}


def max_linearization_residual(record: "TrajectoryRecord", stride: int = 1) -> float:
    """Largest linearization residual over the recorded Q snapshots"""
    n_states = record.n_states
    worst = 0.0
    for k in range(0, record.q.shape[0], stride):
        worst = max(worst, linearization_residual(record.q[k], record.q_star, n_states))
    return worst
