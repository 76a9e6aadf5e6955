"""
Product-defined Lyapunov approximants

    V^t(x) = sum_{l=0}^{t} beta_eps^(-2l) max_{|sigma|=l} ||A_sigma x||_2^2

with beta_eps = (certified JSR upper) + eps. The l = 0 term is ||x||^2.
V^t is convex, homogeneous of degree two, nondecreasing in t, and bounded by
C_eps ||x||^2 with

    C_eps = C0^2 / (1 - (eta / beta_eps)^2),   eta = (upper + beta_eps) / 2,
    C0 = max_{0 <= k < K} eta^(-k) Nbar_k,

where Nbar_k bounds the largest product norm of length k and K is the first
length with Nbar_K <= eta^K.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from src.mdp.policies import Policy
from src.switching.family import SwitchingFamily
from src.switching.jsr import (
    FamilyLike,
    JsrReport,
    as_mode_array,
    matrix_norms,
    product_levels,
)
from src.utils.errors import BudgetExceededError, CertificateError

logger = logging.getLogger(__name__)

DEFAULT_T = 8
DEFAULT_BUDGET = 10 ** 6
DEFAULT_K_CAP = 100_000
CHUNK_ELEMENTS = 4_000_000


@dataclass
class JsrLyapunov:
    """
    Truncated JSR Lyapunov function with its norm-equivalence constant

    Attributes:
        modes: Family matrices, shape (m, n, n)
        beta_eps: Certified rate, anchor + eps
        t: Default truncation depth
        eta: Rate used for the constant, between anchor and beta_eps
        C0: Product-growth prefactor
        C_eps: Norm-equivalence constant
        K: First length with Nbar_K <= eta^K
        anchor: JSR upper bound the rate is built on
        eps: Slack added to the anchor
        levels: Product tables for lengths 1..len(levels)
    """
    modes: np.ndarray
    beta_eps: float
    t: int
    eta: float
    C0: float
    C_eps: float
    K: int
    anchor: float
    eps: float
    budget: int = DEFAULT_BUDGET
    levels: List[np.ndarray] = field(default_factory=list, repr=False)
    family: Optional[SwitchingFamily] = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return self.modes.shape[1]

    def ensure_levels(self, depth: int) -> None:
        """Extend the product tables through length depth"""
        if depth <= len(self.levels):
            return
        m = self.modes.shape[0]
        total = sum(m ** k for k in range(1, depth + 1))
        if total > self.budget:
            raise BudgetExceededError(
                f"V_eps^{depth} needs {total} products, budget is {self.budget}"
            )
        self.levels = [level for _, level in product_levels(self.modes, depth)]

    def mode_of(self, policy: Policy) -> np.ndarray:
        if self.family is None:
            raise CertificateError("Policy modes need a SwitchingFamily-backed certificate")
        return self.family.mode_of(policy)

    def to_dict(self) -> Dict:
        return {
            'type': 'jsr',
            'beta': self.beta_eps,
            'eta': self.eta,
            'C0': self.C0,
            'C_eps': self.C_eps,
            'K': self.K,
            'anchor': self.anchor,
            'eps': self.eps,
            't': self.t,
            'depth': len(self.levels),
            'note': 'K and C0 built from the bracket upper bound, which can only enlarge them',
        }


def _level_max_sq(level: np.ndarray, X: np.ndarray) -> np.ndarray:
    """max over products P of ||P x||^2, for every row x of X"""
    p, n, _ = level.shape
    stacked = level.reshape(p * n, n)
    chunk = max(1, CHUNK_ELEMENTS // (p * n))
    out = np.empty(X.shape[0])
    for start in range(0, X.shape[0], chunk):
        images = (stacked @ X[start:start + chunk].T).reshape(p, n, -1)
        out[start:start + chunk] = np.max(np.sum(images ** 2, axis=1), axis=0)
    return out


def veps_eval(lyap: JsrLyapunov, x: np.ndarray, t: Optional[int] = None) -> Union[float, np.ndarray]:
    """
    V^t at x (one vector) or at every row of x (a batch)

    Raises:
        BudgetExceededError: If the product tables do not fit the budget
    """
    t = lyap.t if t is None else int(t)
    if t < 0:
        raise ValueError(f"t must be >= 0, got {t}")
    X = np.atleast_2d(np.asarray(x, dtype=float))
    lyap.ensure_levels(t)

    total = np.sum(X ** 2, axis=1)
    weight = 1.0
    inv_beta_sq = lyap.beta_eps ** -2
    for level in lyap.levels[:t]:
        weight *= inv_beta_sq
        total = total + weight * _level_max_sq(level, X)
    return float(total[0]) if np.ndim(x) == 1 else total


def norm_envelope(
    exact: Sequence[float],
    n: int,
    rho_inf: float,
    eta: float,
    k_cap: int,
) -> List[float]:
    """
    Upper bounds Nbar_0, Nbar_1, ... on the largest product 2-norm

    Exact maxima are used where available; beyond them the bound is the
    smaller of sqrt(n) rho_inf^k and min_j N_j Nbar_{k-j}. The envelope stops
    at the first k with Nbar_k <= eta^k, which is its last entry.

    Raises:
        CertificateError: If no such k exists up to k_cap
    """
    env = [1.0]
    for k in range(1, k_cap + 1):
        if k <= len(exact):
            bound = exact[k - 1]
        else:
            bound = np.sqrt(n) * rho_inf ** k
            for j in range(1, len(exact) + 1):
                bound = min(bound, exact[j - 1] * env[k - j])
        env.append(float(bound))
        if bound <= eta ** k:
            return env
    raise CertificateError(
        f"No length K <= {k_cap} with max product norm <= eta^K (eta = {eta:.6f}); "
        f"increase eps or the exploration depth"
    )


def veps_constants(
    family: FamilyLike,
    jsr_report: JsrReport,
    eps: float,
    t: int = DEFAULT_T,
    budget: int = DEFAULT_BUDGET,
    k_cap: int = DEFAULT_K_CAP,
) -> JsrLyapunov:
    """
    Build V^t and its constants from a JSR bracket

    Args:
        family: Switching family or matrix stack
        jsr_report: Bracket for the same family
        eps: Slack above the certified upper bound
        t: Truncation depth
        budget: Product budget for the tables
        k_cap: Longest length searched for K

    Raises:
        CertificateError: If beta_eps >= 1 or K is not found within k_cap
    """
    if eps <= 0:
        raise CertificateError(f"eps must be positive, got {eps}")
    modes = as_mode_array(family)
    lyap = JsrLyapunov(
        modes=modes, beta_eps=1.0, t=int(t), eta=1.0, C0=1.0, C_eps=1.0, K=0,
        anchor=jsr_report.certified_upper, eps=eps, budget=budget,
        family=family if isinstance(family, SwitchingFamily) else None,
    )
    lyap.ensure_levels(t + 1)

    table_profile = [float(matrix_norms(level).max()) for level in lyap.levels]
    report_profile = list(jsr_report.norm_profile) if jsr_report.norm_used == "spectral" else []
    exact = max(report_profile, table_profile, key=len)
    rho_inf = float(matrix_norms(modes, "inf").max())

    # the envelope crosses eta^k only if eta beats one of its growth rates
    supported = min(min(e ** (1.0 / j) for j, e in enumerate(exact, start=1)), rho_inf)
    anchor = jsr_report.certified_upper
    if anchor + 0.5 * eps <= supported:
        logger.warning(
            f"Bracket upper {anchor:.6f} is below the norm growth the tables support; "
            f"anchoring at {supported:.6f}"
        )
        anchor = supported

    beta_eps = anchor + eps
    if beta_eps >= 1.0:
        raise CertificateError(
            f"beta_eps = {anchor:.6f} + {eps} = {beta_eps:.6f} is not below 1"
        )
    eta = 0.5 * (anchor + beta_eps)

    env = norm_envelope(exact, modes.shape[1], rho_inf, eta, k_cap)
    K = len(env) - 1
    C0 = max(env[r] / eta ** r for r in range(K))
    C_eps = C0 ** 2 / (1.0 - (eta / beta_eps) ** 2)

    lyap.anchor, lyap.beta_eps, lyap.eta = anchor, beta_eps, eta
    lyap.K, lyap.C0, lyap.C_eps = K, C0, C_eps
    logger.debug(f"V_eps constants: beta={beta_eps:.6f} eta={eta:.6f} K={K} C0={C0:.4f} C_eps={C_eps:.4f}")
    return lyap


def veps_drift_check(
    lyap: JsrLyapunov,
    xs: np.ndarray,
    policies: Sequence[Union[Policy, np.ndarray]],
    t: Optional[int] = None,
) -> float:
    """
    Largest positive value of V^t(M x) - beta^2 (V^{t+1}(x) - ||x||^2)

    Policies may be deterministic or stochastic (modes resolved through the
    family), or explicit matrices.
    """
    t = lyap.t if t is None else int(t)
    X = np.atleast_2d(np.asarray(xs, dtype=float))
    rhs = lyap.beta_eps ** 2 * (veps_eval(lyap, X, t + 1) - np.sum(X ** 2, axis=1))

    violation = 0.0
    for policy in policies:
        M = np.asarray(policy, dtype=float) if isinstance(policy, np.ndarray) else lyap.mode_of(policy)
        lhs = veps_eval(lyap, X @ M.T, t)
        violation = max(violation, float(np.max(lhs - rhs)))
    return violation
