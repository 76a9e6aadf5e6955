"""
Common quadratic Lyapunov certificates

A pair (H, beta) with H symmetric positive definite certifies the family when
M^T H M <= beta^2 H (Loewner order) for every mode. The search below is a
heuristic fixed-point iteration; its failure never means no certificate exists.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy import linalg

from src.mdp.policies import Policy, hull_weights
from src.switching.family import SwitchingFamily
from src.switching.jsr import FamilyLike, as_mode_array
from src.utils.errors import CertificateError

logger = logging.getLogger(__name__)

SYMMETRY_TOL = 1e-12
PSD_TOL = 1e-10
SEARCH_RTOL = 1e-12
DEFAULT_MAX_ITER = 10_000
DIVERGENCE_NORM = 1e12

FOUND = "found"
PROCEDURE_FAILED = "procedure_failed"


@dataclass(frozen=True)
class QuadraticCertificate:
    """
    Attributes:
        H: Symmetric matrix defining V_H(x) = x^T H x
        beta: Certified contraction rate
        lambda_min / lambda_max: Extreme eigenvalues of H
        feasible: Every mode satisfies M^T H M <= beta^2 H within PSD_TOL
        worst_margin: Smallest eigenvalue of beta^2 H - M^T H M over modes
    """
    H: np.ndarray
    beta: float
    lambda_min: float
    lambda_max: float
    feasible: bool
    worst_margin: float

    @property
    def condition(self) -> float:
        return self.lambda_max / self.lambda_min

    def value(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=float)
        return float(x @ self.H @ x)

    def to_dict(self) -> Dict:
        return {
            'type': 'quad',
            'beta': self.beta,
            'H': self.H.tolist(),
            'lambda_min': self.lambda_min,
            'lambda_max': self.lambda_max,
            'feasible': self.feasible,
            'worst_margin': self.worst_margin,
        }


@dataclass
class QuadSearchResult:
    """Outcome of quad_search; status is 'found' or 'procedure_failed'"""
    status: str
    certificate: Optional[QuadraticCertificate]
    tried: List[Dict]

    @property
    def found(self) -> bool:
        return self.status == FOUND

    def to_dict(self) -> Dict:
        return {
            'status': self.status,
            'certificate': None if self.certificate is None else self.certificate.to_dict(),
            'tried': self.tried,
        }


def _symmetrize(A: np.ndarray) -> np.ndarray:
    return 0.5 * (A + A.T)


def quad_verify(family: FamilyLike, H: np.ndarray, beta: float) -> QuadraticCertificate:
    """
    Check M^T H M <= beta^2 H for every mode

    Raises:
        CertificateError: If H is not symmetric or beta is outside (0, 1)
    """
    H = np.asarray(H, dtype=float)
    if not 0.0 < beta < 1.0:
        raise CertificateError(f"beta must lie in (0, 1), got {beta}")
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise CertificateError(f"H must be square, got shape {H.shape}")
    asym = float(np.max(np.abs(H - H.T))) if H.size else 0.0
    if asym > SYMMETRY_TOL:
        raise CertificateError(f"H is not symmetric (max asymmetry {asym:.3e})")

    modes = as_mode_array(family)
    eig_H = linalg.eigvalsh(H)
    margin = min(
        float(linalg.eigvalsh(_symmetrize(beta ** 2 * H - M.T @ H @ M))[0])
        for M in modes
    )
    feasible = bool(margin >= -PSD_TOL and eig_H[0] > 0.0)
    return QuadraticCertificate(
        H=H.copy(),
        beta=float(beta),
        lambda_min=float(eig_H[0]),
        lambda_max=float(eig_H[-1]),
        feasible=feasible,
        worst_margin=margin,
    )


def _averaged_fixed_point(modes: np.ndarray, beta: float, max_iter: int) -> Optional[np.ndarray]:
    """H = I + beta^-2 mean_pi M^T H M by iteration; None on divergence or no convergence"""
    n = modes.shape[1]
    eye = np.eye(n)
    H = eye.copy()
    scale = 1.0 / (beta ** 2 * modes.shape[0])
    for _ in range(max_iter):
        H_next = _symmetrize(eye + scale * np.einsum('pji,jk,pkl->il', modes, H, modes))
        size = float(np.linalg.norm(H_next))
        if not np.isfinite(size) or size > DIVERGENCE_NORM:
            return None
        if np.linalg.norm(H_next - H) <= SEARCH_RTOL * size:
            return H_next
        H = H_next
    return None


def quad_search(
    family: FamilyLike,
    beta_grid: Sequence[float],
    max_iter: int = DEFAULT_MAX_ITER,
) -> QuadSearchResult:
    """
    Heuristic search for a common quadratic certificate

    Tries each beta from tightest to loosest: iterate the averaged map
    H <- I + beta^-2 mean M^T H M to its fixed point, then verify. The first
    verified pair is returned. For a single mode the fixed point is the
    discrete Lyapunov solution, so the search is exact there.

    Raises:
        CertificateError: If a grid value is outside (0, 1)
    """
    modes = as_mode_array(family)
    tried: List[Dict] = []
    for beta in sorted(float(b) for b in beta_grid):
        if not 0.0 < beta < 1.0:
            raise CertificateError(f"beta grid values must lie in (0, 1), got {beta}")
        H = _averaged_fixed_point(modes, beta, max_iter)
        if H is None:
            tried.append({'beta': beta, 'outcome': 'diverged'})
            continue
        cert = quad_verify(modes, H, beta)
        tried.append({'beta': beta, 'outcome': 'verified' if cert.feasible else 'rejected',
                      'worst_margin': cert.worst_margin})
        if cert.feasible:
            logger.debug(f"Quadratic certificate at beta={beta:.6f}, cond(H)={cert.condition:.4f}")
            return QuadSearchResult(FOUND, cert, tried)

    logger.info("Quadratic search procedure failed on every beta (not a proof of infeasibility)")
    return QuadSearchResult(PROCEDURE_FAILED, None, tried)


def lyapunov_oracle(M: np.ndarray, beta: float) -> np.ndarray:
    """Solution of H = I + beta^-2 M^T H M for a single mode"""
    return linalg.solve_discrete_lyapunov(np.asarray(M, dtype=float).T / beta, np.eye(M.shape[0]))


def quad_extend_check(
    cert: QuadraticCertificate,
    family: SwitchingFamily,
    policies: Sequence[Policy],
) -> float:
    """Largest eigenvalue of M_mu^T H M_mu - beta^2 H over the given policies (clipped at 0)"""
    H = cert.H
    violation = 0.0
    for mu in policies:
        M = family.mode_of(mu)
        top = float(linalg.eigvalsh(_symmetrize(M.T @ H @ M - cert.beta ** 2 * H))[-1])
        violation = max(violation, top)
    return violation


def convexity_gap(cert: QuadraticCertificate, family: SwitchingFamily, mu: Policy) -> float:
    """
    Smallest eigenvalue of sum_pi c_pi M_pi^T H M_pi - M_mu^T H M_mu

    Nonnegative up to round-off since x -> M^T H M is Loewner-convex.
    """
    H = cert.H
    weights = hull_weights(mu, cap=len(family))
    mixed = sum(c * (family.mode_of(pi).T @ H @ family.mode_of(pi)) for pi, c in weights.items())
    M = family.mode_of(mu)
    return float(linalg.eigvalsh(_symmetrize(mixed - M.T @ H @ M))[0])
