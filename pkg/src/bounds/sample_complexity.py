"""
Step-size and iteration-count plans that drive the sup-norm bound below delta

Each plan splits delta evenly: the step size caps the noise floor at delta / 2
and the iteration count caps the transient at delta / 2.

    jsr          alpha <= delta sqrt(1 - beta^2) / (2 C sqrt(W))
                 k >= 2 / (1 - beta^2) ln(2 sqrt(n C) Z / delta)
    jsr_rowgap   alpha <= d_min (1 - gamma) delta^2 / (8 C^2 W)
                 k >= 4 / (d_min (1 - gamma) alpha) ln(2 sqrt(n C) Z / delta)
    quad         alpha <= d_min (1 - gamma) lmin delta^2 / (8 lmax W)
                 k >= 4 / (d_min (1 - gamma) alpha) ln(2 sqrt(n lmax / lmin) Z / delta)
    markov       the jsr plan with W -> W + (4 (1 + gamma) B_Q)^2

with Z = ||Q_0||_inf + R_max / (1 - gamma).
"""

import logging
import math
from dataclasses import asdict, dataclass
from typing import Dict, Optional

import numpy as np

from src.bounds.curves import BoundParams
from src.certificates.quadratic import QuadraticCertificate
from src.utils.errors import CertificateError, ConfigError, InvariantViolationError

logger = logging.getLogger(__name__)

PLAN_KINDS = ("jsr", "jsr_rowgap", "quad", "markov")
SELF_CHECK_RTOL = 1e-12


@dataclass(frozen=True)
class SampleComplexityPlan:
    """
    Attributes:
        delta: Target accuracy for E ||Q_k - Q*||_inf
        alpha_max: Largest admissible step size
        k_min: Smallest admissible iteration count
        formula_tag: Plan kind
        transient / floor: The two bound terms at (alpha_max, k_min)
        alpha_normalized: Step-size cap using W <= 4 R_max^2 / (1 - gamma)^2,
            when ||Q_0||_inf <= R_max / (1 - gamma) (jsr plan only)
    """
    delta: float
    alpha_max: float
    k_min: int
    formula_tag: str
    transient: float
    floor: float
    alpha_normalized: Optional[float] = None

    @property
    def bound(self) -> float:
        return self.transient + self.floor

    def to_dict(self) -> Dict:
        out = asdict(self)
        out['bound'] = self.bound
        return out


def _iterations(rate: float, prefactor: float, delta: float) -> int:
    """Smallest k >= 0 with prefactor exp(-rate k) <= delta / 2"""
    ratio = 2.0 * prefactor / delta
    if ratio <= 1.0:
        return 0
    return max(0, math.ceil(math.log(ratio) / rate))


def sample_complexity(
    kind: str,
    delta: float,
    params: BoundParams,
    cert: Optional[QuadraticCertificate] = None,
) -> SampleComplexityPlan:
    """
    Build a plan and check it against its own bound

    Args:
        kind: One of PLAN_KINDS
        delta: Target accuracy
        params: Bound inputs (alpha is ignored; beta and C are the certificate's)
        cert: Quadratic certificate for kind 'quad'

    Raises:
        ConfigError: Unknown kind or delta <= 0
        CertificateError: Rate >= 1, missing inputs, or a failed gap condition
        InvariantViolationError: The plan does not meet its own bound
    """
    if delta <= 0:
        raise ConfigError(f"delta must be positive, got {delta}")
    if kind not in PLAN_KINDS:
        raise ConfigError(f"Unknown plan kind '{kind}' (expected one of {PLAN_KINDS})")

    Z = params.initial_scale
    n = params.n
    alpha_normalized = None

    if kind in ("jsr", "markov"):
        beta, C = params.beta, params.C
        if not 0.0 <= beta < 1.0:
            raise CertificateError(f"beta_eps = {beta} is not below 1; delta is unreachable")
        w = params.w_max if kind == "jsr" else params.markov_w
        one_minus = 1.0 - beta ** 2
        alpha = delta * math.sqrt(one_minus) / (2.0 * C * math.sqrt(w))
        k = _iterations(one_minus / 2.0, math.sqrt(n * C) * Z, delta)
        transient = math.sqrt(n * C) * Z * math.exp(-one_minus * k / 2.0)
        floor = alpha * C * math.sqrt(w / one_minus)
        if kind == "jsr" and params.q0_sup <= params.r_max / (1.0 - params.gamma) and params.r_max > 0:
            alpha_normalized = (1.0 - params.gamma) * delta * math.sqrt(one_minus) / (4.0 * C * params.r_max)

    elif kind == "jsr_rowgap":
        if params.d_min is None:
            raise CertificateError("Row-gap plan needs d_min")
        C, w = params.C, params.w_max
        margin = params.d_min * (1.0 - params.gamma)
        alpha = margin * delta ** 2 / (8.0 * C ** 2 * w)
        k = _iterations(alpha * margin / 4.0, math.sqrt(n * C) * Z, delta)
        transient = math.sqrt(n * C) * Z * math.exp(-alpha * margin * k / 4.0)
        floor = C * math.sqrt(2.0 * alpha * w / margin)

    else:
        if cert is None or not cert.feasible:
            raise CertificateError("Quadratic plan needs a feasible certificate")
        if params.d_min is None:
            raise CertificateError("Quadratic plan needs d_min")
        margin = params.d_min * (1.0 - params.gamma)
        cond = cert.lambda_max / cert.lambda_min
        w = params.w_max
        alpha = margin * delta ** 2 / (8.0 * cond * w)
        if cert.beta ** 2 > 1.0 - alpha * margin / 2.0:
            raise CertificateError(
                f"Gap condition fails at alpha = {alpha:.6g}: beta^2 = {cert.beta ** 2:.6f} "
                f"> {1.0 - alpha * margin / 2.0:.6f}"
            )
        k = _iterations(alpha * margin / 4.0, math.sqrt(n * cond) * Z, delta)
        transient = math.sqrt(n * cond) * Z * math.exp(-alpha * margin * k / 4.0)
        floor = math.sqrt(2.0 * alpha * cond * w / margin)

    plan = SampleComplexityPlan(
        delta=float(delta),
        alpha_max=float(alpha),
        k_min=int(k),
        formula_tag=kind,
        transient=float(transient),
        floor=float(floor),
        alpha_normalized=alpha_normalized,
    )
    if not np.isfinite(plan.bound) or plan.bound > delta * (1.0 + SELF_CHECK_RTOL):
        raise InvariantViolationError(f"{kind} plan gives bound {plan.bound:.15g} above delta {delta}")
    logger.debug(f"{kind} plan: alpha <= {alpha:.6g}, k >= {k}, bound {plan.bound:.6g} <= {delta}")
    return plan
