"""
Closed-form finite-time bounds for constant-step Q-learning

Every bound is a transient decaying in k plus a constant noise floor:

    JSR certificate      sqrt(C) beta^k ||e_0||_2 + alpha C sqrt(W / (1 - beta^2))
    quadratic            sqrt(lmax / lmin) beta^k ||e_0||_2 + alpha sqrt(lmax W / (lmin (1 - beta^2)))
    Markov (bounded bias) JSR form with W -> W + (4 (1 + gamma) B_Q)^2

The "explicit" variants replace ||e_0||_2 by sqrt(n)(||Q_0||_inf + R_max / (1 - gamma)).
"""

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from src.certificates.quadratic import QuadraticCertificate
from src.learning.simulator import noise_constant
from src.mdp.model import Mdp, q_array
from src.utils.errors import CertificateError, InvariantViolationError
from src.utils.io import save_csv_safe

logger = logging.getLogger(__name__)

KInput = Union[int, float, np.ndarray, Sequence[int]]

BOUND_KINDS = (
    "veps_moment",
    "veps_final",
    "quad_moment",
    "quad_final",
    "markov_moment",
    "markov_final",
    "markov_rowslack",
)


@dataclass(frozen=True)
class BoundParams:
    """
    Inputs shared by the bound formulas

    Attributes:
        alpha: Step size
        beta: Certified rate (beta_eps for JSR certificates)
        w_max: Noise second-moment bound
        n: Number of state-action pairs
        gamma: Discount factor
        r_max: Reward bound
        q0_sup: ||Q_0||_inf
        e0_norm: ||Q_0 - Q*||_2
        C: Norm-equivalence constant C_eps
        b_q: Trajectory envelope max(||Q_0||_inf, R_max / (1 - gamma))
        d_min: Smallest sampling probability
        v0: Lyapunov value at e_0 used in moment bounds; None means C ||e_0||^2
    """
    alpha: float
    beta: float
    w_max: float
    n: int
    gamma: float
    r_max: float
    q0_sup: float
    e0_norm: float
    C: float = 1.0
    b_q: float = 0.0
    d_min: Optional[float] = None
    v0: Optional[float] = None

    @classmethod
    def for_run(
        cls,
        mdp: Mdp,
        alpha: float,
        q0: np.ndarray,
        q_star: np.ndarray,
        beta: float,
        C: float = 1.0,
        d_min: Optional[float] = None,
    ) -> "BoundParams":
        q0 = q_array(q0, mdp)
        noise = noise_constant(mdp, q0)
        return cls(
            alpha=float(alpha),
            beta=float(beta),
            w_max=noise.w_max,
            n=mdp.n_pairs,
            gamma=mdp.gamma,
            r_max=mdp.r_max,
            q0_sup=float(np.max(np.abs(q0))),
            e0_norm=float(np.linalg.norm(q0 - q_array(q_star, mdp))),
            C=float(C),
            b_q=noise.b_q,
            d_min=d_min,
        )

    @property
    def initial_scale(self) -> float:
        """||Q_0||_inf + R_max / (1 - gamma)"""
        return self.q0_sup + self.r_max / (1.0 - self.gamma)

    @property
    def markov_w(self) -> float:
        return self.w_max + (4.0 * (1.0 + self.gamma) * self.b_q) ** 2

    def to_dict(self) -> Dict:
        return asdict(self)


def _ks(k: KInput) -> np.ndarray:
    return np.asarray(k, dtype=float)


def _out(value: np.ndarray, k: KInput):
    return float(value) if np.ndim(k) == 0 else value


def _require_rate(beta: float) -> None:
    if not 0.0 <= beta < 1.0:
        raise CertificateError(f"Rate must lie in [0, 1), got {beta}")


# ----------------------------------------------------------------------
# JSR certificate (i.i.d. sampling)
# ----------------------------------------------------------------------

def _jsr_moment(p: BoundParams, w: float, k: np.ndarray) -> np.ndarray:
    v0 = p.C * p.e0_norm ** 2 if p.v0 is None else p.v0
    decay = p.beta ** (2.0 * k)
    return decay * v0 + p.alpha ** 2 * p.C ** 2 * w * (1.0 - decay) / (1.0 - p.beta ** 2)


def _jsr_floor(p: BoundParams, w: float) -> float:
    return p.alpha * p.C * np.sqrt(w / (1.0 - p.beta ** 2))


def veps_bound(params: BoundParams, k: KInput) -> Tuple:
    """(E V(e_k) bound, E ||e_k||_inf bound) under a JSR certificate"""
    _require_rate(params.beta)
    ks = _ks(k)
    moment = _jsr_moment(params, params.w_max, ks)
    final = np.sqrt(params.C) * params.beta ** ks * params.e0_norm + _jsr_floor(params, params.w_max)
    return _out(moment, k), _out(final, k)


def veps_final_explicit(params: BoundParams, k: KInput, exponential: bool = False):
    """
    Sup-norm bound with the initial error replaced by its a-priori envelope

    exponential=True uses beta^k <= exp(-(1 - beta^2) k / 2).
    """
    _require_rate(params.beta)
    ks = _ks(k)
    rate = np.exp(-(1.0 - params.beta ** 2) * ks / 2.0) if exponential else params.beta ** ks
    value = np.sqrt(params.n * params.C) * params.initial_scale * rate + _jsr_floor(params, params.w_max)
    return _out(value, k)


# ----------------------------------------------------------------------
# Quadratic certificate
# ----------------------------------------------------------------------

def quad_bound(
    cert: QuadraticCertificate,
    params: BoundParams,
    k: KInput,
    e0: Optional[np.ndarray] = None,
) -> Tuple:
    """
    (E e_k^T H e_k bound, E ||e_k||_inf bound) for a feasible certificate

    Without e0 the moment bound starts from lambda_max ||e_0||^2.
    """
    if not cert.feasible:
        raise CertificateError("Quadratic bounds need a feasible certificate")
    ks = _ks(k)
    beta, lmin, lmax = cert.beta, cert.lambda_min, cert.lambda_max
    w = params.w_max
    v0 = cert.value(e0) if e0 is not None else lmax * params.e0_norm ** 2
    decay = beta ** (2.0 * ks)
    moment = decay * v0 + params.alpha ** 2 * lmax * w * (1.0 - decay) / (1.0 - beta ** 2)
    floor = params.alpha * np.sqrt(lmax * w / (lmin * (1.0 - beta ** 2)))
    final = np.sqrt(lmax / lmin) * beta ** ks * params.e0_norm + floor
    return _out(moment, k), _out(final, k)


def quad_final_explicit(cert: QuadraticCertificate, params: BoundParams, k: KInput):
    ks = _ks(k)
    beta, lmin, lmax = cert.beta, cert.lambda_min, cert.lambda_max
    floor = params.alpha * np.sqrt(lmax * params.w_max / (lmin * (1.0 - beta ** 2)))
    value = np.sqrt(params.n * lmax / lmin) * params.initial_scale * beta ** ks + floor
    return _out(value, k)


def quad_gap_condition(cert: QuadraticCertificate, params: BoundParams) -> bool:
    """beta^2 <= 1 - alpha d_min (1 - gamma) / 2"""
    return cert.beta ** 2 <= 1.0 - params.alpha * params.d_min * (1.0 - params.gamma) / 2.0


def quad_final_gap(cert: QuadraticCertificate, params: BoundParams, k: KInput):
    """
    Exponential-form sup-norm bound, valid under the gap condition

    Raises:
        CertificateError: If the gap condition fails
    """
    if params.d_min is None or not quad_gap_condition(cert, params):
        raise CertificateError(
            f"Gap condition beta^2 <= 1 - alpha d_min (1 - gamma) / 2 fails for beta = {cert.beta}"
        )
    ks = _ks(k)
    gap = params.alpha * params.d_min * (1.0 - params.gamma)
    cond = cert.lambda_max / cert.lambda_min
    value = (np.sqrt(params.n * cond) * params.initial_scale * np.exp(-gap * ks / 4.0)
             + np.sqrt(2.0 * params.alpha * cond * params.w_max / (params.d_min * (1.0 - params.gamma))))
    return _out(value, k)


# ----------------------------------------------------------------------
# Markovian sampling (bounded bias)
# ----------------------------------------------------------------------

def markov_bound(params: BoundParams, k: KInput) -> Tuple:
    """JSR bounds with the disturbance enlarged by the Markovian bias"""
    _require_rate(params.beta)
    ks = _ks(k)
    w = params.markov_w
    moment = _jsr_moment(params, w, ks)
    final = np.sqrt(params.C) * params.beta ** ks * params.e0_norm + _jsr_floor(params, w)
    return _out(moment, k), _out(final, k)


def markov_final_explicit(params: BoundParams, k: KInput, exponential: bool = False):
    _require_rate(params.beta)
    ks = _ks(k)
    rate = np.exp(-(1.0 - params.beta ** 2) * ks / 2.0) if exponential else params.beta ** ks
    value = np.sqrt(params.n * params.C) * params.initial_scale * rate + _jsr_floor(params, params.markov_w)
    return _out(value, k)


def rowslack_rate(params: BoundParams, jsr_upper: Optional[float] = None) -> Tuple[float, float]:
    """
    (slack, beta) for eps = alpha d_min (1 - gamma) / 2

    beta is anchored at min(jsr_upper, rho_row), so beta <= 1 - slack.
    """
    if params.d_min is None:
        raise CertificateError("Row-sum slack needs d_min")
    gap = params.alpha * params.d_min * (1.0 - params.gamma)
    if not 0.0 < gap < 1.0:
        raise CertificateError(f"alpha d_min (1 - gamma) = {gap} must lie in (0, 1)")
    rho_row = 1.0 - gap
    anchor = rho_row if jsr_upper is None else min(jsr_upper, rho_row)
    return gap / 2.0, anchor + gap / 2.0


def rowslack_bound(params: BoundParams, k: KInput, jsr_upper: Optional[float] = None):
    """
    Exponential-form Markovian bound with the row-sum slack

    Raises:
        InvariantViolationError: If 1 - beta^2 < alpha d_min (1 - gamma) / 2
    """
    slack, beta = rowslack_rate(params, jsr_upper)
    if 1.0 - beta ** 2 < slack - 1e-15:
        raise InvariantViolationError(f"1 - beta^2 = {1.0 - beta ** 2:.3e} below slack {slack:.3e}")
    ks = _ks(k)
    gap = 2.0 * slack
    value = (np.sqrt(params.n * params.C) * params.initial_scale * np.exp(-gap * ks / 2.0)
             + params.C * np.sqrt(2.0 * params.alpha * params.markov_w / (params.d_min * (1.0 - params.gamma))))
    return _out(value, k)


# ----------------------------------------------------------------------
# Curves
# ----------------------------------------------------------------------

@dataclass
class BoundCurve:
    """A bound evaluated on a grid of iteration counts"""
    kind: str
    params: Dict
    ks: np.ndarray
    values: np.ndarray
    floor: float = field(default=0.0)

    def to_dataframe(self) -> pd.DataFrame:
        return pd.DataFrame({'k': self.ks.astype(int), 'value': self.values})

    def to_csv(self, path: Union[str, Path]) -> Path:
        return save_csv_safe(self.to_dataframe(), path)

    def to_dict(self) -> Dict:
        return {'kind': self.kind, 'params': self.params, 'floor': self.floor}


def bound_curve(
    kind: str,
    params: BoundParams,
    ks: Sequence[int],
    cert: Optional[QuadraticCertificate] = None,
    jsr_upper: Optional[float] = None,
) -> BoundCurve:
    """
    Evaluate one of BOUND_KINDS on ks

    Raises:
        ValueError: Unknown kind
        CertificateError: quad kinds without a feasible certificate
    """
    ks = np.asarray(ks, dtype=float)
    big = np.array([np.inf])
    family, _, part = kind.partition("_")
    if family == "veps" and part in ("moment", "final"):
        evaluate = lambda k: veps_bound(params, k)
    elif family == "markov" and part in ("moment", "final"):
        evaluate = lambda k: markov_bound(params, k)
    elif family == "quad" and part in ("moment", "final"):
        if cert is None:
            raise CertificateError(f"'{kind}' needs a quadratic certificate")
        evaluate = lambda k: quad_bound(cert, params, k)
    elif kind == "markov_rowslack":
        evaluate = lambda k: (None, rowslack_bound(params, k, jsr_upper))
    else:
        raise ValueError(f"Unknown bound kind '{kind}' (expected one of {BOUND_KINDS})")

    pick = 0 if part == "moment" else 1
    values = evaluate(ks)[pick]
    floor = float(evaluate(big)[pick][0])

    blob = params.to_dict()
    if cert is not None and kind.startswith("quad"):
        blob.update(beta=cert.beta, lambda_min=cert.lambda_min, lambda_max=cert.lambda_max)
    return BoundCurve(kind=kind, params=blob, ks=ks, values=np.asarray(values, dtype=float), floor=float(floor))


# ----------------------------------------------------------------------
# Second transcription
# ----------------------------------------------------------------------

TRANSCRIBED_KINDS = (
    "veps_moment",
    "veps_final",
    "veps_final_explicit",
    "veps_final_explicit_exp",
    "quad_moment",
    "quad_final",
    "quad_final_explicit",
    "quad_final_gap",
    "markov_moment",
    "markov_final",
    "markov_final_explicit",
    "markov_final_explicit_exp",
    "markov_rowslack",
)


def _factored(kind: str, p: BoundParams, k: float, cert: Optional[QuadraticCertificate]) -> float:
    """Same formulas written in factored form"""
    b2 = p.beta * p.beta
    w = p.w_max
    if kind.startswith("markov"):
        w = p.w_max + 16.0 * (1.0 + p.gamma) ** 2 * p.b_q ** 2
    envelope = np.sqrt(p.n) * (p.q0_sup + p.r_max / (1.0 - p.gamma))

    if kind in ("veps_moment", "markov_moment"):
        v0 = p.C * p.e0_norm ** 2 if p.v0 is None else p.v0
        limit = (p.alpha * p.C) ** 2 * w / (1.0 - b2)
        return limit + b2 ** k * (v0 - limit)
    if kind in ("veps_final", "markov_final"):
        return np.sqrt(p.C) * (p.e0_norm * np.exp(k * np.log(p.beta)) + p.alpha * np.sqrt(p.C * w / (1.0 - b2)))
    if kind.endswith("_explicit") or kind.endswith("_explicit_exp"):
        if kind.endswith("_exp"):
            decay = np.exp(-k * (1.0 - p.beta) * (1.0 + p.beta) / 2.0)
        else:
            decay = np.exp(k * np.log(p.beta))
        if kind.startswith("quad"):
            q2 = cert.beta ** 2
            ratio = np.sqrt(cert.lambda_max / cert.lambda_min)
            return ratio * (envelope * cert.beta ** k + p.alpha * np.sqrt(w / (1.0 - q2)))
        return np.sqrt(p.C) * (envelope * decay + p.alpha * np.sqrt(p.C * w / (1.0 - b2)))

    if kind.startswith("quad"):
        q2 = cert.beta ** 2
        ratio = np.sqrt(cert.lambda_max / cert.lambda_min)
        if kind == "quad_moment":
            limit = p.alpha ** 2 * cert.lambda_max * w / (1.0 - q2)
            return limit + q2 ** k * (cert.lambda_max * p.e0_norm ** 2 - limit)
        if kind == "quad_final":
            return ratio * (cert.beta ** k * p.e0_norm + p.alpha * np.sqrt(w / (1.0 - q2)))
        if kind == "quad_final_gap":
            gap = p.alpha * p.d_min * (1.0 - p.gamma)
            return ratio * (envelope * np.exp(-gap * k / 4.0) + np.sqrt(2.0 * p.alpha * w / (p.d_min * (1.0 - p.gamma))))
    if kind == "markov_rowslack":
        gap = p.alpha * p.d_min * (1.0 - p.gamma)
        log_transient = 0.5 * np.log(p.n * p.C) + np.log(p.initial_scale) - gap * k / 2.0
        return np.exp(log_transient) + np.sqrt(2.0 * (p.alpha * p.C) ** 2 * w / gap)
    raise ValueError(kind)


def _direct(kind: str, p: BoundParams, k: float, cert: Optional[QuadraticCertificate]) -> float:
    table = {
        "veps_moment": lambda: veps_bound(p, k)[0],
        "veps_final": lambda: veps_bound(p, k)[1],
        "veps_final_explicit": lambda: veps_final_explicit(p, k),
        "veps_final_explicit_exp": lambda: veps_final_explicit(p, k, exponential=True),
        "quad_moment": lambda: quad_bound(cert, p, k)[0],
        "quad_final": lambda: quad_bound(cert, p, k)[1],
        "quad_final_explicit": lambda: quad_final_explicit(cert, p, k),
        "quad_final_gap": lambda: quad_final_gap(cert, p, k),
        "markov_moment": lambda: markov_bound(p, k)[0],
        "markov_final": lambda: markov_bound(p, k)[1],
        "markov_final_explicit": lambda: markov_final_explicit(p, k),
        "markov_final_explicit_exp": lambda: markov_final_explicit(p, k, exponential=True),
        "markov_rowslack": lambda: rowslack_bound(p, k),
    }
    return table[kind]()


def cross_check_formulas(n_points: int = 200, seed: int = 0) -> float:
    """
    Largest relative gap between the two transcriptions at random points

    quad_final_gap is compared only where its gap condition holds.
    """
    rng = np.random.Generator(np.random.Philox(key=seed))
    worst = 0.0
    for _ in range(n_points):
        gamma = rng.uniform(0.5, 0.99)
        d_min = rng.uniform(0.01, 0.5)
        alpha = rng.uniform(0.01, 0.9)
        p = BoundParams(
            alpha=alpha,
            beta=rng.uniform(0.5, 0.999),
            w_max=rng.uniform(0.1, 100.0),
            n=int(rng.integers(1, 20)),
            gamma=gamma,
            r_max=rng.uniform(0.1, 5.0),
            q0_sup=rng.uniform(0.0, 10.0),
            e0_norm=rng.uniform(0.0, 20.0),
            C=rng.uniform(1.0, 50.0),
            b_q=rng.uniform(0.0, 50.0),
            d_min=d_min,
        )
        lmin = rng.uniform(0.1, 2.0)
        cert = QuadraticCertificate(
            H=np.eye(1), beta=p.beta, lambda_min=lmin, lambda_max=lmin * rng.uniform(1.0, 10.0),
            feasible=True, worst_margin=0.0,
        )
        k = float(rng.integers(0, 500))
        for kind in TRANSCRIBED_KINDS:
            if kind == "quad_final_gap" and not quad_gap_condition(cert, p):
                continue
            a, b = _direct(kind, p, k, cert), _factored(kind, p, k, cert)
            worst = max(worst, abs(a - b) / max(abs(a), abs(b), 1e-300))
    logger.debug(f"Bound transcription cross-check: max relative gap {worst:.3e}")
    return worst
