"""
Joint spectral radius bracket for a finite matrix family

Products are explored level by level in lexicographic word order. A word
sigma = (s_1, ..., s_k) denotes A_{s_k} ... A_{s_1}; extending a word applies
the new letter last.

    lower = max over explored words of rho(A_sigma)^(1/k)
    upper = min over k of max(tau, max over surviving words of ||A_sigma||^(1/k))

A word is pruned, together with all its extensions, once
||A_sigma||^(1/k) < tau = prune_slack * lower. Every long product then splits
into pruned blocks and surviving blocks, so tau caps the growth contributed
by pruned branches. With no pruning the upper bound is the plain
min_k max ||A_sigma||^(1/k).
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.mdp.policies import StochasticPolicy
from src.switching.family import SwitchingFamily
from src.utils.errors import (
    BudgetExceededError,
    DimensionMismatchError,
    InvariantViolationError,
)

logger = logging.getLogger(__name__)

DEFAULT_MAX_DEPTH = 12
DEFAULT_BUDGET = 200_000
DEFAULT_PRUNE_SLACK = 0.999
BRACKET_TOL = 1e-10

FamilyLike = Union[SwitchingFamily, Sequence[np.ndarray], np.ndarray]


def as_mode_array(family: FamilyLike) -> np.ndarray:
    """Stack a family into an array of shape (m, n, n)"""
    modes = family.modes if isinstance(family, SwitchingFamily) else np.asarray(family, dtype=float)
    if modes.ndim == 2:
        modes = modes[None, :, :]
    if modes.ndim != 3 or modes.shape[0] < 1 or modes.shape[1] != modes.shape[2]:
        raise DimensionMismatchError(f"Expected a non-empty stack of square matrices, got shape {modes.shape}")
    return modes


def matrix_norms(products: np.ndarray, norm: str = "spectral") -> np.ndarray:
    """Batched induced norms of an (N, n, n) stack"""
    if norm == "spectral":
        return np.linalg.norm(products, ord=2, axis=(1, 2))
    if norm == "inf":
        return np.abs(products).sum(axis=2).max(axis=1)
    raise ValueError(f"Unknown norm '{norm}' (expected 'spectral' or 'inf')")


def spectral_radii(products: np.ndarray) -> np.ndarray:
    return np.max(np.abs(np.linalg.eigvals(products)), axis=1)


def _is_canonical_rotation(word: Tuple[int, ...]) -> bool:
    """True for the lexicographically smallest rotation of a word"""
    return all(word <= word[i:] + word[:i] for i in range(1, len(word)))


def product_levels(
    modes: np.ndarray,
    depth: int,
    budget: Optional[int] = None,
) -> Iterator[Tuple[int, np.ndarray]]:
    """
    Exhaustive product tables, one level at a time

    Yields (k, products) for k = 1..depth, products of shape (m**k, n, n) in
    lexicographic word order.

    Raises:
        BudgetExceededError: If the total number of products exceeds budget
    """
    m = modes.shape[0]
    total = sum(m ** k for k in range(1, depth + 1))
    if budget is not None and total > budget:
        raise BudgetExceededError(
            f"{total} products up to length {depth} exceed budget {budget}"
        )
    level = modes
    for k in range(1, depth + 1):
        if k > 1:
            # word (w, s): A_s @ A_w; w varies slowest
            level = np.einsum('sij,wjk->wsik', modes, level).reshape(-1, *modes.shape[1:])
        yield k, level


@dataclass
class JsrReport:
    """
    Certified JSR interval and exploration record

    Attributes:
        lower: Best rho(product)^(1/k) found
        upper: Best product-norm upper bound
        depth: Deepest level explored
        norm_used: 'spectral' or 'inf'
        rho_row: Row-sum rate of the family (None for a bare matrix set)
        witness: Word achieving the lower bound
        lower_by_depth / upper_by_depth: Running bounds after each level
        norm_profile: Max product norm per length while exploration was exhaustive
    """
    lower: float
    upper: float
    depth: int
    norm_used: str
    rho_row: Optional[float]
    witness: Tuple[int, ...]
    lower_by_depth: List[float] = field(default_factory=list)
    upper_by_depth: List[float] = field(default_factory=list)
    norm_profile: List[float] = field(default_factory=list)
    products_evaluated: int = 0
    pruned: int = 0

    @property
    def certified_upper(self) -> float:
        """min(upper, rho_row); both are valid upper bounds on the JSR"""
        if self.rho_row is None:
            return self.upper
        return min(self.upper, self.rho_row)

    def merge(self, other: "JsrReport") -> "JsrReport":
        """Combine two reports on the same family; commutative and idempotent"""
        if (other.lower, tuple(-w for w in other.witness)) > (self.lower, tuple(-w for w in self.witness)):
            lower, witness = other.lower, other.witness
        else:
            lower, witness = self.lower, self.witness
        profile = max(self.norm_profile, other.norm_profile, key=len)
        return JsrReport(
            lower=lower,
            upper=min(self.upper, other.upper),
            depth=max(self.depth, other.depth),
            norm_used=self.norm_used,
            rho_row=self.rho_row,
            witness=witness,
            lower_by_depth=[],
            upper_by_depth=[],
            norm_profile=list(profile),
            products_evaluated=self.products_evaluated + other.products_evaluated,
            pruned=self.pruned + other.pruned,
        )

    def to_dict(self) -> Dict:
        return {
            'lower': self.lower,
            'upper': self.upper,
            'certified_upper': self.certified_upper,
            'depth': self.depth,
            'norm_used': self.norm_used,
            'rho_row': self.rho_row,
            'witness_word': list(self.witness),
            'products_evaluated': self.products_evaluated,
            'pruned': self.pruned,
        }


def jsr_bounds(
    family: FamilyLike,
    max_depth: int = DEFAULT_MAX_DEPTH,
    budget: int = DEFAULT_BUDGET,
    norm: str = "spectral",
    prune_slack: float = DEFAULT_PRUNE_SLACK,
) -> JsrReport:
    """
    Branch-and-bound JSR bracket

    Args:
        family: SwitchingFamily or stack of square matrices
        max_depth: Longest product explored
        budget: Cap on the number of products formed
        norm: Induced norm for the upper bound ('spectral' or 'inf')
        prune_slack: Words with norm^(1/k) below prune_slack * lower are dropped

    Returns:
        JsrReport with lower <= JSR <= upper

    Raises:
        BudgetExceededError: If depth 1 alone does not fit in the budget
    """
    modes = as_mode_array(family)
    m = modes.shape[0]
    if max_depth < 1:
        raise ValueError(f"max_depth must be >= 1, got {max_depth}")
    if budget < m:
        raise BudgetExceededError(f"Budget {budget} cannot hold the {m} words of length 1")

    rho_row = row_sum_rate(family) if isinstance(family, SwitchingFamily) else None

    lower = 0.0
    witness: Tuple[int, ...] = ()
    best_level_upper = np.inf
    survivor_uppers: List[float] = []
    lower_by_depth: List[float] = []
    norm_profile: List[float] = []
    exhaustive = True
    evaluated = 0
    pruned = 0

    products = modes.copy()
    words = np.arange(m)[:, None]
    depth = 0
    for k in range(1, max_depth + 1):
        if k > 1:
            if products.shape[0] == 0:
                break
            n_next = products.shape[0] * m
            if evaluated + n_next > budget:
                logger.warning(f"JSR budget {budget} reached; stopping at depth {depth}")
                break
            products = np.einsum('sij,wjk->wsik', modes, products).reshape(-1, *modes.shape[1:])
            words = np.concatenate(
                [np.repeat(words, m, axis=0), np.tile(np.arange(m), words.shape[0])[:, None]],
                axis=1,
            )
        evaluated += products.shape[0]
        depth = k

        norms = matrix_norms(products, norm)
        if exhaustive:
            norm_profile.append(float(norms.max()))

        canonical = np.array([_is_canonical_rotation(tuple(w)) for w in words.tolist()])
        radii = spectral_radii(products[canonical]) ** (1.0 / k)
        if radii.size:
            j = int(np.argmax(radii))
            if radii[j] > lower:
                lower = float(radii[j])
                witness = tuple(int(x) for x in words[canonical][j])
        lower_by_depth.append(lower)

        rates = norms ** (1.0 / k)
        level_upper = float(rates.max())
        survivor_uppers.append(level_upper)
        best_level_upper = min(best_level_upper, level_upper)

        keep = rates >= prune_slack * lower
        n_drop = int((~keep).sum())
        if n_drop:
            exhaustive = False
            pruned += n_drop
            products = products[keep]
            words = words[keep]

    tau = prune_slack * lower if pruned else 0.0
    upper_by_depth = list(np.minimum.accumulate([max(tau, u) for u in survivor_uppers]))
    upper = float(upper_by_depth[-1])

    if lower > upper + BRACKET_TOL:
        raise InvariantViolationError(f"JSR bracket inverted: lower {lower:.12g} > upper {upper:.12g}")

    logger.debug(
        f"JSR bracket [{lower:.6f}, {upper:.6f}] at depth {depth} "
        f"({evaluated} products, {pruned} pruned)"
    )
    return JsrReport(
        lower=lower,
        upper=upper,
        depth=depth,
        norm_used=norm,
        rho_row=rho_row,
        witness=witness,
        lower_by_depth=lower_by_depth,
        upper_by_depth=[float(u) for u in upper_by_depth],
        norm_profile=norm_profile,
        products_evaluated=evaluated,
        pruned=pruned,
    )


def row_sum_rate(family: SwitchingFamily) -> float:
    """
    rho_row = 1 - alpha d_min (1 - gamma)

    Raises:
        InvariantViolationError: If some mode's infinity norm exceeds it
    """
    rate = 1.0 - family.alpha * family.d_min * (1.0 - family.gamma)
    worst = float(matrix_norms(family.modes, "inf").max())
    if worst > rate + BRACKET_TOL:
        raise InvariantViolationError(f"Mode infinity norm {worst:.15f} exceeds rho_row {rate:.15f}")
    return rate


def convex_hull_jsr_check(
    family: SwitchingFamily,
    samples: Sequence[StochasticPolicy],
    max_len: int = 6,
    budget: int = DEFAULT_BUDGET,
) -> float:
    """
    Finite-length convex-hull inequality

    For each sampled mu, every word over {M_mu} together with the extreme
    modes has a spectral norm no larger than the largest extreme product of
    the same length. Returns the largest positive excess.
    """
    extremes = family.modes
    extreme_max = [float(matrix_norms(level).max())
                   for _, level in product_levels(extremes, max_len, budget)]

    violation = 0.0
    for mu in samples:
        alphabet = np.concatenate([extremes, family.mode_of(mu)[None, :, :]], axis=0)
        for k, level in product_levels(alphabet, max_len, budget):
            excess = float(matrix_norms(level).max()) - extreme_max[k - 1]
            violation = max(violation, excess)
    return violation
