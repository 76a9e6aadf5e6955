"""
Monte-Carlo aggregation for trajectory statistics

Mean / standard-error accumulators that merge in any order, so replications
can be reduced from parallel workers without changing the result beyond
floating-point reassociation.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd


@dataclass
class RunningMoments:
    """
    Vectorised count / mean / M2 accumulator (Welford, with Chan's merge)

    Usage:
        acc = RunningMoments.empty(n_points)
        for run in runs:
            acc.push(values_of(run))
        acc.mean, acc.standard_error
    """
    count: int
    mean: np.ndarray
    m2: np.ndarray

    @classmethod
    def empty(cls, size: int) -> "RunningMoments":
        return cls(0, np.zeros(size), np.zeros(size))

    def push(self, x: np.ndarray) -> None:
        """Add one observation vector"""
        x = np.asarray(x, dtype=float)
        self.count += 1
        delta = x - self.mean
        self.mean = self.mean + delta / self.count
        self.m2 = self.m2 + delta * (x - self.mean)

    def merge(self, other: "RunningMoments") -> "RunningMoments":
        """Combine two accumulators; commutative up to rounding"""
        if other.count == 0:
            return RunningMoments(self.count, self.mean.copy(), self.m2.copy())
        if self.count == 0:
            return RunningMoments(other.count, other.mean.copy(), other.m2.copy())
        n = self.count + other.count
        delta = other.mean - self.mean
        mean = self.mean + delta * other.count / n
        m2 = self.m2 + other.m2 + delta ** 2 * self.count * other.count / n
        return RunningMoments(n, mean, m2)

    @property
    def variance(self) -> np.ndarray:
        """Unbiased sample variance (zero for fewer than two samples)"""
        if self.count < 2:
            return np.zeros_like(self.mean)
        return self.m2 / (self.count - 1)

    @property
    def standard_error(self) -> np.ndarray:
        if self.count == 0:
            return np.zeros_like(self.mean)
        return np.sqrt(self.variance / self.count)


def _merge_optional(a: Optional[RunningMoments], b: Optional[RunningMoments]) -> Optional[RunningMoments]:
    return a.merge(b) if a is not None and b is not None else None


@dataclass
class TrajectoryMetrics:
    """
    Per-k empirical statistics of a batch of trajectories

    Attributes:
        ks: Recorded iteration indices
        err_inf / err_2: Error-norm accumulators aligned with ks
        veps / vquad: V_eps^t(e_k) and e_k^T H e_k accumulators, when certificates exist
    """
    ks: np.ndarray
    err_inf: RunningMoments
    err_2: RunningMoments
    veps: Optional[RunningMoments] = None
    vquad: Optional[RunningMoments] = None

    def merge(self, other: "TrajectoryMetrics") -> "TrajectoryMetrics":
        if not np.array_equal(self.ks, other.ks):
            raise ValueError("Cannot merge metrics recorded at different k")
        return TrajectoryMetrics(self.ks, self.err_inf.merge(other.err_inf), self.err_2.merge(other.err_2),
                                 _merge_optional(self.veps, other.veps), _merge_optional(self.vquad, other.vquad))

    def to_dataframe(self) -> pd.DataFrame:
        """Summary table with one row per recorded k"""
        data = {
            'k': self.ks.astype(int),
            'emp_err_inf_mean': self.err_inf.mean,
            'emp_err_inf_se': self.err_inf.standard_error,
            'emp_err_2_mean': self.err_2.mean,
            'emp_err_2_se': self.err_2.standard_error,
        }
        if self.veps is not None:
            data['emp_veps_mean'] = self.veps.mean
            data['emp_veps_se'] = self.veps.standard_error
        if self.vquad is not None:
            data['emp_vquad_mean'] = self.vquad.mean
            data['emp_vquad_se'] = self.vquad.standard_error
        return pd.DataFrame(data)
