"""Regularization-level formulas for the four penalty families, the mixture
radius constant, and a cross-validation fallback.

Each formula returns the overall level lambda for its family; actual penalty
weights are lambda scaled by the per-term mixture weights (see
:func:`family_penalty`).  The absolute front constant is unknowable from
theory alone, so it is exposed as `c_abs` and can be calibrated empirically
by the harness.  Natural logarithms throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .designs import Dataset, DesignDistribution, NoiseConstants, master_generator
from .linalg import entrywise_norm, nuclear_norm
from .penalties import BallSpec, PenaltyConfig
from .solver import SolverOptions, fit

FAMILIES = ("nuclear", "elastic_net", "nuclear_l1", "full_mixture")


@dataclass(frozen=True)
class TheoremConstants:
    """Design/noise bound constants entering the lambda formulas.

    `c_abs` is the free absolute constant (default 1.0).
    """

    x_frobenius: float = 0.0
    x_spectral: float = 0.0
    x_entry: float = 0.0
    y_rms: float = 0.0
    y_psi1: float = 0.0
    y_mean_max: float = 0.0
    y_std: float = 0.0
    c_abs: float = 1.0

    def __post_init__(self):
        values = (self.x_frobenius, self.x_spectral, self.x_entry, self.y_rms,
                  self.y_psi1, self.y_mean_max, self.y_std)
        if not all(np.isfinite(v) and v >= 0.0 for v in values):
            raise ValueError("bound constants must be finite and nonnegative")
        if not self.c_abs > 0.0:
            raise ValueError("c_abs must be positive")

    @staticmethod
    def from_problem(design: DesignDistribution, noise: NoiseConstants,
                     c_abs: float = 1.0) -> "TheoremConstants":
        return TheoremConstants(
            x_frobenius=design.max_frobenius,
            x_spectral=design.max_spectral,
            x_entry=design.max_entry,
            y_rms=noise.rms,
            y_psi1=noise.psi1,
            y_mean_max=noise.mean_max,
            y_std=noise.std,
            c_abs=c_abs,
        )

    def with_c_abs(self, c_abs: float) -> "TheoremConstants":
        return replace(self, c_abs=c_abs)

    def _front(self, include_spectral: bool, include_entry: bool) -> float:
        # Shared part: 1 + b_{X,2}^2 + b_{X,2} b_Y + b_{Y,psi1}^2
        #              + b_{Y,inf}^2 + b_{Y,2}^2, plus family-specific terms.
        total = (1.0 + self.x_frobenius**2 + self.x_frobenius * self.y_rms
                 + self.y_psi1**2 + self.y_mean_max**2 + self.y_std**2)
        if include_spectral:
            total += self.x_spectral**2
        if include_entry:
            total += self.x_entry**2
        return self.c_abs * total


def _check_n_x(n: int, x: float):
    if n < 2:
        raise ValueError(f"sample size n must be >= 2 (got {n})")
    if not x > 0:
        raise ValueError(f"confidence parameter x must be > 0 (got {x})")


def lambda_nuclear(n: int, x: float, k: TheoremConstants) -> float:
    """Level for the pure nuclear penalty: c_XY (x + ln n) ln n / sqrt(n)."""
    _check_n_x(n, x)
    log_n = math.log(n)
    return k._front(include_spectral=True, include_entry=False) \
        * (x + log_n) * log_n / math.sqrt(n)


def lambda_elastic_net(n: int, x: float, r_nuclear: float, r_frob2: float,
                       k: TheoremConstants) -> float:
    """Level for nuclear + squared-Frobenius mixture weights (r_nuclear, r_frob2)."""
    _check_n_x(n, x)
    if not (r_nuclear > 0 and r_frob2 > 0):
        raise ValueError("mixture weights must be positive")
    log_n = math.log(n)
    sqrt_n = math.sqrt(n)
    return k._front(include_spectral=False, include_entry=False) \
        * (log_n / sqrt_n) * (1.0 / r_nuclear + (x + log_n) * log_n / (r_frob2 * sqrt_n))


def lambda_nuclear_l1(n: int, x: float, r_nuclear: float, r_l1: float,
                      k: TheoremConstants, dim_product: int,
                      completion: bool = False) -> float:
    """Level for the nuclear + entrywise-l1 mixture.

    `dim_product` is m*T.  With ``completion=True`` (canonical-basis designs
    only; the caller gates this on an explicit design flag) the
    sqrt(log(mT)) factor drops from the l1 branch.
    """
    _check_n_x(n, x)
    if not (r_nuclear > 0 and r_l1 > 0):
        raise ValueError("mixture weights must be positive")
    if dim_product < 1:
        raise ValueError("dim_product must be >= 1")
    log_n = math.log(n)
    l1_branch = 1.0 if completion else math.sqrt(math.log(dim_product))
    branch = min(1.0 / r_nuclear, l1_branch / r_l1)
    return k._front(include_spectral=True, include_entry=True) \
        * branch * (x + log_n) * log_n**1.5 / math.sqrt(n)


def lambda_full_mixture(n: int, x: float, r_nuclear: float, r_frob2: float,
                        r_l1: float, k: TheoremConstants, dim_product: int,
                        completion: bool = False) -> float:
    """Level for the three-term mixture (nuclear, squared-Frobenius, l1)."""
    _check_n_x(n, x)
    if not (r_nuclear > 0 and r_frob2 > 0 and r_l1 > 0):
        raise ValueError("mixture weights must be positive")
    if dim_product < 1:
        raise ValueError("dim_product must be >= 1")
    log_n = math.log(n)
    sqrt_n = math.sqrt(n)
    l1_branch = 1.0 if completion else math.sqrt(math.log(dim_product))
    return k._front(include_spectral=False, include_entry=False) \
        * (log_n**1.5 / sqrt_n) \
        * (min(1.0 / r_nuclear, l1_branch / r_l1) + (x + log_n) / (r_frob2 * sqrt_n))


def mixture_radius_constant(r: float, spec: BallSpec, k: TheoremConstants) -> float:
    """Uniform bound on |<X, A>| over the mixture ball of size r.

    min of b_spectral r / w_nuclear, b_frobenius sqrt(r / w_frob2) and
    b_entry r / w_l1, a zero weight contributing +inf.
    """
    if r < 0:
        raise ValueError("r must be >= 0")
    candidates = []
    if spec.nuclear > 0:
        candidates.append(k.x_spectral * r / spec.nuclear)
    if spec.frob2 > 0:
        candidates.append(k.x_frobenius * math.sqrt(r / spec.frob2))
    if spec.l1 > 0:
        candidates.append(k.x_entry * r / spec.l1)
    return min(candidates) if candidates else math.inf


@dataclass(frozen=True)
class TuningParams:
    """Family, mixture weights, confidence x and the absolute constant."""

    family: str
    x: float = 1.0
    r_nuclear: float = 1.0
    r_frob2: float = 1.0
    r_l1: float = 1.0
    c_abs: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family '{self.family}' (expected one of {FAMILIES})")

    def level(self, n: int, k: TheoremConstants, dim_product: int,
              completion: bool = False) -> float:
        k = k.with_c_abs(self.c_abs)
        if self.family == "nuclear":
            return lambda_nuclear(n, self.x, k)
        if self.family == "elastic_net":
            return lambda_elastic_net(n, self.x, self.r_nuclear, self.r_frob2, k)
        if self.family == "nuclear_l1":
            return lambda_nuclear_l1(n, self.x, self.r_nuclear, self.r_l1, k,
                                     dim_product, completion)
        return lambda_full_mixture(n, self.x, self.r_nuclear, self.r_frob2,
                                   self.r_l1, k, dim_product, completion)

    def weighted_norms(self, a) -> float:
        """The norm combination multiplying lambda inside the risk-bound residue."""
        if self.family == "nuclear":
            return nuclear_norm(a)
        total = self.r_nuclear * nuclear_norm(a)
        if self.family in ("elastic_net", "full_mixture"):
            total += self.r_frob2 * float(np.sum(np.square(np.asarray(a, dtype=float))))
        if self.family in ("nuclear_l1", "full_mixture"):
            total += self.r_l1 * entrywise_norm(a, "l1")
        return total

    def penalty(self, level: float) -> PenaltyConfig:
        return family_penalty(self.family, level, self.r_nuclear,
                              self.r_frob2, self.r_l1)


def family_penalty(family: str, level: float, r_nuclear: float = 1.0,
                   r_frob2: float = 1.0, r_l1: float = 1.0) -> PenaltyConfig:
    """Penalty weights used by the estimator of the given family at `level`."""
    if family == "nuclear":
        return PenaltyConfig(nuclear=level)
    if family == "elastic_net":
        return PenaltyConfig(nuclear=level * r_nuclear, frob2=level * r_frob2)
    if family == "nuclear_l1":
        return PenaltyConfig(nuclear=level * r_nuclear, l1=level * r_l1)
    if family == "full_mixture":
        return PenaltyConfig(nuclear=level * r_nuclear, frob2=level * r_frob2,
                             l1=level * r_l1)
    raise ValueError(f"unknown family '{family}'")


def cross_validate(data: Dataset, grid: list[PenaltyConfig], folds: int,
                   seed: int, opts: SolverOptions = SolverOptions()):
    """K-fold cross-validation over a penalty grid.

    Returns ``(best, table)`` where `table` lists (cfg, cv_risk) sorted by
    risk (stable in grid order on ties).  Deterministic given `seed`.
    """
    if folds < 2:
        raise ValueError("folds must be >= 2")
    if len(grid) == 0:
        raise ValueError("grid must be nonempty")
    if data.n < folds:
        raise ValueError(f"n={data.n} is smaller than folds={folds}")
    perm = master_generator(seed).permutation(data.n)
    fold_slices = np.array_split(perm, folds)
    scores = []
    for cfg in grid:
        squared_errors = 0.0
        for held_out in fold_slices:
            mask = np.ones(data.n, dtype=bool)
            mask[held_out] = False
            train = data.subset(np.nonzero(mask)[0])
            test = data.subset(held_out)
            result = fit(train, cfg, opts)
            resid = test.ys - test.predictions(result.estimate)
            squared_errors += float(resid @ resid)
        scores.append(squared_errors / data.n)
    order = sorted(range(len(grid)), key=lambda i: (scores[i], i))
    table = [(grid[i], scores[i]) for i in order]
    return table[0][0], table
