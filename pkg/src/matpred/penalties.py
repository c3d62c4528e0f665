"""The mixed penalty (nuclear + squared-Frobenius + entrywise l1) and its
proximal maps.

The squared-Frobenius part of the prox reduces to a global rescaling, so the
only genuinely iterative case is nuclear + l1, handled by Dykstra-style
alternation between the two exact proxes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ProxIterationError
from .linalg import as_matrix, entrywise_norm, nuclear_norm, svd

DYKSTRA_DEFAULT_TOL = 1e-10
DYKSTRA_MAX_ITER = 500


@dataclass(frozen=True)
class PenaltyConfig:
    """Weights of the three penalty terms.

    ``value(A) = nuclear * ||A||_S1 + frob2 * ||A||_S2^2 + l1 * ||A||_1``.
    """

    nuclear: float = 0.0
    frob2: float = 0.0
    l1: float = 0.0

    def __post_init__(self):
        for name in ("nuclear", "frob2", "l1"):
            w = getattr(self, name)
            if not (np.isfinite(w) and w >= 0.0):
                raise ValueError(f"penalty weight {name} must be finite and >= 0, got {w}")

    @property
    def is_zero(self) -> bool:
        return self.nuclear == 0.0 and self.frob2 == 0.0 and self.l1 == 0.0

    def scaled(self, factor: float) -> "PenaltyConfig":
        return PenaltyConfig(self.nuclear * factor, self.frob2 * factor, self.l1 * factor)


def penalty_value(a, cfg: PenaltyConfig) -> float:
    """Evaluate the mixed penalty at `a`."""
    a = as_matrix(a, "A")
    total = 0.0
    if cfg.nuclear > 0.0:
        total += cfg.nuclear * nuclear_norm(a)
    if cfg.frob2 > 0.0:
        total += cfg.frob2 * float(np.sum(a * a))
    if cfg.l1 > 0.0:
        total += cfg.l1 * entrywise_norm(a, "l1")
    return total


def svt(v, tau: float) -> np.ndarray:
    """Singular value thresholding: the prox of ``tau * ||.||_S1``.

    Soft-thresholds the singular values of `v` at level `tau` and
    reconstructs.
    """
    v = as_matrix(v, "V")
    if tau < 0.0:
        raise ValueError("svt: tau must be >= 0")
    if tau == 0.0:
        return v.copy()
    if not v.any():
        return np.zeros_like(v)
    f = svd(v)
    shrunk = np.maximum(f.values - tau, 0.0)
    return (f.left * shrunk) @ f.right.T


def soft_threshold(v, tau: float) -> np.ndarray:
    """Entrywise shrinkage sign(v) * max(|v| - tau, 0), the prox of ``tau * ||.||_1``."""
    v = as_matrix(v, "V")
    if tau < 0.0:
        raise ValueError("soft_threshold: tau must be >= 0")
    if tau == 0.0:
        return v.copy()
    return np.sign(v) * np.maximum(np.abs(v) - tau, 0.0)


def _dykstra_nuclear_l1(w: np.ndarray, tau_nuc: float, tau_l1: float,
                        tol_abs: float, max_iter: int) -> np.ndarray:
    """Prox of ``tau_nuc * ||.||_S1 + tau_l1 * ||.||_1`` at `w` by Dykstra alternation."""
    x = w
    p = np.zeros_like(w)
    q = np.zeros_like(w)
    for _ in range(max_iter):
        y = svt(x + p, tau_nuc)
        p = x + p - y
        x_new = soft_threshold(y + q, tau_l1)
        q = y + q - x_new
        delta = float(np.linalg.norm(x_new - x))
        x = x_new
        if delta <= tol_abs:
            return x
    raise ProxIterationError("composite prox did not converge", delta, max_iter)


def prox_penalty(v, cfg: PenaltyConfig, step: float,
                 tol: float = DYKSTRA_DEFAULT_TOL,
                 max_iter: int = DYKSTRA_MAX_ITER) -> np.ndarray:
    """argmin_A  0.5 ||A - V||_S2^2 + step * pen(A).

    The squared-Frobenius weight folds into a global rescaling: with
    c = 1 + 2 step frob2, the prox equals the prox of the rescaled
    nuclear/l1 weights at V / c.  With a single remaining term the result is
    closed form; with both, Dykstra alternation runs until successive
    iterates differ by at most ``tol * (1 + ||V||_S2)``.
    """
    v = as_matrix(v, "V")
    if step <= 0.0:
        raise ValueError("prox_penalty: step must be > 0")
    if tol <= 0.0:
        raise ValueError("prox_penalty: tol must be > 0")
    if not v.any():
        return np.zeros_like(v)
    shrink = 1.0 + 2.0 * step * cfg.frob2
    w = v / shrink if shrink != 1.0 else v
    tau_nuc = step * cfg.nuclear / shrink
    tau_l1 = step * cfg.l1 / shrink
    if tau_l1 == 0.0:
        return svt(w, tau_nuc) if tau_nuc > 0.0 else w.copy()
    if tau_nuc == 0.0:
        return soft_threshold(w, tau_l1)
    tol_abs = tol * (1.0 + float(np.linalg.norm(v)))
    return _dykstra_nuclear_l1(w, tau_nuc, tau_l1, tol_abs, max_iter)


def prox_objective(a, v, cfg: PenaltyConfig, step: float) -> float:
    """The objective whose minimizer :func:`prox_penalty` returns."""
    a = np.asarray(a, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    return 0.5 * float(np.sum((a - v) ** 2)) + step * penalty_value(a, cfg)


@dataclass(frozen=True)
class BallSpec:
    """Sublevel set ``nuclear*||A||_S1 + frob2*||A||_S2^2 + l1*||A||_1 <= radius``."""

    nuclear: float = 0.0
    frob2: float = 0.0
    l1: float = 0.0
    radius: float = 0.0

    def __post_init__(self):
        for name in ("nuclear", "frob2", "l1", "radius"):
            w = getattr(self, name)
            if not (np.isfinite(w) and w >= 0.0):
                raise ValueError(f"ball weight {name} must be finite and >= 0, got {w}")

    @property
    def weights(self) -> PenaltyConfig:
        return PenaltyConfig(self.nuclear, self.frob2, self.l1)

    def mixture_value(self, a) -> float:
        return penalty_value(a, self.weights)

    def contains(self, a, slack: float = 0.0) -> bool:
        return self.mixture_value(a) <= self.radius + slack


def _project_simplex_l1(s: np.ndarray, radius: float) -> np.ndarray:
    """Euclidean projection of a nonnegative sorted-descending vector onto the
    l1 ball of the given radius (values stay nonnegative)."""
    if s.sum() <= radius:
        return s.copy()
    css = np.cumsum(s)
    k = np.arange(1, s.size + 1)
    cond = s - (css - radius) / k > 0
    rho = int(np.nonzero(cond)[0][-1])
    theta = (css[rho] - radius) / (rho + 1.0)
    return np.maximum(s - theta, 0.0)


def project_to_ball(v, spec: BallSpec, tol: float = 1e-12,
                    max_bisect: int = 200) -> np.ndarray:
    """Euclidean projection of `v` onto the mixture-norm ball.

    For a pure nuclear ball the projection is exact (spectral l1-ball
    projection).  Otherwise the projection is ``prox_penalty`` at an unknown
    multiplier theta, found by bisection on membership.
    """
    v = as_matrix(v, "V")
    if spec.radius < 0.0:
        raise ValueError("project_to_ball: radius must be >= 0")
    if spec.contains(v):
        return v.copy()
    if spec.weights.is_zero:
        raise ValueError("project_to_ball: zero weights cannot define a bounded ball")
    if spec.frob2 == 0.0 and spec.l1 == 0.0:
        f = svd(v)
        projected = _project_simplex_l1(f.values, spec.radius / spec.nuclear)
        return (f.left * projected) @ f.right.T
    prox_tol = min(tol, 1e-12)

    def value_at(theta: float) -> tuple[float, np.ndarray]:
        x = prox_penalty(v, spec.weights, theta, tol=prox_tol, max_iter=5000)
        return spec.mixture_value(x), x

    lo, hi = 0.0, 1.0
    val_hi, x_hi = value_at(hi)
    while val_hi > spec.radius:
        hi *= 2.0
        val_hi, x_hi = value_at(hi)
        if hi > 1e18:
            raise RuntimeError("project_to_ball: bisection bracket failed to close")
    best = x_hi
    for _ in range(max_bisect):
        mid = 0.5 * (lo + hi)
        val_mid, x_mid = value_at(mid)
        if val_mid <= spec.radius:
            hi, best = mid, x_mid
        else:
            lo = mid
        if hi - lo <= 1e-15 * max(1.0, hi):
            break
    return best
