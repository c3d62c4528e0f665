"""Penalized least-squares solver for matrix prediction.

Minimizes ``(1/n) sum_i (Y_i - <X_i, A>)^2 + pen(A)`` by accelerated proximal
gradient descent with a monotone safeguard (the accepted objective never
increases) and momentum restarts.  Gradients of the quadratic part are exact,
so a prox-gradient step from the final iterate yields an explicit subgradient
certificate for composite optimality.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .designs import Dataset
from .errors import DimensionMismatchError, SolverDivergenceError
from .linalg import unvec, vec, vec_stack
from .penalties import PenaltyConfig, penalty_value, prox_penalty

LIPSCHITZ_REL_TOL = 1e-6
GRAM_SINGULAR_REL_TOL = 1e-10


@dataclass(frozen=True)
class SolverOptions:
    """Iteration controls for :func:`fit`.

    `step_rule` is ``"fixed_lipschitz"`` (step 1/L with L estimated once) or
    ``"backtracking"`` (shrink by `backtrack_shrink` on model violation, grow
    by `backtrack_grow` each iteration).  `init` is a warm-start matrix or
    None for the zero matrix.
    """

    max_iters: int = 5000
    rel_obj_tol: float = 1e-9
    step_rule: str = "fixed_lipschitz"
    backtrack_shrink: float = 0.5
    backtrack_grow: float = 1.1
    restart: bool = True
    init: Optional[np.ndarray] = None
    cert_tol: float = 1e-6
    prox_tol: float = 1e-8

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.rel_obj_tol <= 0 or self.cert_tol <= 0 or self.prox_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.step_rule not in ("fixed_lipschitz", "backtracking"):
            raise ValueError(f"unknown step_rule '{self.step_rule}'")


@dataclass
class SolverResult:
    """Output of :func:`fit`.

    `objective_trace` holds the accepted objective per iteration (entry 0 is
    the value at the initial point) and is nonincreasing.
    `subgradient_residual` is the Frobenius norm of an explicit element of
    the composite subdifferential at `estimate`.
    """

    estimate: np.ndarray
    objective_trace: np.ndarray
    iterations: int
    converged: bool
    subgradient_residual: float


class _CompiledData:
    """Residual/gradient engine for one dataset.

    Design-generated data is handled through the atom table (predictions are
    one small matvec; the gradient accumulates per-atom residual sums), dense
    data through a flattened (n, mT) stack.
    """

    def __init__(self, data: Dataset):
        self.n = data.n
        self.shape = data.shape
        self.ys = data.ys
        self._idx = data.atom_indices
        if self._idx is not None:
            design = data.design
            self._atoms_flat = design.atoms_flat
            self._canonical = design.canonical_basis
            self._k = design.n_atoms
            self._counts = np.bincount(self._idx, minlength=self._k).astype(np.float64)
        else:
            self._stack = vec_stack(data.xs_stack)
            self._canonical = False

    def _products(self, a_flat: np.ndarray) -> np.ndarray:
        if self._idx is not None:
            ip = a_flat if self._canonical else self._atoms_flat @ a_flat
            return ip[self._idx]
        return self._stack @ a_flat

    def risk(self, a_flat: np.ndarray) -> float:
        resid = self.ys - self._products(a_flat)
        return float(resid @ resid) / self.n

    def risk_grad(self, a_flat: np.ndarray) -> tuple[float, np.ndarray]:
        resid = self.ys - self._products(a_flat)
        value = float(resid @ resid) / self.n
        if self._idx is not None:
            sums = np.bincount(self._idx, weights=resid, minlength=self._k)
            grad = sums if self._canonical else sums @ self._atoms_flat
        else:
            grad = resid @ self._stack
        return value, (-2.0 / self.n) * grad

    def lipschitz(self) -> float:
        """2 * largest eigenvalue of the empirical second-moment matrix."""
        if self._idx is not None and self._canonical:
            return 2.0 * float(self._counts.max()) / self.n
        d = self.shape[0] * self.shape[1]
        v = np.linspace(1.0, 2.0, d)
        v /= np.linalg.norm(v)
        lam = 0.0
        for _ in range(1000):
            if self._idx is not None:
                w = ((self._counts / self.n) * (self._atoms_flat @ v)) @ self._atoms_flat
            else:
                w = (self._stack @ v) @ self._stack / self.n
            lam_new = float(v @ w)
            norm_w = float(np.linalg.norm(w))
            if norm_w == 0.0:
                return 0.0
            v = w / norm_w
            if abs(lam_new - lam) <= LIPSCHITZ_REL_TOL * max(abs(lam_new), 1e-300):
                break
            lam = lam_new
        return 2.0 * lam_new

    def gram_is_nonsingular(self) -> bool:
        if self._idx is not None:
            if self._canonical:
                return bool(self._counts.min() > 0)
            weighted = self._atoms_flat * (self._counts[:, None] / self.n)
            gram = weighted.T @ self._atoms_flat
        else:
            gram = self._stack.T @ self._stack / self.n
        eigs = np.linalg.eigvalsh(gram)
        return bool(eigs[0] > GRAM_SINGULAR_REL_TOL * max(eigs[-1], 0.0))


def empirical_risk(a, data: Dataset) -> float:
    """(1/n) sum_i (Y_i - <X_i, A>)^2."""
    resid = data.ys - data.predictions(a)
    return float(resid @ resid) / data.n


def empirical_risk_gradient(a, data: Dataset) -> np.ndarray:
    """Gradient -(2/n) sum_i (Y_i - <X_i, A>) X_i, assembled per atom when possible."""
    compiled = _CompiledData(data)
    a = np.asarray(a, dtype=np.float64)
    if a.shape != data.shape:
        raise DimensionMismatchError("empirical_risk_gradient", a.shape, data.shape)
    _, grad = compiled.risk_grad(vec(a))
    return unvec(grad, data.shape)


def _certificate(compiled: _CompiledData, cfg: PenaltyConfig, x_flat: np.ndarray,
                 step: float, shape, prox_tol: float) -> tuple[np.ndarray, float, float]:
    """One prox-gradient cleanup step plus an explicit subgradient residual.

    With z = prox(x - step * grad f(x)), the vector
    (x - z)/step - grad f(x) lies in the penalty subdifferential at z, so
    grad f(z) + that vector is a certified element of the composite
    subdifferential at z.  Returns (z_flat, objective(z), residual norm).
    """
    f_x, g_x = compiled.risk_grad(x_flat)
    z = prox_penalty(unvec(x_flat - step * g_x, shape), cfg, step,
                     tol=prox_tol, max_iter=5000)
    z_flat = vec(z)
    f_z, g_z = compiled.risk_grad(z_flat)
    witness = (x_flat - z_flat) / step + g_z - g_x
    objective = f_z + penalty_value(z, cfg)
    return z_flat, objective, float(np.linalg.norm(witness))


def fit(data: Dataset, cfg: PenaltyConfig, opts: SolverOptions = SolverOptions()) -> SolverResult:
    """Minimize the penalized empirical risk.

    Raises ValueError for an all-zero penalty on a singular empirical design
    (plain least squares has no unique minimizer there) and
    SolverDivergenceError if the objective ever becomes non-finite.  Hitting
    the iteration cap returns ``converged=False``, never a silent success.
    """
    compiled = _CompiledData(data)
    shape = data.shape
    if cfg.is_zero and not compiled.gram_is_nonsingular():
        raise ValueError(
            "all penalty weights are zero but the empirical design is singular; "
            "plain empirical risk minimization needs a nonsingular Gram matrix"
        )

    if opts.init is not None:
        x = np.asarray(opts.init, dtype=np.float64)
        if x.shape != shape:
            raise DimensionMismatchError("fit init", x.shape, shape)
        x = vec(x).copy()
    else:
        x = np.zeros(shape[0] * shape[1])

    lipschitz = compiled.lipschitz()
    if lipschitz <= 0.0:
        lipschitz = 1.0
    step = 1.0 / lipschitz

    def objective(a_flat: np.ndarray) -> float:
        return compiled.risk(a_flat) + penalty_value(unvec(a_flat, shape), cfg)

    f_best = objective(x)
    trace = [f_best]
    y = x.copy()
    t_momentum = 1.0
    converged = False
    residual = np.inf
    estimate_flat = x
    cert_cooldown = 0

    for _ in range(opts.max_iters):
        f_y, g_y = compiled.risk_grad(y)
        z = vec(prox_penalty(unvec(y - step * g_y, shape), cfg, step,
                             tol=opts.prox_tol, max_iter=5000))
        if opts.step_rule == "backtracking":
            f_z = compiled.risk(z)
            guard = 1e-12 * (1.0 + abs(f_y))
            while f_z > f_y + float(g_y @ (z - y)) + float((z - y) @ (z - y)) / (2 * step) + guard:
                step *= opts.backtrack_shrink
                if step < 1e-18:
                    raise SolverDivergenceError("backtracking step collapsed", trace)
                z = vec(prox_penalty(unvec(y - step * g_y, shape), cfg, step,
                                     tol=opts.prox_tol, max_iter=5000))
                f_z = compiled.risk(z)
        f_z_total = objective(z)
        if not np.isfinite(f_z_total):
            raise SolverDivergenceError("objective became non-finite", trace)

        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_momentum**2))
        if f_z_total <= f_best:
            x_new, f_new = z, f_z_total
        else:
            x_new, f_new = x, f_best
        if opts.restart and float((y - z) @ (z - x)) > 0.0:
            t_next = 1.0
            y = x_new.copy()
        else:
            y = x_new + (t_momentum / t_next) * (z - x_new) \
                + ((t_momentum - 1.0) / t_next) * (x_new - x)
        x, f_prev = x_new, f_best
        f_best = f_new
        t_momentum = t_next
        trace.append(f_best)
        estimate_flat = x

        if opts.step_rule == "backtracking":
            step *= opts.backtrack_grow

        small_change = abs(f_prev - f_best) <= opts.rel_obj_tol * max(1.0, abs(f_best))
        if small_change and cert_cooldown <= 0:
            z_c, f_c, residual = _certificate(
                compiled, cfg, x, step, shape, prox_tol=min(opts.prox_tol, 1e-10))
            if f_c <= f_best:
                x = z_c
                trace.append(f_c)
                estimate_flat = x
                still_small = abs(f_best - f_c) <= opts.rel_obj_tol * max(1.0, abs(f_c))
                f_best = f_c
            else:
                still_small = True
            if still_small and residual <= opts.cert_tol * (1.0 + float(np.linalg.norm(x))):
                converged = True
                break
            cert_cooldown = 10
            y = x.copy()
            x_prev = x.copy()
            t_momentum = 1.0
        cert_cooldown -= 1

    if not converged:
        z_c, f_c, residual = _certificate(
            compiled, cfg, x, step, shape, prox_tol=min(opts.prox_tol, 1e-10))
        if f_c <= f_best:
            estimate_flat = z_c
            trace.append(f_c)

    return SolverResult(
        estimate=unvec(estimate_flat, shape),
        objective_trace=np.asarray(trace),
        iterations=len(trace) - 1,
        converged=converged,
        subgradient_residual=residual,
    )
