"""Dense matrix primitives: validation, SVD, norms and inner products.

All routines operate on plain float64 numpy arrays.  Matrices are dense; the
shapes of interest here are at most a few hundred rows or columns, so nothing
fancier than LAPACK is warranted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import DimensionMismatchError, SvdError

RANK_REL_TOL = 1e-10


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Validate and coerce `a` into a 2-d float64 array.

    Rejects empty shapes and non-finite entries.  Returns the input unchanged
    when it already is a float64 array, otherwise a converted copy.
    """
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name}: expected a 2-d array, got ndim={arr.ndim}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{name}: empty shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: entries must be finite")
    return arr


def vec(a: np.ndarray) -> np.ndarray:
    """Stack the columns of `a` into a single vector (column-major order)."""
    return np.ravel(a, order="F")


def unvec(v: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Inverse of :func:`vec` for the given (rows, cols) shape."""
    return np.reshape(v, shape, order="F")


def vec_stack(atoms: np.ndarray) -> np.ndarray:
    """Apply :func:`vec` to every matrix in a (k, m, T) stack, giving (k, m*T)."""
    k, m, t = atoms.shape
    return atoms.transpose(0, 2, 1).reshape(k, m * t)


def inner_product(a, b) -> float:
    """Trace inner product tr(A^T B) of two equally shaped matrices."""
    a = as_matrix(a, "A")
    b = as_matrix(b, "B")
    if a.shape != b.shape:
        raise DimensionMismatchError("inner_product", a.shape, b.shape)
    return float(np.sum(a * b))


@dataclass(frozen=True)
class SvdFactors:
    """Thin SVD of a matrix: ``A = left @ diag(values) @ right.T``.

    `left` is (m, k) and `right` is (T, k) with orthonormal columns,
    `values` is the nonincreasing vector of k = min(m, T) singular values.
    """

    left: np.ndarray
    values: np.ndarray
    right: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.left * self.values) @ self.right.T


def svd(a) -> SvdFactors:
    """Thin singular value decomposition with a robust LAPACK fallback.

    numpy's default divide-and-conquer driver occasionally fails to converge
    on ill-scaled inputs; in that case the slower Jacobi-style gesvd driver is
    tried before giving up.
    """
    a = as_matrix(a, "A")
    try:
        u, s, vt = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as first:
        try:
            u, s, vt = scipy.linalg.svd(a, full_matrices=False, lapack_driver="gesvd")
        except Exception as second:
            raise SvdError(
                f"SVD failed for shape {a.shape} (fro norm {np.linalg.norm(a):.3e}): "
                f"gesdd: {first}; gesvd: {second}"
            ) from second
    return SvdFactors(left=u, values=s, right=vt.T)


def singular_values(a) -> np.ndarray:
    """Nonincreasing singular values of `a`."""
    return svd(a).values


def numerical_rank(values: np.ndarray, rel_tol: float = RANK_REL_TOL) -> int:
    """Count singular values above ``rel_tol * max``; the zero matrix has rank 0."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0 or values[0] <= 0.0:
        return 0
    return int(np.count_nonzero(values > rel_tol * values[0]))


def schatten_norm(a, p) -> float:
    """p-norm of the singular value sequence, for p in [1, inf].

    Pass ``numpy.inf`` (or ``math.inf``) for the operator norm; values of p
    below 1 are rejected because quasi-norms are out of scope.
    """
    p = float(p)
    if not (p >= 1.0):
        raise ValueError(f"schatten_norm: p must be >= 1 (got {p})")
    s = singular_values(a)
    if math.isinf(p):
        return float(s[0])
    if p == 1.0:
        return float(np.sum(s))
    if p == 2.0:
        return float(np.sqrt(np.sum(s * s)))
    top = float(s[0])
    if top == 0.0:
        return 0.0
    return top * float(np.sum((s / top) ** p)) ** (1.0 / p)


def nuclear_norm(a) -> float:
    return schatten_norm(a, 1)


def frobenius_norm(a) -> float:
    return float(np.linalg.norm(np.asarray(a, dtype=np.float64)))


def operator_norm(a) -> float:
    return schatten_norm(a, np.inf)


def entrywise_norm(a, kind: str) -> float:
    """Entrywise l1 (``kind="l1"``) or max-absolute (``kind="linf"``) norm."""
    a = as_matrix(a, "A")
    if kind == "l1":
        return float(np.sum(np.abs(a)))
    if kind == "linf":
        return float(np.max(np.abs(a)))
    raise ValueError(f"entrywise_norm: unknown kind '{kind}' (expected 'l1' or 'linf')")


def empirical_sup_metric(a, xs) -> float:
    """max_i |<X_i, A>| over a nonempty collection of covariate matrices.

    `xs` may be a list of matrices or a (n, m, T) array; every X_i must have
    the shape of `a`.  This is a seminorm in A.
    """
    a = as_matrix(a, "A")
    stack = np.asarray(xs, dtype=np.float64)
    if stack.ndim == 2:
        stack = stack[None, :, :]
    if stack.ndim != 3 or stack.shape[0] == 0:
        raise ValueError("empirical_sup_metric: xs must be a nonempty list of matrices")
    if stack.shape[1:] != a.shape:
        raise DimensionMismatchError("empirical_sup_metric", stack.shape[1:], a.shape)
    products = np.tensordot(stack, a, axes=([1, 2], [0, 1]))
    return float(np.max(np.abs(products)))
