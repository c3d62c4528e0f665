"""Finite covariate designs, noise models and synthetic dataset generation.

A design is a finite discrete distribution over covariate matrices.  Keeping
the support finite means every population quantity (covariance, risks, excess
losses) can be computed exactly by enumerating atoms, which is what the
verification harness relies on.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional

import numpy as np
import scipy.integrate
import scipy.optimize

from .errors import DimensionMismatchError
from .linalg import as_matrix, vec, vec_stack

PROB_SUM_TOL = 1e-12
INVERTIBILITY_REL_TOL = 1e-10


def master_generator(seed: int) -> np.random.Generator:
    """Counter-based generator for a master seed."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def subseed_generator(seed: int, *indices: int) -> np.random.Generator:
    """Generator for the trial addressed by `indices` under master `seed`.

    Defined as Philox keyed by ``SeedSequence(seed, spawn_key=indices)``.
    This is the one derivation rule used everywhere, so concurrent trials are
    reproducible regardless of scheduling.
    """
    ss = np.random.SeedSequence(seed, spawn_key=tuple(int(i) for i in indices))
    return np.random.Generator(np.random.Philox(ss))


@dataclass
class DesignDistribution:
    """Finite distribution over covariate matrices with cached bound constants.

    Parameters
    ----------
    atoms : ndarray of shape (k, m, T)
        The support points X_1 .. X_k.
    probs : ndarray of shape (k,)
        Probabilities, nonnegative and summing to one.
    canonical_basis : bool
        True only for designs built by :func:`completion_design`, whose atoms
        are exactly the canonical basis matrices in column-major order.  The
        flag gates both the solver fast path and the log-dimension trim in the
        tuning formulas; it is never inferred from the atoms.
    """

    atoms: np.ndarray
    probs: np.ndarray
    canonical_basis: bool = False

    def __post_init__(self):
        self.atoms = np.asarray(self.atoms, dtype=np.float64)
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.atoms.ndim != 3 or self.atoms.shape[0] == 0:
            raise ValueError("atoms must be a nonempty (k, m, T) stack")
        if not np.all(np.isfinite(self.atoms)):
            raise ValueError("design atoms must be finite")
        if self.probs.shape != (self.atoms.shape[0],):
            raise ValueError("probs must have one entry per atom")
        if np.any(self.probs < 0.0):
            raise ValueError("probabilities must be nonnegative")
        if abs(float(self.probs.sum()) - 1.0) > PROB_SUM_TOL:
            raise ValueError(f"probabilities sum to {self.probs.sum()!r}, not 1")

    @property
    def n_atoms(self) -> int:
        return self.atoms.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.atoms.shape[1], self.atoms.shape[2]

    @property
    def dim_product(self) -> int:
        m, t = self.shape
        return m * t

    @cached_property
    def atoms_flat(self) -> np.ndarray:
        """(k, m*T) array whose rows are vec(X_k)."""
        return np.ascontiguousarray(vec_stack(self.atoms))

    @cached_property
    def max_spectral(self) -> float:
        """max_k of the operator norm of X_k."""
        return float(np.linalg.svd(self.atoms, compute_uv=False)[:, 0].max())

    @cached_property
    def max_frobenius(self) -> float:
        return float(np.sqrt((self.atoms_flat**2).sum(axis=1)).max())

    @cached_property
    def max_entry(self) -> float:
        return float(np.abs(self.atoms).max())

    @cached_property
    def covariance(self) -> np.ndarray:
        """Second-moment matrix sum_k p_k vec(X_k) vec(X_k)^T, (mT, mT)."""
        weighted = self.atoms_flat * self.probs[:, None]
        return weighted.T @ self.atoms_flat

    @cached_property
    def covariance_eigenvalues(self) -> tuple[float, float]:
        """(smallest, largest) eigenvalue of the covariance."""
        eigs = np.linalg.eigvalsh(self.covariance)
        return float(eigs[0]), float(eigs[-1])

    @property
    def covariance_invertible(self) -> bool:
        lo, hi = self.covariance_eigenvalues
        return lo > INVERTIBILITY_REL_TOL * hi

    def second_moment_opnorm(self, rel_tol: float = 1e-9, max_iter: int = 1000) -> float:
        """Largest eigenvalue of the covariance, by power iteration on the atoms.

        Avoids materializing the (mT, mT) covariance; deterministic start.
        """
        d = self.dim_product
        v = np.linspace(1.0, 2.0, d)
        v /= np.linalg.norm(v)
        lam = 0.0
        for _ in range(max_iter):
            w = (self.probs * (self.atoms_flat @ v)) @ self.atoms_flat
            lam_new = float(v @ w)
            norm_w = np.linalg.norm(w)
            if norm_w == 0.0:
                return 0.0
            v = w / norm_w
            if abs(lam_new - lam) <= rel_tol * max(lam_new, 1e-300):
                return lam_new
            lam = lam_new
        return lam

    def atom_products(self, a) -> np.ndarray:
        """Vector of <X_k, A> over the atoms."""
        a = as_matrix(a, "A")
        if a.shape != self.shape:
            raise DimensionMismatchError("atom_products", a.shape, self.shape)
        if self.canonical_basis:
            return vec(a)
        return self.atoms_flat @ vec(a)

    def sample_indices(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.choice(self.n_atoms, size=n, p=self.probs)


def completion_design(m: int, t: int) -> DesignDistribution:
    """Uniform distribution over the m*T canonical basis matrices.

    Atom number ell is the basis matrix with a one at row ``ell % m``,
    column ``ell // m``, so the atom order matches :func:`matpred.linalg.vec`
    and the covariance is the identity scaled by 1/(mT).
    """
    if m < 1 or t < 1:
        raise ValueError(f"completion_design: shape ({m}, {t}) must be positive")
    k = m * t
    atoms = np.zeros((k, m, t))
    idx = np.arange(k)
    atoms[idx, idx % m, idx // m] = 1.0
    probs = np.full(k, 1.0 / k)
    return DesignDistribution(atoms=atoms, probs=probs, canonical_basis=True)


def multitask_design(task_vectors) -> DesignDistribution:
    """Uniform distribution over column-embedded task feature vectors.

    `task_vectors` is a length-T list; entry j is a nonempty list of feature
    vectors in R^m for task j.  Atom (j, s) is the m-by-T matrix holding the
    s-th vector of task j in column j and zeros elsewhere.
    """
    if len(task_vectors) == 0:
        raise ValueError("multitask_design: task list is empty")
    t = len(task_vectors)
    flattened = []
    for j, vectors in enumerate(task_vectors):
        if len(vectors) == 0:
            raise ValueError(f"multitask_design: task {j} has no vectors")
        for x in vectors:
            x = np.asarray(x, dtype=np.float64)
            if x.ndim != 1:
                raise ValueError(f"multitask_design: task {j} vectors must be 1-d")
            flattened.append((j, x))
    m = flattened[0][1].shape[0]
    for j, x in flattened:
        if x.shape[0] != m:
            raise ValueError(
                f"multitask_design: task {j} vector length {x.shape[0]} != {m}"
            )
    atoms = np.zeros((len(flattened), m, t))
    for k, (j, x) in enumerate(flattened):
        atoms[k, :, j] = x
    probs = np.full(len(flattened), 1.0 / len(flattened))
    return DesignDistribution(atoms=atoms, probs=probs)


def _expectation_exceeds_two(transform: Callable[[np.ndarray], np.ndarray],
                             density: Callable[[np.ndarray], np.ndarray],
                             lo: float, hi: float) -> Callable[[float], float]:
    """Return c -> E[exp(transform(eps)/scale(c))] - 2 for root finding."""

    def gap(c: float) -> float:
        val, _ = scipy.integrate.quad(
            lambda u: np.exp(transform(u) / c) * density(u), lo, hi, limit=200
        )
        return val - 2.0

    return gap


@dataclass(frozen=True)
class NoiseModel:
    """Additive noise distribution with its tail-bound constants.

    The psi2 constant is the smallest c with E exp(eps^2/c^2) <= 2 and the
    psi1 constant the smallest c with E exp(|eps|/c) <= 2; both are obtained
    numerically (quadrature plus root finding) rather than from sharp-constant
    folklore.  `std` doubles as the conditional-variance bound.
    """

    kind: str
    scale: float
    sampler: Optional[Callable[[np.random.Generator, int], np.ndarray]] = None
    bounds_override: Optional[tuple[float, float, float]] = None  # (std, psi2, psi1)

    @staticmethod
    def gaussian(sigma: float) -> "NoiseModel":
        if not sigma > 0:
            raise ValueError("gaussian noise needs sigma > 0")
        return NoiseModel(kind="gaussian", scale=float(sigma))

    @staticmethod
    def bounded_uniform(half_width: float) -> "NoiseModel":
        if not half_width > 0:
            raise ValueError("bounded_uniform noise needs half_width > 0")
        return NoiseModel(kind="uniform", scale=float(half_width))

    @staticmethod
    def custom_subgaussian(sampler, std: float, psi2: float, psi1: float) -> "NoiseModel":
        return NoiseModel(
            kind="custom", scale=float(std), sampler=sampler,
            bounds_override=(float(std), float(psi2), float(psi1)),
        )

    @property
    def std(self) -> float:
        if self.kind == "gaussian":
            return self.scale
        if self.kind == "uniform":
            return self.scale / np.sqrt(3.0)
        return self.bounds_override[0]

    @property
    def variance(self) -> float:
        return self.std**2

    def _density(self):
        if self.kind == "gaussian":
            s = self.scale
            return (lambda u: np.exp(-(u * u) / (2 * s * s)) / (s * np.sqrt(2 * np.pi)),
                    -12.0 * s, 12.0 * s)
        if self.kind == "uniform":
            w = self.scale
            return (lambda u: np.full_like(np.asarray(u, dtype=float), 1.0 / (2 * w)),
                    -w, w)
        raise ValueError(f"no closed density for noise kind '{self.kind}'")

    @cached_property
    def psi2_bound(self) -> float:
        """Smallest c with E exp(eps^2 / c^2) <= 2.

        For centered gaussians E exp(eps^2/c^2) = (1 - 2 sigma^2/c^2)^{-1/2},
        so the bound is sigma * sqrt(8/3) exactly (the expectation is then 2);
        for other kinds it is found numerically.
        """
        if self.bounds_override is not None:
            return self.bounds_override[1]
        if self.kind == "gaussian":
            return self.scale * np.sqrt(8.0 / 3.0)
        density, lo, hi = self._density()
        gap = _expectation_exceeds_two(lambda u: u * u, density, lo, hi)
        # E exp(eps^2/c^2) decreases in c; bracket, then root-find over c.
        c_lo, c_hi = self.scale, self.scale * 64.0
        while gap(c_lo * c_lo) < 0.0:
            c_lo *= 0.5
            if c_lo < 1e-8 * self.scale:
                return c_lo
        return float(scipy.optimize.brentq(
            lambda c: gap(c * c), c_lo, c_hi, xtol=1e-12 * self.scale))

    @cached_property
    def psi1_bound(self) -> float:
        """Smallest c with E exp(|eps| / c) <= 2, found numerically."""
        if self.bounds_override is not None:
            return self.bounds_override[2]
        density, lo, hi = self._density()
        gap = _expectation_exceeds_two(np.abs, density, lo, hi)
        c_lo, c_hi = self.scale, self.scale * 64.0
        while gap(c_lo) < 0.0:
            c_lo *= 0.5
            if c_lo < 1e-8 * self.scale:
                return c_lo
        return float(scipy.optimize.brentq(gap, c_lo, c_hi, xtol=1e-12 * self.scale))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "gaussian":
            return rng.normal(0.0, self.scale, size=n)
        if self.kind == "uniform":
            return rng.uniform(-self.scale, self.scale, size=n)
        return np.asarray(self.sampler(rng, n), dtype=np.float64)

    def to_params(self) -> dict:
        return {"kind": self.kind, "scale": self.scale}


@dataclass(frozen=True)
class Truth:
    """Ground truth attached to a synthetic dataset."""

    a0: np.ndarray
    noise: NoiseModel
    design: DesignDistribution


@dataclass
class Dataset:
    """n covariate/response pairs, stored compactly when design-generated.

    Either `atom_indices` (indices into ``design.atoms``) or `xs_stack`
    (a dense (n, m, T) array) is present.  `xs` materializes the dense stack
    either way.
    """

    ys: np.ndarray
    shape: tuple[int, int]
    atom_indices: Optional[np.ndarray] = None
    design: Optional[DesignDistribution] = None
    xs_stack: Optional[np.ndarray] = None
    truth: Optional[Truth] = None
    seed: Optional[int] = None

    def __post_init__(self):
        self.ys = np.asarray(self.ys, dtype=np.float64)
        if self.ys.ndim != 1 or self.ys.shape[0] < 1:
            raise ValueError("ys must be a nonempty 1-d array")
        if self.atom_indices is not None:
            self.atom_indices = np.asarray(self.atom_indices, dtype=np.int64)
            if self.design is None:
                raise ValueError("atom_indices require a design")
            if self.atom_indices.shape != self.ys.shape:
                raise ValueError("atom_indices and ys lengths differ")
        elif self.xs_stack is not None:
            self.xs_stack = np.asarray(self.xs_stack, dtype=np.float64)
            if self.xs_stack.shape != (self.ys.shape[0], *self.shape):
                raise ValueError(
                    f"xs_stack shape {self.xs_stack.shape} does not match "
                    f"n={self.ys.shape[0]}, shape={self.shape}"
                )
        else:
            raise ValueError("need atom_indices+design or xs_stack")

    @property
    def n(self) -> int:
        return self.ys.shape[0]

    @property
    def xs(self) -> np.ndarray:
        if self.xs_stack is not None:
            return self.xs_stack
        return self.design.atoms[self.atom_indices]

    def covariate(self, i: int) -> np.ndarray:
        if self.xs_stack is not None:
            return self.xs_stack[i]
        return self.design.atoms[self.atom_indices[i]]

    def predictions(self, a) -> np.ndarray:
        """Vector of <X_i, A> over the sample."""
        a = as_matrix(a, "A")
        if a.shape != self.shape:
            raise DimensionMismatchError("predictions", a.shape, self.shape)
        if self.atom_indices is not None:
            return self.design.atom_products(a)[self.atom_indices]
        return np.tensordot(self.xs_stack, a, axes=([1, 2], [0, 1]))

    def subset(self, indices) -> "Dataset":
        indices = np.asarray(indices, dtype=np.int64)
        if self.atom_indices is not None:
            return Dataset(
                ys=self.ys[indices], shape=self.shape,
                atom_indices=self.atom_indices[indices], design=self.design,
                truth=self.truth,
            )
        return Dataset(
            ys=self.ys[indices], shape=self.shape,
            xs_stack=self.xs_stack[indices], truth=self.truth,
        )

    @staticmethod
    def from_arrays(xs, ys) -> "Dataset":
        xs = np.asarray(xs, dtype=np.float64)
        if xs.ndim != 3:
            raise ValueError("xs must be a (n, m, T) array")
        return Dataset(ys=ys, shape=(xs.shape[1], xs.shape[2]), xs_stack=xs)


def generate_dataset(design: DesignDistribution, a0, noise: NoiseModel,
                     n: int, seed) -> Dataset:
    """Draw n i.i.d. pairs with X from the design and Y = <X, A0> + eps.

    `seed` is an integer (byte-identical regeneration guaranteed) or an
    already derived Generator (as produced by :func:`subseed_generator` for
    one trial of a larger experiment).
    """
    a0 = as_matrix(a0, "A0")
    if a0.shape != design.shape:
        raise DimensionMismatchError("generate_dataset", a0.shape, design.shape)
    if n < 1:
        raise ValueError("generate_dataset: n must be >= 1")
    if isinstance(seed, np.random.Generator):
        rng, stored_seed = seed, None
    else:
        rng, stored_seed = master_generator(seed), int(seed)
    idx = design.sample_indices(rng, n)
    eps = noise.sample(rng, n)
    ys = design.atom_products(a0)[idx] + eps
    return Dataset(
        ys=ys, shape=design.shape, atom_indices=idx, design=design,
        truth=Truth(a0=a0, noise=noise, design=design), seed=stored_seed,
    )


@dataclass(frozen=True)
class NoiseConstants:
    """Response-side bound constants for a linear truth under a finite design.

    mean_max bounds |E(Y|X)|, rms bounds sqrt(E Y^2), std bounds the
    conditional standard deviation, psi2/psi1 bound the noise tails.
    """

    mean_max: float
    rms: float
    std: float
    psi2: float
    psi1: float


def noise_constants(design: DesignDistribution, a0, noise: NoiseModel) -> NoiseConstants:
    """Assemble the response bound constants by enumerating the design atoms."""
    a0 = as_matrix(a0, "A0")
    if a0.shape != design.shape:
        raise DimensionMismatchError("noise_constants", a0.shape, design.shape)
    products = design.atom_products(a0)
    mean_max = float(np.abs(products).max())
    second_moment = float(design.probs @ (products**2)) + noise.variance
    return NoiseConstants(
        mean_max=mean_max,
        rms=float(np.sqrt(second_moment)),
        std=noise.std,
        psi2=noise.psi2_bound,
        psi1=noise.psi1_bound,
    )


def low_rank_truth(shape: tuple[int, int], rank: int, nuclear_norm: float,
                   seed: int) -> np.ndarray:
    """Deterministic random matrix of the given rank, rescaled in nuclear norm.

    Gaussian factors are drawn from the master generator for `seed`, so the
    same (shape, rank, seed) always gives the same matrix.
    """
    m, t = shape
    rank = min(rank, m, t)
    rng = master_generator(seed)
    left = rng.standard_normal((m, rank))
    right = rng.standard_normal((t, rank))
    a = left @ right.T
    current = np.linalg.svd(a, compute_uv=False).sum()
    if current == 0.0:
        raise ValueError("degenerate truth draw")
    return a * (nuclear_norm / current)
