import numpy as np
import pytest
import scipy.integrate

from matpred.designs import (Dataset, NoiseModel, completion_design,
                             generate_dataset, low_rank_truth,
                             multitask_design, noise_constants,
                             subseed_generator)
from matpred.errors import DimensionMismatchError
from matpred.linalg import vec


def test_completion_design_2x3():
    d = completion_design(2, 3)
    assert d.n_atoms == 6
    assert np.allclose(d.probs, 1 / 6)
    assert np.allclose(d.covariance, np.eye(6) / 6, atol=1e-15)
    assert d.max_spectral == 1.0 and d.max_frobenius == 1.0 and d.max_entry == 1.0


def test_completion_design_1x1_and_eigs():
    d = completion_design(1, 1)
    assert d.n_atoms == 1 and np.allclose(d.atoms[0], [[1.0]])
    assert np.allclose(d.covariance, [[1.0]])
    d3 = completion_design(3, 3)
    lo, hi = d3.covariance_eigenvalues
    assert lo == pytest.approx(1 / 9, rel=1e-12)
    assert hi == pytest.approx(1 / 9, rel=1e-12)


def test_completion_covariance_entrywise_formula():
    d = completion_design(3, 4)
    assembled = np.zeros((12, 12))
    for x, p in zip(d.atoms, d.probs):
        v = vec(x)
        assembled += p * np.outer(v, v)
    assert np.max(np.abs(assembled - d.covariance)) <= 1e-14
    assert np.max(np.abs(d.covariance - np.eye(12) / 12)) <= 1e-14


def test_design_bounds_match_recomputation():
    rng = np.random.default_rng(0)
    atoms = rng.standard_normal((5, 3, 2))
    probs = np.full(5, 0.2)
    from matpred.designs import DesignDistribution
    d = DesignDistribution(atoms=atoms, probs=probs)
    assert d.max_spectral == pytest.approx(
        max(np.linalg.norm(a, 2) for a in atoms), rel=1e-13)
    assert d.max_frobenius == pytest.approx(
        max(np.linalg.norm(a) for a in atoms), rel=1e-13)
    assert d.max_entry == pytest.approx(max(np.abs(a).max() for a in atoms))
    lo, hi = d.covariance_eigenvalues
    assert lo >= -1e-10 * hi
    assert d.second_moment_opnorm() == pytest.approx(hi, rel=1e-6)


def test_multitask_single_task_rank_one():
    e1 = [1.0, 0.0]
    d = multitask_design([[e1]])
    assert d.shape == (2, 1)
    assert np.allclose(d.covariance, np.diag([1.0, 0.0]))
    assert not d.covariance_invertible


def test_multitask_two_tasks_identity_covariance():
    basis = [[1.0, 0.0], [0.0, 1.0]]
    d = multitask_design([basis, basis])
    assert d.n_atoms == 4
    assert np.allclose(d.covariance, np.eye(4) / 4, atol=1e-15)
    lo, _ = d.covariance_eigenvalues
    # per-task second moment has smallest eigenvalue 1/2; T = 2
    assert lo >= 0.5 / 2 - 1e-12
    assert d.max_spectral == 1.0 and d.max_entry == 1.0 and d.max_frobenius == 1.0


def test_multitask_block_diagonal_structure():
    rng = np.random.default_rng(1)
    vectors = [[rng.standard_normal(3) for _ in range(4)] for _ in range(2)]
    d = multitask_design(vectors)
    cov = d.covariance
    m, t = 3, 2
    off_block = cov[:m, m:]
    assert np.max(np.abs(off_block)) <= 1e-14
    total = sum(len(v) for v in vectors)
    for j in range(t):
        expected = sum(np.outer(x, x) for x in vectors[j]) / total
        block = cov[j * m:(j + 1) * m, j * m:(j + 1) * m]
        assert np.max(np.abs(block - expected)) <= 1e-12


def test_multitask_empty_task_rejected():
    with pytest.raises(ValueError):
        multitask_design([])
    with pytest.raises(ValueError):
        multitask_design([[np.ones(2)], []])


def test_generate_dataset_noiseless_limit():
    d = completion_design(3, 3)
    a0 = low_rank_truth((3, 3), 2, 4.0, seed=5)
    data = generate_dataset(d, a0, NoiseModel.gaussian(1e-12), 200, seed=9)
    preds = data.predictions(a0)
    assert np.max(np.abs(data.ys - preds)) <= 1e-9


def test_generate_dataset_atom_frequencies():
    d = completion_design(4, 4)
    a0 = np.zeros((4, 4))
    data = generate_dataset(d, a0, NoiseModel.gaussian(1.0), 100_000, seed=11)
    counts = np.bincount(data.atom_indices, minlength=16)
    p = 1 / 16
    se = np.sqrt(p * (1 - p) / data.n)
    assert np.all(np.abs(counts / data.n - p) <= 4 * se)


def test_generate_dataset_residual_variance():
    d = completion_design(3, 3)
    a0 = low_rank_truth((3, 3), 1, 2.0, seed=2)
    data = generate_dataset(d, a0, NoiseModel.gaussian(0.5), 100_000, seed=13)
    resid = data.ys - data.predictions(a0)
    assert 0.24 <= np.var(resid) <= 0.26


def test_generate_dataset_reproducible():
    d = completion_design(2, 2)
    a0 = np.ones((2, 2))
    one = generate_dataset(d, a0, NoiseModel.gaussian(0.3), 64, seed=21)
    two = generate_dataset(d, a0, NoiseModel.gaussian(0.3), 64, seed=21)
    assert one.ys.tobytes() == two.ys.tobytes()
    assert one.atom_indices.tobytes() == two.atom_indices.tobytes()
    other = generate_dataset(d, a0, NoiseModel.gaussian(0.3), 64, seed=22)
    assert one.ys.tobytes() != other.ys.tobytes()


def test_generate_dataset_shape_mismatch():
    d = completion_design(2, 2)
    with pytest.raises(DimensionMismatchError):
        generate_dataset(d, np.zeros((3, 2)), NoiseModel.gaussian(1.0), 5, seed=0)


def test_subseed_streams_differ():
    a = subseed_generator(7, 0).standard_normal(4)
    b = subseed_generator(7, 1).standard_normal(4)
    c = subseed_generator(7, 0).standard_normal(4)
    assert np.array_equal(a, c)
    assert not np.array_equal(a, b)


def test_noise_constants_zero_truth():
    d = completion_design(2, 2)
    k = noise_constants(d, np.zeros((2, 2)), NoiseModel.gaussian(0.7))
    assert k.mean_max == 0.0
    assert k.rms == pytest.approx(0.7)
    assert k.std == pytest.approx(0.7)


def test_noise_constants_enumerated():
    d = completion_design(2, 2)
    a0 = np.array([[1.0, 2.0], [3.0, 4.0]])
    k = noise_constants(d, a0, NoiseModel.custom_subgaussian(
        lambda rng, n: np.zeros(n), std=0.0, psi2=0.0, psi1=0.0))
    assert k.mean_max == 4.0
    assert k.rms**2 == pytest.approx(30.0 / 4.0, rel=1e-12)


def _expect_exp(noise, transform, c):
    density, lo, hi = noise._density()
    val, _ = scipy.integrate.quad(
        lambda u: np.exp(transform(u) / c) * density(u), lo, hi, limit=200)
    return val


def test_gaussian_psi2_admissible_by_quadrature():
    noise = NoiseModel.gaussian(1.0)
    b = noise.psi2_bound
    assert b == pytest.approx(np.sqrt(8.0 / 3.0), rel=1e-12)
    assert _expect_exp(noise, lambda u: u * u, b * b) <= 2.0 + 1e-6


def test_gaussian_psi1_admissible_by_quadrature():
    noise = NoiseModel.gaussian(2.0)
    b = noise.psi1_bound
    value = _expect_exp(noise, np.abs, b)
    assert value == pytest.approx(2.0, abs=1e-8)
    # scale equivariance of the numeric solve
    assert b == pytest.approx(2.0 * NoiseModel.gaussian(1.0).psi1_bound, rel=1e-9)


def test_uniform_noise_constants():
    noise = NoiseModel.bounded_uniform(1.5)
    assert noise.std == pytest.approx(1.5 / np.sqrt(3))
    assert _expect_exp(noise, lambda u: u * u, noise.psi2_bound**2) <= 2.0 + 1e-8
    assert _expect_exp(noise, np.abs, noise.psi1_bound) == pytest.approx(2.0, abs=1e-8)


def test_dataset_subset_and_dense_roundtrip():
    d = completion_design(2, 3)
    a0 = low_rank_truth((2, 3), 1, 1.0, seed=3)
    data = generate_dataset(d, a0, NoiseModel.gaussian(0.1), 30, seed=4)
    sub = data.subset(np.arange(10))
    assert sub.n == 10
    assert np.array_equal(sub.ys, data.ys[:10])
    dense = Dataset.from_arrays(data.xs, data.ys)
    assert np.allclose(dense.predictions(a0), data.predictions(a0))


def test_low_rank_truth_properties():
    a = low_rank_truth((6, 5), 2, 5.0, seed=8)
    s = np.linalg.svd(a, compute_uv=False)
    assert np.sum(s) == pytest.approx(5.0, rel=1e-12)
    assert np.sum(s > 1e-10 * s[0]) == 2
    b = low_rank_truth((6, 5), 2, 5.0, seed=8)
    assert np.array_equal(a, b)
