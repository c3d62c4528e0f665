import numpy as np
import pytest

from matpred.designs import (Dataset, NoiseModel, completion_design,
                             generate_dataset, multitask_design)
from matpred.matio import (design_hash, read_dataset, read_design,
                           read_matrix_csv, write_dataset, write_design,
                           write_matrix_csv)


def test_matrix_csv_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    a = rng.standard_normal((4, 3)) * 1e-3
    path = tmp_path / "a.csv"
    write_matrix_csv(path, a)
    back = read_matrix_csv(path)
    assert np.array_equal(a, back)


def test_matrix_csv_byte_identical_rewrite(tmp_path):
    a = np.array([[0.1, -2.5e-17], [3.0, 4.125]])
    p1, p2 = tmp_path / "m1.csv", tmp_path / "m2.csv"
    write_matrix_csv(p1, a)
    write_matrix_csv(p2, a)
    assert p1.read_bytes() == p2.read_bytes()


def test_matrix_csv_rejects_ragged(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("1.0,2.0\n3.0\n")
    with pytest.raises(ValueError, match="ragged"):
        read_matrix_csv(path)


def test_design_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    d = multitask_design([[rng.standard_normal(3) for _ in range(2)],
                          [rng.standard_normal(3)]])
    path = tmp_path / "design.txt"
    write_design(path, d)
    back = read_design(path)
    assert np.array_equal(d.atoms, back.atoms)
    assert np.array_equal(d.probs, back.probs)
    assert back.canonical_basis == d.canonical_basis
    assert design_hash(d) == design_hash(back)


def test_design_hash_changes_with_design():
    assert design_hash(completion_design(2, 2)) != design_hash(completion_design(2, 3))


def test_dataset_atoms_roundtrip(tmp_path):
    d = completion_design(2, 3)
    a0 = np.arange(6.0).reshape(2, 3)
    data = generate_dataset(d, a0, NoiseModel.gaussian(0.4), 25, seed=3)
    csv, meta = tmp_path / "d.csv", tmp_path / "d.json"
    write_dataset(csv, meta, data)
    back = read_dataset(csv, meta, design=d)
    assert np.array_equal(back.ys, data.ys)
    assert np.array_equal(back.atom_indices, data.atom_indices)
    assert back.seed == 3


def test_dataset_atoms_requires_matching_design(tmp_path):
    d = completion_design(2, 2)
    data = generate_dataset(d, np.zeros((2, 2)), NoiseModel.gaussian(1.0), 5, seed=1)
    csv, meta = tmp_path / "d.csv", tmp_path / "d.json"
    write_dataset(csv, meta, data)
    with pytest.raises(ValueError):
        read_dataset(csv, meta)
    with pytest.raises(ValueError, match="sha256"):
        read_dataset(csv, meta, design=completion_design(2, 3))


def test_dataset_dense_roundtrip(tmp_path):
    rng = np.random.default_rng(4)
    xs = rng.standard_normal((7, 2, 2))
    ys = rng.standard_normal(7)
    data = Dataset.from_arrays(xs, ys)
    csv, meta = tmp_path / "dense.csv", tmp_path / "dense.json"
    write_dataset(csv, meta, data)
    back = read_dataset(csv, meta)
    assert np.array_equal(back.ys, ys)
    assert np.array_equal(back.xs_stack, xs)
