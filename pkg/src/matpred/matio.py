"""File formats: matrix CSV, design serialization, dataset export.

Floats are written with repr (shortest round-trip form), so writing the same
object twice produces byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .designs import Dataset, DesignDistribution
from .linalg import as_matrix, vec_stack

DESIGN_HEADER = "matpred-design v1"


def _format_row(row) -> str:
    return ",".join(repr(float(v)) for v in row)


def matrix_to_text(a) -> str:
    a = as_matrix(a, "matrix")
    return "\n".join(_format_row(row) for row in a) + "\n"


def write_matrix_csv(path, a) -> None:
    """One matrix row per line, comma-separated decimal entries, no header."""
    Path(path).write_text(matrix_to_text(a))


def read_matrix_csv(path) -> np.ndarray:
    """Parse a matrix CSV; ragged rows are rejected."""
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty matrix file")
    rows = []
    width = None
    for i, ln in enumerate(lines):
        cells = [c.strip() for c in ln.split(",")]
        if width is None:
            width = len(cells)
        elif len(cells) != width:
            raise ValueError(
                f"{path}: ragged row {i + 1} has {len(cells)} entries, expected {width}"
            )
        rows.append([float(c) for c in cells])
    return as_matrix(np.asarray(rows), str(path))


def design_to_text(design: DesignDistribution) -> str:
    parts = [DESIGN_HEADER,
             f"shape {design.shape[0]} {design.shape[1]}",
             f"atoms {design.n_atoms}",
             f"canonical_basis {int(design.canonical_basis)}"]
    for i in range(design.n_atoms):
        parts.append(f"atom {i} prob {float(design.probs[i])!r}")
        parts.append(matrix_to_text(design.atoms[i]).rstrip("\n"))
    return "\n".join(parts) + "\n"


def write_design(path, design: DesignDistribution) -> None:
    Path(path).write_text(design_to_text(design))


def read_design(path) -> DesignDistribution:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != DESIGN_HEADER:
        raise ValueError(f"{path}: not a design file (missing '{DESIGN_HEADER}')")
    shape_parts = lines[1].split()
    if shape_parts[0] != "shape":
        raise ValueError(f"{path}: expected 'shape m T' on line 2")
    m, t = int(shape_parts[1]), int(shape_parts[2])
    n_atoms = int(lines[2].split()[1])
    canonical = bool(int(lines[3].split()[1]))
    atoms = np.zeros((n_atoms, m, t))
    probs = np.zeros(n_atoms)
    cursor = 4
    for i in range(n_atoms):
        head = lines[cursor].split()
        if head[0] != "atom" or int(head[1]) != i:
            raise ValueError(f"{path}: expected 'atom {i} prob ...' at line {cursor + 1}")
        probs[i] = float(head[3])
        cursor += 1
        for r in range(m):
            atoms[i, r, :] = [float(c) for c in lines[cursor].split(",")]
            cursor += 1
    return DesignDistribution(atoms=atoms, probs=probs, canonical_basis=canonical)


def design_hash(design: DesignDistribution) -> str:
    """sha256 of the canonical text serialization."""
    return hashlib.sha256(design_to_text(design).encode()).hexdigest()


def jsonable(obj):
    """Recursively convert numpy scalars/arrays so json can serialize them."""
    if isinstance(obj, dict):
        return {k: jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def write_dataset(csv_path, meta_path, data: Dataset) -> None:
    """Export a dataset as CSV plus a JSON sidecar.

    Design-generated datasets are written in ``atoms`` form (atom index and
    response per row); dense datasets in ``dense`` form (vec(X_i) entries then
    the response).
    """
    lines = []
    if data.atom_indices is not None:
        form = "atoms"
        for idx, y in zip(data.atom_indices, data.ys):
            lines.append(f"{int(idx)},{float(y)!r}")
        dhash = design_hash(data.design)
    else:
        form = "dense"
        flat = vec_stack(data.xs_stack)
        for row, y in zip(flat, data.ys):
            lines.append(_format_row(row) + f",{float(y)!r}")
        dhash = None
    Path(csv_path).write_text("\n".join(lines) + "\n")
    meta = {
        "format": form,
        "n": int(data.n),
        "shape": [int(data.shape[0]), int(data.shape[1])],
        "seed": data.seed,
        "design_sha256": dhash,
        "noise": data.truth.noise.to_params() if data.truth is not None else None,
    }
    Path(meta_path).write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")


def read_dataset(csv_path, meta_path, design: DesignDistribution | None = None) -> Dataset:
    """Load a dataset written by :func:`write_dataset`.

    ``atoms``-form files need the matching design (hash-checked).
    """
    meta = json.loads(Path(meta_path).read_text())
    m, t = int(meta["shape"][0]), int(meta["shape"][1])
    lines = [ln for ln in Path(csv_path).read_text().splitlines() if ln.strip()]
    if meta["format"] == "atoms":
        if design is None:
            raise ValueError("atoms-form dataset needs its design to decode")
        if meta.get("design_sha256") not in (None, design_hash(design)):
            raise ValueError("dataset/design mismatch: sha256 differs")
        idx = np.zeros(len(lines), dtype=np.int64)
        ys = np.zeros(len(lines))
        for i, ln in enumerate(lines):
            a, b = ln.split(",")
            idx[i], ys[i] = int(a), float(b)
        return Dataset(ys=ys, shape=(m, t), atom_indices=idx, design=design,
                       seed=meta.get("seed"))
    if meta["format"] == "dense":
        xs = np.zeros((len(lines), m, t))
        ys = np.zeros(len(lines))
        width = m * t + 1
        for i, ln in enumerate(lines):
            cells = ln.split(",")
            if len(cells) != width:
                raise ValueError(
                    f"{csv_path}: row {i + 1} has {len(cells)} entries, expected {width}"
                )
            xs[i] = np.reshape([float(c) for c in cells[:-1]], (m, t), order="F")
            ys[i] = float(cells[-1])
        return Dataset(ys=ys, shape=(m, t), xs_stack=xs, seed=meta.get("seed"))
    raise ValueError(f"{meta_path}: unknown dataset format '{meta['format']}'")
