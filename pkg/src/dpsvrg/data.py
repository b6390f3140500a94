"""Dataset ingestion: dense CSV, sparse index:value text, and a synthetic generator."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.special import expit

from .objective import Dataset

__all__ = [
    "DataFormatError",
    "synth_dataset",
    "load_dataset",
    "load_csv",
    "load_libsvm",
    "write_csv",
    "write_libsvm",
    "planted_weights",
]


class DataFormatError(ValueError):
    pass


def planted_weights(d: int, sparsity: int, rng: np.random.Generator) -> np.ndarray:
    """``sparsity`` nonzeros with magnitudes in [1, 2] and random signs."""
    w = np.zeros(d)
    support = rng.choice(d, size=sparsity, replace=False)
    w[support] = rng.uniform(1.0, 2.0, size=sparsity) * rng.choice([-1.0, 1.0], size=sparsity)
    return w


def synth_dataset(
    n: int,
    d: int,
    sparsity: int,
    noise: float,
    seed: int,
    m: int = 1,
    *,
    scale: bool = False,
) -> tuple[Dataset, np.ndarray]:
    """Gaussian features and Bernoulli labels from a planted sparse logistic model.

    Returns the dataset split equally over ``m`` nodes and the planted
    weight vector. ``scale`` divides features by the largest row norm.
    """
    if n < 1 or d < 1:
        raise ValueError(f"n and d must be positive, got n={n}, d={d}")
    if not 0 <= sparsity <= d:
        raise ValueError(f"sparsity must lie in [0, {d}], got {sparsity}")
    if noise < 0:
        raise ValueError(f"noise must be >= 0, got {noise}")
    rng = np.random.default_rng(seed)
    w = planted_weights(d, sparsity, rng)
    X = rng.standard_normal((n, d))
    if scale:
        X /= np.linalg.norm(X, axis=1).max()
    logits = X @ w + noise * rng.standard_normal(n)
    y = (rng.random(n) < expit(logits)).astype(float)
    return Dataset.split(X, y, m), w


def _labels(raw: np.ndarray, positive_class: float | None, where: str) -> np.ndarray:
    if positive_class is not None:
        return (raw == positive_class).astype(float)
    if not np.all((raw == 0) | (raw == 1)):
        bad = np.unique(raw[(raw != 0) & (raw != 1)])[:5]
        raise DataFormatError(f"{where}: labels must be 0/1 (got {bad}); pass positive_class")
    return raw.astype(float)


def load_csv(path: str | Path, m: int = 1, *, positive_class: float | None = None) -> Dataset:
    """Dense CSV: label first, then features; one sample per line, no header."""
    rows, labels = [], []
    width = None
    with open(path) as fp:
        for lineno, line in enumerate(fp, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                vals = [float(v) for v in line.split(",")]
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from None
            if len(vals) < 2:
                raise DataFormatError(f"{path}:{lineno}: need a label and at least one feature")
            if width is None:
                width = len(vals)
            elif len(vals) != width:
                raise DataFormatError(f"{path}:{lineno}: expected {width} fields, got {len(vals)}")
            labels.append(vals[0])
            rows.append(vals[1:])
    if not rows:
        raise DataFormatError(f"{path}: empty file")
    y = _labels(np.array(labels), positive_class, str(path))
    return Dataset.split(np.array(rows), y, m)


def load_libsvm(
    path: str | Path, m: int = 1, *, d: int | None = None, positive_class: float | None = None
) -> Dataset:
    """Sparse ``label idx:val ...`` lines with 1-based feature indices."""
    entries, labels = [], []
    top = 0
    with open(path) as fp:
        for lineno, line in enumerate(fp, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            tok = line.split()
            try:
                label = float(tok[0])
                pairs = []
                for t in tok[1:]:
                    i, v = t.split(":")
                    i = int(i)
                    if i < 1:
                        raise ValueError(f"feature index {i} is not 1-based")
                    pairs.append((i - 1, float(v)))
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from None
            labels.append(label)
            entries.append(pairs)
            if pairs:
                top = max(top, max(i for i, _ in pairs) + 1)
    if not labels:
        raise DataFormatError(f"{path}: empty file")
    width = top if d is None else d
    if width < top:
        raise DataFormatError(f"{path}: feature index {top} exceeds d={d}")
    X = np.zeros((len(labels), width))
    for r, pairs in enumerate(entries):
        for i, v in pairs:
            X[r, i] = v
    y = _labels(np.array(labels), positive_class, str(path))
    return Dataset.split(X, y, m)


def load_dataset(path: str | Path, m: int = 1, *, fmt: str | None = None, **kw) -> Dataset:
    """Load by format name (``csv`` or ``libsvm``) or guess from the extension."""
    path = Path(path)
    if fmt is None:
        fmt = "csv" if path.suffix.lower() == ".csv" else "libsvm"
    if fmt == "csv":
        return load_csv(path, m, **kw)
    if fmt == "libsvm":
        return load_libsvm(path, m, **kw)
    raise ValueError(f"unknown dataset format {fmt!r}")


def write_csv(data: Dataset, path: str | Path) -> None:
    with open(path, "w") as fp:
        for yv, row in zip(data.labels, data.features):
            fp.write(",".join([repr(float(yv))] + [repr(float(v)) for v in row]) + "\n")


def write_libsvm(data: Dataset, path: str | Path) -> None:
    with open(path, "w") as fp:
        for yv, row in zip(data.labels, data.features):
            nz = np.flatnonzero(row)
            fp.write(" ".join([repr(float(yv))] + [f"{i + 1}:{float(row[i])!r}" for i in nz]) + "\n")
