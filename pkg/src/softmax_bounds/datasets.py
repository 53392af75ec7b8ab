"""Sparse dataset ingestion and the synthetic generators for the experiments.

On-disk format is libsvm-like text: one instance per line,

    label idx:val idx:val ...

with 1-based labels and 1-based, strictly increasing feature indices. In
memory everything is 0-based (labels included) so arrays index naturally;
the loaders and writers translate at the boundary.

Class and feature counts are inferred as maxima over the file unless a
sidecar JSON file ``<path>.meta.json`` with keys ``{"K": ..., "D": ...}``
pins them (needed when the test split lacks the last class, say), or the
caller passes explicit counts.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from softmax_bounds.rng import substream

__all__ = [
    "DatasetFormatError",
    "SparseVector",
    "SparseDataset",
    "ReduceReport",
    "load_sparse",
    "write_sparse",
    "reduce_multilabel",
    "unify_pair",
    "gen_toy_5class",
    "gen_powerlaw_categorical",
]


class DatasetFormatError(ValueError):
    """A dataset file is malformed; the message carries the line number."""


@dataclass
class SparseVector:
    """One sparse feature vector: parallel index/value arrays.

    Indices are 0-based, strictly increasing; values are finite floats.
    """

    indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=np.float64)

    @property
    def nnz(self) -> int:
        return int(self.indices.size)

    def validate(self, num_features: int | None = None) -> None:
        if self.indices.ndim != 1 or self.values.ndim != 1:
            raise ValueError("indices and values must be 1-D")
        if self.indices.size != self.values.size:
            raise ValueError("indices and values length mismatch")
        if self.indices.size:
            if self.indices[0] < 0:
                raise ValueError("negative feature index")
            if np.any(np.diff(self.indices) <= 0):
                raise ValueError("feature indices not strictly increasing")
            if num_features is not None and self.indices[-1] >= num_features:
                raise ValueError(
                    f"feature index {int(self.indices[-1])} out of range "
                    f"for {num_features} features"
                )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("non-finite feature value")

    def to_dense(self, num_features: int) -> np.ndarray:
        out = np.zeros(num_features)
        out[self.indices] = self.values
        return out

    @classmethod
    def from_dense(cls, dense) -> "SparseVector":
        dense = np.asarray(dense, dtype=np.float64)
        idx = np.flatnonzero(dense)
        return cls(idx, dense[idx])


@dataclass
class SparseDataset:
    """An immutable-by-convention labeled sparse dataset.

    ``rows`` pairs each SparseVector with its 0-based label.
    """

    rows: list[tuple[SparseVector, int]]
    num_features: int
    num_classes: int
    name: str = ""

    def __len__(self) -> int:
        return len(self.rows)

    def labels(self) -> np.ndarray:
        return np.array([y for _, y in self.rows], dtype=np.int64)

    def validate(self) -> None:
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.num_features < 1:
            raise ValueError(f"num_features must be >= 1, got {self.num_features}")
        for i, (x, y) in enumerate(self.rows):
            if not 0 <= y < self.num_classes:
                raise ValueError(f"row {i}: label {y} out of range")
            try:
                x.validate(self.num_features)
            except ValueError as exc:
                raise ValueError(f"row {i}: {exc}") from None

    def to_csr(self):
        """Features as a scipy CSR matrix plus the label vector."""
        from scipy.sparse import csr_matrix

        indptr = np.zeros(len(self.rows) + 1, dtype=np.int64)
        for i, (x, _) in enumerate(self.rows):
            indptr[i + 1] = indptr[i] + x.nnz
        indices = np.concatenate([x.indices for x, _ in self.rows]) if self.rows else np.zeros(0, dtype=np.int64)
        data = np.concatenate([x.values for x, _ in self.rows]) if self.rows else np.zeros(0)
        mat = csr_matrix(
            (data, indices, indptr), shape=(len(self.rows), self.num_features)
        )
        return mat, self.labels()

    @classmethod
    def from_dense(
        cls, features, labels, num_classes: int, name: str = ""
    ) -> "SparseDataset":
        features = np.asarray(features, dtype=np.float64)
        rows = [
            (SparseVector.from_dense(features[i]), int(labels[i]))
            for i in range(features.shape[0])
        ]
        return cls(rows, int(features.shape[1]), int(num_classes), name)


@dataclass
class ReduceReport:
    """Outcome of a multilabel-to-single-label reduction."""

    dataset: SparseDataset
    num_kept: int
    num_dropped: int


def _sidecar(path: str) -> dict:
    meta_path = path + ".meta.json"
    if not os.path.exists(meta_path):
        return {}
    with open(meta_path) as fh:
        meta = json.load(fh)
    if not isinstance(meta, dict):
        raise DatasetFormatError(f"{meta_path}: expected a JSON object")
    return meta


def _parse_features(tokens: list[str], lineno: int) -> SparseVector:
    idx = np.empty(len(tokens), dtype=np.int64)
    val = np.empty(len(tokens), dtype=np.float64)
    prev = 0  # indices are 1-based on disk, so 0 sits below every valid index
    for j, tok in enumerate(tokens):
        part = tok.partition(":")
        if part[1] != ":":
            raise DatasetFormatError(
                f"line {lineno}: expected idx:val pair, got {tok!r}"
            )
        try:
            i = int(part[0])
            v = float(part[2])
        except ValueError:
            raise DatasetFormatError(
                f"line {lineno}: cannot parse idx:val pair {tok!r}"
            ) from None
        if i < 1:
            raise DatasetFormatError(
                f"line {lineno}: feature index {i} must be >= 1"
            )
        if i == prev:
            raise DatasetFormatError(f"line {lineno}: duplicate feature index {i}")
        if i < prev:
            raise DatasetFormatError(
                f"line {lineno}: feature indices must be strictly increasing "
                f"({i} after {prev})"
            )
        if not np.isfinite(v):
            raise DatasetFormatError(f"line {lineno}: non-finite value in {tok!r}")
        idx[j] = i - 1
        val[j] = v
        prev = i
    return SparseVector(idx, val)


def _finalize(
    rows: list[tuple[SparseVector, int]],
    path: str,
    name: str,
    num_classes: int | None,
    num_features: int | None,
) -> SparseDataset:
    meta = _sidecar(path)
    if num_classes is None:
        num_classes = int(meta["K"]) if "K" in meta else 0
    if num_features is None:
        num_features = int(meta["D"]) if "D" in meta else 0
    max_label = max((y for _, y in rows), default=-1)
    max_feat = max((int(x.indices[-1]) for x, _ in rows if x.nnz), default=-1)
    if num_classes == 0:
        num_classes = max_label + 1
    if num_features == 0:
        num_features = max_feat + 1
    if max_label >= num_classes:
        raise DatasetFormatError(
            f"label {max_label + 1} exceeds declared class count {num_classes}"
        )
    if max_feat >= num_features:
        raise DatasetFormatError(
            f"feature index {max_feat + 1} exceeds declared dimension {num_features}"
        )
    ds = SparseDataset(rows, max(num_features, 1), max(num_classes, 2), name)
    ds.validate()
    return ds


def load_sparse(
    path: str,
    format: str = "libsvm_like",
    num_classes: int | None = None,
    num_features: int | None = None,
) -> SparseDataset:
    """Load a single-label sparse text file.

    Rejects duplicate or unsorted feature indices, unparsable tokens, and
    out-of-range labels, always naming the offending line. Blank lines are
    skipped. An empty file (no instances) is an error.
    """
    if format != "libsvm_like":
        raise ValueError(f"unknown format {format!r}")
    rows: list[tuple[SparseVector, int]] = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens:
                continue
            if ":" in tokens[0]:
                raise DatasetFormatError(f"line {lineno}: missing label field")
            try:
                label = int(tokens[0])
            except ValueError:
                raise DatasetFormatError(
                    f"line {lineno}: cannot parse label {tokens[0]!r}"
                ) from None
            if label < 1:
                raise DatasetFormatError(
                    f"line {lineno}: label {label} must be >= 1"
                )
            x = _parse_features(tokens[1:], lineno)
            rows.append((x, label - 1))
    if not rows:
        raise DatasetFormatError(f"{path}: no instances found")
    return _finalize(rows, path, os.path.basename(path), num_classes, num_features)


def write_sparse(dataset: SparseDataset, path: str, sidecar: bool = False) -> None:
    """Write a dataset in the libsvm-like format (1-based on disk).

    Values are formatted with repr, so write -> load round-trips exactly.
    With ``sidecar=True`` a ``<path>.meta.json`` pinning K and D is written
    alongside (otherwise a reload infers both as observed maxima).
    """
    with open(path, "w") as fh:
        for x, y in dataset.rows:
            parts = [str(y + 1)]
            parts.extend(
                f"{int(i) + 1}:{float(v)!r}" for i, v in zip(x.indices, x.values)
            )
            fh.write(" ".join(parts) + "\n")
    if sidecar:
        with open(path + ".meta.json", "w") as fh:
            json.dump({"K": dataset.num_classes, "D": dataset.num_features}, fh)
            fh.write("\n")


def reduce_multilabel(
    path: str,
    num_classes: int | None = None,
    num_features: int | None = None,
) -> ReduceReport:
    """Load a multilabel file, keeping only the first label of each row.

    The label field is a comma-separated list. Rows with no label field
    (line starts with an idx:val pair or whitespace) are dropped and counted
    rather than rejected. Already-single-label files pass through unchanged,
    so the reduction is idempotent.
    """
    rows: list[tuple[SparseVector, int]] = []
    dropped = 0
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens:
                continue
            if ":" in tokens[0]:
                # no label field: the row is unlabeled in this reduction
                dropped += 1
                continue
            label_tokens = tokens[0].split(",")
            if any(t == "" for t in label_tokens):
                raise DatasetFormatError(
                    f"line {lineno}: malformed label list {tokens[0]!r}"
                )
            try:
                first = int(label_tokens[0])
            except ValueError:
                raise DatasetFormatError(
                    f"line {lineno}: cannot parse label list {tokens[0]!r}"
                ) from None
            if first < 1:
                raise DatasetFormatError(
                    f"line {lineno}: label {first} must be >= 1"
                )
            x = _parse_features(tokens[1:], lineno)
            rows.append((x, first - 1))
    if not rows:
        raise DatasetFormatError(f"{path}: no labeled instances found")
    ds = _finalize(rows, path, os.path.basename(path), num_classes, num_features)
    return ReduceReport(dataset=ds, num_kept=len(rows), num_dropped=dropped)


def unify_pair(train: SparseDataset, test: SparseDataset) -> tuple[SparseDataset, SparseDataset]:
    """Give a train/test pair one shared K and D (the maxima of the two)."""
    k = max(train.num_classes, test.num_classes)
    d = max(train.num_features, test.num_features)
    out = []
    for ds in (train, test):
        out.append(SparseDataset(ds.rows, d, k, ds.name))
    return out[0], out[1]


def gen_toy_5class(n: int, seed: int) -> SparseDataset:
    """Two-dimensional 5-class Gaussian mixture.

    Class means sit on a circle of radius 3 at angles 2*pi*k/5, unit
    covariance, classes as balanced as n allows (n % 5 spilled over the
    first classes). Geometry is an artifact choice, fixed for
    reproducibility. Deterministic given seed.
    """
    if n < 5:
        raise ValueError(f"need n >= 5, got {n}")
    rng = substream(seed, "toy-data")
    per = [n // 5 + (1 if k < n % 5 else 0) for k in range(5)]
    rows: list[tuple[SparseVector, int]] = []
    for k, count in enumerate(per):
        angle = 2.0 * np.pi * k / 5.0
        mean = np.array([3.0 * np.cos(angle), 3.0 * np.sin(angle)])
        pts = rng.normal(size=(count, 2)) + mean
        for p in pts:
            rows.append((SparseVector(np.array([0, 1]), p.copy()), k))
    return SparseDataset(rows, 2, 5, f"toy5(n={n},seed={seed})")


def gen_powerlaw_categorical(
    num_classes: int, n: int, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Labels drawn i.i.d. from p(k) proportional to u_k^2, u_k ~ U[0,1].

    Returns (labels, true_p); labels are 0-based. Deterministic given seed.
    """
    if num_classes < 2:
        raise ValueError(f"need num_classes >= 2, got {num_classes}")
    if n < 1:
        raise ValueError(f"need n >= 1, got {n}")
    rng = substream(seed, "powerlaw")
    u = rng.uniform(size=num_classes)
    p = u**2
    p /= p.sum()
    labels = rng.choice(num_classes, size=n, p=p)
    return labels.astype(np.int64), p
