"""Tests for sparse ingestion, the multilabel reduction, and the generators."""

import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from softmax_bounds.datasets import (
    DatasetFormatError,
    ReduceReport,
    SparseDataset,
    SparseVector,
    gen_powerlaw_categorical,
    gen_toy_5class,
    load_sparse,
    reduce_multilabel,
    unify_pair,
    write_sparse,
)
from softmax_bounds.rng import substream


class TestSparseVector:
    def test_dense_round_trip(self):
        dense = np.array([0.0, 1.5, 0.0, -2.0, 0.0])
        v = SparseVector.from_dense(dense)
        np.testing.assert_array_equal(v.indices, [1, 3])
        np.testing.assert_array_equal(v.to_dense(5), dense)

    def test_validate(self):
        SparseVector(np.array([0, 2]), np.array([1.0, 2.0])).validate(3)
        with pytest.raises(ValueError):
            SparseVector(np.array([2, 0]), np.array([1.0, 2.0])).validate()
        with pytest.raises(ValueError):
            SparseVector(np.array([0, 0]), np.array([1.0, 2.0])).validate()
        with pytest.raises(ValueError):
            SparseVector(np.array([0]), np.array([np.nan])).validate()
        with pytest.raises(ValueError):
            SparseVector(np.array([0, 5]), np.array([1.0, 1.0])).validate(3)


class TestLoadSparse:
    def test_basic(self, tmp_path):
        p = tmp_path / "d.txt"
        p.write_text("3 1:0.5 7:2.0\n")
        ds = load_sparse(str(p))
        assert len(ds) == 1
        x, y = ds.rows[0]
        assert y == 2  # 1-based on disk
        assert x.nnz == 2
        np.testing.assert_array_equal(x.indices, [0, 6])
        np.testing.assert_array_equal(x.values, [0.5, 2.0])
        assert ds.num_classes == 3
        assert ds.num_features == 7

    def test_duplicate_index_reports_line(self, tmp_path):
        p = tmp_path / "d.txt"
        p.write_text("1 2:1 2:1\n")
        with pytest.raises(DatasetFormatError, match="line 1.*duplicate"):
            load_sparse(str(p))

    def test_unsorted_reports_line(self, tmp_path):
        p = tmp_path / "d.txt"
        p.write_text("1 1:1\n2 5:1 3:1\n")
        with pytest.raises(DatasetFormatError, match="line 2"):
            load_sparse(str(p))

    def test_bad_label(self, tmp_path):
        p = tmp_path / "d.txt"
        p.write_text("zero 1:1\n")
        with pytest.raises(DatasetFormatError, match="line 1.*label"):
            load_sparse(str(p))
        p.write_text("0 1:1\n")
        with pytest.raises(DatasetFormatError, match="label 0"):
            load_sparse(str(p))

    def test_missing_label(self, tmp_path):
        p = tmp_path / "d.txt"
        p.write_text("1:1 2:1\n")
        with pytest.raises(DatasetFormatError, match="line 1.*label"):
            load_sparse(str(p))

    def test_empty_file(self, tmp_path):
        p = tmp_path / "d.txt"
        p.write_text("\n\n")
        with pytest.raises(DatasetFormatError, match="no instances"):
            load_sparse(str(p))

    def test_blank_lines_skipped(self, tmp_path):
        p = tmp_path / "d.txt"
        p.write_text("1 1:1\n\n2 2:1\n")
        assert len(load_sparse(str(p))) == 2

    def test_empty_feature_row_allowed(self, tmp_path):
        p = tmp_path / "d.txt"
        p.write_text("1\n2 1:1\n")
        ds = load_sparse(str(p))
        assert ds.rows[0][0].nnz == 0

    def test_sidecar_overrides(self, tmp_path):
        p = tmp_path / "d.txt"
        p.write_text("1 1:1\n")
        (tmp_path / "d.txt.meta.json").write_text('{"K": 10, "D": 50}')
        ds = load_sparse(str(p))
        assert ds.num_classes == 10
        assert ds.num_features == 50

    def test_sidecar_too_small_rejected(self, tmp_path):
        p = tmp_path / "d.txt"
        p.write_text("5 9:1\n")
        (tmp_path / "d.txt.meta.json").write_text('{"K": 3, "D": 50}')
        with pytest.raises(DatasetFormatError, match="exceeds"):
            load_sparse(str(p))

    def test_explicit_counts_override(self, tmp_path):
        p = tmp_path / "d.txt"
        p.write_text("1 1:1\n")
        ds = load_sparse(str(p), num_classes=4, num_features=9)
        assert ds.num_classes == 4
        assert ds.num_features == 9

    def test_unknown_format(self, tmp_path):
        p = tmp_path / "d.txt"
        p.write_text("1 1:1\n")
        with pytest.raises(ValueError, match="format"):
            load_sparse(str(p), format="csv")

    def test_round_trip_identity(self, tmp_path):
        rng = substream(13, "roundtrip")
        rows = []
        for _ in range(60):
            nnz = int(rng.integers(0, 9))
            idx = np.sort(rng.choice(40, size=nnz, replace=False))
            vals = rng.normal(size=nnz)
            rows.append((SparseVector(idx, vals), int(rng.integers(0, 6))))
        # make every class and the last feature appear so inference is exact
        rows.append((SparseVector(np.array([39]), np.array([1.0])), 5))
        for k in range(5):
            rows.append((SparseVector(np.array([0]), np.array([1.0])), k))
        ds = SparseDataset(rows, 40, 6, "fixture")
        path = str(tmp_path / "rt.txt")
        write_sparse(ds, path)
        back = load_sparse(path)
        assert back.num_classes == ds.num_classes
        assert back.num_features == ds.num_features
        assert len(back) == len(ds)
        for (x0, y0), (x1, y1) in zip(ds.rows, back.rows):
            assert y0 == y1
            np.testing.assert_array_equal(x0.indices, x1.indices)
            np.testing.assert_array_equal(x0.values, x1.values)  # exact via repr

    @settings(max_examples=300, deadline=None)
    @given(blob=st.text(alphabet="0123456789.:eE+- \n,abz", max_size=200))
    def test_fuzz_never_crashes(self, blob):
        import tempfile

        with tempfile.NamedTemporaryFile("w", suffix=".txt", delete=False) as fh:
            fh.write(blob)
            path = fh.name
        try:
            ds = load_sparse(path)
        except DatasetFormatError as exc:
            msg = str(exc)
            assert "line" in msg or "no instances" in msg
        else:
            ds.validate()
        finally:
            import os

            os.unlink(path)


class TestCsr:
    def test_matches_dense(self):
        rng = substream(3, "csr")
        dense = rng.normal(size=(7, 5)) * (rng.uniform(size=(7, 5)) < 0.4)
        labels = rng.integers(0, 3, size=7)
        ds = SparseDataset.from_dense(dense, labels, 3)
        mat, y = ds.to_csr()
        np.testing.assert_array_equal(mat.toarray(), dense)
        np.testing.assert_array_equal(y, labels)


class TestReduceMultilabel:
    def test_keeps_first(self, tmp_path):
        p = tmp_path / "m.txt"
        p.write_text("5,2,9 1:1\n")
        rep = reduce_multilabel(str(p))
        assert rep.dataset.rows[0][1] == 4  # label 5, 0-based
        assert rep.dataset.num_classes == 5
        assert rep.num_kept == 1
        assert rep.num_dropped == 0

    def test_unlabeled_dropped_and_counted(self, tmp_path):
        p = tmp_path / "m.txt"
        p.write_text(" 1:1\n3 2:1\n1:5 2:1\n")
        rep = reduce_multilabel(str(p))
        assert rep.num_kept == 1
        assert rep.num_dropped == 2

    def test_idempotent_on_single_label(self, tmp_path):
        p = tmp_path / "m.txt"
        p.write_text("2 1:0.25 3:4.0\n1 2:1.0\n")
        rep = reduce_multilabel(str(p))
        direct = load_sparse(str(p))
        assert [y for _, y in rep.dataset.rows] == [y for _, y in direct.rows]
        q = tmp_path / "m2.txt"
        write_sparse(rep.dataset, str(q))
        rep2 = reduce_multilabel(str(q))
        assert [y for _, y in rep2.dataset.rows] == [y for _, y in rep.dataset.rows]
        assert rep2.num_dropped == 0

    def test_malformed_list(self, tmp_path):
        p = tmp_path / "m.txt"
        p.write_text("5,,2 1:1\n")
        with pytest.raises(DatasetFormatError, match="line 1"):
            reduce_multilabel(str(p))


class TestUnifyPair:
    def test_takes_maxima(self, tmp_path):
        a = tmp_path / "a.txt"
        b = tmp_path / "b.txt"
        a.write_text("3 5:1\n")
        b.write_text("1 9:1\n")
        train, test = unify_pair(load_sparse(str(a)), load_sparse(str(b)))
        assert train.num_classes == test.num_classes == 3
        assert train.num_features == test.num_features == 9


class TestToyGenerator:
    def test_balanced_split(self):
        ds = gen_toy_5class(200, seed=0)
        assert ds.num_classes == 5
        assert ds.num_features == 2
        counts = np.bincount(ds.labels(), minlength=5)
        np.testing.assert_array_equal(counts, [40] * 5)

    def test_remainder_distribution(self):
        ds = gen_toy_5class(7, seed=0)
        counts = np.bincount(ds.labels(), minlength=5)
        np.testing.assert_array_equal(counts, [2, 2, 1, 1, 1])

    def test_deterministic_bytes(self, tmp_path):
        a = tmp_path / "a.txt"
        b = tmp_path / "b.txt"
        write_sparse(gen_toy_5class(50, seed=9), str(a))
        write_sparse(gen_toy_5class(50, seed=9), str(b))
        assert a.read_bytes() == b.read_bytes()
        write_sparse(gen_toy_5class(50, seed=10), str(b))
        assert a.read_bytes() != b.read_bytes()

    def test_cluster_means(self):
        # with many points the class means land near the circle of radius 3
        ds = gen_toy_5class(50_000, seed=4)
        mat, y = ds.to_csr()
        dense = mat.toarray()
        for k in range(5):
            mean = dense[y == k].mean(axis=0)
            angle = 2 * np.pi * k / 5
            np.testing.assert_allclose(
                mean, [3 * np.cos(angle), 3 * np.sin(angle)], atol=0.1
            )

    def test_n_too_small(self):
        with pytest.raises(ValueError):
            gen_toy_5class(4, seed=0)


class TestPowerlawGenerator:
    def test_probabilities_normalized(self):
        _, p = gen_powerlaw_categorical(100, 1, seed=3)
        assert p.sum() == pytest.approx(1.0, abs=1e-12)
        assert (p > 0).all()

    def test_same_seed_identical(self):
        a, pa = gen_powerlaw_categorical(50, 1000, seed=8)
        b, pb = gen_powerlaw_categorical(50, 1000, seed=8)
        np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(pa, pb)

    def test_concentration(self):
        # empirical frequencies approach true p within 3.5 sigma binomial bounds
        labels, p = gen_powerlaw_categorical(20, 1_000_000, seed=5)
        freq = np.bincount(labels, minlength=20) / labels.size
        se = np.sqrt(p * (1 - p) / labels.size)
        assert np.all(np.abs(freq - p) <= 3.5 * se + 1e-9)

    def test_validation(self):
        with pytest.raises(ValueError):
            gen_powerlaw_categorical(1, 10, seed=0)
        with pytest.raises(ValueError):
            gen_powerlaw_categorical(5, 0, seed=0)
