import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from mhpl.data import (DimensionMismatch, EmptySet, FeatureSet, LabelOutOfRange, MalformedHeader,
                       NonFiniteEntry, SplitAssignment, load_feature_set, normalize_rows,
                       save_feature_set)


def test_binary_round_trip_smallest(tmp_path):
    fs = FeatureSet([[1, 0, 0], [0, 1, 0]], K=2, labels=[0, 1])
    path = tmp_path / "a.fmx"
    save_feature_set(fs, path)
    back = load_feature_set(path, "binary")
    assert back.n == 2 and back.d == 3 and back.K == 2
    assert np.array_equal(back.features, fs.features)
    assert back.labels.tolist() == [0, 1]
    assert back.domain_tags is None


def test_binary_layout_matches_documented_format(tmp_path):
    fs = FeatureSet([[1.5, -2.0]], K=3, labels=[2], domain_tags=[2])
    path = tmp_path / "a.fmx"
    save_feature_set(fs, path)
    raw = path.read_bytes()
    assert raw[:4] == b"FMX1"
    assert struct.unpack_from("<IIIB", raw, 4) == (1, 2, 3, 0b11)
    assert struct.unpack_from("<ff", raw, 17) == (1.5, -2.0)
    assert struct.unpack_from("<I", raw, 25) == (2,)
    assert raw[29] == 2 and len(raw) == 30


def test_csv_smallest_parse(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("f0,f1,label\n1,0,0\n0,1,1\n")
    fs = load_feature_set(p, "csv")
    assert (fs.n, fs.d, fs.K) == (2, 2, 2)
    assert fs.labels.tolist() == [0, 1]


def test_csv_without_labels_needs_k(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("f0,f1\n1,0\n0,1\n")
    fs = load_feature_set(p, "csv", K=4)
    assert fs.labels is None and fs.K == 4


def test_nan_row_is_reported(tmp_path):
    x = np.ones((8, 3))
    x[5, 1] = np.nan
    p = tmp_path / "a.csv"
    p.write_text("f0,f1,f2\n" + "\n".join(",".join(str(v) for v in r) for r in x) + "\n")
    with pytest.raises(NonFiniteEntry) as err:
        load_feature_set(p, K=2)
    assert err.value.row == 5


def test_nan_row_in_binary(tmp_path):
    x = np.ones((8, 3), dtype="<f4")
    x[5, 0] = np.inf
    p = tmp_path / "a.fmx"
    p.write_bytes(struct.pack("<4sIIIB", b"FMX1", 8, 3, 2, 0) + x.tobytes())
    with pytest.raises(NonFiniteEntry) as err:
        load_feature_set(p)
    assert err.value.row == 5


def test_label_out_of_range(tmp_path):
    p = tmp_path / "a.fmx"
    p.write_bytes(struct.pack("<4sIIIB", b"FMX1", 2, 1, 2, 1)
                  + np.zeros(2, "<f4").tobytes() + np.array([0, 2], "<u4").tobytes())
    with pytest.raises(LabelOutOfRange) as err:
        load_feature_set(p)
    assert err.value.row == 1


def test_bad_magic_and_truncation(tmp_path):
    p = tmp_path / "a.fmx"
    p.write_bytes(b"XXXX" + bytes(13))
    with pytest.raises(MalformedHeader):
        load_feature_set(p)
    p.write_bytes(struct.pack("<4sIIIB", b"FMX1", 2, 3, 2, 0) + bytes(8))
    with pytest.raises(DimensionMismatch):
        load_feature_set(p)


def test_csv_dimension_mismatch(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("f0,f1\n1,0\n0\n")
    with pytest.raises(DimensionMismatch) as err:
        load_feature_set(p, K=2)
    assert err.value.row == 1


def test_csv_bad_header(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("a,b\n1,0\n")
    with pytest.raises(MalformedHeader):
        load_feature_set(p, K=2)


def test_unlabeled_set_round_trips_without_label_block(tmp_path):
    fs = FeatureSet(np.eye(3), K=3)
    p = tmp_path / "a.fmx"
    save_feature_set(fs, p)
    assert len(p.read_bytes()) == 17 + 4 * 9
    assert load_feature_set(p).labels is None


def test_empty_set_rejected():
    with pytest.raises(EmptySet):
        FeatureSet(np.zeros((0, 3)), K=2)


def test_normalize_rows_examples():
    fs = normalize_rows(FeatureSet([[3.0, 4.0], [0.0, 0.0], [1.0, 0.0]], K=2))
    assert np.allclose(fs.features[0], [0.6, 0.8], atol=1e-15)
    assert fs.features[1].tolist() == [0.0, 0.0]
    assert fs.degenerate_rows == (1,)
    assert np.abs(fs.features[2] - [1.0, 0.0]).max() <= 1e-12


def test_split_assignment_partition():
    s = SplitAssignment.from_selected([4, 1], 6)
    assert s.m == 2
    assert set(s.labeled_idx) | set(s.unlabeled_idx) == set(range(6))
    assert not set(s.labeled_idx) & set(s.unlabeled_idx)
    with pytest.raises(ValueError):
        SplitAssignment.from_selected([1, 1], 6)


feature_sets = st.integers(1, 12).flatmap(lambda n: st.integers(1, 6).flatmap(
    lambda d: st.tuples(
        arrays(np.float64, (n, d), elements=st.floats(-1e6, 1e6, allow_nan=False, width=32)),
        st.integers(2, 5).flatmap(lambda K: st.tuples(st.just(K), st.lists(st.integers(0, K - 1), min_size=n, max_size=n))),
        st.booleans())))


@settings(max_examples=60, deadline=None)
@given(feature_sets)
def test_round_trip_property(tmp_path_factory, case):
    x, (K, labels), with_labels = case
    fs = FeatureSet(x, K=K, labels=labels if with_labels else None)
    p = tmp_path_factory.mktemp("rt") / "x.fmx"
    save_feature_set(fs, p)
    back = load_feature_set(p)
    assert np.array_equal(back.features, x.astype(np.float32).astype(np.float64))
    assert back.K == K
    if with_labels:
        assert back.labels.tolist() == list(labels)
    else:
        assert back.labels is None


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 10), st.integers(1, 6)),
              elements=st.floats(-1e3, 1e3, allow_nan=False)))
def test_normalize_idempotent(x):
    once = normalize_rows(FeatureSet(x, K=2))
    twice = normalize_rows(once)
    assert np.abs(once.features - twice.features).max() <= 1e-12
    norms = np.linalg.norm(once.features, axis=1)
    for i, nrm in enumerate(norms):
        assert abs(nrm - 1.0) <= 1e-9 or (nrm == 0.0 and i in once.degenerate_rows)
