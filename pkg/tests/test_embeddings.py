import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from zlap.embeddings import (
    average_class_prompts,
    l2_normalize,
    load_class_names,
    load_features,
    load_labels,
    validate_labels,
    write_features,
    write_labels,
)
from zlap.errors import DataError, DegenerateInputError, EmptyInputError, FormatError, SizeError


def _raw_file(path, rows, dim, floats, magic=b"ZLAP", version=1):
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sIQQ", magic, version, rows, dim))
        fh.write(np.asarray(floats, "<f4").tobytes())


def test_load_hand_written_file(tmp_path):
    path = tmp_path / "m.zlap"
    _raw_file(path, 2, 3, [1, 2, 3, 4, 5, 6])
    m = load_features(path)
    assert m.dtype == np.float32
    np.testing.assert_array_equal(m, [[1, 2, 3], [4, 5, 6]])


def test_truncated_payload(tmp_path):
    path = tmp_path / "m.zlap"
    _raw_file(path, 2, 3, [1, 2, 3, 4, 5])
    with pytest.raises(SizeError):
        load_features(path)


@pytest.mark.parametrize("magic,version", [(b"ZLAX", 1), (b"ZLAP", 2)])
def test_bad_header(tmp_path, magic, version):
    path = tmp_path / "m.zlap"
    _raw_file(path, 1, 1, [1.0], magic=magic, version=version)
    with pytest.raises(FormatError):
        load_features(path)


def test_non_finite_payload(tmp_path):
    path = tmp_path / "m.zlap"
    _raw_file(path, 1, 2, [1.0, np.nan])
    with pytest.raises(DataError):
        load_features(path)


def test_round_trip_random(tmp_path, rng):
    m = rng.standard_normal((100, 64)).astype(np.float32)
    path = tmp_path / "m.zlap"
    write_features(path, m)
    back = load_features(path)
    assert back.tobytes() == m.tobytes()


@settings(max_examples=40, deadline=None)
@given(arrays(np.float32, st.tuples(st.integers(1, 6), st.integers(1, 6)),
              elements=st.floats(allow_nan=False, allow_infinity=False, width=32)))
def test_round_trip_property(tmp_path_factory, m):
    path = tmp_path_factory.mktemp("rt") / "m.zlap"
    write_features(path, m)
    assert load_features(path).tobytes() == m.tobytes()


def test_normalize_345():
    np.testing.assert_allclose(l2_normalize([[3.0, 4.0]]), [[0.6, 0.8]], rtol=1e-7)


def test_normalize_zero_row_names_index():
    with pytest.raises(DegenerateInputError) as info:
        l2_normalize([[1.0, 0.0], [0.0, 0.0]])
    assert info.value.index == 1
    assert "row 1" in str(info.value)


def test_normalize_random_norms(rng):
    out = l2_normalize(rng.standard_normal((50, 8)))
    norms = np.sqrt((out.astype(np.float64) ** 2).sum(axis=1))
    assert np.all(np.abs(norms - 1.0) <= 1e-4)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 8), st.integers(1, 8)), elements=st.floats(-100, 100)))
def test_normalize_idempotent(m):
    nonzero = np.abs(m).max(axis=1) > 1e-3
    m = m[nonzero]
    if m.shape[0] == 0:
        return
    once = l2_normalize(m)
    np.testing.assert_allclose(l2_normalize(once), once, atol=1e-7, rtol=0)


def test_average_single_prompt_is_identity(rng):
    prompts = l2_normalize(rng.standard_normal((4, 6)))
    np.testing.assert_allclose(average_class_prompts(prompts, 1), prompts, atol=1e-7)


def test_average_antipodal_prompts_rejected():
    v = np.array([[0.6, 0.8], [-0.6, -0.8]], np.float32)
    with pytest.raises(DegenerateInputError):
        average_class_prompts(v, 2)


def test_average_zero_prompts():
    with pytest.raises(EmptyInputError):
        average_class_prompts(np.ones((2, 2)), 0)


def test_average_matches_brute_force(rng):
    C, P, d = 5, 7, 10
    prompts = l2_normalize(rng.standard_normal((C * P, d)))
    got = average_class_prompts(prompts, P)
    for c in range(C):
        acc = np.zeros(d)
        for j in range(P):
            acc += prompts[c * P + j].astype(np.float64)
        acc /= P
        np.testing.assert_allclose(got[c], acc / np.sqrt((acc**2).sum()), atol=1e-6)


def test_average_commutes_with_prompt_permutation(rng):
    C, P = 3, 5
    prompts = l2_normalize(rng.standard_normal((C * P, 8)))
    perm = np.concatenate([c * P + rng.permutation(P) for c in range(C)])
    np.testing.assert_allclose(average_class_prompts(prompts[perm], P), average_class_prompts(prompts, P), atol=1e-6)


def test_label_and_name_files(tmp_path):
    write_labels(tmp_path / "l.txt", [2, 0, 1])
    np.testing.assert_array_equal(load_labels(tmp_path / "l.txt"), [2, 0, 1])
    (tmp_path / "names.txt").write_text("cat\ndog\n")
    assert load_class_names(tmp_path / "names.txt") == ["cat", "dog"]
    with pytest.raises(DataError):
        validate_labels([0, 3], num_classes=3)
    (tmp_path / "bad.txt").write_text("1\nx\n")
    with pytest.raises(FormatError):
        load_labels(tmp_path / "bad.txt")
