import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scg.features import (
    NegativeDelta, TimeEncoder, edge_tokens, encode_time, featurize_edge, fnv1a_64, hash_index_sign,
)

from helpers import DATA

VECTORS = [json.loads(line) for line in (DATA / "vectors.jsonl").read_text().splitlines()]


@pytest.mark.parametrize("row", VECTORS, ids=lambda r: r["fn"])
def test_golden_vectors(row):
    if row["fn"] == "fnv1a_64":
        assert fnv1a_64(row["token"]) == row["expected"]
    elif row["fn"] == "encode_time":
        np.testing.assert_allclose(encode_time(row["dt"], row["d_t"]), row["expected"], rtol=0, atol=1e-12)
    else:
        np.testing.assert_allclose(featurize_edge(row["kind"], row["attrs"], row["d_f"]), row["expected"],
                                   rtol=0, atol=1e-12)


def test_encode_time_zero():
    np.testing.assert_array_equal(encode_time(0.0, 8), [1, 0, 1, 0, 1, 0, 1, 0])


def test_encode_time_d2():
    np.testing.assert_allclose(encode_time(1.0, 2), [math.cos(1.0), math.sin(1.0)], atol=0, rtol=1e-15)


def test_encoder_validation():
    with pytest.raises(NegativeDelta):
        encode_time(-1.0)
    with pytest.raises(NegativeDelta):
        encode_time(float("nan"))
    with pytest.raises(ValueError):
        TimeEncoder(3)
    assert np.all(np.diff(TimeEncoder(16).omega) < 0)


def test_encoder_vectorizes():
    enc = TimeEncoder(8)
    dts = np.array([0.0, 1.0, 50.0])
    np.testing.assert_array_equal(enc(dts), np.stack([enc(d) for d in dts]))


def test_kind_only_is_one_hot():
    v = featurize_edge("WRITE", {}, 32)
    assert np.count_nonzero(v) == 1 and abs(np.abs(v).max() - 1.0) < 1e-15


def test_write_token_index_and_sign():
    idx, sign = hash_index_sign("kind=WRITE", 32)
    h = [r for r in VECTORS if r.get("token") == "kind=WRITE"][0]["expected"]
    assert idx == h % 32 and sign == (1.0 if h < 2 ** 63 else -1.0)
    assert featurize_edge("WRITE", None, 32)[idx] == sign


def test_tokens_are_a_set():
    assert edge_tokens("READ", {"a": "1"}) == ["a=1", "kind=READ"]


def test_cancellation_gives_zero_vector():
    # d_f=1 puts every token in one slot; find an attribute whose sign cancels the kind token
    base = hash_index_sign("kind=READ", 1)[1]
    for v in range(100):
        if hash_index_sign(f"x={v}", 1)[1] == -base:
            np.testing.assert_array_equal(featurize_edge("READ", {"x": str(v)}, 1), [0.0])
            return
    pytest.fail("no cancelling token found")


@settings(max_examples=300, deadline=None)
@given(st.floats(0, 1e9, allow_nan=False), st.sampled_from([2, 4, 16, 32]))
def test_time_pythagorean(dt, d_t):
    v = encode_time(dt, d_t)
    assert np.all(np.abs(v) <= 1.0)
    np.testing.assert_allclose(v[0::2] ** 2 + v[1::2] ** 2, 1.0, atol=1e-12, rtol=0)


@settings(max_examples=300, deadline=None)
@given(st.sampled_from(["READ", "WRITE", "EXEC"]),
       st.dictionaries(st.text(max_size=5), st.text(max_size=5), max_size=6),
       st.integers(1, 64))
def test_feature_norm_zero_or_one(kind, attrs, d_f):
    v = featurize_edge(kind, attrs, d_f)
    n = float(np.linalg.norm(v))
    assert abs(n) < 1e-9 or abs(n - 1) < 1e-9
    np.testing.assert_array_equal(v, featurize_edge(kind, dict(attrs), d_f))
