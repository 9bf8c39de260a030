"""Pairwise feature construction."""

from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from ringwatch import comparators
from ringwatch.features import SchemaMismatchError, build_features

from .conftest import make_record


def full_record(schema, uid, **overrides):
    attrs = dict(
        ip="10.0.0.1",
        device_id="dev-1",
        bank_hash="bank-1",
        dob_hash="1990-01-01",
        referral_code="ref-1",
        name_token_set="ram kumar",
        user_agent="agent/1.0",
        geo_cell="100.0",
    )
    attrs.update(overrides)
    return make_record(schema, uid, **attrs)


def test_identical_records_all_features_max(schema):
    a = full_record(schema, 1)
    b = full_record(schema, 2)
    fv = build_features(a, b, schema)
    assert fv.features == tuple([1.0] * len(schema.attributes))
    assert fv.edge_id == "1-2"


def test_both_missing_encodes_zero(schema):
    a = make_record(schema, 1, ip="x")
    b = make_record(schema, 2, ip="x")
    fv = build_features(a, b, schema)
    by_name = dict(zip(schema.names, fv.features))
    assert by_name["device_id"] == 0.0
    assert by_name["name_token_set"] == 0.0
    assert by_name["ip"] == 1.0


def test_jaccard_hand_computed(schema):
    # Oracle: |{ram}| / |{ram, kumar, k}| = 1/3.
    a = make_record(schema, 1, name_token_set="ram kumar")
    b = make_record(schema, 2, name_token_set="ram k")
    fv = build_features(a, b, schema)
    by_name = dict(zip(schema.names, fv.features))
    assert by_name["name_token_set"] == pytest.approx(1 / 3)


def test_numeric_comparator_decays(schema):
    a = make_record(schema, 1, geo_cell="100")
    b = make_record(schema, 2, geo_cell="150")
    fv = build_features(a, b, schema)
    by_name = dict(zip(schema.names, fv.features))
    import math

    assert by_name["geo_cell"] == pytest.approx(math.exp(-50 / 50.0))


def test_self_pair_rejected(schema):
    a = full_record(schema, 1)
    with pytest.raises(ValueError):
        build_features(a, a, schema)


def test_schema_mismatch_names_versions(schema):
    a = full_record(schema, 1)
    b = full_record(schema, 2)
    object.__setattr__(a, "schema_version", "deadbeef0000")
    with pytest.raises(SchemaMismatchError) as exc:
        build_features(a, b, schema)
    assert "deadbeef0000" in str(exc.value)


@st.composite
def random_records(draw, schema):
    uid = draw(st.integers(1, 1000))
    attrs = {}
    if draw(st.booleans()):
        attrs["ip"] = draw(st.sampled_from(["a", "b", "c"]))
    if draw(st.booleans()):
        attrs["device_id"] = draw(st.sampled_from(["d1", "d2"]))
    if draw(st.booleans()):
        attrs["name_token_set"] = draw(st.sampled_from(["x y", "x z", "w"]))
    if draw(st.booleans()):
        attrs["user_agent"] = draw(st.sampled_from(["agent one", "agent two"]))
    if draw(st.booleans()):
        attrs["geo_cell"] = str(draw(st.integers(0, 500)))
    return make_record(default_schema_cached(), uid, **attrs)


_schema_singleton = None


def default_schema_cached():
    global _schema_singleton
    if _schema_singleton is None:
        from ringwatch.attributes import default_schema

        _schema_singleton = default_schema()
    return _schema_singleton


@given(data=st.data())
def test_feature_symmetry(data):
    schema = default_schema_cached()
    a = data.draw(random_records(schema))
    b = data.draw(random_records(schema))
    if a.user_id == b.user_id:
        return
    fab = build_features(a, b, schema)
    fba = build_features(b, a, schema)
    assert fab.features == fba.features
    assert fab.edge_id != fba.edge_id or a.user_id == b.user_id


@given(data=st.data())
def test_features_bounded(data):
    schema = default_schema_cached()
    a = data.draw(random_records(schema))
    b = data.draw(random_records(schema))
    if a.user_id == b.user_id:
        return
    fv = build_features(a, b, schema)
    assert all(0.0 <= f <= 1.0 for f in fv.features)


def test_levenshtein_comparator_oracle():
    # normalized similarity = 1 - distance/max_len
    assert comparators.levenshtein_distance("kitten", "sitting") == 3
    assert comparators.levenshtein_similarity("kitten", "sitting") == pytest.approx(1 - 3 / 7)
    assert comparators.levenshtein_similarity("", "") == 0.0
    assert comparators.levenshtein_similarity("abc", "abc") == 1.0
