"""Schema IO, encoding round trips and change masks."""

from __future__ import annotations

import json

import numpy as np
import pytest

from cfsparse import (
    EncodedMatrix,
    InstanceSet,
    ValidationError,
    decode,
    diff_features,
    encode,
    fit_preprocess,
    load_schema,
    load_table,
    write_table,
)
from conftest import make_instances, make_schema

SCHEMA_JSON = {
    "features": [
        {"name": "age", "kind": "numeric"},
        {"name": "job", "kind": "categorical", "levels": ["A", "B", "C"]},
    ],
    "label": {"name": "y", "classes": ["0", "1"]},
}


def write_schema(tmp_path, obj=SCHEMA_JSON):
    path = tmp_path / "schema.json"
    path.write_text(json.dumps(obj))
    return path


def test_load_schema_basic(tmp_path):
    schema = load_schema(write_schema(tmp_path))
    assert schema.n_features == 2
    assert schema.encoded_width == 1 + 3
    assert schema.feature_names == ("age", "job")
    assert schema.column_map() == (0, 1, 1, 1)


def test_load_schema_duplicate_name(tmp_path):
    obj = {
        "features": [
            {"name": "age", "kind": "numeric"},
            {"name": "age", "kind": "numeric"},
        ],
        "label": {"name": "y", "classes": ["0", "1"]},
    }
    with pytest.raises(ValidationError, match="duplicate feature name"):
        load_schema(write_schema(tmp_path, obj))


def test_load_schema_single_level(tmp_path):
    obj = {
        "features": [
            {"name": "job", "kind": "categorical", "levels": ["only"]},
        ],
        "label": {"name": "y", "classes": ["0", "1"]},
    }
    with pytest.raises(ValidationError, match="fewer than 2 levels"):
        load_schema(write_schema(tmp_path, obj))


def test_load_schema_bad_json(tmp_path):
    path = tmp_path / "schema.json"
    path.write_text("{nope")
    with pytest.raises(ValidationError, match="invalid schema JSON"):
        load_schema(path)


def test_load_table_roundtrip(tmp_path):
    schema = load_schema(write_schema(tmp_path))
    csv_path = tmp_path / "data.csv"
    csv_path.write_text("age,job\n30,B\n")
    data = load_table(csv_path, schema)
    assert data.n_rows == 1
    assert data.rows[0] == (30.0, "B")


def test_load_table_bad_level(tmp_path):
    schema = load_schema(write_schema(tmp_path))
    csv_path = tmp_path / "data.csv"
    csv_path.write_text("age,job\n30,Z\n")
    with pytest.raises(ValidationError) as exc:
        load_table(csv_path, schema)
    msg = str(exc.value)
    assert "row 1" in msg and "job" in msg and "Z" in msg


def test_load_table_no_rows(tmp_path):
    schema = load_schema(write_schema(tmp_path))
    csv_path = tmp_path / "data.csv"
    csv_path.write_text("age,job\n")
    with pytest.raises(ValidationError, match="no rows"):
        load_table(csv_path, schema)


def test_load_table_unknown_and_missing_columns(tmp_path):
    schema = load_schema(write_schema(tmp_path))
    csv_path = tmp_path / "data.csv"
    csv_path.write_text("age,job,extra\n30,B,1\n")
    with pytest.raises(ValidationError, match="unknown column 'extra'"):
        load_table(csv_path, schema)
    csv_path.write_text("age\n30\n")
    with pytest.raises(ValidationError, match="missing column 'job'"):
        load_table(csv_path, schema)


def test_load_table_label_handling(tmp_path):
    schema = load_schema(write_schema(tmp_path))
    csv_path = tmp_path / "data.csv"
    csv_path.write_text("age,job,y\n30,B,1\n")
    data = load_table(csv_path, schema, expect_label=True)
    assert data.labels == ("1",)
    csv_path.write_text("age,job\n30,B\n")
    with pytest.raises(ValidationError, match="missing label column"):
        load_table(csv_path, schema, expect_label=True)


def test_load_table_non_finite(tmp_path):
    schema = load_schema(write_schema(tmp_path))
    csv_path = tmp_path / "data.csv"
    csv_path.write_text("age,job\nnan,B\n")
    with pytest.raises(ValidationError, match="non-finite"):
        load_table(csv_path, schema)


def test_fit_preprocess_hand_values():
    schema = make_schema(n_numeric=1, cat_levels=(3,))
    data = InstanceSet(schema, ((1.0, "A"), (3.0, "B")))
    prep = fit_preprocess(data)
    stats = prep.stats[0]
    # population std of [1, 3]: sqrt(((1-2)^2 + (3-2)^2) / 2) = 1
    assert stats.mean == 2.0
    assert stats.std == 1.0
    assert prep.width == 1 + 3
    assert not prep.constant


def test_fit_preprocess_constant_column():
    schema = make_schema(n_numeric=1)
    data = InstanceSet(schema, ((5.0,), (5.0,)))
    prep = fit_preprocess(data)
    assert prep.stats[0].mean == 5.0
    assert prep.stats[0].std == 1.0
    assert prep.constant == {0}


def test_encode_definition():
    schema = make_schema(n_numeric=1, cat_levels=(3,))
    data = InstanceSet(schema, ((1.0, "A"), (3.0, "B")))
    prep = fit_preprocess(data)
    enc = encode(InstanceSet(schema, ((3.0, "B"),)), prep)
    # x=3 with mean=2, std=1 -> 1.0; level B of {A,B,C} -> [0,1,0]
    assert enc.values[0].tolist() == [1.0, 0.0, 1.0, 0.0]


def test_encode_schema_mismatch():
    data = make_instances(make_schema(2), 3)
    prep = fit_preprocess(make_instances(make_schema(3), 3))
    with pytest.raises(ValidationError, match="schema"):
        encode(data, prep)


def test_roundtrip_many_random_sets():
    schema = make_schema(n_numeric=3, cat_levels=(2, 4))
    for seed in range(20):
        data = make_instances(schema, 17, seed=seed)
        prep = fit_preprocess(data)
        enc = encode(data, prep)
        # one-hot validity for every row and group
        for g, f in zip(schema.column_groups(), schema.features):
            if f.is_numeric:
                continue
            block = enc.values[:, list(g)]
            assert np.all((block == 0.0) | (block == 1.0))
            assert np.allclose(block.sum(axis=1), 1.0)
        back = decode(enc, prep)
        for orig, rt in zip(data.rows, back.rows):
            for f, a, b in zip(schema.features, orig, rt):
                if f.is_numeric:
                    assert abs(a - b) <= 1e-12 * max(1.0, abs(a))
                else:
                    assert a == b


def test_decode_argmax_with_warning():
    schema = make_schema(n_numeric=0, cat_levels=(3,))
    data = InstanceSet(schema, (("A",), ("B",)))
    prep = fit_preprocess(data)
    m = EncodedMatrix(np.array([[0.1, 0.8, 0.1]]), schema.column_map())
    with pytest.warns(UserWarning, match="off-grid"):
        back = decode(m, prep)
    assert back.rows[0] == ("B",)


def test_decode_all_zero_group_fails():
    schema = make_schema(n_numeric=0, cat_levels=(3,))
    prep = fit_preprocess(InstanceSet(schema, (("A",), ("B",))))
    m = EncodedMatrix(np.array([[0.0, 0.0, 0.0]]), schema.column_map())
    with pytest.raises(ValidationError, match="undecodable"):
        decode(m, prep)


def test_decode_numeric_definition():
    schema = make_schema(n_numeric=1)
    from cfsparse.schema import NumericStats, PreprocessSpec

    prep = PreprocessSpec(schema, (NumericStats(1.0, 2.0),))
    m = EncodedMatrix(np.array([[1.0]]), schema.column_map())
    assert decode(m, prep).rows[0][0] == 3.0


def test_diff_features_basic():
    schema = make_schema(n_numeric=1, cat_levels=(2,))
    a = InstanceSet(schema, ((30.0, "B"),))
    b = InstanceSet(schema, ((31.0, "B"),))
    mask = diff_features(a, b)
    assert mask.mask.tolist() == [[True, False]]
    assert mask.per_row_counts.tolist() == [1]
    assert mask.total == 1


def test_diff_features_identity_and_tolerance():
    schema = make_schema(n_numeric=1)
    a = InstanceSet(schema, ((1.0,),))
    assert diff_features(a, a).total == 0
    b = InstanceSet(schema, ((1.0 + 1e-12,),))
    assert diff_features(a, b, numeric_tol=1e-9).total == 0


def test_diff_features_symmetry_and_triangle():
    schema = make_schema(n_numeric=2, cat_levels=(3,))
    for seed in range(10):
        a = make_instances(schema, 9, seed=seed)
        b = make_instances(schema, 9, seed=seed + 100)
        c = make_instances(schema, 9, seed=seed + 200)
        ab = diff_features(a, b)
        ba = diff_features(b, a)
        assert np.array_equal(ab.mask, ba.mask)
        ac = diff_features(a, c)
        bc = diff_features(b, c)
        # cell-wise: a!=c implies a!=b or b!=c
        assert np.all(ac.mask <= (ab.mask | bc.mask))
        assert ac.total <= ab.total + bc.total


def test_diff_features_shape_mismatch():
    schema = make_schema(2)
    a = make_instances(schema, 3)
    b = make_instances(schema, 4)
    with pytest.raises(ValidationError, match="mismatch"):
        diff_features(a, b)


def test_column_order_is_schema_function():
    s1 = make_schema(n_numeric=2, cat_levels=(3,))
    s2 = make_schema(n_numeric=2, cat_levels=(3,))
    assert s1.column_map() == s2.column_map()
    assert s1.column_groups() == s2.column_groups()


def test_write_table_roundtrip(tmp_path):
    schema = make_schema(n_numeric=2, cat_levels=(3,))
    data = make_instances(schema, 12, seed=5)
    path = tmp_path / "out.csv"
    write_table(path, data)
    again = load_table(path, schema)
    assert again.rows == data.rows
    # deterministic bytes
    first = path.read_bytes()
    write_table(path, data)
    assert path.read_bytes() == first


def test_instance_set_rejects_bad_cells():
    schema = make_schema(n_numeric=1, cat_levels=(2,))
    with pytest.raises(ValidationError):
        InstanceSet(schema, ((float("inf"), "A"),))
    with pytest.raises(ValidationError):
        InstanceSet(schema, ((1.0, "Z"),))
