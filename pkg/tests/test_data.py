import math

import numpy as np
import pytest

from trimix import DataError, ThreeWayData, load_three_way, preprocess, save_three_way

LONG_CSV_MINIMAL = "unit,row,col,value\na,1,1,0.5\nb,1,1,-1.0\n"


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def test_load_smallest_long_csv(tmp_path):
    data = load_three_way(write(tmp_path, "d.csv", LONG_CSV_MINIMAL), "long-csv")
    assert (data.n, data.p, data.q) == (2, 1, 1)
    assert data.unit_ids == ("a", "b")
    assert data.values[0, 0, 0] == 0.5 and data.values[1, 0, 0] == -1.0


def test_load_json_tensor_dims(tmp_path):
    path = write(tmp_path, "d.json",
                 '{"dims": [1, 2, 3], "values": [1, 2, 3, 4, 5, 6]}')
    data = load_three_way(path, "json-tensor")
    assert (data.n, data.p, data.q) == (1, 2, 3)
    np.testing.assert_array_equal(data.values[0], [[1, 2, 3], [4, 5, 6]])


def test_ragged_tensor_is_an_error(tmp_path):
    text = ("unit,row,col,value\n"
            "u,1,1,1.0\nu,2,1,1.0\nu,2,2,1.0\n"  # missing (u,1,2)
            )
    with pytest.raises(DataError, match="ragged"):
        load_three_way(write(tmp_path, "bad.csv", text), "long-csv")


def test_duplicate_cell_rejected(tmp_path):
    text = "unit,row,col,value\nu,1,1,1.0\nu,1,1,2.0\n"
    with pytest.raises(DataError, match="duplicate"):
        load_three_way(write(tmp_path, "dup.csv", text), "long-csv")


def test_non_finite_value_rejected(tmp_path):
    text = "unit,row,col,value\nu,1,1,nan\n"
    with pytest.raises(DataError, match="non-finite"):
        load_three_way(write(tmp_path, "nan.csv", text), "long-csv")


def test_bad_header_rejected(tmp_path):
    with pytest.raises(DataError, match="header"):
        load_three_way(write(tmp_path, "h.csv", "a,b,c,d\nu,1,1,1\n"), "long-csv")


def test_unknown_format_rejected(tmp_path):
    with pytest.raises(DataError, match="format"):
        load_three_way(write(tmp_path, "x.csv", LONG_CSV_MINIMAL), "wide-csv")


@pytest.mark.parametrize("fmt,ext", [("long-csv", "csv"), ("json-tensor", "json")])
def test_load_save_load_round_trip(tmp_path, rng, fmt, ext):
    raw = tmp_path / f"raw.{ext}"
    save_three_way(ThreeWayData(rng.standard_normal((4, 3, 2))), raw, fmt)
    first = load_three_way(raw, fmt)
    again = tmp_path / f"again.{ext}"
    save_three_way(first, again, fmt)
    assert load_three_way(again, fmt) == first


def test_constructor_validation(rng):
    with pytest.raises(DataError):
        ThreeWayData(np.zeros((2, 2)))
    with pytest.raises(DataError):
        ThreeWayData(np.full((1, 1, 1), np.inf))
    with pytest.raises(DataError):
        ThreeWayData(rng.standard_normal((2, 2, 2)), unit_ids=("only-one",))


def test_values_are_frozen(rng):
    data = ThreeWayData(rng.standard_normal((2, 2, 2)))
    with pytest.raises(ValueError):
        data.values[0, 0, 0] = 1.0


def test_preprocess_all_off_returns_same_object(rng):
    data = ThreeWayData(rng.standard_normal((3, 2, 2)))
    assert preprocess(data) is data


def test_preprocess_center_two_units():
    data = ThreeWayData(np.array([2.0, 4.0]).reshape(2, 1, 1))
    out = preprocess(data, center_cellwise=True)
    np.testing.assert_array_equal(out.values.ravel(), [-1.0, 1.0])


def test_preprocess_log_with_offset():
    # log(v + 1) evaluated directly: values {0, e^2 - 1} -> {0, 2}
    values = np.array([0.0, math.e ** 2 - 1.0]).reshape(2, 1, 1)
    out = preprocess(ThreeWayData(values), log_transform=True, log_offset=1.0)
    np.testing.assert_allclose(out.values.ravel(), [0.0, 2.0], atol=1e-14)


def test_preprocess_log_applied_before_centering(rng):
    values = np.abs(rng.standard_normal((5, 2, 3))) + 0.5
    out = preprocess(ThreeWayData(values), log_transform=True,
                     center_cellwise=True, log_offset=0.25)
    expected = np.log(values + 0.25)
    expected -= expected.mean(axis=0)
    np.testing.assert_allclose(out.values, expected, atol=1e-14)


def test_preprocess_log_domain_error():
    data = ThreeWayData(np.array([0.0]).reshape(1, 1, 1))
    with pytest.raises(DataError, match="log"):
        preprocess(data, log_transform=True)


def test_center_cellwise_zero_mean_property(rng):
    data = ThreeWayData(rng.standard_normal((7, 3, 4)) * 5 + 2)
    out = preprocess(data, center_cellwise=True)
    assert np.max(np.abs(out.values.mean(axis=0))) < 1e-12


def test_unit_ids_preserved_by_preprocess(rng):
    data = ThreeWayData(rng.standard_normal((2, 1, 1)) + 10,
                        unit_ids=("x", "y"), row_names=("r",), col_names=("c",))
    out = preprocess(data, log_transform=True)
    assert out.unit_ids == ("x", "y")
    assert out.row_names == ("r",) and out.col_names == ("c",)
