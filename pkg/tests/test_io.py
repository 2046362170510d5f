import json

import numpy as np
import pytest

from calikit.comparators import HistogramBinning, TemperatureScaling, VectorScaling
from calikit.core import CalibrationDataError
from calikit.io import (
    dumps_model,
    load_model,
    model_from_dict,
    model_to_dict,
    read_predictions,
    read_table,
    save_model,
    write_predictions,
    write_table,
)
from calikit.mcllo import MCLLOCalibrator
from conftest import random_instance


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


class TestReadPredictions:
    def test_schema_example(self, tmp_path):
        f = write(tmp_path / "d.csv", "p_a,p_b,label\n0.8,0.2,a\n0.3,0.7,b\n")
        data = read_predictions(f)
        assert data.probs.n == 2 and data.probs.c == 2
        assert data.labels.labels.tolist() == [0, 1]
        assert data.category_names == ("a", "b")

    def test_bad_row_sum_names_line(self, tmp_path):
        f = write(tmp_path / "d.csv", "p_a,p_b,label\n0.8,0.2,a\n0.5,0.7,b\n")
        with pytest.raises(CalibrationDataError, match="line 3"):
            read_predictions(f)

    def test_malformed_number_names_line(self, tmp_path):
        f = write(tmp_path / "d.csv", "p_a,p_b\n0.8,0.2\n0.3,abc\n")
        with pytest.raises(CalibrationDataError, match="line 3.*abc"):
            read_predictions(f)

    def test_logit_row_mismatch(self, tmp_path):
        f = write(tmp_path / "d.csv", "p_a,p_b,label\n0.8,0.2,a\n0.3,0.7,b\n")
        z = write(tmp_path / "z.csv", "z_a,z_b\n1.0,0.0\n")
        with pytest.raises(CalibrationDataError, match="1 logit rows"):
            read_predictions(f, logits_path=z)

    def test_logits_read(self, tmp_path):
        f = write(tmp_path / "d.csv", "p_a,p_b,label\n0.8,0.2,a\n0.3,0.7,b\n")
        z = write(tmp_path / "z.csv", "z_a,z_b\n1.0,0.0\n-1,2\n")
        data = read_predictions(f, logits_path=z)
        np.testing.assert_array_equal(data.logits.values, [[1.0, 0.0], [-1.0, 2.0]])

    def test_unknown_label_with_fixed_names(self, tmp_path):
        f = write(tmp_path / "d.csv", "p_a,p_b,label\n0.8,0.2,a\n0.3,0.7,q\n")
        with pytest.raises(CalibrationDataError, match="unknown label"):
            read_predictions(f, category_names=["a", "b"])

    def test_integer_labels_and_no_prefix(self, tmp_path):
        f = write(tmp_path / "d.csv", "x,y,label\n0.8,0.2,1\n0.3,0.7,0\n")
        data = read_predictions(f)
        assert data.category_names == ("x", "y")
        assert data.labels.labels.tolist() == [1, 0]

    def test_no_label_column(self, tmp_path):
        f = write(tmp_path / "d.csv", "p_a,p_b\n0.8,0.2\n")
        assert read_predictions(f).labels is None

    def test_json(self, tmp_path):
        doc = {"category_names": ["a", "b", "c"], "probabilities": [[0.2, 0.3, 0.5], [1, 0, 0]],
               "labels": ["c", "a"], "logits": [[0, 1, 2], [3, 0, 0]]}
        f = write(tmp_path / "d.json", json.dumps(doc))
        data = read_predictions(f)
        assert data.labels.labels.tolist() == [2, 0]
        assert data.logits.n == 2
        assert data.probs.values[1, 1] > 0

    def test_written_predictions_parse_back(self, tmp_path, rng):
        x, y = random_instance(rng, 30, 3)
        write_predictions(tmp_path / "o.csv", x, ["a", "b", "c"], y, ["a", "b", "c"], precision="full")
        back = read_predictions(tmp_path / "o.csv")
        np.testing.assert_allclose(back.probs.values, x, rtol=1e-15, atol=1e-15)
        assert back.labels.labels.tolist() == list(y)

    def test_short_precision_rows_still_sum_to_one(self, tmp_path, rng):
        x, y = random_instance(rng, 2000, 10)
        write_predictions(tmp_path / "o.csv", x, list("abcdefghij"), y, list("abcdefghij"))
        back = read_predictions(tmp_path / "o.csv")
        np.testing.assert_allclose(back.probs.values, x, atol=1e-5)


def fitted_models(rng):
    x, y = random_instance(rng, 400, 3)
    z = np.log(x) + rng.normal(0, 0.1, x.shape)
    return x, y, z, [
        MCLLOCalibrator().fit(x, y),
        TemperatureScaling().fit(z, y),
        VectorScaling().fit(z, y),
        HistogramBinning(bins=7).fit(x, y),
    ]


class TestModelFiles:
    def test_round_trip_is_byte_identical(self, tmp_path, rng):
        _, _, _, models = fitted_models(rng)
        for est in models:
            doc = model_to_dict(est, ["a", "b", "c"], n=400)
            path = tmp_path / "m.json"
            save_model(path, doc)
            text = path.read_text()
            _, back = load_model(path)
            assert dumps_model(back) == text
            assert dumps_model(model_to_dict(model_from_dict(back), ["a", "b", "c"], n=400)) == text

    def test_loaded_model_applies_identically(self, tmp_path, rng):
        x, _, z, models = fitted_models(rng)
        for est in models:
            save_model(tmp_path / "m.json", model_to_dict(est, ["a", "b", "c"]))
            loaded, doc = load_model(tmp_path / "m.json")
            inp = z if doc["method"] in ("temperature", "vector") else x
            np.testing.assert_allclose(loaded.predict_proba(inp), est.predict_proba(inp), rtol=0, atol=1e-12)

    def test_mcllo_fields(self, rng):
        _, _, _, models = fitted_models(rng)
        doc = model_to_dict(models[0], ["a", "b", "c"])
        assert doc["method"] == "mcllo" and doc["baseline"] == 2 and doc["baseline_name"] == "c"
        assert len(doc["std_errors"]["delta"]) == 2
        assert doc["fit"]["converged"] is True

    def test_nan_standard_errors_round_trip(self, tmp_path, rng):
        x = np.tile([0.2, 0.3, 0.5], (60, 1))
        est = MCLLOCalibrator().fit(x, rng.integers(0, 3, 60))
        doc = model_to_dict(est, ["a", "b", "c"])
        assert doc["std_errors"]["delta"] == [None, None]
        save_model(tmp_path / "m.json", doc)
        loaded, _ = load_model(tmp_path / "m.json")
        assert np.all(np.isnan(loaded.std_errors_))

    def test_unknown_method(self):
        with pytest.raises(CalibrationDataError):
            model_from_dict({"method": "isotonic", "category_names": ["a", "b"]})


class TestTables:
    def test_table_round_trip(self, tmp_path):
        rows = [{"n": 5, "p": 0.1 + 0.2, "name": "x"}, {"n": 6, "p": float("nan"), "name": "y"}]
        write_table(tmp_path / "t.csv", rows)
        back = read_table(tmp_path / "t.csv")
        assert back[0]["p"] == 0.1 + 0.2
        assert np.isnan(back[1]["p"]) and back[1]["name"] == "y"
