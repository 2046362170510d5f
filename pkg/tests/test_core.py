import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from calikit.core import (
    CalibrationDataError,
    LabelData,
    LogitMatrix,
    MclloParams,
    ProbabilityMatrix,
    encode_labels,
    validate_and_floor,
)


def simplex_rows(min_c=2, max_c=6, max_n=8):
    def build(shape):
        n, c = shape
        return arrays(np.float64, (n, c), elements=st.floats(0.0, 1.0)).filter(
            lambda a: np.all(a.sum(axis=1) > 0)
        ).map(lambda a: a / a.sum(axis=1, keepdims=True))

    return st.tuples(st.integers(1, max_n), st.integers(min_c, max_c)).flatmap(build)


class TestValidateAndFloor:
    def test_row_without_small_entries_is_unchanged(self):
        out = validate_and_floor([[0.5, 0.5]], 1e-12)
        assert out.values.tolist() == [[0.5, 0.5]]

    def test_floor_then_renormalize(self):
        eps = 1e-6
        out = validate_and_floor([[1.0, 0.0, 0.0]], eps).values[0]
        expected = np.array([1.0, eps, eps]) / (1 + 2 * eps)
        np.testing.assert_allclose(out, expected, rtol=1e-15, atol=0)

    def test_rejects_row_not_summing_to_one(self):
        with pytest.raises(CalibrationDataError, match="row 0"):
            validate_and_floor([[0.3, 0.3, 0.5]])

    @pytest.mark.parametrize("raw", [[[np.nan, 1.0]], [[np.inf, 0.0]]])
    def test_rejects_non_finite(self, raw):
        with pytest.raises(CalibrationDataError, match="non-finite"):
            validate_and_floor(raw)

    def test_rejects_single_column(self):
        with pytest.raises(CalibrationDataError):
            validate_and_floor([[1.0], [1.0]])

    def test_rejects_negative_entries(self):
        with pytest.raises(CalibrationDataError):
            validate_and_floor([[1.2, -0.2]])

    @pytest.mark.parametrize("eps", [0.0, -1e-3, 0.5])
    def test_epsilon_range(self, eps):
        with pytest.raises(CalibrationDataError, match="epsilon"):
            validate_and_floor([[0.5, 0.5]], eps)

    def test_accepts_slack_and_renormalizes(self):
        out = validate_and_floor([[0.5 + 4e-7, 0.5]]).values
        assert abs(out.sum() - 1.0) < 1e-15

    @settings(max_examples=200, deadline=None)
    @given(simplex_rows(), st.sampled_from([1e-12, 1e-6, 1e-3]))
    def test_idempotent(self, x, eps):
        once = validate_and_floor(x, eps).values
        twice = validate_and_floor(once, eps).values
        np.testing.assert_array_equal(once, twice)

    @settings(max_examples=200, deadline=None)
    @given(simplex_rows(), st.sampled_from([1e-12, 1e-6, 1e-3]))
    def test_invariants_after_flooring(self, x, eps):
        out = validate_and_floor(x, eps).values
        c = x.shape[1]
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-9)
        assert np.all(out >= eps / (1 + c * eps) * (1 - 1e-12))
        # floor-then-renormalize moves a row by at most 2 (c - 1) eps in L1
        l1 = np.abs(out - x).sum(axis=1)
        assert np.all(l1 <= 2 * (c - 1) * eps + 1e-14)


class TestLabels:
    def test_one_hot_round_trip(self, rng):
        labels = LabelData(rng.integers(0, 5, 50), 5)
        oh = labels.one_hot()
        assert np.all(oh.sum(axis=1) == 1)
        np.testing.assert_array_equal(np.argmax(oh, axis=1), labels.labels)

    def test_out_of_range_label(self):
        with pytest.raises(CalibrationDataError, match="row 1"):
            LabelData(np.array([0, 3]), 3)

    def test_strings_by_first_appearance(self):
        labels, names = encode_labels(["cat", "dog", "cat", "bird"])
        assert labels.labels.tolist() == [0, 1, 0, 2]
        assert names == ("cat", "dog", "bird")

    def test_strings_with_fixed_names(self):
        labels, _ = encode_labels(["b", "a"], category_names=["a", "b", "c"])
        assert labels.labels.tolist() == [1, 0]
        assert labels.n_classes == 3

    def test_unknown_string_with_fixed_names(self):
        with pytest.raises(CalibrationDataError, match="unknown label"):
            encode_labels(["a", "z"], category_names=["a", "b"])

    def test_integer_labels(self):
        labels, _ = encode_labels([2, 0, 1])
        assert labels.n_classes == 3


class TestTypes:
    def test_probability_matrix_is_read_only(self):
        pm = validate_and_floor([[0.2, 0.8]])
        with pytest.raises(ValueError):
            pm.values[0, 0] = 0.5
        assert pm.category_names == ("class_0", "class_1")

    def test_logits_must_be_finite(self):
        with pytest.raises(CalibrationDataError):
            LogitMatrix(np.array([[1.0, np.inf]]))

    def test_params_identity_and_tau(self):
        p = MclloParams.identity(4)
        assert p.baseline == 3
        assert p.is_identity()
        np.testing.assert_array_equal(p.tau(), 0.0)

    def test_params_reject_nonpositive_delta(self):
        with pytest.raises(ValueError):
            MclloParams([1.0, 0.0], [1.0, 1.0])

    def test_params_reject_bad_baseline(self):
        with pytest.raises(ValueError):
            MclloParams([1.0], [1.0], baseline=2)

    def test_probability_matrix_shape(self):
        with pytest.raises(CalibrationDataError):
            ProbabilityMatrix(np.ones((2, 1)))
