import itertools

import numpy as np
import pytest
from scipy.special import softmax
from sklearn.base import clone

from calikit.comparators import (
    HistogramBinning,
    TemperatureScaling,
    VectorScaling,
    apply_histogram_binning,
    apply_temperature,
    apply_vector_scaling,
    fit_histogram_binning,
    fit_temperature,
    fit_vector_scaling,
    golden_section,
    softmax_nll,
)
from calikit.core import CalibrationDataError
from calikit.metrics import label_change_rate


def draw_labels(rng, probs):
    u = rng.random(len(probs))
    return np.minimum((u[:, None] > np.cumsum(probs, axis=1)).sum(axis=1), probs.shape[1] - 1)


@pytest.fixture
def logit_data(rng):
    z = rng.normal(0, 2.0, size=(10_000, 4))
    return z, draw_labels(rng, softmax(z, axis=1))


class TestTemperature:
    def test_recovers_unit_temperature(self, logit_data):
        z, y = logit_data
        t = fit_temperature(z, y)
        assert abs(t - 1.0) < 0.05
        grid = np.arange(0.5, 2.0, 0.001)
        best = grid[np.argmin([softmax_nll(z / s, y) for s in grid])]
        assert abs(t - best) <= 0.001

    def test_recovers_other_temperature(self, rng):
        z = rng.normal(0, 3.0, size=(10_000, 5))
        y = draw_labels(rng, softmax(z / 2.5, axis=1))
        assert abs(fit_temperature(z, y) - 2.5) < 0.15

    def test_unit_temperature_is_softmax(self, rng):
        z = rng.normal(size=(20, 3))
        np.testing.assert_array_equal(apply_temperature(z, 1.0), softmax(z, axis=1))

    def test_large_temperature_flattens(self, rng):
        z = rng.normal(size=(20, 3))
        np.testing.assert_allclose(apply_temperature(z, 1e9), 1 / 3, atol=1e-8)

    def test_never_changes_argmax(self, logit_data):
        z, y = logit_data
        t = fit_temperature(z[:500] * 3, y[:500])
        assert label_change_rate(softmax(z, axis=1), apply_temperature(z, t)) == 0.0

    def test_optimum_beats_probes(self, rng, logit_data):
        z, y = logit_data
        z, y = z[:800] * 1.7, y[:800]
        t = fit_temperature(z, y)
        best = softmax_nll(z / t, y)
        for s in np.concatenate([[1.0], rng.uniform(0.01, 100, 20)]):
            assert best <= softmax_nll(z / s, y) + 1e-9

    def test_golden_section_on_parabola(self):
        assert golden_section(lambda t: (t - 3.3) ** 2, 0, 10, 1e-8) == pytest.approx(3.3, abs=1e-7)

    def test_input_checks(self, rng):
        with pytest.raises(CalibrationDataError):
            fit_temperature(rng.normal(size=(5, 3)), [1, 1, 1, 1, 1])
        with pytest.raises(CalibrationDataError):
            fit_temperature(np.array([[0.0, np.nan], [1.0, 0.0]]), [0, 1])


class TestVectorScaling:
    def test_identity_parameters(self, rng):
        z = rng.normal(size=(20, 3))
        np.testing.assert_allclose(apply_vector_scaling(z, np.ones(3), np.zeros(3)), softmax(z, axis=1), rtol=1e-15)

    def test_recovers_generating_parameters(self, rng):
        w0 = np.array([1.0, 0.6, 1.4, 0.9])
        b0 = np.array([0.3, -0.5, 0.1, 0.1])
        z = rng.normal(0, 2, size=(40_000, 4))
        y = draw_labels(rng, softmax(z * w0 + b0, axis=1))
        res = fit_vector_scaling(z, y)
        assert res.converged
        assert abs(res.b.sum()) < 1e-12
        np.testing.assert_allclose(res.w, w0, atol=0.06)
        np.testing.assert_allclose(res.b, b0 - b0.mean(), atol=0.06)

    def test_matches_coarse_lattice(self):
        rng = np.random.default_rng(3)
        z = rng.normal(0, 1.5, size=(40, 3))
        y = draw_labels(rng, softmax(z, axis=1))
        res = fit_vector_scaling(z, y)
        ws = np.linspace(0.0, 2.5, 11)
        bs = np.linspace(-1.5, 1.5, 13)
        best, best_nll = None, np.inf
        for w in itertools.product(ws, repeat=3):
            s = z * np.array(w)
            for b1, b2 in itertools.product(bs, bs):
                b = np.array([b1, b2, -b1 - b2])
                nll = softmax_nll(s + b, y)
                if nll < best_nll:
                    best, best_nll = np.concatenate([w, b]), nll
        assert res.nll <= best_nll + 1e-9
        step = np.concatenate([np.full(3, ws[1] - ws[0]), np.full(3, 2 * (bs[1] - bs[0]))])
        assert np.all(np.abs(np.concatenate([res.w, res.b]) - best) <= step)

    def test_not_worse_than_temperature(self, logit_data):
        z, y = logit_data
        for scale in (0.5, 1.0, 3.0):
            zz = z[:2000] * scale
            t = fit_temperature(zz, y[:2000])
            vs = fit_vector_scaling(zz, y[:2000])
            assert vs.nll <= softmax_nll(zz / t, y[:2000])


class TestHistogramBinning:
    def test_rows_sum_to_one(self, rng):
        x = rng.dirichlet(np.ones(4), 300)
        y = rng.integers(0, 4, 300)
        g = apply_histogram_binning(fit_histogram_binning(x, y, 10), x)
        np.testing.assert_allclose(g.sum(axis=1), 1.0, atol=1e-12)

    def test_identical_predictions_map_to_frequencies(self, rng):
        x = np.tile([0.5, 0.3, 0.2], (400, 1))
        y = rng.integers(0, 3, 400)
        g = apply_histogram_binning(fit_histogram_binning(x, y, 10), x)
        freq = np.bincount(y, minlength=3) / 400
        np.testing.assert_allclose(g, np.tile(freq, (400, 1)), atol=1e-12)

    def test_calibrated_data_roughly_unchanged(self, rng):
        n, bins = 200_000, 20
        x = rng.dirichlet(np.ones(3), n)
        y = draw_labels(rng, x)
        model = fit_histogram_binning(x, y, bins)
        busy = model.counts >= 2000
        mids = 0.5 * (model.edges[:-1] + model.edges[1:])
        gap = np.abs(model.values - mids)[busy]
        assert np.all(gap <= 1 / bins + 0.03)

    def test_empty_bins_keep_midpoints(self):
        x = np.array([[0.9, 0.1], [0.85, 0.15]])
        model = fit_histogram_binning(x, [0, 1], 4)
        np.testing.assert_allclose(model.values[0, :3], [0.125, 0.375, 0.625])

    def test_apply_is_repeatable(self, rng):
        x = rng.dirichlet(np.ones(3), 200)
        y = rng.integers(0, 3, 200)
        model = fit_histogram_binning(x, y)
        np.testing.assert_array_equal(apply_histogram_binning(model, x), apply_histogram_binning(model, x))

    def test_default_bins(self, rng):
        x = rng.dirichlet(np.ones(3), 400)
        assert fit_histogram_binning(x, rng.integers(0, 3, 400)).n_bins == 20

    def test_needs_two_bins(self, rng):
        with pytest.raises(ValueError):
            fit_histogram_binning(rng.dirichlet(np.ones(3), 10), rng.integers(0, 3, 10), 1)


class TestEstimators:
    @pytest.mark.parametrize("cls", [TemperatureScaling, VectorScaling, HistogramBinning])
    def test_clone_and_params(self, cls):
        est = cls()
        assert clone(est).get_params() == est.get_params()

    def test_fit_predict(self, logit_data):
        z, y = logit_data
        z, y = z[:500], y[:500]
        ts = TemperatureScaling().fit(z, y)
        vs = VectorScaling().fit(z, y)
        np.testing.assert_array_equal(ts.predict(z), softmax(z, axis=1).argmax(axis=1))
        assert vs.predict_proba(z).shape == (500, 4)
        p = softmax(z, axis=1)
        hb = HistogramBinning(bins=5).fit(p, y)
        np.testing.assert_array_equal(hb.transform(p), hb.predict_proba(p))
