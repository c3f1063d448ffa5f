import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nmfdyn.cascades import ProbCurve
from nmfdyn.dynamics import ThetaParams
from nmfdyn.evaluation import (MetricReport, estimate_probs, estimate_probs_batch, influence,
                               mae_metrics, network_metrics)
from nmfdyn.model import TrainedModel
from nmfdyn.ode import IntegratorConfig

GRID = np.arange(1.0, 21.0)


def model_from_A(A, steps=400, T=20.0):
    A = np.asarray(A, dtype=float)
    theta = ThetaParams.zeros(A.shape[0])
    theta.A = A.copy()
    return TrainedModel(theta, IntegratorConfig("rk4", steps, T))


def curve(values, grid=None):
    values = np.asarray(values, dtype=float)
    grid = np.arange(1.0, values.shape[0] + 1) if grid is None else grid
    return ProbCurve(np.asarray(grid, dtype=float), values)


class TestEstimation:
    def test_all_sources_saturated(self):
        rng = np.random.default_rng(0)
        model = TrainedModel(ThetaParams.init(4, rng), IntegratorConfig("rk4", 40, 20.0))
        np.testing.assert_allclose(estimate_probs(model, range(4), GRID).values, 1.0, atol=1e-12)

    def test_zero_rates_leave_sources_only(self):
        values = estimate_probs(model_from_A(np.zeros((3, 3))), (1,), GRID).values
        np.testing.assert_array_equal(values, np.tile([0.0, 1.0, 0.0], (GRID.size, 1)))

    def test_single_edge_closed_form(self):
        A = np.zeros((2, 2))
        A[1, 0] = 0.3
        values = estimate_probs(model_from_A(A), (0,), GRID).values
        np.testing.assert_allclose(values[:, 1], 1 - np.exp(-0.3 * GRID), atol=1e-8)

    def test_influence_at_zero_is_source_size(self):
        model = model_from_A(np.random.default_rng(1).uniform(0, 1, (5, 5)) * (1 - np.eye(5)))
        assert influence(model, (0, 2, 4), 0.0) == pytest.approx(3.0)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_influence_monotone_without_memory(self, seed):
        rng = np.random.default_rng(seed)
        A = rng.uniform(0, 1, (5, 5)) * (rng.uniform(size=(5, 5)) < 0.4) * (1 - np.eye(5))
        values = estimate_probs(model_from_A(A, steps=40), (int(rng.integers(5)),), GRID).values
        assert np.all(np.diff(values.sum(axis=1)) >= -1e-12)
        assert np.all((values >= 0) & (values <= 1))

    def test_batch_matches_single(self):
        rng = np.random.default_rng(2)
        model = TrainedModel(ThetaParams.init(4, rng), IntegratorConfig("rk4", 40, 20.0))
        sources = [(0,), (1, 3), (2,)]
        batch = estimate_probs_batch(model, sources, GRID)
        for k, s in enumerate(sources):
            np.testing.assert_allclose(batch[k], estimate_probs(model, s, GRID).values, atol=1e-14)

    def test_off_grid_times(self):
        model = model_from_A([[0.0, 0.0], [0.5, 0.0]], steps=40)
        values = estimate_probs(model, (0,), [0.37, 5.5]).values
        np.testing.assert_allclose(values[:, 1], 1 - np.exp(-0.5 * np.array([0.37, 5.5])), atol=1e-5)

    def test_invalid_inputs(self):
        model = model_from_A(np.zeros((3, 3)))
        with pytest.raises(ValueError):
            estimate_probs(model, (3,), GRID)
        with pytest.raises(ValueError):
            estimate_probs(model, (0,), [25.0])


class TestMAE:
    def test_identical_curves(self):
        x = curve(np.random.default_rng(0).uniform(size=(4, 3)))
        report = mae_metrics(x, x)
        np.testing.assert_array_equal(report.prob_mae, 0.0)
        np.testing.assert_array_equal(report.scaled_inf_mae, 0.0)

    def test_hand_case(self):
        report = mae_metrics(curve([[0.5, 0.2]]), curve([[0.3, 0.4]]))
        assert report.prob_mae[0] == pytest.approx(0.2)
        assert report.scaled_inf_mae[0] == pytest.approx(0.0)

    def test_symmetry(self):
        rng = np.random.default_rng(1)
        a, b = curve(rng.uniform(size=(5, 4))), curve(rng.uniform(size=(5, 4)))
        np.testing.assert_allclose(mae_metrics(a, b).prob_mae, mae_metrics(b, a).prob_mae)
        np.testing.assert_allclose(mae_metrics(a, b).scaled_inf_mae, mae_metrics(b, a).scaled_inf_mae)

    def test_scaled_influence_never_exceeds_probability_mae(self):
        rng = np.random.default_rng(2)
        r = mae_metrics(curve(rng.uniform(size=(6, 5))), curve(rng.uniform(size=(6, 5))))
        assert np.all(r.scaled_inf_mae <= r.prob_mae + 1e-15)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            mae_metrics(curve(np.zeros((2, 3))), curve(np.zeros((2, 4))))

    def test_report_files(self, tmp_path):
        report = MetricReport(np.array([1.0, 2.0]), np.array([0.1, 0.3]), np.array([0.0, 0.2]))
        report.to_csv(tmp_path / "r.csv")
        lines = (tmp_path / "r.csv").read_text().splitlines()
        assert lines[0] == "t,prob_mae,scaled_inf_mae" and len(lines) == 3
        assert report.summary()["mean_prob_mae"] == pytest.approx(0.2)


class TestNetworkMetrics:
    def test_perfect_recovery(self):
        A = np.zeros((3, 3))
        A[1, 0], A[2, 1] = 0.4, 0.7
        E = [(0, 1), (1, 2)]
        m = network_metrics(E, E, A, A)
        assert m == pytest.approx({"prc": 1.0, "rcl": 1.0, "acc": 1.0, "cor": 1.0})

    def test_partial_overlap(self):
        A, B = np.zeros((3, 3)), np.zeros((3, 3))
        A[1, 0] = A[2, 0] = 1.0
        B[1, 0] = 1.0
        m = network_metrics([(0, 1), (0, 2)], [(0, 1)], A, B)
        # |E & E*| = 1 over |E*| = 1 and |E| = 2
        assert m["prc"] == 1.0 and m["rcl"] == 0.5
        assert m["acc"] == pytest.approx(1 - 1 / 3)
        assert m["cor"] == pytest.approx(1 / np.sqrt(2))

    def test_cor_symmetric_and_scale_invariant(self):
        rng = np.random.default_rng(0)
        A, B = rng.uniform(size=(4, 4)), rng.uniform(size=(4, 4))
        c = network_metrics([(0, 1)], [(0, 1)], A, B)["cor"]
        assert 0 < c <= 1
        assert network_metrics([(0, 1)], [(0, 1)], B, A)["cor"] == pytest.approx(c)
        assert network_metrics([(0, 1)], [(0, 1)], 3.5 * A, B)["cor"] == pytest.approx(c)

    def test_empty_inferred_set_warns(self):
        A = np.zeros((2, 2))
        A[1, 0] = 1.0
        with pytest.warns(RuntimeWarning):
            m = network_metrics([], [(0, 1)], np.zeros((2, 2)), A)
        assert np.isnan(m["rcl"]) and np.isnan(m["cor"]) and m["prc"] == 0.0
