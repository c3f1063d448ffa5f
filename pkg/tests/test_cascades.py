import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.sparse.csgraph import dijkstra

from nmfdyn.cascades import (Cascade, CascadeDataError, CascadeSet, EdgeLaws, Exponential, ProbCurve,
                             Rayleigh, Weibull, batch_first_passage, build_dataset, estimate_probs_mc,
                             first_passage_times, load_cascades, sample_source_sets, save_cascades,
                             simulate_cascade)
from nmfdyn.network import DiffusionNetwork, KroneckerSpec, generate_kronecker


def single_edge(alpha=0.7):
    return DiffusionNetwork.from_edges(2, [(0, 1)], [alpha])


def small_net(seed=0, n=16):
    return generate_kronecker(KroneckerSpec.from_dict({"seed": "hier", "n": n, "degree": 3}),
                              np.random.default_rng(seed))


class TestDelayLaws:
    def test_exponential_mean(self):
        alpha = 0.4
        t = Exponential(alpha).sample(np.random.default_rng(0), size=10**6)
        assert abs(t.mean() - 1 / alpha) <= 3 * (1 / alpha) / np.sqrt(t.size)
        assert np.all(t > 0)

    def test_exponential_cdf_boundary(self):
        law = Exponential(2.0)
        assert law.cdf(0.0) == 0.0
        assert law.cdf(1e-12) == pytest.approx(2e-12)

    def test_rayleigh_median(self):
        alpha = 0.5
        t = Rayleigh(alpha).sample(np.random.default_rng(1), size=10**6)
        median = np.sqrt(2 * np.log(2) / alpha)
        # sd of the sample median: 1 / (2 f(m) sqrt(N)) with f the density at the median
        f = alpha * median * np.exp(-alpha * median**2 / 2)
        assert abs(np.median(t) - median) <= 3 / (2 * f * np.sqrt(t.size))

    def test_weibull_cdf_matches_samples(self):
        law = Weibull(2.5, 3.0)
        t = law.sample(np.random.default_rng(2), size=200000)
        for q in (1.0, 3.0, 5.0):
            p = law.cdf(q)
            assert abs(np.mean(t <= q) - p) <= 4 * np.sqrt(p * (1 - p) / t.size)

    def test_edge_laws_vectorized_agree_with_scalar_laws(self):
        net = small_net()
        for kind in ("exp", "rayleigh", "weibull"):
            laws = EdgeLaws.for_network(net, kind, np.random.default_rng(3))
            draws = laws.sample(np.random.default_rng(4), size=20000)
            for k in (0, len(laws.edges) - 1):
                law = laws.law(k)
                q = float(np.median(draws[:, k]))
                assert law.cdf(q) == pytest.approx(0.5, abs=0.02)

    def test_weibull_needs_rng(self):
        with pytest.raises(ValueError):
            EdgeLaws.for_network(single_edge(), "weibull")


class TestCascade:
    def test_invariants(self):
        with pytest.raises(CascadeDataError):
            Cascade((0,), [0.0, 0.0], 10.0)     # non-source at time 0
        with pytest.raises(CascadeDataError):
            Cascade((0,), [0.0, 11.0], 10.0)    # beyond horizon
        with pytest.raises(CascadeDataError):
            Cascade((), [np.inf, np.inf], 10.0)

    def test_events_sorted(self):
        c = Cascade((0,), [0.0, 1.2, 0.7, np.inf], 5.0)
        assert c.events() == [(2, 0.7), (1, 1.2)]

    def test_json_round_trip(self, tmp_path):
        net = small_net()
        data = build_dataset(net, EdgeLaws.exponential(net), 5, 3, 20.0, np.random.default_rng(0))
        path = tmp_path / "c.jsonl"
        save_cascades(data, path)
        back = load_cascades(path)
        assert len(back) == 15
        for a, b in zip(data, back):
            assert a.source == b.source
            np.testing.assert_array_equal(a.times, b.times)

    def test_record_without_node_count(self, tmp_path):
        path = tmp_path / "c.jsonl"
        path.write_text('{"source": [0], "events": [[2, 0.5]], "horizon": 20}\n')
        with pytest.raises(CascadeDataError):
            load_cascades(path)
        c = load_cascades(path, n=3)[0]
        assert c.times[2] == 0.5 and np.isinf(c.times[1])

    def test_mixed_node_counts(self):
        with pytest.raises(CascadeDataError):
            CascadeSet([Cascade((0,), [0.0, 1.0], 5.0), Cascade((0,), [0.0, 1.0, 2.0], 5.0)], 5.0)


class TestSimulation:
    def test_sources_at_zero_and_unreachable_never(self):
        net = DiffusionNetwork.from_edges(4, [(0, 1), (1, 2)], [1.0, 1.0])
        c = simulate_cascade(net, (0,), 1000.0, EdgeLaws.exponential(net), np.random.default_rng(0))
        assert c.times[0] == 0 and np.isinf(c.times[3])
        assert 0 < c.times[1] < c.times[2]

    def test_single_edge_first_passage_law(self):
        alpha, T = 0.7, 20.0
        net = single_edge(alpha)
        laws = EdgeLaws.exponential(net)
        rng = np.random.default_rng(5)
        times = np.array([simulate_cascade(net, (0,), T, laws, rng).times[1] for _ in range(20000)])
        for t in (0.5, 1.0, 3.0):
            p = 1 - np.exp(-alpha * t)
            assert abs(np.mean(times <= t) - p) <= 3 * np.sqrt(p * (1 - p) / times.size)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_matches_shortest_paths(self, seed):
        rng = np.random.default_rng(seed)
        net = small_net(seed % 1000)
        laws = EdgeLaws.exponential(net)
        src = tuple(sorted(rng.choice(net.n, size=2, replace=False).tolist()))
        c, delays = simulate_cascade(net, src, 1e9, laws, rng, return_delays=True)
        W = np.zeros((net.n, net.n))
        for (i, j), d in zip(laws.edges, delays):
            W[i, j] = d
        dist = dijkstra(W, indices=list(src), min_only=True)
        np.testing.assert_allclose(c.times, dist, rtol=1e-12)
        batch = batch_first_passage(net.n, laws.edges, delays[None, :], src)[0]
        np.testing.assert_allclose(batch, dist, rtol=1e-12)

    def test_censoring(self):
        net = single_edge(0.01)
        rng = np.random.default_rng(0)
        c, d = simulate_cascade(net, (0,), 1.0, EdgeLaws.exponential(net), rng, return_delays=True)
        assert np.isinf(c.times[1]) == (d[0] > 1.0)

    def test_tie_break_is_deterministic(self):
        t = first_passage_times(3, [(0, 2), (1, 2)], [1.0, 1.0], (0, 1))
        assert t[2] == 1.0


class TestDatasets:
    def test_counts(self):
        net = small_net()
        laws = EdgeLaws.exponential(net)
        data = build_dataset(net, laws, 9, 10, 20.0, np.random.default_rng(0))
        assert len(data) == 90
        assert len(build_dataset(net, laws, 0, 10, 20.0, np.random.default_rng(0))) == 0

    def test_deterministic_and_thread_independent(self, tmp_path):
        net = small_net()
        laws = EdgeLaws.exponential(net)
        paths = []
        for threads in (1, 4, 1):
            data = build_dataset(net, laws, 6, 4, 20.0, np.random.default_rng(11), threads=threads)
            paths.append(tmp_path / f"c{len(paths)}.jsonl")
            save_cascades(data, paths[-1])
        texts = [p.read_bytes() for p in paths]
        assert texts[0] == texts[1] == texts[2]

    def test_source_sets(self):
        sets = sample_source_sets(20, 200, (1, 10), np.random.default_rng(0))
        sizes = [len(s) for s in sets]
        assert min(sizes) >= 1 and max(sizes) <= 10
        assert all(len(set(s)) == len(s) for s in sets)
        with pytest.raises(ValueError):
            sample_source_sets(5, 1, (1, 10), np.random.default_rng(0))


class TestMonteCarlo:
    def test_source_and_empty_network(self):
        net = DiffusionNetwork.empty(4)
        curve = estimate_probs_mc(net, (1, 2), np.arange(1.0, 6.0), 100, np.random.default_rng(0))
        np.testing.assert_array_equal(curve.values, np.tile([0, 1, 1, 0], (5, 1)))
        np.testing.assert_array_equal(curve.stderr, 0)

    def test_monotone_in_time(self):
        net = small_net()
        curve = estimate_probs_mc(net, (0,), np.arange(1.0, 21.0), 2000, np.random.default_rng(0))
        assert np.all(np.diff(curve.values, axis=0) >= 0)

    def test_curve_csv(self, tmp_path):
        curve = ProbCurve(np.array([1.0, 2.0]), np.array([[0.1, 0.2], [0.3, 0.4]]))
        path = tmp_path / "curve.csv"
        curve.to_csv(path)
        assert path.read_text().splitlines()[0] == "t,x0,x1"
        back = ProbCurve.from_csv(path)
        np.testing.assert_array_equal(back.values, curve.values)
        np.testing.assert_allclose(curve.influence(), [0.3, 0.7])
