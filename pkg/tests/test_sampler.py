import numpy as np
import pytest

from tagbridge.data import build_graph
from tagbridge.numerics import rng_stream
from tagbridge.sampler import NeighborSample, RwrConfig, rwr_sample, walk_trace


def line_graph(n):
    return build_graph([""] * n, [(i, i + 1) for i in range(n - 1)], np.zeros(n, dtype=int), 1)


def triangle():
    return build_graph([""] * 3, [(0, 1), (1, 2), (0, 2)], np.zeros(3, dtype=int), 1)


class TestRwrSample:
    def test_zero_steps_empty(self):
        sample = rwr_sample(triangle(), 0, RwrConfig(walk_steps=0), rng_stream(0, "s"))
        assert sample.neighbors == []

    def test_two_node_path_samples_the_neighbor(self):
        graph = line_graph(2)
        sample = rwr_sample(graph, 0, RwrConfig(walk_steps=4, restart_prob=0.0),
                            rng_stream(0, "s"))
        assert sample.neighbors == [1]

    def test_isolated_root_empty(self):
        graph = build_graph(["", "", ""], [(1, 2)], np.zeros(3, dtype=int), 1)
        sample = rwr_sample(graph, 0, RwrConfig(walk_steps=50), rng_stream(0, "s"))
        assert sample.neighbors == []

    def test_triangle_stationary_frequencies(self):
        # eigen-oracle: stationary distribution of the 3-state restart chain
        graph = triangle()
        restart = 0.5
        P = np.zeros((3, 3))
        for i in range(3):
            P[i, 0] += restart
            for j in graph.neighbors[i]:
                P[i, j] += (1 - restart) / len(graph.neighbors[i])
        w, v = np.linalg.eig(P.T)
        stat = np.real(v[:, np.argmin(np.abs(w - 1.0))])
        stat /= stat.sum()
        steps = 10_000
        trace = walk_trace(graph, 0, steps, restart, rng_stream(1, "walk"))
        for node in (1, 2):
            freq = trace.count(node) / steps
            assert abs(freq - stat[node]) < 0.03

    def test_root_never_in_sample_and_unique_first_visit_order(self):
        rng = rng_stream(2, "order")
        graph = build_graph([""] * 6, [(0, 1), (0, 2), (1, 3), (2, 4), (4, 5)],
                            np.zeros(6, dtype=int), 1)
        for trial in range(50):
            sample = rwr_sample(graph, 0, RwrConfig(walk_steps=20, restart_prob=0.3),
                                rng_stream(3, "s", trial))
            assert 0 not in sample.neighbors
            assert len(sample.neighbors) == len(set(sample.neighbors))
            trace = walk_trace(graph, 0, 20, 0.3, rng_stream(3, "s", trial))
            seen = []
            for node in trace:
                if node != 0 and node not in seen:
                    seen.append(node)
            assert sample.neighbors == seen

    def test_sample_size_bounded_by_steps(self):
        graph = build_graph([""] * 10, [(i, j) for i in range(10) for j in range(i + 1, 10)],
                            np.zeros(10, dtype=int), 1)
        for steps in (1, 3, 7):
            sample = rwr_sample(graph, 0, RwrConfig(walk_steps=steps), rng_stream(4, "s"))
            assert len(sample.neighbors) <= steps

    def test_reachability(self):
        # two components; walks from 0 stay in its component
        graph = build_graph([""] * 6, [(0, 1), (1, 2), (3, 4), (4, 5)],
                            np.zeros(6, dtype=int), 1)
        sample = rwr_sample(graph, 0, RwrConfig(walk_steps=100, restart_prob=0.2),
                            rng_stream(5, "s"))
        assert set(sample.neighbors) <= {1, 2}

    def test_equal_seeds_identical_samples(self):
        graph = line_graph(8)
        a = rwr_sample(graph, 3, RwrConfig(walk_steps=30, restart_prob=0.4), rng_stream(6, "s"))
        b = rwr_sample(graph, 3, RwrConfig(walk_steps=30, restart_prob=0.4), rng_stream(6, "s"))
        assert a.neighbors == b.neighbors

    def test_config_validation(self):
        with pytest.raises(ValueError):
            RwrConfig(walk_steps=-1).validate()
        with pytest.raises(ValueError):
            RwrConfig(restart_prob=1.0).validate()
        with pytest.raises(ValueError):
            rwr_sample(triangle(), 9, RwrConfig(), rng_stream(0, "s"))
