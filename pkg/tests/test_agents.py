"""Spatial agent runtime: neighbor search, flocking operators, runner."""

import math

import numpy as np
import pytest

from simflow import agents as ag
from simflow import documents as docs
from simflow import library_path
from simflow.params import RunConfig
from simflow.rng import keyed_uniform_array

LIBRARY = library_path()
TWO_PI = 2.0 * math.pi


def brute_neighbor_sets(positions, extents, radius):
    n = len(positions)
    out = [set() for _ in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            d = np.abs(positions[i] - positions[j])
            d = np.minimum(d, extents - d)
            if d @ d <= radius * radius:
                out[i].add(j)
                out[j].add(i)
    return out


class TestNeighborSearch:
    def test_matches_brute_force(self):
        rng = np.random.default_rng(17)
        extents = np.array([10.0, 10.0])
        for trial in range(20):
            n = 60
            radius = float(rng.uniform(0.3, 2.5))
            pos = rng.uniform(0.0, 10.0, size=(n, 2))
            ii, jj = ag.neighbor_pairs(pos, np.zeros(2), extents, radius)
            got = [set() for _ in range(n)]
            for a, b in zip(ii, jj):
                got[a].add(int(b))
                got[b].add(int(a))
            assert got == brute_neighbor_sets(pos, extents, radius)

    def test_tie_at_radius_is_included(self):
        pos = np.array([[0.0, 0.0], [1.0, 0.0]])
        ii, jj = ag.neighbor_pairs(pos, np.zeros(2), np.array([10.0, 10.0]), 1.0)
        assert list(ii) == [0] and list(jj) == [1]

    def test_minimum_image_across_boundary(self):
        pos = np.array([[0.1, 5.0], [9.9, 5.0]])
        ii, jj = ag.neighbor_pairs(pos, np.zeros(2), np.array([10.0, 10.0]), 0.5)
        assert len(ii) == 1

    def test_large_radius_falls_back_to_all_pairs(self):
        rng = np.random.default_rng(3)
        pos = rng.uniform(0.0, 10.0, size=(30, 2))
        extents = np.array([10.0, 10.0])
        with pytest.warns(UserWarning, match="all-pairs"):
            ii, jj = ag.neighbor_pairs(pos, np.zeros(2), extents, 4.0)
        got = [set() for _ in range(30)]
        for a, b in zip(ii, jj):
            got[a].add(int(b))
            got[b].add(int(a))
        assert got == brute_neighbor_sets(pos, extents, 4.0)

    def test_neighbor_lists_self_inclusion(self):
        pairs = (np.array([0]), np.array([1]))
        with_self = ag.neighbor_lists(3, pairs, include_self=True)
        without = ag.neighbor_lists(3, pairs, include_self=False)
        assert with_self == [[0, 1], [0, 1], [2]]
        assert without == [[1], [0], []]


class TestOrderParameter:
    def test_aligned_is_one(self):
        assert ag.order_parameter(np.full(50, 0.7)) == pytest.approx(1.0)

    def test_balanced_is_zero(self):
        assert ag.order_parameter(np.array([0.0, math.pi])) == pytest.approx(0.0, abs=1e-15)


class TestFlockingOperators:
    def test_gather_hand_example(self):
        # three mutual neighbors at 0, pi/2, pi
        theta = np.array([0.0, math.pi / 2, math.pi])
        pairs = (np.array([0, 0, 1]), np.array([1, 2, 2]))
        sumcos, sumsin, counts = ag.flocking_gather(theta, pairs, include_self=True)
        assert np.allclose(sumcos, 0.0, atol=1e-15)
        assert np.allclose(sumsin, 1.0)
        assert list(counts) == [3.0, 3.0, 3.0]

    def test_exclude_self_counts(self):
        theta = np.zeros(3)
        pairs = (np.array([0]), np.array([1]))
        _, _, counts = ag.flocking_gather(theta, pairs, include_self=False)
        assert list(counts) == [1.0, 1.0, 0.0]

    def test_noise_free_alignment_is_fixed_point(self):
        theta = np.full(10, 1.2)
        pairs = (np.array([], dtype=int), np.array([], dtype=int))
        sc, ss, n = ag.flocking_gather(theta, pairs)
        out = ag.flocking_update(theta, sc, ss, n, eta=0.0, xi=np.zeros(10))
        assert np.allclose(out, 1.2)

    def test_symmetric_pair_averages_to_zero(self):
        delta = 0.3
        theta = np.array([delta, -delta])
        pairs = (np.array([0]), np.array([1]))
        sc, ss, n = ag.flocking_gather(theta, pairs)
        out = ag.flocking_update(theta, sc, ss, n, eta=0.0, xi=np.zeros(2))
        assert np.allclose(out, 0.0, atol=1e-15)

    def test_degenerate_sum_keeps_angle(self):
        # isolated agent, self excluded: zero sums and zero noise weight
        theta = np.array([0.4, 2.2])
        empty = (np.array([], dtype=int), np.array([], dtype=int))
        sc, ss, n = ag.flocking_gather(theta, empty, include_self=False)
        out = ag.flocking_update(theta, sc, ss, n, eta=0.7, xi=np.zeros(2))
        assert list(out) == [0.4, 2.2]

    def test_unit_noise_bisects_single_agent(self):
        theta = np.array([0.0])
        pairs = (np.array([], dtype=int), np.array([], dtype=int))
        sc, ss, n = ag.flocking_gather(theta, pairs)
        out = ag.flocking_update(theta, sc, ss, n, eta=1.0, xi=np.array([math.pi / 2]))
        assert out[0] == pytest.approx(math.pi / 4)


def flocking_docs():
    model = docs.load_document(LIBRARY / "models/flocking_model.json")
    problem = docs.load_document(LIBRARY / "problems/flocking_problem.json")
    return model, problem


class TestInterpreterVsNative:
    def test_one_step_agreement(self):
        model, problem = flocking_docs()
        params = problem.parameter_values()
        n, seed = 64, 2
        box = 100.0

        ids = np.arange(n)
        theta0 = TWO_PI * keyed_uniform_array(ids, seed, 1, tail=(0,))
        pos0 = np.column_stack([
            box * keyed_uniform_array(ids, seed, 5, tail=(d,)) for d in range(2)])

        agents = ag.AgentSet(n, ["x", "y"], problem.domain,
                             ["theta", "sumcos", "sumsin", "n"])
        agents.props["x"][:] = pos0[:, 0]
        agents.props["y"][:] = pos0[:, 1]
        agents.props["theta"][:] = theta0
        ag.step_agents(agents, model, params, params["radius"], step=0, seed=seed)

        pairs = ag.neighbor_pairs(pos0, np.zeros(2), np.full(2, box), params["radius"])
        sc, ss, cnt = ag.flocking_gather(theta0, pairs, include_self=True)
        xi = TWO_PI * keyed_uniform_array(ids, seed, 3, 0, 2, tail=(0,))
        theta1 = ag.flocking_update(theta0, sc, ss, cnt, params["eta"], xi)
        x1 = np.mod(pos0[:, 0] + params["v0"] * params["dt"] * np.cos(theta1), box)
        y1 = np.mod(pos0[:, 1] + params["v0"] * params["dt"] * np.sin(theta1), box)

        assert np.allclose(agents.props["theta"], theta1, atol=1e-12)
        assert np.allclose(agents.props["x"], x1, atol=1e-10)
        assert np.allclose(agents.props["y"], y1, atol=1e-10)


class TestRunner:
    def run(self, tmp_path, tag, partitions=None, seed=1):
        model, problem = flocking_docs()
        config = RunConfig({"time_steps": 10}, output_dir=tmp_path / tag, seed=seed)
        return ag.run_spatial_problem(problem, model, config, partitions=partitions)

    def test_snapshots_and_order_series(self, tmp_path):
        report = self.run(tmp_path, "a")
        assert report.steps == 10
        names = [p.rsplit("/", 1)[-1] for p in report.outputs]
        assert names == [f"agents_{k}.csv" for k in range(1, 11)] + ["order.csv"]
        assert len(report.order_history) == 10
        assert all(0.0 <= phi <= 1.0 for phi in report.order_history)
        header = open(report.outputs[0]).readline().strip()
        assert header == "id,x,y,theta,sumcos,sumsin,n"

    def test_partitioning_is_bitwise_invisible(self, tmp_path):
        a = self.run(tmp_path, "p1", partitions=1)
        b = self.run(tmp_path, "p4", partitions=4)
        for pa, pb in zip(a.outputs, b.outputs):
            assert open(pa, "rb").read() == open(pb, "rb").read()

    def test_positions_stay_in_domain(self, tmp_path):
        report = self.run(tmp_path, "wrap")
        assert np.all(report.agents.props["x"] >= 0.0)
        assert np.all(report.agents.props["x"] < 100.0)
        assert np.all(report.agents.props["y"] >= 0.0)
        assert np.all(report.agents.props["y"] < 100.0)

    def test_missing_radius_parameter_rejected(self, tmp_path):
        model, problem = flocking_docs()
        model.interaction_radius = "rho"
        config = RunConfig({"time_steps": 1}, output_dir=tmp_path / "r")
        with pytest.raises(ag.AgentError):
            ag.run_spatial_problem(problem, model, config)


def test_wrap_translation_leaves_neighbors_invariant():
    rng = np.random.default_rng(8)
    extents = np.array([10.0, 10.0])
    pos = rng.uniform(0.0, 10.0, size=(40, 2))
    base = ag.neighbor_pairs(pos, np.zeros(2), extents, 1.5)
    shifted = np.mod(pos + np.array([30.0, -20.0]), extents)
    moved = ag.neighbor_pairs(shifted, np.zeros(2), extents, 1.5)
    assert np.array_equal(base[0], moved[0]) and np.array_equal(base[1], moved[1])
