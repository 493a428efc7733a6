"""Algorithm statement parsing, execution, scoping, and locality."""

import pytest

from simflow import algorithm as alg
from simflow import expr


class DictContext(alg.Context):
    """Minimal context: one entity, properties in a dict, scripted edges."""

    def __init__(self, props, edge_values=(), params=None):
        self.props = dict(props)
        self.edge_values = list(edge_values)
        self.params = dict(params or {})
        self._edge = None

    def resolve(self, name, kind, arg):
        if name in self.params:
            return self.params[name]
        if name == "$ce":
            return self._edge
        if name == "$es":
            return arg  # identity: source of edge e is e, for test scripting
        if name in self.props:
            return self.props[name]
        raise expr.EvaluationError(f"unknown '{name}'")

    def write(self, name, index, value):
        self.props[name] = value

    def iter_edges(self, direction):
        for e in self.edge_values:
            self._edge = e
            yield e
        self._edge = None


def load(stmts, symbols=None):
    table = {"state": "field", "acc": "field"}
    table.update(symbols or {})
    return alg.algorithm_from_json(stmts, table)


def test_round_trip():
    stmts = [
        {"do": "assign", "target": "acc", "expr": "0"},
        {"do": "if", "cond": "(state >= 1)", "then": [
            {"do": "assign", "target": "state", "expr": "0"}],
         "else": [{"do": "assign", "target": "state", "expr": "1"}]},
        {"do": "while", "cond": "(state < 3)", "body": [
            {"do": "assign", "target": "state", "expr": "(state + 1)"}]},
        {"do": "iterate_over_edges", "direction": "in", "body": [
            {"do": "assign", "target": "acc", "expr": "(acc + 1)"}]},
    ]
    a = load(stmts)
    assert alg.algorithm_to_json(a) == stmts


def test_assign_and_if():
    a = load([
        {"do": "assign", "target": "tmp", "expr": "acc / 2 - 0.4"},
        {"do": "if", "cond": "tmp >= 0",
         "then": [{"do": "assign", "target": "state", "expr": "1"}],
         "else": [{"do": "assign", "target": "state", "expr": "0"}]},
    ])
    ctx = DictContext({"state": 0.0, "acc": 1.0})
    alg.run_algorithm(a, ctx)
    assert ctx.props["state"] == 1.0


def test_while_computes():
    a = load([
        {"do": "assign", "target": "i", "expr": "0"},
        {"do": "assign", "target": "total", "expr": "0"},
        {"do": "while", "cond": "i < 10", "body": [
            {"do": "assign", "target": "i", "expr": "i + 1"},
            {"do": "assign", "target": "total", "expr": "total + i"},
        ]},
        {"do": "assign", "target": "acc", "expr": "total"},
    ])
    ctx = DictContext({"acc": 0.0})
    alg.run_algorithm(a, ctx)
    assert ctx.props["acc"] == 55.0


def test_while_cap():
    a = load([{"do": "while", "cond": "1", "body": [
        {"do": "assign", "target": "acc", "expr": "acc + 1"}]}])
    with pytest.raises(alg.StepLimitError):
        alg.run_algorithm(a, DictContext({"acc": 0.0}), while_cap=50)


def test_edge_iteration_accumulates():
    a = load([
        {"do": "assign", "target": "acc", "expr": "0"},
        {"do": "iterate_over_edges", "direction": "in", "body": [
            {"do": "assign", "target": "acc", "expr": "acc + $es($ce)"}]},
    ])
    ctx = DictContext({"acc": -1.0}, edge_values=[2.0, 3.0, 5.0])
    alg.run_algorithm(a, ctx)
    assert ctx.props["acc"] == 10.0


def test_if_promotes_only_common_locals():
    # t is assigned in both branches, u only in one
    a = load([
        {"do": "if", "cond": "state >= 0",
         "then": [{"do": "assign", "target": "t", "expr": "1"},
                  {"do": "assign", "target": "u", "expr": "7"}],
         "else": [{"do": "assign", "target": "t", "expr": "2"}]},
        {"do": "assign", "target": "acc", "expr": "t"},
    ])
    ctx = DictContext({"state": 1.0, "acc": 0.0})
    alg.run_algorithm(a, ctx)
    assert ctx.props["acc"] == 1.0

    bad = load([
        {"do": "if", "cond": "state >= 0",
         "then": [{"do": "assign", "target": "u", "expr": "7"}], "else": []},
        {"do": "assign", "target": "acc", "expr": "u"},
    ])
    with pytest.raises(expr.EvaluationError):
        alg.run_algorithm(bad, DictContext({"state": 1.0, "acc": 0.0}))


def test_local_updates_enclosing_scope():
    a = load([
        {"do": "assign", "target": "total", "expr": "0"},
        {"do": "iterate_over_edges", "direction": "in", "body": [
            {"do": "assign", "target": "total", "expr": "total + 1"}]},
        {"do": "assign", "target": "acc", "expr": "total"},
    ])
    ctx = DictContext({"acc": 0.0}, edge_values=[0.0, 0.0, 0.0, 0.0])
    alg.run_algorithm(a, ctx)
    assert ctx.props["acc"] == 4.0


def test_locality_classification():
    local = load([{"do": "assign", "target": "state", "expr": "acc + 1"}])
    assert alg.check_locality(local) == "update-safe"

    edges = load([{"do": "iterate_over_edges", "direction": "in", "body": []}])
    assert alg.check_locality(edges) == "gather-required"

    reads_neighbor = load([{"do": "assign", "target": "state", "expr": "$es($ce)"}])
    assert alg.check_locality(reads_neighbor) == "gather-required"


def test_unsupported_tags_parse_but_refuse_to_run():
    a = load([{"do": "flux"}])
    assert alg.unsupported_tags(a) == ["flux"]
    with pytest.raises(alg.AlgorithmError):
        alg.run_algorithm(a, DictContext({}))


def test_bad_direction_rejected():
    with pytest.raises(alg.AlgorithmError):
        load([{"do": "iterate_over_edges", "direction": "sideways", "body": []}])


def test_invalid_target():
    with pytest.raises(alg.AlgorithmError):
        load([{"do": "assign", "target": "acc + 1", "expr": "0"}])
