"""Spatial agent runtime: periodic box, radius neighbor search, rules.

Agents live in a periodic rectangular domain; the neighbor relation is
the closed ball of the interaction radius under the minimum-image metric
(distance ties count, and by default an agent is its own neighbor).
Neighbor candidates come from a periodic k-d tree at a slightly inflated
radius and are then filtered with the exact minimum-image distance, so
the result matches a brute-force scan exactly.

Rule execution mirrors the graph runtime: per-rule property snapshots,
gather rules may read neighbors, update rules are agent-local, and all
randomness is keyed on (seed, phase, step, rule index, agent).
"""

from __future__ import annotations

import math
import warnings

import numpy as np
from scipy.spatial import cKDTree

from . import algorithm as alg
from . import expr
from .rng import DrawStream, keyed_uniform_array

_PHASE_INIT = 1
_PHASE_RULE = 3
_PHASE_POS = 5

TWO_PI = 2.0 * math.pi


class AgentError(Exception):
    pass


class AgentSet:
    """N agents with coordinate arrays and named property arrays.

    Coordinates are stored alongside the other properties; writes to them
    go through :meth:`wrap` so positions always stay in [lo, hi).
    """

    def __init__(self, n, coords, domain, properties):
        self.n = int(n)
        self.coords = list(coords)
        self.domain = {a: (float(lo), float(hi)) for a, (lo, hi) in domain.items()}
        self.props = {}
        for name in list(properties) + self.coords:
            self.props[name] = np.zeros(self.n)

    def positions(self):
        return np.column_stack([self.props[c] for c in self.coords])

    def extents(self):
        return np.array([self.domain[c][1] - self.domain[c][0] for c in self.coords])

    def lows(self):
        return np.array([self.domain[c][0] for c in self.coords])

    def wrap(self, coord, value):
        lo, hi = self.domain[coord]
        return lo + (value - lo) % (hi - lo)


def default_positions(agents, seed=0):
    """Uniform random positions, keyed per agent; runs before any
    initial-condition algorithm (which may overwrite them)."""
    ids = np.arange(agents.n)
    for d, c in enumerate(agents.coords):
        lo, hi = agents.domain[c]
        u = keyed_uniform_array(ids, seed, _PHASE_POS, tail=(d,))
        agents.props[c][:] = lo + u * (hi - lo)


# ---------------------------------------------------------------------------
# Neighbor search

def neighbor_pairs(positions, lows, extents, radius):
    """All unordered pairs (i < j) with minimum-image distance <= radius.

    Returned as two index arrays sorted lexicographically.  Candidates
    come from a periodic k-d tree queried at radius*(1+1e-9) and are then
    filtered with the exact minimum-image metric, so ties at the radius
    are kept and the result equals a brute-force scan.
    """
    positions = np.asarray(positions, dtype=np.float64)
    extents = np.asarray(extents, dtype=np.float64)
    shifted = np.mod(positions - lows, extents)
    # guard against mod rounding tiny negatives up to the full extent
    shifted = np.where(shifted >= extents, shifted - extents, shifted)
    if 3.0 * radius >= extents.min():
        warnings.warn(
            f"interaction radius {radius} is >= a third of the domain extent; "
            "using the quadratic all-pairs search")
        pairs = _brute_pairs(shifted, extents, radius)
    else:
        tree = cKDTree(shifted, boxsize=extents)
        pairs = tree.query_pairs(radius * (1.0 + 1e-9), output_type="ndarray")
        if len(pairs):
            keep = _within(shifted[pairs[:, 0]], shifted[pairs[:, 1]], extents, radius)
            pairs = pairs[keep]
    if len(pairs) == 0:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty
    order = np.lexsort((pairs[:, 1], pairs[:, 0]))
    pairs = pairs[order]
    return pairs[:, 0].astype(np.int64), pairs[:, 1].astype(np.int64)


def _within(a, b, extents, radius):
    delta = np.abs(a - b)
    delta = np.minimum(delta, extents - delta)
    return np.sum(delta * delta, axis=1) <= radius * radius


def _brute_pairs(shifted, extents, radius):
    n = len(shifted)
    ii, jj = np.triu_indices(n, k=1)
    keep = _within(shifted[ii], shifted[jj], extents, radius)
    return np.column_stack([ii[keep], jj[keep]])


def neighbor_lists(n, pairs, include_self=True):
    """Ascending neighbor index list per agent from the (i < j) pairs."""
    ii, jj = pairs
    lists = [[] for _ in range(n)]
    for a, b in zip(ii, jj):
        lists[a].append(int(b))
        lists[b].append(int(a))
    out = []
    for i in range(n):
        nbr = sorted(lists[i])
        if include_self:
            nbr = sorted(nbr + [i])
        out.append(nbr)
    return out


def find_neighbors(agents, i, radius, include_self=True):
    """Neighbors of one agent (ascending, self included by convention)."""
    pairs = neighbor_pairs(agents.positions(), agents.lows(), agents.extents(), radius)
    return neighbor_lists(agents.n, pairs, include_self)[i]


def order_parameter(theta):
    """Polarization (1/N)|sum exp(i theta)| of an angle array."""
    theta = np.asarray(theta)
    return float(math.hypot(np.mean(np.cos(theta)), np.mean(np.sin(theta))))


# ---------------------------------------------------------------------------
# Rule execution

class AgentContext(alg.Context):
    """One agent executing one rule.

    Current-agent reads are live (accumulators work inside a rule); reads
    of other agents ($na inside iterate_over_interactions) come from the
    per-rule snapshot.  Update rules reject neighbor access.  Writes to
    coordinate properties are wrapped into the domain.
    """

    family = "spatial"

    def __init__(self, agents, snapshot, neighbors, agent, params, stream,
                 phase="gather", iteration=0):
        self.agents = agents
        self.snapshot = snapshot
        self.neighbors = neighbors
        self.agent = int(agent)
        self.params = params
        self.stream = stream
        self.phase = phase
        self.iteration = iteration
        self._partner = None

    def resolve(self, name, kind, arg):
        if kind == "parameter":
            return self.params[name]
        if kind in ("field", "coordinate"):
            a = self.agent if arg is None else int(arg)
            if a == self.agent:
                return float(self.agents.props[name][a])
            if self.phase == "update":
                raise alg.PhaseError(
                    f"update rule read property '{name}' of another agent")
            if not 0 <= a < self.agents.n:
                raise expr.EvaluationError(f"agent index {a} out of range for '{name}'")
            return float(self.snapshot[name][a])
        if kind == "builtin":
            return self._builtin(name)
        raise expr.EvaluationError(f"'{name}' is not available on an agent")

    def _builtin(self, name):
        if name == "$ca":
            return float(self.agent)
        if name == "$na":
            if self.phase == "update":
                raise alg.PhaseError("$na is not allowed in an update rule")
            if self._partner is None:
                raise expr.EvaluationError("$na outside iterate_over_interactions")
            return float(self._partner)
        if name == "$gnoa":
            return float(self.agents.n)
        if name == "$in":
            return float(self.iteration)
        if name == "$rnd_uniform":
            return self.stream.uniform()
        if name == "$rnd_int_1":
            return float(self.stream.int_below(2))
        raise expr.EvaluationError(f"builtin '{name}' is not available on an agent")

    def write(self, name, index, value):
        if name not in self.agents.props:
            raise alg.AlgorithmError(f"write to undeclared property '{name}'")
        a = self.agent if index is None else int(index)
        if a != self.agent:
            raise alg.AlgorithmError(
                f"agent {self.agent} may not write property '{name}' of agent {a}")
        if name in self.agents.domain:
            value = self.agents.wrap(name, value)
        self.agents.props[name][a] = value

    def iter_interactions(self):
        if self.phase == "update":
            raise alg.PhaseError("iterate_over_interactions is not allowed in an update rule")
        for p in self.neighbors[self.agent]:
            self._partner = p
            yield p
        self._partner = None


def initialize_agents(problem, model, params, n, seed=0):
    """AgentSet with keyed uniform positions, then the problem's IC."""
    agents = AgentSet(n, problem.spatial_coords, problem.domain,
                      [p for p in problem.properties if p not in problem.spatial_coords])
    default_positions(agents, seed)
    snapshot = {k: v.copy() for k, v in agents.props.items()}
    for a in range(agents.n):
        stream = DrawStream(seed, _PHASE_INIT, a)
        ctx = AgentContext(agents, snapshot, None, a, params, stream, phase="init")
        alg.run_algorithm(problem.initial_condition, ctx)
    return agents


def step_agents(agents, model, params, radius, step, seed=0, partitions=1):
    """One evolution step: neighbor rebuild, then rules in declared order."""
    pairs = neighbor_pairs(agents.positions(), agents.lows(), agents.extents(), radius)
    neighbors = neighbor_lists(agents.n, pairs, model.include_self)
    for rule_index, rule_name in enumerate(model.execution_order):
        rule = model.rule_by_name(rule_name)
        if rule is None:
            raise AgentError(f"execution order names unknown rule '{rule_name}'")
        snapshot = {k: v.copy() for k, v in agents.props.items()}
        for block in _partition(agents.n, partitions):
            for a in block:
                stream = DrawStream(seed, _PHASE_RULE, step, rule_index, a)
                ctx = AgentContext(agents, snapshot, neighbors, a, params, stream,
                                   phase=rule.kind, iteration=step)
                try:
                    alg.run_algorithm(rule.algorithm, ctx)
                except expr.EvaluationError as exc:
                    raise AgentError(
                        f"rule '{rule_name}' failed at agent {a}: {exc}") from exc


def _partition(n, parts):
    parts = max(1, int(parts))
    bounds = [n * k // parts for k in range(parts + 1)]
    return [range(bounds[k], bounds[k + 1]) for k in range(parts)]


# ---------------------------------------------------------------------------
# Problem runner

class SpatialRunReport:
    def __init__(self, steps, order_history, outputs):
        self.steps = steps
        self.order_history = order_history
        self.outputs = outputs

    def to_json(self):
        return {"steps": self.steps, "order_parameter": list(self.order_history),
                "outputs": list(self.outputs)}


def run_spatial_problem(problem, model, config, partitions=None):
    """Execute a spatial problem; CSV snapshot per step plus order.csv."""
    seed = config.seed
    if partitions is None:
        partitions = config.workers
    n = int(config.get("n_agents", problem.n_agents))
    if n <= 0:
        raise AgentError("agent count must be positive")
    params = problem.parameter_values(config.scalar_overrides)
    if model.interaction_radius not in params:
        raise AgentError(f"radius parameter '{model.interaction_radius}' is undefined")

    agents = initialize_agents(problem, model, params, n, seed)
    env = expr.EvalEnvironment(bindings=dict(params))

    def finalized(k):
        env.bindings["$in"] = float(k)
        return expr.evaluate(problem.finalization, env) != 0.0

    out_dir = config.output_dir
    outputs = []
    order_history = []
    step = 0
    while not finalized(step):
        if step >= config.max_steps:
            raise AgentError(f"finalization never satisfied within {config.max_steps} steps")
        radius = params[model.interaction_radius]
        step_agents(agents, model, params, radius, step, seed, partitions)
        step += 1
        outputs.append(str(_write_snapshot(agents, out_dir, step)))
        if "theta" in agents.props:
            order_history.append(order_parameter(agents.props["theta"]))
    if order_history:
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "order.csv", "w", encoding="utf-8") as fh:
            fh.write("step,phi_ord\n")
            for k, phi in enumerate(order_history, start=1):
                fh.write(f"{k},{phi:.17g}\n")
        outputs.append(str(out_dir / "order.csv"))

    report = SpatialRunReport(step, order_history, outputs)
    report.agents = agents
    return report


def _write_snapshot(agents, out_dir, step):
    names = agents.coords + [p for p in agents.props if p not in agents.coords]
    path = out_dir / f"agents_{step}.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("id," + ",".join(names) + "\n")
        for a in range(agents.n):
            row = ",".join(format(float(agents.props[p][a]), ".17g") for p in names)
            fh.write(f"{a},{row}\n")
    return path


# ---------------------------------------------------------------------------
# Native flocking operators (vectorized twins of the shipped document rules)

def flocking_gather(theta, pairs, include_self=True):
    """Neighbor trig sums: sumcos, sumsin, and neighbor counts.

    ``pairs`` are the (i < j) index arrays from :func:`neighbor_pairs`.
    Accumulation uses np.add.at over lexicographically sorted pairs, so
    per-agent addition order is ascending neighbor index.
    """
    theta = np.asarray(theta, dtype=np.float64)
    n = len(theta)
    ct, st = np.cos(theta), np.sin(theta)
    if include_self:
        sumcos, sumsin = ct.copy(), st.copy()
        counts = np.ones(n)
    else:
        sumcos, sumsin = np.zeros(n), np.zeros(n)
        counts = np.zeros(n)
    ii, jj = pairs
    np.add.at(sumcos, ii, ct[jj])
    np.add.at(sumsin, ii, st[jj])
    np.add.at(sumcos, jj, ct[ii])
    np.add.at(sumsin, jj, st[ii])
    np.add.at(counts, ii, 1.0)
    np.add.at(counts, jj, 1.0)
    return sumcos, sumsin, counts


def flocking_update(theta, sumcos, sumsin, counts, eta, xi):
    """Vectorial-noise angle update.

    New angle is the argument of (sum of neighbor headings) + eta * n *
    e^(i xi); a zero-magnitude argument vector keeps the previous angle.
    """
    vx = sumcos + eta * counts * np.cos(xi)
    vy = sumsin + eta * counts * np.sin(xi)
    degenerate = (vx == 0.0) & (vy == 0.0)
    return np.where(degenerate, theta, np.arctan2(vy, vx))


def run_flocking(n, box, radius, v0, eta, dt, steps, seed=0, include_self=True,
                 angle_rule_index=2):
    """Self-contained flocking run; returns the per-step polarization.

    Initialization and noise draws use the same RNG keying as the
    document runtime: positions (seed, pos-phase, agent, axis), angles
    (seed, init-phase, agent), noise (seed, rule-phase, step, rule,
    agent).
    """
    box = np.broadcast_to(np.asarray(box, dtype=np.float64), (2,))
    ids = np.arange(n)
    pos = np.column_stack([
        box[d] * keyed_uniform_array(ids, seed, _PHASE_POS, tail=(d,))
        for d in range(2)])
    theta = TWO_PI * keyed_uniform_array(ids, seed, _PHASE_INIT, tail=(0,))
    lows = np.zeros(2)
    history = []
    for step in range(steps):
        pairs = neighbor_pairs(pos, lows, box, radius)
        sumcos, sumsin, counts = flocking_gather(theta, pairs, include_self)
        xi = TWO_PI * keyed_uniform_array(
            ids, seed, _PHASE_RULE, step, angle_rule_index, tail=(0,))
        theta = flocking_update(theta, sumcos, sumsin, counts, eta, xi)
        pos[:, 0] = np.mod(pos[:, 0] + v0 * dt * np.cos(theta), box[0])
        pos[:, 1] = np.mod(pos[:, 1] + v0 * dt * np.sin(theta), box[1])
        history.append(order_parameter(theta))
    return np.array(history)
