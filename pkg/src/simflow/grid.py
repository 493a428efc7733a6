"""Structured periodic grid executor for kernel programs.

Cell-centered grids with ghost layers, periodic halo exchange, the RK3
time loop, legacy-VTK output, and domain decomposition.  Decomposed runs
are bitwise identical to serial runs: all field updates are elementwise
numpy operations, stencil accumulation order is fixed, and initial-data
randomness is keyed on global cell indices.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import algorithm as alg
from . import expr
from .kernel import Combine, Pointwise, StencilApply, rk3_step
from .rng import DrawStream
from .stencils import ko_dissipation

_PHASE_INIT = 1


class GridRuntimeError(Exception):
    pass


def _fmt(v):
    return format(float(v), ".17g")


@dataclass
class Grid:
    """One (sub)domain: interior cells plus ghost layers of width halo.

    ``offsets`` are the global indices of the first interior cell per
    axis, so subdomain coordinates and RNG keys match the serial run.
    """

    axes: list
    counts: tuple            # interior cells per axis
    global_counts: tuple
    bounds: dict             # axis -> (lo, hi) of the global domain
    halo: int
    offsets: tuple = None
    data: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.offsets is None:
            self.offsets = tuple(0 for _ in self.counts)
        self.dx = tuple((self.bounds[a][1] - self.bounds[a][0]) / n
                        for a, n in zip(self.axes, self.global_counts))

    @property
    def ndim(self):
        return len(self.axes)

    @property
    def shape(self):
        return tuple(n + 2 * self.halo for n in self.counts)

    def allocate(self, fields):
        for f in fields:
            self.data[f] = np.zeros(self.shape)

    def interior(self, arr=None):
        sl = tuple(slice(self.halo, self.halo + n) for n in self.counts)
        if arr is not None:
            return arr[sl]
        return sl

    def coords_1d(self, d):
        """Cell-center coordinates along axis d for the padded extent."""
        a = self.axes[d]
        lo = self.bounds[a][0]
        idx = np.arange(self.counts[d] + 2 * self.halo, dtype=np.float64)
        return lo + (idx - self.halo + self.offsets[d] + 0.5) * self.dx[d]

    def coord_arrays(self):
        """Broadcastable padded coordinate arrays, one per axis."""
        out = {}
        for d, a in enumerate(self.axes):
            shape = [1] * self.ndim
            shape[d] = -1
            out[a] = self.coords_1d(d).reshape(shape)
        return out


def make_grid(axes, counts, bounds, halo):
    counts = tuple(int(n) for n in counts)
    for a, n in zip(axes, counts):
        if halo > n:
            raise GridRuntimeError(f"halo {halo} wider than interior ({n} cells) on axis {a}")
    return Grid(list(axes), counts, counts, dict(bounds), halo)


def exchange_halos(grid):
    """Fill ghost layers with periodic images, axis by axis.

    Axis passes run in declaration order and copy full-extent slabs, so
    corner ghosts end up doubly wrapped.
    """
    h = grid.halo
    if h == 0:
        return
    for d in range(grid.ndim):
        n = grid.counts[d]
        for arr in grid.data.values():
            left = _axis_slice(grid.ndim, d, slice(0, h))
            right = _axis_slice(grid.ndim, d, slice(n + h, n + 2 * h))
            arr[left] = arr[_axis_slice(grid.ndim, d, slice(n, n + h))]
            arr[right] = arr[_axis_slice(grid.ndim, d, slice(h, 2 * h))]


def _axis_slice(ndim, d, sl):
    return tuple(sl if k == d else slice(None) for k in range(ndim))


def exchange_halos_decomposed(subgrids, layout):
    """Halo exchange across a cartesian arrangement of subdomains.

    With layout (1,)*ndim this reduces exactly to :func:`exchange_halos`.
    """
    index = {g.part_index: g for g in subgrids}
    ndim = subgrids[0].ndim
    h = subgrids[0].halo
    if h == 0:
        return
    for d in range(ndim):
        for g in subgrids:
            n = g.counts[d]
            left_nb = index[_shift_index(g.part_index, d, -1, layout)]
            right_nb = index[_shift_index(g.part_index, d, +1, layout)]
            for f in g.data:
                g.data[f][_axis_slice(ndim, d, slice(0, h))] = \
                    left_nb.data[f][_axis_slice(ndim, d, slice(left_nb.counts[d], left_nb.counts[d] + h))]
                g.data[f][_axis_slice(ndim, d, slice(n + h, n + 2 * h))] = \
                    right_nb.data[f][_axis_slice(ndim, d, slice(h, 2 * h))]


def _shift_index(idx, d, delta, layout):
    out = list(idx)
    out[d] = (out[d] + delta) % layout[d]
    return tuple(out)


# ---------------------------------------------------------------------------
# Initial conditions

class CellContext(alg.Context):
    family = "pde"
    phase = "init"

    def __init__(self, grid, cell, params, stream, time_coord):
        self.grid = grid
        self.cell = cell  # local padded index tuple
        self.params = params
        self.stream = stream
        self.time_coord = time_coord

    def resolve(self, name, kind, arg):
        if kind == "parameter":
            return self.params[name]
        if kind == "coordinate":
            if name == self.time_coord:
                return 0.0
            d = self.grid.axes.index(name)
            return float(self.grid.coords_1d(d)[self.cell[d]])
        if kind == "field":
            return float(self.grid.data[name][self.cell])
        if kind == "builtin":
            if name == "$rnd_uniform":
                return self.stream.uniform()
            if name == "$rnd_int_1":
                return float(self.stream.int_below(2))
            if name == "$in":
                return 0.0
        raise expr.EvaluationError(f"'{name}' is not available in a grid initial condition")

    def write(self, name, index, value):
        if index is not None:
            raise alg.AlgorithmError("indexed writes are not valid on a grid")
        if name not in self.grid.data:
            raise alg.AlgorithmError(f"write to undeclared field '{name}'")
        self.grid.data[name][self.cell] = value


def _is_straightline(statements):
    return all(isinstance(s, alg.Assign) and isinstance(s.target, expr.Symbol)
               and s.target.kind == "field" for s in statements)


def _uses_randomness(e):
    return any(n in ("$rnd_uniform", "$rnd_int_1") for n, _ in expr.free_symbols(e))


def apply_initial_conditions(grid, problem, param_values, seed=0):
    """Run the problem's initial-condition algorithm at every interior cell.

    Straight-line deterministic assignments are evaluated vectorized over
    the whole interior (bitwise identical to the per-cell path); anything
    with control flow or randomness falls back to per-cell interpretation
    keyed on the global cell index.  Halos are exchanged once afterwards.
    """
    ic = problem.region.initial_condition
    statements = ic.statements
    if _is_straightline(statements) and not any(_uses_randomness(s.value) for s in statements):
        bindings = dict(param_values)
        bindings.update(grid.coord_arrays())
        bindings[problem.time_coord] = 0.0
        inner = grid.interior()
        for s in statements:
            bindings.update({f: grid.data[f] for f in grid.data})
            value = expr.evaluate_array(s.value, bindings)
            grid.data[s.target.name][inner] = np.broadcast_to(
                value, grid.shape)[inner]
    else:
        strides = _global_strides(grid.global_counts)
        for local in np.ndindex(*grid.counts):
            cell = tuple(i + grid.halo for i in local)
            gidx = sum((i + o) * s for i, o, s in zip(local, grid.offsets, strides))
            stream = DrawStream(seed, _PHASE_INIT, gidx)
            ctx = CellContext(grid, cell, param_values, stream, problem.time_coord)
            alg.run_algorithm(ic, ctx)
    exchange_halos(grid)


def _global_strides(counts):
    strides = [1] * len(counts)
    for d in range(len(counts) - 2, -1, -1):
        strides[d] = strides[d + 1] * counts[d + 1]
    return strides


# ---------------------------------------------------------------------------
# Kernel evaluation

def apply_stencil(arr, stencil, axis_idx, dx):
    """Apply a one-axis stencil; valid where the input had enough margin."""
    out = np.zeros_like(arr)
    size = arr.shape[axis_idx]
    r = stencil.radius
    ndim = arr.ndim
    sl_out = _axis_slice(ndim, axis_idx, slice(r, size - r))
    acc = None
    for off, w in zip(stencil.offsets, stencil.weights):
        sl_in = _axis_slice(ndim, axis_idx, slice(r + off, size - r + off))
        term = w * arr[sl_in]
        acc = term if acc is None else acc + term
    if stencil.order > 0:
        acc = acc / dx ** stencil.order
    out[sl_out] = acc
    return out


def _eval_node(node, grid, bindings):
    if isinstance(node, Pointwise):
        value = expr.evaluate_array(node.exprn, bindings)
        return np.broadcast_to(np.asarray(value, dtype=np.float64), grid.shape)
    if isinstance(node, StencilApply):
        inner = _eval_node(node.inner, grid, bindings)
        d = grid.axes.index(node.stencil.axis)
        return apply_stencil(inner, node.stencil, d, grid.dx[d])
    if isinstance(node, Combine):
        parts = [_eval_node(c, grid, bindings) for c in node.children]
        acc = parts[0]
        for p in parts[1:]:
            acc = acc + p if node.op == "+" else acc * p
        return acc
    raise TypeError(f"not a kernel node: {node!r}")


def _dissipation_stencils(kernel, grid):
    return [ko_dissipation(kernel.dissipation_order, kernel.sigma, grid.dx[d], axis)
            for d, axis in enumerate(grid.axes)]


def evaluate_rhs(kernel, grid, param_values, t, time_coord, diss=None):
    """RHS arrays for all fields (valid on the interior given a full halo)."""
    bindings = dict(param_values)
    bindings.update(grid.coord_arrays())
    bindings[time_coord] = t
    bindings.update(grid.data)
    out = {}
    if diss is None and kernel.has_dissipation:
        diss = _dissipation_stencils(kernel, grid)
    for f in kernel.fields:
        val = np.array(_eval_node(kernel.rhs[f], grid, bindings))
        if kernel.has_dissipation:
            for d in range(grid.ndim):
                val += apply_stencil(grid.data[f], diss[d], d, grid.dx[d])
        out[f] = val
    return out


# ---------------------------------------------------------------------------
# VTK output

def write_vtk(grid_like, path, title="simflow"):
    """Legacy ASCII STRUCTURED_POINTS file, one scalar block per field.

    ``grid_like`` needs axes / global bounds / interior arrays; values are
    cell data written x-fastest with 17 significant digits.
    """
    axes, bounds, counts, fields = grid_like
    ndim = len(axes)
    dims = [counts[d] + 1 if d < ndim else 1 for d in range(3)]
    origin = [bounds[axes[d]][0] if d < ndim else 0.0 for d in range(3)]
    spacing = [(bounds[axes[d]][1] - bounds[axes[d]][0]) / counts[d] if d < ndim else 1.0
               for d in range(3)]
    ncells = 1
    for n in counts:
        ncells *= n
    lines = [
        "# vtk DataFile Version 3.0",
        title,
        "ASCII",
        "DATASET STRUCTURED_POINTS",
        f"DIMENSIONS {dims[0]} {dims[1]} {dims[2]}",
        f"ORIGIN {_fmt(origin[0])} {_fmt(origin[1])} {_fmt(origin[2])}",
        f"SPACING {_fmt(spacing[0])} {_fmt(spacing[1])} {_fmt(spacing[2])}",
        f"CELL_DATA {ncells}",
    ]
    for name in fields:
        lines.append(f"SCALARS {name} double 1")
        lines.append("LOOKUP_TABLE default")
        flat = fields[name].ravel(order="F")  # first axis (x) varies fastest
        lines.extend(_fmt(v) for v in flat)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_vtk_cell_data(path):
    """Minimal reader for files produced by :func:`write_vtk` (test oracle)."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    dims = None
    fields = {}
    i = 0
    while i < len(lines):
        parts = lines[i].split()
        if parts[:1] == ["DIMENSIONS"]:
            dims = [int(x) for x in parts[1:]]
        elif parts[:1] == ["SCALARS"]:
            name = parts[1]
            counts = [max(d - 1, 1) for d in dims]
            n = counts[0] * counts[1] * counts[2]
            values = np.array([float(x) for x in lines[i + 2:i + 2 + n]])
            shape = [c for c, d in zip(counts, dims) if d > 1]
            fields[name] = values.reshape(shape, order="F")
            i += 1 + n
        i += 1
    return fields


# ---------------------------------------------------------------------------
# Time loop

@dataclass
class RunReport:
    steps: int
    final_time: float
    field_ranges: dict   # field -> [min, max]
    outputs: list

    def to_json(self):
        return {"steps": self.steps, "final_time": self.final_time,
                "field_ranges": {k: list(v) for k, v in self.field_ranges.items()},
                "outputs": list(self.outputs)}


def _square_layout(workers, ndim):
    """Near-square factorization of the worker count over the axes."""
    layout = [1] * ndim
    remaining = int(workers)
    d = 0
    while remaining > 1 and ndim > 0:
        f = _largest_factor_le(remaining, round(remaining ** (1.0 / (ndim - d))) if d < ndim - 1 else remaining)
        layout[d] = f
        remaining //= f
        d += 1
        if d >= ndim:
            layout[-1] *= remaining
            remaining = 1
    return tuple(layout)


def _largest_factor_le(n, target):
    target = max(1, min(n, target))
    for f in range(target, 0, -1):
        if n % f == 0:
            return f
    return 1


def run(problem, kernel, config, decomposition=None):
    """Execute the time loop; returns a RunReport.

    ``decomposition`` is a per-axis subdomain count; None derives it from
    config.workers.  Any decomposition yields bitwise identical results.
    """
    axes = list(problem.spatial_coords)
    ndim = len(axes)
    counts = config.cells(ndim)
    bounds = problem.region.domain
    if decomposition is None:
        decomposition = _square_layout(config.workers, ndim)
    decomposition = tuple(int(p) for p in decomposition)
    for d, p in enumerate(decomposition):
        if counts[d] % p != 0:
            raise GridRuntimeError(
                f"{p} subdomains do not divide {counts[d]} cells on axis {axes[d]}")
        if counts[d] // p < kernel.halo:
            raise GridRuntimeError(
                f"subdomains on axis {axes[d]} are narrower than the halo ({kernel.halo})")

    params = problem.parameter_values(config.scalar_overrides)
    dt = config.dt
    if dt is None:
        raise GridRuntimeError("no dt configured (set 'dt' in the parameter file)")
    dt = float(dt)
    if dt <= 0:
        raise GridRuntimeError("dt must be positive")

    subgrids = []
    for idx in np.ndindex(*decomposition):
        local = tuple(counts[d] // decomposition[d] for d in range(ndim))
        g = Grid(axes, local, tuple(counts), dict(bounds), kernel.halo,
                 offsets=tuple(idx[d] * local[d] for d in range(ndim)))
        g.part_index = idx
        g.allocate(kernel.fields)
        subgrids.append(g)

    min_dx = min(subgrids[0].dx)
    if dt > 0.5 * min_dx:
        warnings.warn(f"dt={dt} exceeds the CFL guidance 0.5*dx={0.5 * min_dx}")

    for g in subgrids:
        apply_initial_conditions(g, problem, params, config.seed)
    exchange_halos_decomposed(subgrids, decomposition)

    time_coord = problem.time_coord
    diss = [_dissipation_stencils(kernel, g) if kernel.has_dissipation else None
            for g in subgrids]

    outputs = []
    out_dir = config.output_dir
    final_env = expr.EvalEnvironment(bindings=params)

    def finalized(t):
        final_env.bindings[time_coord] = t
        return expr.evaluate(problem.finalization, final_env) != 0.0

    def dump(step):
        fields = {f: _gather(subgrids, decomposition, f) for f in kernel.fields}
        for f in kernel.fields:
            path = out_dir / f"{f}_{step}.vtk"
            write_vtk((axes, bounds, tuple(counts), {f: fields[f]}), path,
                      title=f"{f} step {step}")
            outputs.append(str(path))
        return fields

    step = 0
    last_dump = -1
    # t is recomputed as step*dt (not accumulated) so that e.g.
    # 200 * 0.005 reaches t_end = 1.0 exactly.
    while True:
        t = step * dt
        if finalized(t):
            break
        if step % config.output_interval == 0:
            dump(step)
            last_dump = step
        if step >= config.max_steps:
            raise GridRuntimeError(f"finalization never satisfied within {config.max_steps} steps")
        _advance(subgrids, decomposition, kernel, params, time_coord, diss, dt, t)
        step += 1
        for g in subgrids:
            for f in kernel.fields:
                if not np.all(np.isfinite(g.interior(g.data[f]))):
                    raise GridRuntimeError(f"non-finite values in field '{f}' at step {step}")

    if last_dump != step:
        fields = dump(step)
    else:
        fields = {f: _gather(subgrids, decomposition, f) for f in kernel.fields}
    ranges = {f: (float(fields[f].min()), float(fields[f].max())) for f in kernel.fields}
    report = RunReport(step, step * dt, ranges, outputs)
    report.final_fields = fields
    return report


def _advance(subgrids, layout, kernel, params, time_coord, diss, dt, t):
    """One SSP-RK3 step over all subgrids, stage-synchronous.

    Every RHS evaluation is preceded by a collective halo exchange (a
    barrier across subdomains), which keeps decomposed runs bitwise equal
    to the serial one.  Increment form of the Shu-Osher scheme.
    """
    def all_rhs(stage_t):
        exchange_halos_decomposed(subgrids, layout)
        return [evaluate_rhs(kernel, g, params, stage_t, time_coord, diss[i])
                for i, g in enumerate(subgrids)]

    u0 = [{f: g.data[f].copy() for f in kernel.fields} for g in subgrids]
    k1 = all_rhs(t)
    for i, g in enumerate(subgrids):
        for f in kernel.fields:
            g.data[f] = u0[i][f] + dt * k1[i][f]
    k2 = all_rhs(t + dt)
    for i, g in enumerate(subgrids):
        for f in kernel.fields:
            g.data[f] = u0[i][f] + dt * (k1[i][f] + k2[i][f]) / 4.0
    k3 = all_rhs(t + dt / 2.0)
    for i, g in enumerate(subgrids):
        for f in kernel.fields:
            g.data[f] = u0[i][f] + dt * (k1[i][f] + k2[i][f] + 4.0 * k3[i][f]) / 6.0


def _gather(subgrids, layout, fld):
    ndim = subgrids[0].ndim
    total = subgrids[0].global_counts
    out = np.zeros(total)
    for g in subgrids:
        sl = tuple(slice(g.offsets[d], g.offsets[d] + g.counts[d]) for d in range(ndim))
        out[sl] = g.interior(g.data[fld])
    return out
