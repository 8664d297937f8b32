"""Discrete Plateau minimizer over mod-2 cubical chains.

A spanning problem fixes a grid complex, a boundary subcomplex B, and a
list of mod-2 (m-1)-cycles supported in B.  A chain of m-cells spans when
every generator becomes a boundary inside B union the chain; the solver
minimizes the anisotropic cell energy by simulated-annealing moves that add
boundaries of (m+1)-cells, re-checking spanning at every acceptance.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .cubical import DyadicCube
from .grassmann import Plane
from .varifold import DiscreteVarifold, density_ratio, sample_spacing, unit_ball_volume

logger = logging.getLogger("gmtkit.solver")

__all__ = [
    "GridComplex",
    "Chain2",
    "SpanningProblem",
    "spans",
    "initial_chain",
    "minimize",
    "MinimizeResult",
    "exhaustive_oracle",
    "OracleBudgetError",
    "InfeasibleError",
    "audit_minimizer",
    "chain_to_varifold",
    "gf2_solve",
    "gf2_nullspace",
]


# ---------------------------------------------------------------------------
# GF(2) linear algebra


def _gf2_rref(a):
    """Row-reduce a copy of a over GF(2); returns (rref, pivot_columns)."""
    a = a.copy() % 2
    rows, cols = a.shape
    pivots = []
    r = 0
    for c in range(cols):
        if r >= rows:
            break
        hit = np.nonzero(a[r:, c])[0]
        if len(hit) == 0:
            continue
        pr = r + hit[0]
        if pr != r:
            a[[r, pr]] = a[[pr, r]]
        mask = a[:, c].astype(bool)
        mask[r] = False
        a[mask] ^= a[r]
        pivots.append(c)
        r += 1
    return a, pivots


def gf2_solve(a, b):
    """One solution x of a x = b over GF(2), or None when inconsistent."""
    a = np.asarray(a, dtype=np.uint8)
    b = np.asarray(b, dtype=np.uint8).reshape(-1, 1)
    aug, pivots = _gf2_rref(np.hstack([a, b]))
    cols = a.shape[1]
    if cols in pivots:
        return None
    x = np.zeros(cols, dtype=np.uint8)
    for r, c in enumerate(pivots):
        x[c] = aug[r, cols]
    return x


def gf2_solvable(a, b):
    return gf2_solve(a, b) is not None


def gf2_nullspace(a):
    """Basis of the kernel of a over GF(2), as columns of the result."""
    a = np.asarray(a, dtype=np.uint8)
    rref, pivots = _gf2_rref(a)
    cols = a.shape[1]
    free = [c for c in range(cols) if c not in pivots]
    basis = np.zeros((cols, len(free)), dtype=np.uint8)
    for j, fc in enumerate(free):
        basis[fc, j] = 1
        for r, pc in enumerate(pivots):
            basis[pc, j] = rref[r, fc]
    return basis


# ---------------------------------------------------------------------------
# the grid complex


class GridComplex:
    """The full cubical complex of a uniform grid of cells.

    ``shape`` counts top cells per axis; cells live at refinement ``level``
    starting at the integer ``origin`` (units of the cell side).
    """

    def __init__(self, n, shape, level, origin=None):
        self.n = int(n)
        self.shape = tuple(int(s) for s in shape)
        self.level = int(level)
        self.origin = tuple(0 for _ in range(n)) if origin is None else tuple(origin)
        if len(self.shape) != n or len(self.origin) != n:
            raise ValueError("shape/origin must have length n")
        self.cells = {}
        self.index = {}
        for k in range(n + 1):
            lst = []
            for axes in itertools.combinations(range(n), k):
                ranges = [
                    range(self.origin[j], self.origin[j] + self.shape[j] + (0 if j in axes else 1))
                    for j in range(n)
                ]
                for corner in itertools.product(*ranges):
                    lst.append(DyadicCube(self.level, corner, axes, n))
            lst.sort()
            self.cells[k] = lst
            self.index.update({cube: (k, i) for i, cube in enumerate(lst)})
        self._boundary = {}

    @property
    def side(self):
        return 2.0 ** (-self.level)

    def count(self, k):
        return len(self.cells[k])

    def boundary_matrix(self, k):
        """The mod-2 boundary operator as a (count(k-1), count(k)) matrix."""
        if k not in self._boundary:
            if not 1 <= k <= self.n:
                raise ValueError("boundary defined for 1 <= k <= n")
            mat = np.zeros((self.count(k - 1), self.count(k)), dtype=np.uint8)
            for j, cube in enumerate(self.cells[k]):
                for f in cube.facets():
                    mat[self.index[f][1], j] ^= 1
            self._boundary[k] = mat
        return self._boundary[k]

    def cell_id(self, cube):
        k, i = self.index[cube]
        return i

    def cube_dict_id(self, d, k):
        return self.index[DyadicCube.from_dict(d)][1]


class Chain2:
    """A mod-2 chain over the m-cells of a grid complex (a cell subset)."""

    def __init__(self, complex_: GridComplex, m, bits=None):
        self.complex = complex_
        self.m = int(m)
        count = complex_.count(m)
        self.bits = (
            np.zeros(count, dtype=bool) if bits is None else np.asarray(bits, dtype=bool).copy()
        )
        if len(self.bits) != count:
            raise ValueError("bit vector length mismatch")

    def copy(self):
        return Chain2(self.complex, self.m, self.bits)

    def cells(self):
        return [c for c, b in zip(self.complex.cells[self.m], self.bits) if b]

    def count(self):
        return int(self.bits.sum())

    def boundary(self):
        mat = self.complex.boundary_matrix(self.m)
        return (mat @ self.bits.astype(np.uint8)) % 2

    def value(self, weights):
        return float(weights[self.bits].sum())

    def __xor__(self, other_bits):
        return Chain2(self.complex, self.m, self.bits ^ other_bits)

    def to_dict(self):
        return {
            "m": self.m,
            "level": self.complex.level,
            "cells": [c.to_dict() for c in self.cells()],
        }


@dataclass
class SpanningProblem:
    complex: GridComplex
    m: int
    boundary_cells: list  # (m-1)-cubes forming B
    generators: list  # list of bit vectors over the (m-1)-cells
    integrand: object
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.m < 1 or self.m > self.complex.n:
            raise ValueError("m out of range")
        bmat = self.complex.boundary_matrix(self.m - 1) if self.m >= 2 else None
        bset = np.zeros(self.complex.count(self.m - 1), dtype=bool)
        for c in self.boundary_cells:
            bset[self.complex.index[c][1]] = True
        self.boundary_mask = bset
        for z in self.generators:
            z = np.asarray(z, dtype=np.uint8)
            if np.any(z.astype(bool) & ~bset):
                raise ValueError("generator not supported in the boundary set")
            if bmat is not None and np.any((bmat @ z) % 2):
                raise ValueError("generator is not a cycle")

    def cell_weights(self):
        """Per-m-cell energy F(centre, plane) * side^m."""
        cells = self.complex.cells[self.m]
        pts = np.array([c.center() for c in cells])
        out = np.zeros(len(cells))
        side = self.complex.side
        for axes in itertools.combinations(range(self.complex.n), self.m):
            mask = np.array([c.axes == axes for c in cells])
            if not np.any(mask):
                continue
            plane = Plane.axis(self.complex.n, axes)
            frames = np.broadcast_to(plane.frame, (int(mask.sum()),) + plane.frame.shape)
            out[mask] = self.integrand.evaluate(pts[mask], frames) * side**self.m
        return out


class InfeasibleError(RuntimeError):
    pass


class OracleBudgetError(RuntimeError):
    pass


def spans(chain: Chain2, problem: SpanningProblem) -> bool:
    """Whether every generator bounds inside B union the chain's support.

    Solved by Gaussian elimination over GF(2) on the boundary-operator
    columns of the chain's support cells (plus any m-cells of B).
    """
    mat = problem.complex.boundary_matrix(problem.m)
    cols = np.nonzero(chain.bits)[0]
    sub = mat[:, cols] if len(cols) else np.zeros((mat.shape[0], 0), dtype=np.uint8)
    for z in problem.generators:
        if not gf2_solvable(sub, np.asarray(z, dtype=np.uint8)):
            return False
    return True


def initial_chain(problem: SpanningProblem) -> Chain2:
    """Union of per-generator elimination solutions of the boundary system."""
    mat = problem.complex.boundary_matrix(problem.m)
    bits = np.zeros(problem.complex.count(problem.m), dtype=bool)
    for z in problem.generators:
        x = gf2_solve(mat, np.asarray(z, dtype=np.uint8))
        if x is None:
            raise InfeasibleError("a generator is not a boundary in the full grid")
        bits |= x.astype(bool)
    return Chain2(problem.complex, problem.m, bits)


@dataclass
class MinimizeResult:
    chain: Chain2
    value: float
    trace: list
    restarts: int
    initial_value: float


def _move_columns(problem):
    """Per-(m+1)-cell flip sets: indices of the m-cells in its boundary."""
    mat = problem.complex.boundary_matrix(problem.m + 1)
    return [np.nonzero(mat[:, j])[0] for j in range(mat.shape[1])]


def _chain_key(bits):
    return bits.tobytes()


def minimize(problem: SpanningProblem, seed=0, restarts=3, steps=4000, t0=None,
             cooling=0.995, check_every_accept=True):
    """Simulated-annealing descent over spanning chains.

    Moves add the boundary of a single (m+1)-cell; every would-be acceptance
    is re-checked for spanning and rejected if it breaks it.  Geometric
    cooling, deterministic for a fixed seed; restarts keep the best result
    by (value, cell count, lexicographic bits).
    """
    if problem.m + 1 > problem.complex.n:
        raise ValueError("no (m+1)-cells to move across")
    weights = problem.cell_weights()
    if not problem.generators:
        empty = Chain2(problem.complex, problem.m)
        return MinimizeResult(empty, 0.0, [], restarts, 0.0)
    start = initial_chain(problem)
    if not spans(start, problem):
        raise InfeasibleError("initial chain does not span")
    moves = _move_columns(problem)
    if t0 is None:
        t0 = float(weights.max()) * 2.0
    best = None
    init_val = start.value(weights)
    full_trace = []
    for r in range(restarts):
        rng = np.random.default_rng(seed * 1000 + r)
        bits = start.bits.copy()
        value = start.value(weights)
        temp = t0
        trace = []
        for step in range(steps):
            j = int(rng.integers(len(moves)))
            col = moves[j]
            delta = float(np.sum(weights[col] * (1.0 - 2.0 * bits[col])))
            accept = delta < -1e-15
            if not accept and delta <= 1e-15:
                # value tie: prefer fewer cells, then lexicographically smaller
                flips = len(col) - 2 * int(bits[col].sum())
                if flips < 0:
                    accept = True
                elif flips == 0:
                    cand = bits.copy()
                    cand[col] ^= True
                    accept = _chain_key(cand) < _chain_key(bits)
            if not accept and temp > 1e-12:
                accept = rng.random() < math.exp(-delta / temp)
            if accept:
                cand_bits = bits.copy()
                cand_bits[col] ^= True
                if check_every_accept and not spans(Chain2(problem.complex, problem.m, cand_bits), problem):
                    temp *= cooling
                    continue
                bits = cand_bits
                value += delta
                trace.append({"restart": r, "step": step, "cell": j, "delta": delta, "value": value})
            temp *= cooling
        # final greedy pass: first-improvement descent
        improved = True
        while improved:
            improved = False
            for j, col in enumerate(moves):
                delta = float(np.sum(weights[col] * (1.0 - 2.0 * bits[col])))
                if delta < -1e-12:
                    cand_bits = bits.copy()
                    cand_bits[col] ^= True
                    if spans(Chain2(problem.complex, problem.m, cand_bits), problem):
                        bits = cand_bits
                        value += delta
                        trace.append({"restart": r, "step": "greedy", "cell": j, "delta": delta, "value": value})
                        improved = True
            if improved:
                continue
        chain = Chain2(problem.complex, problem.m, bits)
        key = (value, chain.count(), _chain_key(bits))
        if best is None or key < best[0]:
            best = (key, chain, trace)
        full_trace.extend(trace)
    chain = best[1]
    final_value = chain.value(weights)
    logger.info("minimize: value %.6g with %d cells (initial %.6g)", final_value, chain.count(), init_val)
    return MinimizeResult(chain, final_value, full_trace, restarts, init_val)


def _projection_lower_bound(problem: SpanningProblem, weights):
    """Certified lower bound: project onto each m-subset of axes; the unique
    filling of the projected generator forces one cell per stack, each
    costing at least the cheapest cell of its stack."""
    cx = problem.complex
    n, m = cx.n, problem.m
    best = 0.0
    m_cells = cx.cells[m]
    for axes in itertools.combinations(range(n), m):
        proj_shape = tuple(cx.shape[a] for a in axes)
        proj = GridComplex(m, proj_shape, cx.level, origin=tuple(cx.origin[a] for a in axes))
        pmat = proj.boundary_matrix(m)
        for z in problem.generators:
            pz = np.zeros(proj.count(m - 1), dtype=np.uint8)
            for i in np.nonzero(np.asarray(z, dtype=np.uint8))[0]:
                cube = cx.cells[m - 1][i]
                if not set(cube.axes) <= set(axes):
                    continue
                pcube = DyadicCube(
                    cx.level,
                    tuple(cube.corner[a] for a in axes),
                    tuple(axes.index(a) for a in cube.axes),
                    m,
                )
                pz[proj.index[pcube][1]] ^= 1
            x = gf2_solve(pmat, pz)
            if x is None or not np.any(x):
                continue
            forced = np.nonzero(x)[0]
            total = 0.0
            for fi in forced:
                pcell = proj.cells[m][fi]
                stack_min = math.inf
                for i, cell in enumerate(m_cells):
                    if cell.axes == axes and tuple(cell.corner[a] for a in axes) == pcell.corner:
                        stack_min = min(stack_min, weights[i])
                if math.isfinite(stack_min):
                    total += stack_min
            best = max(best, total)
    return best


def exhaustive_oracle(problem: SpanningProblem, budget_dim=18, node_budget=500_000):
    """Independent global minimum over the reachable chain coset.

    Enumerates initial + ker(boundary) when the kernel dimension fits the
    budget; otherwise tries a projection certificate (descent incumbent
    matching a certified lower bound) and falls back to branch and bound
    over the (m+1)-cell generators, erroring out at the node budget.
    """
    weights = problem.cell_weights()
    if not problem.generators:
        return Chain2(problem.complex, problem.m), 0.0
    start = initial_chain(problem)
    mat = problem.complex.boundary_matrix(problem.m)
    kernel = gf2_nullspace(mat)
    dim = kernel.shape[1]
    single = len(problem.generators) == 1
    if dim <= budget_dim:
        best = None
        for combo in range(2**dim):
            bits = start.bits.copy()
            for j in range(dim):
                if combo >> j & 1:
                    bits ^= kernel[:, j].astype(bool)
            chain = Chain2(problem.complex, problem.m, bits)
            if not single and not spans(chain, problem):
                continue
            val = chain.value(weights)
            key = (val, chain.count(), _chain_key(bits))
            if best is None or key < best[0]:
                best = (key, chain)
        return best[1], best[0][0]
    # descent incumbent
    moves = _move_columns(problem)
    bits = start.bits.copy()
    value = start.value(weights)
    improved = True
    while improved:
        improved = False
        for col in moves:
            delta = float(np.sum(weights[col] * (1.0 - 2.0 * bits[col])))
            if delta < -1e-12:
                bits[col] ^= True
                value += delta
                improved = True
    lb = _projection_lower_bound(problem, weights)
    if single and value <= lb + 1e-9:
        return Chain2(problem.complex, problem.m, bits), value
    # branch and bound over (m+1)-cell flips with a frozen-cell bound
    n_moves = len(moves)
    touching = [[] for _ in range(problem.complex.count(problem.m))]
    for j, col in enumerate(moves):
        for c in col:
            touching[c].append(j)
    best_bits, best_val = bits.copy(), value
    nodes = 0

    def frozen_bound(assigned_mask, cur_bits, depth):
        val = 0.0
        for c in np.nonzero(cur_bits)[0]:
            if all(j < depth for j in touching[c]):
                val += weights[c]
        return val

    def dfs(depth, cur_bits, cur_val):
        nonlocal best_bits, best_val, nodes
        nodes += 1
        if nodes > node_budget:
            raise OracleBudgetError(
                f"oracle budget exceeded: kernel dim {dim}, {nodes} nodes"
            )
        if depth == n_moves:
            if cur_val < best_val - 1e-12:
                chain = Chain2(problem.complex, problem.m, cur_bits)
                if single or spans(chain, problem):
                    best_bits, best_val = cur_bits.copy(), cur_val
            return
        if frozen_bound(None, cur_bits, depth) >= best_val - 1e-12:
            return
        col = moves[depth]
        delta = float(np.sum(weights[col] * (1.0 - 2.0 * cur_bits[col])))
        order = (0, 1) if delta >= 0 else (1, 0)
        for pick in order:
            if pick == 0:
                dfs(depth + 1, cur_bits, cur_val)
            else:
                nb = cur_bits.copy()
                nb[col] ^= True
                dfs(depth + 1, nb, cur_val + delta)

    dfs(0, bits, value)
    return Chain2(problem.complex, problem.m, best_bits), best_val


# ---------------------------------------------------------------------------
# auditing


def chain_to_varifold(chain: Chain2, subdivision=4):
    """Sample the chain's cells on a per-cell subgrid with side^m weights."""
    cells = chain.cells()
    if not cells:
        n = chain.complex.n
        return DiscreteVarifold(np.zeros((0, n)), np.zeros((0, n, chain.m)), np.zeros(0))
    n = chain.complex.n
    side = chain.complex.side
    sub = subdivision
    parts = []
    for axes in itertools.combinations(range(n), chain.m):
        group = [c for c in cells if c.axes == axes]
        if not group:
            continue
        plane = Plane.axis(n, axes)
        ticks = (np.arange(sub) + 0.5) / sub * side
        mesh = np.stack(np.meshgrid(*([ticks] * chain.m), indexing="ij"), axis=-1).reshape(-1, chain.m)
        pts = []
        for c in group:
            lo, _ = c.bounds()
            p = np.broadcast_to(lo, (len(mesh), n)).copy()
            p[:, list(axes)] += mesh
            pts.append(p)
        pts = np.vstack(pts)
        w = np.full(len(pts), (side / sub) ** chain.m)
        parts.append(DiscreteVarifold.flat(pts, plane, w))
    return DiscreteVarifold.concat(parts)


def _local_plane_fit(points, center, radius, m):
    sel = np.linalg.norm(points - center, axis=1) <= radius
    pts = points[sel]
    if len(pts) < m + 1:
        return None
    centred = pts - pts.mean(axis=0)
    _, _, vt = np.linalg.svd(centred, full_matrices=False)
    return Plane(vt[:m].T)


def audit_minimizer(chain: Chain2, integrand, radii=None, subdivision=8,
                    ratio_bounds=(0.9, 1.1), fit_radius=None, audit_points=None):
    """Density-ratio and tilt audit of a solution chain.

    Converts the chain to a discrete varifold, computes density ratios at
    support points over a radius ladder, classifies points near the chain's
    mod-2 boundary as boundary rather than violations, and reports the
    tilt-excess statistic against local plane fits.
    """
    if chain.count() == 0:
        raise ValueError("audit needs a nonempty chain")
    m = chain.m
    v = chain_to_varifold(chain, subdivision=subdivision)
    side = chain.complex.side
    if radii is None:
        radii = [side * f for f in (1.2, 1.6, 2.0)]
    if fit_radius is None:
        fit_radius = side * 1.5
    omega = unit_ball_volume(m)
    lo, hi = ratio_bounds[0] * omega, ratio_bounds[1] * omega
    # boundary cells of the chain (odd incidence)
    bvec = chain.boundary()
    boundary_cells = [chain.complex.cells[m - 1][i] for i in np.nonzero(bvec)[0]]
    bpts = np.array([c.center() for c in boundary_cells]) if boundary_cells else np.zeros((0, chain.complex.n))
    if audit_points is None:
        audit_points = [c.center() for c in chain.cells()]
    spacing = sample_spacing(v.points)
    entries = []
    tilt_total = 0.0
    tilt_weight = 0.0
    for x in audit_points:
        x = np.asarray(x, dtype=float)
        ratios = density_ratio(v, x, radii, spacing=spacing)
        near_boundary = bool(len(bpts) and np.min(np.linalg.norm(bpts - x, axis=1)) <= max(radii))
        flags = []
        for rec in ratios:
            if not rec.reliable:
                flags.append("unreliable")
            elif near_boundary:
                flags.append("boundary")
            elif lo <= rec.ratio <= hi:
                flags.append("ok")
            else:
                flags.append("violation")
        fit = _local_plane_fit(v.points, x, fit_radius, m)
        tilt = None
        if fit is not None:
            sel = np.linalg.norm(v.points - x, axis=1) <= fit_radius
            frames = v.frames[sel]
            pf = fit.projector()
            pt = np.einsum("nij,nkj->nik", frames, frames)
            eig = np.linalg.eigvalsh(pt - pf)
            d2 = np.maximum(eig[:, -1], -eig[:, 0]) ** 2
            ws = v.weights[sel]
            tilt = float(np.sum(ws * d2))
            tilt_total += tilt
            tilt_weight += float(ws.sum())
        entries.append(
            {
                "point": x.tolist(),
                "ratios": [(rec.radius, rec.ratio, flag) for rec, flag in zip(ratios, flags)],
                "boundary": near_boundary,
                "tilt": tilt,
            }
        )
    all_ratios = [
        rec[1] for e in entries for rec in e["ratios"] if rec[2] in ("ok", "violation")
    ]
    report = {
        "m": m,
        "omega_m": omega,
        "radii": list(map(float, radii)),
        "ratio_bounds": [lo, hi],
        "min_ratio": min(all_ratios) if all_ratios else None,
        "max_ratio": max(all_ratios) if all_ratios else None,
        "violations": sum(1 for e in entries for rec in e["ratios"] if rec[2] == "violation"),
        "boundary_points": sum(1 for e in entries if e["boundary"]),
        "tilt_excess": tilt_total / tilt_weight if tilt_weight else None,
        "entries": entries,
        "subdivision": subdivision,
    }
    return report
