"""Exact minimization of the scoring-system objective over a coefficient
lattice.

`solve` runs depth-first branch-and-bound over coefficients in order of
decreasing |label correlation|, with lattice values tried small-magnitude
first. The intercept is never branched on: at every full coefficient
assignment the best integer intercept is found by a sorted-threshold
sweep. Node lower bounds combine the exact penalty of the fixed prefix
with the count of examples that are misclassified under every completion
(interval arithmetic over the undecided coefficients, minimized over the
intercept range).

All objective arithmetic is scaled-integer: with D = lcm(N, denom(c0),
denom(c1)) an objective value v is stored as the integer v*D, so
incumbent comparisons and the lexicographic tie-break are exact. Loss
counting uses IEEE doubles only through exact integer-valued products, so
integer feature matrices are handled exactly; for real-valued features,
margins within rounding error of zero may count either way (documented
best effort).

`brute_force` is the testing oracle: plain exhaustive enumeration in
lexicographic order, sharing no search machinery with `solve`.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Mapping, Sequence

import numpy as np

from . import mip as _mip
from .model import (CoefficientLattice, Dataset, ScoringSystem, TrainConfig,
                    objective_exact)

BRUTE_FORCE_CAP = 10 ** 7


@dataclass(frozen=True)
class SolveReport:
    """Outcome of a solve: incumbent model plus optimality certificate."""

    incumbent: ScoringSystem
    objective_value: float
    best_lower_bound: float
    gap: float
    nodes_expanded: int
    elapsed: float
    status: str  # optimal | time_limit | infeasible_config
    incumbent_trace: tuple[tuple[int, float], ...] = ()


class _Context:
    """Shared exact-arithmetic state for one (data, lattice, cfg) triple."""

    def __init__(self, data: Dataset, lattice: CoefficientLattice, cfg: TrainConfig):
        if lattice.p != data.p:
            raise ValueError(f"lattice has {lattice.p} coordinates but data has {data.p} features")
        self.data = data
        self.lattice = lattice
        self.cfg = cfg
        n = data.n

        den0 = cfg.c0_exact.denominator
        den1 = cfg.c1_exact.denominator
        self.scale = math.lcm(n, den0, den1)
        self.w_loss = self.scale // n
        self.c0s = int(cfg.c0_exact * self.scale)
        self.c1s = int(cfg.c1_exact * self.scale)

        bound = lattice.bound
        worst = self.scale + (data.p + 1) * (self.c0s + self.c1s * bound)
        if worst > 2 ** 62:
            raise ValueError("penalties/lattice too large for exact integer arithmetic")

        if cfg.intercept == "none":
            self.intercept_grid = np.zeros(1, dtype=np.int64)
        else:
            self.intercept_grid = np.arange(-bound, bound + 1, dtype=np.int64)
        if cfg.intercept == "penalized":
            g = self.intercept_grid
            self.grid_pen = self.c0s * (g != 0).astype(np.int64) + self.c1s * np.abs(g)
        else:
            self.grid_pen = np.zeros(len(self.intercept_grid), dtype=np.int64)
        self.intercept_slack = 0 if cfg.intercept == "none" else bound

        self.integral = data.is_integral()
        dtype = np.int64 if self.integral else np.float64
        x = data.features.astype(dtype)
        y = data.labels.astype(dtype)
        self.yx = x * y[:, None]  # margin contribution of a unit coefficient
        self.pos = data.labels == 1
        self.neg = ~self.pos
        self.n_pos = int(np.count_nonzero(self.pos))
        self.dtype = dtype

    # -- exact objective pieces ------------------------------------------

    def value_penalty(self, v: int) -> int:
        return (self.c0s if v != 0 else 0) + self.c1s * abs(v)

    def intercept_penalty(self, b: int) -> int:
        if self.cfg.intercept != "penalized":
            return 0
        return (self.c0s if b != 0 else 0) + self.c1s * abs(b)

    def canonical_total(self, coefs: Sequence[int], b: int) -> int:
        """Scaled objective recomputed from scratch (the reporting path)."""
        margins = self.data.labels * (
            self.data.features @ np.asarray(coefs, dtype=np.float64) + b)
        errors = int(np.count_nonzero(margins <= 0))
        pen = sum(self.value_penalty(int(c)) for c in coefs) + self.intercept_penalty(b)
        return errors * self.w_loss + pen

    def errors_over_grid(self, margins: np.ndarray) -> np.ndarray:
        """Error counts for every intercept candidate, via two sorted
        threshold sweeps (positives err when b <= -m, negatives when b >= m)."""
        a = np.sort(-margins[self.pos])
        b = np.sort(margins[self.neg])
        grid = self.intercept_grid
        return ((self.n_pos - np.searchsorted(a, grid, side="left"))
                + np.searchsorted(b, grid, side="right")).astype(np.int64)

    def best_intercept(self, margins: np.ndarray, extra_pen: int = 0):
        """(scaled objective, intercept) with the smallest optimal intercept."""
        totals = self.errors_over_grid(margins) * self.w_loss + self.grid_pen
        k = int(np.argmin(totals))  # first minimum = smallest intercept
        return int(totals[k]) + extra_pen, int(self.intercept_grid[k])

    def model(self, coefs: Sequence[int], b: int, lattice_id: str = "") -> ScoringSystem:
        return ScoringSystem(tuple(int(c) for c in coefs), int(b),
                             self.data.feature_names, lattice_id)


def _validate_model(ctx: _Context, model: ScoringSystem, origin: str):
    if model.feature_names != ctx.data.feature_names:
        raise ValueError(f"{origin}: feature names do not match the dataset")
    if not ctx.lattice.contains(model.coefficients):
        raise ValueError(f"{origin}: coefficients are not lattice-feasible")
    if ctx.cfg.intercept == "none":
        if model.intercept != 0:
            raise ValueError(f"{origin}: intercept must be 0 under policy 'none'")
    elif abs(model.intercept) > ctx.lattice.bound:
        raise ValueError(f"{origin}: intercept exceeds the lattice bound")


def solve(data: Dataset, lattice: CoefficientLattice, cfg: TrainConfig,
          warm_start: ScoringSystem | None = None,
          lattice_id: str = "") -> SolveReport:
    """Minimize the objective over all lattice-feasible coefficient vectors.

    Returns status `optimal` with a zero gap when the search tree is
    exhausted; otherwise status `time_limit` with the best incumbent and a
    valid lower-bound certificate. Among equal-objective optima the
    lexicographically smallest vector (feature order, then intercept)
    wins. Results are independent of cfg.threads; wall-clock cutoffs are
    inherently timing-dependent, so bitwise reproducibility of truncated
    runs needs cfg.node_limit instead of time_limit.
    """
    start = time.monotonic()
    ctx = _Context(data, lattice, cfg)
    deadline = start + float(cfg.time_limit)
    node_limit = cfg.node_limit if cfg.node_limit is not None else None

    p = data.p
    corr = _label_correlations(data)
    order = np.argsort(-corr, kind="stable")  # original index at each branch position
    yx_cols = [np.ascontiguousarray(ctx.yx[:, j]) for j in order]
    value_order = [sorted(lattice.sets[j], key=lambda v: (abs(v), v)) for j in order]
    maxabs = np.array([max(abs(v) for v in lattice.sets[j]) for j in order], dtype=ctx.dtype)

    # undecided-score interval half-widths, by branch depth (suffix sums)
    absx = np.abs(np.stack([ctx.yx[:, j] for j in order], axis=1))
    suffix = np.zeros((p + 1, data.n), dtype=ctx.dtype)
    for k in range(p - 1, -1, -1):
        suffix[k] = suffix[k + 1] + maxabs[k] * absx[:, k]

    state = _Incumbent()
    trace: list[tuple[int, float]] = []
    nodes = 0

    def consider(coefs_orig, b):
        total = ctx.canonical_total(coefs_orig, b)
        key = tuple(int(c) for c in coefs_orig) + (int(b),)
        if state.total is None or total < state.total or (
                total == state.total and key < state.key):
            state.update(total, key, tuple(int(c) for c in coefs_orig), int(b))
            trace.append((nodes, float(Fraction(total, ctx.scale))))
            return True
        return False

    # initial incumbents: all-zero model, optional warm start, local search
    zero_total, zero_b = ctx.best_intercept(np.zeros(data.n, dtype=ctx.dtype))
    consider((0,) * p, zero_b)
    if warm_start is not None:
        _validate_model(ctx, warm_start, "warm start")
        consider(warm_start.coefficients, warm_start.intercept)
    heur = local_search_incumbent(data, lattice, cfg, seed=cfg.seed)
    consider(heur.coefficients, heur.intercept)

    ib = ctx.intercept_slack
    w_loss = ctx.w_loss
    path = [0] * p
    frontier_lb: int | None = None
    timed_out = False

    def out_of_budget() -> bool:
        if node_limit is not None and nodes >= node_limit:
            return True
        return time.monotonic() > deadline

    def batch_last(m, pen_prefix):
        """Enumerate the last branch position jointly with the intercept."""
        nonlocal nodes, timed_out, frontier_lb
        col = yx_cols[p - 1]
        lb_here = pen_prefix  # loss bound not tracked per-value; prefix pen is sound
        for v in value_order[p - 1]:
            pv = pen_prefix + ctx.value_penalty(v)
            if pv > state.total:
                break  # values are |v|-ascending, penalties only grow
            if out_of_budget():
                timed_out = True
                frontier_lb = lb_here if frontier_lb is None else min(frontier_lb, lb_here)
                return
            nodes += 1
            mv = m + v * col
            cheap = int(np.count_nonzero(mv <= -ib))
            if pv + cheap * w_loss > state.total:
                continue
            total, b = ctx.best_intercept(mv, extra_pen=pv)
            if total <= state.total:
                path[p - 1] = v
                coefs = [0] * p
                for t in range(p):
                    coefs[order[t]] = path[t]
                consider(coefs, b)

    if p == 1:
        batch_last(np.zeros(data.n, dtype=ctx.dtype), 0)
    else:
        root = _Frame(depth=0, margins=np.zeros(data.n, dtype=ctx.dtype), pen=0, lb=0,
                      values=value_order[0])
        stack = [root]
        while stack:
            if out_of_budget():
                timed_out = True
                break
            frame = stack[-1]
            if frame.idx >= len(frame.values):
                stack.pop()
                continue
            v = frame.values[frame.idx]
            frame.idx += 1
            child_pen = frame.pen + ctx.value_penalty(v)
            if child_pen > state.total:
                frame.idx = len(frame.values)  # larger |v| only costs more
                continue
            nodes += 1
            child_m = frame.margins + v * yx_cols[frame.depth]
            reach = child_m + suffix[frame.depth + 1]
            certain = int(np.count_nonzero(reach <= -ib))
            child_lb = child_pen + certain * w_loss
            if child_lb > state.total:
                continue
            if ib:
                sweep_min = int(ctx.errors_over_grid(reach).min())
                child_lb = max(child_lb, child_pen + sweep_min * w_loss)
                if child_lb > state.total:
                    continue
            path[frame.depth] = v
            if frame.depth == p - 2:
                batch_last(child_m, child_pen)
                if timed_out:
                    break
            else:
                stack.append(_Frame(depth=frame.depth + 1, margins=child_m,
                                    pen=child_pen, lb=child_lb,
                                    values=value_order[frame.depth + 1]))
        if timed_out:
            for frame in stack:
                if frame.idx < len(frame.values):
                    frontier_lb = frame.lb if frontier_lb is None else min(frontier_lb, frame.lb)

    inc_total = state.total
    assert inc_total is not None
    if timed_out and frontier_lb is not None:
        best_lb = min(inc_total, frontier_lb)
        status = "time_limit"
    elif timed_out:
        best_lb = inc_total
        status = "time_limit"
    else:
        best_lb = inc_total
        status = "optimal"

    incumbent = ctx.model(state.coefs, state.intercept, lattice_id)
    obj = float(Fraction(inc_total, ctx.scale))
    lb = float(Fraction(best_lb, ctx.scale))
    return SolveReport(incumbent=incumbent, objective_value=obj, best_lower_bound=lb,
                       gap=float(Fraction(inc_total - best_lb, ctx.scale)),
                       nodes_expanded=nodes, elapsed=time.monotonic() - start,
                       status=status, incumbent_trace=tuple(trace))


class _Incumbent:
    __slots__ = ("total", "key", "coefs", "intercept")

    def __init__(self):
        self.total = None
        self.key = None
        self.coefs = None
        self.intercept = 0

    def update(self, total, key, coefs, intercept):
        self.total = total
        self.key = key
        self.coefs = coefs
        self.intercept = intercept


class _Frame:
    __slots__ = ("depth", "margins", "pen", "lb", "values", "idx")

    def __init__(self, depth, margins, pen, lb, values):
        self.depth = depth
        self.margins = margins
        self.pen = pen
        self.lb = lb
        self.values = values
        self.idx = 0


def _label_correlations(data: Dataset) -> np.ndarray:
    x = data.features
    y = data.labels.astype(np.float64)
    xc = x - x.mean(axis=0)
    yc = y - y.mean()
    sx = np.sqrt((xc ** 2).sum(axis=0))
    sy = float(np.sqrt((yc ** 2).sum()))
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = np.abs(xc.T @ yc) / (sx * sy)
    corr[~np.isfinite(corr)] = 0.0
    return corr


def brute_force(data: Dataset, lattice: CoefficientLattice, cfg: TrainConfig,
                cap: int = BRUTE_FORCE_CAP, lattice_id: str = "") -> SolveReport:
    """Exhaustive-enumeration oracle. Enumerates every coefficient vector in
    lexicographic order (and every intercept, ascending) and keeps the first
    strict improvement, which realizes the same tie-break rule as `solve`
    without sharing any of its search machinery."""
    start = time.monotonic()
    if lattice.p != data.p:
        raise ValueError(f"lattice has {lattice.p} coordinates but data has {data.p} features")
    n, p = data.n, data.p
    bound = lattice.bound
    if cfg.intercept == "none":
        grid = np.zeros(1, dtype=np.int64)
    else:
        grid = np.arange(-bound, bound + 1, dtype=np.int64)

    size = len(grid)
    for s in lattice.sets:
        size *= len(s)
        if size > cap:
            raise ValueError(f"enumeration size {size} exceeds the cap {cap}")

    den0 = cfg.c0_exact.denominator
    den1 = cfg.c1_exact.denominator
    scale = math.lcm(n, den0, den1)
    w_loss = scale // n
    c0s = int(cfg.c0_exact * scale)
    c1s = int(cfg.c1_exact * scale)
    if cfg.intercept == "penalized":
        grid_pen = c0s * (grid != 0).astype(np.int64) + c1s * np.abs(grid)
    else:
        grid_pen = np.zeros(len(grid), dtype=np.int64)

    x = data.features
    y = data.labels.astype(np.float64)
    pos_mask = data.labels == 1
    neg_mask = ~pos_mask

    best_total = None
    best_coefs = None
    best_b = 0
    count = 0

    # keep the n x chunk x grid error tensor around a few MB
    chunk_size = max(1, min(4096, 2_000_000 // max(1, n * len(grid))))
    combos = itertools.product(*lattice.sets)
    while True:
        chunk = list(itertools.islice(combos, chunk_size))
        if not chunk:
            break
        count += len(chunk)
        c = np.asarray(chunk, dtype=np.float64)
        margins = y[:, None] * (x @ c.T)  # n x C
        shifted_pos = margins[pos_mask][:, :, None] + grid[None, None, :]
        shifted_neg = margins[neg_mask][:, :, None] - grid[None, None, :]
        errors = (np.count_nonzero(shifted_pos <= 0, axis=0)
                  + np.count_nonzero(shifted_neg <= 0, axis=0))  # C x nI
        ci = np.asarray(chunk, dtype=np.int64)
        pen = c0s * np.count_nonzero(ci, axis=1) + c1s * np.abs(ci).sum(axis=1)
        totals = errors * w_loss + pen[:, None] + grid_pen[None, :]
        per_combo = totals.min(axis=1)
        k = int(np.argmin(per_combo))  # first minimum; product order is lexicographic
        if best_total is None or int(per_combo[k]) < best_total:
            gi = int(np.argmin(totals[k]))
            best_total = int(totals[k, gi])
            best_coefs = tuple(int(v) for v in chunk[k])
            best_b = int(grid[gi])

    assert best_total is not None and best_coefs is not None
    model = ScoringSystem(best_coefs, best_b, data.feature_names, lattice_id)
    obj = float(Fraction(best_total, scale))
    return SolveReport(incumbent=model, objective_value=obj, best_lower_bound=obj,
                       gap=0.0, nodes_expanded=count, elapsed=time.monotonic() - start,
                       status="optimal")


def local_search_incumbent(data: Dataset, lattice: CoefficientLattice, cfg: TrainConfig,
                           seed: int | None = None, restarts: int = 3) -> ScoringSystem:
    """Feasible warm-start model from greedy single-coordinate descent.

    Starts from a rounded least-squares direction (plus the all-zero model
    and a few seeded random sparse restarts) and repeatedly applies the
    best objective-decreasing single-coordinate move, re-optimizing the
    intercept after every move. Each move strictly decreases the exact
    objective, so the descent terminates.
    """
    ctx = _Context(data, lattice, cfg)
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    p = data.p

    starts: list[list[int]] = []
    starts.append(_rounded_least_squares(data, lattice))
    starts.append([0] * p)
    for _ in range(restarts):
        cand = [0] * p
        k = int(rng.integers(1, min(3, p) + 1))
        coords = rng.choice(p, size=k, replace=False)
        for j in coords:
            values = lattice.sets[int(j)]
            cand[int(j)] = int(values[int(rng.integers(0, len(values)))])
        starts.append(cand)

    best = None  # (total, lexkey, coefs, b)
    for start in starts:
        coefs = list(start)
        margins = ctx.yx @ np.asarray(coefs, dtype=ctx.dtype)
        pen = sum(ctx.value_penalty(v) for v in coefs)
        total, b = ctx.best_intercept(margins, extra_pen=pen)
        improved = True
        while improved:
            improved = False
            move = None
            for t in range(p):
                col = ctx.yx[:, t]
                for v in lattice.sets[t]:
                    if v == coefs[t]:
                        continue
                    cand_pen = pen - ctx.value_penalty(coefs[t]) + ctx.value_penalty(v)
                    if cand_pen >= total:
                        continue  # loss is nonnegative: cannot strictly improve
                    cand_m = margins + (v - coefs[t]) * col
                    cand_total, cand_b = ctx.best_intercept(cand_m, extra_pen=cand_pen)
                    if cand_total < total and (move is None or cand_total < move[0]):
                        move = (cand_total, t, v, cand_b)
            if move is not None:
                cand_total, t, v, cand_b = move
                margins = margins + (v - coefs[t]) * ctx.yx[:, t]
                pen = pen - ctx.value_penalty(coefs[t]) + ctx.value_penalty(v)
                coefs[t] = v
                total, b = cand_total, cand_b
                improved = True
        key = tuple(coefs) + (b,)
        if best is None or (total, key) < (best[0], best[1]):
            best = (total, key, list(coefs), b)

    assert best is not None
    return ctx.model(best[2], best[3])


def _rounded_least_squares(data: Dataset, lattice: CoefficientLattice) -> list[int]:
    x = np.column_stack([data.features, np.ones(data.n)])
    w, *_ = np.linalg.lstsq(x, data.labels.astype(np.float64), rcond=None)
    direction = w[:-1]
    top = float(np.max(np.abs(direction)))
    if not np.isfinite(top) or top == 0.0:
        return [0] * data.p
    scale = lattice.bound / top
    rounded = []
    for j in range(data.p):
        target = direction[j] * scale
        values = lattice.sets[j]
        rounded.append(min(values, key=lambda v: (abs(v - target), v)))
    return rounded


def scoring_system_from_values(data: Dataset, lattice: CoefficientLattice, cfg: TrainConfig,
                               values: Mapping[str, float],
                               lattice_id: str = "") -> ScoringSystem:
    """Adopt an external solver's value map (w1..wP, optional w0) as a
    lattice-feasible model, for use as a warm start."""
    coefs = []
    for j in range(data.p):
        name = _mip.var_coef(j)
        if name not in values:
            raise ValueError(f"solution is missing {name}")
        coefs.append(_as_int(values[name], name))
    b = _as_int(values.get(_mip.VAR_INTERCEPT, 0), _mip.VAR_INTERCEPT)
    model = ScoringSystem(tuple(coefs), b, data.feature_names, lattice_id)
    ctx = _Context(data, lattice, cfg)
    _validate_model(ctx, model, "external solution")
    return model


def _as_int(value: float, name: str) -> int:
    r = round(float(value))
    if abs(float(value) - r) > 1e-6:
        raise ValueError(f"{name} = {value!r} is not integral")
    return int(r)


SolverFn = Callable[[Dataset, CoefficientLattice, TrainConfig], SolveReport]
