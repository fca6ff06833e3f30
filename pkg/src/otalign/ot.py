"""Discrete optimal transport: log-domain Sinkhorn and an exact LP oracle.

``sinkhorn`` is the production solver (entropy-regularized, log-domain from
the start, rounded to a feasible plan before the distance is reported).
``exact_ot`` solves the unregularized transportation LP with the classic
transportation simplex (north-west-corner start, MODI pricing, Bland's
anti-cycling rule) and exists to validate the regularized solver.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import DataError, NumericalError

MARGINAL_ATOL = 1e-6
EXACT_SIZE_LIMIT = 10_000

DEFAULT_EPSILON = 0.01
DEFAULT_MAX_ITERS = 1000
DEFAULT_TOLERANCE = 1e-6


@dataclass
class TransportProblem:
    cost: np.ndarray  # (N, M), finite, >= 0
    row_marginal: np.ndarray  # (N,), simplex
    col_marginal: np.ndarray  # (M,), simplex

    def __post_init__(self):
        self.cost = np.asarray(self.cost, dtype=np.float64)
        self.row_marginal = np.asarray(self.row_marginal, dtype=np.float64)
        self.col_marginal = np.asarray(self.col_marginal, dtype=np.float64)

    def validate(self) -> None:
        if self.cost.ndim != 2:
            raise DataError(f"cost must be 2-D, got shape {self.cost.shape}")
        if not np.isfinite(self.cost).all():
            raise DataError("cost matrix has non-finite entries")
        if (self.cost < 0).any():
            raise DataError("cost matrix has negative entries")
        n, m = self.cost.shape
        if self.row_marginal.shape != (n,) or self.col_marginal.shape != (m,):
            raise DataError("marginal shapes do not match the cost matrix")
        for name, marg in (("row", self.row_marginal), ("col", self.col_marginal)):
            if (marg < 0).any():
                raise DataError(f"{name} marginal has negative entries")
            total = marg.sum()
            if abs(total - 1.0) > MARGINAL_ATOL:
                raise DataError(f"{name} marginal sums to {total}, expected 1")


@dataclass
class TransportSolution:
    plan: np.ndarray  # (N, M), >= 0
    distance: float
    iterations: int
    marginal_violation: float
    converged: bool = True


def _round_to_feasible(plan, a, b):
    """Project a near-feasible plan onto the exact marginals (mass shuffle)."""
    rows = plan.sum(axis=1)
    scale = np.minimum(a / np.where(rows > 0, rows, 1.0), 1.0)
    plan = plan * scale[:, None]
    cols = plan.sum(axis=0)
    scale = np.minimum(b / np.where(cols > 0, cols, 1.0), 1.0)
    plan = plan * scale[None, :]
    err_r = a - plan.sum(axis=1)
    err_c = b - plan.sum(axis=0)
    total = err_r.sum()
    if total > 0:
        plan = plan + np.outer(err_r, err_c) / total
    return plan


def _violation(plan, a, b) -> float:
    return float(
        max(np.abs(plan.sum(axis=1) - a).max(), np.abs(plan.sum(axis=0) - b).max())
    )


def sinkhorn(
    problem: TransportProblem,
    epsilon: float = DEFAULT_EPSILON,
    max_iters: int = DEFAULT_MAX_ITERS,
    tolerance: float = DEFAULT_TOLERANCE,
) -> TransportSolution:
    """Entropy-regularized OT distance on the rounded-to-feasible plan.

    Zero-mass rows/columns are excluded before iterating and re-inserted as
    zero rows of the plan. ``converged`` reports whether the pre-rounding
    marginal violation fell below ``tolerance`` within ``max_iters``.
    """
    problem.validate()
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    a, b, cost = problem.row_marginal, problem.col_marginal, problem.cost
    keep_r = a > 0
    keep_c = b > 0
    sub_a, sub_b = a[keep_r], b[keep_c]
    sub_cost = cost[np.ix_(keep_r, keep_c)]
    f, g, iters, pre_viol = _kernels.sinkhorn_potentials(
        sub_cost, np.log(sub_a), np.log(sub_b), epsilon, max_iters, tolerance
    )
    sub_plan = np.exp((f[:, None] + g[None, :] - sub_cost) / epsilon)
    if not np.isfinite(sub_plan).all():
        raise NumericalError(
            f"sinkhorn scaling produced non-finite plan entries (epsilon={epsilon}); "
            "increase epsilon"
        )
    sub_plan = _round_to_feasible(sub_plan, sub_a, sub_b)
    plan = np.zeros_like(cost)
    plan[np.ix_(keep_r, keep_c)] = sub_plan
    return TransportSolution(
        plan=plan,
        distance=float((plan * cost).sum()),
        iterations=int(iters),
        marginal_violation=_violation(plan, a, b),
        converged=bool(pre_viol < tolerance),
    )


def sinkhorn_distances_batch(
    costs,
    row_marginal,
    col_marginals,
    epsilon: float = DEFAULT_EPSILON,
    max_iters: int = DEFAULT_MAX_ITERS,
    tolerance: float = DEFAULT_TOLERANCE,
):
    """Rounded Sinkhorn distances for K problems sharing the row marginal.

    ``costs`` is (K, N, M), ``row_marginal`` (N,) strictly positive,
    ``col_marginals`` (K, M) strictly positive. This is the classifier's
    hot path; zero-mass handling lives in :func:`sinkhorn`.
    """
    costs = np.asarray(costs, dtype=np.float64)
    a = np.asarray(row_marginal, dtype=np.float64)
    bs = np.asarray(col_marginals, dtype=np.float64)
    if (a <= 0).any() or (bs <= 0).any():
        raise DataError("batch marginals must be strictly positive")
    f, g, _, _ = _kernels.sinkhorn_potentials_batch(
        costs, np.log(a), np.log(bs), epsilon, max_iters, tolerance
    )
    plans = np.exp((f[:, :, None] + g[:, None, :] - costs) / epsilon)
    finite = np.isfinite(plans).all(axis=(1, 2))
    if not finite.all():
        raise NumericalError(
            f"sinkhorn scaling produced non-finite plan entries for problem "
            f"{int(np.flatnonzero(~finite)[0])}"
        )
    rows = plans.sum(axis=2)
    plans *= np.minimum(a[None, :] / np.where(rows > 0, rows, 1.0), 1.0)[:, :, None]
    cols = plans.sum(axis=1)
    plans *= np.minimum(bs / np.where(cols > 0, cols, 1.0), 1.0)[:, None, :]
    err_r = a[None, :] - plans.sum(axis=2)
    err_c = bs - plans.sum(axis=1)
    tot = err_r.sum(axis=1)
    fix = np.where(tot > 0, tot, 1.0)
    plans += err_r[:, :, None] * err_c[:, None, :] / fix[:, None, None]
    return (plans * costs).sum(axis=(1, 2))


def batch_distances(
    problems,
    epsilon: float = DEFAULT_EPSILON,
    max_iters: int = DEFAULT_MAX_ITERS,
    tolerance: float = DEFAULT_TOLERANCE,
):
    """Element-wise sinkhorn distances; errors carry the offending index."""
    out = np.empty(len(problems))
    for idx, problem in enumerate(problems):
        try:
            out[idx] = sinkhorn(problem, epsilon, max_iters, tolerance).distance
        except (DataError, NumericalError, ValueError) as exc:
            raise type(exc)(f"problem {idx}: {exc}") from exc
    return out


# ---------------------------------------------------------------------------
# Exact transportation simplex
# ---------------------------------------------------------------------------


def _northwest_corner(a, b):
    """Initial basic feasible solution; returns flows plus the basis list."""
    n, m = len(a), len(b)
    rem_a = a.copy()
    rem_b = b.copy()
    flow = np.zeros((n, m))
    basis = []
    i = j = 0
    while True:
        basis.append((i, j))
        move = min(rem_a[i], rem_b[j])
        flow[i, j] = move
        rem_a[i] -= move
        rem_b[j] -= move
        if i == n - 1 and j == m - 1:
            break
        # ties advance the row, padding a zero-flow basic cell so the basis
        # stays a spanning tree under degeneracy
        if i < n - 1 and (j == m - 1 or rem_a[i] <= rem_b[j]):
            i += 1
        else:
            j += 1
    return flow, basis


def _compute_duals(cost, basis, n, m):
    u = np.full(n, np.nan)
    v = np.full(m, np.nan)
    row_adj = [[] for _ in range(n)]
    col_adj = [[] for _ in range(m)]
    for (i, j) in basis:
        row_adj[i].append(j)
        col_adj[j].append(i)
    u[0] = 0.0
    stack = [("r", 0)]
    while stack:
        kind, idx = stack.pop()
        if kind == "r":
            for j in row_adj[idx]:
                if np.isnan(v[j]):
                    v[j] = cost[idx, j] - u[idx]
                    stack.append(("c", j))
        else:
            for i in col_adj[idx]:
                if np.isnan(u[i]):
                    u[i] = cost[i, idx] - v[idx]
                    stack.append(("r", i))
    if np.isnan(u).any() or np.isnan(v).any():
        raise NumericalError("transportation basis is not a spanning tree")
    return u, v


def _find_cycle(basis_set, start, n, m):
    """Alternating cycle created by adding ``start`` to the basis tree."""
    row_adj = [[] for _ in range(n)]
    col_adj = [[] for _ in range(m)]
    for (i, j) in basis_set:
        row_adj[i].append(j)
        col_adj[j].append(i)
    i0, j0 = start
    # path from column node j0 back to row node i0 through basis edges
    parent = {}
    seen_r = [False] * n
    seen_c = [False] * m
    seen_c[j0] = True
    frontier = [("c", j0)]
    while frontier:
        kind, idx = frontier.pop()
        if kind == "c":
            for i in col_adj[idx]:
                if not seen_r[i]:
                    seen_r[i] = True
                    parent[("r", i)] = ("c", idx)
                    if i == i0:
                        frontier = []
                        break
                    frontier.append(("r", i))
        else:
            for j in row_adj[idx]:
                if not seen_c[j]:
                    seen_c[j] = True
                    parent[("c", j)] = ("r", idx)
                    frontier.append(("c", j))
    if not seen_r[i0]:
        raise NumericalError("no alternating cycle found; basis corrupt")
    node = ("r", i0)
    path = [node]
    while node != ("c", j0):
        node = parent[node]
        path.append(node)
    cells = [start]
    for k in range(len(path) - 1):
        a_kind, a_idx = path[k]
        b_kind, b_idx = path[k + 1]
        cells.append((a_idx, b_idx) if a_kind == "r" else (b_idx, a_idx))
    return cells


def exact_ot(problem: TransportProblem) -> TransportSolution:
    """Exact optimum of the transportation LP via the transportation simplex."""
    problem.validate()
    n_full, m_full = problem.cost.shape
    if n_full * m_full > EXACT_SIZE_LIMIT:
        raise ValueError(
            f"exact_ot limited to {EXACT_SIZE_LIMIT} cells, got {n_full * m_full}"
        )
    keep_r = problem.row_marginal > 0
    keep_c = problem.col_marginal > 0
    a = problem.row_marginal[keep_r].copy()
    b = problem.col_marginal[keep_c].copy()
    cost = problem.cost[np.ix_(keep_r, keep_c)]
    # the LP needs exactly balanced mass; inputs are validated to 1e-6
    b *= a.sum() / b.sum()
    n, m = cost.shape
    flow, basis = _northwest_corner(a, b)
    basis_set = set(basis)
    max_pivots = 50 * (n + m) * max(n, m)
    pivots = 0
    while True:
        u, v = _compute_duals(cost, basis_set, n, m)
        entering = None
        # Bland's rule: first improving cell in row-major order
        reduced = cost - u[:, None] - v[None, :]
        for i in range(n):
            row = reduced[i]
            for j in range(m):
                if (i, j) not in basis_set and row[j] < -1e-12:
                    entering = (i, j)
                    break
            if entering:
                break
        if entering is None:
            break
        pivots += 1
        if pivots > max_pivots:
            raise NumericalError("transportation simplex exceeded its pivot budget")
        cycle = _find_cycle(basis_set, entering, n, m)
        givers = cycle[1::2]
        theta = min(flow[c] for c in givers)
        leaving = min(c for c in givers if flow[c] <= theta)
        for idx, cell in enumerate(cycle):
            flow[cell] += theta if idx % 2 == 0 else -theta
        for cell in givers:
            if flow[cell] < 0.0:
                flow[cell] = 0.0
        flow[leaving] = 0.0
        basis_set.remove(leaving)
        basis_set.add(entering)
    plan = np.zeros((n_full, m_full))
    plan[np.ix_(keep_r, keep_c)] = flow
    np.clip(plan, 0.0, None, out=plan)
    return TransportSolution(
        plan=plan,
        distance=float((plan * problem.cost).sum()),
        iterations=pivots,
        marginal_violation=_violation(plan, problem.row_marginal, problem.col_marginal),
        converged=True,
    )
