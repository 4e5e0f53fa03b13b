"""Zero-temperature ergodic optimization on the grid.

Subaction convention: u(y) = max_a [A(a, y) + u(a) - m], with a the earlier site.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog
from scipy.sparse.linalg import spsolve

from .potentials import TWO_PI, CircleGrid, TwoSitePotential, evaluate, tabulate
from .transfer import solve_spectral

DISCOUNT_SCHEDULE = (0.9, 0.99, 0.999)


@dataclass(frozen=True, eq=False)
class Subaction:
    values: np.ndarray
    m_value: float
    residual: float
    method: str
    grid: CircleGrid = field(repr=False)
    table: np.ndarray = field(repr=False)
    diagnostics: dict = field(default_factory=dict, repr=False)

    def inequality_excess(self) -> float:
        """max over pairs of A(a, y) + u(a) - u(y) - m; <= residual for a subaction."""
        u = self.values
        return float(np.max(self.table + u[:, None] - u[None, :]) - self.m_value)


def bellman(table: np.ndarray, u: np.ndarray) -> np.ndarray:
    """(T u)(y) = max_a [A(a, y) + u(a)]."""
    return np.max(table + u[:, None], axis=0)


def calibration_residual(table: np.ndarray, u: np.ndarray, m: float) -> float:
    return float(np.max(np.abs(bellman(table, u) - m - u)))


# ---------------------------------------------------------------------------
# maximum mean cycle (Karp)

def _karp(table: np.ndarray) -> tuple[float, list[int]]:
    n = table.shape[0]
    # d[k, v] = max weight of a k-edge walk ending at v, any start
    d = np.empty((n + 1, n))
    pred = np.empty((n + 1, n), dtype=np.int64)
    d[0] = 0.0
    pred[0] = -1
    for k in range(1, n + 1):
        cand = d[k - 1][:, None] + table
        pred[k] = np.argmax(cand, axis=0)
        d[k] = cand[pred[k], np.arange(n)]
    ks = np.arange(n)[:, None]
    with np.errstate(invalid="ignore"):
        ratios = (d[n][None, :] - d[:n]) / (n - ks)
    inner = ratios.min(axis=0)
    v = int(np.argmax(inner))
    m_karp = float(inner[v])

    # the n-edge walk ending at v contains a cycle; extract all and keep the best
    walk = [v]
    for k in range(n, 0, -1):
        walk.append(int(pred[k, walk[-1]]))
    walk.reverse()
    seen: dict[int, int] = {}
    best_mean, best_cycle = -math.inf, [v]
    for pos, node in enumerate(walk):
        if node in seen:
            cyc = walk[seen[node]:pos]
            mean = sum(table[cyc[i], cyc[(i + 1) % len(cyc)]] for i in range(len(cyc))) / len(cyc)
            if mean > best_mean:
                best_mean, best_cycle = float(mean), cyc
        seen[node] = pos
    if best_mean < m_karp - 1e-9 * max(1.0, abs(m_karp)):
        best_mean, best_cycle = m_karp, best_cycle
    return best_mean, best_cycle


def max_ergodic_average(potential: TwoSitePotential, grid: CircleGrid,
                        table: Optional[np.ndarray] = None) -> tuple[float, list[float]]:
    """Maximum mean cycle value m(A) of the complete digraph with weights A(x, y)."""
    if table is None:
        table = tabulate(potential, grid)
    m, cyc = _karp(table)
    return m, [float(grid.nodes[i]) for i in cyc]


def dual_value(potential: TwoSitePotential, grid: CircleGrid,
               table: Optional[np.ndarray] = None, return_f: bool = False):
    """min t s.t. A(a, y) + f(a) - f(y) <= t for all pairs, with f(x_0) = 0."""
    if table is None:
        table = tabulate(potential, grid)
    n = table.shape[0]
    a_idx, y_idx = np.divmod(np.arange(n * n), n)
    rows = np.arange(n * n)
    # variables: f_1..f_{n-1}, t  (f_0 pinned to 0)
    data, r, c = [], [], []
    for idx, sign in ((a_idx, 1.0), (y_idx, -1.0)):
        mask = (idx > 0) & (a_idx != y_idx)
        data.append(np.full(mask.sum(), sign))
        r.append(rows[mask])
        c.append(idx[mask] - 1)
    data.append(np.full(n * n, -1.0))
    r.append(rows)
    c.append(np.full(n * n, n - 1))
    a_ub = sp.csr_matrix((np.concatenate(data), (np.concatenate(r), np.concatenate(c))),
                         shape=(n * n, n))
    b_ub = -table.ravel()
    cost = np.zeros(n)
    cost[-1] = 1.0
    res = linprog(cost, A_ub=a_ub, b_ub=b_ub, bounds=[(None, None)] * n, method="highs",
                  options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10})
    if res.status != 0:
        raise RuntimeError(f"dual linear program failed: {res.message}")
    t = float(res.x[-1])
    if return_f:
        return t, np.concatenate([[0.0], res.x[:-1]])
    return t


# ---------------------------------------------------------------------------
# discounted operator u(y) = max_a [A(a, y) + lam u(a)]

def discounted_subaction(potential: TwoSitePotential, grid: CircleGrid, lam: float,
                         tol: float = 1e-12, table: Optional[np.ndarray] = None,
                         max_iter: int = 1000) -> np.ndarray:
    """Fixed point of the discounted Bellman operator by policy iteration.

    Each policy is evaluated exactly (one sparse solve), so the result is exact up
    to rounding once the greedy policy stabilizes.
    """
    if not 0.0 < lam < 1.0:
        raise ValueError(f"discount must lie in (0, 1), got {lam}")
    if table is None:
        table = tabulate(potential, grid)
    n = table.shape[0]
    cols = np.arange(n)
    policy = np.argmax(table, axis=0)
    u = np.full(n, table.max() / (1.0 - lam))
    for _ in range(max_iter):
        r = table[policy, cols]
        mat = sp.identity(n, format="csr") - lam * sp.csr_matrix((np.ones(n), (cols, policy)), shape=(n, n))
        u = spsolve(mat.tocsc(), r)
        q = table + lam * u[:, None]
        best = q.max(axis=0)
        current = q[policy, cols]
        if np.all(best - current <= tol * max(1.0, float(np.max(np.abs(u))))):
            break
        improve = best - current > tol * max(1.0, float(np.max(np.abs(u))))
        policy = np.where(improve, np.argmax(q, axis=0), policy)
    # final contraction sweeps to reach tol in sup norm
    for _ in range(max_iter):
        new = np.max(table + lam * u[:, None], axis=0)
        step = float(np.max(np.abs(new - u)))
        u = new
        if step <= tol * (1.0 - lam):
            break
    return u


def _relative_value_iteration(table: np.ndarray, u: np.ndarray, tol: float,
                              max_iter: int) -> tuple[np.ndarray, float, float, int]:
    """u <- T u - max T u; returns (u, m, residual, iterations)."""
    averaged = False
    m = math.nan
    res = math.inf
    for it in range(1, max_iter + 1):
        tu = bellman(table, u)
        m = float(np.max(tu) - np.max(u))
        res = float(np.max(np.abs(tu - m - u)))
        if res <= tol:
            return u - u.max(), m, res, it
        if not averaged and it > min(max_iter // 2, 2000):
            averaged = True  # periodic critical classes: switch to Krasnoselskii-Mann averaging
        new = tu - m
        u = 0.5 * (u + new) if averaged else new
        u = u - u.max()
    return u - u.max(), m, res, max_iter


def _kleene_closure(b: np.ndarray) -> np.ndarray:
    """B+[i, j] = max weight of a path with at least one edge (Floyd-Warshall, max-plus)."""
    d = b.copy()
    for k in range(d.shape[0]):
        np.maximum(d, d[:, k:k + 1] + d[k:k + 1, :], out=d)
    return d


def critical_structure(table: np.ndarray, m: float, tol: float = 1e-9) -> tuple[np.ndarray, np.ndarray]:
    """(B+ closure of A - m, boolean mask of critical nodes)."""
    plus = _kleene_closure(table - m)
    crit = np.diag(plus) >= -tol
    return plus, crit


def calibrated_subaction(potential: TwoSitePotential, grid: CircleGrid, method: str = "discounted",
                         tol: float = 1e-9, schedule: Sequence[float] = DISCOUNT_SCHEDULE,
                         max_iter: int = 200000) -> Subaction:
    """Calibrated subaction normalized to max u = 0.

    ``discounted``: solves the discounted problems on the schedule, extrapolates
    the normalized u_lambda, then polishes by relative value iteration.
    ``lp_dual``: takes the dual LP subsolution f and calibrates it through the
    max-plus closure over critical nodes.
    """
    table = tabulate(potential, grid)
    diag: dict = {}
    if method == "discounted":
        us, tails = [], []
        for lam in schedule:
            ul = discounted_subaction(potential, grid, lam, table=table)
            tails.append((1.0 - lam) * float(np.max(ul)))
            us.append(ul - ul.max())
        diag["discount_schedule"] = list(schedule)
        diag["discounted_m_estimates"] = tails
        start = us[-1]
        if len(us) >= 2:
            # error of u_lambda is roughly linear in (1 - lambda)
            l1, l2 = 1 - schedule[-2], 1 - schedule[-1]
            start = (l1 * us[-1] - l2 * us[-2]) / (l1 - l2)
            start = start - start.max()
        u, m, res, its = _relative_value_iteration(table, start, tol, max_iter)
        if res > tol:
            u, m, res, its2 = _relative_value_iteration(table, us[-1], tol, max_iter)
            its += its2
        diag["polish_iterations"] = its
        # Collatz-Wielandt bounds bracket m
        gap = bellman(table, u) - u
        diag["m_bounds"] = [float(gap.min()), float(gap.max())]
    elif method == "lp_dual":
        m, f = dual_value(potential, grid, table=table, return_f=True)
        plus, crit = critical_structure(table, m)
        if not np.any(crit):
            raise RuntimeError("no critical node found; LP solution inaccurate")
        u = np.max(f[crit][:, None] + plus[crit, :], axis=0)
        u = u - u.max()
        diag["critical_nodes"] = int(crit.sum())
    else:
        raise ValueError(f"unknown method {method!r}; expected 'discounted' or 'lp_dual'")
    res = calibration_residual(table, u, m)
    return Subaction(u, float(m), res, method, grid, table, diag)


# ---------------------------------------------------------------------------
# beta -> infinity limits of the eigendata

@dataclass(frozen=True)
class EigenLimitTable:
    betas: tuple
    V_by_beta: tuple
    increments: tuple  # sup-norm distances between consecutive V_beta
    V: np.ndarray

    @property
    def increments_decreasing(self) -> bool:
        return all(b < a for a, b in zip(self.increments, self.increments[1:]))


def eigen_limit_V(potential: TwoSitePotential, grid: CircleGrid,
                  betas: Sequence[float]) -> EigenLimitTable:
    """V_beta = (log psi_beta - max log psi_beta) / beta along increasing betas."""
    betas = [float(b) for b in betas]
    if any(b2 <= b1 for b1, b2 in zip(betas, betas[1:])):
        raise ValueError("betas must be strictly increasing")
    vs = []
    for b in betas:
        lp = np.log(solve_spectral(potential, grid, b, gap=False).psi)
        vs.append((lp - lp.max()) / b)
    inc = tuple(float(np.max(np.abs(b - a))) for a, b in zip(vs, vs[1:]))
    return EigenLimitTable(tuple(betas), tuple(vs), inc, vs[-1])


def subaction_from_V(potential: TwoSitePotential, grid: CircleGrid, V: np.ndarray,
                     m: Optional[float] = None) -> Subaction:
    table = tabulate(potential, grid)
    if m is None:
        m = max_ergodic_average(potential, grid, table)[0]
    return Subaction(np.asarray(V), m, calibration_residual(table, V, m), "eigen_limit", grid, table)


@dataclass(frozen=True)
class EigenvalueLimitTable:
    betas: tuple
    scaled_log_lambda: tuple
    gaps: tuple
    m_value: float

    @property
    def gap_decreasing(self) -> bool:
        return all(b < a for a, b in zip(self.gaps, self.gaps[1:]))


def eigenvalue_limit(potential: TwoSitePotential, grid: CircleGrid,
                     betas: Sequence[float]) -> EigenvalueLimitTable:
    """(1/beta) log lambda_beta and its distance to m(A) per beta."""
    m = max_ergodic_average(potential, grid)[0]
    vals, gaps = [], []
    for b in betas:
        v = solve_spectral(potential, grid, b, gap=False).log_lambda / b
        vals.append(v)
        gaps.append(abs(v - m))
    return EigenvalueLimitTable(tuple(float(b) for b in betas), tuple(vals), tuple(gaps), m)


# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RateFunctionEval:
    prefix: tuple
    value: float


def _interp_periodic(grid: CircleGrid, values: np.ndarray, x) -> np.ndarray:
    xs = np.append(grid.nodes, TWO_PI)
    return np.interp(np.mod(x, TWO_PI), xs, np.append(values, values[0]))


def rate_function(sub: Subaction, prefix: Sequence[float],
                  potential: Optional[TwoSitePotential] = None) -> RateFunctionEval:
    """I = sum V(x_{i+1}) - V(x_i) - (A - m)(x_i, x_{i+1}) with V the subaction.

    Off-grid angles use linear interpolation of V; A is evaluated exactly when
    the potential is supplied, otherwise from the table on the nearest nodes.
    """
    pts = np.asarray(prefix, dtype=float)
    if pts.size < 2:
        raise ValueError("prefix needs at least two angles")
    v = _interp_periodic(sub.grid, sub.values, pts)
    if potential is not None:
        a = np.asarray(evaluate(potential, pts[:-1], pts[1:]))
    else:
        idx = np.rint(np.mod(pts, TWO_PI) / sub.grid.spacing).astype(int) % sub.grid.n_points
        a = sub.table[idx[:-1], idx[1:]]
    value = float(np.sum(v[1:] - v[:-1] - (a - sub.m_value)))
    return RateFunctionEval(tuple(float(p) for p in pts), value)


def box_rate_infimum(sub: Subaction, boxes: Sequence[tuple[float, float]],
                     include_tail: bool = True) -> float:
    """inf of I over grid paths with x_i in box i (min-plus dynamic program).

    I sums over the whole infinite path; after the last box the cheapest
    continuation runs into the critical set, where further steps cost nothing.
    ``include_tail=False`` keeps only the prefix terms.
    """
    grid = sub.grid
    masks = []
    for a, b in boxes:
        x = grid.nodes
        inside = (x >= a) & (x < b) if a < b else (x >= a) | (x < b)
        if not inside.any():
            raise ValueError(f"box [{a}, {b}) contains no grid node")
        masks.append(inside)
    u = sub.values
    cost = sub.table - sub.m_value
    best = np.where(masks[0], 0.0, np.inf)
    for mask in masks[1:]:
        # step cost from a to y: u(y) - u(a) - (A(a, y) - m)
        step = u[None, :] - u[:, None] - cost
        best = np.min(best[:, None] + step, axis=0)
        best = np.where(mask, best, np.inf)
    if include_tail:
        star, crit = critical_structure(sub.table, sub.m_value)
        np.fill_diagonal(star, np.maximum(np.diag(star), 0.0))  # empty path
        # cost y -> z along the best path: u(z) - u(y) - B*(y, z), z critical
        tail = np.min(np.where(crit[None, :], u[None, :] - u[:, None] - star, np.inf), axis=1)
        best = best + tail
    return float(best.min())


# ---------------------------------------------------------------------------
# twist and graph diagnostics

@dataclass(frozen=True)
class TwistReport:
    min_abs_mixed: float
    max_abs_mixed: float
    sign_changes: bool
    holds: bool


def twist_check(potential: TwoSitePotential, grid: CircleGrid, periodic: bool = True,
                tol: float = 1e-10) -> TwistReport:
    """Central-difference mixed partial d2A/dxdy with step equal to the grid spacing.

    ``periodic=False`` restricts to interior nodes, for tabulated patches that are
    not periodic functions.
    """
    if not potential.is_continuous:
        raise ValueError("twist check needs a continuous potential; the step potential is rejected")
    t = tabulate(potential, grid)
    h = grid.spacing
    if periodic:
        r = lambda a, s: np.roll(a, -s, axis=0)
        c = lambda a, s: np.roll(a, -s, axis=1)
        mixed = (c(r(t, 1), 1) - c(r(t, 1), -1) - c(r(t, -1), 1) + c(r(t, -1), -1)) / (4 * h * h)
    else:
        mixed = (t[2:, 2:] - t[2:, :-2] - t[:-2, 2:] + t[:-2, :-2]) / (4 * h * h)
    amin = float(np.min(np.abs(mixed)))
    changes = bool(np.any(mixed > tol) and np.any(mixed < -tol))
    return TwistReport(amin, float(np.max(np.abs(mixed))), changes, amin > tol and not changes)


@dataclass(frozen=True)
class GraphReport:
    n_points: tuple
    support_sizes: tuple  # number of critical edges per grid
    violations: tuple  # first coordinates with more than one successor, per grid
    holds: bool


def critical_edges(table: np.ndarray, m: float, tol: float = 1e-9) -> np.ndarray:
    """Mask of edges (a, y) lying on some maximizing cycle."""
    plus = _kleene_closure(table - m)
    return (table - m) + plus.T >= -tol


def graph_support_check(potential: TwoSitePotential, grid: CircleGrid, refinements: int = 2,
                        tol: float = 1e-9) -> GraphReport:
    """Whether the maximizing support is a graph: one successor per first coordinate."""
    sizes, viol = [], []
    ns = []
    g = grid
    for _ in range(refinements):
        table = tabulate(potential, g)
        m, _ = _karp(table)
        edges = critical_edges(table, m, tol)
        succ = edges.sum(axis=1)
        ns.append(g.n_points)
        sizes.append(int(edges.sum()))
        viol.append(int(np.sum(succ > 1)))
        g = g.refine(2)
    return GraphReport(tuple(ns), tuple(sizes), tuple(viol), all(v == 0 for v in viol))
