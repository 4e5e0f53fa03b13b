"""Discretized transfer operators and the Gibbs Markov kernel on the circle.

Conventions (normalized measure nu = dx / 2pi, uniform nodes):

* forward operator  (L psi)(y)    = int e^{beta A(x, y)} psi(x) dnu(x)
* adjoint operator  (Lbar phi)(x) = int e^{beta A(x, y)} phi(y) dnu(y)
* theta = psi * psi_bar / int(psi * psi_bar)
* K(x, y) = e^{beta A(x, y)} psi_bar(y) / (psi_bar(x) lambda), a density in y
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .potentials import CircleGrid, TwoSitePotential, evaluate, tabulate

OVERFLOW_LIMIT = 700.0
FORWARD = "forward"
ADJOINT = "adjoint"


class OverflowGuardError(ArithmeticError):
    """beta * max|A| is too large for linear-space kernels."""


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(f"{message} (residual {residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


def check_overflow(table: np.ndarray, beta: float) -> None:
    if not math.isfinite(beta):
        raise OverflowGuardError(f"beta must be finite, got {beta}")
    size = abs(beta) * float(np.max(np.abs(table))) if table.size else 0.0
    if size > OVERFLOW_LIMIT:
        raise OverflowGuardError(
            f"beta*max|A| = {size:.1f} exceeds {OVERFLOW_LIMIT:.0f}; linear-space kernels would "
            "overflow. Use the log-domain routines in circlegibbs.vanenter for step potentials.")


@dataclass(frozen=True, eq=False)
class OperatorMatrix:
    """Quadrature-weighted kernel table; row = output point, column = input point."""

    entries: np.ndarray
    beta: float
    direction: str = FORWARD

    def __matmul__(self, f):
        return self.entries @ f

    def apply(self, f: np.ndarray) -> np.ndarray:
        return self.entries @ f

    def transpose(self) -> "OperatorMatrix":
        other = ADJOINT if self.direction == FORWARD else FORWARD
        return OperatorMatrix(self.entries.T, self.beta, other)


def _exp_table(table: np.ndarray, beta: float) -> np.ndarray:
    check_overflow(table, beta)
    return np.exp(beta * table)


def build_operator(potential: TwoSitePotential, grid: CircleGrid, beta: float,
                   direction: str = FORWARD, table: Optional[np.ndarray] = None) -> OperatorMatrix:
    """Nystrom matrix of L_beta (forward) or Lbar_beta (adjoint)."""
    if direction not in (FORWARD, ADJOINT):
        raise ValueError(f"direction must be 'forward' or 'adjoint', got {direction!r}")
    if table is None:
        table = tabulate(potential, grid)
    e = _exp_table(table, beta) * grid.weight  # e[i, j] = e^{beta A(x_i, x_j)} / N
    entries = e.T if direction == FORWARD else e
    return OperatorMatrix(np.ascontiguousarray(entries), float(beta), direction)


def power_iteration(op: OperatorMatrix, tol: float = 1e-12, max_iter: int = 100000,
                    start: Optional[np.ndarray] = None) -> tuple[float, np.ndarray]:
    """Leading eigenpair of a positive matrix, eigenvector normalized to mean 1.

    The stopping rule is ||op f - lam f||_inf <= tol * lam * ||f||_inf.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    m = op.entries
    f = np.ones(m.shape[0]) if start is None else np.asarray(start, dtype=float).copy()
    f /= f.mean()
    residual = math.inf
    for it in range(1, max_iter + 1):
        g = m @ f
        lam = g.mean()
        residual = float(np.max(np.abs(g - lam * f)) / (lam * np.max(np.abs(f))))
        if residual <= tol:
            return float(lam), g / lam
        f = g / lam
    raise ConvergenceError("power iteration did not converge", residual, max_iter)


def _deflated_gap(forward: np.ndarray, lam: float, psi: np.ndarray, psi_bar: np.ndarray,
                  block: int = 4, tol: float = 1e-12, max_iter: int = 20000,
                  seed: int = 12345) -> float:
    """|lambda_2| / lambda from subspace iteration on the forward matrix with psi projected out."""
    n = forward.shape[0]
    if n <= block + 1:
        ev = np.sort(np.abs(np.linalg.eigvals(forward)))[::-1]
        return float(ev[1] / lam) if n > 1 else 0.0
    norm = psi_bar @ psi

    def project(v):
        return v - np.outer(psi, psi_bar @ v) / norm

    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(project(rng.standard_normal((n, block))))
    prev = math.inf
    est = 0.0
    for _ in range(max_iter):
        z = project(forward @ q)
        h = q.T @ z  # Rayleigh-Ritz on the current basis
        est = float(np.max(np.abs(np.linalg.eigvals(h)))) if np.any(h) else 0.0
        if np.linalg.norm(z) < 1e-300 * lam:
            return 0.0
        q, _ = np.linalg.qr(z)
        if abs(est - prev) <= tol * lam:
            break
        prev = est
    return min(est / lam, 1.0 - 1e-15)


@dataclass(frozen=True, eq=False)
class SpectralSolution:
    """Positive-temperature state for one (potential, grid, beta)."""

    lam: float
    psi: np.ndarray
    psi_bar: np.ndarray
    theta: np.ndarray
    kernel: np.ndarray
    gap_ratio: float
    beta: float
    potential: TwoSitePotential = field(repr=False)
    grid: CircleGrid = field(repr=False)
    table: np.ndarray = field(repr=False)

    @property
    def log_lambda(self) -> float:
        return math.log(self.lam)

    @property
    def pi_norm(self) -> float:
        return float(np.mean(self.psi * self.psi_bar))

    def rescaled_eigenfunctions(self) -> tuple[np.ndarray, np.ndarray]:
        """Alternative scaling with int psi_bar dnu = 1 and int psi * psi_bar dnu = 1."""
        return self.psi / self.pi_norm, self.psi_bar


def solve_spectral(potential: TwoSitePotential, grid: CircleGrid, beta: float,
                   tol: float = 1e-12, max_iter: int = 100000, gap: bool = True) -> SpectralSolution:
    table = tabulate(potential, grid)
    e = _exp_table(table, beta) * grid.weight
    forward = OperatorMatrix(np.ascontiguousarray(e.T), beta, FORWARD)
    adjoint = OperatorMatrix(e, beta, ADJOINT)
    lam, psi = power_iteration(forward, tol, max_iter)
    lam_bar, psi_bar = power_iteration(adjoint, tol, max_iter)
    lam = 0.5 * (lam + lam_bar)
    theta = psi * psi_bar
    theta /= theta.mean()
    kernel = e * grid.n_points * psi_bar[None, :] / (psi_bar[:, None] * lam)
    gap_ratio = _deflated_gap(forward.entries, lam, psi, psi_bar) if gap else math.nan
    return SpectralSolution(lam=lam, psi=psi, psi_bar=psi_bar, theta=theta, kernel=kernel,
                            gap_ratio=gap_ratio, beta=float(beta), potential=potential,
                            grid=grid, table=table)


# ---------------------------------------------------------------------------

def discounted_log_eigenfunction(potential: TwoSitePotential, grid: CircleGrid, beta: float,
                                 s: float, tol: float = 1e-12, max_iter: int = 200000) -> np.ndarray:
    """Fixed point of u(y) = log int e^{beta A(x, y) + s u(x)} dnu(x).

    Iterates the max-normalized map v -> G(v) - max G(v), which converges at the
    spectral rate instead of the contraction rate s, then restores the constant.
    """
    if not 0.0 < s < 1.0:
        raise ValueError(f"s must lie in (0, 1), got {s}")
    table = tabulate(potential, grid)
    check_overflow(table, beta)
    bt = beta * table
    log_w = math.log(grid.weight)

    def g(v):
        z = bt + s * v[:, None]
        zmax = z.max(axis=0)
        return zmax + np.log(np.exp(z - zmax).sum(axis=0)) + log_w

    v = np.zeros(grid.n_points)
    for it in range(max_iter):
        gv = g(v)
        c0 = gv.max()
        new = gv - c0
        step = float(np.max(np.abs(new - v)))
        v = new
        if step <= tol * (1.0 - s):
            break
    else:
        raise ConvergenceError("discounted iteration did not converge", step, max_iter)
    c0 = g(v).max()
    return c0 / (1.0 - s) + v


# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class NormalizedPotential:
    values: np.ndarray
    source: SpectralSolution = field(repr=False)

    def column_integrals(self) -> np.ndarray:
        """int e^{Abar(x, y)} dnu(x) for every y."""
        return np.exp(self.values).mean(axis=0)


def normalize_potential(potential: TwoSitePotential, grid: CircleGrid, beta: float,
                        sol: Optional[SpectralSolution] = None) -> NormalizedPotential:
    if sol is None:
        sol = solve_spectral(potential, grid, beta, gap=False)
    return normalized_from_solution(sol)


def normalized_from_solution(sol: SpectralSolution) -> NormalizedPotential:
    lp = np.log(sol.psi)
    vals = sol.beta * sol.table + lp[:, None] - lp[None, :] - sol.log_lambda
    return NormalizedPotential(vals, sol)


def correlation(sol: SpectralSolution, v: np.ndarray, w: np.ndarray, n: int) -> float:
    """int v (K^n w) theta dnu with w centred under theta dnu."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    w = np.asarray(w, dtype=float)
    w = w - np.mean(w * sol.theta)
    step = sol.kernel * sol.grid.weight
    for _ in range(n):
        w = step @ w
    return float(np.mean(np.asarray(v) * w * sol.theta))


def finite_volume_expectation(potential: TwoSitePotential, grid: CircleGrid, beta: float,
                              f: np.ndarray, n: int, boundary: Optional[float] = None,
                              sol: Optional[SpectralSolution] = None) -> float:
    """Expectation of f(x_0) in the volume of n sites with boundary angle fixed at site n.

    Computed as (L_Abar^n f)(boundary).  The last application is done at the
    boundary angle itself through the Nystrom extension, so any real angle is
    allowed.  ``boundary=None`` is the free boundary: the last step is
    averaged over nu.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if sol is None:
        sol = solve_spectral(potential, grid, beta, gap=False)
    g = np.asarray(f, dtype=float)
    ex = np.exp(beta * sol.table)  # ex[i, j] = e^{beta A(x_i, x_j)}
    step = (ex * sol.psi[:, None]).T / (grid.n_points * sol.lam * sol.psi[:, None])
    for _ in range(n - 1):
        g = step @ g
    if boundary is None:
        return float(np.mean(step @ g))
    col = np.exp(beta * np.asarray(evaluate(potential, grid.nodes, float(boundary))))
    wts = col * sol.psi
    return float(np.dot(wts, g) / wts.sum())


def unnormalized_finite_volume_expectation(sol: SpectralSolution, f: np.ndarray, n: int,
                                           boundary_index: int,
                                           left: Optional[np.ndarray] = None) -> float:
    """Same quantity through products of the unnormalized kernel e^{beta A}.

    Sum over x_0..x_{n-1} of left(x_0) f(x_0) prod e^{beta A(x_i, x_{i+1})} with
    x_n the boundary node, divided by the same sum without f.  The default
    left weight psi reproduces the normalized-operator expectation; a constant
    left weight gives the free left end.
    """
    ex = np.exp(sol.beta * sol.table) * sol.grid.weight
    left = sol.psi if left is None else np.asarray(left, dtype=float)
    a = left * np.asarray(f, dtype=float)
    b = left.copy()
    for _ in range(n - 1):
        a = ex.T @ a
        b = ex.T @ b
        s = b.max()
        a, b = a / s, b / s
    col = ex[:, boundary_index]
    return float(np.dot(col, a) / np.dot(col, b))
