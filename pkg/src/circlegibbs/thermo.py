"""Gibbs cylinder measures, chain sampling, entropies and the pressure identity."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .potentials import TWO_PI, CircleGrid, TwoSitePotential, evaluate
from .transfer import SpectralSolution, normalized_from_solution, solve_spectral

GAUSS_POINTS = 96


@dataclass(frozen=True)
class CylinderSpec:
    """One angle box [a_i, b_i) per consecutive coordinate, starting at coordinate 0.

    A box with b <= a wraps through 0; ``(0, 2pi)`` is the full circle.
    """

    boxes: tuple

    def __post_init__(self):
        boxes = tuple((float(a), float(b)) for a, b in self.boxes)
        if not boxes:
            raise ValueError("a cylinder needs at least one box")
        for a, b in boxes:
            if not (0.0 <= a <= TWO_PI and 0.0 <= b <= TWO_PI) or a == b:
                raise ValueError(f"box [{a}, {b}) must be a nonempty interval in [0, 2pi]")
        object.__setattr__(self, "boxes", boxes)


@dataclass(frozen=True, eq=False)
class ChainSample:
    states: np.ndarray
    seed: int


def _box_pieces(a: float, b: float) -> list[tuple[float, float]]:
    return [(a, b)] if a < b else [(a, TWO_PI), (0.0, b)]


def _box_length(a: float, b: float) -> float:
    return sum(hi - lo for lo, hi in _box_pieces(a, b))


def _cell_fractions(grid: CircleGrid, a: float, b: float) -> np.ndarray:
    """Fraction of each node's cell [x_k - h/2, x_k + h/2) lying inside the box."""
    h = grid.spacing
    lo = grid.nodes - h / 2
    frac = np.zeros(grid.n_points)
    for pa, pb in _box_pieces(a, b):
        for shift in (-TWO_PI, 0.0, TWO_PI):
            frac += np.clip(np.minimum(lo + h, pb + shift) - np.maximum(lo, pa + shift), 0.0, None)
    return frac / h


def _gauss_nodes(a: float, b: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes in the box, weights for the normalized measure."""
    t, w = np.polynomial.legendre.leggauss(n)
    xs, ws = [], []
    for pa, pb in _box_pieces(a, b):
        half = (pb - pa) / 2
        xs.append(pa + half * (t + 1))
        ws.append(w * half / TWO_PI)
    return np.concatenate(xs), np.concatenate(ws)


def _nystrom_psi_bar(sol: SpectralSolution, x: np.ndarray) -> np.ndarray:
    ex = np.exp(sol.beta * evaluate(sol.potential, x[:, None], sol.grid.nodes[None, :]))
    return ex @ sol.psi_bar / (sol.grid.n_points * sol.lam)


def _nystrom_psi(sol: SpectralSolution, y: np.ndarray) -> np.ndarray:
    ex = np.exp(sol.beta * evaluate(sol.potential, sol.grid.nodes[:, None], y[None, :]))
    return sol.psi @ ex / (sol.grid.n_points * sol.lam)


def cylinder_measure(sol: SpectralSolution, cyl: CylinderSpec, method: str = "auto",
                     gauss_points: int = GAUSS_POINTS) -> float:
    """Gibbs probability of the cylinder: int theta(x_0) prod K(x_i, x_{i+1}) over the boxes.

    ``method="nystrom"`` extends psi, psi_bar off the grid and integrates each box
    with Gauss-Legendre nodes, which is spectrally accurate for smooth
    potentials.  ``method="cells"`` works on grid nodes only, weighting each
    node by the fraction of its cell inside the box; this is the route for the
    discontinuous step potential.  ``auto`` picks by continuity.
    """
    h = sol.grid.spacing
    for a, b in cyl.boxes:
        if _box_length(a, b) < h:
            raise ValueError(f"box [{a}, {b}) is narrower than the grid spacing {h:.3g}; "
                             "use a finer grid")
    if method == "auto":
        method = "nystrom" if sol.potential.is_continuous else "cells"
    if method == "cells":
        wgt = sol.grid.weight
        v = sol.theta * wgt * _cell_fractions(sol.grid, *cyl.boxes[0])
        for a, b in cyl.boxes[1:]:
            v = (v @ sol.kernel) * wgt * _cell_fractions(sol.grid, a, b)
        return float(np.clip(v.sum(), 0.0, 1.0))
    if method != "nystrom":
        raise ValueError(f"unknown method {method!r}")

    x, w = _gauss_nodes(*cyl.boxes[0], gauss_points)
    pb = _nystrom_psi_bar(sol, x)
    v = _nystrom_psi(sol, x) * pb / sol.pi_norm * w
    for a, b in cyl.boxes[1:]:
        y, wy = _gauss_nodes(a, b, gauss_points)
        pby = _nystrom_psi_bar(sol, y)
        k = np.exp(sol.beta * evaluate(sol.potential, x[:, None], y[None, :]))
        k *= pby[None, :] / (pb[:, None] * sol.lam)
        v = (v @ k) * wy
        x, pb = y, pby
    return float(np.clip(v.sum(), 0.0, 1.0))


def _triangle_cdf(t: np.ndarray, h: float) -> np.ndarray:
    """CDF of the difference of two independent uniforms on intervals of length h."""
    t = np.clip(t, -h, h)
    left = (t + h) ** 2 / (2 * h * h)
    right = 1.0 - (h - t) ** 2 / (2 * h * h)
    return np.where(t <= 0, left, right)


def difference_event_measure(sol: SpectralSolution, intervals: Sequence[tuple[float, float]]) -> float:
    """Gibbs probability that x_0 - x_1 (mod 2pi) lies in a union of intervals.

    Intervals are given as (lo, hi) in radians with lo < hi; they may extend
    below 0 or above 2pi.  Each grid pair carries its kernel mass spread over
    the product of the two cells, so the difference has a triangular law of
    half-width h around the node difference.
    """
    grid = sol.grid
    n, h = grid.n_points, grid.spacing
    diffs = TWO_PI * np.arange(n) / n  # difference of node k apart
    frac = np.zeros(n)
    for lo, hi in intervals:
        for shift in (-TWO_PI, 0.0, TWO_PI):
            frac += _triangle_cdf(hi + shift - diffs, h) - _triangle_cdf(lo + shift - diffs, h)
    w = sol.grid.weight
    pair = (sol.theta * w)[:, None] * sol.kernel * w  # probability of node pair (i, j)
    idx = np.arange(n)
    total = 0.0
    for k in np.flatnonzero(frac > 0):
        total += frac[k] * pair[idx, (idx - k) % n].sum()
    return float(total)


# ---------------------------------------------------------------------------

def sample_chain(sol: SpectralSolution, n_steps: int, seed: int) -> ChainSample:
    """Markov chain on grid nodes: x_0 ~ theta, then x_{k+1} ~ K(x_k, .).

    Uses numpy's PCG64 generator and inverse-CDF lookup, so the output is a
    pure function of (solution, n_steps, seed).
    """
    if n_steps < 1:
        raise ValueError("n_steps must be at least 1")
    rng = np.random.Generator(np.random.PCG64(seed))
    u = rng.random(n_steps)
    cdf0 = np.cumsum(sol.theta * sol.grid.weight)
    cdf = np.cumsum(sol.kernel * sol.grid.weight, axis=1)
    last = sol.grid.n_points - 1
    idx = np.empty(n_steps, dtype=np.int64)
    idx[0] = min(np.searchsorted(cdf0, u[0] * cdf0[-1], side="right"), last)
    for k in range(1, n_steps):
        row = cdf[idx[k - 1]]
        idx[k] = min(np.searchsorted(row, u[k] * row[-1], side="right"), last)
    return ChainSample(sol.grid.nodes[idx], int(seed))


def state_indices(sol: SpectralSolution, sample: ChainSample) -> np.ndarray:
    return np.rint(sample.states / sol.grid.spacing).astype(np.int64) % sol.grid.n_points


# ---------------------------------------------------------------------------

def _pair_density(sol: SpectralSolution) -> np.ndarray:
    """theta(x) K(x, y) weighted for double quadrature."""
    return sol.theta[:, None] * sol.kernel * sol.grid.weight ** 2


def penalized_entropy(sol: SpectralSolution) -> float:
    """S = - int int theta(x) K(x, y) log K(x, y) dnu(x) dnu(y)."""
    k = sol.kernel
    with np.errstate(divide="ignore", invalid="ignore"):
        klogk = np.where(k > 0, k * np.log(k), 0.0)
    return float(-np.sum(sol.theta[:, None] * klogk) * sol.grid.weight ** 2)


def mean_energy(sol: SpectralSolution) -> float:
    """int A d(theta K), the two-site expectation of A."""
    return float(np.sum(_pair_density(sol) * sol.table))


@dataclass(frozen=True)
class PressureReport:
    log_lambda: float
    energy: float  # int beta A d nu_beta
    entropy: float
    discrepancy: float

    @property
    def decomposition(self) -> float:
        return self.energy + self.entropy


def pressure(sol: SpectralSolution) -> PressureReport:
    energy = sol.beta * mean_energy(sol)
    entropy = penalized_entropy(sol)
    return PressureReport(sol.log_lambda, energy, entropy, sol.log_lambda - energy - entropy)


def entropy_h(sol: SpectralSolution) -> float:
    """h = - int min(0, Abar(x, y)) d(theta K)(x, y), always >= 0."""
    abar = normalized_from_solution(sol).values
    return float(-np.sum(_pair_density(sol) * np.minimum(abar, 0.0)))


@dataclass(frozen=True)
class EntropyRateTable:
    betas: tuple
    entropies: tuple
    rates: tuple  # h / beta

    @property
    def decreasing(self) -> bool:
        return all(b < a for a, b in zip(self.rates, self.rates[1:]))

    @property
    def nonincreasing(self) -> bool:
        return all(b <= a for a, b in zip(self.rates, self.rates[1:]))


def entropy_rate_check(potential: TwoSitePotential, grid: CircleGrid,
                       betas: Sequence[float]) -> EntropyRateTable:
    """h(mu_beta) / beta along an increasing list of positive betas."""
    if potential.kind == "step_vanenter":
        raise ValueError("entropy rates for the step potential need the log-domain path "
                         "(circlegibbs.vanenter); dense kernels are not used for it")
    betas = [float(b) for b in betas]
    if any(b <= 0 for b in betas) or any(b2 <= b1 for b1, b2 in zip(betas, betas[1:])):
        raise ValueError("betas must be positive and strictly increasing")
    hs = [entropy_h(solve_spectral(potential, grid, b, gap=False)) for b in betas]
    return EntropyRateTable(tuple(betas), tuple(hs), tuple(h / b for h, b in zip(hs, betas)))
