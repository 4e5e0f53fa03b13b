"""Two-site interaction potentials A(x, y) on the circle [0, 2*pi).

The circle carries the normalized Lebesgue probability dx / 2pi.  All grid
quadrature in the package uses the uniform rectangle rule, which is the
trapezoid rule for periodic integrands.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping

import numpy as np

TWO_PI = 2.0 * math.pi


KINDS = ("cosine_xy", "symmetric_u", "tabulated", "step_vanenter")


class DomainError(ValueError):
    """Raised for non-finite angles or parameters outside their domain."""


def wrap(x):
    """Reduce angles to [0, 2pi)."""
    r = np.mod(x, TWO_PI)
    return np.where(r >= TWO_PI, 0.0, r)  # mod can round up to 2pi itself


def circle_distance(x, y):
    d = np.abs(wrap(np.asarray(x) - np.asarray(y)))
    return np.minimum(d, TWO_PI - d)


@dataclass(frozen=True)
class CircleGrid:
    """Uniform nodes x_k = 2 pi k / N on [0, 2pi)."""

    n_points: int

    def __post_init__(self):
        if int(self.n_points) != self.n_points or self.n_points < 1:
            raise DomainError(f"n_points must be a positive integer, got {self.n_points!r}")

    @property
    def spacing(self) -> float:
        return TWO_PI / self.n_points

    @property
    def weight(self) -> float:
        """Quadrature weight per node under the normalized measure."""
        return 1.0 / self.n_points

    @property
    def length_weight(self) -> float:
        return TWO_PI / self.n_points

    @property
    def nodes(self) -> np.ndarray:
        return TWO_PI * np.arange(self.n_points) / self.n_points

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.n_points, self.weight)

    def integrate(self, f) -> float:
        """Integral of a grid function against dx / 2pi."""
        return float(np.mean(f))

    def refine(self, factor: int = 2) -> "CircleGrid":
        return CircleGrid(self.n_points * factor)


# ---------------------------------------------------------------------------
# circle functions for symmetric potentials A(x, y) = U(x - y)

def _u_zero(t):
    return np.zeros_like(t, dtype=float)


def _u_cos(t):
    return np.cos(t)


def _u_cos2(t):
    return np.cos(2.0 * t)


CIRCLE_FUNCTIONS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "zero": _u_zero,
    "cos": _u_cos,
    "cos2": _u_cos2,
}


def register_circle_function(name: str, func: Callable[[np.ndarray], np.ndarray]) -> None:
    """Add a 2pi-periodic function usable as ``{"kind": "symmetric_u", "u": name}``."""
    CIRCLE_FUNCTIONS[name] = func


# ---------------------------------------------------------------------------
# the step potential with nested rings around 0 (even) and pi (odd)

def ring_level(j: int) -> float:
    """Energy level c_j = 1/2 - 1/2^(j+1) on ring j (c_0 = 0 is the background)."""
    if j <= 0:
        return 0.0
    return 0.5 - 0.5 ** (j + 1)


def _log_half_width(epsilon: float, i: int) -> float:
    # log(eps^(3^i) / 2) without forming eps^(3^i)
    return (3 ** i) * math.log(epsilon) - math.log(2.0)


def _step_levels(d: np.ndarray, epsilon: float) -> np.ndarray:
    """U(d) for the step potential, d = x - y already reduced to [-pi, pi)."""
    out = np.zeros_like(d, dtype=float)
    dist0 = np.abs(d)
    dpi = np.where(d >= 0, d - math.pi, d + math.pi)  # offset from pi, in [-pi, pi)
    dist_pi = np.abs(dpi)

    # deepest interval index whose (half-open) window still contains the point
    depth0 = np.zeros(d.shape, dtype=int)
    depth_pi = np.zeros(d.shape, dtype=int)
    i = 1
    while True:
        lhw = _log_half_width(epsilon, i)
        if lhw < -745.0:  # half-width is zero in double precision
            break
        hw = epsilon ** (3 ** i) / 2.0
        if i % 2 == 0:
            inside = (d >= -hw) & (d < hw)
            depth0 = np.where(inside, i, depth0)
        else:
            inside = (dpi >= -hw) & (dpi < hw)
            depth_pi = np.where(inside, i, depth_pi)
        i += 1

    levels = np.array([ring_level(k) for k in range(i + 2)])
    out = np.where(depth0 > 0, levels[depth0], out)
    out = np.where(depth_pi > 0, levels[depth_pi], out)
    # ring centres take the supremum of the nested levels
    out = np.where(dist0 == 0.0, 0.5, out)
    out = np.where(dist_pi == 0.0, 0.5, out)
    return out


# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TwoSitePotential:
    """Interaction A(x, y) between consecutive sites, x the earlier one.

    kinds and parameters:

    * ``cosine_xy``: ``cos(y - x - alpha) + gamma cos(2x) + field cos(x)``
    * ``symmetric_u``: ``U(x - y)`` with ``u`` a registered circle function
      name, or ``fourier`` a list ``[a_1, a_2, ...]`` giving ``sum a_k cos(k t)``;
      ``scale`` multiplies U
    * ``tabulated``: ``values`` (N x N, row index = first argument), bilinear
      interpolation off the grid
    * ``step_vanenter``: ``epsilon``, the nested-ring step potential U(x - y)
    """

    kind: str
    params: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError(f"unknown potential kind {self.kind!r}; expected one of {KINDS}")
        p = dict(self.params)
        if self.kind == "step_vanenter":
            eps = float(p.get("epsilon", 0.1))
            if not 0.0 < eps < 1.0:
                raise DomainError(f"epsilon must lie in (0, 1), got {eps}")
            p["epsilon"] = eps
        elif self.kind == "tabulated":
            vals = np.array(p["values"], dtype=float)
            if vals.ndim != 2 or vals.shape[0] != vals.shape[1]:
                raise DomainError("tabulated values must be a square N x N table")
            if not np.all(np.isfinite(vals)):
                raise DomainError("tabulated values must be finite")
            vals.setflags(write=False)
            p["values"] = vals
        elif self.kind == "symmetric_u":
            if "fourier" not in p:
                name = p.get("u", "cos")
                if name not in CIRCLE_FUNCTIONS:
                    raise DomainError(f"unregistered circle function {name!r}")
                p["u"] = name
        object.__setattr__(self, "params", p)

    # -- constructors -----------------------------------------------------
    @classmethod
    def cosine_xy(cls, alpha: float = 0.0, gamma: float = 0.0, field: float = 0.0):
        return cls("cosine_xy", {"alpha": alpha, "gamma": gamma, "field": field})

    @classmethod
    def symmetric(cls, u: str = "cos", scale: float = 1.0):
        return cls("symmetric_u", {"u": u, "scale": scale})

    @classmethod
    def zero(cls):
        return cls("symmetric_u", {"u": "zero"})

    @classmethod
    def step(cls, epsilon: float):
        return cls("step_vanenter", {"epsilon": epsilon})

    @classmethod
    def tabulated(cls, values):
        return cls("tabulated", {"values": values})

    @classmethod
    def from_config(cls, cfg: Mapping[str, Any], base_dir: str | Path | None = None):
        """Build from a registry object such as ``{"kind": "cosine_xy", "alpha": 0.0}``."""
        cfg = dict(cfg)
        kind = cfg.pop("kind", None)
        if kind is None:
            raise DomainError("potential config needs a 'kind' field")
        if kind == "tabulated" and "values" not in cfg:
            path = Path(cfg.pop("path"))
            if base_dir is not None and not path.is_absolute():
                path = Path(base_dir) / path
            cfg["values"] = read_table_csv(path)
        return cls(kind, cfg)

    def to_config(self) -> dict:
        cfg = {"kind": self.kind}
        for k, v in self.params.items():
            cfg[k] = v.tolist() if isinstance(v, np.ndarray) else v
        return cfg

    # -- properties -------------------------------------------------------
    @property
    def is_symmetric(self) -> bool:
        """True when A(x, y) = U(x - y)."""
        if self.kind in ("symmetric_u", "step_vanenter"):
            return True
        if self.kind == "cosine_xy":
            return self.params.get("gamma", 0.0) == 0.0 and self.params.get("field", 0.0) == 0.0
        return False

    @property
    def is_continuous(self) -> bool:
        return self.kind != "step_vanenter"

    # -- evaluation ------------------------------------------------------
    def __call__(self, x, y):
        return evaluate(self, x, y)

    def __repr__(self):
        shown = {k: (f"<{v.shape[0]}x{v.shape[1]} table>" if isinstance(v, np.ndarray) else v)
                 for k, v in self.params.items()}
        return f"TwoSitePotential({self.kind!r}, {shown})"


def evaluate(potential: TwoSitePotential, x, y):
    """A(x, y); broadcasts over array arguments, wraps angles mod 2pi."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise DomainError("angles must be finite")
    x, y = np.broadcast_arrays(wrap(x), wrap(y))
    p = potential.params
    kind = potential.kind

    if kind == "cosine_xy":
        out = (np.cos(y - x - p.get("alpha", 0.0))
               + p.get("gamma", 0.0) * np.cos(2.0 * x)
               + p.get("field", 0.0) * np.cos(x))
    elif kind == "symmetric_u":
        t = x - y
        if "fourier" in p:
            out = np.zeros_like(t)
            for k, a in enumerate(p["fourier"], start=1):
                out = out + a * np.cos(k * t)
        else:
            out = CIRCLE_FUNCTIONS[p["u"]](t)
        out = p.get("scale", 1.0) * out
    elif kind == "tabulated":
        out = _bilinear(p["values"], x, y)
    else:
        d = x - y  # in (-2pi, 2pi); shift without rounding small differences
        d = np.where(d >= math.pi, d - TWO_PI, np.where(d < -math.pi, d + TWO_PI, d))
        out = _step_levels(d, p["epsilon"])

    out = np.asarray(out, dtype=float)
    return float(out) if out.ndim == 0 else out


def _bilinear(values: np.ndarray, x, y):
    n = values.shape[0]
    h = TWO_PI / n
    fx, fy = x / h, y / h
    i0 = np.floor(fx).astype(int) % n
    j0 = np.floor(fy).astype(int) % n
    tx, ty = fx - np.floor(fx), fy - np.floor(fy)
    i1, j1 = (i0 + 1) % n, (j0 + 1) % n
    return ((1 - tx) * (1 - ty) * values[i0, j0] + tx * (1 - ty) * values[i1, j0]
            + (1 - tx) * ty * values[i0, j1] + tx * ty * values[i1, j1])


def tabulate(potential: TwoSitePotential, grid: CircleGrid) -> np.ndarray:
    """N x N table T[i, j] = A(x_i, x_j)."""
    if potential.kind == "tabulated" and potential.params["values"].shape[0] == grid.n_points:
        return np.array(potential.params["values"], dtype=float)
    n = grid.n_points
    if potential.kind == "step_vanenter":
        # integer index differences keep the antipodal nodes exactly at pi
        k = (np.arange(n)[:, None] - np.arange(n)[None, :]) % n
        d = np.mod(TWO_PI * k / n + math.pi, TWO_PI) - math.pi
        d = np.where(k == 0, 0.0, d)
        d = np.where(2 * k == n, -math.pi, d)
        return _step_levels(d, potential.params["epsilon"])
    x = grid.nodes
    return np.asarray(evaluate(potential, x[:, None], x[None, :]), dtype=float)


# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HolderEstimate:
    exponent: float
    constant: float
    is_holder: bool = True


def holder_estimate(potential: TwoSitePotential, grid: CircleGrid, alpha: float,
                    chunk: int = 256) -> HolderEstimate:
    """Largest |A(p) - A(q)| / d(p, q)^alpha over all pairs of grid points p != q.

    d is the l1 sum of circle distances in the two coordinates.  The step
    potential is discontinuous and is flagged instead of sampled.
    """
    if not 0.0 < alpha <= 1.0:
        raise DomainError(f"Hölder exponent must lie in (0, 1], got {alpha}")
    if not potential.is_continuous:
        return HolderEstimate(alpha, math.inf, is_holder=False)

    n = grid.n_points
    x = grid.nodes
    vals = tabulate(potential, grid).ravel()
    ii, jj = np.divmod(np.arange(n * n), n)
    best = 0.0
    for start in range(0, n * n, chunk):
        sl = slice(start, start + chunk)
        dist = (circle_distance(x[ii[sl], None], x[ii][None, :])
                + circle_distance(x[jj[sl], None], x[jj][None, :]))
        diff = np.abs(vals[sl, None] - vals[None, :])
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(dist > 0, diff / dist ** alpha, 0.0)
        best = max(best, float(ratio.max()))
    return HolderEstimate(alpha, best, is_holder=True)


# ---------------------------------------------------------------------------
# tabulated CSV: first line is N, then N rows of N values

def read_table_csv(path: str | Path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    try:
        n = int(rows[0][0])
    except (IndexError, ValueError) as exc:
        raise DomainError(f"{path}: first row must hold the table size n") from exc
    body = rows[1:]
    if len(body) != n or any(len(r) != n for r in body):
        raise DomainError(f"{path}: expected {n} rows of {n} values")
    return np.array([[float(v) for v in r] for r in body])


def write_table_csv(path: str | Path, values: np.ndarray) -> None:
    values = np.asarray(values, dtype=float)
    n = values.shape[0]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([n])
        for row in values:
            w.writerow([repr(float(v)) for v in row])
