"""Command-line entry point: ``circlegibbs <command> --config run.json [--out DIR] [--seed N]``.

Exit codes: 0 success, 1 a numerical check failed, 2 configuration error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import thermo, transfer, vanenter, zerotemp
from .potentials import CIRCLE_FUNCTIONS, CircleGrid, DomainError, TwoSitePotential

COMMANDS = ("spectrum", "markov", "sample", "pressure", "subaction", "zerotemp", "ldp", "dlr",
            "vanenter")
CONVENTIONS = "measure=dx/2pi;psi_normalization=mean1;widths=normalized"


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# config handling

def load_config(path: str) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return cfg


def _field(cfg: dict, name: str, kind: type | tuple, default: Any = ...) -> Any:
    if name not in cfg:
        if default is ...:
            raise ConfigError(f"missing required field '{name}'")
        return default
    val = cfg[name]
    if kind is float and isinstance(val, int) and not isinstance(val, bool):
        val = float(val)
    if not isinstance(val, kind) or isinstance(val, bool) and kind is not bool:
        raise ConfigError(f"field '{name}' has the wrong type: {val!r}")
    return val


def grid_from(cfg: dict) -> CircleGrid:
    n = _field(cfg, "grid_n", int, 256)
    if n < 32 or n > 4096 or n & (n - 1):
        raise ConfigError(f"field 'grid_n' must be a power of two in [32, 4096], got {n}")
    return CircleGrid(n)


def potential_from(cfg: dict, base_dir: Path) -> TwoSitePotential:
    spec = _field(cfg, "potential", dict)
    try:
        return TwoSitePotential.from_config(spec, base_dir)
    except (DomainError, KeyError, OSError) as exc:
        raise ConfigError(f"field 'potential': {exc}") from exc


def betas_from(cfg: dict) -> list[float]:
    if "beta_sweep" in cfg:
        sweep = _field(cfg, "beta_sweep", list)
        if not sweep or not all(isinstance(b, (int, float)) and not isinstance(b, bool) for b in sweep):
            raise ConfigError("field 'beta_sweep' must be a nonempty list of numbers")
        betas = [float(b) for b in sweep]
    else:
        betas = [_field(cfg, "beta", float, 1.0)]
    if not all(math.isfinite(b) and b >= 0 for b in betas):
        raise ConfigError("inverse temperatures must be finite and nonnegative")
    return betas


def config_hash(cfg: dict) -> str:
    """Hash of the config without its output location."""
    cfg = {k: v for k, v in cfg.items() if k != "output_dir"}
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()).hexdigest()[:16]


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, str):
        return v
    return repr(float(v))


class Writer:
    """Writes outputs with a commented metadata line; JSON gets a metadata key."""

    def __init__(self, out: Path, command: str, cfg: dict, grid_n: int | None):
        self.out = out
        out.mkdir(parents=True, exist_ok=True)
        self.meta = {"command": command, "config_sha256": config_hash(cfg),
                     "grid_n": grid_n, "conventions": CONVENTIONS}
        self.files: list[str] = []

    def header(self) -> str:
        m = self.meta
        return (f"# circlegibbs command={m['command']} config_sha256={m['config_sha256']} "
                f"grid_n={m['grid_n']} {m['conventions']}\n")

    def csv(self, name: str, columns: list[str], rows) -> None:
        lines = [self.header(), ",".join(columns) + "\n"]
        lines += [",".join(_fmt(v) for v in row) + "\n" for row in rows]
        (self.out / name).write_text("".join(lines))
        self.files.append(name)

    def json(self, name: str, payload: dict) -> None:
        data = {"metadata": self.meta, **payload}
        (self.out / name).write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n")
        self.files.append(name)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _pool_map(cfg: dict, fn: Callable, items: list) -> list:
    workers = _field(cfg, "workers", int, 1)
    if workers < 1:
        raise ConfigError("field 'workers' must be at least 1")
    if workers == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _solve(pot, grid, beta, gap=True):
    try:
        return transfer.solve_spectral(pot, grid, beta, gap=gap)
    except transfer.OverflowGuardError as exc:
        raise ConfigError(str(exc)) from exc


def _observable(cfg: dict, grid: CircleGrid) -> np.ndarray:
    name = _field(cfg, "observable", str, "cos")
    if name not in CIRCLE_FUNCTIONS and name != "sin":
        raise ConfigError(f"field 'observable': unknown function {name!r}")
    return np.sin(grid.nodes) if name == "sin" else CIRCLE_FUNCTIONS[name](grid.nodes)


# ---------------------------------------------------------------------------
# commands; each returns an exit status

def cmd_spectrum(cfg: dict, w: Writer, base: Path) -> int:
    pot, grid = potential_from(cfg, base), grid_from(cfg)
    betas = betas_from(cfg)
    sols = _pool_map(cfg, lambda b: _solve(pot, grid, b), betas)
    w.csv("spectral.csv", ["beta", "lambda", "log_lambda", "gap_ratio"],
          [(s.beta, s.lam, s.log_lambda, s.gap_ratio) for s in sols])
    s = sols[-1]
    w.csv("eigfun.csv", ["angle", "psi", "psi_bar", "theta"],
          zip(grid.nodes, s.psi, s.psi_bar, s.theta))
    return 0


def _parse_boxes(raw, field: str) -> thermo.CylinderSpec:
    try:
        return thermo.CylinderSpec(tuple(tuple(b) for b in raw))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"field '{field}': {exc}") from exc


def cmd_markov(cfg: dict, w: Writer, base: Path) -> int:
    pot, grid = potential_from(cfg, base), grid_from(cfg)
    beta = betas_from(cfg)[0]
    sol = _solve(pot, grid, beta, gap=False)
    rows = np.abs(sol.kernel.mean(axis=1) - 1.0).max()
    stat = np.abs(sol.theta - (sol.theta @ sol.kernel) * grid.weight).max()
    cylinders = []
    for raw in _field(cfg, "cylinders", list, [[[0.0, math.pi], [0.0, math.pi]]]):
        cyl = _parse_boxes(raw, "cylinders")
        try:
            p = thermo.cylinder_measure(sol, cyl)
        except ValueError as exc:
            raise ConfigError(f"field 'cylinders': {exc}") from exc
        cylinders.append({"cylinder": [list(b) for b in cyl.boxes], "probability": p})
    w.csv("stationary.csv", ["angle", "theta"], zip(grid.nodes, sol.theta))
    ok = rows < 1e-10 and stat < 1e-9
    w.json("measure.json", {"beta": beta, "measures": cylinders,
                            "row_stochasticity_residual": rows, "stationarity_residual": stat,
                            "checks_passed": ok})
    return 0 if ok else 1


def cmd_sample(cfg: dict, w: Writer, base: Path) -> int:
    pot, grid = potential_from(cfg, base), grid_from(cfg)
    beta = betas_from(cfg)[0]
    n_steps = _field(cfg, "n_steps", int, 10000)
    if n_steps < 1:
        raise ConfigError("field 'n_steps' must be positive")
    seed = _field(cfg, "seed", int, 0)
    sample = thermo.sample_chain(_solve(pot, grid, beta, gap=False), n_steps, seed)
    w.meta["seed"] = seed
    w.csv("chain.csv", ["step", "angle"], enumerate(sample.states))
    return 0


def cmd_pressure(cfg: dict, w: Writer, base: Path) -> int:
    pot, grid = potential_from(cfg, base), grid_from(cfg)
    betas = betas_from(cfg)

    def one(b):
        sol = _solve(pot, grid, b, gap=False)
        rep = thermo.pressure(sol)
        return (b, rep.log_lambda, rep.energy, rep.entropy, rep.discrepancy, thermo.entropy_h(sol))

    rows = _pool_map(cfg, one, betas)
    w.csv("pressure.csv", ["beta", "log_lambda", "energy", "entropy", "discrepancy", "entropy_h"], rows)
    return 0 if all(abs(r[4]) < 1e-8 for r in rows) else 1


def cmd_subaction(cfg: dict, w: Writer, base: Path) -> int:
    pot, grid = potential_from(cfg, base), grid_from(cfg)
    method = _field(cfg, "method", str, "discounted")
    if method not in ("discounted", "lp_dual"):
        raise ConfigError(f"field 'method' must be 'discounted' or 'lp_dual', got {method!r}")
    tol = _field(cfg, "tol", float, 1e-9)
    sub = zerotemp.calibrated_subaction(pot, grid, method, tol=tol)
    w.csv("subaction.csv", ["angle", "u_value"], zip(grid.nodes, sub.values))
    w.json("subaction.json", {"m_value": sub.m_value, "residual": sub.residual, "method": method,
                              "diagnostics": sub.diagnostics})
    return 0 if sub.residual <= max(tol, 1e-6) else 1


def cmd_zerotemp(cfg: dict, w: Writer, base: Path) -> int:
    pot, grid = potential_from(cfg, base), grid_from(cfg)
    if pot.kind == "step_vanenter":
        raise ConfigError("zerotemp needs a potential without the step kind; use the vanenter command")
    m_cycle, cycle = zerotemp.max_ergodic_average(pot, grid)
    m_dual = zerotemp.dual_value(pot, grid)
    disc = zerotemp.calibrated_subaction(pot, grid, "discounted")
    lp = zerotemp.calibrated_subaction(pot, grid, "lp_dual")
    betas = betas_from(cfg) if ("beta" in cfg or "beta_sweep" in cfg) else [12.5, 25.0, 50.0, 100.0]
    try:
        lim = zerotemp.eigenvalue_limit(pot, grid, betas)
    except transfer.OverflowGuardError as exc:
        raise ConfigError(str(exc)) from exc
    spread = max(abs(m_cycle - m_dual), abs(m_cycle - disc.m_value), abs(m_cycle - lp.m_value))
    m_half = zerotemp.max_ergodic_average(pot, CircleGrid(grid.n_points // 2))[0]
    w.csv("subaction.csv", ["angle", "u_value"], zip(grid.nodes, disc.values))
    w.csv("eigenvalue_limit.csv", ["beta", "scaled_log_lambda", "gap"],
          zip(lim.betas, lim.scaled_log_lambda, lim.gaps))
    ok = spread <= 1e-6
    w.json("zerotemp.json", {
        "m_value": m_cycle, "residual": disc.residual, "method": "discounted",
        "diagnostics": {"m_max_mean_cycle": m_cycle, "m_dual_lp": m_dual,
                        "m_discounted": disc.m_value, "m_lp_subaction": lp.m_value,
                        "lp_subaction_residual": lp.residual, "method_spread": spread,
                        "optimal_cycle": cycle, "gap_decreasing": lim.gap_decreasing,
                        "m_half_grid": m_half, "m_grid_difference": m_cycle - m_half},
    })
    if not ok:
        print(f"zerotemp: methods disagree by {spread:.3e} > 1e-6", file=sys.stderr)
    return 0 if ok else 1


def cmd_ldp(cfg: dict, w: Writer, base: Path) -> int:
    pot, grid = potential_from(cfg, base), grid_from(cfg)
    cyl = _parse_boxes(_field(cfg, "cylinder", list, [[math.pi - 0.3, math.pi + 0.3]] * 2), "cylinder")
    betas = betas_from(cfg) if ("beta" in cfg or "beta_sweep" in cfg) else [10.0, 20.0, 40.0]
    sub = zerotemp.calibrated_subaction(pot, grid, "discounted")
    lp = zerotemp.calibrated_subaction(pot, grid, "lp_dual")
    centred = (sub.values - sub.values.mean()) - (lp.values - lp.values.mean())
    inf_i = zerotemp.box_rate_infimum(sub, cyl.boxes)

    def one(b):
        sol = _solve(pot, grid, b, gap=False)
        p = thermo.cylinder_measure(sol, cyl)
        return (b, p, math.log(p) / b if p > 0 else -math.inf, -inf_i)

    rows = _pool_map(cfg, one, betas)
    w.csv("ldp.csv", ["beta", "probability", "scaled_log_probability", "neg_inf_rate"], rows)
    w.json("ldp.json", {"cylinder": [list(b) for b in cyl.boxes], "inf_rate": inf_i,
                        "m_value": sub.m_value, "subaction_residual": sub.residual,
                        "subaction_method_distance": float(np.max(np.abs(centred)))})
    return 0


def cmd_dlr(cfg: dict, w: Writer, base: Path) -> int:
    pot, grid = potential_from(cfg, base), grid_from(cfg)
    beta = betas_from(cfg)[0]
    bounds = _field(cfg, "boundaries", list, [0.0, math.pi])
    if len(bounds) < 2 or not all(isinstance(b, (int, float)) for b in bounds):
        raise ConfigError("field 'boundaries' needs at least two angles")
    n_max = _field(cfg, "n", int, 30)
    if n_max < 1:
        raise ConfigError("field 'n' must be at least 1")
    f = _observable(cfg, grid)
    sol = _solve(pot, grid, beta)
    rows, worst = [], []
    for n in range(1, n_max + 1):
        vals = [transfer.finite_volume_expectation(pot, grid, beta, f, n, float(b), sol=sol) for b in bounds]
        rows += [(n, float(b), v) for b, v in zip(bounds, vals)]
        worst.append(max(vals) - min(vals))
    w.csv("dlr.csv", ["n", "boundary", "expectation"], rows)
    bound = 10 * sol.gap_ratio ** n_max * float(np.max(np.abs(f)))
    limit = float(np.mean(f * sol.theta))
    ok = n_max < 5 or worst[-1] <= bound
    w.json("dlr.json", {"beta": beta, "n": n_max, "max_boundary_difference": worst[-1],
                        "gap_ratio": sol.gap_ratio, "bound": bound, "gibbs_limit": limit,
                        "checks_passed": ok})
    return 0 if ok else 1


def cmd_vanenter(cfg: dict, w: Writer, base: Path) -> int:
    eps = _field(cfg, "epsilon", float)
    delta = _field(cfg, "delta", float)
    j_max = _field(cfg, "j_max", int)
    j_start = _field(cfg, "j_start", int, 1)
    kappa = _field(cfg, "kappa", float, math.pi / 4)
    max_ring = _field(cfg, "max_ring", int, min(vanenter.MAX_RING, max(j_max + 4, 10)))
    try:
        rings = vanenter.build_rings(eps, max_ring)
        cert = vanenter.nonselection_demo(rings, j_max, kappa, delta, j_start)
    except vanenter.DomainError as exc:
        raise ConfigError(str(exc)) from exc
    w.csv("rings.csv", ["j", "c_j", "log_width"],
          zip(rings.indices, rings.levels, rings.log_widths))
    mass_rows, sched_rows = [], []
    for j, b in zip(range(j_start, j_max + 1), cert.betas):
        dist = vanenter.ring_log_masses(rings, b)
        mass_rows += [(b, k, lm) for k, lm in enumerate(dist.log_mass)]
        rep = vanenter.concentration_check(rings, j, delta)
        sched_rows.append((j, b, rep.gibbs_mass, rep.passed))
    w.csv("masses.csv", ["beta", "j", "log_mass"], mass_rows)
    w.csv("schedule.csv", ["j", "beta_j", "concentration", "pass"], sched_rows)
    w.json("certificate.json", cert.to_json())
    if max(cert.tail_bounds) >= vanenter.TAIL_LIMIT:
        print(f"vanenter: truncation tail bound {max(cert.tail_bounds):.3e} too large; raise max_ring",
              file=sys.stderr)
    return 0 if cert.verdict == "no-selection-demonstrated" else 1


HANDLERS = {name: globals()[f"cmd_{name}"] for name in COMMANDS}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="circlegibbs", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="JSON run configuration")
        s.add_argument("--out", help="output directory (overrides output_dir)")
        s.add_argument("--seed", type=int, help="RNG seed (overrides seed)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg["seed"] = args.seed
        out = Path(args.out) if args.out else Path(_field(cfg, "output_dir", str, "."))
        grid_n = cfg.get("grid_n") if args.command != "vanenter" else None
        writer = Writer(out, args.command, cfg, grid_n)
        return HANDLERS[args.command](cfg, writer, Path(args.config).resolve().parent)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
