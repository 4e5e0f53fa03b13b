"""Log-domain analysis of the nested-ring step potential.

Ring j >= 1 is the set of angle differences where the step potential equals
c_j = 1/2 - 1/2^(j+1).  Even rings sit around 0 and odd rings around pi; ring j
has normalized width (eps^(3^j) - eps^(3^(j+2))) / 2pi.  Ring 0 is the
background where the potential vanishes.  Widths are stored as logarithms and
eps^(3^j) is never formed, so every quantity below is exact to double
precision for any ring index up to 40.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .potentials import ring_level

LOG_2PI = math.log(2.0 * math.pi)
LOG3_LOG2 = math.log(3.0) / math.log(2.0)
MAX_RING = 40
TAIL_LIMIT = 1e-15


class DomainError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class RingTable:
    """Rings j = 0..J; index 0 is the background."""

    epsilon: float
    max_ring: int
    levels: np.ndarray
    log_widths: np.ndarray
    powers: tuple  # 3^j as exact integers

    @property
    def c_eps(self) -> float:
        return -math.log(self.epsilon)

    @property
    def indices(self) -> np.ndarray:
        return np.arange(self.max_ring + 1)

    def parity(self, j: int) -> str:
        if j == 0:
            return "background"
        return "even" if j % 2 == 0 else "odd"

    def log_tail_width(self) -> float:
        """log of the normalized width of everything inside ring J+1 and beyond."""
        j = self.max_ring
        a = (3 ** (j + 1)) * math.log(self.epsilon)
        b = (3 ** (j + 2)) * math.log(self.epsilon)
        return float(np.logaddexp(a, b)) - LOG_2PI


def _log1mexp(x: float) -> float:
    """log(1 - e^x) for x < 0."""
    return math.log(-math.expm1(x)) if x > -0.693 else math.log1p(-math.exp(x))


def build_rings(epsilon: float, max_ring: int) -> RingTable:
    if not 0.0 < epsilon < 1.0:
        raise DomainError(f"epsilon must lie in (0, 1), got {epsilon}")
    if not 1 <= max_ring <= MAX_RING:
        raise DomainError(f"max_ring must lie in [1, {MAX_RING}], got {max_ring}")
    le = math.log(epsilon)
    powers = tuple(3 ** j for j in range(max_ring + 3))
    levels = np.array([ring_level(j) for j in range(max_ring + 1)])
    lw = np.empty(max_ring + 1)
    for j in range(1, max_ring + 1):
        # log(eps^(3^j) - eps^(3^(j+2))) = 3^j log eps + log(1 - eps^(8 3^j))
        lw[j] = powers[j] * le + _log1mexp(8 * powers[j] * le) - LOG_2PI
    # background: everything outside I_1 + pi and I_2
    inner = float(np.logaddexp(3 * le, 9 * le)) - LOG_2PI
    lw[0] = _log1mexp(inner)
    return RingTable(float(epsilon), int(max_ring), levels, lw, powers)


@dataclass(frozen=True, eq=False)
class LogMassDistribution:
    beta: float
    log_mass: np.ndarray
    log_Z: float

    @property
    def masses(self) -> np.ndarray:
        return np.exp(self.log_mass)


def log_partition(rings: RingTable, beta: float) -> float:
    """log Z(beta) = log sum_j width_j e^{beta c_j} over rings 0..J."""
    return float(logsumexp(beta * rings.levels + rings.log_widths))


def ring_log_masses(rings: RingTable, beta: float) -> LogMassDistribution:
    z = log_partition(rings, beta)
    return LogMassDistribution(float(beta), beta * rings.levels + rings.log_widths - z, z)


def ring_mass(rings: RingTable, beta: float, j: int) -> float:
    """log Gibbs probability that the difference of two consecutive angles lies in ring j."""
    if not 0 <= j <= rings.max_ring:
        raise DomainError(f"ring index {j} outside 0..{rings.max_ring}")
    return float(beta * rings.levels[j] + rings.log_widths[j] - log_partition(rings, beta))


def lemma_log_masses(rings: RingTable, beta: float) -> np.ndarray:
    """Ring law restricted to rings j >= 1 (index 0 of the result is -inf)."""
    vals = beta * rings.levels[1:] + rings.log_widths[1:]
    return np.concatenate([[-np.inf], vals - logsumexp(vals)])


def log_tail_bound(rings: RingTable, beta: float) -> float:
    """log of an upper bound on the Gibbs mass beyond ring J."""
    return rings.log_tail_width() + beta / 2 - log_partition(rings, beta)


def theta_factor(rings: RingTable, j: int) -> float:
    """(1 - 9q) / (1 - q) with q = eps^(8 3^j), computed without forming q near 1."""
    lq = 8 * rings.powers[j] * math.log(rings.epsilon)
    if lq < -745.0:
        return 1.0
    q = math.exp(lq)
    return (1.0 - 9.0 * q) / (1.0 - q)


def beta_schedule(rings: RingTable, j: int) -> float:
    """beta_j = 6^j 2 C_eps (log 3 / log 2) theta(eps, j)."""
    if not 1 <= j <= rings.max_ring:
        raise DomainError(f"schedule index {j} outside 1..{rings.max_ring}")
    th = theta_factor(rings, j)
    if th <= 0:
        raise DomainError(f"theta(eps={rings.epsilon}, j={j}) = {th} <= 0; epsilon too large")
    return float(6 ** j) * 2.0 * rings.c_eps * LOG3_LOG2 * th


# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProfileTable:
    beta: float
    values: tuple  # f_beta(j), j = 1..J
    argmax: int


def f_beta_profile(rings: RingTable, beta: float) -> ProfileTable:
    """f_beta(j) = -beta / 2^(j+1) + log(eps^(3^j) - eps^(3^(j+2))) for j = 1..J."""
    if beta <= 0:
        raise DomainError("beta must be positive")
    j = np.arange(1, rings.max_ring + 1)
    vals = -beta / 2.0 ** (j + 1) + rings.log_widths[1:] + LOG_2PI
    return ProfileTable(float(beta), tuple(float(v) for v in vals), int(np.argmax(vals)) + 1)


def argmax_nondecreasing(rings: RingTable, betas) -> bool:
    arg = [f_beta_profile(rings, b).argmax for b in sorted(betas)]
    return all(b >= a for a, b in zip(arg, arg[1:]))


@dataclass(frozen=True)
class ConcentrationReport:
    j: int
    beta: float
    delta: float
    gibbs_mass: float  # ring j under the full Gibbs law, background included
    lemma_mass: float  # ring j under the law on rings >= 1
    off_ring_mass: float  # 1 - mass of the measure selected by `measure`
    tail_bound: float
    measure: str
    passed: bool


def concentration_check(rings: RingTable, j: int, delta: float,
                        measure: str = "gibbs") -> ConcentrationReport:
    """Mass outside ring j at beta_j, compared with delta.

    ``measure="gibbs"`` uses the full Gibbs distribution of the difference,
    background included.  ``measure="lemma"`` uses the distribution over rings
    j >= 1 only, which is the setting of the concentration lemma.
    """
    if measure not in ("gibbs", "lemma"):
        raise ValueError("measure must be 'gibbs' or 'lemma'")
    beta = beta_schedule(rings, j)
    gibbs = ring_log_masses(rings, beta).log_mass
    lemma = lemma_log_masses(rings, beta)
    chosen = gibbs if measure == "gibbs" else lemma
    others = np.delete(chosen, j)
    off = float(np.exp(logsumexp(others))) if np.isfinite(others).any() else 0.0
    tail = math.exp(log_tail_bound(rings, beta))
    return ConcentrationReport(j, beta, float(delta), float(np.exp(gibbs[j])), float(np.exp(lemma[j])),
                               off, tail, measure, off < delta)


def empirical_epsilon_delta(delta: float, max_ring: int = 6, measure: str = "gibbs",
                            lo: float = 1e-6, hi: float = 0.99, iters: int = 60) -> float:
    """Largest eps (by bisection) for which concentration passes at every j <= max_ring.

    Assumes the pass region is an interval (0, eps_delta), which holds on every
    sweep we ran; returns ``lo`` if even the smallest epsilon fails.
    """
    def ok(eps):
        rings = build_rings(eps, max_ring)
        try:
            return all(concentration_check(rings, j, delta, measure).passed
                       for j in range(1, max_ring + 1))
        except DomainError:
            return False

    if not ok(lo):
        return lo
    if ok(hi):
        return hi
    for _ in range(iters):
        mid = math.sqrt(lo * hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo


def _bisect_c(fn, target: float, c_lo: float = 1e-6, c_hi: float = 1e3) -> float:
    """Smallest C with fn(C) < target, fn decreasing."""
    if fn(c_hi) >= target:
        return math.inf
    for _ in range(200):
        mid = 0.5 * (c_lo + c_hi)
        if fn(mid) < target:
            c_hi = mid
        else:
            c_lo = mid
    return c_hi


@dataclass(frozen=True)
class AnalyticBounds:
    delta: float
    eps_upper_tail: float  # from the bound on rings above j
    eps_theta: float  # from the theta(eps, j) > log2/log3 margin condition
    eps_lower_tail: float  # from the bound on rings below j
    eps_delta: float


def analytic_epsilon_bounds(delta: float) -> AnalyticBounds:
    """Epsilon thresholds from the three sufficient inequalities of the concentration proof."""
    r = LOG3_LOG2

    def upper(c):
        return math.exp(1 - 3 * c * (2 - r)) + math.exp(1 - 6 * c) / (-math.expm1(-3 * c))

    a_const = (math.log(3) - math.log(2)) / (2 * math.log(2))

    def lower(c):
        return math.exp(-3 * a_const * c) + math.exp(-6 * c) / (-math.expm1(-3 * c))

    eps0 = math.exp(-_bisect_c(upper, delta / 2))
    # theta * r - 1 > (r - 1)/2 at j = 1 (theta increases with j): q < (1 - t)/(9 - t)
    t = (r + 1) / (2 * r)
    eps1 = ((1 - t) / (9 - t)) ** (1.0 / 24.0)
    eps2 = math.exp(-_bisect_c(lower, delta / 2))
    return AnalyticBounds(float(delta), eps0, eps1, eps2, min(eps0, eps1, eps2))


# ---------------------------------------------------------------------------
# band masses and the oscillation certificate

def _band_log_mass(rings: RingTable, beta: float, kappa: float, center: str) -> float:
    """log Gibbs mass of {difference within kappa of 0 (center='zero') or of pi}.

    Rings of the matching parity lie inside the band once their outer
    half-width is <= kappa; a partially covered ring contributes the covered
    fraction.  The background contributes the band length minus the ring
    widths it contains.  Opposite-parity rings are never inside since kappa < pi/2.
    """
    le = math.log(rings.epsilon)
    log_z = log_partition(rings, beta)
    parity = 0 if center == "zero" else 1
    terms = []
    covered_log = []  # log normalized length of ring material inside the band
    for j in range(1, rings.max_ring + 1):
        if j % 2 != parity:
            continue
        outer = rings.powers[j] * le  # log of full interval length eps^(3^j)
        inner = rings.powers[j + 2] * le
        lim = math.log(2 * kappa)
        if outer <= lim:
            lw = rings.log_widths[j]
        elif inner < lim:
            lw = _log_diff(lim, inner) - LOG_2PI
        else:
            continue
        terms.append(beta * rings.levels[j] + lw)
        covered_log.append(lw)
    # nested tail beyond J of this parity is bounded separately and ignored here
    band = math.log(2 * kappa) - LOG_2PI
    other = float(logsumexp(covered_log)) if covered_log else -math.inf
    # the opposite family's first interval is never inside a band of half-width < pi/2
    if other < band - 1e-12:  # otherwise the band lies inside ring material only
        terms.append(_log_diff(band, other))  # background level is 0
    return float(logsumexp(terms)) - log_z


def _log_diff(a: float, b: float) -> float:
    """log(e^a - e^b) for a > b."""
    if b == -math.inf:
        return a
    return a + _log1mexp(b - a)


def parity_log_masses(rings: RingTable, beta: float) -> tuple[float, float]:
    """(log even-ring mass, log odd-ring mass), background excluded."""
    lm = ring_log_masses(rings, beta).log_mass
    even = lm[2::2]
    odd = lm[1::2]
    return (float(logsumexp(even)) if even.size else -math.inf,
            float(logsumexp(odd)) if odd.size else -math.inf)


@dataclass(frozen=True)
class NonSelectionCertificate:
    epsilon: float
    delta: float
    kappa: float
    j_start: int
    j_max: int
    betas: tuple
    ferro_masses: tuple
    antiferro_masses: tuple
    even_ring_masses: tuple
    odd_ring_masses: tuple
    tail_bounds: tuple
    oscillation: float
    verdict: str

    def to_json(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "delta": self.delta,
            "kappa": self.kappa,
            "j_start": self.j_start,
            "j_max": self.j_max,
            "betas": list(self.betas),
            "ferro_masses": list(self.ferro_masses),
            "antiferro_masses": list(self.antiferro_masses),
            "even_ring_masses": list(self.even_ring_masses),
            "odd_ring_masses": list(self.odd_ring_masses),
            "tail_bounds": list(self.tail_bounds),
            "oscillation": self.oscillation,
            "verdict": self.verdict,
        }


def nonselection_demo(rings: RingTable, j_max: int, kappa: float, delta: float = 0.01,
                      j_start: int = 1) -> NonSelectionCertificate:
    """Ferromagnetic and antiferromagnetic band masses along beta_{j_start}..beta_{j_max}.

    F(beta) is the Gibbs mass of |x_0 - x_1| <= kappa (mod 2pi), AF(beta) the
    mass of |x_0 - x_1 - pi| <= kappa.  The certificate requires F > 1 - delta
    at even j and AF > 1 - delta at odd j, with both parities present and the
    truncation tail below 1e-15.
    """
    if not 0.0 < kappa < math.pi / 2:
        raise DomainError(f"band half-width kappa must lie in (0, pi/2), got {kappa}")
    if not 1 <= j_start <= j_max <= rings.max_ring:
        raise DomainError(f"need 1 <= j_start <= j_max <= {rings.max_ring}")
    betas, fm, afm, ev, od, tails = [], [], [], [], [], []
    for j in range(j_start, j_max + 1):
        b = beta_schedule(rings, j)
        betas.append(b)
        fm.append(math.exp(_band_log_mass(rings, b, kappa, "zero")))
        afm.append(math.exp(_band_log_mass(rings, b, kappa, "pi")))
        e, o = parity_log_masses(rings, b)
        ev.append(math.exp(e))
        od.append(math.exp(o))
        tails.append(math.exp(log_tail_bound(rings, b)))
    js = range(j_start, j_max + 1)
    f_even = [f for j, f in zip(js, fm) if j % 2 == 0]
    af_odd = [a for j, a in zip(js, afm) if j % 2 == 1]
    osc = (max(fm) - min(fm)) if fm else 0.0
    conclusive = bool(f_even) and bool(af_odd) and delta < 0.5
    ok = (conclusive and all(f > 1 - delta for f in f_even) and all(a > 1 - delta for a in af_odd)
          and max(tails) < TAIL_LIMIT)
    verdict = "no-selection-demonstrated" if ok else "inconclusive"
    return NonSelectionCertificate(rings.epsilon, float(delta), float(kappa), j_start, j_max,
                                   tuple(betas), tuple(fm), tuple(afm), tuple(ev), tuple(od),
                                   tuple(tails), float(osc), verdict)
