"""Closed-form staleness constants, convergence bound and relay-meeting probabilities.

``q_meet_monte_carlo`` and ``q_analytic_fixed_interval`` are two independent
routes to the same quantity: the probability that a tagged client meets at
least one semi-qualified relay within one search interval. The Monte Carlo
route samples peers directly; the analytic route evaluates the product formula
with closed-form per-slot qualification probabilities.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np

from .errors import AnalyticFormUnavailable, StepSizeViolatesTheorem


def C(theta: int, Theta: int, delta: int) -> int:
    """Upload staleness bound ``max(delta - theta, Theta)``."""
    _check_window(theta, Theta, delta)
    return max(delta - theta, Theta)


def D(omega: int, Omega: int, delta: int) -> int:
    """Download staleness bound ``max(delta - omega, Omega)``."""
    _check_window(omega, Omega, delta)
    return max(delta - omega, Omega)


def _check_window(lo, hi, delta):
    if not 0 <= lo <= hi <= delta:
        raise ValueError(f"need 0 <= lo <= hi <= delta, got ({lo}, {hi}, {delta})")


# ------------------------------------------------------------ timing trade-off

@dataclass
class ScanReport:
    delta: int
    pairs_scanned: int
    min_value: int
    argmin: List[Tuple[int, int]]
    violations: List[Tuple[str, Tuple[int, ...]]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        half = self.delta // 2
        return not self.violations and self.min_value == half and self.argmin == [(half, half)]


def _scan(fn, delta: int) -> ScanReport:
    half = delta // 2
    vals: Dict[Tuple[int, int], int] = {
        (lo, hi): fn(lo, hi, delta) for lo in range(delta + 1) for hi in range(lo, delta + 1)
    }
    violations = []
    for (lo, hi), v in vals.items():
        if (lo, hi + 1) in vals and vals[(lo, hi + 1)] < v:
            violations.append(("decreases-in-upper", (lo, hi, hi + 1)))
        if (lo + 1, hi) in vals and vals[(lo + 1, hi)] > v:
            violations.append(("increases-in-lower", (lo, lo + 1, hi)))
        if 2 * v < delta:
            violations.append(("below-half-delta", (lo, hi, v)))
    best = min(vals.values())
    argmin = sorted(k for k, v in vals.items() if v == best)
    if best != half or argmin != [(half, half)]:
        violations.append(("minimum-not-at-midpoint", (best, *argmin[0])))
    return ScanReport(delta, len(vals), best, argmin, violations)


def prop1_scan(delta: int) -> Dict[str, ScanReport]:
    """Exhaustively check the monotonicity and minimum of ``C`` and ``D`` over all windows."""
    if delta < 2 or delta % 2:
        raise ValueError("delta must be an even integer >= 2")
    return {"C": _scan(C, delta), "D": _scan(D, delta)}


# ------------------------------------------------------- convergence bound

@dataclass(frozen=True)
class BoundParams:
    theta: int
    Theta: int
    omega: int
    Omega: int
    delta: int
    L: float
    G: float
    sigma: float
    eta: float
    T: int
    N: int
    f0_minus_fstar: float

    def __post_init__(self):
        _check_window(self.theta, self.Theta, self.delta)
        _check_window(self.omega, self.Omega, self.delta)
        if self.L <= 0 or self.eta <= 0 or self.T < 1 or self.N < 1:
            raise ValueError("L, eta must be positive and T, N >= 1")
        if self.G < 0 or self.sigma < 0 or self.f0_minus_fstar < 0:
            raise ValueError("G, sigma and f0 - f* must be non-negative")

    @property
    def C(self) -> int:
        return C(self.theta, self.Theta, self.delta)

    @property
    def D(self) -> int:
        return D(self.omega, self.Omega, self.delta)

    def tuned_eta(self) -> float:
        """``sqrt(N) / (L sqrt(T))``."""
        return math.sqrt(self.N) / (self.L * math.sqrt(self.T))


def theorem1_terms(p: BoundParams) -> Tuple[float, float, float]:
    """The optimization, staleness and noise terms of the averaged gradient-norm bound."""
    if p.eta > 1.0 / p.L:
        raise StepSizeViolatesTheorem(f"eta={p.eta} exceeds 1/L={1.0 / p.L}")
    c, d = p.C, p.D
    first = 4.0 / (p.eta * p.T) * p.f0_minus_fstar
    second = 4.0 * (3 * d * d + 2 * c * c) * p.L ** 2 * p.eta ** 2 * p.G ** 2
    third = 2.0 * p.L * p.eta * p.sigma ** 2 / p.N
    return first, second, third


def theorem1_bound(p: BoundParams) -> float:
    return math.fsum(theorem1_terms(p))


def theorem1_tuned_terms(p: BoundParams) -> Tuple[float, float, float]:
    """Terms with ``eta = sqrt(N) / (L sqrt(T))`` substituted in closed form.

    Valid only when that ``eta`` satisfies ``eta <= 1/L``, i.e. ``T >= N``.
    """
    if p.T < p.N:
        raise StepSizeViolatesTheorem("tuned step size needs T >= N")
    c, d = p.C, p.D
    root = math.sqrt(p.N * p.T)
    first = 4.0 * p.L / root * p.f0_minus_fstar
    second = 4.0 * p.N / p.T * (3 * d * d + 2 * c * c) * p.G ** 2
    third = 2.0 * p.sigma ** 2 / root
    return first, second, third


def theorem1_tuned_bound(p: BoundParams) -> float:
    return math.fsum(theorem1_tuned_terms(p))


# ------------------------------------------------ relay-meeting probability

@dataclass(frozen=True)
class FixedInterval:
    interval: int

    def gap_pmf(self) -> Tuple[np.ndarray, np.ndarray]:
        return np.array([self.interval]), np.array([1.0])


@dataclass(frozen=True)
class RandomInterval:
    min_gap: int
    max_gap: int

    def gap_pmf(self) -> Tuple[np.ndarray, np.ndarray]:
        gaps = np.arange(self.min_gap, self.max_gap + 1)
        return gaps, np.full(len(gaps), 1.0 / len(gaps))


ScheduleFamily = Union[FixedInterval, RandomInterval]


def _validate_q_args(kind, rho, window):
    if kind not in ("upload", "download"):
        raise ValueError(f"kind must be 'upload' or 'download', got {kind!r}")
    if not 0.0 <= rho <= 1.0:
        raise ValueError("rho must lie in [0, 1]")
    lo, hi = window
    if not 0 <= lo <= hi:
        raise ValueError("window must satisfy 0 <= lo <= hi")
    return lo, hi


def q_meet_monte_carlo(
    kind: str,
    family: ScheduleFamily,
    rho: float,
    window: Tuple[int, int],
    trials: int = 100_000,
    seed: int = 0,
) -> Tuple[float, float]:
    """Fraction of simulated search intervals that meet a semi-qualified relay.

    In each slot of the window the tagged client meets a peer with probability
    ``rho``. Every peer is fresh: its position in its own meeting cycle is drawn
    from the stationary renewal distribution of ``family`` (gap drawn
    length-biased, then a uniform offset into that gap). Returns the estimate
    and its binomial standard error.
    """
    lo, hi = _validate_q_args(kind, rho, window)
    if trials < 1000:
        raise ValueError("trials must be >= 1000")
    rng = np.random.default_rng(seed)
    n_slots = hi - lo + 1
    gaps, pmf = family.gap_pmf()
    biased = gaps * pmf
    biased = biased / biased.sum()
    shape = (trials, n_slots)
    met = rng.random(shape) < rho
    gap = gaps[rng.choice(len(gaps), size=shape, p=biased)]
    since = np.floor(rng.random(shape) * gap).astype(np.int64)  # slots since peer's last meeting
    to_next = gap - since  # >= 1: the peer's next meeting excludes the current slot
    u = np.arange(n_slots)[None, :]  # slot offset inside the window
    if kind == "upload":
        # peer must reach the server by the window's end
        ok = to_next <= (n_slots - 1) - u
    else:
        # peer's model must be no older than the window's start
        ok = since <= u
    hit = (met & ok).any(axis=1)
    p = float(hit.mean())
    return p, math.sqrt(p * (1.0 - p) / trials)


def q_fixed_interval(kind: str, interval: int, r: int) -> float:
    """Per-contact semi-qualification probability for a uniform-phase peer.

    ``r`` is the remaining window length (upload) or the elapsed window
    length (download) in slots.
    """
    if kind == "upload":
        return min(max(r, 0), interval) / interval
    return min(max(r + 1, 0), interval) / interval


def q_analytic_fixed_interval(
    kind: str, family: Union[ScheduleFamily, int], rho: float, window: Tuple[int, int]
) -> float:
    """Closed-form meeting probability for the fixed-interval family.

    Upload: ``1 - prod_{t=0}^{L} (1 - rho * q_u(L - t))``; download:
    ``1 - prod_{t=0}^{L} (1 - rho * q_d(t))`` with ``L = hi - lo``.
    """
    lo, hi = _validate_q_args(kind, rho, window)
    if isinstance(family, int):
        family = FixedInterval(family)
    if not isinstance(family, FixedInterval):
        raise AnalyticFormUnavailable(
            "closed form exists only for fixed-interval schedules; use q_meet_monte_carlo"
        )
    length = hi - lo
    if kind == "upload":
        qs = [q_fixed_interval(kind, family.interval, length - t) for t in range(length + 1)]
    else:
        qs = [q_fixed_interval(kind, family.interval, t) for t in range(length + 1)]
    miss = 1.0
    for q in qs:
        miss *= 1.0 - rho * q
    return 1.0 - miss


@dataclass(frozen=True)
class QGridRow:
    kind: str
    interval: int
    rho: float
    lo: int
    hi: int
    q_estimate: float
    q_analytic: float
    std_error: float

    @property
    def z(self) -> float:
        return agreement_z(self.q_estimate, self.std_error, self.q_analytic, self.trials)

    trials: int = 0


def agreement_z(estimate: float, std_error: float, analytic: float, trials: int) -> float:
    """Deviation in standard errors, using the larger of the estimate's and the null's.

    An estimate of exactly 0 or 1 has zero sample standard error; the null
    standard error ``sqrt(Q (1 - Q) / n)`` keeps the comparison meaningful.
    """
    se_null = math.sqrt(analytic * (1.0 - analytic) / trials) if trials else 0.0
    se = max(std_error, se_null)
    diff = abs(estimate - analytic)
    if se == 0:
        return 0.0 if diff == 0 else math.inf
    return diff / se


QGRID_FIELDS = ("kind", "interval", "rho", "lo", "hi", "q_estimate", "q_analytic", "std_error")


def q_grid(
    kinds: Sequence[str] = ("upload", "download"),
    rhos: Sequence[float] = (0.1, 0.3, 0.7),
    windows: Sequence[Tuple[int, int]] = ((20, 30), (10, 40), (0, 50)),
    interval: int = 50,
    trials: int = 100_000,
    seed: int = 0,
) -> List[QGridRow]:
    rows = []
    fam = FixedInterval(interval)
    k = 0
    for kind in kinds:
        for rho in rhos:
            for w in windows:
                est, se = q_meet_monte_carlo(kind, fam, rho, w, trials, seed=seed + k)
                k += 1
                q = q_analytic_fixed_interval(kind, fam, rho, w)
                rows.append(QGridRow(kind, interval, rho, w[0], w[1], est, q, se, trials))
    return rows


def write_q_grid(rows: Sequence[QGridRow], fh) -> None:
    import csv

    w = csv.writer(fh, lineterminator="\n")
    w.writerow(QGRID_FIELDS)
    for r in rows:
        w.writerow((r.kind, r.interval, r.rho, r.lo, r.hi, repr(r.q_estimate), repr(r.q_analytic), repr(r.std_error)))


def bound_json(p: BoundParams) -> dict:
    first, second, third = theorem1_terms(p)
    out = {
        "params": {k: getattr(p, k) for k in p.__dataclass_fields__},
        "C": p.C,
        "D": p.D,
        "terms": [first, second, third],
        "bound": theorem1_bound(p),
    }
    if p.T >= p.N:
        out["tuned_eta"] = p.tuned_eta()
        out["tuned_terms"] = list(theorem1_tuned_terms(p))
        out["tuned_bound"] = theorem1_tuned_bound(p)
    return out
