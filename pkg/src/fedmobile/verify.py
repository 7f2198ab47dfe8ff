"""Invariant suites behind ``fedmobile verify``.

Each suite returns a :class:`SuiteResult`; any exception inside a suite is a
failure of that suite, never of the whole report.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional

from . import analysis as A
from .config import ExperimentConfig
from .errors import ProtocolViolation
from .experiment import build_world, run_variant
from .learning import gen_synthetic, gradient_probes
from .simulator import VariantKind, VariantSpec

CONSERVATION_TOL = 1e-9
GRADIENT_TOL = 1e-5
Q_SIGMAS = 3.0


@dataclass
class SuiteResult:
    name: str
    ok: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"{'PASS' if self.ok else 'FAIL'}  {self.name:<18} {self.detail}  ({self.seconds:.1f}s)"


@dataclass
class VerifyContext:
    """Shared parameters and a run cache so suites reuse each other's runs."""

    horizon: int = 300
    seed: int = 0
    inject_fault: Optional[str] = None
    _runs: Dict[str, object] = field(default_factory=dict)

    def protocol_config(self) -> ExperimentConfig:
        # rho=1 makes every slot a contact slot, so relays fire often
        return ExperimentConfig(rho=1.0, horizon=self.horizon, seeds=(self.seed,))

    def protocol_variants(self) -> List[VariantSpec]:
        out = [VariantSpec(k) for k in VariantKind]
        out.append(VariantSpec(VariantKind.FEDMOBILE, k_up=3, k_down=3, name="FEDMOBILE_K3"))
        return out

    def protocol_runs(self) -> Dict[str, object]:
        """Label -> RunMetrics, or the raised ProtocolViolation."""
        if not self._runs:
            cfg = self.protocol_config()
            world = build_world(cfg, self.seed)
            for v in self.protocol_variants():
                try:
                    self._runs[v.label] = run_variant(
                        cfg, v, self.seed, world, audit=True, inject_fault=self.inject_fault
                    )
                except ProtocolViolation as exc:
                    self._runs[v.label] = exc
        return self._runs


def suite_conservation(ctx: VerifyContext) -> SuiteResult:
    worst, bad = 0.0, []
    for label, m in ctx.protocol_runs().items():
        if isinstance(m, Exception):
            bad.append(f"{label}: {m}")
            continue
        worst = max(worst, m.conservation_max, m.shadow_log_err)
        if not m.conservation_max <= CONSERVATION_TOL:
            bad.append(f"{label}: rel err {m.conservation_max:.2e}")
    if bad:
        return SuiteResult("conservation", False, "; ".join(bad))
    return SuiteResult("conservation", True, f"{len(ctx.protocol_runs())} runs, max rel err {worst:.2e} <= {CONSERVATION_TOL:g}")


def suite_exactly_once(ctx: VerifyContext) -> SuiteResult:
    bad, relays = [], 0
    for label, m in ctx.protocol_runs().items():
        if isinstance(m, Exception):
            bad.append(f"{label}: {m}")
        elif not m.exactly_once:
            bad.append(f"{label}: coverage does not tile the computed steps")
        else:
            relays += int(m.upload_relays.sum())
    if bad:
        return SuiteResult("exactly_once", False, "; ".join(bad))
    return SuiteResult("exactly_once", True, f"{len(ctx.protocol_runs())} runs, {relays} upload relays, zero duplicates")


def staleness_runs(seed: int = 0, horizon: int = 1000):
    """Midpoint windows (the canonical check) plus [20, 30] windows where relays fire."""
    cfg = ExperimentConfig(rho=1.0, horizon=horizon, seeds=(seed,), audit=False)
    world = build_world(cfg, seed)
    specs = [
        VariantSpec(VariantKind.FEDMOBILE, 25, 25, 25, 25, name="mid"),
        VariantSpec(VariantKind.FEDMOBILE, 20, 30, 20, 30, name="w20-30"),
        VariantSpec(VariantKind.FEDMOBILE, 20, 30, 20, 30, k_up=3, k_down=3, name="w20-30_K3"),
    ]
    return {v.label: run_variant(cfg, v, seed, world, strict=False) for v in specs}


def suite_staleness_bounds(ctx: VerifyContext) -> SuiteResult:
    parts, ok = [], True
    for label, m in staleness_runs(ctx.seed).items():
        C, D = m.bounds
        v1, v2 = len(m.upload_bound_violations), len(m.download_bound_violations)
        ok &= v1 == 0 and v2 == 0
        parts.append(
            f"{label}: C={C} D={D} checked up={int(m.upload_flag.sum())} down={int(m.download_flag.sum())} "
            f"violations={v1}/{v2}"
        )
    return SuiteResult("staleness_bounds", ok, "; ".join(parts))


def suite_prop1(ctx: VerifyContext) -> SuiteResult:
    rep = A.prop1_scan(50)
    c, d = rep["C"], rep["D"]
    ok = c.ok and d.ok and c.pairs_scanned == d.pairs_scanned == 1326
    return SuiteResult(
        "prop1", ok,
        f"{c.pairs_scanned} pairs scanned, min C={c.min_value} at {c.argmin}, min D={d.min_value} at {d.argmin}, "
        f"counterexamples={len(c.violations) + len(d.violations)}",
    )


def suite_q_oracle(ctx: VerifyContext) -> SuiteResult:
    rows = A.q_grid(seed=ctx.seed)
    zs = [r.z for r in rows]
    bad = [f"{r.kind} rho={r.rho} [{r.lo},{r.hi}] z={r.z:.2f}" for r in rows if r.z > Q_SIGMAS]
    return SuiteResult(
        "q_oracle", not bad,
        f"{len(rows)} grid points, max |z|={max(zs):.2f}" + (f"; {'; '.join(bad)}" if bad else ""),
    )


def suite_rho0_equivalence(ctx: VerifyContext) -> SuiteResult:
    cfg = ExperimentConfig(rho=0.0, horizon=ctx.horizon, seeds=(ctx.seed,), audit=False)
    world = build_world(cfg, ctx.seed)
    a = run_variant(cfg, VariantSpec(VariantKind.ASYNC), ctx.seed, world).loss
    f = run_variant(cfg, VariantSpec(VariantKind.FEDMOBILE), ctx.seed, world).loss
    same = a.tobytes() == f.tobytes()
    return SuiteResult("rho0_equivalence", same, f"{len(a)} slots, bit-identical={same}")


def suite_gradient(ctx: VerifyContext) -> SuiteResult:
    task = gen_synthetic(10, 200, 40, 0.1, ctx.seed)
    errs = gradient_probes(task, 100, 5, ctx.seed)
    return SuiteResult("gradient", bool(errs.max() <= GRADIENT_TOL), f"100 probes, max rel err {errs.max():.2e}")


def suite_convergence_bound(ctx: VerifyContext) -> SuiteResult:
    p = A.BoundParams(25, 25, 25, 25, 50, L=1.0, G=1.0, sigma=1.0, eta=1.0, T=100, N=10, f0_minus_fstar=1.0)
    b = A.theorem1_bound(p)
    small = replace(p, T=1000, N=10)
    big = replace(p, T=4000, N=40)
    s0, b0 = A.theorem1_tuned_terms(small), A.theorem1_tuned_terms(big)
    ok = b == 12500.24 and b0[0] / s0[0] == 0.25 and b0[2] / s0[2] == 0.25
    return SuiteResult("convergence_bound", ok, f"bound={b!r}, tuned term ratios {b0[0] / s0[0]!r}, {b0[2] / s0[2]!r}")


SUITES: Dict[str, Callable[[VerifyContext], SuiteResult]] = {
    "conservation": suite_conservation,
    "exactly_once": suite_exactly_once,
    "staleness_bounds": suite_staleness_bounds,
    "prop1": suite_prop1,
    "q_oracle": suite_q_oracle,
    "rho0_equivalence": suite_rho0_equivalence,
    "gradient": suite_gradient,
    "convergence_bound": suite_convergence_bound,
}


def run_suites(names: Optional[List[str]] = None, ctx: Optional[VerifyContext] = None) -> List[SuiteResult]:
    ctx = ctx or VerifyContext()
    out = []
    for name in names or list(SUITES):
        t0 = time.perf_counter()
        try:
            res = SUITES[name](ctx)
        except Exception as exc:  # a crashing suite is a failing suite
            res = SuiteResult(name, False, f"{type(exc).__name__}: {exc}")
        res.seconds = time.perf_counter() - t0
        out.append(res)
    return out
