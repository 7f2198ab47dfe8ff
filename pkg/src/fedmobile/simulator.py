"""Slot-by-slot driver for ASYNC, FedMobile and the two idealized variants.

Slot ``t`` runs these phases in order:

1. server meetings: every client in ``S^t`` uploads its CLU; the server applies
   one aggregated update and the meeting clients download ``x^t``;
2. peer exchanges: for each contact pair, upload relaying in both directions,
   then download relaying in both directions (VIRTUAL_D instead hands every
   client ``x^t``);
3. snapshot: loss of ``x^t``, staleness, shadow divergence, conservation;
4. local step (``t < horizon``): every client computes ``g_i^t`` at ``x_i^t``,
   steps and folds ``eta * g_i^t`` into its CLU; the virtual sequence
   advances to ``v^{t+1}``. VIRTUAL_U delivers all CLUs at the end of the slot.

The snapshot sits before the local step so that ``x^t``, ``x_i^t`` and ``v^t``
all refer to the same slot.
"""
from __future__ import annotations

import csv
import enum
import io
import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import protocol as P
from .errors import NumericalDivergence, ProtocolViolation
from .learning import (
    GradientSample,
    SyntheticTask,
    batch_index_table,
    global_loss,
    stacked_batch_grads,
    stacked_full_grads,
)
from .mobility import MeetingSchedule, PeerContactTrace


class VariantKind(str, enum.Enum):
    ASYNC = "ASYNC"
    FEDMOBILE_U = "FEDMOBILE_U"
    FEDMOBILE_D = "FEDMOBILE_D"
    FEDMOBILE = "FEDMOBILE"
    VIRTUAL_U = "VIRTUAL_U"
    VIRTUAL_D = "VIRTUAL_D"


@dataclass(frozen=True)
class VariantSpec:
    kind: VariantKind = VariantKind.FEDMOBILE
    theta: int = 20
    Theta: int = 30
    omega: int = 20
    Omega: int = 30
    k_up: int = 1
    k_down: int = 1
    download_mode: P.DownloadMode = P.DownloadMode.GLOBAL_COPY
    strict_tau_last: bool = False
    name: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", VariantKind(self.kind))
        object.__setattr__(self, "download_mode", P.DownloadMode(self.download_mode))
        if not 0 <= self.theta <= self.Theta:
            raise ValueError(f"need 0 <= theta <= Theta, got ({self.theta}, {self.Theta})")
        if not 0 <= self.omega <= self.Omega:
            raise ValueError(f"need 0 <= omega <= Omega, got ({self.omega}, {self.Omega})")
        if self.k_up < 0 or self.k_down < 0:
            raise ValueError("relay budgets must be >= 0")

    def validate(self, delta: int) -> None:
        if self.Theta > delta or self.Omega > delta:
            raise ValueError(
                f"search windows must end within delta={delta}: Theta={self.Theta}, Omega={self.Omega}"
            )

    @property
    def budgets(self) -> Tuple[int, int]:
        """Effective ``(K_up, K_down)``; variants without relaying get zero."""
        k = self.kind
        up = self.k_up if k in (VariantKind.FEDMOBILE, VariantKind.FEDMOBILE_U) else 0
        down = self.k_down if k in (VariantKind.FEDMOBILE, VariantKind.FEDMOBILE_D) else 0
        return up, down

    @property
    def label(self) -> str:
        return self.name or self.kind.value

    def staleness_bounds(self, delta: int) -> Tuple[int, int]:
        return max(delta - self.theta, self.Theta), max(delta - self.omega, self.Omega)


@dataclass(frozen=True)
class VirtualShadow:
    """Instant-delivery global model ``v^t``."""

    v: np.ndarray

    def advance(self, eta_grad_sum: np.ndarray, n_clients: int) -> "VirtualShadow":
        return VirtualShadow(self.v - eta_grad_sum / n_clients)


def staleness_snapshot(
    server: P.ServerState, clients: Sequence[P.ClientState], t: int
) -> Tuple[np.ndarray, np.ndarray]:
    """Per-client ``(t - 1) - phi_i(t)`` and ``t - psi_i(t)``."""
    up = np.array([(t - 1) - server.phi(c.client) for c in clients], dtype=np.int64)
    down = np.array([t - c.psi for c in clients], dtype=np.int64)
    return up, down


def shadow_divergence(
    shadow: VirtualShadow, server: P.ServerState, clients: Sequence[P.ClientState]
) -> Tuple[float, np.ndarray]:
    """``||v^t - x^t||`` and ``||v^t - x_i^t||`` for every client."""
    local = np.stack([c.local_model for c in clients])
    return float(np.linalg.norm(shadow.v - server.global_model)), np.linalg.norm(shadow.v - local, axis=1)


@dataclass
class RunMetrics:
    variant: VariantSpec
    seed: int
    delta: int
    eta: float
    loss: np.ndarray  # (T + 1,)
    upload_staleness: np.ndarray  # (T + 1, N)
    download_staleness: np.ndarray  # (T + 1, N)
    upload_flag: np.ndarray  # (T + 1, N) bool: period's upload window met a semi-qualified relay
    download_flag: np.ndarray
    upload_relays: np.ndarray  # (T + 1,) exchanges per slot
    download_relays: np.ndarray
    global_divergence: np.ndarray  # (T + 1,)
    client_divergence: np.ndarray  # (T + 1, N)
    conservation_rel_err: np.ndarray  # (T + 1,), NaN when not audited
    g_max: float
    grad_sq_mean: np.ndarray  # (N,) mean ||g||^2 per client
    grad_var_mean: np.ndarray  # (N,) mean ||g - grad f_i||^2 per client, sampled slots
    final_phi: np.ndarray  # (N,)
    exactly_once: bool
    shadow_log_err: float  # ||v^T - reconstruction from the gradient log|| / ||v^T||
    events: List[P.ProtocolEvent] = field(default_factory=list, repr=False)

    @property
    def horizon(self) -> int:
        return len(self.loss) - 1

    @property
    def bounds(self) -> Tuple[int, int]:
        return self.variant.staleness_bounds(self.delta)

    @property
    def final_loss(self) -> float:
        return float(self.loss[-1])

    @property
    def upload_bound_violations(self) -> np.ndarray:
        """``(slot, client)`` pairs where the upload bound fails under its precondition."""
        C, _ = self.bounds
        return np.argwhere(self.upload_flag & (self.upload_staleness > C))

    @property
    def download_bound_violations(self) -> np.ndarray:
        _, D = self.bounds
        return np.argwhere(self.download_flag & (self.download_staleness > D))

    def shadow_gap_report(self) -> Dict[str, int]:
        """Counts of slots checked/failing for both shadow-gap bounds.

        These are expectation bounds checked per run with the empirical
        ``g_max``; failures are reported, not raised.
        """
        C, D = self.bounds
        g = self.eta * self.g_max
        up_all = self.upload_flag.all(axis=1)
        both = up_all & self.download_flag.all(axis=1)
        tol = 1e-9 * max(g, 1e-300)
        glob_fail = up_all & (self.global_divergence > C * g + tol)
        loc_bound = 3.0 * (2 * D * D + C * C) * g * g
        loc_fail = both & ((self.client_divergence ** 2).max(axis=1) > loc_bound * (1 + 1e-9))
        return {
            "global_checked": int(up_all.sum()),
            "global_failed": int(glob_fail.sum()),
            "local_checked": int(both.sum()),
            "local_failed": int(loc_fail.sum()),
        }

    @property
    def conservation_max(self) -> float:
        e = self.conservation_rel_err
        return float(np.nanmax(e)) if np.isfinite(e).any() else float("nan")

    def summary(self) -> dict:
        C, D = self.bounds
        return {
            "variant": self.variant.label,
            "kind": self.variant.kind.value,
            "seed": self.seed,
            "horizon": self.horizon,
            "final_loss": self.final_loss,
            "C": C,
            "D": D,
            "g_max": self.g_max,
            "sigma_sq_mean": float(self.grad_var_mean.mean()),
            "upload_relays": int(self.upload_relays.sum()),
            "download_relays": int(self.download_relays.sum()),
            "max_upload_staleness": int(self.upload_staleness.max()),
            "max_download_staleness": int(self.download_staleness.max()),
            "upload_bound_violations": int(len(self.upload_bound_violations)),
            "download_bound_violations": int(len(self.download_bound_violations)),
            "shadow_gap": self.shadow_gap_report(),
            "conservation_max_rel_err": self.conservation_max,
            "exactly_once": self.exactly_once,
        }

    CSV_FIELDS = (
        "slot", "loss", "max_upload_staleness", "mean_upload_staleness",
        "max_download_staleness", "mean_download_staleness", "upload_relays",
        "download_relays", "global_divergence", "conservation_rel_err",
    )

    def to_csv(self, fh, comment: Optional[str] = None) -> None:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(self.CSV_FIELDS)
        up, dn = self.upload_staleness, self.download_staleness
        for t in range(self.horizon + 1):
            w.writerow((
                t, repr(float(self.loss[t])), int(up[t].max()), repr(float(up[t].mean())),
                int(dn[t].max()), repr(float(dn[t].mean())), int(self.upload_relays[t]),
                int(self.download_relays[t]), repr(float(self.global_divergence[t])),
                repr(float(self.conservation_rel_err[t])),
            ))

    def csv_text(self, comment: Optional[str] = None) -> str:
        buf = io.StringIO()
        self.to_csv(buf, comment)
        return buf.getvalue()

    def summary_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True) + "\n"


VARIANCE_EVERY = 10  # slots between full-gradient evaluations for the variance estimate


class BoundViolation(ProtocolViolation):
    kind = "staleness-bound-violation"


def _period_flags(periods, n_slots: int, n_clients: int) -> np.ndarray:
    flags = np.zeros((n_slots, n_clients), dtype=bool)
    for i, plist in enumerate(periods):
        for start, end, found in plist:
            if found:
                flags[start:end + 1, i] = True
    return flags


def run(
    task: SyntheticTask,
    schedule: MeetingSchedule,
    contacts: PeerContactTrace,
    variant: VariantSpec,
    eta: float,
    horizon: int,
    seed: int,
    *,
    batch_size: int = 5,
    x0: Optional[np.ndarray] = None,
    audit: bool = True,
    strict: bool = True,
    record_events: bool = False,
    inject_fault: Optional[str] = None,
) -> RunMetrics:
    """Simulate ``horizon`` slots and return the recorded metrics.

    ``audit`` keeps the full gradient log to check, every slot, that the
    server model equals ``x^0 - (1/N) * sum`` of the received ``eta * g``.
    With ``strict`` a staleness-bound violation under its precondition raises
    :class:`BoundViolation` after the run (metrics attached in ``context``).
    ``inject_fault="skip_reset"`` disables RESET on upload exchanges.
    """
    if eta <= 0:
        raise ValueError("eta must be positive")
    if inject_fault not in (None, "skip_reset"):
        raise ValueError(f"unknown fault {inject_fault!r}")
    variant.validate(schedule.delta)
    N, d = task.n_clients, task.dim
    if schedule.n_clients != N:
        raise ValueError("schedule and task disagree on the number of clients")
    short = [i for i in range(1, N + 1) if schedule.of(i)[-1] <= horizon]
    if short:
        raise ValueError(f"schedule ends before horizon {horizon} for clients {short[:5]}")

    kind = variant.kind
    k_up, k_down = variant.budgets
    th, TH, om, OM = variant.theta, variant.Theta, variant.omega, variant.Omega
    mode = variant.download_mode
    reset_sender = inject_fault != "skip_reset"

    x0 = np.zeros(d) if x0 is None else np.asarray(x0, dtype=float)
    clients = [P.ClientState.initial(i, x0, k_up, k_down) for i in range(1, N + 1)]
    server = P.ServerState(x0)
    shadow = VirtualShadow(x0)
    batches = batch_index_table(max(horizon, 1), N, task.n_per_client, batch_size, seed)

    n_slots = horizon + 1
    loss = np.empty(n_slots)
    up_st = np.empty((n_slots, N), dtype=np.int64)
    dn_st = np.empty((n_slots, N), dtype=np.int64)
    up_rel = np.zeros(n_slots, dtype=np.int64)
    dn_rel = np.zeros(n_slots, dtype=np.int64)
    gdiv = np.empty(n_slots)
    cdiv = np.empty((n_slots, N))
    cons = np.full(n_slots, np.nan)
    g_sq_sum = np.zeros(N)
    g_var_sum = np.zeros(N)
    n_var = 0
    g_max = 0.0
    events: List[P.ProtocolEvent] = []

    grad_log = np.zeros((horizon, N, d)) if audit else None
    recon_sum = np.zeros(d)

    # per-client search-interval bookkeeping: closed periods (start, end, found)
    up_periods: List[list] = [[] for _ in range(N)]
    dn_periods: List[list] = [[] for _ in range(N)]
    period_start = [0] * N
    up_found = [False] * N
    dn_found = [False] * N

    def credit(chunks):
        nonlocal recon_sum
        if grad_log is None:
            return
        for ch in chunks:
            for c in ch.coverage:
                recon_sum = recon_sum + grad_log[c.lo:c.hi + 1, c.origin - 1].sum(axis=0)

    for t in range(n_slots):
        # (1) server meetings
        meeting = schedule.meeting_clients(t) if t > 0 else ()
        if meeting:
            group = [clients[i - 1] for i in meeting]
            credit([c.clu for c in group])
            if record_events:
                for c in group:
                    events.append(P.ProtocolEvent(t, "server_meeting", (c.client,), c.clu.summary()))
            group, server = P.server_meetings(group, server, t, N, k_up, k_down)
            for c in group:
                i = c.client - 1
                clients[i] = c
                up_periods[i].append((period_start[i], t - 1, up_found[i]))
                dn_periods[i].append((period_start[i], t - 1, dn_found[i]))
                period_start[i], up_found[i], dn_found[i] = t, False, False

        # (2) peer exchanges
        if kind is VariantKind.VIRTUAL_D:
            x = server.global_model
            clients = [c.evolve(local_model=x, global_copy=x, psi=t) for c in clients]
        elif k_up or k_down:
            for a, b in contacts.at(t):
                if k_up:
                    for i, j in ((a, b), (b, a)):
                        ci, cj = clients[i - 1], clients[j - 1]
                        tl_i = ci.last_server_meeting
                        tn_i, tn_j = schedule.tau_next(i, t), schedule.tau_next(j, t)
                        if P.in_upload_window(t, tl_i, th, TH) and P.is_semi_qualified_upload(tl_i, tn_j, TH):
                            up_found[i - 1] = True
                        if P.upload_relay_decision(t, tl_i, tn_i, tn_j, th, TH, ci.upload_budget_left):
                            if record_events:
                                events.append(P.ProtocolEvent(t, "upload_relay", (i, j), ci.clu.summary()))
                            ci, cj = P.exchange_upload(ci, cj, slot=t, reset_sender=reset_sender)
                            clients[i - 1], clients[j - 1] = ci, cj
                            up_rel[t] += 1
                if k_down:
                    for i, j in ((a, b), (b, a)):
                        ci, cj = clients[i - 1], clients[j - 1]
                        tn_i = schedule.tau_next(i, t)
                        if variant.strict_tau_last:
                            s_i, s_j = ci.last_server_meeting, cj.last_server_meeting
                        else:
                            s_i, s_j = ci.psi, cj.psi
                        if P.in_download_window(t, tn_i, om, OM) and P.is_semi_qualified_download(tn_i, s_j, OM):
                            dn_found[i - 1] = True
                        if P.download_relay_decision(t, tn_i, s_i, s_j, om, OM, ci.download_budget_left):
                            if record_events:
                                events.append(P.ProtocolEvent(t, "download_relay", (i, j), f"psi={cj.psi}"))
                            clients[i - 1] = P.exchange_download(ci, cj, mode)
                            dn_rel[t] += 1

        # (3) snapshot
        x = server.global_model
        with np.errstate(over="ignore", invalid="ignore"):
            loss[t] = global_loss(x, task)
        if not np.isfinite(loss[t]):
            raise NumericalDivergence(t, "test loss overflowed")
        up_st[t], dn_st[t] = staleness_snapshot(server, clients, t)
        gdiv[t], cdiv[t] = shadow_divergence(shadow, server, clients)
        if grad_log is not None:
            recon = x0 - recon_sum / N
            scale = max(np.linalg.norm(recon), np.linalg.norm(x))
            cons[t] = 0.0 if scale == 0 else float(np.linalg.norm(x - recon) / scale)

        if t == horizon:
            break

        # (4) local step
        models = np.stack([c.local_model for c in clients])
        grads = stacked_batch_grads(models, task, batches[t])
        norms_sq = np.einsum("nd,nd->n", grads, grads)
        g_sq_sum += norms_sq
        if t % VARIANCE_EVERY == 0:
            dev = grads - stacked_full_grads(models, task)
            g_var_sum += np.einsum("nd,nd->n", dev, dev)
            n_var += 1
        g_max = max(g_max, float(np.sqrt(norms_sq.max())))
        eta_g = eta * grads
        stepped = models - eta_g  # the per-client sgd_step, batched
        if not np.all(np.isfinite(stepped)):
            raise NumericalDivergence(t)
        for k, c in enumerate(clients):
            gs = GradientSample(grads[k], t, c.client, seed)
            clients[k] = P.accumulate_clu(c.evolve(local_model=stepped[k]), gs, eta)
        if grad_log is not None:
            grad_log[t] = eta_g
        shadow = shadow.advance(eta_g.sum(axis=0), N)
        if not np.all(np.isfinite(shadow.v)):
            raise NumericalDivergence(t, "virtual sequence diverged")

        if kind is VariantKind.VIRTUAL_U:
            chunks = [c.clu for c in clients]
            credit(chunks)
            if record_events:
                events.append(P.ProtocolEvent(t, "virtual_upload", tuple(range(1, N + 1)), ""))
            server = P.receive_chunks(server, chunks, N, slot=t)
            empty = P.CluChunk.empty(d)
            clients = [c.evolve(clu=empty) for c in clients]

    for i in range(N):
        up_periods[i].append((period_start[i], horizon, up_found[i]))
        dn_periods[i].append((period_start[i], horizon, dn_found[i]))

    # exactly-once across the whole system: every computed step sits in exactly
    # one place (server or some client's CLU)
    exactly_once = True
    for origin in range(1, N + 1):
        held = sum(c.clu.n_steps(origin) for c in clients)
        pieces = [(lo, hi) for lo, hi in server.received.get(origin, ())]
        pieces += [(r.lo, r.hi) for c in clients for r in c.clu.coverage if r.origin == origin]
        pieces.sort()
        covered = server.received_steps(origin) + held
        tiles = all(b[0] == a[1] + 1 for a, b in zip(pieces, pieces[1:]))
        tiles = tiles and (not pieces or (pieces[0][0] == 0 and pieces[-1][1] == horizon - 1))
        if covered != horizon or not tiles:
            exactly_once = False

    shadow_err = 0.0
    if grad_log is not None:
        v_log = x0 - grad_log.sum(axis=(0, 1)) / N
        denom = max(np.linalg.norm(v_log), 1e-300)
        shadow_err = float(np.linalg.norm(shadow.v - v_log) / denom)

    horizon_steps = max(horizon, 1)
    metrics = RunMetrics(
        variant=variant,
        seed=seed,
        delta=schedule.delta,
        eta=eta,
        loss=loss,
        upload_staleness=up_st,
        download_staleness=dn_st,
        upload_flag=_period_flags(up_periods, n_slots, N) if k_up else np.zeros((n_slots, N), bool),
        download_flag=_period_flags(dn_periods, n_slots, N) if k_down else np.zeros((n_slots, N), bool),
        upload_relays=up_rel,
        download_relays=dn_rel,
        global_divergence=gdiv,
        client_divergence=cdiv,
        conservation_rel_err=cons,
        g_max=g_max,
        grad_sq_mean=g_sq_sum / horizon_steps,
        grad_var_mean=g_var_sum / max(n_var, 1),
        final_phi=np.array([server.phi(i) for i in range(1, N + 1)]),
        exactly_once=exactly_once,
        shadow_log_err=shadow_err,
        events=events,
    )
    if strict:
        bad_up, bad_dn = metrics.upload_bound_violations, metrics.download_bound_violations
        if len(bad_up) or len(bad_dn):
            raise BoundViolation(
                f"{len(bad_up)} upload / {len(bad_dn)} download staleness bound violations",
                context={"metrics": metrics},
            )
    return metrics
