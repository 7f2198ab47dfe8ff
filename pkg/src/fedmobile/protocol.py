"""FedMobile client/server state transitions.

Every transition is pure: states are frozen dataclasses and each operation
returns new states. Model vectors are numpy arrays that are never mutated in
place once they are stored in a state.

A CLU chunk carries, next to its payload vector, the exact set of
``(origin, step_lo, step_hi)`` ranges whose ``eta * g`` it sums. The server
merges received ranges per origin; any overlap is a duplicate delivery.
"""
from __future__ import annotations

import bisect
import csv
import enum
from dataclasses import dataclass, field, replace
from typing import Iterable, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .errors import DuplicateDelivery, DuplicateStep, ProtocolViolation
from .learning import GradientSample


class Coverage(NamedTuple):
    origin: int
    lo: int
    hi: int  # inclusive

    def __str__(self):
        return f"{self.origin}:{self.lo}-{self.hi}"


@dataclass(frozen=True)
class CluChunk:
    payload: np.ndarray
    coverage: Tuple[Coverage, ...] = ()

    @classmethod
    def empty(cls, d: int) -> "CluChunk":
        return cls(np.zeros(d))

    @property
    def is_empty(self) -> bool:
        return not self.coverage

    def n_steps(self, origin: Optional[int] = None) -> int:
        return sum(c.hi - c.lo + 1 for c in self.coverage if origin is None or c.origin == origin)

    def summary(self) -> str:
        return ";".join(str(c) for c in sorted(self.coverage))


def coverage_conflicts(a: Iterable[Coverage], b: Iterable[Coverage]) -> List[Tuple[Coverage, Coverage]]:
    b = list(b)
    return [
        (x, y)
        for x in a
        for y in b
        if x.origin == y.origin and x.lo <= y.hi and y.lo <= x.hi
    ]


@dataclass(frozen=True)
class ClientState:
    client: int
    local_model: np.ndarray
    clu: CluChunk
    global_copy: np.ndarray
    psi: int
    upload_budget_left: int
    download_budget_left: int
    last_server_meeting: int
    last_step: int = -1  # newest step folded into this client's own CLU stream

    def evolve(self, **changes) -> "ClientState":
        """Cheap ``dataclasses.replace``; the simulator calls this ~10^5 times per run."""
        new = object.__new__(ClientState)
        new.__dict__.update(self.__dict__)
        for k in changes:
            if k not in self.__dict__:
                raise TypeError(f"unknown ClientState field {k!r}")
        new.__dict__.update(changes)
        return new

    @classmethod
    def initial(cls, client: int, x0: np.ndarray, k_up: int = 1, k_down: int = 1) -> "ClientState":
        # before the first real meeting a client behaves as if it met the server at slot 0
        return cls(
            client=client,
            local_model=x0,
            clu=CluChunk.empty(len(x0)),
            global_copy=x0,
            psi=0,
            upload_budget_left=k_up,
            download_budget_left=k_down,
            last_server_meeting=0,
        )


@dataclass(frozen=True)
class ServerState:
    global_model: np.ndarray
    # origin -> sorted, disjoint, non-adjacent inclusive step ranges
    received: Mapping[int, Tuple[Tuple[int, int], ...]] = field(default_factory=dict)

    def phi(self, client: int) -> int:
        """Largest ``s`` such that steps ``0..s`` of ``client`` were all received (-1 if none)."""
        ranges = self.received.get(client, ())
        if ranges and ranges[0][0] == 0:
            return ranges[0][1]
        return -1

    def received_steps(self, client: int) -> int:
        return sum(hi - lo + 1 for lo, hi in self.received.get(client, ()))


def _insert_range(ranges: Tuple[Tuple[int, int], ...], lo: int, hi: int):
    """Insert ``[lo, hi]`` into merged ranges; return None on overlap."""
    items = list(ranges)
    k = bisect.bisect_left(items, (lo, hi))
    if k > 0 and items[k - 1][1] >= lo:
        return None
    if k < len(items) and items[k][0] <= hi:
        return None
    if k > 0 and items[k - 1][1] == lo - 1:
        lo = items[k - 1][0]
        k -= 1
        del items[k]
    if k < len(items) and items[k][0] == hi + 1:
        hi = items[k][1]
        del items[k]
    items.insert(k, (lo, hi))
    return tuple(items)


def accumulate_clu(state: ClientState, grad: GradientSample, eta: float) -> ClientState:
    """Fold ``eta * g`` for one new local step into the client's CLU."""
    if grad.client != state.client:
        raise ProtocolViolation(
            f"client {state.client} cannot accumulate a gradient of client {grad.client}",
            slot=grad.step_index,
        )
    s = grad.step_index
    if s <= state.last_step:
        raise DuplicateStep(
            f"client {state.client} already accumulated step {s}",
            slot=s, context={"client": state.client, "last_step": state.last_step},
        )
    cov = list(state.clu.coverage)
    own = [k for k, c in enumerate(cov) if c.origin == state.client]
    if own and cov[own[-1]].hi == s - 1:
        k = own[-1]
        cov[k] = cov[k]._replace(hi=s)
    else:
        cov.append(Coverage(state.client, s, s))
    clu = CluChunk(state.clu.payload + eta * grad.vector, tuple(cov))
    return state.evolve(clu=clu, last_step=s)


# ---------------------------------------------------------------- upload relay

def in_upload_window(t: int, tau_last_i: int, theta: int, Theta: int) -> bool:
    return tau_last_i + theta <= t <= tau_last_i + Theta


def is_semi_qualified_upload(tau_last_i: int, tau_next_j: int, Theta: int) -> bool:
    return tau_next_j <= tau_last_i + Theta


def upload_relay_decision(
    t: int,
    tau_last_i: int,
    tau_next_i: int,
    tau_next_j: int,
    theta: int,
    Theta: int,
    budget_left: int = 1,
) -> bool:
    """Whether sender ``i`` should hand its CLU to peer ``j`` at slot ``t``."""
    return (
        budget_left > 0
        and in_upload_window(t, tau_last_i, theta, Theta)
        and is_semi_qualified_upload(tau_last_i, tau_next_j, Theta)
        and tau_next_j < tau_next_i
    )


def exchange_upload(
    sender: ClientState, relay: ClientState, *, slot: Optional[int] = None, reset_sender: bool = True
) -> Tuple[ClientState, ClientState]:
    """RESET on the sender, COMBINE on the relay.

    ``reset_sender=False`` exists only for fault-injection tests.
    """
    clash = coverage_conflicts(sender.clu.coverage, relay.clu.coverage)
    if clash:
        raise DuplicateDelivery(
            f"client {sender.client} -> {relay.client}: overlapping coverage {clash[0]}",
            slot=slot, context={"sender": sender.client, "relay": relay.client},
        )
    combined = CluChunk(
        relay.clu.payload + sender.clu.payload, relay.clu.coverage + sender.clu.coverage
    )
    new_relay = relay.evolve(clu=combined)
    new_sender = sender.evolve(
        clu=CluChunk.empty(len(sender.clu.payload)) if reset_sender else sender.clu,
        upload_budget_left=sender.upload_budget_left - 1,
    )
    return new_sender, new_relay


# -------------------------------------------------------------- download relay

class DownloadMode(str, enum.Enum):
    GLOBAL_COPY = "GLOBAL_COPY"
    LOCAL_MODEL = "LOCAL_MODEL"


def in_download_window(t: int, tau_next_i: int, omega: int, Omega: int) -> bool:
    return tau_next_i - Omega <= t <= tau_next_i - omega


def is_semi_qualified_download(tau_next_i: int, stamp_j: int, Omega: int) -> bool:
    return stamp_j >= tau_next_i - Omega


def download_relay_decision(
    t: int,
    tau_next_i: int,
    psi_i: int,
    psi_j: int,
    omega: int,
    Omega: int,
    budget_left: int = 1,
) -> bool:
    """Whether receiver ``i`` should adopt peer ``j``'s global-model copy at ``t``.

    ``psi_i``/``psi_j`` are copy timestamps. Passing last-server-meeting slots
    instead gives the strict form that only trusts direct server downloads.
    """
    return (
        budget_left > 0
        and in_download_window(t, tau_next_i, omega, Omega)
        and is_semi_qualified_download(tau_next_i, psi_j, Omega)
        and psi_j > psi_i
    )


def exchange_download(
    receiver: ClientState, relay: ClientState, mode: DownloadMode = DownloadMode.GLOBAL_COPY
) -> ClientState:
    """REPLACE on the receiver. The receiver's CLU is kept as is."""
    mode = DownloadMode(mode)
    new_local = relay.global_copy if mode is DownloadMode.GLOBAL_COPY else relay.local_model
    return receiver.evolve(
        local_model=new_local,
        global_copy=relay.global_copy,
        psi=relay.psi,
        download_budget_left=receiver.download_budget_left - 1,
    )


# ------------------------------------------------------------------ the server

def receive_chunks(
    server: ServerState, chunks: Sequence[CluChunk], n_clients: int, slot: Optional[int] = None
) -> ServerState:
    """Apply one aggregated global update ``x -= (1/N) * sum(payloads)``."""
    received = dict(server.received)
    for chunk in chunks:
        for c in chunk.coverage:
            merged = _insert_range(received.get(c.origin, ()), c.lo, c.hi)
            if merged is None:
                raise DuplicateDelivery(
                    f"server already holds part of {c}",
                    slot=slot, context={"coverage": str(c)},
                )
            received[c.origin] = merged
    live = [c.payload for c in chunks if not c.is_empty]
    if not live:
        return replace(server, received=received)
    total = live[0] if len(live) == 1 else np.sum(live, axis=0)
    return ServerState(server.global_model - total / n_clients, received)


def server_meetings(
    clients: Sequence[ClientState],
    server: ServerState,
    t: int,
    n_clients: int,
    k_up: int = 1,
    k_down: int = 1,
) -> Tuple[List[ClientState], ServerState]:
    """All clients of ``S^t`` upload, the server updates once, then they download."""
    server = receive_chunks(server, [c.clu for c in clients], n_clients, slot=t)
    x = server.global_model
    out = [
        c.evolve(
            clu=CluChunk.empty(len(x)),
            local_model=x,
            global_copy=x,
            psi=t,
            upload_budget_left=k_up,
            download_budget_left=k_down,
            last_server_meeting=t,
        )
        for c in clients
    ]
    return out, server


def server_meeting(
    client: ClientState, server: ServerState, t: int, n_clients: int, k_up: int = 1, k_down: int = 1
) -> Tuple[ClientState, ServerState]:
    (client,), server = server_meetings([client], server, t, n_clients, k_up, k_down)
    return client, server


# -------------------------------------------------------------------- event log

@dataclass(frozen=True)
class ProtocolEvent:
    slot: int
    kind: str  # server_meeting | virtual_upload | upload_relay | download_relay
    participants: Tuple[int, ...]
    coverage: str = ""


EVENT_FIELDS = ("slot", "kind", "participants", "coverage")


def write_event_log(events: Iterable[ProtocolEvent], fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(EVENT_FIELDS)
    for e in events:
        w.writerow((e.slot, e.kind, " ".join(map(str, e.participants)), e.coverage))


def read_event_log(fh) -> List[ProtocolEvent]:
    rows = csv.DictReader(line for line in fh if not line.startswith("#"))
    return [
        ProtocolEvent(
            int(r["slot"]), r["kind"], tuple(int(p) for p in r["participants"].split()), r["coverage"]
        )
        for r in rows
    ]


__all__ = [
    "Coverage", "CluChunk", "ClientState", "ServerState", "DownloadMode", "ProtocolEvent",
    "accumulate_clu", "upload_relay_decision", "exchange_upload", "download_relay_decision",
    "exchange_download", "receive_chunks", "server_meeting", "server_meetings",
    "in_upload_window", "in_download_window", "is_semi_qualified_upload",
    "is_semi_qualified_download", "coverage_conflicts", "write_event_log", "read_event_log",
]
