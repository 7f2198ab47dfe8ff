"""Client-server meeting schedules and client-to-client contact traces.

Slots are integers starting at 0. Client ids are 1-indexed (``1..n_clients``).
Schedules are generated past ``horizon + delta`` so that ``tau_next`` is defined
for every slot in ``[0, horizon]``.
"""
from __future__ import annotations

import bisect
from dataclasses import dataclass
from functools import cached_property
from typing import Dict, Iterator, List, Sequence, Tuple

import numpy as np

from .errors import UndefinedBeforeFirstMeeting

Pair = Tuple[int, int]


@dataclass(frozen=True)
class MeetingSchedule:
    meetings: Tuple[Tuple[int, ...], ...]  # meetings[i - 1] is client i's slot list
    horizon: int
    delta: int

    def __post_init__(self):
        for i, slots in enumerate(self.meetings, start=1):
            if not slots:
                raise ValueError(f"client {i} has no meetings")
            if any(b <= a for a, b in zip(slots, slots[1:])):
                raise ValueError(f"client {i}: meeting slots must be strictly increasing")

    @property
    def n_clients(self) -> int:
        return len(self.meetings)

    def of(self, i: int) -> Tuple[int, ...]:
        return self.meetings[i - 1]

    def tau_last(self, i: int, t: int) -> int:
        """Last meeting of client ``i`` at or before ``t`` (``t`` included)."""
        slots = self.of(i)
        k = bisect.bisect_right(slots, t)
        if k == 0:
            raise UndefinedBeforeFirstMeeting(
                f"client {i} has no server meeting at or before slot {t}"
            )
        return slots[k - 1]

    def tau_next(self, i: int, t: int) -> int:
        """First meeting of client ``i`` strictly after ``t``."""
        slots = self.of(i)
        k = bisect.bisect_right(slots, t)
        if k == len(slots):
            raise IndexError(f"client {i}: schedule does not extend past slot {t}")
        return slots[k]

    def first_meeting(self, i: int) -> int:
        return self.of(i)[0]

    @cached_property
    def by_slot(self) -> Dict[int, Tuple[int, ...]]:
        """Map slot -> clients meeting the server at that slot (the set S^t)."""
        out: Dict[int, List[int]] = {}
        for i, slots in enumerate(self.meetings, start=1):
            for s in slots:
                out.setdefault(s, []).append(i)
        return {s: tuple(c) for s, c in sorted(out.items())}

    def meeting_clients(self, t: int) -> Tuple[int, ...]:
        return self.by_slot.get(t, ())

    def max_gap(self) -> int:
        return max(
            (b - a for slots in self.meetings for a, b in zip(slots, slots[1:])),
            default=0,
        )

    # line format: "client_id: slot,slot,..."
    def to_text(self) -> str:
        lines = [f"# horizon={self.horizon} delta={self.delta}"]
        for i, slots in enumerate(self.meetings, start=1):
            lines.append(f"{i}: " + ",".join(map(str, slots)))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "MeetingSchedule":
        header = {}
        rows: Dict[int, Tuple[int, ...]] = {}
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                for tok in line[1:].split():
                    key, _, val = tok.partition("=")
                    header[key] = int(val)
                continue
            cid, _, rest = line.partition(":")
            rest = rest.strip()
            rows[int(cid)] = tuple(int(s) for s in rest.split(",")) if rest else ()
        meetings = tuple(rows[i] for i in sorted(rows))
        return cls(meetings=meetings, horizon=header["horizon"], delta=header["delta"])


def gen_fixed_interval_schedule(n_clients: int, interval: int, horizon: int) -> MeetingSchedule:
    """Client ``i`` meets the server at ``i, i + interval, i + 2*interval, ...``."""
    if n_clients < 1 or interval < 1:
        raise ValueError("n_clients and interval must be >= 1")
    meetings = []
    for i in range(1, n_clients + 1):
        slots = list(range(i, horizon + 1, interval))
        # one meeting past the horizon keeps tau_next defined on [0, horizon]
        slots.append(slots[-1] + interval if slots else i)
        meetings.append(tuple(slots))
    meetings = tuple(meetings)
    return MeetingSchedule(meetings=meetings, horizon=horizon, delta=interval)


def gen_random_interval_schedule(
    n_clients: int, min_gap: int, max_gap: int, horizon: int, seed: int
) -> MeetingSchedule:
    """First meeting at slot ``i``; later gaps i.i.d. uniform on ``[min_gap, max_gap]``."""
    if not 1 <= min_gap <= max_gap:
        raise ValueError("need 1 <= min_gap <= max_gap")
    if n_clients < 1:
        raise ValueError("n_clients must be >= 1")
    rng = np.random.default_rng(seed)
    # enough gaps for every client to pass the horizon even at min_gap
    n_gaps = (horizon // min_gap) + 2
    gaps = rng.integers(min_gap, max_gap, size=(n_clients, n_gaps), endpoint=True)
    meetings = []
    for i in range(1, n_clients + 1):
        slots = i + np.concatenate(([0], np.cumsum(gaps[i - 1])))
        n_keep = int(np.searchsorted(slots, horizon, side="right")) + 1  # through the first slot past the horizon
        meetings.append(tuple(int(s) for s in slots[:n_keep]))
    return MeetingSchedule(meetings=tuple(meetings), horizon=horizon, delta=max_gap)


@dataclass(frozen=True)
class PeerContactTrace:
    """Per-slot client-to-client contacts; each slot's pair set is a matching.

    ``contacts[t]`` holds the pairs for slot ``t`` with ``t`` in ``[0, horizon]``.
    Pairs are stored as ``(i, j)`` with ``i < j``.
    """

    contacts: Tuple[Tuple[Pair, ...], ...]
    rho: float
    seed: int
    n_clients: int = 0

    @property
    def horizon(self) -> int:
        return len(self.contacts) - 1

    def at(self, t: int) -> Tuple[Pair, ...]:
        if 0 <= t < len(self.contacts):
            return self.contacts[t]
        return ()

    def __iter__(self) -> Iterator[Tuple[Pair, ...]]:
        return iter(self.contacts)

    def is_matching(self) -> bool:
        for pairs in self.contacts:
            seen = set()
            for i, j in pairs:
                if i == j or i in seen or j in seen:
                    return False
                seen.update((i, j))
        return True

    # line format: "slot: i-j,i-j,..."
    def to_text(self) -> str:
        lines = [f"# rho={self.rho!r} seed={self.seed} n_clients={self.n_clients}"]
        for t, pairs in enumerate(self.contacts):
            lines.append(f"{t}: " + ",".join(f"{i}-{j}" for i, j in pairs))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "PeerContactTrace":
        header: Dict[str, str] = {}
        rows: Dict[int, Tuple[Pair, ...]] = {}
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                for tok in line[1:].split():
                    key, _, val = tok.partition("=")
                    header[key] = val
                continue
            slot, _, rest = line.partition(":")
            rest = rest.strip()
            pairs = []
            if rest:
                for tok in rest.split(","):
                    a, _, b = tok.partition("-")
                    pairs.append((int(a), int(b)))
            rows[int(slot)] = tuple(pairs)
        contacts = tuple(rows.get(t, ()) for t in range(max(rows, default=-1) + 1))
        return cls(
            contacts=contacts,
            rho=float(header.get("rho", "0")),
            seed=int(header.get("seed", "0")),
            n_clients=int(header.get("n_clients", "0")),
        )


def gen_peer_contacts(n_clients: int, rho: float, horizon: int, seed: int) -> PeerContactTrace:
    """Thinned random perfect matchings, one per slot.

    Each slot draws a uniform random permutation, pairs adjacent entries, and
    keeps each candidate pair independently with probability ``rho``. With an
    even client count every client is in contact with probability exactly
    ``rho``; with an odd count one client per slot is left unmatched.

    The permutation and thinning uniforms do not depend on ``rho``, so traces
    generated from the same seed are nested: raising ``rho`` only adds pairs.
    """
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"rho must lie in [0, 1], got {rho}")
    rng = np.random.default_rng(seed)
    n_slots = horizon + 1
    n_pairs = n_clients // 2
    perms = rng.permuted(np.tile(np.arange(1, n_clients + 1), (n_slots, 1)), axis=1)
    keep = rng.random((n_slots, n_pairs)) < rho
    contacts = []
    for t in range(n_slots):
        row = perms[t]
        pairs = []
        for k in np.flatnonzero(keep[t]):
            a, b = int(row[2 * k]), int(row[2 * k + 1])
            pairs.append((a, b) if a < b else (b, a))
        contacts.append(tuple(sorted(pairs)))
    return PeerContactTrace(contacts=tuple(contacts), rho=rho, seed=seed, n_clients=n_clients)


def contact_rate(trace: PeerContactTrace, client: int) -> float:
    """Fraction of slots in which ``client`` is in contact with someone."""
    hits = sum(1 for pairs in trace.contacts if any(client in p for p in pairs))
    return hits / len(trace.contacts)


__all__: Sequence[str] = [
    "MeetingSchedule",
    "PeerContactTrace",
    "gen_fixed_interval_schedule",
    "gen_random_interval_schedule",
    "gen_peer_contacts",
    "contact_rate",
]
