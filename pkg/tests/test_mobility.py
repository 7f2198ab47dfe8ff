import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from fedmobile.errors import UndefinedBeforeFirstMeeting
from fedmobile.mobility import (
    MeetingSchedule,
    PeerContactTrace,
    contact_rate,
    gen_fixed_interval_schedule,
    gen_peer_contacts,
    gen_random_interval_schedule,
)


def test_fixed_interval_client1_slots():
    s = gen_fixed_interval_schedule(50, 50, 200)
    assert s.of(1) == (1, 51, 101, 151, 201)


def test_fixed_interval_degenerate():
    s = gen_fixed_interval_schedule(1, 1, 5)
    assert s.delta == 1
    # every slot from 1 through the horizon, then one past it
    assert s.of(1)[:5] == (1, 2, 3, 4, 5)
    assert s.max_gap() == 1


def test_fixed_interval_gaps_equal_delta():
    s = gen_fixed_interval_schedule(50, 50, 200)
    assert s.delta == 50
    gaps = {b - a for slots in s.meetings for a, b in zip(slots, slots[1:])}
    assert gaps == {50}


def test_random_interval_gaps_in_range():
    s = gen_random_interval_schedule(50, 30, 50, 1000, seed=7)
    gaps = np.array([b - a for slots in s.meetings for a, b in zip(slots, slots[1:])])
    assert gaps.min() >= 30 and gaps.max() <= 50
    assert s.delta == 50
    assert all(s.first_meeting(i) == i for i in range(1, 51))


def test_random_interval_degenerate_matches_fixed():
    r = gen_random_interval_schedule(50, 40, 40, 1000, seed=3)
    f = gen_fixed_interval_schedule(50, 40, 1000)
    assert r.meetings == f.meetings


def test_random_interval_deterministic():
    a = gen_random_interval_schedule(50, 30, 50, 1000, seed=11)
    b = gen_random_interval_schedule(50, 30, 50, 1000, seed=11)
    assert a == b
    assert a.to_text() == b.to_text()


def test_tau_queries_fixed_interval():
    s = gen_fixed_interval_schedule(50, 50, 1000)
    assert s.tau_last(3, 60) == 53
    assert s.tau_next(3, 60) == 103


def test_tau_at_meeting_slot():
    s = gen_fixed_interval_schedule(50, 50, 1000)
    assert s.tau_last(3, 53) == 53  # including t
    assert s.tau_next(3, 53) == 103  # excluding t


def test_tau_last_before_first_meeting():
    s = gen_fixed_interval_schedule(50, 50, 1000)
    with pytest.raises(UndefinedBeforeFirstMeeting):
        s.tau_last(10, 5)


@settings(max_examples=60, deadline=None)
@given(
    n=st.integers(1, 12),
    lo=st.integers(1, 20),
    extra=st.integers(0, 20),
    horizon=st.integers(1, 300),
    seed=st.integers(0, 2**31),
)
def test_delta_bound_and_tau_order(n, lo, extra, horizon, seed):
    s = gen_random_interval_schedule(n, lo, lo + extra, horizon, seed)
    assert s.max_gap() <= s.delta
    for i in range(1, n + 1):
        assert s.first_meeting(i) == i
        assert s.of(i)[-1] > horizon
        for t in range(s.first_meeting(i), horizon + 1, 7):
            last, nxt = s.tau_last(i, t), s.tau_next(i, t)
            assert last <= t < nxt
            assert nxt - last <= s.delta


def test_schedule_text_roundtrip():
    s = gen_random_interval_schedule(5, 3, 9, 60, seed=2)
    text = s.to_text()
    assert text.splitlines()[1].startswith("1: ")
    assert MeetingSchedule.from_text(text) == s


def test_schedule_rejects_unsorted():
    with pytest.raises(ValueError):
        MeetingSchedule(meetings=((3, 2),), horizon=1, delta=5)


# ------------------------------------------------------------------ contacts

def test_rho_zero_empty():
    tr = gen_peer_contacts(50, 0.0, 100, seed=1)
    assert all(len(p) == 0 for p in tr)


def test_rho_one_perfect_matching():
    tr = gen_peer_contacts(50, 1.0, 100, seed=1)
    assert tr.is_matching()
    for pairs in tr:
        assert len(pairs) == 25
        assert sorted(c for p in pairs for c in p) == list(range(1, 51))


def test_contact_rate_near_rho():
    tr = gen_peer_contacts(50, 0.5, 10_000, seed=5)
    n = len(tr.contacts)
    se = np.sqrt(0.25 / n)
    for client in (1, 17, 50):
        assert abs(contact_rate(tr, client) - 0.5) <= 3 * se


def test_odd_clients_leave_one_out():
    tr = gen_peer_contacts(7, 1.0, 50, seed=0)
    assert tr.is_matching()
    assert all(len(p) == 3 for p in tr)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(2, 30), rho=st.floats(0, 1), seed=st.integers(0, 2**31))
def test_matching_property(n, rho, seed):
    assert gen_peer_contacts(n, rho, 30, seed).is_matching()


def test_contacts_deterministic_and_roundtrip():
    a = gen_peer_contacts(20, 0.4, 200, seed=9)
    b = gen_peer_contacts(20, 0.4, 200, seed=9)
    assert a.to_text() == b.to_text()
    back = PeerContactTrace.from_text(a.to_text())
    assert back.contacts == a.contacts and back.rho == a.rho and back.n_clients == 20


def test_contacts_nested_in_rho():
    lo = gen_peer_contacts(20, 0.2, 200, seed=4)
    hi = gen_peer_contacts(20, 0.7, 200, seed=4)
    assert all(set(a) <= set(b) for a, b in zip(lo, hi))


def test_pair_uniformity_chi_square():
    n = 10
    tr = gen_peer_contacts(n, 1.0, 9000, seed=13)
    counts = {}
    for pairs in tr:
        for p in pairs:
            counts[p] = counts.get(p, 0) + 1
    n_pairs = n * (n - 1) // 2
    obs = np.array([counts.get((i, j), 0) for i in range(1, n + 1) for j in range(i + 1, n + 1)])
    assert len(obs) == n_pairs
    _, p = stats.chisquare(obs)
    assert p > 1e-3


def test_rho_out_of_range():
    with pytest.raises(ValueError):
        gen_peer_contacts(5, 1.5, 10, seed=0)
