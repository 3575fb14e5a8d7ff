import math

import pytest

from sdnteleport.controller import Controller
from sdnteleport.loadgen import DUMMY_FRAME, LoadProfile, start_load
from sdnteleport.simnet import LatencyModel, Simulation

FIXED = LatencyModel(base_ms=0.5, jitter=None)


def run_load(profile, duration_ms, seed=0, listen=True):
    sim = Simulation(seed=seed, latency=FIXED)
    ctrl = Controller(sim, log_packet_in=False)
    if listen:
        ctrl.serve("c")
    gen = start_load(sim, profile, "c", channel_dpid=0xC0FFEE)
    sim.run(until_ms=duration_ms)
    gen.stop()
    return ctrl, gen


def test_zero_rate_handshakes_only():
    ctrl, gen = run_load(LoadProfile(n_switches=20, rate=0), 5000)
    assert gen.total_sent == 0 and ctrl.packet_ins == 0
    assert len(ctrl.registry) == 20
    assert sum(e.event == "admit-accept" for e in ctrl.events) == 20


def test_twenty_switches_for_a_minute():
    ctrl, gen = run_load(LoadProfile(n_switches=20, rate=1.0), 60_000)
    assert gen.total_sent == pytest.approx(1200, rel=0.1)
    gaps = [b - a for ts in gen.sent.values() for a, b in zip(ts, ts[1:])]
    assert len(gaps) >= 1000
    assert sum(gaps) / len(gaps) == pytest.approx(1000, rel=0.1)
    # every PacketIn sent more than one service slot before the end was consumed
    assert ctrl.packet_ins >= gen.total_sent - 20


def test_fixed_seed_is_deterministic():
    _, a = run_load(LoadProfile(n_switches=3, rate=5.0, seed=9), 3000, seed=4)
    _, b = run_load(LoadProfile(n_switches=3, rate=5.0, seed=9), 3000, seed=4)
    _, c = run_load(LoadProfile(n_switches=3, rate=5.0, seed=9), 3000, seed=5)
    assert a.sent == b.sent
    assert a.sent != c.sent


def test_interarrivals_pass_ks_at_one_percent():
    n = 10_000
    sim = Simulation(seed=1, latency=FIXED)
    Controller(sim, log_packet_in=False).serve("c")
    gen = start_load(sim, LoadProfile(n_switches=1, rate=1.0), "c")
    times = gen.sent[0x1000]
    while len(times) <= n:
        sim.run(until_ms=sim.now() + 100_000)
    gen.stop()
    gaps = sorted(b - a for a, b in zip(times[:n + 1], times[1:n + 1]))
    d = 0.0
    for i, x in enumerate(gaps):
        cdf = 1 - math.exp(-x / 1000.0)
        d = max(d, (i + 1) / n - cdf, cdf - i / n)
    assert d < 1.628 / math.sqrt(n)


def test_unit_knob():
    _, gen = run_load(LoadProfile(n_switches=5, rate=1.0, unit_ms=100), 10_000)
    assert gen.total_sent == pytest.approx(500, rel=0.15)


def test_channel_dpid_collision_rejected():
    sim = Simulation()
    with pytest.raises(ValueError):
        start_load(sim, LoadProfile(n_switches=4, base_dpid=0xC0FFEC), "c", channel_dpid=0xC0FFEE)
    assert 0xC0FFEE not in LoadProfile(n_switches=20).dpids()


def test_failed_handshake_retried_once():
    _, gen = run_load(LoadProfile(n_switches=2, rate=1.0), 1000, listen=False)
    assert gen.failures == 4 and gen.total_sent == 0


def test_profile_validation():
    with pytest.raises(ValueError):
        LoadProfile(rate=-1)
    with pytest.raises(ValueError):
        LoadProfile(n_switches=-1)
    assert len(DUMMY_FRAME) == 64
    assert LoadProfile(rate=2, unit_ms=1000).mean_interarrival_ms == 500
