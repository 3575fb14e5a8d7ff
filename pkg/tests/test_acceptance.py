"""End-to-end acceptance checks, one test (or group) per criterion.

Run alone with ``pytest tests/test_acceptance.py``; a PASS/FAIL line per
criterion is printed in the terminal summary. Everything here runs on the
virtual clock.
"""

import functools
import itertools
import random
import time
from fractions import Fraction
from pathlib import Path

import pytest

from conftest import ACCEPTANCE
from sdnteleport import ofwire as of
from sdnteleport.controller import ServiceModel, WhitelistPolicy
from sdnteleport.endpoints import SwitchTiming, Termination, check_conformance
from sdnteleport.framing import pad_message
from sdnteleport.harness import Scenario, levenshtein, measure_delays, run_trial
from sdnteleport.loadgen import LoadProfile
from sdnteleport.simnet import Exponential, LatencyModel, Uniform
from sdnteleport.timing import (ChannelConfig, TransitionDelays, delay_upper_bound,
                                estimate_transfer, receiver_bit_time, sender_bit_time, validate)


def record(cid, ok, detail):
    # a criterion split over several tests passes only if all parts pass
    prev_ok, prev = ACCEPTANCE.get(cid, (True, ""))
    ACCEPTANCE[cid] = (prev_ok and ok, f"{prev}; {detail}" if prev else detail)


def check(cid, ok, detail):
    record(cid, bool(ok), detail)
    assert ok, detail


# traces of every simulated trial in criteria 3-8, for criterion 9
TRACES: list = []


def keep(summary):
    for r in summary.results:
        TRACES.append((r.sender_traces, r.receiver_traces))
    return summary


# --- 1: codec ---------------------------------------------------------------


def random_message(rng):
    u = lambda bits: rng.getrandbits(bits)
    blob = lambda: rng.randbytes(rng.randrange(0, 48))
    kind = rng.randrange(10)
    if kind == 0:
        return of.Hello(u(32), blob())
    if kind == 1:
        return of.EchoRequest(u(32), blob())
    if kind == 2:
        return of.EchoReply(u(32), blob())
    if kind == 3:
        return of.FeaturesRequest(u(32))
    if kind == 4:
        return of.FeaturesReply(u(32), of.DatapathId(u(64)), u(32), u(8), u(8), u(32), u(32))
    if kind == 5:
        return of.Error(u(32), u(16), u(16), blob())
    if kind == 6:
        oxm = rng.randbytes(rng.randrange(0, 20))
        match = b"\x00\x01" + (4 + len(oxm)).to_bytes(2, "big") + oxm
        match += b"\x00" * (-len(match) % 8)
        return of.PacketIn(u(32), u(32), u(16), u(8), u(8), u(64), match, blob())
    if kind == 7:
        return of.RoleRequest(u(32), u(32), u(64))
    if kind == 8:
        return of.RoleReply(u(32), u(32), u(64))
    known = set(of.MSG_TYPES.values())
    return of.Unknown(u(32), rng.choice([t for t in range(256) if t not in known]), blob())


def test_c1_codec_fidelity():
    rng = random.Random(2024)
    t0 = time.perf_counter()
    n = 10_000
    kinds = set()
    for _ in range(n):
        msg = random_message(rng)
        kinds.add(type(msg))
        wire = of.encode(msg)
        assert of.decode(wire) == (msg, len(wire))
    elapsed = time.perf_counter() - t0
    hello = of.encode(of.Hello(1)).hex() == "0400000800000001"
    features = of.encode(of.FeaturesReply(2, of.DatapathId(0xAA), 256, 254, 0, 0x4F, 0)).hex() == (
        "0406002000000002" "00000000000000aa" "00000100" "fe" "00" "0000" "0000004f" "00000000")
    check("C1", len(kinds) == 10 and hello and features and elapsed < 5,
          f"{n} random messages over {len(kinds)} variants round-trip in {elapsed:.2f}s; "
          f"Hello vector {'ok' if hello else 'MISMATCH'}, "
          f"FeaturesReply vector {'ok' if features else 'MISMATCH'}")


# --- 2: timing formulas -----------------------------------------------------------


def timing_rows():
    text = (Path(__file__).parent / "vectors" / "timing.txt").read_text()
    for line in text.splitlines():
        if line.strip() and not line.startswith("#"):
            ins, times, slacks = line.split("|")
            yield tuple(map(int, ins.split())), tuple(map(int, times.split())), \
                tuple(map(int, slacks.split()))


def test_c2_timing_formulas():
    rows = list(timing_rows())
    bad = []
    eq4_tight = eq5_tight = False
    for ins, times, slacks in rows:
        delta, offset, delay, sc, dc, ofdeny, chk = ins
        cfg = ChannelConfig(delta_ms=delta, offset_ms=offset, delay_ms=delay)
        d = TransitionDelays(sc, dc, ofdeny, chk)
        got_t = (sender_bit_time(1, d), receiver_bit_time(0, cfg, d), receiver_bit_time(1, cfg, d))
        rep = validate(cfg, d)
        got_s = (rep["EQ3"].slack, rep["EQ4"].slack, rep["EQ5"].slack)
        if got_t != times or got_s != slacks or sender_bit_time(0, d) != 0:
            bad.append(ins)
        eq4_tight |= offset == sc
        eq5_tight |= delay == delay_upper_bound(cfg, d)
    check("C2", len(rows) >= 20 and not bad and eq4_tight and eq5_tight,
          f"{len(rows)} hand-substituted sets, {len(bad)} mismatches; "
          f"offset=sc case {'present' if eq4_tight else 'missing'}, "
          f"delay at upper bound {'present' if eq5_tight else 'missing'}")


# --- 3: deterministic grid ----------------------------------------------------

DETERMINISTIC = Scenario(latency=LatencyModel(0.5, None), service=ServiceModel(0.2),
                         channel=ChannelConfig(offset_ms=5, delay_frac=Fraction(1, 2)),
                         message_len=64, repetitions=1)


def test_c3_deterministic_grid():
    t0 = time.perf_counter()
    failures = []
    for delta, fl in itertools.product((40, 50, 60, 80, 100), (7, 14, 28)):
        s = DETERMINISTIC.with_(channel=DETERMINISTIC.channel.with_(delta_ms=delta, fl=fl))
        r = keep(run_trial(s)).results[0]
        if not (r.accuracy == 100.0 and r.edit_distance == 0
                and r.termination is Termination.EOM):
            failures.append((delta, fl, r.accuracy, r.termination.value))
    elapsed = time.perf_counter() - t0
    check("C3", not failures and elapsed < 10,
          f"15 cells, {15 - len(failures)} at 100% with Eom in {elapsed:.1f}s"
          + (f"; failing {failures}" if failures else ""))


# --- 4: throughput arithmetic -------------------------------------------------


def test_c4_throughput():
    raw = estimate_transfer(ChannelConfig(delta_ms=60), 64).raw_bps
    # 20 bps on the wire is delta = 50 ms; frames sent back to back
    big = estimate_transfer(ChannelConfig(delta_ms=50, fl=7, frame_align_ms=0), 2048)
    secs = big.duration_ms / 1000
    check("C4", abs(raw - 16.67) <= 0.01 and abs(secs - 819) <= 20,
          f"raw {raw:.3f} bps at 60 ms; 2048 bytes at {big.raw_bps:g} bps take {secs:.1f}s "
          f"({secs / 60:.1f} min)")


# --- 5: below the usable interval ---------------------------------------------


def test_c5_premature_eom():
    s = Scenario(channel=ChannelConfig(delta_ms=30, fl=7),
                 switch_timing=SwitchTiming(setup_ms=20), repetitions=10)
    delays = measure_delays(s)
    report = validate(s.channel, delays)
    summary = keep(run_trial(s))
    outcomes = []
    for r in summary.results:
        expected = pad_message(r.sent, s.channel.fl)
        premature = r.termination is Termination.EOM and len(r.received) < len(expected)
        outcomes.append(premature or r.termination is Termination.MISSED_FRAME_THRESHOLD)
    check("C5", not report["EQ3"].ok and all(outcomes),
          f"{' '.join(report.lines())}; {sum(outcomes)}/10 trials end early "
          f"({', '.join(sorted({r.termination.value for r in summary.results}))}), "
          f"mean accuracy {summary.mean_accuracy:.1f}%")


# --- 6: frame length ----------------------------------------------------------

C6_DELTAS = (50, 60, 80)
C6_FLS = (7, 14, 28)


@pytest.fixture(scope="module")
def c6_grid():
    grid = {}
    for delta, fl in itertools.product(C6_DELTAS, C6_FLS):
        s = Scenario(channel=ChannelConfig(delta_ms=delta, fl=fl),
                     service=ServiceModel(0.2, Uniform(0, delta / 4)), repetitions=10)
        grid[delta, fl] = keep(run_trial(s))
    return grid


def _fmt(grid, attr):
    return " ".join(f"{d}:" + "/".join(f"{getattr(grid[d, fl], attr):.1f}" for fl in C6_FLS)
                    for d in C6_DELTAS)


def test_c6_accuracy_falls_with_frame_length(c6_grid):
    acc_ok = all(c6_grid[d, 7].mean_accuracy >= c6_grid[d, 14].mean_accuracy
                 >= c6_grid[d, 28].mean_accuracy for d in C6_DELTAS)
    flips = {k: v.flips_0to1 + v.flips_1to0 for k, v in c6_grid.items()}
    flips_ok = all(flips[d, 7] <= flips[d, 14] <= flips[d, 28] and flips[d, 7] < flips[d, 28]
                   for d in C6_DELTAS)
    check("C6", acc_ok and flips_ok,
          f"accuracy Fl 7/14/28 {_fmt(c6_grid, 'mean_accuracy')} "
          f"({'ok' if acc_ok else 'not monotone'}); bit flips "
          + " ".join(f"{d}:" + "/".join(f"{flips[d, fl]:.1f}" for fl in C6_FLS) for d in C6_DELTAS)
          + f" ({'increasing' if flips_ok else 'not increasing'})")


@pytest.mark.xfail(strict=True, reason="frames re-align every second in this model, so SoF "
                   "slots never drift far enough to be missed; see the decisions notes")
def test_c6_missed_sof_rises_with_frame_length(c6_grid):
    missed = {k: v.missed_sof for k, v in c6_grid.items()}
    ok = all(missed[d, 7] <= missed[d, 14] <= missed[d, 28] and missed[d, 7] < missed[d, 28]
             for d in C6_DELTAS)
    record("C6", ok, f"missed SoF {_fmt(c6_grid, 'missed_sof')} "
                     f"({'increasing' if ok else 'NOT increasing'})")
    assert ok


# --- 7: check delay -----------------------------------------------------------

C7_FRACS = (Fraction(1, 3), Fraction(1, 2), Fraction(2, 3))


def test_c7_check_delay_trend():
    rows = {}
    for delta in (40, 50, 60):
        accs = []
        for frac in C7_FRACS:
            s = Scenario(channel=ChannelConfig(delta_ms=delta, fl=7, delay_frac=frac),
                         deny_jitter=Exponential(8), repetitions=10)
            accs.append(keep(run_trial(s)).mean_accuracy)
        rows[delta] = accs
    ok = all(a[0] <= a[1] <= a[2] for a in rows.values())
    check("C7", ok, "accuracy at 1/3, 1/2, 2/3 of delta: "
          + " ".join(f"{d}:" + "/".join(f"{x:.1f}" for x in a) for d, a in rows.items()))


# --- 8: load ------------------------------------------------------------------


def test_c8_load_lowers_accuracy():
    base = Scenario(channel=ChannelConfig(delta_ms=60, fl=7, delay_frac=Fraction(1, 2)),
                    service=ServiceModel(0.2, packet_in_ms=2.0), repetitions=10)
    idle = keep(run_trial(base)).mean_accuracy
    loaded = {}
    for lam in (5, 10, 20):
        s = base.with_(load=LoadProfile(n_switches=20, rate=lam, warmup_ms=2000))
        loaded[lam] = keep(run_trial(s)).mean_accuracy
    strictly_lower = loaded[10] < idle
    monotone = loaded[5] >= loaded[10] >= loaded[20]
    check("C8", strictly_lower and monotone,
          f"no load {idle:.1f}%; 20 switches at lambda 5/10/20 per s: "
          + "/".join(f"{loaded[k]:.1f}" for k in (5, 10, 20)) + "%")


# --- 9: state machines ----------------------------------------------------------


def test_c9_trace_conformance():
    # runs last in file order, after every trial above has filled TRACES
    if not TRACES:
        pytest.skip("run with the trial criteria to collect traces")
    n_traces = violations = 0
    for sender, receiver in TRACES:
        n_traces += len(sender) + len(receiver)
        violations += len(check_conformance(sender, "s")) + len(check_conformance(receiver, "r"))
    check("C9", violations == 0 and n_traces > 0,
          f"{n_traces} bit traces from {len(TRACES)} trials, {violations} violations")


# --- 10: whitelist ------------------------------------------------------------


def test_c10_whitelist_mitigation():
    s = Scenario(whitelist=WhitelistPolicy(True, frozenset({(0x1234, None)})), repetitions=5)
    summary = run_trial(s)
    admitted = sum(1 for r in summary.results for e in r.controller_events
                   if e.event == "admit-accept" and e.dpid == s.channel.dpid)
    check("C10", admitted == 0 and summary.mean_accuracy < 20,
          f"{admitted} covert admissions, mean accuracy {summary.mean_accuracy:.1f}%")


# --- 11: edit distance ----------------------------------------------------------


@functools.lru_cache(maxsize=None)
def lev_oracle(a, b):
    """The recursive definition; cached because every suffix is itself in the word set."""
    if not a:
        return len(b)
    if not b:
        return len(a)
    return min(lev_oracle(a[1:], b) + 1, lev_oracle(a, b[1:]) + 1,
               lev_oracle(a[1:], b[1:]) + (a[0] != b[0]))


def test_c11_levenshtein():
    words = ["".join(p) for n in range(7) for p in itertools.product("abc", repeat=n)]
    mismatches = sum(levenshtein(a, b) != lev_oracle(a, b) for a in words for b in words)
    lev_oracle.cache_clear()
    rng = random.Random(11)
    metric_bad = 0
    d = levenshtein
    for _ in range(1000):
        a, b, c = ("".join(rng.choice("abcd") for _ in range(rng.randrange(12))) for _ in range(3))
        metric_bad += not (d(a, b) == d(b, a) and (d(a, b) == 0) == (a == b)
                           and d(a, c) <= d(a, b) + d(b, c))
    check("C11", mismatches == 0 and metric_bad == 0,
          f"all {len(words) ** 2} pairs up to length 6 over 3 letters vs the recursive oracle, "
          f"{mismatches} mismatches; 1000 random triples, {metric_bad} metric violations")
