"""Trials, parameter sweeps and the accuracy metric."""

from __future__ import annotations

import csv
import io
import itertools
import random
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Iterable, Optional, Sequence

from .controller import AdmissionPolicy, Controller, ServiceModel, WhitelistPolicy
from .endpoints import (BitTrace, Receiver, Sender, SwitchAgent, SwitchTiming, Termination)
from .framing import encode_message, pad_message
from .loadgen import LoadProfile, start_load
from .simnet import ClockModel, Distribution, LatencyModel, Simulation, mean_of
from .timing import ChannelConfig, TransitionDelays, ValidationReport, validate

CONTROLLER_ADDR = "controller"
PRINTABLE = "".join(chr(c) for c in range(32, 127))


def levenshtein(a: str, b: str) -> int:
    """Minimum single-character insertions, deletions and substitutions."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def accuracy(sent: str, received: str) -> float:
    """Similarity in percent, normalised by the longer string."""
    if not sent:
        raise ValueError("sent message must be non-empty")
    longest = max(len(sent), len(received))
    pct = 100.0 * (1 - levenshtein(sent, received) / longest)
    return min(100.0, max(0.0, pct))


def random_message(length: int = 64, seed: int = 0) -> str:
    rng = random.Random(f"message:{seed}")
    return "".join(rng.choice(PRINTABLE) for _ in range(length))


@dataclass(frozen=True)
class Scenario:
    channel: ChannelConfig = ChannelConfig()
    latency: LatencyModel = LatencyModel()
    service: ServiceModel = ServiceModel()
    # extra delay before the controller closes a denied connection
    deny_jitter: Distribution = None
    switch_timing: SwitchTiming = SwitchTiming()
    # budgets the endpoints plan with; derived from the network model if None
    delays: Optional[TransitionDelays] = None
    sender_clock: ClockModel = ClockModel()
    receiver_clock: ClockModel = ClockModel()
    load: Optional[LoadProfile] = None
    policy: AdmissionPolicy = AdmissionPolicy.DENY_SECOND
    whitelist: WhitelistPolicy = WhitelistPolicy()
    message: Optional[str] = None
    message_len: int = 64
    repetitions: int = 10
    seed: int = 0
    sender_enabled: bool = True
    lead_ms: float = 1000.0
    # probe handshakes used to measure the delays when none are given
    calibration_probes: int = 20
    # which quantile of the probe samples the endpoints plan with
    calibration_quantile: float = 0.0

    def __post_init__(self):
        if self.repetitions < 1:
            raise ValueError("repetitions must be at least 1")
        if self.message is not None and not self.message:
            raise ValueError("message must be non-empty")
        if self.message is None and self.message_len < 1:
            raise ValueError("message_len must be at least 1")

    @property
    def sent_message(self) -> str:
        if self.message is not None:
            return self.message
        return random_message(self.message_len, self.seed)

    def with_(self, **changes) -> "Scenario":
        return replace(self, **changes)


def expected_delays(s: Scenario) -> TransitionDelays:
    """Mean transition delays implied by the simulated network, without load.

    Set-controller spans the TCP round trip, the switch Hello, its service
    slot, and the controller Hello/FeaturesRequest coming back. A denial
    needs the FeaturesReply, its admission slot and the FIN.
    """
    lat = s.latency.mean_ms
    jitter = mean_of(s.service.jitter)
    hello = s.service.per_message_ms + (jitter if s.service.jitter_scope == "all" else 0.0)
    admission = s.service.per_message_ms + jitter
    t = s.switch_timing
    return TransitionDelays(
        sc=t.setup_ms + 4 * lat + hello,
        dc=t.teardown_ms,
        ofdeny=2 * lat + admission + mean_of(s.deny_jitter),
        chkconn=t.check_ms,
    )


def _quantile(xs, q: float) -> float:
    """Linear-interpolated sample quantile; 0 for an empty sample."""
    if not xs:
        return 0.0
    xs = sorted(xs)
    pos = q * (len(xs) - 1)
    lo = int(pos)
    hi = min(lo + 1, len(xs) - 1)
    return xs[lo] + (xs[hi] - xs[lo]) * (pos - lo)


def measure_delays(s: Scenario, seed: Optional[int] = None) -> TransitionDelays:
    """Estimate the transition delays by probing an unloaded controller.

    This mirrors what the endpoints would do before transmitting. ``sc``,
    ``dc`` and ``chkconn`` come from a switch connecting alone. ``ofdeny`` is
    the extra time until a denial is seen when a second switch connects
    ``offset_ms`` after a first one, measured from the second switch's
    ``set_controller`` call and net of the lone ``sc``. Contention between
    the two handshakes is therefore folded into ``ofdeny``.
    """
    if s.calibration_probes < 1:
        return expected_delays(s)
    seed = s.seed if seed is None else seed
    sim = Simulation(seed=f"calibrate:{seed}", latency=s.latency)
    ctrl = Controller(sim, AdmissionPolicy.DENY_SECOND, s.service, deny_delay=s.deny_jitter,
                      log_packet_in=False)
    ctrl.serve(CONTROLLER_ADDR)
    offset = float(s.channel.offset_ms)
    sc, dc, chk, deny = [], [], [], []

    def agent(name):
        return SwitchAgent(sim, CONTROLLER_ADDR, s.channel.dpid, credential=name,
                           timing=s.switch_timing, name=name)

    async def lone(a):
        t = sim.now()
        await a.set_controller()
        sc.append(sim.now() - t)
        t = sim.now()
        await a.check_connection_status()
        chk.append(sim.now() - t)
        t = sim.now()
        await a.delete_controller()
        dc.append(sim.now() - t)

    async def second(a):
        await sim.sleep(offset)
        t = sim.now()
        await a.set_controller()
        if await sim.wait_future(a.denial, 10_000):
            deny.append(a.denied_at - t)
        await a.delete_controller()

    async def probe():
        a, b = agent("probe-a"), agent("probe-b")
        for _ in range(s.calibration_probes):
            await lone(a)
            await sim.sleep(1000)
            first = sim.spawn(a.set_controller())
            await second(b)
            await first
            await a.delete_controller()
            await sim.sleep(1000)

    sim.run(sim.spawn(probe()))
    q = s.calibration_quantile
    sc_q = _quantile(sc, q)
    return TransitionDelays(sc=sc_q, dc=_quantile(dc, q), chkconn=_quantile(chk, q),
                            ofdeny=max(0.0, _quantile(deny, q) - sc_q))


@dataclass
class TrialResult:
    sent: str
    received: str
    edit_distance: int
    accuracy: float
    duration_ms: float
    termination: Termination
    flips_0to1: int = 0
    flips_1to0: int = 0
    missed_sof: int = 0
    seed: int = 0
    sender_traces: list = field(default_factory=list, repr=False)
    receiver_traces: list = field(default_factory=list, repr=False)
    controller_events: list = field(default_factory=list, repr=False)
    validation: Optional[ValidationReport] = field(default=None, repr=False)


@dataclass
class TrialSummary:
    scenario: Scenario
    results: list[TrialResult]

    def _mean(self, attr) -> float:
        return statistics.fmean(getattr(r, attr) for r in self.results)

    @property
    def mean_accuracy(self) -> float:
        return self._mean("accuracy")

    @property
    def std_accuracy(self) -> float:
        accs = [r.accuracy for r in self.results]
        return statistics.stdev(accs) if len(accs) > 1 else 0.0

    @property
    def mean_duration_ms(self) -> float:
        return self._mean("duration_ms")

    @property
    def flips_0to1(self) -> float:
        return self._mean("flips_0to1")

    @property
    def flips_1to0(self) -> float:
        return self._mean("flips_1to0")

    @property
    def missed_sof(self) -> float:
        return self._mean("missed_sof")


def _frame_key(start: float, align) -> int:
    return round(start / align) if align else round(start)


def error_breakdown(cfg: ChannelConfig, message: str, sender_starts: Sequence[float],
                    receiver_frames, receiver_starts: Sequence[float],
                    listened: Optional[Sequence[float]] = None) -> tuple[int, int, int]:
    """Compare what was sent with what was read, frame by frame.

    Frames are matched by their alignment slot (by order when frames are
    not aligned). ``listened`` holds every slot the receiver sampled a SoF
    in; sender frames outside it are not counted as missed, since the
    receiver had already stopped. Returns ``(flips_0to1, flips_1to0,
    missed_sof)``.
    """
    enc = encode_message(message, cfg.fl, cfg.sof_count)
    align = cfg.frame_align_ms
    if align:
        got = {}
        for frame, start in zip(receiver_frames, receiver_starts):
            got.setdefault(_frame_key(start, align), frame)
        sender_keys = [_frame_key(t, align) for t in sender_starts]
        window = None if listened is None else {_frame_key(t, align) for t in listened}
    else:
        got = dict(enumerate(receiver_frames))
        sender_keys = list(range(len(sender_starts)))
        window = None if listened is None else set(range(len(listened)))
    f01 = f10 = missed = 0
    for frame, key in zip(enc.frames, sender_keys):
        rx = got.get(key)
        if rx is None:
            if window is None or key in window:
                missed += 1
            continue
        for want, have in zip(frame.data, rx.data):
            if want == 0 and have == 1:
                f01 += 1
            elif want == 1 and have == 0:
                f10 += 1
    return f01, f10, missed


def run_once(s: Scenario, seed: int, delays: Optional[TransitionDelays] = None) -> TrialResult:
    """One repetition in a fresh simulated universe.

    ``delays`` are the budgets the endpoints plan with; by default the
    scenario's explicit delays or a fresh measurement.
    """
    sim = Simulation(seed=seed, latency=s.latency)
    ctrl = Controller(sim, s.policy, s.service, s.whitelist, deny_delay=s.deny_jitter,
                      log_packet_in=False)
    ctrl.serve(CONTROLLER_ADDR)
    warmup = 0.0
    if s.load is not None:
        start_load(sim, replace(s.load, seed=seed), CONTROLLER_ADDR, s.channel.dpid)
        warmup = s.load.warmup_ms
    cfg = s.channel.with_(start_time_ms=s.channel.start_time_ms + warmup + s.lead_ms)
    if delays is None:
        delays = s.delays if s.delays is not None else measure_delays(s)
    message = s.sent_message

    def agent(name, clock):
        return SwitchAgent(sim, CONTROLLER_ADDR, cfg.dpid, clock=sim.clock(clock),
                           credential=name, timing=s.switch_timing,
                           reconnect_backoff_ms=cfg.reconnect_backoff_ms, name=name)

    receiver = Receiver(agent("receiver", s.receiver_clock), cfg, delays)
    tasks = [sim.spawn(receiver.run(), name="receiver")]
    sender = None
    if s.sender_enabled:
        sender = Sender(agent("sender", s.sender_clock), cfg, delays)
        tasks.append(sim.spawn(sender.run(message), name="sender"))
    sim.run(*tasks)
    rx = tasks[0].result()

    expected = pad_message(message, cfg.fl)
    dist = levenshtein(expected, rx.message)
    f01 = f10 = missed = 0
    if sender is not None:
        f01, f10, missed = error_breakdown(cfg, message, sender.frame_starts,
                                           rx.frames, rx.frame_starts, rx.slot_starts)
    return TrialResult(
        sent=message, received=rx.message, edit_distance=dist,
        accuracy=accuracy(expected, rx.message),
        duration_ms=rx.t_end - cfg.start_time_ms, termination=rx.termination,
        flips_0to1=f01, flips_1to0=f10, missed_sof=missed, seed=seed,
        sender_traces=sender.traces if sender else [],
        receiver_traces=rx.traces, controller_events=ctrl.events,
        validation=validate(cfg, delays),
    )


def repetition_seed(s: Scenario, rep: int) -> int:
    return s.seed * 1_000_003 + rep


def run_trial(s: Scenario) -> TrialSummary:
    """Run every repetition; each gets a fresh controller and endpoints."""
    delays = s.delays if s.delays is not None else measure_delays(s)
    return TrialSummary(s, [run_once(s, repetition_seed(s, rep), delays)
                            for rep in range(s.repetitions)])


CSV_FIELDS = ("delta_ms", "fl", "delay_frac", "load", "trial_n", "mean_accuracy_pct",
              "std_accuracy_pct", "mean_duration_ms", "flips_0to1", "flips_1to0",
              "missed_sof")


@dataclass(frozen=True)
class SweepRow:
    delta_ms: float
    fl: int
    delay_frac: Fraction
    load: bool
    trial_n: int
    mean_accuracy_pct: float
    std_accuracy_pct: float
    mean_duration_ms: float
    flips_0to1: float
    flips_1to0: float
    missed_sof: float

    def as_csv(self) -> dict:
        return {
            "delta_ms": f"{float(self.delta_ms):g}",
            "fl": self.fl,
            "delay_frac": str(self.delay_frac),
            "load": "on" if self.load else "off",
            "trial_n": self.trial_n,
            "mean_accuracy_pct": f"{self.mean_accuracy_pct:.3f}",
            "std_accuracy_pct": f"{self.std_accuracy_pct:.3f}",
            "mean_duration_ms": f"{self.mean_duration_ms:.3f}",
            "flips_0to1": f"{self.flips_0to1:.3f}",
            "flips_1to0": f"{self.flips_1to0:.3f}",
            "missed_sof": f"{self.missed_sof:.3f}",
        }


def cell_scenario(base: Scenario, delta, fl, frac, load_on: bool) -> Scenario:
    channel = base.channel.with_(delta_ms=delta, fl=fl, delay_frac=Fraction(frac), delay_ms=None)
    load = None
    if load_on:
        load = base.load if base.load is not None else LoadProfile()
    return base.with_(channel=channel, load=load)


def _run_cell(args) -> SweepRow:
    base, delta, fl, frac, load_on = args
    summary = run_trial(cell_scenario(base, delta, fl, frac, load_on))
    return SweepRow(delta, fl, Fraction(frac), load_on, len(summary.results),
                    summary.mean_accuracy, summary.std_accuracy, summary.mean_duration_ms,
                    summary.flips_0to1, summary.flips_1to0, summary.missed_sof)


def sweep(base: Scenario, intervals: Sequence, frame_lengths: Sequence[int],
          delay_fracs: Sequence, loads: Sequence[bool] = (False,),
          jobs: int = 1) -> list[SweepRow]:
    """Run the Cartesian product of the grid; one row per cell."""
    for name, values in (("intervals", intervals), ("frame_lengths", frame_lengths),
                         ("delay_fracs", delay_fracs), ("loads", loads)):
        if not values:
            raise ValueError(f"{name} must be non-empty")
    cells = [(base, d, fl, Fraction(f), ld)
             for ld, f, fl, d in itertools.product(loads, delay_fracs, frame_lengths, intervals)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_run_cell, cells))
    return [_run_cell(c) for c in cells]


def write_csv(rows: Iterable[SweepRow], out) -> None:
    """Write rows to a path or an open text stream."""
    if isinstance(out, (str, bytes)) or hasattr(out, "__fspath__"):
        with open(out, "w", newline="") as fh:
            write_csv(rows, fh)
        return
    writer = csv.DictWriter(out, fieldnames=CSV_FIELDS)
    writer.writeheader()
    for row in rows:
        writer.writerow(row.as_csv())


def rows_to_csv(rows: Iterable[SweepRow]) -> str:
    buf = io.StringIO()
    write_csv(rows, buf)
    return buf.getvalue()
