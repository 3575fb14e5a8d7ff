"""Covert sender and receiver.

Both ends drive a :class:`SwitchAgent`, which plays the switch side of the
OpenFlow handshake with the shared DPID. The sender signals a 1 by holding
the DPID at the controller during an interval; the receiver connects a
little later with the same DPID and reads a 1 when the controller turns it
away.
"""

from __future__ import annotations

import enum
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

from . import ofwire as of
from .framing import Frame, decode_bits, encode_message, is_eom
from .simnet import CLOSED, ConnectionDropped, ConnectionRefused
from .timing import ChannelConfig, TransitionDelays, budget

log = logging.getLogger(__name__)


class Outcome(enum.Enum):
    ESTABLISHED_ACCEPTED = "established-accepted"
    ESTABLISHED_THEN_DENIED = "established-then-denied"
    REFUSED = "refused"
    ABORTED = "aborted"


class Status(enum.Enum):
    ACCEPTED = "accepted"
    DENIED = "denied"


class SenderState(enum.Enum):
    IDLE = "Idle"
    OPENFLOW_ESTABLISHED = "OpenFlowEstablished"
    TIMEOUT_REACHED = "TimeoutReached"
    OPENFLOW_DISCONNECTED = "OpenFlowDisconnected"


class ReceiverState(enum.Enum):
    IDLE = "Idle"
    OFFSET_REACHED = "OffsetReached"
    OPENFLOW_ESTABLISHED = "OpenFlowEstablished"
    OPENFLOW_ACCEPTED = "OpenFlowAccepted"
    OPENFLOW_DISCONNECTED = "OpenFlowDisconnected"
    REACHED_CHECK_STATUS_TIMEOUT = "ReachedCheckStatusTimeout"
    GOT_1 = "Got1"
    GOT_0 = "Got0"
    TIMEOUT_REACHED = "TimeoutReached"


S = SenderState
R = ReceiverState

SENDER_EDGES = {
    S.IDLE: {S.IDLE, S.OPENFLOW_ESTABLISHED},
    S.OPENFLOW_ESTABLISHED: {S.TIMEOUT_REACHED},
    S.TIMEOUT_REACHED: {S.OPENFLOW_DISCONNECTED, S.TIMEOUT_REACHED},
    S.OPENFLOW_DISCONNECTED: {S.IDLE},
}

RECEIVER_EDGES = {
    R.IDLE: {R.OFFSET_REACHED},
    R.OFFSET_REACHED: {R.OPENFLOW_ESTABLISHED},
    R.OPENFLOW_ESTABLISHED: {R.OPENFLOW_ACCEPTED, R.OPENFLOW_DISCONNECTED},
    R.OPENFLOW_ACCEPTED: {R.REACHED_CHECK_STATUS_TIMEOUT},
    R.OPENFLOW_DISCONNECTED: {R.REACHED_CHECK_STATUS_TIMEOUT},
    R.REACHED_CHECK_STATUS_TIMEOUT: {R.GOT_1, R.GOT_0},
    R.GOT_1: {R.TIMEOUT_REACHED},
    R.GOT_0: {R.TIMEOUT_REACHED},
    R.TIMEOUT_REACHED: {R.IDLE},
}


@dataclass
class BitTrace:
    interval: int
    role: str
    frame: int
    position: int
    bit: Optional[int] = None
    outcome: str = "idle"
    t_start: float = 0.0
    t_set: Optional[float] = None
    t_check: Optional[float] = None
    transitions: list = field(default_factory=list)

    def enter(self, state, t):
        self.transitions.append((state, t))

    def format(self) -> str:
        def ms(v):
            return "-" if v is None else f"{v:.3f}"
        bit = "-" if self.bit is None else self.bit
        return (f"interval={self.interval} role={self.role} bit={bit} "
                f"outcome={self.outcome} t_set={ms(self.t_set)} t_check={ms(self.t_check)}")

    @classmethod
    def parse(cls, line: str) -> "BitTrace":
        kv = dict(part.split("=", 1) for part in line.split())

        def opt(v, conv):
            return None if v == "-" else conv(v)
        return cls(int(kv["interval"]), kv["role"], -1, -1,
                   opt(kv["bit"], int), kv["outcome"],
                   t_set=opt(kv["t_set"], float), t_check=opt(kv["t_check"], float))


def check_conformance(traces: list[BitTrace], role: str) -> list[str]:
    """Walk the recorded transitions against the state diagram.

    Returns one message per violation; empty means the traces conform.
    """
    edges = SENDER_EDGES if role == "s" else RECEIVER_EDGES
    initial = S.IDLE if role == "s" else R.IDLE
    problems = []
    prev = None
    last_t = -math.inf
    for tr in traces:
        if not tr.transitions:
            problems.append(f"interval {tr.interval}: no transitions recorded")
        elif prev is None and tr.transitions[0][0] is not initial:
            problems.append(f"interval {tr.interval}: does not start in {initial.value}")
        for state, t in tr.transitions:
            if t < last_t:
                problems.append(f"interval {tr.interval}: time goes backwards at {state.value}")
            last_t = t
            if prev is not None and state not in edges[prev]:
                problems.append(f"interval {tr.interval}: {prev.value} -> {state.value}")
            prev = state
    return problems


@dataclass(frozen=True)
class SwitchTiming:
    """Local costs of the switch-side operations (e.g. a vsctl call)."""

    setup_ms: float = 0.0
    teardown_ms: float = 0.0
    check_ms: float = 0.0


class SwitchAgent:
    """Switch side of one controller connection, keyed on a DPID."""

    def __init__(self, runtime, address, dpid: int, *, clock=None, credential=None,
                 timing: SwitchTiming = SwitchTiming(), reconnect_backoff_ms: float = 0.0,
                 name: str = "switch"):
        self.rt = runtime
        self.clock = clock if clock is not None else runtime.clock()
        self.address = address
        self.dpid = of.DatapathId(dpid)
        self.credential = credential
        self.timing = timing
        self.reconnect_backoff_ms = reconnect_backoff_ms
        self.name = name
        self.conn = None
        self.denial = None
        self.denied_at: Optional[float] = None
        self._watcher = None
        self._decoder = None
        self._pending = deque()
        self._generation = 0
        self._last_delete: Optional[float] = None
        self._xid = 0

    @property
    def connected(self) -> bool:
        return self.conn is not None and not self.conn.closed

    def _next_xid(self):
        self._xid = (self._xid + 1) & 0xFFFFFFFF
        return self._xid

    def _mark_denied(self):
        if self.denial is not None and not self.denial.done():
            self.denied_at = self.clock.now()
            self.denial.set_result(self.denied_at)

    def send(self, msg):
        if self.connected:
            self.conn.send(of.encode(msg))

    async def _next_message(self, conn):
        while not self._pending:
            data = await conn.recv()
            if data is CLOSED or not data:
                return None
            try:
                self._pending.extend(self._decoder.feed(data))
            except of.OfWireError:
                return None
        return self._pending.popleft()

    async def set_controller(self) -> Outcome:
        """Connect and run the handshake, presenting our DPID."""
        if self.conn is not None:
            raise RuntimeError(f"{self.name}: controller already set")
        self._generation += 1
        gen = self._generation
        self.denial = self.rt.create_future()
        self.denied_at = None
        if self.reconnect_backoff_ms and self._last_delete is not None:
            await self.clock.sleep_until(self._last_delete + self.reconnect_backoff_ms)
        if self.timing.setup_ms:
            await self.clock.sleep(self.timing.setup_ms)
        try:
            conn = await self.rt.connect(self.address, credential=self.credential)
        except (ConnectionRefused, ConnectionDropped, OSError):
            self._mark_denied()
            return Outcome.REFUSED
        if gen != self._generation:
            conn.close()
            return Outcome.ABORTED
        self.conn = conn
        self._decoder = of.StreamDecoder()
        self._pending = deque()
        conn.send(of.encode(of.Hello(self._next_xid())))
        while True:
            msg = await self._next_message(conn)
            if gen != self._generation:
                return Outcome.ABORTED
            if msg is None:
                self._mark_denied()
                return Outcome.ESTABLISHED_THEN_DENIED
            if isinstance(msg, of.FeaturesRequest):
                conn.send(of.encode(of.FeaturesReply(msg.xid, self.dpid)))
                break
            self._answer(conn, msg)
        self._watcher = self.rt.spawn(self._watch(conn, gen), name=f"{self.name}-watch")
        return Outcome.ESTABLISHED_ACCEPTED

    def _answer(self, conn, msg):
        if isinstance(msg, of.EchoRequest):
            conn.send(of.encode(of.EchoReply(msg.xid, msg.data)))
        elif isinstance(msg, of.RoleRequest):
            conn.send(of.encode(of.RoleReply(msg.xid, msg.role, msg.generation_id)))
            if msg.role == of.OFPCR_ROLE_SLAVE:
                self._mark_denied()

    async def _watch(self, conn, gen):
        while gen == self._generation:
            msg = await self._next_message(conn)
            if gen != self._generation:
                return
            if msg is None:
                self._mark_denied()
                return
            self._answer(conn, msg)

    async def delete_controller(self):
        """Tear down the connection, if any. Idempotent."""
        if self.conn is None and self._watcher is None:
            if self.denial is not None and not self.denial.done() and self._generation:
                # abort an in-flight set_controller that has not connected yet
                self._generation += 1
            return
        self._generation += 1
        if self.timing.teardown_ms:
            await self.clock.sleep(self.timing.teardown_ms)
        if self._watcher is not None:
            self._watcher.cancel()
            self._watcher = None
        if self.conn is not None:
            self.conn.close()
            self.conn = None
        self._last_delete = self.clock.now()

    async def check_connection_status(self) -> Status:
        if self.denial is None:
            raise RuntimeError(f"{self.name}: no set_controller issued")
        if self.timing.check_ms:
            await self.clock.sleep(self.timing.check_ms)
        return Status.DENIED if self.denial.done() else Status.ACCEPTED


class ControllerUnreachable(RuntimeError):
    pass


def _align_up(t: float, grid) -> float:
    if not grid:
        return t
    return math.ceil(t / grid - 1e-9) * grid


class Sender:
    """Transmit a message by modulating occupancy of the shared DPID."""

    def __init__(self, agent: SwitchAgent, cfg: ChannelConfig, delays: TransitionDelays):
        self.agent = agent
        self.cfg = cfg
        self.delays = delays
        self.budget = budget(cfg, delays)
        self.traces: list[BitTrace] = []
        self.frame_starts: list[float] = []
        self._interval = 0

    @property
    def clock(self):
        return self.agent.clock

    async def _wait_until_end(self, start, bit):
        if self.cfg.sync == "anchored" or self.cfg.hold_ones:
            await self.clock.sleep_until(start + self.cfg.delta_ms)
        else:
            await self.clock.sleep(max(0.0, float(self.budget.ws[bit])))

    async def _send_bit(self, bit, frame_idx, pos) -> Optional[Outcome]:
        clock = self.clock
        agent = self.agent
        start = clock.now()
        tr = BitTrace(self._interval, "s", frame_idx, pos, bit, t_start=start)
        self._interval += 1
        self.traces.append(tr)
        if bit and self.cfg.hold_ones and agent.connected:
            # keep the DPID held across consecutive ones
            tr.outcome = "hold"
            tr.enter(S.TIMEOUT_REACHED, start)
            await self._wait_until_end(start, 1)
            return None
        if agent.conn is not None:
            await agent.delete_controller()
            tr.enter(S.OPENFLOW_DISCONNECTED, clock.now())
        tr.enter(S.IDLE, clock.now())
        if not bit:
            await self._wait_until_end(start, 0)
            return None
        tr.t_set = clock.now()
        outcome = await agent.set_controller()
        tr.outcome = "acc" if outcome is Outcome.ESTABLISHED_ACCEPTED else "den"
        tr.enter(S.OPENFLOW_ESTABLISHED, clock.now())
        if self.cfg.hold_ones:
            await self._wait_until_end(start, 1)
            tr.enter(S.TIMEOUT_REACHED, clock.now())
            return outcome
        if self.cfg.sync == "anchored":
            await clock.sleep_until(start + self.cfg.delta_ms - self.delays.dc)
        else:
            await clock.sleep(max(0.0, float(self.budget.ws[1])))
        tr.enter(S.TIMEOUT_REACHED, clock.now())
        await agent.delete_controller()
        tr.enter(S.OPENFLOW_DISCONNECTED, clock.now())
        return outcome

    async def run(self, message: str) -> list[BitTrace]:
        cfg = self.cfg
        clock = self.clock
        enc = encode_message(message, cfg.fl, cfg.sof_count)
        await clock.sleep_until(cfg.start_time_ms)
        for frame_idx, frame in enumerate(enc.frames):
            start = _align_up(clock.now(), cfg.frame_align_ms)
            await clock.sleep_until(start)
            self.frame_starts.append(start)
            outcomes = []
            for pos, bit in enumerate(frame.bits):
                outcome = await self._send_bit(bit, frame_idx, pos)
                if outcome is not None:
                    outcomes.append(outcome)
            if self.agent.conn is not None:
                await self.agent.delete_controller()
                self.traces[-1].enter(S.OPENFLOW_DISCONNECTED, clock.now())
            if outcomes and all(o is Outcome.REFUSED for o in outcomes):
                raise ControllerUnreachable(f"controller unreachable for frame {frame_idx}")
        return self.traces


class Termination(enum.Enum):
    EOM = "Eom"
    MISSED_FRAME_THRESHOLD = "MissedFrameThreshold"
    MAX_FRAMES = "MaxFrames"


@dataclass
class ReceiveResult:
    message: str
    traces: list
    termination: Termination
    frames: list = field(default_factory=list)
    frame_starts: list = field(default_factory=list)
    t_end: float = 0.0
    # start of every frame slot sampled, including missed ones
    slot_starts: list = field(default_factory=list)


class Receiver:
    """Sample the shared DPID once per interval and rebuild the frames."""

    def __init__(self, agent: SwitchAgent, cfg: ChannelConfig, delays: TransitionDelays,
                 printable_only: bool = True):
        self.agent = agent
        self.cfg = cfg
        self.delays = delays
        self.budget = budget(cfg, delays)
        # Wait that closes each interval. When the check delay runs from
        # set_controller, the denial overlaps it, so a 1 costs no extra time.
        if cfg.check_from == "transition":
            self.fill = dict(self.budget.wr)
        else:
            self.fill = {0: self.budget.wr[0], 1: self.budget.wr[0]}
        self.printable_only = printable_only
        self.traces: list[BitTrace] = []
        self._interval = 0

    @property
    def clock(self):
        return self.agent.clock

    async def _receive_bit(self, frame_idx, pos) -> int:
        cfg = self.cfg
        clock = self.clock
        agent = self.agent
        delay = float(cfg.delay)
        start = clock.now()
        tr = BitTrace(self._interval, "r", frame_idx, pos, t_start=start)
        self._interval += 1
        self.traces.append(tr)
        tr.enter(R.IDLE, start)
        if cfg.sync == "anchored":
            await clock.sleep_until(start + cfg.offset_ms)
        else:
            await clock.sleep(float(cfg.offset_ms))
        tr.enter(R.OFFSET_REACHED, clock.now())
        tr.t_set = clock.now()
        outcome = await agent.set_controller()
        tr.enter(R.OPENFLOW_ESTABLISHED, clock.now())
        established = clock.now()
        if await clock.wait(agent.denial, delay):
            tr.enter(R.OPENFLOW_DISCONNECTED, clock.now())
            if cfg.check_from == "transition":
                await clock.sleep(delay)
            else:
                await clock.sleep_until(established + delay)
        else:
            tr.enter(R.OPENFLOW_ACCEPTED, clock.now())
        tr.enter(R.REACHED_CHECK_STATUS_TIMEOUT, clock.now())
        status = await agent.check_connection_status()
        tr.t_check = clock.now()
        # a refused connect says nothing about the DPID holder
        bit = 1 if status is Status.DENIED and outcome is not Outcome.REFUSED else 0
        tr.bit = bit
        tr.outcome = "den" if bit else "acc"
        tr.enter(R.GOT_1 if bit else R.GOT_0, clock.now())
        await agent.delete_controller()
        if cfg.sync == "anchored":
            await clock.sleep_until(start + cfg.delta_ms)
        else:
            await clock.sleep(max(0.0, float(self.fill[bit])))
        tr.enter(R.TIMEOUT_REACHED, clock.now())
        return bit

    async def run(self) -> ReceiveResult:
        cfg = self.cfg
        clock = self.clock
        await clock.sleep_until(cfg.start_time_ms)
        frames: list[Frame] = []
        starts: list[float] = []
        slot_starts: list[float] = []
        missed = 0
        slots = 0
        termination = Termination.MAX_FRAMES
        while slots < cfg.max_frames:
            start = _align_up(clock.now(), cfg.frame_align_ms)
            await clock.sleep_until(start)
            slots += 1
            slot_starts.append(start)
            sof = []
            for k in range(cfg.sof_count):
                sof.append(await self._receive_bit(slots - 1, k))
            if not any(sof):
                missed += 1
                if missed >= cfg.missed_frame_threshold:
                    termination = Termination.MISSED_FRAME_THRESHOLD
                    break
                await clock.sleep_until(start + cfg.frame_duration_ms)
                continue
            missed = 0
            data = []
            for pos in range(cfg.fl):
                data.append(await self._receive_bit(slots - 1, cfg.sof_count + pos))
            frame = Frame(tuple(data), tuple(sof))
            starts.append(start)
            frames.append(frame)
            if is_eom(frame):
                termination = Termination.EOM
                break
        bits = [b for f in frames if not is_eom(f) for b in f.data]
        message = decode_bits(bits, self.printable_only)
        return ReceiveResult(message, self.traces, termination, frames, starts, clock.now(),
                             slot_starts)


async def run_sender(agent: SwitchAgent, cfg: ChannelConfig, message: str,
                     delays: TransitionDelays = TransitionDelays()) -> list[BitTrace]:
    return await Sender(agent, cfg, delays).run(message)


async def run_receiver(agent: SwitchAgent, cfg: ChannelConfig,
                       delays: TransitionDelays = TransitionDelays()) -> ReceiveResult:
    return await Receiver(agent, cfg, delays).run()
