"""Reference OpenFlow controller with configurable DPID-collision handling.

Every control message (and every connection close) passes through one FIFO
service queue, so background PacketIn load delays the handshakes of the
covert endpoints.
"""

from __future__ import annotations

import enum
import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Hashable, Optional

from . import ofwire as of
from .simnet import CLOSED, Distribution, sample

log = logging.getLogger(__name__)


class AdmissionPolicy(enum.Enum):
    DENY_SECOND = "deny-second"
    REPLACE_FIRST = "replace-first"
    ACCEPT_BOTH = "accept-both"
    ROLE_SPLIT = "role-split"


JITTER_SCOPES = ("admission", "all")


@dataclass(frozen=True)
class ServiceModel:
    """Time the controller spends on each queued item.

    ``jitter`` is added to admission work (FeaturesReply processing) only,
    or to every item with ``jitter_scope="all"``.
    """

    per_message_ms: float = 0.2
    jitter: Distribution = None
    # PacketIns may cost more than handshake messages (app pipeline).
    packet_in_ms: Optional[float] = None
    jitter_scope: str = "admission"

    def __post_init__(self):
        if self.per_message_ms < 0:
            raise ValueError("per_message_ms must be non-negative")
        if self.jitter_scope not in JITTER_SCOPES:
            raise ValueError(f"jitter_scope must be one of {JITTER_SCOPES}")

    def service_time(self, msg, rng) -> float:
        base = self.per_message_ms
        if isinstance(msg, of.PacketIn) and self.packet_in_ms is not None:
            base = self.packet_in_ms
        if self.jitter_scope == "all" or isinstance(msg, of.FeaturesReply):
            base += sample(self.jitter, rng)
        return base


@dataclass(frozen=True)
class WhitelistPolicy:
    """(dpid, credential) bindings; a ``None`` credential matches any."""

    enabled: bool = False
    allowed: frozenset = frozenset()

    def permits(self, dpid: int, credential) -> bool:
        if not self.enabled:
            return True
        return (dpid, credential) in self.allowed or (dpid, None) in self.allowed

    @classmethod
    def parse(cls, text: str) -> "WhitelistPolicy":
        """One ``<dpid> [credential]`` per line; ``#`` starts a comment."""
        allowed = set()
        for line in text.splitlines():
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            cred = parts[1] if len(parts) > 1 and parts[1] != "*" else None
            allowed.add((int(parts[0], 0), cred))
        return cls(True, frozenset(allowed))


class Decision(enum.Enum):
    ACCEPT = "accept"
    DENY = "deny"
    TERMINATE = "terminate"
    SPLIT_ROLES = "split-roles"


@dataclass(frozen=True)
class AdmissionDecision:
    kind: Decision
    conn: int
    other: Optional[int] = None

    @property
    def master(self):
        return self.other if self.kind is Decision.SPLIT_ROLES else None

    @property
    def slave(self):
        return self.conn if self.kind is Decision.SPLIT_ROLES else None


def decide(policy: AdmissionPolicy, holders: tuple, conn: int) -> AdmissionDecision:
    """Pure admission rule: ``holders`` are connections already holding the DPID."""
    if not holders:
        return AdmissionDecision(Decision.ACCEPT, conn)
    if policy is AdmissionPolicy.DENY_SECOND:
        return AdmissionDecision(Decision.DENY, conn)
    if policy is AdmissionPolicy.REPLACE_FIRST:
        return AdmissionDecision(Decision.TERMINATE, conn, holders[0])
    if policy is AdmissionPolicy.ACCEPT_BOTH:
        return AdmissionDecision(Decision.ACCEPT, conn)
    return AdmissionDecision(Decision.SPLIT_ROLES, conn, holders[0])


class SwitchRegistry:
    def __init__(self):
        self._by_dpid: dict[int, list[int]] = {}

    def holders(self, dpid: int) -> tuple:
        return tuple(self._by_dpid.get(dpid, ()))

    def add(self, dpid: int, conn: int):
        self._by_dpid.setdefault(dpid, []).append(conn)

    def remove(self, dpid: int, conn: int):
        conns = self._by_dpid.get(dpid)
        if conns and conn in conns:
            conns.remove(conn)
            if not conns:
                del self._by_dpid[dpid]

    def snapshot(self) -> dict[int, tuple]:
        return {k: tuple(v) for k, v in self._by_dpid.items()}

    def __contains__(self, dpid):
        return dpid in self._by_dpid

    def __len__(self):
        return len(self._by_dpid)


@dataclass(frozen=True)
class ControllerEvent:
    t_ms: float
    conn: int
    event: str
    dpid: Optional[int] = None

    def format(self) -> str:
        dpid = "-" if self.dpid is None else f"{self.dpid:016x}"
        return f"t={self.t_ms:.3f} conn={self.conn} event={self.event} dpid={dpid}"

    @classmethod
    def parse(cls, line: str) -> "ControllerEvent":
        kv = dict(part.split("=", 1) for part in line.split())
        dpid = None if kv["dpid"] == "-" else int(kv["dpid"], 16)
        return cls(float(kv["t"]), int(kv["conn"]), kv["event"], dpid)


class HandshakeTimeout(Exception):
    pass


class _Session:
    __slots__ = ("conn", "cid", "state", "dpid", "decoder", "timer", "credential")

    def __init__(self, conn, cid):
        self.conn = conn
        self.cid = cid
        self.state = "wait-hello"
        self.dpid = None
        self.decoder = of.StreamDecoder()
        self.timer = None
        self.credential = getattr(conn, "credential", None)


_MALFORMED = object()
_CLOSE = object()


class Controller:
    """Server side of the handshake plus the admission policy.

    ``runtime`` is a :class:`~sdnteleport.simnet.Simulation` or an
    :class:`~sdnteleport.realnet.AsyncioRuntime`.
    """

    def __init__(self, runtime, policy: AdmissionPolicy = AdmissionPolicy.DENY_SECOND,
                 service: ServiceModel = ServiceModel(),
                 whitelist: WhitelistPolicy = WhitelistPolicy(),
                 handshake_timeout_ms: float = 5000.0,
                 deny_delay: Distribution = None,
                 send_error_on_deny: bool = False,
                 log_packet_in: bool = True):
        self.rt = runtime
        self.policy = policy
        self.service = service
        self.whitelist = whitelist
        self.handshake_timeout_ms = handshake_timeout_ms
        self.deny_delay = deny_delay
        self.send_error_on_deny = send_error_on_deny
        self.log_packet_in = log_packet_in
        self.registry = SwitchRegistry()
        self.events: list[ControllerEvent] = []
        self.decisions: list[tuple[int, AdmissionDecision]] = []
        self.packet_ins = 0
        self._sessions: dict[int, _Session] = {}
        self._queue: deque = deque()
        self._wake = None
        self._next_id = 1
        self._xid = 0x1000
        self._svc_rng = runtime.rng("controller-service")
        self._deny_rng = runtime.rng("controller-deny")
        self._listener = None
        self._server = None

    # lifecycle
    def serve(self, address: Hashable):
        self._listener = self.rt.listen(address, self._on_accept)
        self._server = self.rt.spawn(self._service_loop(), name="controller-service")
        return self

    def stop(self):
        if self._listener is not None:
            self._listener.close()
        if self._server is not None:
            self._server.cancel()
        for s in list(self._sessions.values()):
            s.conn.close()

    def _record(self, cid, event, dpid=None):
        ev = ControllerEvent(self.rt.now(), cid, event, dpid)
        self.events.append(ev)
        log.debug(ev.format())

    def event_log(self) -> str:
        return "\n".join(e.format() for e in self.events)

    # connection handling
    def _on_accept(self, conn):
        cid = self._next_id
        self._next_id += 1
        sess = _Session(conn, cid)
        self._sessions[cid] = sess
        sess.timer = self.rt.call_later(self.handshake_timeout_ms, self._handshake_expired, sess)
        self.rt.spawn(self._reader(sess), name=f"controller-conn-{cid}")

    async def _reader(self, sess: _Session):
        conn = sess.conn
        while True:
            data = await conn.recv()
            if data is CLOSED or not data:
                self._enqueue(sess, _CLOSE)
                return
            try:
                msgs = sess.decoder.feed(data)
            except of.OfWireError:
                self._enqueue(sess, _MALFORMED)
                return
            for msg in msgs:
                self._enqueue(sess, msg)

    def _enqueue(self, sess, item):
        self._queue.append((sess, item))
        if self._wake is not None and not self._wake.done():
            self._wake.set_result(None)

    async def _service_loop(self):
        while True:
            while not self._queue:
                self._wake = self.rt.create_future()
                await self._wake
            sess, item = self._queue.popleft()
            msg = item if item is not _CLOSE and item is not _MALFORMED else None
            await self.rt.sleep(self.service.service_time(msg, self._svc_rng))
            self._handle(sess, item)

    def _next_xid(self):
        self._xid = (self._xid + 1) & 0xFFFFFFFF
        return self._xid

    def _send(self, sess, msg):
        if not sess.conn.closed:
            sess.conn.send(of.encode(msg))

    def _close(self, sess, event="close"):
        if sess.state == "closed":
            return
        if sess.state == "admitted":
            self.registry.remove(sess.dpid, sess.cid)
        sess.state = "closed"
        if sess.timer is not None:
            sess.timer.cancel()
        sess.conn.close()
        self._sessions.pop(sess.cid, None)
        self._record(sess.cid, event, sess.dpid)

    def _handshake_expired(self, sess):
        if sess.state in ("wait-hello", "wait-features"):
            log.info("handshake timeout on connection %d", sess.cid)
            self._close(sess, "close")

    def _handle(self, sess: _Session, item):
        if item is _CLOSE:
            if sess.state not in ("closed", "denied"):
                self._close(sess)
            elif sess.state == "denied":
                self._sessions.pop(sess.cid, None)
            return
        if sess.state in ("closed", "denied"):
            return
        if item is _MALFORMED:
            self._send(sess, of.Error(0, of.OFPET_BAD_REQUEST, 0))
            self._close(sess)
            return
        msg = item
        if sess.state == "wait-hello":
            if isinstance(msg, of.Hello):
                self._record(sess.cid, "hello")
                self._send(sess, of.Hello(self._next_xid()))
                self._send(sess, of.FeaturesRequest(self._next_xid()))
                sess.state = "wait-features"
            else:
                self._send(sess, of.Error(msg.xid, of.OFPET_HELLO_FAILED, 0))
                self._close(sess)
            return
        if isinstance(msg, of.EchoRequest):
            self._send(sess, of.EchoReply(msg.xid, msg.data))
        elif isinstance(msg, of.FeaturesReply) and sess.state == "wait-features":
            sess.dpid = msg.datapath_id.value
            if sess.timer is not None:
                sess.timer.cancel()
            self._record(sess.cid, "features", sess.dpid)
            self._admit(sess)
        elif isinstance(msg, of.PacketIn) and sess.state == "admitted":
            self.packet_ins += 1
            if self.log_packet_in:
                self._record(sess.cid, "packet-in", sess.dpid)

    # admission
    def admit(self, dpid: int, cid: int) -> AdmissionDecision:
        """Apply the policy to the registry; the caller acts on the decision."""
        decision = decide(self.policy, self.registry.holders(dpid), cid)
        if decision.kind is Decision.TERMINATE:
            self.registry.remove(dpid, decision.other)
        if decision.kind is not Decision.DENY:
            self.registry.add(dpid, cid)
        self.decisions.append((dpid, decision))
        return decision

    def _admit(self, sess: _Session):
        if not self.whitelist.permits(sess.dpid, sess.credential):
            self._deny(sess)
            return
        decision = self.admit(sess.dpid, sess.cid)
        if decision.kind is Decision.DENY:
            self._deny(sess)
            return
        sess.state = "admitted"
        self._record(sess.cid, "admit-accept", sess.dpid)
        if decision.kind is Decision.TERMINATE:
            other = self._sessions.get(decision.other)
            if other is not None:
                other.state = "admitted-replaced"
                self._close(other, "terminate")
        elif decision.kind is Decision.SPLIT_ROLES:
            master = self._sessions.get(decision.other)
            if master is not None:
                self._send(master, of.RoleRequest(self._next_xid(), of.OFPCR_ROLE_MASTER))
            self._send(sess, of.RoleRequest(self._next_xid(), of.OFPCR_ROLE_SLAVE))

    def _deny(self, sess: _Session):
        sess.state = "denied"
        if sess.timer is not None:
            sess.timer.cancel()
        self._record(sess.cid, "admit-deny", sess.dpid)
        if self.send_error_on_deny:
            self._send(sess, of.Error(0, of.OFPET_BAD_REQUEST, 0))
        extra = sample(self.deny_delay, self._deny_rng)
        if extra > 0:
            self.rt.call_later(extra, self._finish_deny, sess)
        else:
            self._finish_deny(sess)

    def _finish_deny(self, sess: _Session):
        sess.conn.close()
        self._record(sess.cid, "close", sess.dpid)
