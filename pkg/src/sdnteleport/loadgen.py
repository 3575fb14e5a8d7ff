"""Background OpenFlow switches emitting Poisson PacketIn traffic."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from . import ofwire as of
from .endpoints import Outcome, SwitchAgent

log = logging.getLogger(__name__)

# 64-byte dummy Ethernet frame: broadcast dst, fixed src, IPv4 ethertype.
DUMMY_FRAME = (b"\xff" * 6 + b"\x02\x00\x00\x00\x00\x01" + b"\x08\x00").ljust(64, b"\x00")


@dataclass(frozen=True)
class LoadProfile:
    n_switches: int = 20
    rate: float = 1.0
    unit_ms: float = 1000.0
    warmup_ms: float = 60_000.0
    seed: int = 0
    base_dpid: int = 0x1000

    def __post_init__(self):
        if self.rate < 0:
            raise ValueError("rate must be non-negative")
        if self.n_switches < 0:
            raise ValueError("n_switches must be non-negative")

    def dpids(self) -> list[int]:
        return [self.base_dpid + i for i in range(self.n_switches)]

    @property
    def mean_interarrival_ms(self) -> float:
        return self.unit_ms / self.rate if self.rate else float("inf")


@dataclass
class LoadGenerator:
    profile: LoadProfile
    agents: list = field(default_factory=list)
    tasks: list = field(default_factory=list)
    sent: dict = field(default_factory=dict)
    failures: int = 0

    @property
    def total_sent(self) -> int:
        return sum(len(v) for v in self.sent.values())

    def stop(self):
        for t in self.tasks:
            t.cancel()
        for a in self.agents:
            if a.conn is not None:
                a.conn.close()


def start_load(runtime, profile: LoadProfile, controller_address,
               channel_dpid: int | None = None) -> LoadGenerator:
    """Spawn one task per emulated switch.

    Each switch completes a handshake with its own DPID and then sends
    PacketIns with exponential inter-arrival times of mean ``unit/rate``.
    """
    dpids = profile.dpids()
    if channel_dpid is not None and channel_dpid in dpids:
        raise ValueError(f"load DPID range collides with channel DPID {channel_dpid:#x}")
    gen = LoadGenerator(profile)
    for i, dpid in enumerate(dpids):
        agent = SwitchAgent(runtime, controller_address, dpid, name=f"load-{i}")
        gen.agents.append(agent)
        gen.sent[dpid] = []
        rng = runtime.rng(f"load:{profile.seed}:{i}")
        gen.tasks.append(runtime.spawn(_switch(runtime, gen, agent, rng), name=f"load-{i}"))
    return gen


async def _switch(runtime, gen: LoadGenerator, agent: SwitchAgent, rng):
    profile = gen.profile
    for attempt in range(2):
        outcome = await agent.set_controller()
        if outcome is Outcome.ESTABLISHED_ACCEPTED:
            break
        log.warning("load switch %s handshake failed (%s)", agent.dpid, outcome.value)
        gen.failures += 1
        await agent.delete_controller()
    else:
        return
    if profile.rate <= 0:
        return
    times = gen.sent[agent.dpid.value]
    xid = 0
    while agent.connected:
        await runtime.sleep(rng.expovariate(profile.rate) * profile.unit_ms)
        xid += 1
        agent.send(of.PacketIn(xid, total_len=len(DUMMY_FRAME), payload=DUMMY_FRAME))
        times.append(runtime.now())
