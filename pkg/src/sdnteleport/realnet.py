"""Real-socket runtime with the same surface as :class:`simnet.Simulation`.

Time is the wall clock in epoch milliseconds, so two hosts synchronised by
NTP agree on frame boundaries. Addresses are ``"host:port"`` strings or
``(host, port)`` tuples.
"""

from __future__ import annotations

import asyncio
import logging
import random
import time
from typing import Callable, Optional

from .simnet import CLOSED, ClockModel, ConnectionRefused, SendOnClosed

log = logging.getLogger(__name__)

READ_CHUNK = 65536


def parse_address(address) -> tuple[str, int]:
    if isinstance(address, tuple):
        host, port = address
        return host, int(port)
    host, sep, port = str(address).rpartition(":")
    if not sep:
        raise ValueError(f"address must be host:port, got {address!r}")
    return host or "127.0.0.1", int(port)


class RealConnection:
    """Stream wrapper exposing ``send``/``recv``/``close`` like the simulated one."""

    def __init__(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter,
                 credential=None):
        self.reader = reader
        self.writer = writer
        self.credential = credential
        self._closed_local = False
        self.peer_closed = False

    @property
    def closed(self) -> bool:
        return self._closed_local or self.peer_closed

    def send(self, data: bytes):
        if self._closed_local:
            raise SendOnClosed("connection is closed")
        if self.peer_closed or self.writer.is_closing():
            return
        self.writer.write(bytes(data))

    async def recv(self):
        if self._closed_local:
            return CLOSED
        try:
            data = await self.reader.read(READ_CHUNK)
        except (ConnectionError, OSError):
            data = b""
        if self._closed_local:
            return CLOSED
        if not data:
            self.peer_closed = True
            return CLOSED
        return data

    def close(self):
        if self._closed_local:
            return
        self._closed_local = True
        try:
            self.writer.close()
        except (ConnectionError, OSError, RuntimeError):
            pass
        # wake a pending recv
        self.reader.feed_eof()


class RealClock:
    """Wall clock, optionally skewed for experiments on one host."""

    def __init__(self, rt: "AsyncioRuntime", model: ClockModel = ClockModel()):
        self.rt = rt
        self.model = model
        self._rate = 1 + model.drift_ppm * 1e-6
        # drift accumulates from when the clock was created
        self._t0 = rt.now()

    def now(self) -> float:
        return self._t0 + (self.rt.now() - self._t0) * self._rate + self.model.sync_error_ms

    def _to_reference(self, local_ms: float) -> float:
        return self._t0 + (local_ms - self.model.sync_error_ms - self._t0) / self._rate

    async def sleep_until(self, local_ms: float):
        await self.rt.sleep_until(self._to_reference(local_ms))

    async def sleep(self, ms: float):
        await self.rt.sleep(ms / self._rate)

    async def wait(self, fut, timeout_ms: float) -> bool:
        return await self.rt.wait_future(fut, timeout_ms / self._rate)


class RealListener:
    def __init__(self, rt, address, handler):
        self.rt = rt
        self.address = parse_address(address)
        self.handler = handler
        self.server: Optional[asyncio.base_events.Server] = None
        self.ready = rt.spawn(self._start(), name=f"listen-{address}")

    async def _start(self):
        host, port = self.address
        self.server = await asyncio.start_server(self._accept, host, port)
        sock = self.server.sockets[0].getsockname()
        self.address = (sock[0], sock[1])
        return self.address

    async def _accept(self, reader, writer):
        peer = writer.get_extra_info("peername")
        conn = RealConnection(reader, writer, credential=peer[0] if peer else None)
        self.handler(conn)

    def close(self):
        if self.server is not None:
            self.server.close()
        elif not self.ready.done():
            self.ready.cancel()


class AsyncioRuntime:
    """Runtime for endpoints and controller on real TCP sockets.

    Must be created and used inside a running event loop.
    """

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.loop = asyncio.get_running_loop()
        self._rngs: dict[str, random.Random] = {}

    def now(self) -> float:
        return time.time() * 1000.0

    def clock(self, model: ClockModel = ClockModel()) -> RealClock:
        return RealClock(self, model)

    def rng(self, name: str) -> random.Random:
        if name not in self._rngs:
            self._rngs[name] = random.Random(f"{self.seed}:{name}")
        return self._rngs[name]

    def call_soon(self, fn: Callable, *args):
        return self.loop.call_soon(fn, *args)

    def call_later(self, delay_ms: float, fn: Callable, *args):
        return self.loop.call_later(max(0.0, delay_ms) / 1000.0, fn, *args)

    def create_future(self) -> asyncio.Future:
        return self.loop.create_future()

    def spawn(self, coro, name: str | None = None) -> asyncio.Task:
        return self.loop.create_task(coro, name=name)

    async def sleep(self, ms: float):
        await asyncio.sleep(max(0.0, ms) / 1000.0)

    async def sleep_until(self, t_ms: float):
        await asyncio.sleep(max(0.0, t_ms - self.now()) / 1000.0)

    async def wait_future(self, fut, timeout_ms: float) -> bool:
        if fut.done():
            return True
        try:
            await asyncio.wait_for(asyncio.shield(fut), max(0.0, timeout_ms) / 1000.0)
        except asyncio.TimeoutError:
            return False
        return True

    def listen(self, address, handler) -> RealListener:
        return RealListener(self, address, handler)

    async def connect(self, address, *, credential=None, **_ignored) -> RealConnection:
        host, port = parse_address(address)
        try:
            reader, writer = await asyncio.open_connection(host, port)
        except OSError as exc:
            raise ConnectionRefused(str(exc)) from exc
        return RealConnection(reader, writer, credential)
