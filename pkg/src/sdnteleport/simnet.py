"""Deterministic discrete-event runtime.

Tasks are ordinary ``async def`` coroutines driven by a small kernel instead
of asyncio, so virtual time is an exact integer count of microseconds and
every run with the same seeds replays the same event order. The public time
unit is milliseconds.

The same method surface (``now``, ``sleep``, ``sleep_until``, ``spawn``,
``connect``, ``listen`` ...) is offered by :class:`sdnteleport.realnet.AsyncioRuntime`
so channel code runs unchanged over real sockets.
"""

from __future__ import annotations

import heapq
import inspect
import itertools
import random
from asyncio import CancelledError
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Hashable, Optional


class SimulationDeadlock(RuntimeError):
    """No event is schedulable but the awaited tasks have not finished."""


class ConnectionRefused(ConnectionError):
    pass


class ConnectionDropped(ConnectionError):
    pass


class SendOnClosed(ConnectionError):
    pass


class _Closed:
    def __repr__(self):
        return "CLOSED"

    def __bool__(self):
        return False


CLOSED = _Closed()


def to_us(ms) -> int:
    return round(ms * 1000)


# --- distributions -----------------------------------------------------------


@dataclass(frozen=True)
class Uniform:
    lo: float
    hi: float

    def sample(self, rng: random.Random) -> float:
        return rng.uniform(self.lo, self.hi)

    @property
    def mean(self) -> float:
        return (self.lo + self.hi) / 2


@dataclass(frozen=True)
class Exponential:
    mean: float

    def sample(self, rng: random.Random) -> float:
        if self.mean <= 0:
            return 0.0
        return rng.expovariate(1.0 / self.mean)


Distribution = Optional[Uniform | Exponential]


def parse_distribution(text: str) -> Distribution:
    """``none``, ``uniform:LO:HI`` or ``exp:MEAN`` (milliseconds)."""
    text = text.strip().lower()
    if text in ("", "none", "0"):
        return None
    kind, *args = text.split(":")
    if kind in ("uniform", "u"):
        lo, hi = (float(a) for a in args)
        return Uniform(lo, hi)
    if kind in ("exp", "exponential"):
        (mean,) = (float(a) for a in args)
        return Exponential(mean)
    raise ValueError(f"unknown distribution {text!r}")


def sample(dist: Distribution, rng: random.Random) -> float:
    return 0.0 if dist is None else max(0.0, dist.sample(rng))


def mean_of(dist: Distribution) -> float:
    return 0.0 if dist is None else dist.mean


@dataclass(frozen=True)
class LatencyModel:
    base_ms: float = 0.5
    jitter: Distribution = Uniform(0.0, 1.0)
    drop_prob: float = 0.0

    def sample(self, rng: random.Random) -> float:
        return self.base_ms + sample(self.jitter, rng)

    @property
    def mean_ms(self) -> float:
        return self.base_ms + mean_of(self.jitter)


@dataclass(frozen=True)
class ClockModel:
    sync_error_ms: float = 0.0
    drift_ppm: float = 0.0


# --- kernel primitives -------------------------------------------------------


class InvalidState(RuntimeError):
    pass


class Handle:
    __slots__ = ("fn", "args", "cancelled")

    def __init__(self, fn, args):
        self.fn = fn
        self.args = args
        self.cancelled = False

    def cancel(self):
        self.cancelled = True


class Future:
    __slots__ = ("_sim", "_done", "_result", "_exc", "_callbacks")

    def __init__(self, sim: "Simulation"):
        self._sim = sim
        self._done = False
        self._result = None
        self._exc = None
        self._callbacks: list = []

    def done(self) -> bool:
        return self._done

    def result(self):
        if not self._done:
            raise InvalidState("future not done")
        if self._exc is not None:
            raise self._exc
        return self._result

    def _finish(self):
        self._done = True
        callbacks, self._callbacks = self._callbacks, []
        for cb in callbacks:
            self._sim.call_soon(cb, self)

    def set_result(self, value=None):
        if self._done:
            raise InvalidState("future already done")
        self._result = value
        self._finish()

    def set_exception(self, exc: BaseException):
        if self._done:
            raise InvalidState("future already done")
        self._exc = exc
        self._finish()

    def add_done_callback(self, cb):
        if self._done:
            self._sim.call_soon(cb, self)
        else:
            self._callbacks.append(cb)

    def __await__(self):
        if not self._done:
            yield self
        return self.result()


class Task(Future):
    __slots__ = ("_coro", "_waiting", "_cancel_requested", "name")

    def __init__(self, sim, coro, name=None):
        super().__init__(sim)
        self._coro = coro
        self._waiting: Optional[Future] = None
        self._cancel_requested = False
        self.name = name
        sim.call_soon(self._step)

    def cancel(self) -> bool:
        if self._done:
            return False
        if inspect.getcoroutinestate(self._coro) == inspect.CORO_CREATED:
            # never stepped: nothing to unwind
            self._coro.close()
            self.set_exception(CancelledError())
            return True
        self._cancel_requested = True
        if self._waiting is not None:
            self._waiting = None
            self._sim.call_soon(self._step)
        return True

    def cancelled(self) -> bool:
        return self._done and isinstance(self._exc, CancelledError)

    def _step(self, value=None, exc=None):
        if self._done:
            return
        if self._cancel_requested:
            self._cancel_requested = False
            exc = CancelledError()
        try:
            if exc is not None:
                waited = self._coro.throw(exc)
            else:
                waited = self._coro.send(value)
        except StopIteration as stop:
            self.set_result(stop.value)
            return
        except CancelledError as err:
            self.set_exception(err)
            return
        except BaseException as err:
            orphan = not self._callbacks
            self.set_exception(err)
            if orphan:
                self._sim._fail(self, err)
            return
        if not isinstance(waited, Future):
            self._coro.throw(TypeError(f"task awaited a foreign object {waited!r}"))
        self._waiting = waited
        waited.add_done_callback(self._wakeup)

    def _wakeup(self, fut):
        if self._waiting is not fut:
            return
        self._waiting = None
        try:
            value = fut.result()
        except BaseException as err:
            self._step(exc=err)
        else:
            self._step(value)


# --- clocks ------------------------------------------------------------------


class SimClock:
    """An endpoint's view of time; reference time when the model is zero."""

    def __init__(self, sim: "Simulation", model: ClockModel = ClockModel()):
        self.sim = sim
        self.model = model
        self._rate = 1.0 + model.drift_ppm * 1e-6
        if self._rate <= 0:
            raise ValueError("drift too negative")

    def now(self) -> float:
        t = self.sim.now()
        return t * self._rate + self.model.sync_error_ms

    def _to_reference(self, local_ms: float) -> float:
        return (local_ms - self.model.sync_error_ms) / self._rate

    def sleep_until(self, local_ms: float):
        return self.sim.sleep_until(self._to_reference(local_ms))

    def sleep(self, ms: float):
        return self.sim.sleep(ms / self._rate)

    def wait(self, fut: Future, timeout_ms: float):
        return self.sim.wait_future(fut, timeout_ms / self._rate)


# --- transport ---------------------------------------------------------------


class _Pipe:
    """One direction of a connection: FIFO delivery after sampled latency."""

    __slots__ = ("sim", "latency", "rng", "dst", "_last_us")

    def __init__(self, sim, latency, rng, dst):
        self.sim = sim
        self.latency = latency
        self.rng = rng
        self.dst = dst
        self._last_us = 0

    def push(self, item):
        at = self.sim.now_us + to_us(self.latency.sample(self.rng))
        # per-connection FIFO: a fast sample never overtakes the queue head
        at = max(at, self._last_us)
        self._last_us = at
        self.sim.call_at_us(at, self.dst._deliver, item)


class SimConnection:
    """One end of an ordered, reliable byte stream.

    ``recv`` returns the next chunk, or :data:`CLOSED` once the peer's FIN
    has arrived or this end has closed.
    """

    def __init__(self, sim, conn_id, local, remote, credential=None):
        self.sim = sim
        self.conn_id = conn_id
        self.local = local
        self.remote = remote
        self.credential = credential
        self._out: Optional[_Pipe] = None
        self._inbox: deque = deque()
        self._waiter: Optional[Future] = None
        self._closed_local = False
        self.peer_closed = False

    @property
    def closed(self) -> bool:
        return self._closed_local or self.peer_closed

    def send(self, data: bytes):
        if self._closed_local:
            raise SendOnClosed(f"connection {self.conn_id} is closed")
        if self.peer_closed:
            return
        self._out.push(bytes(data))

    async def recv(self):
        if self._closed_local:
            return CLOSED
        if self._inbox:
            return self._inbox.popleft()
        if self.peer_closed:
            return CLOSED
        self._waiter = Future(self.sim)
        return await self._waiter

    def close(self):
        if self._closed_local:
            return
        self._closed_local = True
        if not self.peer_closed:
            self._out.push(CLOSED)
        self._wake(CLOSED)

    def _wake(self, item) -> bool:
        w = self._waiter
        if w is not None and not w.done():
            self._waiter = None
            w.set_result(item)
            return True
        return False

    def _deliver(self, item):
        if self._closed_local:
            return
        if item is CLOSED:
            self.peer_closed = True
            if not self._inbox:
                self._wake(CLOSED)
            return
        if not self._wake(item):
            self._inbox.append(item)


class Listener:
    def __init__(self, sim, address, handler, latency):
        self.sim = sim
        self.address = address
        self.handler = handler
        self.latency = latency

    def close(self):
        if self.sim._listeners.get(self.address) is self:
            del self.sim._listeners[self.address]


# --- the simulation ----------------------------------------------------------


class Simulation:
    """Single-threaded virtual-time scheduler plus an in-memory network."""

    def __init__(self, seed: int = 0, latency: LatencyModel = LatencyModel()):
        self.seed = seed
        self.latency = latency
        self.now_us = 0
        self._heap: list = []
        self._seq = itertools.count()
        self._listeners: dict[Hashable, Listener] = {}
        self._conn_ids = itertools.count(1)
        self._rngs: dict[str, random.Random] = {}
        self._failure: Optional[BaseException] = None
        self.events_processed = 0

    # time
    def now(self) -> float:
        return self.now_us / 1000

    def clock(self, model: ClockModel = ClockModel()) -> SimClock:
        return SimClock(self, model)

    def rng(self, name: str) -> random.Random:
        """Independent, seeded random stream per named component."""
        if name not in self._rngs:
            self._rngs[name] = random.Random(f"{self.seed}:{name}")
        return self._rngs[name]

    # scheduling
    def call_at_us(self, at_us: int, fn: Callable, *args) -> Handle:
        h = Handle(fn, args)
        heapq.heappush(self._heap, (max(at_us, self.now_us), next(self._seq), h))
        return h

    def call_soon(self, fn, *args) -> Handle:
        return self.call_at_us(self.now_us, fn, *args)

    def call_later(self, delay_ms: float, fn, *args) -> Handle:
        return self.call_at_us(self.now_us + to_us(max(0.0, delay_ms)), fn, *args)

    def create_future(self) -> Future:
        return Future(self)

    def spawn(self, coro, name: str | None = None) -> Task:
        return Task(self, coro, name)

    def sleep_until(self, t_ms: float) -> Future:
        fut = Future(self)
        self.call_at_us(to_us(t_ms), _resolve, fut)
        return fut

    def sleep(self, ms: float) -> Future:
        fut = Future(self)
        self.call_at_us(self.now_us + to_us(max(0.0, ms)), _resolve, fut)
        return fut

    async def wait_future(self, fut: Future, timeout_ms: float) -> bool:
        """Wait for ``fut`` at most ``timeout_ms``; True if it completed."""
        if fut.done():
            return True
        waiter = Future(self)
        timer = self.call_later(timeout_ms, _resolve, waiter, False)
        fut.add_done_callback(lambda _f: _resolve(waiter, True))
        done = await waiter
        timer.cancel()
        return done

    def _fail(self, task, err):
        if self._failure is None:
            self._failure = err

    def run(self, *tasks: Future, until_ms: float | None = None):
        """Process events until every task in ``tasks`` is done.

        Without tasks, runs until the event queue drains or ``until_ms``.
        """
        limit = None if until_ms is None else to_us(until_ms)
        heap = self._heap
        while True:
            if self._failure is not None:
                err, self._failure = self._failure, None
                raise err
            if tasks and all(t.done() for t in tasks):
                return
            if not heap:
                if tasks:
                    raise SimulationDeadlock(
                        f"event queue empty at t={self.now()}ms with tasks pending")
                return
            if limit is not None and heap[0][0] > limit:
                self.now_us = max(self.now_us, limit)
                return
            at, _, h = heapq.heappop(heap)
            if h.cancelled:
                continue
            self.now_us = at
            self.events_processed += 1
            h.fn(*h.args)

    # network
    def listen(self, address: Hashable, handler: Callable[[SimConnection], Any],
               latency: LatencyModel | None = None) -> Listener:
        if address in self._listeners:
            raise OSError(f"address {address!r} already in use")
        lst = Listener(self, address, handler, latency or self.latency)
        self._listeners[address] = lst
        return lst

    async def connect(self, address: Hashable, *, credential=None, local=None,
                      latency: LatencyModel | None = None) -> SimConnection:
        """Open a connection; established after one simulated round trip."""
        lat = latency or self.latency
        rng = self.rng("net")
        setup = 2 * lat.sample(rng)
        dropped = lat.drop_prob > 0 and rng.random() < lat.drop_prob
        await self.sleep(setup)
        lst = self._listeners.get(address)
        if lst is None:
            raise ConnectionRefused(f"nothing listening on {address!r}")
        if dropped:
            raise ConnectionDropped(f"connection setup to {address!r} lost")
        cid = next(self._conn_ids)
        client = SimConnection(self, cid, local, address, credential)
        server = SimConnection(self, cid, address, local, credential)
        client._out = _Pipe(self, lat, rng, server)
        server._out = _Pipe(self, lat, rng, client)
        lst.handler(server)
        return client


def _resolve(fut: Future, value=None):
    if not fut.done():
        fut.set_result(value)
