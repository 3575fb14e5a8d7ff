"""Channel timing model: per-bit time budgets and configuration checks.

All durations are milliseconds. Functions stay generic over the numeric
type, so integer or :class:`fractions.Fraction` inputs give exact results.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Optional, Union

from .framing import BITS_PER_CHAR, check_frame_length

Number = Union[int, float, Fraction]

CHANNEL_DPID = 0xC0FFEE


@dataclass(frozen=True)
class TransitionDelays:
    """Environment delays the endpoints cannot control.

    sc: Idle -> OpenFlow-established. dc: established -> disconnected.
    ofdeny: established -> disconnected when the controller denies.
    chkconn: cost of reading the connection status.
    """

    sc: Number = 0
    dc: Number = 0
    ofdeny: Number = 0
    chkconn: Number = 0

    def __post_init__(self):
        for name in ("sc", "dc", "ofdeny", "chkconn"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass(frozen=True)
class ChannelConfig:
    """Parameters both ends agree on before transmitting."""

    dpid: int = CHANNEL_DPID
    start_time_ms: Number = 0
    delta_ms: Number = 60
    fl: int = 7
    sof_count: int = 1
    offset_ms: Number = 5
    # Explicit delay wins over the fraction of delta.
    delay_ms: Optional[Number] = None
    delay_frac: Fraction = Fraction(1, 2)
    missed_frame_threshold: int = 5
    max_frames: int = 512
    frame_align_ms: Number = 1000
    sync: str = "relative"
    hold_ones: bool = False
    reconnect_backoff_ms: Number = 0
    # "established": the check delay runs from set_controller returning, so
    # a denial arrives during it. "transition": it restarts once the denial
    # is seen, making a 1-interval last ofdeny longer.
    check_from: str = "established"

    def __post_init__(self):
        if self.delta_ms <= 0:
            raise ValueError("delta must be positive")
        check_frame_length(self.fl)
        if self.sof_count < 1:
            raise ValueError("sof_count must be at least 1")
        if self.offset_ms < 0:
            raise ValueError("offset must be non-negative")
        if self.missed_frame_threshold < 1:
            raise ValueError("missed_frame_threshold must be at least 1")
        if self.max_frames < 1:
            raise ValueError("max_frames must be at least 1")
        if self.sync not in ("relative", "anchored"):
            raise ValueError(f"unknown sync mode {self.sync!r}")
        if self.check_from not in ("established", "transition"):
            raise ValueError(f"unknown check_from {self.check_from!r}")

    @property
    def delay(self) -> Number:
        if self.delay_ms is not None:
            return self.delay_ms
        return self.delay_frac * self.delta_ms

    @property
    def frame_bits(self) -> int:
        return self.sof_count + self.fl

    @property
    def frame_duration_ms(self) -> Number:
        return self.frame_bits * self.delta_ms

    def with_(self, **changes) -> "ChannelConfig":
        return replace(self, **changes)


@dataclass(frozen=True)
class TimingBudget:
    s: dict
    r: dict
    ws: dict
    wr: dict


def sender_bit_time(bit: int, d: TransitionDelays) -> Number:
    if bit == 0:
        return 0
    return d.sc + d.dc


def receiver_bit_time(bit: int, cfg: ChannelConfig, d: TransitionDelays) -> Number:
    t = cfg.offset_ms + d.sc + cfg.delay + d.chkconn + d.dc
    if bit:
        t += d.ofdeny
    return t


def budget(cfg: ChannelConfig, d: TransitionDelays) -> TimingBudget:
    """Waits each end uses to fill the rest of an interval, per bit value."""
    s = {b: sender_bit_time(b, d) for b in (0, 1)}
    r = {b: receiver_bit_time(b, cfg, d) for b in (0, 1)}
    return TimingBudget(
        s=s, r=r,
        ws={b: cfg.delta_ms - s[b] for b in (0, 1)},
        wr={b: cfg.delta_ms - r[b] for b in (0, 1)},
    )


@dataclass(frozen=True)
class Constraint:
    name: str
    slack: Number
    detail: str = ""

    @property
    def ok(self) -> bool:
        return self.slack >= 0

    def render(self) -> str:
        status = "ok" if self.ok else "violated"
        return f"{self.name} {status} slack={float(self.slack):g}ms"


@dataclass(frozen=True)
class ValidationReport:
    constraints: tuple[Constraint, ...]

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.constraints)

    @property
    def violations(self) -> list[Constraint]:
        return [c for c in self.constraints if not c.ok]

    def __getitem__(self, name: str) -> Constraint:
        for c in self.constraints:
            if c.name == name:
                return c
        raise KeyError(name)

    def lines(self) -> list[str]:
        return [c.render() for c in self.constraints]


def delay_upper_bound(cfg: ChannelConfig, d: TransitionDelays) -> Number:
    return cfg.delta_ms - (cfg.offset_ms + d.sc + d.ofdeny + d.chkconn + d.dc)


def validate(cfg: ChannelConfig, d: TransitionDelays) -> ValidationReport:
    """Check the interval, offset and check-delay constraints.

    The interval constraint uses the slower bit on both sides, so its slack
    is ``min(r(1) - s(1), delta - r(1))``.
    """
    s1 = sender_bit_time(1, d)
    r1 = receiver_bit_time(1, cfg, d)
    eq3 = Constraint("EQ3", min(r1 - s1, cfg.delta_ms - r1),
                     f"s={float(s1):g} r={float(r1):g} delta={float(cfg.delta_ms):g}")
    eq4 = Constraint("EQ4", cfg.offset_ms - d.sc,
                     f"offset={float(cfg.offset_ms):g} sc={float(d.sc):g}")
    upper = delay_upper_bound(cfg, d)
    delay = cfg.delay
    eq5 = Constraint("EQ5", min(delay, upper - delay),
                     f"0 <= delay={float(delay):g} <= {float(upper):g}")
    return ValidationReport((eq3, eq4, eq5))


@dataclass(frozen=True)
class TransferEstimate:
    raw_bps: float
    goodput_bps: float
    duration_ms: float
    frames: int


def frame_slot_ms(cfg: ChannelConfig) -> Number:
    """Frame duration rounded up to the inter-frame alignment grid."""
    dur = cfg.frame_duration_ms
    align = cfg.frame_align_ms
    if not align:
        return dur
    return math.ceil(dur / align) * align


def estimate_transfer(cfg: ChannelConfig, message_bytes: int) -> TransferEstimate:
    """Estimate how long ``message_bytes`` characters take to cross the channel.

    Every frame but the last waits for the next alignment boundary; the
    trailing end-of-message frame is counted unaligned.
    """
    if message_bytes < 0:
        raise ValueError("message size must be non-negative")
    per_frame = cfg.fl // BITS_PER_CHAR
    data_frames = math.ceil(message_bytes / per_frame)
    frames = data_frames + 1
    duration = data_frames * frame_slot_ms(cfg) + cfg.frame_duration_ms
    raw = 1000 / cfg.delta_ms
    goodput = message_bytes * 8 * 1000 / duration if duration else 0.0
    return TransferEstimate(float(raw), float(goodput), float(duration), frames)
