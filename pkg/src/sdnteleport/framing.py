"""Text <-> covert frame stream.

Each character becomes a 7-bit code, most significant bit first. A frame is
``sof_count`` start bits (always 1) followed by ``fl`` data bits; the message
ends with a frame whose data bits are all zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

BITS_PER_CHAR = 7
REPLACEMENT = "?"


class UnencodableCharacter(ValueError):
    pass


@dataclass(frozen=True)
class Frame:
    data: tuple[int, ...]
    sof: tuple[int, ...] = (1,)

    @property
    def bits(self) -> tuple[int, ...]:
        return self.sof + self.data

    def __str__(self):
        return "".join(map(str, self.sof)) + "|" + "".join(map(str, self.data))

    @classmethod
    def parse(cls, text: str) -> "Frame":
        sof, data = text.split("|")
        return cls(tuple(int(b) for b in data), tuple(int(b) for b in sof))


@dataclass(frozen=True)
class EncodedMessage:
    frames: tuple[Frame, ...]
    fl: int

    @property
    def bit_count(self) -> int:
        return sum(len(f.bits) for f in self.frames)


def check_frame_length(fl: int):
    if fl < BITS_PER_CHAR or fl % BITS_PER_CHAR:
        raise ValueError(f"frame length {fl} must be a positive multiple of 7")


def pad_message(m: str, fl: int) -> str:
    """Pad with trailing spaces so the text fills whole frames."""
    per = fl // BITS_PER_CHAR
    extra = -len(m) % per
    return m + " " * extra


def char_bits(ch: str) -> tuple[int, ...]:
    code = ord(ch)
    if not 1 <= code <= 127:
        raise UnencodableCharacter(f"{ch!r} (code {code}) has no nonzero 7-bit code")
    return tuple((code >> (BITS_PER_CHAR - 1 - i)) & 1 for i in range(BITS_PER_CHAR))


def eom_frame(fl: int, sof_count: int = 1) -> Frame:
    return Frame((0,) * fl, (1,) * sof_count)


def encode_message(m: str, fl: int, sof_count: int = 1) -> EncodedMessage:
    check_frame_length(fl)
    if sof_count < 1:
        raise ValueError("sof_count must be at least 1")
    bits: list[int] = []
    for ch in pad_message(m, fl):
        bits.extend(char_bits(ch))
    sof = (1,) * sof_count
    frames = [Frame(tuple(bits[i:i + fl]), sof) for i in range(0, len(bits), fl)]
    frames.append(eom_frame(fl, sof_count))
    return EncodedMessage(tuple(frames), fl)


def is_eom(frame: Frame) -> bool:
    return not any(frame.data)


def _char(code: int, printable_only: bool) -> str:
    if printable_only:
        return chr(code) if 32 <= code <= 126 else REPLACEMENT
    return chr(code) if 1 <= code <= 127 else REPLACEMENT


def decode_bits(bits: Sequence[int], printable_only: bool = True) -> str:
    out = []
    for i in range(0, len(bits) - BITS_PER_CHAR + 1, BITS_PER_CHAR):
        code = 0
        for b in bits[i:i + BITS_PER_CHAR]:
            code = (code << 1) | (b & 1)
        out.append(_char(code, printable_only))
    return "".join(out)


def decode_frames(frames: Iterable[Frame], printable_only: bool = True) -> str:
    """Recover text, stopping at the first end-of-message frame.

    Corrupted codes become ``'?'`` instead of raising; with
    ``printable_only`` any code outside 32..126 is treated as corrupted.
    """
    bits: list[int] = []
    for frame in frames:
        if is_eom(frame):
            break
        bits.extend(frame.data)
    return decode_bits(bits, printable_only)
