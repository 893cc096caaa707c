"""Minimal counter application used by tests and scenario corpora.

Inputs are ASCII deltas such as ``b"+3"`` or ``b"-1"``; the state is a single
non-negative integer serialized as ``u64``.
"""

from __future__ import annotations

import re

from .core import u64
from .errors import RejectedInput

_DELTA = re.compile(rb"[+-][0-9]{1,18}")
_MAX = 2**64 - 1


class CounterApp:
    name = "counter"

    def __init__(self, start: int = 0):
        self.start = start

    def initial_state(self) -> int:
        return self.start

    def apply(self, state: int, payload: bytes) -> int:
        if not _DELTA.fullmatch(payload):
            raise RejectedInput(f"malformed counter input {payload!r}")
        nxt = state + int(payload)
        if not 0 <= nxt <= _MAX:
            raise RejectedInput("counter out of range")
        return nxt

    def encode_state(self, state: int) -> bytes:
        return u64(state)

    def decode_state(self, data: bytes) -> int:
        if len(data) != 8:
            raise ValueError("counter state is 8 bytes")
        return int.from_bytes(data, "big")

    def tamper(self, state: int) -> int:
        return (state + 1_000_000) % (_MAX + 1)
