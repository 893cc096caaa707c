"""Offline replay of an exported trace file.

The file is JSON lines: a header ``{"app", "app_id", "genesis_state", ...}``
followed by one hex-encoded block per line, in block order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .. import zkspot
from ..core import AppStateView, TraceBlock
from ..counter import CounterApp
from ..trust import replay_block


class MalformedTrace(ValueError):
    pass


@dataclass(frozen=True)
class TraceVerdict:
    app_id: int
    blocks: int
    transitions: int
    ok: bool
    block_no: int | None = None
    reason: str = ""
    seq: int | None = None

    def line(self) -> str:
        if self.ok:
            return f"app {self.app_id}: {self.blocks} blocks, {self.transitions} transitions replay cleanly"
        at = "" if self.seq is None else f" transition {self.seq}"
        return f"app {self.app_id}: divergence in block {self.block_no}{at}: {self.reason}"


def _app_from_header(header: dict):
    kind = header.get("app")
    if kind == "counter":
        return CounterApp(int(header.get("start", 0)))
    if kind == "zkspot":
        return zkspot.ZkSpotApp(header.get("markets", ((2, 1),)))
    raise MalformedTrace(f"unknown app kind {kind!r}")


def parse_trace(text: str) -> tuple[dict, list[TraceBlock]]:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise MalformedTrace("empty trace")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise MalformedTrace(f"header is not JSON: {exc}") from None
    if not isinstance(header, dict) or "genesis_state" not in header or "app_id" not in header:
        raise MalformedTrace("header needs app, app_id and genesis_state")
    blocks = []
    for n, ln in enumerate(lines[1:], start=2):
        try:
            blocks.append(TraceBlock.decode(bytes.fromhex(ln.strip())))
        except ValueError as exc:
            raise MalformedTrace(f"line {n}: {exc}") from None
    return header, blocks


def verify_trace(text: str) -> TraceVerdict:
    """Replay every block from the genesis state; stop at the first divergence."""
    header, blocks = parse_trace(text)
    app = _app_from_header(header)
    try:
        genesis = bytes.fromhex(header["genesis_state"])
        app_id = int(header["app_id"])
        app.decode_state(genesis)
    except ValueError as exc:
        raise MalformedTrace(f"bad genesis state: {exc}") from None
    pre = AppStateView(app_id, genesis)
    prev_hash = bytes(32)
    count = 0
    for i, block in enumerate(blocks):
        if block.block_no != i:
            return TraceVerdict(app_id, len(blocks), count, False, block.block_no, "block numbers out of order")
        if block.prev_block_hash != prev_hash:
            return TraceVerdict(app_id, len(blocks), count, False, i, "does not extend the previous block")
        if block.pre_root != pre.root:
            return TraceVerdict(app_id, len(blocks), count, False, i, "pre-state root does not match")
        out = replay_block(block, app, pre)
        if not out.ok:
            return TraceVerdict(app_id, len(blocks), count, False, i, out.reason, out.divergence)
        count += len(block.transitions)
        pre = out.post_state
        prev_hash = block.block_hash
    return TraceVerdict(app_id, len(blocks), count, True)
