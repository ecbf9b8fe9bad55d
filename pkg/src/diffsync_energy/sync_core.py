"""Diffsync protocol endpoints: one client, one multi-shadow server.

A full cycle, starting from a local edit on the client:

1. the user edits the client item;
2. the client diffs item against its shadow;
3. the resulting edit list goes into the outbound packet;
4. the client item is copied to the client shadow;
5. the server patches the edits exactly onto its per-client shadow and
   fuzzily onto the server item;
6. the server diffs its shadow against the server item;
7. the resulting edits (changes from other clients, or lost fuzzy edits)
   form the reply;
8. the server item is copied to the per-client shadow;
9. the client patches the reply exactly onto its shadow and fuzzily onto
   its item.

Shadow patches are always exact: a mismatch there means the two sides
disagree about shared state and raises ShadowDivergenceError. Transport is
assumed reliable and ordered for data packets; only the push notification
channel (see simnet) models loss.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .content import Content, canonical_bytes, content_copy
from .diff_patch import EditScript, ShadowDivergenceError, diff, patch
from .wire import HEADER_BYTES, packet_wire_bytes

TO_SERVER = "to_server"
TO_CLIENT = "to_client"


class SyncProtocolError(Exception):
    """Protocol misuse: overlapping cycles, unknown clients, bad directions."""


@dataclass
class EditPacket:
    client_id: str
    direction: str
    script: EditScript
    wire_bytes: int = 0

    def __post_init__(self):
        if self.direction not in (TO_SERVER, TO_CLIENT):
            raise SyncProtocolError(f"bad packet direction {self.direction!r}")
        if not self.wire_bytes:
            self.wire_bytes = packet_wire_bytes(self.script)

    def to_json_dict(self) -> dict:
        from .diff_patch import op_to_json

        return {
            "client_id": self.client_id,
            "direction": self.direction,
            "ops": [op_to_json(op) for op in self.script.ops],
        }


@dataclass
class CycleOutcome:
    changed_item: bool
    dropped: int


class _Endpoint:
    """State shared by both endpoint kinds: an item plus local-edit entry."""

    item: Content

    def apply_local_edit(self, edit: EditScript) -> None:
        """Apply a user edit to the item; shadows are never touched here."""
        if edit.is_empty:
            return
        self.item, _, _ = patch(self.item, edit, "exact")


class ClientEndpoint(_Endpoint):
    def __init__(self, client_id: str, item: Content):
        self.client_id = client_id
        self.item = content_copy(item)
        self.shadow = content_copy(item)
        self.cycle_active = False
        self.loop_once_more = False

    def begin_cycle(self) -> EditPacket:
        """Steps 2-4: diff item against shadow, roll the shadow forward."""
        if self.cycle_active:
            raise SyncProtocolError(f"client {self.client_id} already has a cycle in flight")
        script = diff(self.shadow, self.item)
        self.shadow = content_copy(self.item)
        self.cycle_active = True
        return EditPacket(self.client_id, TO_SERVER, script)

    def apply_reply(self, reply: EditPacket) -> CycleOutcome:
        """Step 9: exact-patch the shadow, fuzzy-patch the item."""
        if not self.cycle_active:
            raise SyncProtocolError(f"client {self.client_id} got a reply with no cycle active")
        if reply.direction != TO_CLIENT:
            raise SyncProtocolError("reply must be directed to_client")
        try:
            before = canonical_bytes(self.item)
            self.shadow, _, shadow_dropped = patch(self.shadow, reply.script, "exact")
            if shadow_dropped:
                raise ShadowDivergenceError("exact patch dropped ops on client shadow")
            self.item, _, dropped = patch(self.item, reply.script, "fuzzy")
            changed = canonical_bytes(self.item) != before
        finally:
            self.cycle_active = False
        return CycleOutcome(changed_item=changed, dropped=dropped)


class ServerEndpoint:
    def __init__(self, item: Content):
        self.item = content_copy(item)
        self.shadows: dict[str, Content] = {}
        self.last_notify_time = None  # maintained by the notification throttle
        self.pending_notify = False
        self.item_dropped_ops = 0  # running total of fuzzy drops on the item

    def register(self, client_id: str, client_item: Content) -> None:
        """Track a client; its shadow starts identical to the client's item."""
        if client_id in self.shadows:
            raise SyncProtocolError(f"client {client_id} already registered")
        self.shadows[client_id] = content_copy(client_item)

    def apply_local_edit(self, edit: EditScript) -> None:
        if edit.is_empty:
            return
        self.item, _, _ = patch(self.item, edit, "exact")

    def process(self, packet: EditPacket) -> EditPacket:
        """Steps 5-8 for one inbound packet; returns the reply.

        Returns a packet whose script carries everything this client has
        not seen yet (edits from other clients plus any of its own edits
        the fuzzy item patch could not place).
        """
        if packet.direction != TO_SERVER:
            raise SyncProtocolError("server can only process to_server packets")
        client_id = packet.client_id
        if client_id not in self.shadows:
            raise SyncProtocolError(f"unknown client {client_id}")
        shadow = self.shadows[client_id]
        new_shadow, _, shadow_dropped = patch(shadow, packet.script, "exact")
        if shadow_dropped:
            raise ShadowDivergenceError("exact patch dropped ops on server shadow")
        self.item, _, dropped = patch(self.item, packet.script, "fuzzy")
        self.item_dropped_ops += dropped
        reply_script = diff(new_shadow, self.item)
        self.shadows[client_id] = content_copy(self.item)
        return EditPacket(client_id, TO_CLIENT, reply_script)


def run_cycle(client: ClientEndpoint, server: ServerEndpoint) -> tuple[EditPacket, EditPacket, CycleOutcome]:
    """One synchronous cycle with zero transport delay; handy for tests."""
    outbound = client.begin_cycle()
    reply = server.process(outbound)
    outcome = client.apply_reply(reply)
    return outbound, reply, outcome


__all__ = [
    "HEADER_BYTES",
    "TO_CLIENT",
    "TO_SERVER",
    "ClientEndpoint",
    "CycleOutcome",
    "EditPacket",
    "ServerEndpoint",
    "SyncProtocolError",
    "run_cycle",
]
