"""Byte-exact wire accounting for edit packets.

Every packet costs a fixed 100-byte header (transport envelope, client id,
direction, sync metadata) plus the compact payload encoding of its edit
script. An empty script therefore costs exactly 100 bytes on the wire.

Payload encoding v1, designed to keep a typical single-field annotation
change in the low hundred-some bytes:

* integers are unsigned LEB128 varints;
* text ops carry an absolute-delta position instead of Retain records:
  - insert: 0x02, position, len, UTF-8 seq, ctx_before, ctx_after
  - delete: 0x03, position, count, ctx_before, ctx_after
  (contexts are length-prefixed UTF-8, at most 8 scalars each);
* annotation ops reference entries by their 16-byte binary UUID:
  - put entry: 0x10, uuid16, len, canonical entry JSON
  - remove entry: 0x11, uuid16
  - field diff: 0x12, uuid16, field count, then per field a 1-byte field
    code and a length-prefixed inner text-op payload.

Decoding is implemented too so the format is honest, not just a size
formula; encode/decode round-trips are tested.
"""

from __future__ import annotations

import json
import uuid

from .content import canonical_json_bytes, entry_from_dict, entry_to_dict
from .diff_patch import (
    ANNOTATION_FIELDS,
    Delete,
    EditScript,
    FieldDiff,
    Insert,
    PutEntry,
    RemoveEntry,
    Retain,
    TextOp,
)

HEADER_BYTES = 100

_TAG_INSERT = 0x02
_TAG_DELETE = 0x03
_TAG_PUT = 0x10
_TAG_REMOVE = 0x11
_TAG_FIELD_DIFF = 0x12

_FIELD_CODES = {name: i + 1 for i, name in enumerate(ANNOTATION_FIELDS)}
_FIELD_NAMES = {code: name for name, code in _FIELD_CODES.items()}


def _varint(n: int) -> bytes:
    out = bytearray()
    while True:
        byte = n & 0x7F
        n >>= 7
        if n:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return bytes(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def varint(self) -> int:
        shift = 0
        value = 0
        while True:
            byte = self.data[self.pos]
            self.pos += 1
            value |= (byte & 0x7F) << shift
            if not byte & 0x80:
                return value
            shift += 7

    def take(self, n: int) -> bytes:
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def text(self) -> str:
        return self.take(self.varint()).decode("utf-8")

    @property
    def exhausted(self) -> bool:
        return self.pos >= len(self.data)


def _encode_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return _varint(len(raw)) + raw


def _encode_text_ops(ops) -> bytes:
    out = bytearray()
    pos = 0
    for op in ops:
        if isinstance(op, Retain):
            pos += op.n
        elif isinstance(op, Insert):
            out.append(_TAG_INSERT)
            out += _varint(pos)
            out += _encode_str(op.seq)
            out += _encode_str(op.ctx_before)
            out += _encode_str(op.ctx_after)
        elif isinstance(op, Delete):
            out.append(_TAG_DELETE)
            out += _varint(pos)
            out += _varint(op.n)
            out += _encode_str(op.ctx_before)
            out += _encode_str(op.ctx_after)
            pos += op.n
        else:
            raise TypeError(f"not a text op: {op!r}")
    return bytes(out)


def _decode_text_ops(reader: _Reader, end: int) -> list[TextOp]:
    ops: list[TextOp] = []
    pos = 0
    while reader.pos < end:
        tag = reader.take(1)[0]
        at = reader.varint()
        if at > pos:
            ops.append(Retain(at - pos))
            pos = at
        if tag == _TAG_INSERT:
            ops.append(Insert(reader.text(), reader.text(), reader.text()))
        elif tag == _TAG_DELETE:
            n = reader.varint()
            ops.append(Delete(n, reader.text(), reader.text()))
            pos += n
        else:
            raise ValueError(f"unknown text op tag {tag:#x}")
    return ops


def encode_script_payload(script: EditScript) -> bytes:
    """Compact payload for `script`; empty scripts encode to zero bytes."""
    if script.is_empty:
        return b""
    if all(isinstance(op, (Retain, Insert, Delete)) for op in script.ops):
        return _encode_text_ops(script.ops)
    out = bytearray()
    for op in script.ops:
        if isinstance(op, PutEntry):
            out.append(_TAG_PUT)
            out += uuid.UUID(op.entry_id).bytes
            raw = canonical_json_bytes(entry_to_dict(op.entry))
            out += _varint(len(raw)) + raw
        elif isinstance(op, RemoveEntry):
            out.append(_TAG_REMOVE)
            out += uuid.UUID(op.entry_id).bytes
        elif isinstance(op, FieldDiff):
            out.append(_TAG_FIELD_DIFF)
            out += uuid.UUID(op.entry_id).bytes
            out += _varint(len(op.fields))
            for name, inner in op.fields:
                out.append(_FIELD_CODES[name])
                encoded = _encode_text_ops(inner.ops)
                out += _varint(len(encoded)) + encoded
        else:
            raise TypeError(f"not an annotation op: {op!r}")
    return bytes(out)


def decode_script_payload(payload: bytes, work_units: int = 1) -> EditScript:
    """Rebuild an edit script from its wire payload.

    Work units do not travel on the wire (they are a local CPU-accounting
    detail), so the caller supplies them; the default marks the script as
    minimally non-trivial.
    """
    if not payload:
        return EditScript()
    reader = _Reader(payload)
    first = payload[0]
    if first in (_TAG_INSERT, _TAG_DELETE):
        ops = _decode_text_ops(reader, len(payload))
        return EditScript(tuple(ops), max(work_units, 1))
    ops = []
    while not reader.exhausted:
        tag = reader.take(1)[0]
        entry_id = str(uuid.UUID(bytes=reader.take(16)))
        if tag == _TAG_PUT:
            raw = reader.take(reader.varint())
            ops.append(PutEntry(entry_id, entry_from_dict(json.loads(raw.decode("utf-8")))))
        elif tag == _TAG_REMOVE:
            ops.append(RemoveEntry(entry_id))
        elif tag == _TAG_FIELD_DIFF:
            fields = []
            for _ in range(reader.varint()):
                code = reader.take(1)[0]
                length = reader.varint()
                sub = _Reader(reader.take(length))
                inner_ops = _decode_text_ops(sub, length)
                fields.append((_FIELD_NAMES[code], EditScript(tuple(inner_ops), 1)))
            ops.append(FieldDiff(entry_id, tuple(fields)))
        else:
            raise ValueError(f"unknown annotation op tag {tag:#x}")
    return EditScript(tuple(ops), max(work_units, 1))


def packet_wire_bytes(script: EditScript) -> int:
    return HEADER_BYTES + len(encode_script_payload(script))
