"""Synchronized item state: either a text sequence or a dictionary of
annotations keyed by unique IDs.

Annotation entries model PDF markup: a highlight is position + colour, a
note additionally carries text and an author. The canonical serialization
defined here is the single source of truth for byte sizes, both for item
size experiments and for wire payload accounting:

* text content serializes as UTF-8,
* annotation maps serialize as canonical JSON (lexicographically sorted
  keys, no whitespace), ids as 36-char UUID strings, colours as "#rrggbb",
  rect coordinates as decimal strings with at most 6 fractional digits.
"""

from __future__ import annotations

import json
import uuid
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Union


class ContentError(ValueError):
    """Raised when content values violate their invariants."""


_RATIONAL_SCALE = 10**6  # rect coordinates are decimals with <= 6 fractional digits


def rational(value) -> Fraction:
    """Coerce a number or decimal string to an exact rect coordinate."""
    frac = Fraction(str(value)) if not isinstance(value, Fraction) else value
    if (frac * _RATIONAL_SCALE).denominator != 1:
        raise ContentError(f"coordinate {value!r} needs more than 6 fractional digits")
    return frac


def format_rational(frac: Fraction) -> str:
    """Canonical decimal form: up to 6 fractional digits, no trailing zeros."""
    scaled = frac * _RATIONAL_SCALE
    if scaled.denominator != 1:
        raise ContentError(f"{frac} is not representable with 6 fractional digits")
    sign = "-" if frac < 0 else ""
    units, rest = divmod(abs(scaled.numerator), _RATIONAL_SCALE)
    if rest == 0:
        return f"{sign}{units}"
    return f"{sign}{units}.{rest:06d}".rstrip("0")


@dataclass(frozen=True)
class Position:
    """Placement of an annotation: 1-based page plus a rect of 4 coordinates."""

    page: int
    rect: tuple[Fraction, Fraction, Fraction, Fraction]

    def __post_init__(self):
        if self.page < 1:
            raise ContentError(f"page must be >= 1, got {self.page}")
        if len(self.rect) != 4:
            raise ContentError("rect needs exactly 4 coordinates")
        object.__setattr__(self, "rect", tuple(rational(r) for r in self.rect))


@dataclass(frozen=True)
class AnnotationEntry:
    """One highlight or note.

    Highlights never carry `text`/`author`; notes may carry both. Empty
    strings normalize to None so the canonical form is unambiguous.
    """

    kind: str  # "highlight" | "note"
    position: Position
    color: int  # 24-bit RGB
    text: str | None = None
    author: str | None = None

    def __post_init__(self):
        if self.kind not in ("highlight", "note"):
            raise ContentError(f"unknown annotation kind {self.kind!r}")
        if not 0 <= self.color <= 0xFFFFFF:
            raise ContentError(f"color {self.color:#x} outside 24-bit range")
        if self.text == "":
            object.__setattr__(self, "text", None)
        if self.author == "":
            object.__setattr__(self, "author", None)
        if self.kind == "highlight" and (self.text is not None or self.author is not None):
            raise ContentError("highlight entries cannot carry text or author")


@dataclass(frozen=True)
class TextContent:
    """A plain sequence of unicode scalar values."""

    text: str


@dataclass(frozen=True, eq=True)
class AnnotationsContent:
    """Annotation dictionary keyed by unique, stable 36-char UUID strings."""

    entries: Mapping[str, AnnotationEntry]

    def __post_init__(self):
        entries = dict(self.entries)
        for entry_id in entries:
            validate_annotation_id(entry_id)
        object.__setattr__(self, "entries", entries)

    def __eq__(self, other):
        return isinstance(other, AnnotationsContent) and self.entries == other.entries


Content = Union[TextContent, AnnotationsContent]


def validate_annotation_id(entry_id: str) -> None:
    if not isinstance(entry_id, str) or len(entry_id) != 36:
        raise ContentError(f"annotation id {entry_id!r} is not a 36-char UUID string")
    try:
        parsed = uuid.UUID(entry_id)
    except ValueError as exc:
        raise ContentError(f"annotation id {entry_id!r} is not a valid UUID") from exc
    if str(parsed) != entry_id:
        raise ContentError(f"annotation id {entry_id!r} is not in canonical lowercase form")


def same_variant(a: Content, b: Content) -> bool:
    return (isinstance(a, TextContent) and isinstance(b, TextContent)) or (
        isinstance(a, AnnotationsContent) and isinstance(b, AnnotationsContent)
    )


def content_copy(c: Content) -> Content:
    """Independent copy safe to mutate-by-replacement (entries are frozen)."""
    if isinstance(c, TextContent):
        return TextContent(c.text)
    return AnnotationsContent(dict(c.entries))


def format_color(color: int) -> str:
    return f"#{color:06x}"


def parse_color(text: str) -> int:
    if len(text) != 7 or text[0] != "#":
        raise ContentError(f"color {text!r} is not #rrggbb")
    return int(text[1:], 16)


def entry_to_dict(entry: AnnotationEntry) -> dict:
    out = {
        "kind": entry.kind,
        "position": {
            "page": entry.position.page,
            "rect": [format_rational(r) for r in entry.position.rect],
        },
        "color": format_color(entry.color),
    }
    if entry.text is not None:
        out["text"] = entry.text
    if entry.author is not None:
        out["author"] = entry.author
    return out


def entry_from_dict(data: dict) -> AnnotationEntry:
    pos = data["position"]
    return AnnotationEntry(
        kind=data["kind"],
        position=Position(page=pos["page"], rect=tuple(rational(r) for r in pos["rect"])),
        color=parse_color(data["color"]),
        text=data.get("text"),
        author=data.get("author"),
    )


def canonical_json_bytes(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def canonical_bytes(c: Content) -> bytes:
    """Canonical serialized form; equal contents always serialize identically."""
    if isinstance(c, TextContent):
        return c.text.encode("utf-8")
    return canonical_json_bytes({eid: entry_to_dict(e) for eid, e in c.entries.items()})


def content_size(c: Content) -> int:
    """Deterministic payload size in bytes of the canonical serialization."""
    return len(canonical_bytes(c))


def content_to_dict(c: Content) -> dict:
    if isinstance(c, TextContent):
        return {"variant": "text", "text": c.text}
    return {"variant": "annotations", "entries": {eid: entry_to_dict(e) for eid, e in c.entries.items()}}


def content_from_dict(data: dict) -> Content:
    if data["variant"] == "text":
        return TextContent(data["text"])
    if data["variant"] == "annotations":
        return AnnotationsContent({eid: entry_from_dict(e) for eid, e in data["entries"].items()})
    raise ContentError(f"unknown content variant {data.get('variant')!r}")
