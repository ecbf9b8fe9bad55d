"""Edit-trace generation.

Synthetic sessions follow observed reader/annotator behaviour: session
lengths are log-normal (mean 431.4s, truncated to [3.3s, 1977.8s], sigma
chosen so ~1% of the untruncated mass lies above the maximum); edits
arrive as a Poisson process whose rate makes the expected share of empty
2-second polling windows equal 96.8%; roughly three highlight edits happen
for every note edit.

A trace entry carries either a prebuilt edit script (valid against the
author's own item evolution, because generated clients only ever touch the
annotations they own) or a declarative intent that the simulator resolves
against the live item state at delivery time. Intents are what concurrent
conflict tests use; prebuilt scripts are what the statistics and replay
paths use.

Micro traces drive the CPU-complexity experiments on text items: a
"worst_case" edit substitutes one character at the very beginning and one
at the very end of the item each period (untrimmable, so the diff search
walks the whole item); a "simple_change" is a trailing one-character
substitution (the differ strips the common prefix and barely works at
all); "empty" emits nothing.
"""

from __future__ import annotations

import json
import math
import random
import uuid
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

from .content import (
    AnnotationEntry,
    AnnotationsContent,
    Content,
    Position,
    TextContent,
    content_copy,
    content_from_dict,
    content_to_dict,
    rational,
)
from .diff_patch import EditScript, diff, diff_text, script_from_json, script_to_json

Seconds = Fraction

SERVER_AUTHOR = "server"

_PALETTE = (0xFFEB3B, 0x4CAF50, 0x2196F3, 0xF44336, 0x9C27B0, 0xFF9800)
_FILLER_ALPHABET = "abcdefghijklmnopqrstuvwxyz0123456789 .,;"
_TRUNC_TAIL_MASS = 0.01  # untruncated probability above session_max
_Z_99 = 2.3263478740408408  # standard normal quantile for 1 - _TRUNC_TAIL_MASS


class WorkloadError(ValueError):
    pass


@dataclass(frozen=True)
class WorkloadParams:
    session_mean_s: float = 431.4
    session_min_s: float = 3.3
    session_max_s: float = 1977.8
    highlight_weight: int = 3
    note_weight: int = 1
    target_empty_fraction: float = 0.968
    poll_window_s: float = 2.0
    base_entries_per_client: int = 3

    def __post_init__(self):
        if not self.session_min_s <= self.session_mean_s <= self.session_max_s:
            raise WorkloadError("need session_min <= session_mean <= session_max")
        if self.highlight_weight <= 0 or self.note_weight <= 0:
            raise WorkloadError("edit-kind weights must be positive")
        if not 0.0 <= self.target_empty_fraction <= 1.0:
            raise WorkloadError("target_empty_fraction must be in [0, 1]")

    def edit_rate_per_s(self) -> float:
        """Poisson rate per client making E[empty poll windows] hit target."""
        if self.target_empty_fraction >= 1.0:
            return 0.0
        return -math.log(self.target_empty_fraction) / self.poll_window_s

    def lognormal_mu_sigma(self) -> tuple[float, float]:
        """Parameters with the stated mean and ~1% mass above session_max."""
        spread = 2.0 * math.log(self.session_max_s / self.session_mean_s)
        if self.session_max_s <= self.session_mean_s or spread >= _Z_99**2:
            sigma = _Z_99  # cannot place the max at the 99th percentile; go wide
        else:
            sigma = _Z_99 - math.sqrt(_Z_99**2 - spread)
        mu = math.log(self.session_mean_s) - sigma**2 / 2.0
        return mu, sigma


@dataclass(frozen=True)
class TraceEdit:
    time: Seconds
    client: str                    # "c0", "c1", ... or "server"
    kind: str                      # "highlight" | "note" | "text" | "intent"
    script: EditScript | None = None
    intent: dict | None = None

    def __post_init__(self):
        if (self.script is None) == (self.intent is None):
            raise WorkloadError("trace edit needs exactly one of script/intent")


@dataclass
class EditTrace:
    initial: Content
    edits: list[TraceEdit]
    sessions: dict[str, tuple[Seconds, Seconds]]
    meta: dict = field(default_factory=dict)

    def duration(self) -> Seconds:
        ends = [end for _, end in self.sessions.values()]
        return max(ends) if ends else Fraction(0)

    # -- serialization (JSON Lines: header line, then one edit per line) ----

    def to_jsonl(self) -> str:
        header = {
            "format": "diffsync-energy-trace-v1",
            "initial": content_to_dict(self.initial),
            "sessions": {
                cid: [str(start), str(end)] for cid, (start, end) in sorted(self.sessions.items())
            },
            "meta": self.meta,
        }
        lines = [json.dumps(header, sort_keys=True)]
        for edit in self.edits:
            row = {"t": str(edit.time), "client": edit.client, "kind": edit.kind}
            if edit.script is not None:
                row["script"] = script_to_json(edit.script)
            else:
                row["intent"] = edit.intent
            lines.append(json.dumps(row, sort_keys=True))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> "EditTrace":
        lines = [line for line in text.splitlines() if line.strip()]
        header = json.loads(lines[0])
        if header.get("format") != "diffsync-energy-trace-v1":
            raise WorkloadError(f"unknown trace format {header.get('format')!r}")
        edits = []
        for line in lines[1:]:
            row = json.loads(line)
            edits.append(
                TraceEdit(
                    time=Fraction(row["t"]),
                    client=row["client"],
                    kind=row["kind"],
                    script=script_from_json(row["script"]) if "script" in row else None,
                    intent=row.get("intent"),
                )
            )
        return cls(
            initial=content_from_dict(header["initial"]),
            edits=edits,
            sessions={
                cid: (Fraction(start), Fraction(end))
                for cid, (start, end) in header["sessions"].items()
            },
            meta=header.get("meta", {}),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_jsonl())

    @classmethod
    def load(cls, path: str | Path) -> "EditTrace":
        return cls.from_jsonl(Path(path).read_text())


# ---------------------------------------------------------------------------
# deterministic ids and items

def det_uuid(rng: random.Random) -> str:
    return str(uuid.UUID(int=rng.getrandbits(128), version=4))


def filler_text(n_bytes: int, rng: random.Random) -> str:
    return "".join(rng.choice(_FILLER_ALPHABET) for _ in range(n_bytes))


def _highlight(rng: random.Random, page: int = 1) -> AnnotationEntry:
    rect = tuple(
        rational(f"{rng.randrange(0, 1000) / 1000:.3f}") for _ in range(4)
    )
    return AnnotationEntry("highlight", Position(page, rect), rng.choice(_PALETTE))


def _note(rng: random.Random, author: str, page: int = 1) -> AnnotationEntry:
    entry = _highlight(rng, page)
    return AnnotationEntry(
        "note", entry.position, entry.color,
        text=filler_text(rng.randrange(8, 40), rng), author=author,
    )


def annotation_item(n_entries: int, seed: int) -> AnnotationsContent:
    """A deterministic base annotation map, mostly highlights."""
    rng = random.Random(("annotation_item", seed, n_entries))
    entries = {}
    for i in range(n_entries):
        if i % 4 == 3:
            entries[det_uuid(rng)] = _note(rng, author=f"reader{i % 3}")
        else:
            entries[det_uuid(rng)] = _highlight(rng)
    return AnnotationsContent(entries)


# ---------------------------------------------------------------------------
# generated traces

def generate_trace(
    params: WorkloadParams,
    n_clients: int,
    seed: int,
    *,
    session_s: Seconds | None = None,
) -> EditTrace:
    """Synthetic multi-client trace matching the usage statistics.

    Each client owns a disjoint slice of the annotation map and only edits
    its own entries, so every prebuilt script exact-applies on the editing
    client no matter how the other clients' edits interleave. Pass
    `session_s` to pin every session to [0, session_s] instead of sampling
    session lengths.
    """
    if n_clients < 1:
        raise WorkloadError("need at least one client")
    rng = random.Random(("generate_trace", seed))
    clients = [f"c{i}" for i in range(n_clients)]

    entries: dict[str, AnnotationEntry] = {}
    owned: dict[str, dict[str, AnnotationEntry]] = {cid: {} for cid in clients}
    for cid in clients:
        for i in range(params.base_entries_per_client):
            eid = det_uuid(rng)
            entry = _note(rng, author=cid) if i % 3 == 2 else _highlight(rng)
            entries[eid] = entry
            owned[cid][eid] = entry
    initial = AnnotationsContent(entries)

    sessions: dict[str, tuple[Seconds, Seconds]] = {}
    for cid in clients:
        if session_s is not None:
            sessions[cid] = (Fraction(0), Fraction(session_s))
        else:
            sessions[cid] = (Fraction(0), _sample_session(params, rng))

    rate = params.edit_rate_per_s()
    edits: list[TraceEdit] = []
    kind_cut = params.highlight_weight / (params.highlight_weight + params.note_weight)
    for cid in clients:
        start, end = sessions[cid]
        t = float(start)
        state = dict(owned[cid])  # this client's own entries, evolving
        while rate > 0.0:
            t += rng.expovariate(rate)
            if t >= float(end):
                break
            when = Fraction(str(round(t, 3)))
            if rng.random() < kind_cut:
                kind = "highlight"
                state, script = _highlight_edit(state, rng)
            else:
                kind = "note"
                state, script = _note_edit(state, cid, rng)
            edits.append(TraceEdit(when, cid, kind, script=script))

    edits.sort(key=lambda e: (e.time, e.client))
    return EditTrace(
        initial=initial,
        edits=edits,
        sessions=sessions,
        meta={"generator": "generate_trace", "seed": seed, "n_clients": n_clients},
    )


def _sample_session(params: WorkloadParams, rng: random.Random) -> Fraction:
    if params.session_min_s == params.session_max_s:
        return Fraction(str(params.session_min_s))
    mu, sigma = params.lognormal_mu_sigma()
    while True:
        value = rng.lognormvariate(mu, sigma)
        if params.session_min_s <= value <= params.session_max_s:
            return Fraction(str(round(value, 3)))


def _script_between(old: dict, new: dict) -> EditScript:
    return diff(AnnotationsContent(old), AnnotationsContent(new))


def _highlight_edit(state: dict, rng: random.Random) -> tuple[dict, EditScript]:
    highlights = [eid for eid, e in state.items() if e.kind == "highlight"]
    new_state = dict(state)
    if not highlights or rng.random() < 0.15:
        new_state[det_uuid(rng)] = _highlight(rng)  # fresh highlight
    else:
        eid = rng.choice(sorted(highlights))
        entry = state[eid]
        if rng.random() < 0.7:  # recolour, else nudge the rect
            colors = [c for c in _PALETTE if c != entry.color]
            new_state[eid] = AnnotationEntry("highlight", entry.position, rng.choice(colors))
        else:
            new_state[eid] = _highlight(rng, entry.position.page)
    return new_state, _script_between(state, new_state)


def _note_edit(state: dict, author: str, rng: random.Random) -> tuple[dict, EditScript]:
    notes = [eid for eid, e in state.items() if e.kind == "note"]
    new_state = dict(state)
    if not notes:
        new_state[det_uuid(rng)] = _note(rng, author)
    else:
        eid = rng.choice(sorted(notes))
        entry = state[eid]
        addition = " " + filler_text(rng.randrange(3, 12), rng)
        new_state[eid] = AnnotationEntry(
            "note", entry.position, entry.color,
            text=(entry.text or "") + addition, author=entry.author,
        )
    return new_state, _script_between(state, new_state)


def empty_window_fraction(trace: EditTrace, window_s: float = 2.0) -> float:
    """Share of in-session polling windows containing zero edits."""
    total = 0
    nonempty = 0
    window = Fraction(str(window_s))
    edit_times: dict[str, list[Fraction]] = {}
    for edit in trace.edits:
        edit_times.setdefault(edit.client, []).append(edit.time)
    for cid, (start, end) in trace.sessions.items():
        times = edit_times.get(cid, [])
        k = 0
        t = start
        while t + window <= end:
            total += 1
            hit = False
            while k < len(times) and times[k] < t + window:
                hit = True
                k += 1
            if hit:
                nonempty += 1
            t += window
    if total == 0:
        return 1.0
    return (total - nonempty) / total


# ---------------------------------------------------------------------------
# micro traces for the complexity experiments

def micro_trace(
    kind: str,
    cycle_period_s,
    duration_s,
    *,
    item_bytes: int = 124,
    seed: int = 0,
    client: str = "c0",
) -> EditTrace:
    """Hand-shaped single-client text trace, one edit per polling period.

    Edits land mid-period so every polling cycle observes exactly one of
    them. Filler text is random (seeded): uniform filler would let the
    diff search snake along every shifted diagonal and overstate work.
    """
    if kind not in ("empty", "worst_case", "simple_change"):
        raise WorkloadError(f"unknown micro trace kind {kind!r}")
    rng = random.Random(("micro_trace", kind, item_bytes, seed))
    period = Fraction(str(cycle_period_s))
    duration = Fraction(str(duration_s))
    if period <= 0 or duration <= 0:
        raise WorkloadError("period and duration must be positive")
    text = filler_text(item_bytes, rng)
    initial = TextContent(text)

    edits: list[TraceEdit] = []
    if kind != "empty":
        t = period / 2
        while t < duration:
            if kind == "worst_case":
                new_text = _substitute(text, 0, rng) if len(text) > 1 else text
                new_text = _substitute(new_text, len(new_text) - 1, rng)
            else:
                new_text = _substitute(text, len(text) - 1, rng)
            script = diff_text(text, new_text)
            edits.append(TraceEdit(t, client, "text", script=script))
            text = new_text
            t += period
    return EditTrace(
        initial=initial,
        edits=edits,
        sessions={client: (Fraction(0), duration)},
        meta={"generator": "micro_trace", "kind": kind, "item_bytes": item_bytes, "seed": seed},
    )


def _substitute(text: str, pos: int, rng: random.Random) -> str:
    old = text[pos]
    new = rng.choice([c for c in _FILLER_ALPHABET[:12] if c != old])
    return text[:pos] + new + text[pos + 1 :]


def annotation_feed_trace(
    cycle_period_s,
    duration_s,
    *,
    author: str = SERVER_AUTHOR,
    n_base_entries: int = 10,
    seed: int = 0,
) -> EditTrace:
    """Steady remote edits: one small highlight change per period.

    With `author="server"` the simulator applies these directly to the
    server item, which is how "a change arrives every N seconds and the
    client gets notified" scenarios are built.
    """
    rng = random.Random(("annotation_feed", seed))
    initial = annotation_item(n_base_entries, seed)
    target_id = sorted(initial.entries)[0]
    period = Fraction(str(cycle_period_s))
    duration = Fraction(str(duration_s))

    edits: list[TraceEdit] = []
    state = dict(initial.entries)
    t = period / 2
    while t < duration:
        entry = state[target_id]
        colors = [c for c in _PALETTE if c != entry.color]
        new_entry = AnnotationEntry(entry.kind, entry.position, rng.choice(colors),
                                    text=entry.text, author=entry.author)
        new_state = dict(state)
        new_state[target_id] = new_entry
        script = diff(AnnotationsContent(state), AnnotationsContent(new_state))
        edits.append(TraceEdit(t, author, "highlight", script=script))
        state = new_state
        t += period
    return EditTrace(
        initial=initial,
        edits=edits,
        sessions={"c0": (Fraction(0), duration)},
        meta={"generator": "annotation_feed_trace", "seed": seed},
    )


# ---------------------------------------------------------------------------
# intents (resolved against live item state; used for conflicting workloads)

def resolve_intent(intent: dict, item: Content) -> Content:
    """Target content for an intent given the current item state.

    Intents referencing entries that no longer exist resolve to no-ops;
    concurrent removal simply wins.
    """
    kind = intent["kind"]
    if kind == "text_splice":
        if not isinstance(item, TextContent):
            raise WorkloadError("text_splice needs text content")
        text = item.text
        pos = min(intent["pos"], len(text))
        ndel = min(intent.get("ndel", 0), len(text) - pos)
        return TextContent(text[:pos] + intent.get("ins", "") + text[pos + ndel :])

    if not isinstance(item, AnnotationsContent):
        raise WorkloadError(f"{kind} needs annotation content")
    entries = dict(item.entries)
    eid = intent["id"]
    if kind == "put_highlight":
        entries[eid] = AnnotationEntry(
            "highlight",
            Position(intent.get("page", 1), tuple(rational(r) for r in intent["rect"])),
            intent["color"],
        )
    elif kind == "put_note":
        entries[eid] = AnnotationEntry(
            "note",
            Position(intent.get("page", 1), tuple(rational(r) for r in intent["rect"])),
            intent["color"],
            text=intent.get("text"),
            author=intent.get("author"),
        )
    elif kind == "remove":
        entries.pop(eid, None)
    elif kind == "set_color":
        entry = entries.get(eid)
        if entry is not None:
            entries[eid] = AnnotationEntry(entry.kind, entry.position, intent["color"],
                                           text=entry.text, author=entry.author)
    elif kind == "set_text":
        entry = entries.get(eid)
        if entry is not None and entry.kind == "note":
            entries[eid] = AnnotationEntry("note", entry.position, entry.color,
                                           text=intent.get("text"), author=entry.author)
    else:
        raise WorkloadError(f"unknown intent kind {kind!r}")
    return AnnotationsContent(entries)
