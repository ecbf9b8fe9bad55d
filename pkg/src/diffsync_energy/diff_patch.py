"""Semantic diff and patch for text sequences and annotation dictionaries.

The text differ runs a shortest-edit-script search (Myers-style frontier
expansion over diagonals) after stripping the common prefix and suffix.
Every diff reports `work_units`, a deterministic count of the search steps
it expended; the CPU energy model charges per work unit. A frontier
expansion is weighted at ``EXPAND_COST`` units (it costs several array
operations) while each diagonal-snake advance counts 1 (one comparison).

Patching runs in two modes:

* exact: every op must apply at its recorded position with matching
  context, or the whole patch fails atomically ("shadow divergence", a
  protocol bug when it happens inside a sync cycle);
* fuzzy: text ops are relocated by searching their recorded context within
  a +-``FUZZY_WINDOW`` scalar window; ops that find no match are dropped
  and counted, never raised. Annotation ops apply by entry id.

Annotation diffs emit one op per changed entry: PutEntry / RemoveEntry for
structural changes, FieldDiff with per-field text edit scripts otherwise.
Fields diff over their canonical text forms (see `field_text`), so a colour
change is literally a tiny text diff of "#rrggbb" strings.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Union

from .content import (
    AnnotationEntry,
    AnnotationsContent,
    Content,
    ContentError,
    Position,
    TextContent,
    entry_from_dict,
    entry_to_dict,
    format_color,
    format_rational,
    parse_color,
    rational,
    same_variant,
)

# Fuzzy-matching tuning; values are deliberately small and documented here
# rather than spread through the code.
CONTEXT_SCALARS = 8   # scalars of base text kept on each side of an edit site
FUZZY_WINDOW = 32     # search radius (scalars) around the recorded position
EXPAND_COST = 3       # work units charged per frontier expansion step

ANNOTATION_FIELDS = ("color", "position", "text", "author")


class DiffPatchError(Exception):
    """Base class for diff/patch failures."""


class VariantMismatchError(DiffPatchError):
    """Text script applied to annotations or vice versa."""


class ShadowDivergenceError(DiffPatchError):
    """Exact patch failed; in a sync cycle this signals a protocol bug."""


@dataclass(frozen=True)
class Retain:
    n: int


@dataclass(frozen=True)
class Insert:
    seq: str
    ctx_before: str = ""
    ctx_after: str = ""


@dataclass(frozen=True)
class Delete:
    n: int
    ctx_before: str = ""
    ctx_after: str = ""


@dataclass(frozen=True)
class PutEntry:
    entry_id: str
    entry: AnnotationEntry


@dataclass(frozen=True)
class RemoveEntry:
    entry_id: str


@dataclass(frozen=True)
class FieldDiff:
    entry_id: str
    fields: tuple[tuple[str, "EditScript"], ...]  # ordered as ANNOTATION_FIELDS


TextOp = Union[Retain, Insert, Delete]
AnnotationOp = Union[PutEntry, RemoveEntry, FieldDiff]
EditOp = Union[TextOp, AnnotationOp]


@dataclass(frozen=True)
class EditScript:
    """Ordered edit ops plus the work expended to compute them.

    Invariants: exact-patching the base yields the target; an empty script
    means base == target; work_units is zero exactly when ops is empty.
    """

    ops: tuple[EditOp, ...] = ()
    work_units: int = 0

    def __post_init__(self):
        if self.work_units < 0:
            raise DiffPatchError("work_units must be non-negative")
        if (self.work_units == 0) != (len(self.ops) == 0):
            raise DiffPatchError("work_units == 0 must coincide with an empty op list")
        for op in self.ops:
            _validate_op(op)

    @property
    def is_empty(self) -> bool:
        return not self.ops

    def edit_size(self) -> int:
        """Total scalars inserted plus deleted (LCS-style edit distance)."""
        total = 0
        for op in self.ops:
            if isinstance(op, Insert):
                total += len(op.seq)
            elif isinstance(op, Delete):
                total += op.n
        return total


EMPTY_SCRIPT = EditScript()


def _validate_op(op: EditOp) -> None:
    if isinstance(op, Retain):
        if op.n <= 0:
            raise DiffPatchError("Retain count must be positive")
    elif isinstance(op, Delete):
        if op.n <= 0:
            raise DiffPatchError("Delete count must be positive")
        if len(op.ctx_before) > CONTEXT_SCALARS or len(op.ctx_after) > CONTEXT_SCALARS:
            raise DiffPatchError("context longer than CONTEXT_SCALARS")
    elif isinstance(op, Insert):
        if not op.seq:
            raise DiffPatchError("Insert sequence must be non-empty")
        if len(op.ctx_before) > CONTEXT_SCALARS or len(op.ctx_after) > CONTEXT_SCALARS:
            raise DiffPatchError("context longer than CONTEXT_SCALARS")
    elif isinstance(op, FieldDiff):
        for name, script in op.fields:
            if name not in ANNOTATION_FIELDS:
                raise DiffPatchError(f"unknown annotation field {name!r}")
            if script.is_empty:
                raise DiffPatchError("FieldDiff must not carry empty field scripts")


# ---------------------------------------------------------------------------
# diff

def diff(base: Content, target: Content) -> EditScript:
    """Compute the edit script turning `base` into `target`."""
    if not same_variant(base, target):
        raise VariantMismatchError(
            f"cannot diff {type(base).__name__} against {type(target).__name__}"
        )
    if isinstance(base, TextContent):
        return diff_text(base.text, target.text)
    return _diff_annotations(base, target)


def diff_text(base: str, target: str) -> EditScript:
    ops, work = _text_diff_ops(base, target)
    return EditScript(tuple(ops), work)


def _common_prefix(a: str, b: str) -> int:
    limit = min(len(a), len(b))
    i = 0
    while i < limit and a[i] == b[i]:
        i += 1
    return i


def _common_suffix(a: str, b: str) -> int:
    limit = min(len(a), len(b))
    i = 0
    while i < limit and a[len(a) - 1 - i] == b[len(b) - 1 - i]:
        i += 1
    return i


def _text_diff_ops(base: str, target: str) -> tuple[list[TextOp], int]:
    prefix = _common_prefix(base, target)
    suffix = _common_suffix(base[prefix:], target[prefix:])
    core_a = base[prefix : len(base) - suffix]
    core_b = target[prefix : len(target) - suffix]
    if not core_a and not core_b:
        return [], 0

    runs, work = _myers(core_a, core_b)
    ops: list[TextOp] = []
    if prefix:
        ops.append(Retain(prefix))
    pos = prefix  # position in the full base
    for kind, payload in runs:
        if kind == "eq":
            ops.append(Retain(payload))
            pos += payload
        elif kind == "del":
            ops.append(Delete(payload, _ctx_before(base, pos), _ctx_after(base, pos + payload)))
            pos += payload
        else:  # ins
            ops.append(Insert(payload, _ctx_before(base, pos), _ctx_after(base, pos)))
    # Trailing common suffix is an implicit retain; scripts stay minimal.
    return ops, work


def _ctx_before(base: str, pos: int) -> str:
    return base[max(0, pos - CONTEXT_SCALARS) : pos]


def _ctx_after(base: str, pos: int) -> str:
    return base[pos : pos + CONTEXT_SCALARS]


def _myers(a: str, b: str) -> tuple[list[tuple[str, object]], int]:
    """Shortest edit script on (already trimmed) strings.

    Returns merged runs [("eq", n) | ("del", n) | ("ins", chars)] and the
    number of weighted search steps spent finding them.
    """
    n, m = len(a), len(b)
    work = 0
    if n == 0:
        return ([("ins", b)], EXPAND_COST * (m + 1)) if m else ([], 0)
    if m == 0:
        return [("del", n)], EXPAND_COST * (n + 1)

    max_d = n + m
    offset = max_d + 1
    v = [0] * (2 * max_d + 3)
    trace: list[list[int]] = []
    found_d = -1
    for d in range(max_d + 1):
        # snapshot of the frontier window [-d-1, d+1] before this level runs
        trace.append(v[offset - d - 1 : offset + d + 2])
        for k in range(-d, d + 1, 2):
            work += EXPAND_COST
            if k == -d or (k != d and v[offset + k - 1] < v[offset + k + 1]):
                x = v[offset + k + 1]
            else:
                x = v[offset + k - 1] + 1
            y = x - k
            while x < n and y < m and a[x] == b[y]:
                x += 1
                y += 1
                work += 1
            v[offset + k] = x
            if x >= n and y >= m:
                found_d = d
                break
        if found_d >= 0:
            break

    # Backtrack through the per-level frontier snapshots.
    moves: list[str] = []  # reversed: "eq", "del", "ins"
    x, y = n, m
    for d in range(found_d, -1, -1):
        snap = trace[d]
        center = d + 1  # snap[center + k] == v[k] before level d
        k = x - y
        if k == -d or (k != d and snap[center + k - 1] < snap[center + k + 1]):
            prev_k = k + 1
        else:
            prev_k = k - 1
        prev_x = snap[center + prev_k]
        prev_y = prev_x - prev_k
        while x > prev_x and y > prev_y:
            moves.append("eq")
            x -= 1
            y -= 1
        if d > 0:
            moves.append("del" if prev_k == k - 1 else "ins")
            x, y = prev_x, prev_y

    moves.reverse()
    return _merge_moves(moves, a, b), work


def _merge_moves(moves: list[str], a: str, b: str) -> list[tuple[str, object]]:
    runs: list[tuple[str, object]] = []
    ai = bi = 0
    i = 0
    while i < len(moves):
        kind = moves[i]
        j = i
        while j < len(moves) and moves[j] == kind:
            j += 1
        count = j - i
        if kind == "eq":
            runs.append(("eq", count))
            ai += count
            bi += count
        elif kind == "del":
            runs.append(("del", count))
            ai += count
        else:
            runs.append(("ins", b[bi : bi + count]))
            bi += count
        i = j
    # canonical order: a delete directly following an insert at the same spot
    # swaps so deletes come first
    out: list[tuple[str, object]] = []
    for run in runs:
        if out and run[0] == "del" and out[-1][0] == "ins":
            out.insert(len(out) - 1, run)
        else:
            out.append(run)
    return out


def _diff_annotations(base: AnnotationsContent, target: AnnotationsContent) -> EditScript:
    ops: list[AnnotationOp] = []
    inner_work = 0
    all_ids = sorted(set(base.entries) | set(target.entries))
    for entry_id in all_ids:
        old = base.entries.get(entry_id)
        new = target.entries.get(entry_id)
        if old is None:
            ops.append(PutEntry(entry_id, new))
        elif new is None:
            ops.append(RemoveEntry(entry_id))
        elif old != new:
            if old.kind != new.kind:
                ops.append(PutEntry(entry_id, new))
                continue
            fields: list[tuple[str, EditScript]] = []
            for name in ANNOTATION_FIELDS:
                old_text = field_text(old, name)
                new_text = field_text(new, name)
                if old_text == new_text:
                    continue
                script = _field_script(old_text, new_text)
                inner_work += script.work_units
                fields.append((name, script))
            ops.append(FieldDiff(entry_id, tuple(fields)))
    if not ops:
        return EMPTY_SCRIPT
    # one unit per compared key, so dict-scan cost scales with map size
    return EditScript(tuple(ops), inner_work + len(all_ids))


def _field_script(old_text: str, new_text: str) -> EditScript:
    script = diff_text(old_text, new_text)
    collapsed = _replace_all_script(old_text, new_text, script.work_units)
    if _script_wire_cost(collapsed.ops) < _script_wire_cost(script.ops):
        return collapsed
    return script


def _replace_all_script(old_text: str, new_text: str, work: int) -> EditScript:
    """Whole-value replacement with empty contexts.

    Cheaper on the wire than a character diff for short fields; an empty
    context pair means "apply at the recorded position".
    """
    ops: list[TextOp] = []
    if old_text:
        ops.append(Delete(len(old_text)))
    if new_text:
        ops.append(Insert(new_text))
    return EditScript(tuple(ops), max(work, 1))


def _script_wire_cost(ops: tuple[TextOp, ...]) -> int:
    # mirrors the compact wire encoding: ~2 bytes per op record plus payload
    cost = 0
    for op in ops:
        if isinstance(op, Retain):
            continue
        if isinstance(op, Delete):
            cost += 4 + len(op.ctx_before.encode()) + len(op.ctx_after.encode())
        else:
            cost += 4 + len(op.seq.encode()) + len(op.ctx_before.encode()) + len(op.ctx_after.encode())
    return cost


# ---------------------------------------------------------------------------
# field canonical text forms

def field_text(entry: AnnotationEntry, name: str) -> str:
    if name == "color":
        return format_color(entry.color)
    if name == "position":
        pos = entry.position
        return f"{pos.page}/" + ",".join(format_rational(r) for r in pos.rect)
    if name == "text":
        return entry.text or ""
    if name == "author":
        return entry.author or ""
    raise DiffPatchError(f"unknown annotation field {name!r}")


def _entry_with_field(entry: AnnotationEntry, name: str, text: str) -> AnnotationEntry:
    if name == "color":
        return replace(entry, color=parse_color(text))
    if name == "position":
        page_part, _, rect_part = text.partition("/")
        coords = rect_part.split(",")
        if not page_part.isdigit() or len(coords) != 4:
            raise ContentError(f"malformed position text {text!r}")
        return replace(entry, position=Position(int(page_part), tuple(rational(c) for c in coords)))
    if name == "text":
        return replace(entry, text=text or None)
    if name == "author":
        return replace(entry, author=text or None)
    raise DiffPatchError(f"unknown annotation field {name!r}")


# ---------------------------------------------------------------------------
# patch

def patch(state: Content, script: EditScript, mode: str = "exact") -> tuple[Content, int, int]:
    """Apply `script` to `state`; returns (result, applied, dropped).

    Exact mode applies every op at its recorded position or raises
    ShadowDivergenceError without touching state. Fuzzy mode relocates text
    ops by context, drops what it cannot place, and always succeeds.
    """
    if mode not in ("exact", "fuzzy"):
        raise DiffPatchError(f"unknown patch mode {mode!r}")
    text_script = all(isinstance(op, (Retain, Insert, Delete)) for op in script.ops)
    if isinstance(state, TextContent):
        if not text_script:
            raise VariantMismatchError("annotation ops cannot patch text content")
        new_text, applied, dropped = _patch_text(state.text, script.ops, mode)
        return TextContent(new_text), applied, dropped
    if isinstance(state, AnnotationsContent):
        if script.ops and text_script:
            raise VariantMismatchError("text ops cannot patch annotation content")
        return _patch_annotations(state, script.ops, mode)
    raise VariantMismatchError(f"cannot patch {type(state).__name__}")


def patch_text(text: str, script: EditScript, mode: str = "exact") -> tuple[str, int, int]:
    return _patch_text(text, script.ops, mode)


def _patch_text(text: str, ops, mode: str) -> tuple[str, int, int]:
    if mode == "exact":
        return _patch_text_exact(text, ops), len(ops), 0
    return _patch_text_fuzzy(text, ops)


def _patch_text_exact(text: str, ops) -> str:
    out: list[str] = []
    pos = 0
    for op in ops:
        if isinstance(op, Retain):
            if pos + op.n > len(text):
                raise ShadowDivergenceError(f"retain of {op.n} past end at {pos}")
            out.append(text[pos : pos + op.n])
            pos += op.n
        elif isinstance(op, Delete):
            if pos + op.n > len(text):
                raise ShadowDivergenceError(f"delete of {op.n} past end at {pos}")
            if not _contexts_match_exact(text, pos, op.n, op.ctx_before, op.ctx_after):
                raise ShadowDivergenceError(f"delete context mismatch at {pos}")
            pos += op.n
        elif isinstance(op, Insert):
            if not _contexts_match_exact(text, pos, 0, op.ctx_before, op.ctx_after):
                raise ShadowDivergenceError(f"insert context mismatch at {pos}")
            out.append(op.seq)
        else:
            raise VariantMismatchError("annotation op in text patch")
    out.append(text[pos:])
    return "".join(out)


def _contexts_match_exact(text: str, pos: int, span: int, ctx_before: str, ctx_after: str) -> bool:
    if ctx_before and (pos < len(ctx_before) or text[pos - len(ctx_before) : pos] != ctx_before):
        return False
    if ctx_after and text[pos + span : pos + span + len(ctx_after)] != ctx_after:
        return False
    return True


def _patch_text_fuzzy(text: str, ops) -> tuple[str, int, int]:
    cur = text
    base_pos = 0   # position in the original base the script was made for
    shift = 0      # base position -> current position correction
    applied = 0
    dropped = 0
    for op in ops:
        if isinstance(op, Retain):
            base_pos += op.n
            applied += 1
            continue
        if isinstance(op, Delete):
            expected = base_pos + shift
            q = _locate(cur, expected, op.n, op.ctx_before, op.ctx_after)
            base_pos += op.n
            if q is None:
                dropped += 1
                continue
            cur = cur[:q] + cur[q + op.n :]
            shift += (q - expected) - op.n
            applied += 1
        elif isinstance(op, Insert):
            expected = base_pos + shift
            q = _locate(cur, expected, 0, op.ctx_before, op.ctx_after)
            if q is None:
                dropped += 1
                continue
            cur = cur[:q] + op.seq + cur[q:]
            shift += (q - expected) + len(op.seq)
            applied += 1
        else:
            raise VariantMismatchError("annotation op in text patch")
    return cur, applied, dropped


def _locate(cur: str, expected: int, span: int, ctx_before: str, ctx_after: str) -> int | None:
    """Find where an op should apply in drifted text.

    Candidates within +-FUZZY_WINDOW of the expected position qualify when
    at least one non-empty context matches; both-match wins over one-match,
    then nearest, then lowest offset. Ops without contexts (whole-value
    replacements) apply at the recorded position, clamped into bounds.
    """
    limit = len(cur) - span
    if limit < 0:
        return None
    if not ctx_before and not ctx_after:
        return min(max(expected, 0), limit)
    lo = max(0, expected - FUZZY_WINDOW)
    hi = min(limit, expected + FUZZY_WINDOW)
    best: tuple[int, int, int] | None = None  # (-score, distance, q)
    for q in range(lo, hi + 1):
        score = 0
        if ctx_before and q >= len(ctx_before) and cur[q - len(ctx_before) : q] == ctx_before:
            score += 1
        if ctx_after and cur[q + span : q + span + len(ctx_after)] == ctx_after:
            score += 1
        if score == 0:
            continue
        key = (-score, abs(q - expected), q)
        if best is None or key < best:
            best = key
    return best[2] if best else None


def _patch_annotations(state: AnnotationsContent, ops, mode: str) -> tuple[Content, int, int]:
    entries = dict(state.entries)
    exact = mode == "exact"
    applied = 0
    dropped = 0
    for op in ops:
        if isinstance(op, PutEntry):
            entries[op.entry_id] = op.entry
            applied += 1
        elif isinstance(op, RemoveEntry):
            if op.entry_id in entries:
                del entries[op.entry_id]
            elif exact:
                raise ShadowDivergenceError(f"remove of unknown entry {op.entry_id}")
            applied += 1  # removal of an absent entry is a no-op, never a drop
        elif isinstance(op, FieldDiff):
            entry = entries.get(op.entry_id)
            if entry is None:
                if exact:
                    raise ShadowDivergenceError(f"field diff for unknown entry {op.entry_id}")
                dropped += 1
                continue
            entries[op.entry_id] = _patch_entry_fields(entry, op, exact)
            applied += 1
        else:
            raise VariantMismatchError("text op in annotation patch")
    return AnnotationsContent(entries), applied, dropped


def _patch_entry_fields(entry: AnnotationEntry, op: FieldDiff, exact: bool) -> AnnotationEntry:
    for name, script in op.fields:
        old_text = field_text(entry, name)
        if exact:
            new_text = _patch_text_exact(old_text, script.ops)
            entry = _entry_with_field(entry, name, new_text)
        else:
            new_text, _, _ = _patch_text_fuzzy(old_text, script.ops)
            try:
                entry = _entry_with_field(entry, name, new_text)
            except (ContentError, ValueError):
                pass  # fuzzy result did not parse; keep the old field value
    return entry


# ---------------------------------------------------------------------------
# JSON form (event logs, trace files, packet archival)

def op_to_json(op: EditOp):
    if isinstance(op, Retain):
        return ["R", op.n]
    if isinstance(op, Insert):
        return ["I", op.seq, op.ctx_before, op.ctx_after]
    if isinstance(op, Delete):
        return ["D", op.n, op.ctx_before, op.ctx_after]
    if isinstance(op, PutEntry):
        return ["P", op.entry_id, entry_to_dict(op.entry)]
    if isinstance(op, RemoveEntry):
        return ["X", op.entry_id]
    if isinstance(op, FieldDiff):
        return ["F", op.entry_id, {name: script_to_json(s) for name, s in op.fields}]
    raise DiffPatchError(f"unknown op {op!r}")


def op_from_json(data) -> EditOp:
    tag = data[0]
    if tag == "R":
        return Retain(data[1])
    if tag == "I":
        return Insert(data[1], data[2], data[3])
    if tag == "D":
        return Delete(data[1], data[2], data[3])
    if tag == "P":
        return PutEntry(data[1], entry_from_dict(data[2]))
    if tag == "X":
        return RemoveEntry(data[1])
    if tag == "F":
        fields = tuple(
            (name, script_from_json(s))
            for name, s in sorted(data[2].items(), key=lambda kv: ANNOTATION_FIELDS.index(kv[0]))
        )
        return FieldDiff(data[1], fields)
    raise DiffPatchError(f"unknown op tag {tag!r}")


def script_to_json(script: EditScript) -> dict:
    return {"ops": [op_to_json(op) for op in script.ops], "work": script.work_units}


def script_from_json(data: dict) -> EditScript:
    return EditScript(tuple(op_from_json(op) for op in data["ops"]), data["work"])
