"""Per-device energy accounting in percent-of-battery units.

The radio follows a four-state machine. A transfer on a sleeping radio
first pays a short promotion ramp, then an active period lasting exactly
``bytes * 8 / downlink_bps`` seconds. When the transfer ends, cellular
links hold an elevated-power tail (about 12s on 3G, 6s on GSM; none on
WLAN) before dropping back to sleep; a new transfer during the tail jumps
straight back to active. Each state has a fitted power in %/min.

The ledger is the device-level battery account: radio state segments plus
punctual charges (CPU work per diff, per-notification polling cost) plus
continuous rates (device baseline, and idle push polling when the device
keeps a push channel open). ``energy_between`` integrates all of it
exactly, so energy is additive over adjacent intervals and non-decreasing
in time by construction.

Rates reported by experiment runs are treated as inclusive of the device
baseline; "attributable" drainage, the quantity compared across scheduling
policies, is everything above baseline and idle push polling (both exist
regardless of which sync policy the app picks). The fit in `calibrate`
writes this down in its report.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from fractions import Fraction
from importlib import resources
from pathlib import Path

Seconds = Fraction

SLEEP = "sleep"
PROMO = "promo"
ACTIVE = "active"
TAIL = "tail"

BASELINE_PER_MIN = 0.108       # idle device drainage, %/min
IDLE_POLLING_PER_MIN = 0.02    # push channel kept open, no notifications
NOTIFICATION_COST_PCT = 0.011  # per received notification, on top of idle polling


class EnergyModelError(Exception):
    pass


@dataclass(frozen=True)
class LinkProfile:
    kind: str                      # "3g" | "gsm" | "wlan"
    downlink_bps: int
    tail_s: Fraction
    promo_s: Fraction
    promo_power: float             # %/min while promoting
    active_power: float            # %/min while transferring
    tail_power: float              # %/min in the post-transfer tail
    per_transfer_overhead_bytes: int = 0
    # overhead models radio-level airtime (signalling, retransmits) added by
    # the caller to each transfer's byte count; it never touches wire_bytes

    def __post_init__(self):
        object.__setattr__(self, "tail_s", Fraction(self.tail_s))
        object.__setattr__(self, "promo_s", Fraction(self.promo_s))
        if self.kind == "wlan" and self.tail_s != 0:
            raise EnergyModelError("wlan links have no tail state")
        if min(self.promo_power, self.active_power, self.tail_power) < 0:
            raise EnergyModelError("link powers must be non-negative")

    def transfer_seconds(self, byte_count: int) -> Fraction:
        return Fraction(byte_count * 8, self.downlink_bps)


@dataclass(frozen=True)
class EnergyPreset:
    name: str
    baseline_per_min: float
    idle_polling_per_min: float
    notification_cost_pct: float
    cpu_per_work_unit_pct: float
    links: dict[str, LinkProfile]
    fit_report: dict | None = None

    def __post_init__(self):
        for value in (
            self.baseline_per_min,
            self.idle_polling_per_min,
            self.notification_cost_pct,
            self.cpu_per_work_unit_pct,
        ):
            if value < 0:
                raise EnergyModelError("preset rates must be non-negative")

    def link(self, kind: str) -> LinkProfile:
        try:
            return self.links[kind]
        except KeyError:
            raise EnergyModelError(f"preset {self.name!r} has no link {kind!r}") from None


def cpu_energy(preset: EnergyPreset, work_units: int) -> float:
    """Battery cost of `work_units` of diff computation."""
    if work_units < 0:
        raise EnergyModelError("work_units must be non-negative")
    return preset.cpu_per_work_unit_pct * work_units


def polling_energy(preset: EnergyPreset, mode: str, duration_s, notification_count: int = 0) -> float:
    """Push-channel polling cost over a window.

    Idle polling is a flat rate; receiving notifications adds a fixed cost
    each (one notification every 6s sustains 0.13 %/min total).
    """
    minutes = float(Fraction(duration_s)) / 60.0
    idle = preset.idle_polling_per_min * minutes
    if mode == "idle":
        return idle
    if mode == "active":
        return idle + preset.notification_cost_pct * notification_count
    raise EnergyModelError(f"unknown polling mode {mode!r}")


@dataclass
class _Charge:
    time: Fraction
    kind: str
    amount: float


class RadioLedger:
    """Radio state timeline plus battery charges for one simulated device."""

    def __init__(self, preset: EnergyPreset, link: LinkProfile, *, push_polling: bool = False,
                 start_time: Seconds = Fraction(0)):
        self.preset = preset
        self.link = link
        self.push_polling = push_polling
        self.start_time = Fraction(start_time)
        self._segments: list[tuple[Fraction, Fraction, str]] = []  # finalized promo/active
        self._last_active_end: Fraction | None = None  # tail/sleep extend lazily from here
        self._last_request: Fraction = self.start_time
        self._charges: list[_Charge] = []

    # -- transfers ----------------------------------------------------------

    def record_transfer(self, byte_count: int, start: Seconds) -> Fraction:
        """Account one radio transfer; returns the time the radio goes idle.

        A transfer requested while the radio is still active queues
        back-to-back; one requested during the tail truncates it and skips
        promotion; from sleep it pays the promotion ramp first.
        """
        start = Fraction(start)
        if start < self._last_request:
            raise EnergyModelError(f"transfer at t={start} is before t={self._last_request}")
        self._last_request = start
        duration = self.link.transfer_seconds(byte_count)

        if self._last_active_end is None:
            state_at = SLEEP
        elif start < self._last_active_end:
            start = self._last_active_end  # radio busy; queue behind it
            state_at = ACTIVE
        elif start < self._last_active_end + self.link.tail_s:
            self._segments.append((self._last_active_end, start, TAIL))
            state_at = TAIL
        else:
            self._finalize_tail()
            state_at = SLEEP

        if state_at == SLEEP and self.link.promo_s:
            self._segments.append((start, start + self.link.promo_s, PROMO))
            start += self.link.promo_s
        end = start + duration
        self._segments.append((start, end, ACTIVE))
        self._last_active_end = end
        return end

    def _finalize_tail(self) -> None:
        if self._last_active_end is not None and self.link.tail_s:
            tail_end = self._last_active_end + self.link.tail_s
            self._segments.append((self._last_active_end, tail_end, TAIL))
        self._last_active_end = None

    def _realized_segments(self) -> list[tuple[Fraction, Fraction, str]]:
        out = list(self._segments)
        if self._last_active_end is not None and self.link.tail_s:
            out.append((self._last_active_end, self._last_active_end + self.link.tail_s, TAIL))
        return out

    def state_at(self, t: Seconds) -> str:
        t = Fraction(t)
        state = SLEEP
        for seg_start, seg_end, seg_state in self._realized_segments():
            if seg_start <= t < seg_end:
                return seg_state
            if seg_start > t:
                break
        return state

    def transitions(self) -> list[tuple[Fraction, str]]:
        """Realized (time, state) change points, starting asleep."""
        out = [(self.start_time, SLEEP)]
        prev_end = self.start_time
        for seg_start, seg_end, seg_state in self._realized_segments():
            if seg_start > prev_end:
                out.append((prev_end, SLEEP))
            out.append((seg_start, seg_state))
            prev_end = seg_end
        out.append((prev_end, SLEEP))
        # drop consecutive duplicates
        dedup = [out[0]]
        for item in out[1:]:
            if item[1] != dedup[-1][1]:
                dedup.append(item)
        return dedup

    # -- charges ------------------------------------------------------------

    def add_charge(self, time: Seconds, kind: str, amount: float) -> None:
        if amount < 0:
            raise EnergyModelError("charges must be non-negative")
        self._charges.append(_Charge(Fraction(time), kind, amount))

    # -- integration --------------------------------------------------------

    def _state_power(self, state: str) -> float:
        return {
            SLEEP: 0.0,
            PROMO: self.link.promo_power,
            ACTIVE: self.link.active_power,
            TAIL: self.link.tail_power,
        }[state]

    def radio_energy_by_state(self, t0: Seconds, t1: Seconds) -> dict[str, float]:
        t0, t1 = Fraction(t0), Fraction(t1)
        totals = {PROMO: 0.0, ACTIVE: 0.0, TAIL: 0.0}
        for seg_start, seg_end, seg_state in self._realized_segments():
            lo = max(seg_start, t0)
            hi = min(seg_end, t1)
            if hi > lo:
                totals[seg_state] += float(hi - lo) / 60.0 * self._state_power(seg_state)
        return totals

    def state_seconds(self, state: str, t0: Seconds, t1: Seconds) -> float:
        t0, t1 = Fraction(t0), Fraction(t1)
        total = Fraction(0)
        for seg_start, seg_end, seg_state in self._realized_segments():
            if seg_state != state:
                continue
            lo = max(seg_start, t0)
            hi = min(seg_end, t1)
            if hi > lo:
                total += hi - lo
        return float(total)

    def components(self, t0: Seconds, t1: Seconds) -> dict[str, float]:
        """Energy breakdown over [t0, t1); the total is the exact sum."""
        t0, t1 = Fraction(t0), Fraction(t1)
        if t1 < t0:
            raise EnergyModelError("interval end before start")
        minutes = float(t1 - t0) / 60.0
        by_state = self.radio_energy_by_state(t0, t1)
        charges: dict[str, float] = {}
        for charge in self._charges:
            if t0 <= charge.time < t1:
                charges[charge.kind] = charges.get(charge.kind, 0.0) + charge.amount
        out = {
            "baseline": self.preset.baseline_per_min * minutes,
            "radio": sum(by_state.values()),
            "polling_idle": self.preset.idle_polling_per_min * minutes if self.push_polling else 0.0,
        }
        out.update(charges)
        return out

    def energy_between(self, t0: Seconds, t1: Seconds) -> float:
        return sum(self.components(t0, t1).values())

    def cumulative_energies(self, times: list[Seconds]) -> list[float]:
        """energy_between(start, t) for each t in the sorted `times`.

        Single merged sweep over segments and charges; used to fill the
        energy column of event logs without rescanning per row.
        """
        times = [Fraction(t) for t in times]
        if any(b < a for a, b in zip(times, times[1:])):
            raise EnergyModelError("times must be sorted")
        segments = sorted(self._realized_segments())
        charges = sorted(self._charges, key=lambda c: c.time)
        continuous = self.preset.baseline_per_min + (
            self.preset.idle_polling_per_min if self.push_polling else 0.0
        )
        out = []
        seg_i = charge_i = 0
        radio_acc = 0.0
        charge_acc = 0.0
        for t in times:
            while seg_i < len(segments) and segments[seg_i][1] <= t:
                s0, s1, state = segments[seg_i]
                radio_acc += float(s1 - s0) / 60.0 * self._state_power(state)
                seg_i += 1
            partial = 0.0
            if seg_i < len(segments):
                s0, s1, state = segments[seg_i]
                if s0 < t:
                    partial = float(t - s0) / 60.0 * self._state_power(state)
            while charge_i < len(charges) and charges[charge_i].time < t:
                charge_acc += charges[charge_i].amount
                charge_i += 1
            base = continuous * float(t - self.start_time) / 60.0
            out.append(base + radio_acc + partial + charge_acc)
        return out


# ---------------------------------------------------------------------------
# preset serialization

def _link_to_dict(link: LinkProfile) -> dict:
    return {
        "kind": link.kind,
        "downlink_bps": link.downlink_bps,
        "tail_s": str(link.tail_s),
        "promo_s": str(link.promo_s),
        "promo_power": link.promo_power,
        "active_power": link.active_power,
        "tail_power": link.tail_power,
        "per_transfer_overhead_bytes": link.per_transfer_overhead_bytes,
    }


def _link_from_dict(data: dict) -> LinkProfile:
    return LinkProfile(
        kind=data["kind"],
        downlink_bps=data["downlink_bps"],
        tail_s=Fraction(data["tail_s"]),
        promo_s=Fraction(data["promo_s"]),
        promo_power=data["promo_power"],
        active_power=data["active_power"],
        tail_power=data["tail_power"],
        per_transfer_overhead_bytes=data.get("per_transfer_overhead_bytes", 0),
    )


def preset_to_dict(preset: EnergyPreset) -> dict:
    return {
        "name": preset.name,
        "baseline_per_min": preset.baseline_per_min,
        "idle_polling_per_min": preset.idle_polling_per_min,
        "notification_cost_pct": preset.notification_cost_pct,
        "cpu_per_work_unit_pct": preset.cpu_per_work_unit_pct,
        "links": {kind: _link_to_dict(link) for kind, link in sorted(preset.links.items())},
        "fit_report": preset.fit_report,
    }


def preset_from_dict(data: dict) -> EnergyPreset:
    return EnergyPreset(
        name=data["name"],
        baseline_per_min=data["baseline_per_min"],
        idle_polling_per_min=data["idle_polling_per_min"],
        notification_cost_pct=data["notification_cost_pct"],
        cpu_per_work_unit_pct=data["cpu_per_work_unit_pct"],
        links={kind: _link_from_dict(ld) for kind, ld in data["links"].items()},
        fit_report=data.get("fit_report"),
    )


def save_preset(preset: EnergyPreset, path: str | Path) -> None:
    Path(path).write_text(json.dumps(preset_to_dict(preset), indent=2, sort_keys=True) + "\n")


def load_preset(name_or_path: str) -> EnergyPreset:
    """Load a preset by bundled name (e.g. "iphone5s-mendeley-2014") or path."""
    path = Path(name_or_path)
    if path.suffix == ".json" and path.exists():
        return preset_from_dict(json.loads(path.read_text()))
    ref = resources.files("diffsync_energy.data.presets") / f"{name_or_path}.json"
    if not ref.is_file():
        raise EnergyModelError(f"unknown preset {name_or_path!r}")
    return preset_from_dict(json.loads(ref.read_text()))


def default_link_profiles() -> dict[str, LinkProfile]:
    """Structural link constants; the per-state powers are fit targets."""
    return {
        "3g": LinkProfile(
            kind="3g", downlink_bps=2_400_000, tail_s=Fraction(12), promo_s=Fraction(1, 2),
            promo_power=0.05, active_power=6.0, tail_power=0.02,
            per_transfer_overhead_bytes=11_000,
        ),
        "gsm": LinkProfile(
            kind="gsm", downlink_bps=168_200, tail_s=Fraction(6), promo_s=Fraction(1, 2),
            promo_power=0.05, active_power=6.0, tail_power=0.018,
            per_transfer_overhead_bytes=2_000,
        ),
        "wlan": LinkProfile(
            kind="wlan", downlink_bps=2_800_000, tail_s=Fraction(0), promo_s=Fraction(0),
            promo_power=0.0, active_power=0.3, tail_power=0.0,
            per_transfer_overhead_bytes=0,
        ),
    }


def default_preset(name: str = "uncalibrated") -> EnergyPreset:
    return EnergyPreset(
        name=name,
        baseline_per_min=BASELINE_PER_MIN,
        idle_polling_per_min=IDLE_POLLING_PER_MIN,
        notification_cost_pct=NOTIFICATION_COST_PCT,
        cpu_per_work_unit_pct=1.0e-6,
        links=default_link_profiles(),
    )


def with_link_powers(preset: EnergyPreset, kind: str, **powers) -> EnergyPreset:
    links = dict(preset.links)
    links[kind] = replace(links[kind], **powers)
    return replace(preset, links=links)
