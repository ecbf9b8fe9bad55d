"""Deterministic discrete-event simulator wiring endpoints, schedulers,
links, the push channel and energy ledgers into runnable scenarios.

Events pop in (time, priority, seq) order; seq is a monotone scheduling
counter, so identical (scenario, seed) pairs replay identical event logs
byte for byte. Times are exact rationals.

Timing model: a data packet takes wire_bytes * 8 / downlink_bps plus a
fixed 50 ms round-trip component; server processing is instantaneous. The
radio energy timeline is driven separately: each transfer is booked as
wire_bytes plus the link's per-transfer overhead bytes (signalling
airtime), so the energy-relevant active period is longer than the
serialization delay of the payload alone.

The push channel delivers reliably when sends stay at least
`min_reliable_gap` apart. Sends inside the gap go unreliable: dropped with
probability `drop_prob`, and a delivered one may swap order with the still
in-flight previous notification (all seeded). Server code that respects
the notification throttle therefore never loses or reorders anything.
"""

from __future__ import annotations

import csv
import heapq
import io
import json
import random
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

from .content import canonical_bytes
from .diff_patch import diff
from .energy_model import EnergyPreset, RadioLedger, cpu_energy, load_preset
from .scheduler import (
    Connected,
    CycleCompleted,
    LocalEdit,
    NotificationReceived,
    Tick,
    make_policy,
    mark_notified,
    server_notify,
)
from .sync_core import ClientEndpoint, EditPacket, ServerEndpoint
from .workload import (
    SERVER_AUTHOR,
    EditTrace,
    WorkloadParams,
    annotation_feed_trace,
    generate_trace,
    micro_trace,
    resolve_intent,
)

Seconds = Fraction

DEFAULT_RTT_S = Fraction(1, 20)

_PRIO_NORMAL = 0
_PRIO_SESSION_END = 1  # session end runs after other events at the same time


class ScenarioError(ValueError):
    """Scenario failed validation; message lists every problem found."""


@dataclass
class PushChannelConfig:
    delivery_latency_s: Fraction = Fraction(1, 2)
    min_reliable_gap_s: Fraction = Fraction(2)
    drop_prob: float = 0.5
    reorder: bool = True

    def __post_init__(self):
        self.delivery_latency_s = Fraction(str(self.delivery_latency_s))
        self.min_reliable_gap_s = Fraction(str(self.min_reliable_gap_s))
        if not 0.0 <= self.drop_prob <= 1.0:
            raise ScenarioError(f"drop_prob {self.drop_prob} outside [0, 1]")


class PushChannel:
    """Abstract notification channel; reliability depends on send spacing."""

    def __init__(self, config: PushChannelConfig, seed):
        self.config = config
        self.rng = random.Random(("push-channel", seed))
        self.last_send: Fraction | None = None
        self.sent = 0
        self.delivered = 0
        self.dropped = 0
        self.reordered = 0
        self._schedule: dict[int, Fraction] = {}  # notif id -> live delivery time
        self._consumed: set[int] = set()
        self._next_id = 0

    def send(self, now: Seconds) -> list[tuple[int, Fraction]]:
        """Commit one notification send; returns (id, deliver_at) schedules.

        The list may contain a rescheduled earlier notification when an
        unreliable send swaps order with the in-flight neighbour; stale
        heap entries for it are skipped via `claim`.
        """
        now = Fraction(now)
        reliable = self.last_send is None or now - self.last_send >= self.config.min_reliable_gap_s
        self.last_send = now
        self.sent += 1
        nid = self._next_id
        self._next_id += 1
        deliver_at = now + self.config.delivery_latency_s
        if reliable:
            self._schedule[nid] = deliver_at
            return [(nid, deliver_at)]
        if self.rng.random() < self.config.drop_prob:
            self.dropped += 1
            return []
        updates = [(nid, deliver_at)]
        in_flight = [
            (t, other) for other, t in self._schedule.items()
            if other not in self._consumed and t > now
        ]
        if in_flight and self.config.reorder and self.rng.random() < 0.5:
            prev_time, prev_id = max(in_flight)
            if prev_time != deliver_at:
                self.reordered += 1
                self._schedule[prev_id] = deliver_at
                deliver_at = prev_time
                updates = [(nid, deliver_at), (prev_id, self._schedule[prev_id])]
        self._schedule[nid] = deliver_at
        return updates

    def is_live(self, nid: int, time: Fraction) -> bool:
        """True while (id, time) is the current schedule entry for id."""
        return self._schedule.get(nid) == time

    def mark_delivered(self, nid: int) -> None:
        if nid not in self._consumed:
            self._consumed.add(nid)
            self.delivered += 1

    def stats(self) -> dict:
        return {
            "sent": self.sent,
            "delivered": self.delivered,
            "dropped": self.dropped,
            "reordered": self.reordered,
        }


@dataclass
class Scenario:
    """Declarative experiment description; `simulate` executes it."""

    name: str
    link: str
    policy: dict
    workload: dict | EditTrace
    duration_s: Fraction
    n_clients: int = 1
    preset: str | EnergyPreset = "iphone5s-mendeley-2014"
    seed: int = 0
    rtt_s: Fraction = DEFAULT_RTT_S
    push_channel: PushChannelConfig = field(default_factory=PushChannelConfig)
    base_dir: Path | None = None  # resolves relative workload file paths

    def __post_init__(self):
        self.duration_s = Fraction(str(self.duration_s))
        self.rtt_s = Fraction(str(self.rtt_s))

    def validate(self) -> list[str]:
        problems = []
        if self.duration_s <= 0:
            problems.append(f"duration_s must be positive, got {self.duration_s}")
        if self.n_clients < 1:
            problems.append(f"n_clients must be >= 1, got {self.n_clients}")
        if self.link not in ("3g", "gsm", "wlan"):
            problems.append(f"unknown link kind {self.link!r}")
        if self.policy.get("type") not in ("fixed", "push"):
            problems.append(f"policy type must be fixed or push, got {self.policy.get('type')!r}")
        if self.policy.get("type") == "fixed" and Fraction(str(self.policy.get("interval_s", -1))) < 0:
            problems.append("fixed policy needs interval_s >= 0")
        if isinstance(self.workload, dict):
            kind = self.workload.get("type")
            if kind not in ("none", "file", "micro", "feed", "generated"):
                problems.append(f"unknown workload type {kind!r}")
            elif kind == "file":
                path = self._workload_path()
                if not path.exists():
                    problems.append(f"workload trace file not found: {path}")
        if isinstance(self.preset, str):
            try:
                load_preset(self.preset)
            except Exception as exc:
                problems.append(f"preset {self.preset!r} not loadable: {exc}")
        return problems

    def _workload_path(self) -> Path:
        path = Path(self.workload["path"])
        if not path.is_absolute() and self.base_dir is not None:
            path = self.base_dir / path
        return path

    def load_preset(self) -> EnergyPreset:
        return self.preset if isinstance(self.preset, EnergyPreset) else load_preset(self.preset)

    def build_trace(self) -> EditTrace:
        if isinstance(self.workload, EditTrace):
            return self.workload
        kind = self.workload["type"]
        if kind == "none":
            from .workload import annotation_item

            item = annotation_item(self.workload.get("n_base_entries", 6), self.seed)
            return EditTrace(initial=item, edits=[], sessions={
                f"c{i}": (Fraction(0), self.duration_s) for i in range(self.n_clients)
            })
        if kind == "file":
            return EditTrace.load(self._workload_path())
        if kind == "micro":
            return micro_trace(
                self.workload["kind"],
                self.workload["period_s"],
                self.duration_s,
                item_bytes=self.workload.get("item_bytes", 124),
                seed=self.seed,
            )
        if kind == "feed":
            return annotation_feed_trace(
                self.workload["period_s"],
                self.duration_s,
                n_base_entries=self.workload.get("n_base_entries", 10),
                seed=self.seed,
            )
        if kind == "generated":
            params = WorkloadParams(**self.workload.get("params", {}))
            session = self.workload.get("pin_session_to_duration", True)
            return generate_trace(
                params, self.n_clients, self.seed,
                session_s=self.duration_s if session else None,
            )
        raise ScenarioError(f"unknown workload type {kind!r}")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "link": self.link,
            "policy": self.policy,
            "workload": self.workload if isinstance(self.workload, dict) else {"type": "inline"},
            "duration_s": str(self.duration_s),
            "n_clients": self.n_clients,
            "preset": self.preset if isinstance(self.preset, str) else self.preset.name,
            "seed": self.seed,
            "rtt_s": str(self.rtt_s),
            "push_channel": {
                "delivery_latency_s": str(self.push_channel.delivery_latency_s),
                "min_reliable_gap_s": str(self.push_channel.min_reliable_gap_s),
                "drop_prob": self.push_channel.drop_prob,
                "reorder": self.push_channel.reorder,
            },
        }

    @classmethod
    def from_dict(cls, data: dict, base_dir: Path | None = None) -> "Scenario":
        known = {
            "name", "link", "policy", "workload", "duration_s", "n_clients",
            "preset", "seed", "rtt_s", "push_channel",
        }
        unknown = set(data) - known
        if unknown:
            raise ScenarioError(f"unknown scenario keys: {sorted(unknown)}")
        channel = data.get("push_channel", {})
        return cls(
            name=data["name"],
            link=data["link"],
            policy=data["policy"],
            workload=data["workload"],
            duration_s=Fraction(str(data["duration_s"])),
            n_clients=data.get("n_clients", 1),
            preset=data.get("preset", "iphone5s-mendeley-2014"),
            seed=data.get("seed", 0),
            rtt_s=Fraction(str(data.get("rtt_s", DEFAULT_RTT_S))),
            push_channel=PushChannelConfig(
                delivery_latency_s=channel.get("delivery_latency_s", Fraction(1, 2)),
                min_reliable_gap_s=channel.get("min_reliable_gap_s", Fraction(2)),
                drop_prob=channel.get("drop_prob", 0.5),
                reorder=channel.get("reorder", True),
            ),
            base_dir=base_dir,
        )


@dataclass
class DeviceStats:
    cycles_started: int = 0
    cycles_completed: int = 0
    empty_cycles: int = 0
    skipped_ticks: int = 0
    notifications_received: int = 0
    item_dropped_ops: int = 0
    shadow_dropped_ops: int = 0
    work_units: int = 0
    bytes_sent: int = 0
    bytes_received: int = 0


@dataclass
class SimResult:
    scenario: dict
    converged: bool
    devices: dict
    server: dict
    channel: dict
    event_log: list  # rows: (time, device, event, bytes, radio_state, energy_cum)

    def device(self, device_id: str = "c0") -> dict:
        return self.devices[device_id]

    def to_json_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "converged": self.converged,
            "devices": self.devices,
            "server": self.server,
            "channel": self.channel,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, indent=2) + "\n"

    def events_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["time", "device", "event", "bytes", "radio_state", "energy_cum"])
        for row in self.event_log:
            writer.writerow(row)
        return buf.getvalue()


def simulate(scenario: Scenario, seed: int | None = None) -> SimResult:
    """Run `scenario` to completion; `seed` overrides the scenario's seed."""
    problems = scenario.validate()
    if problems:
        raise ScenarioError("; ".join(problems))
    if seed is not None and seed != scenario.seed:
        scenario = Scenario(**{**scenario.__dict__, "seed": seed})
    return _Simulation(scenario).run()


class _Simulation:
    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self.preset = scenario.load_preset()
        self.link = self.preset.link(scenario.link)
        self.push_mode = scenario.policy["type"] == "push"
        self.notify_gap = Fraction(str(scenario.policy.get("min_notify_gap_s", 2))) if self.push_mode else None
        self.trace = scenario.build_trace()
        self.duration = scenario.duration_s

        self.clients = [f"c{i}" for i in range(scenario.n_clients)]
        initial = self.trace.initial
        self.server = ServerEndpoint(initial)
        self.endpoints: dict[str, ClientEndpoint] = {}
        self.policies = {}
        self.ledgers: dict[str, RadioLedger] = {}
        self.stats: dict[str, DeviceStats] = {}
        self.sessions: dict[str, tuple[Fraction, Fraction]] = {}
        for cid in self.clients:
            self.endpoints[cid] = ClientEndpoint(cid, initial)
            self.server.register(cid, initial)
            self.policies[cid] = make_policy(
                scenario.policy["type"],
                interval_s=scenario.policy.get("interval_s", 0),
            )
            self.ledgers[cid] = RadioLedger(self.preset, self.link, push_polling=self.push_mode)
            self.stats[cid] = DeviceStats()
            self.sessions[cid] = self.trace.sessions.get(cid, (Fraction(0), self.duration))

        self.channel = PushChannel(scenario.push_channel, scenario.seed) if self.push_mode else None
        self.pending_originators: set[str] = set()
        self.notify_recipients: dict[int, list[str]] = {}
        self.delivered_keys: set[tuple[int, str]] = set()

        self.queue: list = []
        self.seq = 0
        self.now = Fraction(0)
        self.log: list = []
        self.finished = False
        self.out_scripts_empty: dict[str, bool] = {}

    # -- event plumbing ------------------------------------------------------

    def _schedule(self, time: Fraction, kind: str, payload=(), priority: int = _PRIO_NORMAL):
        heapq.heappush(self.queue, (time, priority, self.seq, kind, payload))
        self.seq += 1

    def _log(self, time: Fraction, device: str, event: str, byte_count: int = 0):
        self.log.append([time, device, event, byte_count])

    def run(self) -> SimResult:
        for cid in self.clients:
            start = max(self.sessions[cid][0], Fraction(0))
            self._schedule(start, "connect", (cid,))
        for index, edit in enumerate(self.trace.edits):
            if edit.time <= self.duration:
                self._schedule(edit.time, "edit", (index,))
        self._schedule(self.duration, "session_end", (), priority=_PRIO_SESSION_END)

        while self.queue and not self.finished:
            time, _, _, kind, payload = heapq.heappop(self.queue)
            self.now = time
            handler = getattr(self, f"_on_{kind}")
            handler(time, *payload)
        return self._result()

    # -- handlers -------------------------------------------------------------

    def _on_connect(self, t: Fraction, cid: str):
        self._log(t, cid, "connect")
        self._decide(cid, t, self.policies[cid].on_event(Connected(t)))

    def _on_tick(self, t: Fraction, cid: str):
        if t > self.sessions[cid][1]:
            return  # document closed; polling stops
        policy = self.policies[cid]
        was_active = policy.cycle_active
        decision = policy.on_event(Tick(t))
        if was_active and not decision.start_cycle:
            self.stats[cid].skipped_ticks += 1
        self._decide(cid, t, decision)

    def _on_edit(self, t: Fraction, index: int):
        edit = self.trace.edits[index]
        if edit.client == SERVER_AUTHOR:
            script = edit.script
            if script is None:
                target = resolve_intent(edit.intent, self.server.item)
                script = diff(self.server.item, target)
            if script.is_empty:
                return
            self.server.apply_local_edit(script)
            self._log(t, "server", "edit")
            self._server_changed(t, originator=SERVER_AUTHOR)
            return
        cid = edit.client
        endpoint = self.endpoints[cid]
        script = edit.script
        if script is None:
            target = resolve_intent(edit.intent, endpoint.item)
            script = diff(endpoint.item, target)
        if script.is_empty:
            return
        endpoint.apply_local_edit(script)
        self._log(t, cid, "edit")
        self._decide(cid, t, self.policies[cid].on_event(LocalEdit(t)))

    def _decide(self, cid: str, t: Fraction, decision):
        self.endpoints[cid].loop_once_more = getattr(self.policies[cid], "loop_once_more", False)
        if decision.next_tick is not None:
            self._schedule(decision.next_tick, "tick", (cid,))
        if decision.start_cycle:
            self._start_cycle(cid, t)

    def _packet_latency(self, packet: EditPacket) -> Fraction:
        return Fraction(packet.wire_bytes * 8, self.link.downlink_bps) + self.scenario.rtt_s

    def _start_cycle(self, cid: str, t: Fraction):
        endpoint = self.endpoints[cid]
        stats = self.stats[cid]
        packet = endpoint.begin_cycle()
        stats.cycles_started += 1
        stats.bytes_sent += packet.wire_bytes
        stats.work_units += packet.script.work_units
        if packet.script.work_units:
            self.ledgers[cid].add_charge(t, "cpu", cpu_energy(self.preset, packet.script.work_units))
        self.ledgers[cid].record_transfer(packet.wire_bytes + self.link.per_transfer_overhead_bytes, t)
        self.out_scripts_empty[cid] = packet.script.is_empty
        self._log(t, cid, "cycle_send", packet.wire_bytes)
        self._schedule(t + self._packet_latency(packet), "packet_to_server", (cid, packet))

    def _on_packet_to_server(self, t: Fraction, cid: str, packet: EditPacket):
        before = canonical_bytes(self.server.item)
        reply = self.server.process(packet)
        self._log(t, "server", "process", packet.wire_bytes)
        if self.push_mode and canonical_bytes(self.server.item) != before:
            self._server_changed(t, originator=cid)
        self._schedule(t + self._packet_latency(reply), "packet_to_client", (cid, reply))

    def _on_packet_to_client(self, t: Fraction, cid: str, reply: EditPacket):
        endpoint = self.endpoints[cid]
        stats = self.stats[cid]
        self.ledgers[cid].record_transfer(reply.wire_bytes + self.link.per_transfer_overhead_bytes, t)
        stats.bytes_received += reply.wire_bytes
        outcome = endpoint.apply_reply(reply)
        stats.cycles_completed += 1
        stats.item_dropped_ops += outcome.dropped
        if self.out_scripts_empty.get(cid) and reply.script.is_empty:
            stats.empty_cycles += 1
        self._log(t, cid, "cycle_done", reply.wire_bytes)
        self._decide(cid, t, self.policies[cid].on_event(CycleCompleted(t)))

    # -- notifications ---------------------------------------------------------

    def _server_changed(self, t: Fraction, originator: str):
        self.pending_originators.add(originator)
        decision = server_notify(self.server, t, self.notify_gap)
        if decision.send_now:
            self._send_notification(t)
        elif not self.server.pending_notify:
            self.server.pending_notify = True
            self._schedule(decision.defer_until, "notify_flush", ())

    def _on_notify_flush(self, t: Fraction):
        if self.server.pending_notify:
            self._send_notification(t)

    def _send_notification(self, t: Fraction):
        originators = set(self.pending_originators)
        self.pending_originators.clear()
        mark_notified(self.server, t)
        sole = next(iter(originators)) if len(originators) == 1 else None
        recipients = [cid for cid in self.clients if cid != sole]
        self._log(t, "server", "notify")
        if not recipients:
            return
        for nid, deliver_at in self.channel.send(t):
            self.notify_recipients.setdefault(nid, recipients)
            for cid in self.notify_recipients[nid]:
                self._schedule(deliver_at, "deliver_notification", (nid, cid, deliver_at))

    def _on_deliver_notification(self, t: Fraction, nid: int, cid: str, scheduled_at: Fraction):
        key = (nid, cid)
        if not self.channel.is_live(nid, scheduled_at) or key in self.delivered_keys:
            return  # stale entry from a reorder reschedule
        self.delivered_keys.add(key)
        self.channel.mark_delivered(nid)
        if t > self.sessions[cid][1]:
            return  # document closed; nobody is listening
        stats = self.stats[cid]
        stats.notifications_received += 1
        self.ledgers[cid].add_charge(t, "polling_notifications", self.preset.notification_cost_pct)
        self._log(t, cid, "notification")
        self._decide(cid, t, self.policies[cid].on_event(NotificationReceived(t)))

    def _on_session_end(self, t: Fraction):
        self.finished = True
        self._log(t, "sim", "session_end")

    # -- results ---------------------------------------------------------------

    def _result(self) -> SimResult:
        minutes = float(self.duration) / 60.0
        item_bytes = canonical_bytes(self.server.item)
        converged = all(canonical_bytes(ep.item) == item_bytes for ep in self.endpoints.values())

        devices = {}
        for cid in self.clients:
            components = self.ledgers[cid].components(0, self.duration)
            for key in ("cpu", "polling_notifications"):
                components.setdefault(key, 0.0)
            total = sum(components.values())
            attributable = total - components["baseline"] - components["polling_idle"]
            stats = self.stats[cid]
            devices[cid] = {
                "energy_total_pct": total,
                "energy_rate_pct_per_min": total / minutes,
                "attributable_pct": attributable,
                "attributable_rate_pct_per_min": attributable / minutes,
                "components": {k: components[k] for k in sorted(components)},
                "cycles_started": stats.cycles_started,
                "cycles_completed": stats.cycles_completed,
                "empty_cycles": stats.empty_cycles,
                "skipped_ticks": stats.skipped_ticks,
                "notifications_received": stats.notifications_received,
                "item_dropped_ops": stats.item_dropped_ops,
                "shadow_dropped_ops": stats.shadow_dropped_ops,
                "work_units": stats.work_units,
                "bytes_sent": stats.bytes_sent,
                "bytes_received": stats.bytes_received,
            }

        event_log = self._finished_log()
        return SimResult(
            scenario=self.scenario.to_dict(),
            converged=converged,
            devices=devices,
            server={"item_dropped_ops": self.server.item_dropped_ops},
            channel=self.channel.stats() if self.channel else {
                "sent": 0, "delivered": 0, "dropped": 0, "reordered": 0,
            },
            event_log=event_log,
        )

    def _finished_log(self) -> list:
        per_device_times: dict[str, list[Fraction]] = {}
        for row in self.log:
            per_device_times.setdefault(row[1], []).append(row[0])
        cumulative: dict[str, list[float]] = {}
        for cid, times in per_device_times.items():
            if cid in self.ledgers:
                cumulative[cid] = self.ledgers[cid].cumulative_energies(times)
        cursor = {cid: 0 for cid in per_device_times}
        out = []
        for time, device, event, byte_count in self.log:
            if device in self.ledgers:
                energy = cumulative[device][cursor[device]]
                state = self.ledgers[device].state_at(time)
            else:
                energy = 0.0
                state = ""
            cursor[device] += 1
            out.append([str(time), device, event, byte_count, state, f"{energy:.9f}"])
        return out


# ---------------------------------------------------------------------------
# bundled scenario configs

def scenario_from_file(path: str | Path) -> Scenario:
    path = Path(path)
    data = json.loads(path.read_text())
    return Scenario.from_dict(data, base_dir=path.parent)


def bundled_scenario(name: str) -> Scenario:
    from importlib import resources

    ref = resources.files("diffsync_energy.data.scenarios") / f"{name}.json"
    if not ref.is_file():
        raise ScenarioError(f"no bundled scenario named {name!r}")
    data = json.loads(ref.read_text())
    with resources.as_file(resources.files("diffsync_energy.data")) as data_dir:
        return Scenario.from_dict(data, base_dir=Path(data_dir) / "scenarios")


def bundled_scenario_names() -> list[str]:
    from importlib import resources

    names = []
    for entry in resources.files("diffsync_energy.data.scenarios").iterdir():
        if entry.name.endswith(".json"):
            names.append(entry.name[: -len(".json")])
    return sorted(names)
