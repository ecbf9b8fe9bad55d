"""Cycle-triggering policies and the server-side notification throttle.

Two policies decide when a client runs a sync cycle:

* FixedIntervalPolicy polls on a timer. The first tick fires immediately on
  connect (an initial reconciliation), then every `period` seconds, with
  the window boundary included: a 2s period over a 60s session starts 31
  cycles (t = 0, 2, ..., 60). A period of 0 means back-to-back cycles: the
  next one starts the moment the previous completes.

* PushPolicy runs a cycle on connect, on every local edit, and on every
  incoming change notification. If a trigger lands while a cycle is in
  flight it sets a one-bit `loop_once_more` flag instead; completion of the
  running cycle then starts exactly one follow-up cycle. The flag is a
  flag, not a counter: bursts coalesce.

Servers throttle change notifications to at least `min_notify_gap` seconds
apart (2s by default; shorter gaps make real push channels unreliable).
Changes landing inside the gap coalesce into a single deferred
notification, since the next cycle picks up all accumulated changes anyway.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

Seconds = Fraction

DEFAULT_NOTIFY_GAP = Fraction(2)


class SchedulerError(Exception):
    pass


@dataclass(frozen=True)
class Connected:
    time: Seconds


@dataclass(frozen=True)
class LocalEdit:
    time: Seconds


@dataclass(frozen=True)
class NotificationReceived:
    time: Seconds


@dataclass(frozen=True)
class CycleCompleted:
    time: Seconds


@dataclass(frozen=True)
class Tick:
    time: Seconds


SchedulerEvent = Connected | LocalEdit | NotificationReceived | CycleCompleted | Tick


@dataclass(frozen=True)
class Decision:
    start_cycle: bool = False
    set_loop_once_more: bool = False
    next_tick: Seconds | None = None


class _PolicyBase:
    def __init__(self):
        self.cycle_active = False
        self._last_time: Seconds | None = None

    def _check_order(self, event: SchedulerEvent) -> None:
        if self._last_time is not None and event.time < self._last_time:
            raise SchedulerError(
                f"event at t={event.time} arrived after t={self._last_time}"
            )
        self._last_time = event.time

    def _starting(self) -> Decision:
        self.cycle_active = True
        return Decision(start_cycle=True)


class FixedIntervalPolicy(_PolicyBase):
    """Poll every `period` seconds; ticks self-schedule the next tick."""

    def __init__(self, period: Seconds):
        super().__init__()
        period = Fraction(period)
        if period < 0:
            raise SchedulerError(f"interval must be >= 0, got {period}")
        self.period = period

    def on_event(self, event: SchedulerEvent) -> Decision:
        self._check_order(event)
        if isinstance(event, Connected):
            # first tick immediately, so a fresh connection reconciles at once
            return Decision(next_tick=event.time)
        if isinstance(event, Tick):
            if self.cycle_active:
                # cycle overran the interval; skip, the timer keeps running
                return Decision(next_tick=event.time + self.period) if self.period else Decision()
            decision = self._starting()
            if self.period:
                return Decision(start_cycle=True, next_tick=event.time + self.period)
            return decision
        if isinstance(event, CycleCompleted):
            self.cycle_active = False
            if self.period == 0:
                return self._starting()  # back-to-back mode
            return Decision()
        return Decision()  # LocalEdit / NotificationReceived do not trigger polling


class PushPolicy(_PolicyBase):
    """Cycle on connect, local edit, or notification; re-run once if busy."""

    def __init__(self):
        super().__init__()
        self.loop_once_more = False

    def on_event(self, event: SchedulerEvent) -> Decision:
        self._check_order(event)
        if isinstance(event, (Connected, LocalEdit, NotificationReceived)):
            if self.cycle_active:
                self.loop_once_more = True
                return Decision(set_loop_once_more=True)
            return self._starting()
        if isinstance(event, CycleCompleted):
            self.cycle_active = False
            if self.loop_once_more:
                self.loop_once_more = False
                return self._starting()
            return Decision()
        if isinstance(event, Tick):
            return Decision()
        raise SchedulerError(f"unknown event {event!r}")


def make_policy(kind: str, **params) -> FixedIntervalPolicy | PushPolicy:
    if kind == "fixed":
        return FixedIntervalPolicy(Fraction(str(params["interval_s"])))
    if kind == "push":
        return PushPolicy()
    raise SchedulerError(f"unknown policy kind {kind!r}")


@dataclass(frozen=True)
class NotifyDecision:
    send_now: bool
    defer_until: Seconds | None = None


def server_notify(server, now: Seconds, min_gap: Seconds = DEFAULT_NOTIFY_GAP) -> NotifyDecision:
    """Throttled notification decision; call whenever the server item changes.

    `server` only needs `last_notify_time` / `pending_notify` attributes
    (ServerEndpoint carries both). The gap is measured from the last actual
    send; deferred changes coalesce into one pending notification.
    """
    last = server.last_notify_time
    if last is None or now - last >= min_gap:
        return NotifyDecision(send_now=True)
    return NotifyDecision(send_now=False, defer_until=last + min_gap)


def mark_notified(server, now: Seconds) -> None:
    """Record an actual send; resets the throttle clock."""
    server.last_notify_time = now
    server.pending_notify = False
