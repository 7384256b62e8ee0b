"""Concept-drift detection and adaptation control.

A sliding window of recent anomaly probabilities yields an anomaly rate
(AR) per record. The state machine compares the current window's AR with
the window one full length earlier: a rise of at least ``a_th`` raises an
alert and starts collecting fresh records; escalation confirms a drift and
requests retraining; the drift episode ends (with a second retrain) once
the AR rises again relative to the first post-drift window or the adaptive
window fills up.

Two trigger semantics exist: ``difference`` (current - reference >= th,
drift confirmed at a_th + d_th) and ``ratio`` (current >= th * reference,
thresholds applied verbatim).
"""

from collections import deque
from dataclasses import dataclass, field
from enum import Enum

from .errors import ConfigError, DataError
from .validation import check_choice, check_positive_int


class Condition(Enum):
    NORMAL = "normal"
    ALERT = "alert"
    DRIFT = "drift"


@dataclass
class DriftConfig:
    a_th: float = 0.092
    d_th: float = 0.03
    sliding_window: int = 270  # L_s
    adaptive_window_max: int = 2500  # L_a
    semantics: str = "difference"

    def validate(self):
        if self.a_th <= 0 or self.d_th <= 0:
            raise ConfigError("a_th and d_th must be > 0")
        check_choice(self.semantics, {"difference", "ratio"}, "semantics")
        check_positive_int(self.sliding_window, "sliding_window")
        check_positive_int(self.adaptive_window_max, "adaptive_window_max")
        if self.adaptive_window_max <= self.sliding_window:
            raise ConfigError("adaptive_window_max must exceed sliding_window")
        return self


class SlidingArWindow:
    """Last L_s + 1 anomaly probabilities with an O(1) anomaly-rate read."""

    def __init__(self, size, threshold):
        self.capacity = size + 1
        self.threshold = threshold
        self._aps = deque(maxlen=self.capacity)
        self._hits = 0

    def push(self, ap):
        if len(self._aps) == self.capacity and self._aps[0] > self.threshold:
            self._hits -= 1
        self._aps.append(ap)
        if ap > self.threshold:
            self._hits += 1

    @property
    def full(self):
        return len(self._aps) == self.capacity

    def anomaly_rate(self):
        if not self._aps:
            raise DataError("anomaly-rate window is empty")
        return self._hits / len(self._aps)

    def __len__(self):
        return len(self._aps)


def anomaly_rate(window):
    """Fraction of windowed probabilities above the threshold."""
    return window.anomaly_rate()


def trigger(current_ar, reference_ar, threshold, semantics):
    """Window-to-window comparison behind every state transition."""
    if semantics == "difference":
        return current_ar - reference_ar >= threshold
    if semantics == "ratio":
        return current_ar >= threshold * reference_ar
    raise ConfigError(f"unknown trigger semantics {semantics!r}")


@dataclass
class DriftEvent:
    index: int
    transition: str  # alert | false_alarm | drift | drift_end | retrain_deferred
    ar_current: float
    ar_reference: float
    adapt_len: int
    retrain: bool = False  # the engine should retrain on the adaptive window

    def clear_window(self):
        return self.transition in ("false_alarm", "drift_end")


class OawStateMachine:
    """Dual-window state machine fed one windowed AR value per step.

    The machine never looks at records itself; it reports transitions and
    retrain requests, counting how many records the adaptive window holds.
    Steps before the lagged reference window is available are inert.
    """

    def __init__(self, config):
        config.validate()
        self.config = config
        self.condition = Condition.NORMAL
        self.adapt_len = 0
        self._ars = deque(maxlen=config.sliding_window + 1)
        self._step = -1
        self._drift_step = None  # machine step at which drift was entered
        self.drift_anchor = None  # record index of drift entry (j)
        self._anchor_ar = None  # AR of the window ending at j + L_s

    def _drift_threshold(self):
        if self.config.semantics == "difference":
            # escalation: strictly sterner than the alert trigger
            return self.config.a_th + self.config.d_th
        return self.config.d_th

    def step(self, index, ar):
        """Advance one record; returns a DriftEvent or None.

        ``index`` is the stream position used in events; ``ar`` is the AR of
        the sliding window ending at that record.
        """
        cfg = self.config
        self._step += 1
        self._ars.append(ar)
        if self._drift_step is not None and self._anchor_ar is None:
            if self._step == self._drift_step + cfg.sliding_window:
                self._anchor_ar = ar
        if len(self._ars) <= cfg.sliding_window:
            return None
        ar_ref = self._ars[0]

        if self.condition is Condition.NORMAL:
            if trigger(ar, ar_ref, cfg.a_th, cfg.semantics):
                self.adapt_len = 1
                self.condition = Condition.ALERT
                return DriftEvent(index, "alert", ar, ar_ref, self.adapt_len)
            return None

        if self.condition is Condition.ALERT:
            if trigger(ar, ar_ref, self._drift_threshold(), cfg.semantics):
                self.condition = Condition.DRIFT
                self.drift_anchor = index
                self._drift_step = self._step
                self._anchor_ar = None
                return DriftEvent(index, "drift", ar, ar_ref, self.adapt_len,
                                  retrain=True)
            if (not trigger(ar, ar_ref, cfg.a_th, cfg.semantics)
                    or self.adapt_len == cfg.adaptive_window_max):
                event = DriftEvent(index, "false_alarm", ar, ar_ref, self.adapt_len)
                self.adapt_len = 0
                self.condition = Condition.NORMAL
                return event
            self.adapt_len += 1
            return None

        # Condition.DRIFT
        exit_trigger = (self._anchor_ar is not None
                        and trigger(ar, self._anchor_ar, cfg.a_th, cfg.semantics))
        if exit_trigger or self.adapt_len == cfg.adaptive_window_max:
            ref = self._anchor_ar if self._anchor_ar is not None else float("nan")
            event = DriftEvent(index, "drift_end", ar, ref, self.adapt_len,
                               retrain=True)
            self.adapt_len = 0
            self.condition = Condition.NORMAL
            self.drift_anchor = None
            self._drift_step = None
            self._anchor_ar = None
            return event
        self.adapt_len += 1
        return None


@dataclass
class DriftState:
    """Snapshot of the monitor for inspection and event logs."""

    condition: Condition
    adapt_len: int
    drift_anchor: int | None


class DriftMonitor:
    """Feeds verdict probabilities into the state machine and owns the
    adaptive window of collected records.

    Live storage is bounded: the adaptive window holds at most L_a records
    and the AP window holds L_s + 1 floats.
    """

    def __init__(self, config, threshold):
        config.validate()
        self.config = config
        self.window = SlidingArWindow(config.sliding_window, threshold)
        self.machine = OawStateMachine(config)
        self.adapt_win = deque()
        self.released_window = None  # snapshot handed out at retrain events

    @property
    def state(self):
        return DriftState(condition=self.machine.condition,
                          adapt_len=self.machine.adapt_len,
                          drift_anchor=self.machine.drift_anchor)

    @property
    def condition(self):
        return self.machine.condition

    def live_records(self):
        return len(self.adapt_win)

    def step(self, index, ap, record=None):
        """Advance on one verdict; returns a DriftEvent or None.

        ``record`` is whatever the engine wants collected for retraining
        (kept only while the machine is in Alert or Drift).
        """
        self.window.push(ap)
        if not self.window.full:
            return None
        before = self.machine.condition
        event = self.machine.step(index, self.window.anomaly_rate())
        after = self.machine.condition
        if event is not None and event.retrain:
            self.released_window = list(self.adapt_win)
        collecting_started = before is Condition.NORMAL and after is Condition.ALERT
        if event is not None and event.clear_window():
            self.adapt_win.clear()
        elif collecting_started:
            self.adapt_win.clear()
            if record is not None:
                self.adapt_win.append(record)
        elif after in (Condition.ALERT, Condition.DRIFT) and before is after:
            # the machine counts the same appends it performs internally
            if len(self.adapt_win) < self.machine.adapt_len and record is not None:
                self.adapt_win.append(record)
        return event
