"""Synthetic labeled streams with injected anomalies and concept drifts.

Each feature mixes a sine, a linear ramp, a constant level and Gaussian
noise. Drifts mutate the generating parameters: sudden steps the level at
an index, gradual interpolates it over a span, recurring reverts to an
earlier parameter set. Anomalies add offsets (and optional scaling) to a
feature subset over an index range and are labeled 1.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

DRIFT_KINDS = ("sudden", "gradual", "recurring")


@dataclass
class FeatureSpec:
    sine_period: float = 24.0
    sine_amplitude: float = 1.0
    ramp_slope: float = 0.0
    level: float = 0.0
    noise_sigma: float = 0.1

    def std(self):
        """Standard deviation of the generated signal (ramp excluded)."""
        return float(np.sqrt(self.sine_amplitude ** 2 / 2.0 + self.noise_sigma ** 2))


@dataclass
class AnomalyInjection:
    start: int
    end: int  # exclusive
    features: tuple  # feature indices
    offset: float = 0.0
    scale: float = 1.0


@dataclass
class DriftInjection:
    kind: str  # sudden | gradual | recurring
    start: int
    span: int = 0  # gradual only
    magnitude: float = 0.0  # additive level shift; ignored for recurring
    return_to: int = 0  # recurring: index of the parameter segment to restore

    def window(self):
        return (self.start, self.start + max(self.span, 1))


@dataclass
class StreamSpec:
    length: int
    dims: int
    seed: int = 0
    features: list = field(default_factory=list)  # FeatureSpec per dim
    anomalies: list = field(default_factory=list)
    drifts: list = field(default_factory=list)

    def resolved_features(self):
        if self.features:
            if len(self.features) != self.dims:
                raise ConfigError("features list must match dims")
            return self.features
        return [
            FeatureSpec(sine_period=24.0 + 4.0 * d, sine_amplitude=1.0,
                        level=0.0, noise_sigma=0.25)
            for d in range(self.dims)
        ]

    def validate(self):
        if self.length < 1 or self.dims < 1:
            raise ConfigError("length and dims must be positive")
        for a in self.anomalies:
            if not 0 <= a.start < a.end <= self.length:
                raise ConfigError(f"anomaly range [{a.start}, {a.end}) outside stream")
            if any(not 0 <= f < self.dims for f in a.features):
                raise ConfigError("anomaly feature index out of range")
        windows = []
        for d in self.drifts:
            if d.kind not in DRIFT_KINDS:
                raise ConfigError(f"unknown drift kind {d.kind!r}")
            if not 0 <= d.start < self.length:
                raise ConfigError(f"drift start {d.start} outside stream")
            if d.kind == "gradual" and d.span <= 0:
                raise ConfigError("gradual drift needs a positive span")
            windows.append(d.window())
        windows.sort()
        for (s1, e1), (s2, e2) in zip(windows, windows[1:]):
            if s2 < e1:
                raise ConfigError(
                    f"drift spans overlap: [{s1}, {e1}) and [{s2}, {e2})"
                )
        return self


@dataclass
class SynthStream:
    values: np.ndarray  # (M, D)
    labels: np.ndarray  # (M,) 0/1
    drift_truth: list  # echo of the injected drifts
    level_timeline: np.ndarray  # (M, D) generating level per slot


def synth_stream(spec):
    """Generate the labeled stream plus drift ground truth, seed-determined."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    feats = spec.resolved_features()
    M, D = spec.length, spec.dims

    # level timeline: parameter segments evolve through the drift list
    base_levels = np.array([f.level for f in feats], dtype=np.float64)
    segments = [base_levels.copy()]
    levels = np.empty((M, D))
    current = base_levels.copy()
    events = sorted(spec.drifts, key=lambda d: d.start)
    cursor = 0
    for d in events:
        levels[cursor : d.start] = current
        cursor = d.start
        if d.kind == "sudden":
            current = current + d.magnitude
            segments.append(current.copy())
        elif d.kind == "gradual":
            target = current + d.magnitude
            span = min(d.span, M - d.start)
            ramp = np.linspace(0.0, 1.0, span, endpoint=False)[:, None]
            levels[d.start : d.start + span] = current + ramp * (target - current)
            cursor = d.start + span
            current = target
            segments.append(current.copy())
        else:  # recurring
            if not 0 <= d.return_to < len(segments):
                raise ConfigError(f"recurring drift return_to={d.return_to} unknown")
            current = segments[d.return_to].copy()
            segments.append(current.copy())
    levels[cursor:] = current

    t = np.arange(M, dtype=np.float64)[:, None]
    periods = np.array([f.sine_period for f in feats])
    amps = np.array([f.sine_amplitude for f in feats])
    slopes = np.array([f.ramp_slope for f in feats])
    sigmas = np.array([f.noise_sigma for f in feats])
    values = (
        levels
        + amps * np.sin(2.0 * np.pi * t / periods)
        + slopes * t
        + rng.normal(0.0, 1.0, size=(M, D)) * sigmas
    )

    labels = np.zeros(M, dtype=np.int64)
    for a in spec.anomalies:
        cols = list(a.features)
        values[a.start : a.end, cols] = (
            values[a.start : a.end, cols] * a.scale + a.offset
        )
        labels[a.start : a.end] = 1

    return SynthStream(values=values, labels=labels, drift_truth=list(events),
                       level_timeline=levels)


def scattered_anomalies(length, rate, features, offset, seed, exclude=()):
    """Single-record anomaly injections at a given rate, for harness runs."""
    rng = np.random.default_rng(seed)
    count = int(round(length * rate))
    banned = set()
    for s, e in exclude:
        banned.update(range(s, e))
    candidates = np.array([i for i in range(length) if i not in banned])
    picks = rng.choice(candidates, size=min(count, len(candidates)), replace=False)
    return [
        AnomalyInjection(start=int(i), end=int(i) + 1, features=tuple(features),
                         offset=offset)
        for i in sorted(picks)
    ]
