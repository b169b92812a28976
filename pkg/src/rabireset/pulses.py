"""Drive envelopes and the reset pulse sequence."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

CHANNELS = ("sideband_m", "sideband_r", "rabi")
DEFAULT_RAMP = 0.8  # us

Envelope = Callable[[float], float]


def ramp_envelope(kind: str, duration: float, direction: str = "up") -> Envelope:
    """Monotone ramp over ``[0, duration]`` (local time), clamped outside.

    ``kind="cosine"`` is ``(1 - cos(pi s / T)) / 2``, flat at both ends;
    ``kind="linear"`` is ``s / T``.
    """
    if duration <= 0:
        raise ValueError("ramp duration must be > 0")
    if direction not in ("up", "down"):
        raise ValueError(f"direction must be 'up' or 'down', got {direction!r}")
    if kind == "cosine":
        base = lambda s: 0.5 * (1.0 - math.cos(math.pi * s / duration))  # noqa: E731
    elif kind == "linear":
        base = lambda s: s / duration  # noqa: E731
    else:
        raise ValueError(f"unknown ramp kind {kind!r}")

    def up(s: float) -> float:
        return base(min(max(s, 0.0), duration))

    if direction == "up":
        return up
    return lambda s: 1.0 - up(s)


@dataclass(frozen=True)
class Segment:
    """One step of a sequence.

    ``channels`` maps a channel name to ``"off"``, ``"on"``, ``"up"`` or
    ``"down"``; unnamed channels are off.  A segment with ``gate`` set is an
    instantaneous qubit gate of zero duration.
    """

    name: str
    duration: float
    channels: dict = field(default_factory=dict)
    gate: str | None = None

    def __post_init__(self):
        if self.gate is None and not self.duration > 0:
            raise ValueError(f"segment {self.name!r} needs a positive duration")
        if self.gate is not None and self.duration != 0:
            raise ValueError("gates are instantaneous")
        for ch, state in self.channels.items():
            if ch not in CHANNELS:
                raise ValueError(f"unknown channel {ch!r}")
            if state not in ("off", "on", "up", "down"):
                raise ValueError(f"unknown channel state {state!r}")


@dataclass(frozen=True)
class PulseSequence:
    segments: tuple[Segment, ...]
    ramp_kind: str = "cosine"

    @property
    def total_duration(self) -> float:
        return float(sum(s.duration for s in self.segments))

    def boundaries(self) -> list[tuple[str, float, float]]:
        """``(name, start, end)`` for each segment, gates included."""
        out, t = [], 0.0
        for s in self.segments:
            out.append((s.name, t, t + s.duration))
            t += s.duration
        return out

    def gate_times(self) -> list[tuple[float, str]]:
        return [(start, seg.gate) for seg, (_, start, _) in zip(self.segments, self.boundaries()) if seg.gate]

    def segment_at(self, t: float) -> str:
        for name, start, end in self.boundaries():
            if start <= t < end:
                return name
        return self.segments[-1].name

    def breakpoints(self) -> list[float]:
        return sorted({b for _, a, b in self.boundaries()} | {a for _, a, _ in self.boundaries()})

    def envelope(self, channel: str) -> Envelope:
        """Global-time envelope of ``channel``, piecewise over segments."""
        pieces = []
        for seg, (_, start, end) in zip(self.segments, self.boundaries()):
            if seg.gate:
                continue
            state = seg.channels.get(channel, "off")
            if state in ("up", "down"):
                f = ramp_envelope(self.ramp_kind, seg.duration, state)
            else:
                f = (lambda s, v=1.0 if state == "on" else 0.0: v)
            pieces.append((start, end, f))
        starts = np.array([p[0] for p in pieces])

        def env(t: float) -> float:
            i = int(np.searchsorted(starts, t, side="right")) - 1
            i = min(max(i, 0), len(pieces) - 1)
            start, _, f = pieces[i]
            return f(t - start)

        return env

    def shifted(self, hold: float) -> "PulseSequence":
        """Copy with the hold segment set to ``hold`` (removed when 0)."""
        segs = []
        for s in self.segments:
            if s.name == "hold":
                if hold > 0:
                    segs.append(Segment("hold", hold, s.channels))
            else:
                segs.append(s)
        return PulseSequence(tuple(segs), self.ramp_kind)


def rdr_sequence(params=None, drives=None, hold_duration: float = 0.0, ramp: float = DEFAULT_RAMP,
                 ramp_kind: str = "cosine") -> PulseSequence:
    """Reset sequence: sidebands up, Rabi up, hold, Rabi down + pi/2, sidebands down.

    ``params`` and ``drives`` are accepted for symmetry with the simulators;
    amplitudes live in the drive parameters, the sequence only shapes them.
    """
    if hold_duration < 0:
        raise ValueError("hold duration must be >= 0")
    sb_on = {"sideband_m": "on", "sideband_r": "on"}
    segs = [
        Segment("sidebands_up", ramp, {"sideband_m": "up", "sideband_r": "up"}),
        Segment("rabi_up", ramp, {**sb_on, "rabi": "up"}),
    ]
    if hold_duration > 0:
        segs.append(Segment("hold", hold_duration, {**sb_on, "rabi": "on"}))
    segs += [
        Segment("rabi_down", ramp, {**sb_on, "rabi": "down"}),
        Segment("half_pi", 0.0, gate="half_pi"),
        Segment("sidebands_down", ramp, {"sideband_m": "down", "sideband_r": "down"}),
    ]
    return PulseSequence(tuple(segs), ramp_kind)


def hold_sequence(duration: float, channels=("sideband_m", "sideband_r", "rabi")) -> PulseSequence:
    """A single segment with the given channels on (no ramps)."""
    return PulseSequence((Segment("hold", duration, {c: "on" for c in channels}),))
