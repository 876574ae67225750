"""Pulse sequences as event timelines, and the batched single-atom engine.

A protocol is a list of instantaneous events. Between events every atom
evolves freely, picking up the phase ``detuning * dt`` on its broadened level.
The engine in :func:`propagate` takes those phases directly, one column per
free-evolution interval, so the same code serves detuning sweeps, Monte Carlo
ensembles and the phase-grid sampling used for exact spectral averages.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from . import atom_dynamics as ad
from .atom_dynamics import AtomState
from .errors import InvalidParameterError

IMPULSE_2LVL = "impulse_2lvl"
IMPULSE_RAMAN = "impulse_raman"
PI_23 = "pi_23"
DEPHASE = "dephase_marker"
SHELVE = "shelve_to_aux"
UNSHELVE = "unshelve_from_aux"

KINDS = (IMPULSE_2LVL, IMPULSE_RAMAN, PI_23, DEPHASE, SHELVE, UNSHELVE)
AREA_KINDS = (IMPULSE_2LVL, IMPULSE_RAMAN)
_MIN_DIM = {IMPULSE_2LVL: 2, IMPULSE_RAMAN: 3, PI_23: 3, DEPHASE: 2, SHELVE: 4, UNSHELVE: 4}


@dataclass(frozen=True)
class PulseEvent:
    time: float
    kind: str
    param: float | None = None
    k_label: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidParameterError(f"unknown event kind {self.kind!r}")
        if not math.isfinite(self.time):
            raise InvalidParameterError(f"event time must be finite, got {self.time!r}")
        if self.kind in AREA_KINDS:
            if self.param is None or not math.isfinite(self.param):
                raise InvalidParameterError(f"{self.kind} needs a finite pulse area, got {self.param!r}")
        elif self.param is not None:
            raise InvalidParameterError(f"{self.kind} takes no parameter")
        if self.k_label is not None and self.k_label not in (1, 2, 3):
            raise InvalidParameterError(f"k_label must be 1, 2 or 3, got {self.k_label!r}")


@dataclass(frozen=True)
class Protocol:
    dim: int
    events: tuple[PulseEvent, ...]
    echo_time: float
    _storage: int = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        if self.dim not in (2, 3, 4):
            raise InvalidParameterError(f"dim must be 2, 3 or 4, got {self.dim}")
        if not self.events:
            raise InvalidParameterError("a protocol needs at least one event")
        times = [ev.time for ev in self.events]
        if any(b < a for a, b in zip(times, times[1:])):
            raise InvalidParameterError(f"event times must be non-decreasing, got {times}")
        for ev in self.events:
            if self.dim < _MIN_DIM[ev.kind]:
                raise InvalidParameterError(f"{ev.kind} is not defined for dim {self.dim}")
        if sum(ev.kind == DEPHASE for ev in self.events) > 1:
            raise InvalidParameterError("at most one dephase marker is allowed")
        if not math.isfinite(self.echo_time) or self.echo_time < times[0]:
            raise InvalidParameterError(f"echo_time {self.echo_time!r} precedes the first event")
        storage = next((i for i, ev in enumerate(self.events) if ev.kind == IMPULSE_2LVL), -1)
        object.__setattr__(self, "_storage", storage)

    @property
    def detuning_role(self) -> str:
        return "optical" if self.dim == 2 else "spin"

    @property
    def start_time(self) -> float:
        return self.events[0].time

    @property
    def storage_index(self) -> int:
        """Index of the pulse that writes the weak input (the first |1>-|2> impulse)."""
        if self._storage < 0:
            raise InvalidParameterError("protocol has no storage pulse")
        return self._storage

    @property
    def epsilon(self) -> float:
        return self.events[self.storage_index].param / 2

    def with_area(self, index: int, area: float) -> Protocol:
        events = list(self.events)
        events[index] = replace(events[index], param=float(area))
        return replace(self, events=tuple(events))

    def with_epsilon(self, epsilon: float) -> Protocol:
        return self.with_area(self.storage_index, 2 * epsilon)

    def timeline(self, until: float, stop_after: int | None = None) -> list[tuple]:
        """Ordered steps up to time ``until``.

        Steps are ``("event", index)`` or ``("free", duration)``. Events at
        exactly ``until`` are included; ``stop_after`` cuts the list right
        after the given event index.
        """
        if until < self.start_time:
            raise InvalidParameterError(f"time {until} precedes the first event at {self.start_time}")
        steps: list[tuple] = []
        t_prev = self.start_time
        for i, ev in enumerate(self.events):
            if ev.time > until:
                break
            if ev.time > t_prev:
                steps.append(("free", ev.time - t_prev))
                t_prev = ev.time
            steps.append(("event", i))
            if stop_after is not None and i == stop_after:
                return steps
        if stop_after is None and until > t_prev:
            steps.append(("free", until - t_prev))
        return steps

    def free_durations(self, until: float, stop_after: int | None = None) -> np.ndarray:
        return np.array([s[1] for s in self.timeline(until, stop_after) if s[0] == "free"], dtype=float)

    def active_intervals(self, until: float, stop_after: int | None = None) -> np.ndarray:
        """Mask of free intervals whose phase can reach the final state.

        An interval that ends in a dephase marker only rotates coherences that
        are about to be erased, and one that starts after a dephase marker acts
        on a diagonal state, so neither leaves a trace.
        """
        steps = self.timeline(until, stop_after)
        mask = []
        for pos, step in enumerate(steps):
            if step[0] != "free":
                continue
            before = steps[pos - 1] if pos > 0 else None
            after = steps[pos + 1] if pos + 1 < len(steps) else None
            dead = any(s is not None and s[0] == "event" and self.events[s[1]].kind == DEPHASE for s in (before, after))
            mask.append(not dead)
        return np.array(mask, dtype=bool)

    # -- JSON -------------------------------------------------------------

    def to_dict(self) -> dict:
        events = []
        for ev in self.events:
            item = {"t": ev.time, "kind": ev.kind}
            if ev.param is not None:
                item["param"] = ev.param
            if ev.k_label is not None:
                item["k_label"] = ev.k_label
            events.append(item)
        return {"dim": self.dim, "events": events, "echo_time": self.echo_time}

    @classmethod
    def from_dict(cls, data: Mapping) -> Protocol:
        try:
            events = tuple(
                PulseEvent(
                    time=float(e["t"]),
                    kind=str(e["kind"]),
                    param=None if e.get("param") is None else float(e["param"]),
                    k_label=None if e.get("k_label") is None else int(e["k_label"]),
                )
                for e in data["events"]
            )
            return cls(dim=int(data["dim"]), events=events, echo_time=float(data["echo_time"]))
        except (KeyError, TypeError) as exc:
            raise InvalidParameterError(f"malformed protocol document: {exc}") from exc

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_json(cls, text: str) -> Protocol:
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InvalidParameterError(f"protocol is not valid JSON: {exc}") from exc
        return cls.from_dict(data)


def _check_times(t1: float, t2: float, t3: float) -> None:
    if not all(math.isfinite(t) for t in (t1, t2, t3)):
        raise InvalidParameterError("pulse times must be finite")
    if not t1 < t2 < t3:
        raise InvalidParameterError(f"pulse times must satisfy t1 < t2 < t3, got {t1}, {t2}, {t3}")


def build_two_level_3pe(
    t1: float = 0.0,
    t2: float = 20.0,
    t3: float = 120.0,
    theta1: float = 2e-3,
    theta2: float = math.pi / 2,
    theta3: float = math.pi / 2,
) -> Protocol:
    _check_times(t1, t2, t3)
    events = (
        PulseEvent(t1, IMPULSE_2LVL, theta1, k_label=1),
        PulseEvent(t2, IMPULSE_2LVL, theta2, k_label=2),
        PulseEvent((t2 + t3) / 2, DEPHASE),
        PulseEvent(t3, IMPULSE_2LVL, theta3, k_label=3),
    )
    return Protocol(2, events, echo_time=t3 + t2 - t1)


def _three_level_events(t1, t2, t3, epsilon, theta2_r, theta3_r, shelve):
    t4 = t3 + t2 - t1
    events = [
        PulseEvent(t1, IMPULSE_2LVL, 2 * epsilon),
        PulseEvent(t1, PI_23),
        PulseEvent(t2, IMPULSE_RAMAN, theta2_r),
    ]
    if shelve:
        events.append(PulseEvent(t2, SHELVE))
    events.append(PulseEvent((t2 + t3) / 2, DEPHASE))
    if shelve:
        events.append(PulseEvent(t3, UNSHELVE))
    events += [PulseEvent(t3, IMPULSE_RAMAN, theta3_r), PulseEvent(t4, PI_23)]
    return tuple(events), t4


def build_three_level_3pe(
    t1: float = 0.0,
    t2: float = 20.0,
    t3: float = 120.0,
    epsilon: float = 1e-3,
    theta2_r: float = math.pi,
    theta3_r: float = math.pi,
) -> Protocol:
    _check_times(t1, t2, t3)
    events, t4 = _three_level_events(t1, t2, t3, epsilon, theta2_r, theta3_r, shelve=False)
    return Protocol(3, events, echo_time=t4)


def build_ham_variant(
    t1: float = 0.0,
    t2: float = 20.0,
    t3: float = 120.0,
    epsilon: float = 1e-3,
    theta2_r: float = math.pi,
    theta3_r: float = math.pi,
) -> Protocol:
    """Three-level sequence with the excited population parked in |a> during storage."""
    _check_times(t1, t2, t3)
    events, t4 = _three_level_events(t1, t2, t3, epsilon, theta2_r, theta3_r, shelve=True)
    return Protocol(4, events, echo_time=t4)


# -- engine ---------------------------------------------------------------


def _event_unitary(protocol: Protocol, index: int, area, phase) -> np.ndarray:
    ev = protocol.events[index]
    dim = protocol.dim
    if ev.kind == IMPULSE_2LVL:
        block = ad.rabi_matrix(area, phase)
        return block if dim == 2 else ad.embed(block, (0, 1), dim)
    if ev.kind == IMPULSE_RAMAN:
        u3 = ad.raman_matrix(area)
        if dim == 3:
            return u3
        u = np.zeros(u3.shape[:-2] + (4, 4), dtype=complex)
        u[..., :3, :3] = u3
        u[..., 3, 3] = 1.0
        return u
    if ev.kind == PI_23:
        return ad.pi_pulse_23(dim).u
    if ev.kind == SHELVE:
        return ad.shelving_pulse().u
    if ev.kind == UNSHELVE:
        return ad.shelving_pulse().u.conj().T
    raise AssertionError(ev.kind)


def propagate(
    protocol: Protocol,
    until: float,
    phases,
    *,
    areas: Mapping[int, object] | None = None,
    pulse_phases: Mapping[int, object] | None = None,
    stop_after: int | None = None,
) -> np.ndarray:
    """Density matrices of a batch of atoms at time ``until``.

    ``phases`` has shape (K, m): the free-evolution phase of each of the m
    intervals in ``protocol.timeline(until)`` for each of K atoms. ``areas``
    and ``pulse_phases`` override, per event index, the pulse area and the
    optical phase with arrays broadcastable to (K,). Returns shape (K, d, d).
    """
    phases = np.asarray(phases, dtype=float)
    steps = protocol.timeline(until, stop_after)
    n_free = sum(s[0] == "free" for s in steps)
    if phases.ndim != 2 or phases.shape[1] != n_free:
        raise InvalidParameterError(f"expected phases of shape (K, {n_free}), got {phases.shape}")
    areas = areas or {}
    pulse_phases = pulse_phases or {}
    k = phases.shape[0]
    dim = protocol.dim

    rho = np.zeros((k, dim, dim), dtype=complex)
    rho[:, 0, 0] = 1.0
    j = 0
    for step in steps:
        if step[0] == "free":
            rho = rho * ad.free_phase_factors(dim, phases[:, j])
            j += 1
            continue
        i = step[1]
        ev = protocol.events[i]
        if ev.kind == DEPHASE:
            rho = np.einsum("kii->ki", rho)[:, :, None] * np.eye(dim)
            continue
        area = areas.get(i, ev.param)
        phase = pulse_phases.get(i, 0.0)
        u = _event_unitary(protocol, i, area, phase)
        if u.ndim == 3 and u.shape[0] not in (1, k):
            raise InvalidParameterError(f"override for event {i} does not match batch size {k}")
        rho = ad.conjugate(u, rho)
    return rho


def single_atom_trace(protocol: Protocol, delta: float) -> list[tuple[float, AtomState]]:
    """State right after every event, then at the echo time."""
    delta = float(delta)
    if not math.isfinite(delta):
        raise InvalidParameterError(f"delta must be finite, got {delta!r}")
    out = []
    for i, ev in enumerate(protocol.events):
        durations = protocol.free_durations(ev.time, stop_after=i)
        rho = propagate(protocol, ev.time, (delta * durations)[None, :], stop_after=i)[0]
        out.append((ev.time, AtomState(rho)))
    durations = protocol.free_durations(protocol.echo_time)
    rho = propagate(protocol, protocol.echo_time, (delta * durations)[None, :])[0]
    out.append((protocol.echo_time, AtomState(rho)))
    return out
