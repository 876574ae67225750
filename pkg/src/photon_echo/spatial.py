"""Spatially extended ensembles and phase matching.

Atoms sit at random positions in a box (lengths in units of the wavelength,
so wavevectors have magnitude 2π). Pulse i reaches an atom at r with optical
phase k_i·r and the field radiated towards k sums each dipole with weight
e^{ik·r}. Dipoles add in phase only near k = -k1 + k2 + k3; elsewhere the sum
is a random walk of M phasors.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidParameterError, UndefinedRatioError
from .protocols import IMPULSE_2LVL, Protocol, propagate

K_MAG = 2 * math.pi
CSV_COLUMNS = ("direction_x", "direction_y", "direction_z", "intensity")


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(norm == 0) or not np.all(np.isfinite(v)):
        raise InvalidParameterError("direction vectors must be finite and nonzero")
    return v / norm


@dataclass(frozen=True, eq=False)
class SpatialEnsemble:
    positions: np.ndarray
    detunings: np.ndarray
    geometry: tuple[float, float, float]

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        det = np.asarray(self.detunings, dtype=float)
        if pos.ndim != 2 or pos.shape[1] != 3 or pos.shape[0] < 1:
            raise InvalidParameterError(f"positions must have shape (M, 3) with M >= 1, got {pos.shape}")
        if det.shape != (pos.shape[0],):
            raise InvalidParameterError("need one detuning per atom")
        if len(self.geometry) != 3 or min(self.geometry) <= 0:
            raise InvalidParameterError(f"box dimensions must be three positive lengths, got {self.geometry}")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "detunings", det)
        object.__setattr__(self, "geometry", tuple(float(g) for g in self.geometry))

    @property
    def n_atoms(self) -> int:
        return self.positions.shape[0]


@dataclass(frozen=True, eq=False)
class BeamGeometry:
    k1: np.ndarray
    k2: np.ndarray
    k3: np.ndarray
    k_out: np.ndarray

    def __post_init__(self):
        for name in ("k1", "k2", "k3", "k_out"):
            k = np.asarray(getattr(self, name), dtype=float)
            if k.shape != (3,) or abs(np.linalg.norm(k) - K_MAG) > 1e-12:
                raise InvalidParameterError(f"{name} must be a 3-vector of magnitude 2π")
            object.__setattr__(self, name, k)

    @classmethod
    def from_directions(cls, d1, d2, d3, d_out=None) -> BeamGeometry:
        k1, k2, k3 = (K_MAG * _unit(d) for d in (d1, d2, d3))
        k_out = K_MAG * _unit(-k1 + k2 + k3 if d_out is None else d_out)
        return cls(k1, k2, k3, k_out)

    @classmethod
    def boxcar(cls, angle: float = 0.2) -> BeamGeometry:
        """Three beams on a cone of half-angle ``angle`` around z; the matched
        direction -k1+k2+k3 lies on the same cone, so its length is 2π."""
        s, c = math.sin(angle), math.cos(angle)
        return cls.from_directions((s, 0, c), (0, s, c), (0, -s, c))

    @property
    def phase_matched(self) -> np.ndarray:
        """-k1 + k2 + k3, not normalised."""
        return -self.k1 + self.k2 + self.k3

    @property
    def matched_direction(self) -> np.ndarray:
        return _unit(self.phase_matched)

    def pointing(self, direction) -> BeamGeometry:
        return replace(self, k_out=K_MAG * _unit(direction))

    def wavevector(self, label: int) -> np.ndarray:
        return (self.k1, self.k2, self.k3)[label - 1]


def sample_atoms(m: int, geometry, seed: int, width: float = 1.0) -> SpatialEnsemble:
    """Uniform positions in a box centred on the origin and Gaussian detunings."""
    if int(m) != m or m < 1:
        raise InvalidParameterError(f"need at least one atom, got {m}")
    box = np.broadcast_to(np.asarray(geometry, dtype=float), (3,))
    if np.any(box <= 0):
        raise InvalidParameterError(f"box dimensions must be positive, got {geometry}")
    rng = np.random.default_rng(seed)
    positions = (rng.random((int(m), 3)) - 1 / 2) * box
    detunings = rng.normal(0.0, width, int(m))
    return SpatialEnsemble(positions, detunings, tuple(box))


def random_directions(n: int, seed: int) -> np.ndarray:
    return _unit(np.random.default_rng(seed).normal(size=(n, 3)))


def _spatial_phases(protocol: Protocol, ens: SpatialEnsemble, beams: BeamGeometry) -> dict[int, np.ndarray]:
    labelled = {ev.k_label: i for i, ev in enumerate(protocol.events) if ev.k_label is not None}
    if set(labelled) != {1, 2, 3}:
        raise InvalidParameterError("protocol must carry wavevector labels 1, 2 and 3")
    for label, i in labelled.items():
        if protocol.events[i].kind != IMPULSE_2LVL:
            raise InvalidParameterError(f"wavevector label {label} sits on a {protocol.events[i].kind} event")
    return {i: ens.positions @ beams.wavevector(label) for label, i in labelled.items()}


def _atom_states(protocol, ens, beams, t) -> np.ndarray:
    durations = protocol.free_durations(t)
    phases = np.outer(ens.detunings, durations)
    return propagate(protocol, t, phases, pulse_phases=_spatial_phases(protocol, ens, beams))


def atom_coherences(protocol: Protocol, ens: SpatialEnsemble, beams: BeamGeometry, t: float | None = None) -> np.ndarray:
    """⟨1|ρ|2⟩ of every atom, including the imprinted spatial phases."""
    t = protocol.echo_time if t is None else t
    return _atom_states(protocol, ens, beams, t)[:, 0, 1]


def directional_polarization(
    protocol: Protocol, ens: SpatialEnsemble, beams: BeamGeometry, t: float | None = None
) -> complex:
    coh = atom_coherences(protocol, ens, beams, t)
    return complex(np.sum(coh * np.exp(1j * (ens.positions @ beams.k_out))))


def phase_matching_scan(
    protocol: Protocol,
    ens: SpatialEnsemble,
    beams: BeamGeometry,
    directions: Sequence,
    t: float | None = None,
) -> list[tuple[np.ndarray, float]]:
    """Emitted intensity |P(k)|² (single-atom intensity 1) for each direction."""
    dirs = _unit(np.atleast_2d(np.asarray(directions, dtype=float)))
    if dirs.shape[0] == 0 or dirs.shape[1] != 3:
        raise InvalidParameterError("directions must be a non-empty list of 3-vectors")
    coh = atom_coherences(protocol, ens, beams, t)
    rows = []
    for d in dirs:
        amp = np.sum(coh * np.exp(1j * (ens.positions @ (K_MAG * d))))
        rows.append((d, float(abs(amp) ** 2)))
    return rows


def fluorescence(protocol: Protocol, ens: SpatialEnsemble, beams: BeamGeometry) -> float:
    """Excited population summed over atoms at the echo time with nothing stored.

    Spontaneous emission carries no phase relation between atoms, so this is
    the noise in any direction.
    """
    dark = protocol.with_epsilon(0.0)
    return float(np.sum(_atom_states(dark, ens, beams, dark.echo_time)[:, 1, 1].real))


def directional_snr(protocol: Protocol, ens: SpatialEnsemble, beams: BeamGeometry, k_out=None) -> float:
    if k_out is not None:
        beams = beams.pointing(k_out)
    noise = fluorescence(protocol, ens, beams)
    if noise == 0:
        raise UndefinedRatioError("no fluorescence: signal-to-noise ratio is undefined")
    return abs(directional_polarization(protocol, ens, beams)) ** 2 / noise


def median_unmatched_snr(
    protocol: Protocol, ens: SpatialEnsemble, beams: BeamGeometry, n_directions: int = 20, seed: int = 0
) -> float:
    """Median SNR over random directions; single directions fluctuate too much to quote."""
    dirs = random_directions(n_directions, seed)
    noise = fluorescence(protocol, ens, beams)
    if noise == 0:
        raise UndefinedRatioError("no fluorescence: signal-to-noise ratio is undefined")
    scan = phase_matching_scan(protocol, ens, beams, dirs)
    return float(np.median([intensity for _, intensity in scan])) / noise


def write_scan_csv(rows: Iterable[tuple[np.ndarray, float]], out) -> None:
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for d, intensity in rows:
        writer.writerow([repr(float(d[0])), repr(float(d[1])), repr(float(d[2])), repr(float(intensity))])


def scan_to_csv(rows) -> str:
    buf = io.StringIO()
    write_scan_csv(rows, buf)
    return buf.getvalue()


def read_directions(path) -> np.ndarray:
    """Directions from a JSON list of 3-vectors or a CSV with three numeric columns."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        if Path(path).suffix.lower() == ".json":
            data = np.asarray(json.loads(text), dtype=float)
        else:
            rows = [r for r in csv.reader(io.StringIO(text)) if r and not r[0].lstrip().startswith("#")]
            try:
                float(rows[0][0])
            except ValueError:
                rows = rows[1:]
            data = np.asarray([[float(x) for x in r[:3]] for r in rows], dtype=float)
    except (ValueError, IndexError, json.JSONDecodeError) as exc:
        raise InvalidParameterError(f"cannot read directions from {path}: {exc}") from exc
    if data.ndim != 2 or data.shape[1] != 3 or data.shape[0] == 0:
        raise InvalidParameterError(f"{path} must hold a non-empty list of 3-vectors")
    return _unit(data)
