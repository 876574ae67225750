"""Single-atom propagators in the impulse regime.

Level indices are zero-based: index 0 is |1>, index 1 is |2> (the excited
state), index 2 is |3> and index 3 is the auxiliary ground state |a>.
Detunings are in units of the inhomogeneous width and times in units of its
inverse, so every phase ``detuning * dt`` is dimensionless.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError

ATOL = 1e-12

# Level that accumulates the inhomogeneous phase during free evolution.
BROADENED_LEVEL = {2: 1, 3: 2, 4: 2}


def _check_finite(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise InvalidParameterError(f"{name} must be finite, got {value!r}")
    return value


@dataclass(frozen=True, eq=False)
class AtomState:
    """Density matrix of a single atom."""

    rho: np.ndarray

    def __post_init__(self):
        rho = np.array(self.rho, dtype=complex)
        rho.setflags(write=False)
        if rho.ndim != 2 or rho.shape[0] != rho.shape[1] or rho.shape[0] not in (2, 3, 4):
            raise InvalidParameterError(f"rho must be a 2x2, 3x3 or 4x4 matrix, got shape {rho.shape}")
        object.__setattr__(self, "rho", rho)

    @property
    def dim(self) -> int:
        return self.rho.shape[0]

    @classmethod
    def ground(cls, dim: int) -> AtomState:
        rho = np.zeros((dim, dim), dtype=complex)
        rho[0, 0] = 1.0
        return cls(rho)

    @classmethod
    def pure(cls, amplitudes) -> AtomState:
        psi = np.asarray(amplitudes, dtype=complex)
        return cls(np.outer(psi, psi.conj()))

    def coherence(self, i: int = 0, j: int = 1) -> complex:
        return complex(self.rho[i, j])

    def population(self, i: int) -> float:
        return float(self.rho[i, i].real)

    def is_valid(self, atol: float = ATOL) -> bool:
        rho = self.rho
        if abs(np.trace(rho) - 1.0) > atol:
            return False
        if np.max(np.abs(rho - rho.conj().T)) > atol:
            return False
        return bool(np.min(np.linalg.eigvalsh((rho + rho.conj().T) / 2)) >= -atol)


@dataclass(frozen=True, eq=False)
class Propagator:
    """Unitary acting on a single atom."""

    u: np.ndarray

    def __post_init__(self):
        u = np.array(self.u, dtype=complex)
        u.setflags(write=False)
        if u.ndim != 2 or u.shape[0] != u.shape[1]:
            raise InvalidParameterError(f"propagator must be square, got shape {u.shape}")
        object.__setattr__(self, "u", u)

    @property
    def dim(self) -> int:
        return self.u.shape[0]

    def __matmul__(self, other: Propagator) -> Propagator:
        if other.dim != self.dim:
            raise InvalidParameterError(f"cannot compose dim {self.dim} with dim {other.dim}")
        return Propagator(self.u @ other.u)

    def is_unitary(self, atol: float = ATOL) -> bool:
        return bool(np.max(np.abs(self.u.conj().T @ self.u - np.eye(self.dim))) <= atol)


def rabi_matrix(theta, phase=0.0) -> np.ndarray:
    """2x2 impulse rotation, broadcasting over array-valued ``theta``/``phase``.

    With ``phase = 0`` this is [[cos(θ/2), -i sin(θ/2)], [-i sin(θ/2), cos(θ/2)]].
    A nonzero optical phase φ puts e^{-iφ} on the upper and e^{+iφ} on the
    lower off-diagonal entry.
    """
    theta, phase = np.broadcast_arrays(np.asarray(theta, dtype=float), np.asarray(phase, dtype=float))
    c = np.cos(theta / 2)
    s = np.sin(theta / 2)
    u = np.empty(theta.shape + (2, 2), dtype=complex)
    u[..., 0, 0] = c
    u[..., 1, 1] = c
    u[..., 0, 1] = -1j * s * np.exp(-1j * phase)
    u[..., 1, 0] = -1j * s * np.exp(1j * phase)
    return u


def raman_matrix(theta_r) -> np.ndarray:
    """3x3 Raman impulse in the {|1>, |2>, |3>} basis, equal Rabi amplitudes on both legs."""
    theta_r = np.asarray(theta_r, dtype=float)
    c = np.cos(theta_r / 2)
    s = np.sin(theta_r / 2)
    u = np.empty(theta_r.shape + (3, 3), dtype=complex)
    u[..., 0, 0] = u[..., 2, 2] = (1 + c) / 2
    u[..., 0, 2] = u[..., 2, 0] = (-1 + c) / 2
    u[..., 0, 1] = u[..., 1, 0] = u[..., 1, 2] = u[..., 2, 1] = -1j * s / math.sqrt(2)
    u[..., 1, 1] = c
    return u


def embed(block: np.ndarray, levels: tuple[int, int], dim: int) -> np.ndarray:
    """Place a (..., 2, 2) block on two levels of a ``dim``-level identity."""
    block = np.asarray(block)
    u = np.zeros(block.shape[:-2] + (dim, dim), dtype=complex)
    idx = np.arange(dim)
    u[..., idx, idx] = 1.0
    i, j = levels
    u[..., i, i] = block[..., 0, 0]
    u[..., i, j] = block[..., 0, 1]
    u[..., j, i] = block[..., 1, 0]
    u[..., j, j] = block[..., 1, 1]
    return u


def impulse_propagator_2lvl(theta: float, phase: float = 0.0) -> Propagator:
    theta = _check_finite("theta", theta)
    phase = _check_finite("phase", phase)
    return Propagator(rabi_matrix(theta, phase))


def free_evolution_2lvl(delta: float, dt: float) -> Propagator:
    delta = _check_finite("delta", delta)
    dt = _check_finite("dt", dt)
    if dt < 0:
        raise InvalidParameterError(f"dt must be non-negative, got {dt}")
    return Propagator(np.diag([1.0, np.exp(-1j * delta * dt)]))


def impulse_propagator_raman(theta_r: float) -> Propagator:
    theta_r = _check_finite("theta_r", theta_r)
    return Propagator(raman_matrix(theta_r))


def free_evolution_3lvl(delta_r: float, dt: float) -> Propagator:
    delta_r = _check_finite("delta_r", delta_r)
    dt = _check_finite("dt", dt)
    if dt < 0:
        raise InvalidParameterError(f"dt must be non-negative, got {dt}")
    return Propagator(np.diag([1.0, 1.0, np.exp(-1j * delta_r * dt)]))


def pi_pulse_23(dim: int = 3) -> Propagator:
    """π pulse on |2>-|3>: |2> -> -i|3>, |3> -> -i|2>, other levels untouched."""
    if dim not in (3, 4):
        raise InvalidParameterError(f"pi_pulse_23 needs dim 3 or 4, got {dim}")
    return Propagator(embed(rabi_matrix(math.pi), (1, 2), dim))


def shelving_pulse() -> Propagator:
    """Coherent |2> <-> |a> transfer in the four-level scheme."""
    return Propagator(embed(rabi_matrix(math.pi), (1, 3), 4))


def apply(p: Propagator, s: AtomState) -> AtomState:
    if p.dim != s.dim:
        raise InvalidParameterError(f"propagator dim {p.dim} does not match state dim {s.dim}")
    return AtomState(p.u @ s.rho @ p.u.conj().T)


def dephase(s: AtomState) -> AtomState:
    """Drop every coherence; populations are kept as they are."""
    return AtomState(np.diag(np.diag(s.rho)))


def conjugate(u: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """Batched ``u @ rho @ u^dagger`` over leading axes."""
    return u @ rho @ np.conj(np.swapaxes(u, -1, -2))


def free_phase_factors(dim: int, phases: np.ndarray) -> np.ndarray:
    """Elementwise factors that free evolution multiplies into rho.

    Entry (r, c) picks up exp(-i φ (s_r - s_c)) where s marks the broadened level.
    """
    s = np.zeros(dim)
    s[BROADENED_LEVEL[dim]] = 1.0
    diff = s[:, None] - s[None, :]
    return np.exp(-1j * np.asarray(phases)[..., None, None] * diff)
