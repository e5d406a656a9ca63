"""Domain types for amplitude vectors and coupled system-detector states.

A ``QuantumState`` is a normalized complex amplitude vector.  Coupling it to
its detector image squares the coefficients: the diagonal of the coupled
state is the probability vector w_i = |a_i|^2 that seeds the random walk,
while the off-diagonal cross terms kappa_ij = a_i * conj(a_j) ride along as
passive bookkeeping ("spectators").  Cross terms never drive the walk; they
are rescaled after every step and forced to zero once a state is eliminated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AllZeroError, TooFewStatesError

NORM_TOL = 1e-12


def _frozen_array(values, dtype) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class QuantumState:
    """Normalized complex amplitude vector over N >= 2 basis states."""

    amplitudes: np.ndarray

    def __post_init__(self):
        amps = _frozen_array(self.amplitudes, np.complex128)
        if amps.ndim != 1 or amps.size < 2:
            raise TooFewStatesError("need an amplitude vector with at least 2 entries")
        norm = np.linalg.norm(amps)
        if abs(norm - 1.0) > NORM_TOL:
            raise ValueError(f"amplitudes not normalized: |a| = {norm!r}")
        object.__setattr__(self, "amplitudes", amps)

    @property
    def n(self) -> int:
        return self.amplitudes.size

    def weights(self) -> np.ndarray:
        """Squared magnitudes |a_i|^2 (sums to 1 within tolerance)."""
        return np.abs(self.amplitudes) ** 2


@dataclass(frozen=True)
class JointState:
    """Coupled system-detector state: simplex weights plus spectator cross terms.

    weights  -- w_i >= 0, sum 1; the diagonal coefficients |a_i|^2
    cross    -- Hermitian off-diagonal matrix, |kappa_ij| = sqrt(w_i w_j) for
                alive pairs; diagonal unused (zero)
    alive    -- False once a state's weight has irreversibly hit zero
    """

    weights: np.ndarray
    cross: np.ndarray
    alive: np.ndarray

    def __post_init__(self):
        w = _frozen_array(self.weights, np.float64)
        k = _frozen_array(self.cross, np.complex128)
        al = _frozen_array(self.alive, bool)
        n = w.size
        if w.ndim != 1 or n < 2:
            raise TooFewStatesError("need at least 2 states")
        if k.shape != (n, n) or al.shape != (n,):
            raise ValueError("weights, cross and alive have inconsistent shapes")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        if abs(w.sum() - 1.0) > NORM_TOL:
            raise ValueError(f"weights must sum to 1, got {w.sum()!r}")
        if not np.allclose(k, k.conj().T, rtol=0.0, atol=NORM_TOL):
            raise ValueError("cross terms must be Hermitian")
        mag = np.sqrt(np.outer(w, w))
        both_alive = np.outer(al, al)
        off = ~np.eye(n, dtype=bool)
        bad = np.abs(np.abs(k) - mag)[both_alive & off]
        if bad.size and bad.max() > NORM_TOL:
            raise ValueError("|cross_ij| must equal sqrt(w_i w_j) for alive pairs")
        dead = ~al
        if np.any(w[dead] != 0.0):
            raise ValueError("dead states must carry zero weight")
        if np.any(k[dead, :] != 0) or np.any(k[:, dead] != 0):
            raise ValueError("dead states must have zero cross terms")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "cross", k)
        object.__setattr__(self, "alive", al)

    @property
    def n(self) -> int:
        return self.weights.size


def normalize(raw) -> QuantumState:
    """Normalize a raw complex vector to a QuantumState.

    Raises AllZeroError for a (numerically) zero vector and
    TooFewStatesError for fewer than two entries.
    """
    amps = np.asarray(raw, dtype=np.complex128)
    if amps.ndim != 1 or amps.size < 2:
        raise TooFewStatesError("need an amplitude vector with at least 2 entries")
    norm = np.linalg.norm(amps)
    if norm < 1e-300:
        raise AllZeroError("cannot normalize an all-zero amplitude vector")
    return QuantumState(amps / norm)


def form_joint(state: QuantumState) -> JointState:
    """Couple a quantum state to its detector image.

    The pairing of equal-amplitude components squares the coefficients:
    w_i = |a_i|^2.  Off-diagonal entries kappa_ij = a_i * conj(a_j) record
    the spectator cross terms; the diagonal is left zero (unused).
    """
    a = state.amplitudes
    w = np.abs(a) ** 2
    cross = np.outer(a, a.conj())
    np.fill_diagonal(cross, 0.0)
    alive = np.ones(a.size, dtype=bool)
    return JointState(weights=w, cross=cross, alive=alive)


def parse_amplitudes(text: str) -> np.ndarray:
    """Parse semicolon-separated "re,im" pairs, e.g. "0.6,0;0,0.8".

    Returns the raw (unnormalized) complex vector.
    """
    parts = [p.strip() for p in text.split(";") if p.strip()]
    if not parts:
        raise ValueError("empty amplitude string")
    out = []
    for part in parts:
        fields = part.split(",")
        if len(fields) != 2:
            raise ValueError(f"amplitude entry {part!r} is not a 're,im' pair")
        try:
            re, im = float(fields[0]), float(fields[1])
        except ValueError as exc:
            raise ValueError(f"amplitude entry {part!r} is not numeric") from exc
        out.append(complex(re, im))
    return np.array(out, dtype=np.complex128)
