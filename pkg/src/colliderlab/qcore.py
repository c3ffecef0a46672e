"""Dense few-qubit linear algebra: pure states, density matrices, measurement.

Qubit ordering is big-endian: qubit 0 is the most significant bit of the
amplitude index. Measurements use real-plane bases

    outcome 0:  cos(t)|0> + sin(t)|1>
    outcome 1: -sin(t)|0> + cos(t)|1>

which is all the experiments here need.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

MAX_QUBITS = 4
ALGEBRA_TOL = 1e-10
IMPOSSIBLE_TOL = 1e-14


class QuantumStateError(ValueError):
    pass


class ImpossibleOutcomeError(RuntimeError):
    """A projection selected an outcome with (numerically) zero probability."""


class InvalidMixtureError(ValueError):
    pass


def _qubit_count(dim: int) -> int:
    n = dim.bit_length() - 1
    if dim < 2 or (1 << n) != dim:
        raise QuantumStateError(f"dimension {dim} is not a power of two >= 2")
    if n > MAX_QUBITS:
        raise QuantumStateError(f"{n} qubits exceeds the {MAX_QUBITS}-qubit limit")
    return n


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=np.complex128)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class StateVector:
    amplitudes: np.ndarray
    n: int = field(init=False)

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=np.complex128).reshape(-1)
        n = _qubit_count(amps.size)
        norm = float(np.vdot(amps, amps).real)
        if abs(norm - 1.0) > ALGEBRA_TOL:
            raise QuantumStateError(f"state not normalized (|psi|^2 = {norm!r})")
        object.__setattr__(self, "amplitudes", _frozen(amps))
        object.__setattr__(self, "n", n)

    @classmethod
    def _trusted(cls, amplitudes: np.ndarray, n: int) -> "StateVector":
        # caller guarantees shape and normalization
        obj = object.__new__(cls)
        amplitudes = amplitudes.reshape(-1)
        amplitudes.flags.writeable = False
        object.__setattr__(obj, "amplitudes", amplitudes)
        object.__setattr__(obj, "n", n)
        return obj

    @classmethod
    def normalized(cls, amplitudes) -> "StateVector":
        amps = np.asarray(amplitudes, dtype=np.complex128).reshape(-1)
        norm = np.linalg.norm(amps)
        if norm < IMPOSSIBLE_TOL:
            raise QuantumStateError("cannot normalize a zero vector")
        return cls(amps / norm)

    @classmethod
    def basis(cls, bits: str) -> "StateVector":
        amps = np.zeros(2 ** len(bits), dtype=np.complex128)
        amps[int(bits, 2)] = 1.0
        return cls(amps)

    def tensor(self) -> np.ndarray:
        return self.amplitudes.reshape((2,) * self.n)

    def inner(self, other: "StateVector") -> complex:
        return complex(np.vdot(self.amplitudes, other.amplitudes))

    def allclose(self, other: "StateVector", atol: float = ALGEBRA_TOL) -> bool:
        return self.n == other.n and bool(np.allclose(self.amplitudes, other.amplitudes, atol=atol, rtol=0))

    def __repr__(self):
        return f"StateVector(n={self.n}, amplitudes={np.round(self.amplitudes, 6).tolist()})"


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    entries: np.ndarray
    n: int = field(init=False)

    def __post_init__(self):
        rho = np.asarray(self.entries, dtype=np.complex128)
        if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
            raise QuantumStateError("density matrix must be square")
        n = _qubit_count(rho.shape[0])
        if np.max(np.abs(rho - rho.conj().T)) > ALGEBRA_TOL:
            raise QuantumStateError("density matrix is not Hermitian")
        if abs(np.trace(rho) - 1.0) > ALGEBRA_TOL:
            raise QuantumStateError(f"trace {np.trace(rho).real!r} != 1")
        if np.min(np.linalg.eigvalsh(rho)) < -ALGEBRA_TOL:
            raise QuantumStateError("density matrix has a negative eigenvalue")
        object.__setattr__(self, "entries", _frozen(rho))
        object.__setattr__(self, "n", n)

    @classmethod
    def from_state(cls, state: StateVector) -> "DensityMatrix":
        psi = state.amplitudes
        return cls(np.outer(psi, psi.conj()))

    @classmethod
    def maximally_mixed(cls, n: int) -> "DensityMatrix":
        return cls(np.eye(2**n) / 2**n)

    def purity(self) -> float:
        return float(np.trace(self.entries @ self.entries).real)


@dataclass(frozen=True)
class MeasurementSetting:
    """Real-plane measurement basis; the angle is reduced into [0, pi).

    Rotating a basis by pi only flips signs of the basis vectors, so the
    reduction leaves projectors and outcome labels unchanged.
    """

    angle: float

    def __post_init__(self):
        if not math.isfinite(self.angle):
            raise ValueError("measurement angle must be finite")
        reduced = math.fmod(float(self.angle), math.pi)
        if reduced < 0:
            reduced += math.pi
        if reduced >= math.pi:
            reduced = 0.0
        object.__setattr__(self, "angle", reduced)

    def vector(self, outcome: int) -> np.ndarray:
        c, s = math.cos(self.angle), math.sin(self.angle)
        if outcome == 0:
            return np.array([c, s], dtype=np.complex128)
        if outcome == 1:
            return np.array([-s, c], dtype=np.complex128)
        raise ValueError("outcome must be 0 or 1")


def _as_setting(setting) -> MeasurementSetting:
    return setting if isinstance(setting, MeasurementSetting) else MeasurementSetting(float(setting))


def _check_qubits(n: int, qubits: Sequence[int]) -> tuple[int, ...]:
    qubits = tuple(int(q) for q in qubits)
    if len(set(qubits)) != len(qubits):
        raise ValueError(f"repeated qubit in {qubits}")
    for q in qubits:
        if not 0 <= q < n:
            raise ValueError(f"qubit {q} out of range for {n} qubits")
    return qubits


def tensor(left: StateVector, right: StateVector) -> StateVector:
    return StateVector(np.kron(left.amplitudes, right.amplitudes))


def tensor_all(states: Iterable[StateVector]) -> StateVector:
    states = list(states)
    out = states[0]
    for s in states[1:]:
        out = tensor(out, s)
    return out


def apply_operator(state: StateVector, operator: np.ndarray, qubits: Sequence[int]) -> np.ndarray:
    """Apply a ``2^k x 2^k`` operator to ``qubits``; returns raw (unnormalized) amplitudes."""
    qubits = _check_qubits(state.n, qubits)
    k = len(qubits)
    op = np.asarray(operator, dtype=np.complex128).reshape((2,) * (2 * k))
    psi = state.tensor()
    # contract operator input axes with the target qubit axes
    out = np.tensordot(op, psi, axes=(list(range(k, 2 * k)), list(qubits)))
    rest = [q for q in range(state.n) if q not in qubits]
    order = list(qubits) + rest
    out = np.moveaxis(out, list(range(state.n)), order)
    return out.reshape(-1)


def apply_unitary(state: StateVector, unitary: np.ndarray, qubits: Sequence[int]) -> StateVector:
    u = np.asarray(unitary, dtype=np.complex128)
    if np.max(np.abs(u.conj().T @ u - np.eye(u.shape[0]))) > ALGEBRA_TOL:
        raise ValueError("operator is not unitary")
    return StateVector(apply_operator(state, u, qubits))


def project(state: StateVector, qubits: Sequence[int], target: StateVector) -> tuple[float, StateVector]:
    """Project ``qubits`` onto ``target``; returns (Born probability, renormalized state)."""
    if target.n != len(qubits):
        raise ValueError("target size does not match the projected qubits")
    t = target.amplitudes
    raw = apply_operator(state, np.outer(t, t.conj()), qubits)
    prob = float(np.vdot(raw, raw).real)
    if prob < IMPOSSIBLE_TOL:
        raise ImpossibleOutcomeError(f"projection onto qubits {tuple(qubits)} has probability {prob:.3e}")
    return prob, StateVector(raw / math.sqrt(prob))


def contract(state: StateVector, qubits: Sequence[int], target: StateVector) -> tuple[float, StateVector]:
    """Contract ``qubits`` with <target|; returns (probability, state of the remaining qubits)."""
    qubits = _check_qubits(state.n, qubits)
    if target.n != len(qubits) or len(qubits) >= state.n:
        raise ValueError("invalid contraction")
    bra = target.amplitudes.conj().reshape((2,) * target.n)
    rest = np.tensordot(bra, state.tensor(), axes=(list(range(target.n)), list(qubits))).reshape(-1)
    prob = float(np.vdot(rest, rest).real)
    if prob < IMPOSSIBLE_TOL:
        raise ImpossibleOutcomeError(f"contraction on qubits {qubits} has probability {prob:.3e}")
    return prob, StateVector(rest / math.sqrt(prob))


def outcome_probability(state: StateVector, qubit: int, setting, outcome: int) -> float:
    setting = _as_setting(setting)
    (qubit,) = _check_qubits(state.n, [qubit])
    v = setting.vector(outcome)
    amp = np.tensordot(v.conj(), state.tensor(), axes=([0], [qubit]))
    return float(np.vdot(amp, amp).real)


def project_angle(state: StateVector, qubit: int, setting, outcome: int) -> tuple[float, StateVector]:
    v = StateVector(_as_setting(setting).vector(outcome))
    return project(state, [qubit], v)


def measure_angle(state: StateVector, qubit: int, setting, rng) -> tuple[int, StateVector]:
    """Born-rule measurement of one qubit. ``rng`` needs only a ``random()`` method.

    One uniform is consumed: outcome 0 iff it falls below P(0).
    """
    setting = _as_setting(setting)
    if not 0 <= qubit < state.n:
        raise ValueError(f"qubit {qubit} out of range for {state.n} qubits")
    basis = np.stack([setting.vector(0), setting.vector(1)])
    # amps[k] = <v_k|_qubit psi, over the remaining qubits
    amps = np.tensordot(basis.conj(), state.tensor(), axes=([1], [qubit]))
    flat = amps.reshape(2, -1)
    p0 = float(np.vdot(flat[0], flat[0]).real)
    outcome = 0 if rng.random() < p0 else 1
    prob = p0 if outcome == 0 else float(np.vdot(flat[1], flat[1]).real)
    if prob < IMPOSSIBLE_TOL:
        raise ImpossibleOutcomeError(f"outcome {outcome} on qubit {qubit} has probability {prob:.3e}")
    post = np.multiply.outer(basis[outcome], amps[outcome] / math.sqrt(prob))
    post = np.moveaxis(post, 0, qubit)
    return outcome, StateVector._trusted(np.ascontiguousarray(post), state.n)


def density_from_mixture(components: Sequence[tuple[float, StateVector]]) -> DensityMatrix:
    if not components:
        raise InvalidMixtureError("empty mixture")
    weights = np.array([float(w) for w, _ in components])
    if np.any(weights < 0):
        raise InvalidMixtureError("negative mixture weight")
    if abs(weights.sum() - 1.0) > ALGEBRA_TOL:
        raise InvalidMixtureError(f"mixture weights sum to {weights.sum()!r}")
    n = {s.n for _, s in components}
    if len(n) != 1:
        raise InvalidMixtureError("mixture components have different qubit counts")
    rho = sum(w * np.outer(s.amplitudes, s.amplitudes.conj()) for w, s in components)
    return DensityMatrix(rho)


def partial_trace(rho: DensityMatrix, keep: Iterable[int]) -> DensityMatrix:
    keep = sorted(set(_check_qubits(rho.n, sorted(set(keep)))))
    if not keep:
        raise ValueError("keep set must be non-empty")
    n = rho.n
    letters = "abcdefghijklmnop"
    row = list(letters[:n])
    col = list(letters[n : 2 * n])
    for q in range(n):
        if q not in keep:
            col[q] = row[q]
    out = "".join(row[q] for q in keep) + "".join(col[q] for q in keep)
    reduced = np.einsum("".join(row) + "".join(col) + "->" + out, rho.entries.reshape((2,) * (2 * n)))
    d = 2 ** len(keep)
    return DensityMatrix(reduced.reshape(d, d))


def is_maximally_mixed(rho: DensityMatrix, tol: float) -> bool:
    d = 2**rho.n
    return float(np.max(np.abs(rho.entries - np.eye(d) / d))) <= tol


def fidelity(a: StateVector, b: StateVector) -> float:
    """Pure-state fidelity |<a|b>|^2."""
    return abs(a.inner(b)) ** 2
