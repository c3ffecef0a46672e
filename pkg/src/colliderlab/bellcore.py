"""Quantum Bell experiments: V-shaped, W-shaped (entanglement swapping), teleportation.

Qubit layout
    V: qubit 0 = Alice's wing, qubit 1 = Bob's wing.
    W: (0, 1) from source S1, (2, 3) from source S2; Alice measures 0,
       Bob measures 3, the joint measurement M acts on (1, 2).

Each trial owns one block of uniforms (see :mod:`colliderlab.rng`) with
fixed slots, so the per-trial ``sequential`` engine, which walks states
through :mod:`colliderlab.qcore`, and the ``vectorized`` engine, which
inverts precomputed conditional tables, consume identical draws and produce
identical runs.
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from . import qcore
from .qcore import MeasurementSetting, StateVector
from .rng import RandomStream, map_partitions, partition_plan
from .stats import NoSignallingReport, no_signalling_table, tabulate

# uniform slots inside one trial block
SLOT_A_SETTING, SLOT_B_SETTING, SLOT_PREP = 0, 1, 2
SLOT_OUTCOMES = 3  # wing A, wing B, then joint measurement

_SQRT_HALF = 1 / math.sqrt(2)


class BellIndex(enum.IntEnum):
    PHI_PLUS = 0
    PHI_MINUS = 1
    PSI_PLUS = 2
    PSI_MINUS = 3


def bell_state(index) -> StateVector:
    index = BellIndex(index)
    amps = np.zeros(4)
    if index in (BellIndex.PHI_PLUS, BellIndex.PHI_MINUS):
        amps[0b00] = _SQRT_HALF
        amps[0b11] = _SQRT_HALF if index == BellIndex.PHI_PLUS else -_SQRT_HALF
    else:
        amps[0b01] = _SQRT_HALF
        amps[0b10] = _SQRT_HALF if index == BellIndex.PSI_PLUS else -_SQRT_HALF
    return StateVector(amps)


# Correction applied to the receiving qubit after outcome m (Pauli products).
_I2 = np.eye(2)
_X = np.array([[0, 1], [1, 0]], dtype=complex)
_Z = np.array([[1, 0], [0, -1]], dtype=complex)
TELEPORT_CORRECTIONS: dict[int, np.ndarray] = {0: _I2, 1: _Z, 2: _X, 3: _Z @ _X}
# Local unitary on Bob's outer qubit mapping the swapped pair onto Bell_m.
# Identity for every m under the bell_state convention above.
SWAP_CORRECTIONS: dict[int, np.ndarray] = {m: _I2 for m in range(4)}


@dataclass(frozen=True)
class SettingsMap:
    """Measurement angles for Alice's and Bob's two setting choices."""

    alice: tuple[MeasurementSetting, MeasurementSetting]
    bob: tuple[MeasurementSetting, MeasurementSetting]

    @classmethod
    def from_angles(cls, a0: float, a1: float, b0: float, b1: float) -> "SettingsMap":
        return cls((MeasurementSetting(a0), MeasurementSetting(a1)), (MeasurementSetting(b0), MeasurementSetting(b1)))

    def angles(self) -> tuple[float, float, float, float]:
        return (self.alice[0].angle, self.alice[1].angle, self.bob[0].angle, self.bob[1].angle)

    def to_dict(self) -> dict[str, float]:
        return dict(zip(("theta_a0", "theta_a1", "theta_b0", "theta_b1"), self.angles()))


# Optimal for PHI_PLUS with the plain CHSH form; the other Bell states reach
# 2*sqrt(2) at the same angles under the relabelings in stats.CHSH_SIGNS.
CHSH_OPTIMAL = SettingsMap.from_angles(0.0, math.pi / 4, math.pi / 8, -math.pi / 8)


class SelectionKind(str, enum.Enum):
    NONE = "none"
    POSTSELECTED = "postselected"
    CONSTRAINED = "constrained"
    PRESELECTED = "preselected"


@dataclass(frozen=True)
class Selection:
    kind: SelectionKind = SelectionKind.NONE
    value: int | None = None

    def __post_init__(self):
        if (self.kind == SelectionKind.NONE) != (self.value is None):
            raise ValueError("selection value is required iff a selection is made")
        if self.value is not None:
            BellIndex(self.value)

    def __str__(self):
        return "none" if self.value is None else f"{self.kind.value}(collider={self.value})"


@dataclass(frozen=True)
class RunRecord:
    a: int
    b: int
    A: int
    B: int
    collider: int | None = None


@dataclass(frozen=True, eq=False)
class Ensemble:
    """Columnar store of runs plus the selection that produced them."""

    a: np.ndarray
    b: np.ndarray
    A: np.ndarray
    B: np.ndarray
    collider: np.ndarray | None
    selection: Selection
    settings_map: SettingsMap
    trial_index: np.ndarray | None = None

    def __post_init__(self):
        cols = {}
        for name in ("a", "b", "A", "B"):
            col = np.asarray(getattr(self, name), dtype=np.int8)
            if col.size and (col.min() < 0 or col.max() > 1):
                raise ValueError(f"field {name} outside {{0, 1}}")
            cols[name] = col
        sizes = {c.size for c in cols.values()}
        if len(sizes) != 1:
            raise ValueError("ragged ensemble columns")
        for name, col in cols.items():
            col.flags.writeable = False
            object.__setattr__(self, name, col)
        if self.collider is not None:
            coll = np.asarray(self.collider, dtype=np.int8)
            if coll.size != cols["a"].size or (coll.size and (coll.min() < 0 or coll.max() > 3)):
                raise ValueError("collider column invalid")
            coll.flags.writeable = False
            object.__setattr__(self, "collider", coll)
        if self.selection.value is not None:
            if self.collider is None or np.any(self.collider != self.selection.value):
                raise ValueError(f"runs disagree with selection {self.selection}")

    def __len__(self) -> int:
        return int(self.a.size)

    def __getitem__(self, i: int) -> RunRecord:
        c = None if self.collider is None else int(self.collider[i])
        return RunRecord(int(self.a[i]), int(self.b[i]), int(self.A[i]), int(self.B[i]), c)

    @property
    def runs(self) -> Iterator[RunRecord]:
        return (self[i] for i in range(len(self)))

    def column(self, name: str) -> np.ndarray:
        if name in ("a", "b", "A", "B"):
            return getattr(self, name)
        if name in ("M", "C", "collider") and self.collider is not None:
            return self.collider
        raise KeyError(name)

    def subset(self, mask: np.ndarray, selection: Selection) -> "Ensemble":
        return Ensemble(
            self.a[mask], self.b[mask], self.A[mask], self.B[mask],
            None if self.collider is None else self.collider[mask],
            selection, self.settings_map,
            None if self.trial_index is None else self.trial_index[mask],
        )

    @classmethod
    def from_records(cls, records: Sequence[RunRecord], selection: Selection = Selection(), settings_map=CHSH_OPTIMAL):
        cols = list(zip(*[(r.a, r.b, r.A, r.B) for r in records])) or [(), (), (), ()]
        colliders = [r.collider for r in records]
        has = {c is not None for c in colliders}
        if len(has) > 1:
            raise ValueError("collider present on some runs only")
        coll = np.array(colliders) if has == {True} else None
        return cls(*(np.array(c) for c in cols), coll, selection, settings_map)

    @classmethod
    def concat(cls, parts: Sequence["Ensemble"]) -> "Ensemble":
        first = parts[0]
        return cls(
            np.concatenate([p.a for p in parts]),
            np.concatenate([p.b for p in parts]),
            np.concatenate([p.A for p in parts]),
            np.concatenate([p.B for p in parts]),
            None if first.collider is None else np.concatenate([p.collider for p in parts]),
            first.selection,
            first.settings_map,
            None if first.trial_index is None else np.concatenate([p.trial_index for p in parts]),
        )


# -- preparation / modes ---------------------------------------------------

@dataclass(frozen=True)
class Fixed:
    index: BellIndex

    def __post_init__(self):
        object.__setattr__(self, "index", BellIndex(self.index))


@dataclass(frozen=True)
class UniformRandom:
    pass


class WVariant(str, enum.Enum):
    UNSELECTED = "unselected"
    POSTSELECT = "postselect"
    CONSTRAINED = "constrained"


@dataclass(frozen=True)
class WMode:
    variant: WVariant
    index: BellIndex | None = None

    def __post_init__(self):
        variant = WVariant(self.variant)
        object.__setattr__(self, "variant", variant)
        if variant == WVariant.UNSELECTED:
            if self.index is not None:
                raise ValueError("unselected mode takes no Bell index")
        else:
            if self.index is None:
                raise ValueError(f"{variant.value} mode needs a Bell index")
            object.__setattr__(self, "index", BellIndex(self.index))

    @classmethod
    def unselected(cls):
        return cls(WVariant.UNSELECTED)

    @classmethod
    def postselect(cls, m):
        return cls(WVariant.POSTSELECT, m)

    @classmethod
    def constrained(cls, m):
        return cls(WVariant.CONSTRAINED, m)


# -- measurement primitives ------------------------------------------------

def bell_probabilities(state: StateVector, qubits: tuple[int, int]) -> np.ndarray:
    qubits = tuple(qubits)
    if state.n < 2 or len(qubits) != 2 or qubits[0] == qubits[1]:
        raise ValueError("Bell measurement needs two distinct qubits of a >=2-qubit state")
    probs = np.empty(4)
    for m in range(4):
        t = bell_state(m).amplitudes
        raw = qcore.apply_operator(state, np.outer(t, t.conj()), qubits)
        probs[m] = float(np.vdot(raw, raw).real)
    return probs


def bell_project(state: StateVector, qubits: tuple[int, int], m) -> tuple[float, StateVector]:
    """Deterministic projection onto Bell_m (the locked-collider update)."""
    return qcore.project(state, qubits, bell_state(m))


def bell_measure(state: StateVector, qubits: tuple[int, int], rng) -> tuple[BellIndex, StateVector]:
    """Born-rule Bell-basis measurement consuming one uniform (inverse CDF over m)."""
    probs = bell_probabilities(state, qubits)
    u = rng.random()
    m = int(np.searchsorted(np.cumsum(probs), u, side="right"))
    m = min(m, 3)
    _, post = bell_project(state, qubits, m)
    return BellIndex(m), post


def w_source_state() -> StateVector:
    return qcore.tensor(bell_state(0), bell_state(0))


def swapped_outer_state(m) -> StateVector:
    """State of the outer pair (0, 3) after locking the inner pair (1, 2) to Bell_m."""
    _, post = bell_project(w_source_state(), (1, 2), m)
    _, outer = qcore.contract(post, (1, 2), bell_state(m))
    return qcore.apply_unitary(outer, SWAP_CORRECTIONS[int(m)], [1])


# -- exact conditional tables ----------------------------------------------

def _sequential_tables(state: StateVector, wings: tuple[int, int], settings: SettingsMap, joint: tuple[int, int] | None):
    """P(A=0|a,b), P(B=0|a,b,A) and, if ``joint`` is given, P(M|a,b,A,B).

    Built with the same qcore projections the sequential engine walks
    through, in the same order.
    """
    pa0 = np.zeros((2, 2))
    pb0 = np.zeros((2, 2, 2))
    pm = np.zeros((2, 2, 2, 2, 4))
    for a, b in itertools.product((0, 1), repeat=2):
        sa, sb = settings.alice[a], settings.bob[b]
        pa0[a, b] = qcore.outcome_probability(state, wings[0], sa, 0)
        for A in (0, 1):
            pA = pa0[a, b] if A == 0 else 1 - pa0[a, b]
            if pA < qcore.IMPOSSIBLE_TOL:
                pb0[a, b, A] = 0.5
                pm[a, b, A] = 0.25
                continue
            _, after_a = qcore.project_angle(state, wings[0], sa, A)
            pb0[a, b, A] = qcore.outcome_probability(after_a, wings[1], sb, 0)
            if joint is None:
                continue
            for B in (0, 1):
                pB = pb0[a, b, A] if B == 0 else 1 - pb0[a, b, A]
                if pB < qcore.IMPOSSIBLE_TOL:
                    pm[a, b, A, B] = 0.25
                    continue
                _, after_b = qcore.project_angle(after_a, wings[1], sb, B)
                pm[a, b, A, B] = bell_probabilities(after_b, joint)
    return pa0, pb0, pm


def joint_table(state: StateVector, wings: tuple[int, int], settings: SettingsMap) -> np.ndarray:
    """Exact P(a, b, A, B) with uniform settings."""
    pa0, pb0, _ = _sequential_tables(state, wings, settings, None)
    out = np.zeros((2, 2, 2, 2))
    for a, b, A, B in itertools.product((0, 1), repeat=4):
        pA = pa0[a, b] if A == 0 else 1 - pa0[a, b]
        pB = pb0[a, b, A] if B == 0 else 1 - pb0[a, b, A]
        out[a, b, A, B] = 0.25 * pA * pB
    return out


def bell_conditional_table(m, settings: SettingsMap = CHSH_OPTIMAL) -> np.ndarray:
    """Exact P(a, b, A, B) for wings measured on Bell_m with uniform settings."""
    return joint_table(bell_state(m), (0, 1), settings)


def quantum_conditionals(settings: SettingsMap = CHSH_OPTIMAL) -> np.ndarray:
    """``q[m, a, b, A, B] = P_m(A, B | a, b)`` for the four Bell states."""
    return np.stack([4.0 * bell_conditional_table(m, settings) for m in range(4)])


def w_unselected_table(settings: SettingsMap = CHSH_OPTIMAL) -> np.ndarray:
    """Exact P(a, b, A, B, M) for the unselected W experiment."""
    pa0, pb0, pm = _sequential_tables(w_source_state(), (0, 3), settings, (1, 2))
    out = np.zeros((2, 2, 2, 2, 4))
    for a, b, A, B in itertools.product((0, 1), repeat=4):
        pA = pa0[a, b] if A == 0 else 1 - pa0[a, b]
        pB = pb0[a, b, A] if B == 0 else 1 - pb0[a, b, A]
        out[a, b, A, B] = 0.25 * pA * pB * pm[a, b, A, B]
    return out


def exact_chsh(table: np.ndarray, signs) -> float:
    from .stats import chsh

    return chsh(table, signs).value


def optimal_settings(m, steps: int = 32) -> tuple[SettingsMap, float, tuple[int, int, int, int]]:
    """Grid search of the exact CHSH value for Bell_m over real-plane angles.

    Returns the first maximizing settings map, its S and its sign pattern.
    """
    from .stats import SIGN_PATTERNS

    state = bell_state(m).amplitudes.real.reshape(2, 2)
    theta = np.arange(steps) * math.pi / steps
    c, s = np.cos(theta), np.sin(theta)
    # u[outcome, angle, component]
    u = np.stack([np.stack([c, s], -1), np.stack([-s, c], -1)])
    amp = np.einsum("xai,ij,ybj->xyab", u, state, u)
    p = amp**2
    e = p[0, 0] + p[1, 1] - p[0, 1] - p[1, 0]  # e[angle_a, angle_b]
    best = (-np.inf, None, None)
    for signs in SIGN_PATTERNS:
        s00, s01, s10, s11 = signs
        total = (
            s00 * e[:, None, :, None] + s01 * e[:, None, None, :]
            + s10 * e[None, :, :, None] + s11 * e[None, :, None, :]
        )
        idx = np.unravel_index(int(np.argmax(total)), total.shape)
        if total[idx] > best[0] + 1e-12:
            best = (float(total[idx]), idx, signs)
    value, (ia0, ia1, ib0, ib1), signs = best
    return SettingsMap.from_angles(theta[ia0], theta[ia1], theta[ib0], theta[ib1]), value, signs


# -- trial engines ---------------------------------------------------------

def _settings_from(u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return (u[:, SLOT_A_SETTING] >= 0.5).astype(np.int8), (u[:, SLOT_B_SETTING] >= 0.5).astype(np.int8)


def _prep_from(u: np.ndarray) -> np.ndarray:
    return np.minimum((u[:, SLOT_PREP] * 4).astype(np.int8), 3)


def _inverse_cdf(u: np.ndarray, probs: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(probs, axis=-1)
    return np.minimum((u[:, None] >= cdf).sum(axis=1), probs.shape[-1] - 1).astype(np.int8)


def _v_block(stream: RandomStream, lo: int, hi: int, prep, settings: SettingsMap, tables) -> dict:
    u = stream.block(lo, hi)
    a, b = _settings_from(u)
    c = np.full(hi - lo, int(prep.index), dtype=np.int8) if isinstance(prep, Fixed) else _prep_from(u)
    pa0, pb0 = tables
    A = (u[:, SLOT_OUTCOMES] >= pa0[c, a, b]).astype(np.int8)
    B = (u[:, SLOT_OUTCOMES + 1] >= pb0[c, a, b, A]).astype(np.int8)
    return dict(a=a, b=b, A=A, B=B, collider=c, trial_index=np.arange(lo, hi))


def _v_trial(stream: RandomStream, t: int, prep, settings: SettingsMap) -> RunRecord:
    draws = stream.trial(t)
    a = int(draws.random() >= 0.5)
    b = int(draws.random() >= 0.5)
    u_prep = draws.random()
    c = int(prep.index) if isinstance(prep, Fixed) else min(int(u_prep * 4), 3)
    state = bell_state(c)
    A, state = qcore.measure_angle(state, 0, settings.alice[a], draws)
    B, state = qcore.measure_angle(state, 1, settings.bob[b], draws)
    return RunRecord(a, b, A, B, c)


def _w_block(stream: RandomStream, lo: int, hi: int, mode: WMode, tables) -> dict:
    u = stream.block(lo, hi)
    a, b = _settings_from(u)
    if mode.variant == WVariant.CONSTRAINED:
        pa0, pb0 = tables[int(mode.index)]
        A = (u[:, SLOT_OUTCOMES] >= pa0[a, b]).astype(np.int8)
        B = (u[:, SLOT_OUTCOMES + 1] >= pb0[a, b, A]).astype(np.int8)
        M = np.full(hi - lo, int(mode.index), dtype=np.int8)
    else:
        pa0, pb0, pm = tables
        A = (u[:, SLOT_OUTCOMES] >= pa0[a, b]).astype(np.int8)
        B = (u[:, SLOT_OUTCOMES + 1] >= pb0[a, b, A]).astype(np.int8)
        M = _inverse_cdf(u[:, SLOT_OUTCOMES + 2], pm[a, b, A, B])
    return dict(a=a, b=b, A=A, B=B, collider=M, trial_index=np.arange(lo, hi))


def _w_trial(stream: RandomStream, t: int, mode: WMode, settings: SettingsMap) -> RunRecord:
    draws = stream.trial(t)
    a = int(draws.random() >= 0.5)
    b = int(draws.random() >= 0.5)
    draws.skip()  # preparation slot, unused by W
    state = w_source_state()
    if mode.variant == WVariant.CONSTRAINED:
        # locked collider: the inner pair is Bell_m in every history
        _, state = bell_project(state, (1, 2), mode.index)
    A, state = qcore.measure_angle(state, 0, settings.alice[a], draws)
    B, state = qcore.measure_angle(state, 3, settings.bob[b], draws)
    if mode.variant == WVariant.CONSTRAINED:
        M = int(mode.index)
    else:
        M, state = bell_measure(state, (1, 2), draws)
    return RunRecord(a, b, A, B, int(M))


def _records_to_cols(records: list[RunRecord], lo: int) -> dict:
    return dict(
        a=np.array([r.a for r in records], dtype=np.int8),
        b=np.array([r.b for r in records], dtype=np.int8),
        A=np.array([r.A for r in records], dtype=np.int8),
        B=np.array([r.B for r in records], dtype=np.int8),
        collider=np.array([r.collider for r in records], dtype=np.int8),
        trial_index=np.arange(lo, lo + len(records)),
    )


def _merge(parts: list[dict]) -> dict:
    return {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}


def _check_engine(engine: str) -> None:
    if engine not in ("vectorized", "sequential"):
        raise ValueError(f"unknown engine {engine!r}")


@dataclass
class VUniformResult:
    unselected: Ensemble
    by_preparation: tuple[Ensemble, Ensemble, Ensemble, Ensemble] = field(default=())


def run_v(prep, n_trials: int, settings_map: SettingsMap = CHSH_OPTIMAL, rng: RandomStream | None = None,
          partitions: int = 1, workers: int = 1, engine: str = "vectorized"):
    """V-shaped experiment: an entangled pair from C, measured at both wings.

    ``Fixed(c)`` returns one ensemble preselected on C=c. ``UniformRandom()``
    draws C per trial and returns the unselected ensemble together with the
    four ensembles postselected on each recorded C.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    if not isinstance(prep, (Fixed, UniformRandom)):
        raise TypeError("prep must be Fixed(index) or UniformRandom()")
    _check_engine(engine)
    rng = rng if rng is not None else RandomStream(0)
    plan = partition_plan(n_trials, partitions)
    if engine == "vectorized":
        tables = [
            _sequential_tables(bell_state(c), (0, 1), settings_map, None)[:2] for c in range(4)
        ]
        pa0 = np.stack([t[0] for t in tables])
        pb0 = np.stack([t[1] for t in tables])
        parts = map_partitions(lambda lo, hi: _v_block(rng, lo, hi, prep, settings_map, (pa0, pb0)), plan, workers)
    else:
        parts = map_partitions(
            lambda lo, hi: _records_to_cols([_v_trial(rng, t, prep, settings_map) for t in range(lo, hi)], lo),
            plan, workers,
        )
    cols = _merge(parts)
    if isinstance(prep, Fixed):
        return Ensemble(selection=Selection(SelectionKind.PRESELECTED, int(prep.index)), settings_map=settings_map, **cols)
    full = Ensemble(selection=Selection(), settings_map=settings_map, **cols)
    subs = tuple(full.subset(full.collider == c, Selection(SelectionKind.POSTSELECTED, c)) for c in range(4))
    return VUniformResult(full, subs)


def run_w(mode: WMode, n_trials: int, settings_map: SettingsMap = CHSH_OPTIMAL, rng: RandomStream | None = None,
          partitions: int = 1, workers: int = 1, engine: str = "vectorized") -> Ensemble:
    """W-shaped delayed-choice entanglement swapping.

    Postselect(m) keeps the first ``n_trials`` runs (by trial index) whose
    joint outcome is m; Constrained(m) samples the law given M=m directly,
    so there are no discarded runs.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    if not isinstance(mode, WMode):
        raise TypeError("mode must be a WMode")
    _check_engine(engine)
    rng = rng if rng is not None else RandomStream(0)

    if engine == "vectorized":
        if mode.variant == WVariant.CONSTRAINED:
            tables = {}
            for m in range(4):
                _, locked = bell_project(w_source_state(), (1, 2), m)
                tables[m] = _sequential_tables(locked, (0, 3), settings_map, None)[:2]
        else:
            tables = _sequential_tables(w_source_state(), (0, 3), settings_map, (1, 2))

        def block(lo, hi):
            return _w_block(rng, lo, hi, mode, tables)
    else:
        def block(lo, hi):
            return _records_to_cols([_w_trial(rng, t, mode, settings_map) for t in range(lo, hi)], lo)

    if mode.variant != WVariant.POSTSELECT:
        cols = _merge(map_partitions(block, partition_plan(n_trials, partitions), workers))
        sel = Selection() if mode.variant == WVariant.UNSELECTED else Selection(SelectionKind.CONSTRAINED, int(mode.index))
        return Ensemble(selection=sel, settings_map=settings_map, **cols)

    m = int(mode.index)
    kept: list[dict] = []
    n_kept, start = 0, 0
    while n_kept < n_trials:
        # raw trials needed ~ 4x the kept count; overshoot slightly
        batch = max(int((n_trials - n_kept) * 4.2) + 64, 256)
        cols = _merge(map_partitions(block, partition_plan(batch, partitions, start), workers))
        mask = cols["collider"] == m
        kept.append({k: v[mask] for k, v in cols.items()})
        n_kept += int(mask.sum())
        start += batch
    cols = {k: v[:n_trials] for k, v in _merge(kept).items()}
    return Ensemble(selection=Selection(SelectionKind.POSTSELECTED, m), settings_map=settings_map, **cols)


def teleport(input_state: StateVector, locked_m=None, rng=None, correct: bool = False) -> tuple[BellIndex, StateVector]:
    """Teleport one qubit through a PHI_PLUS pair.

    With ``locked_m`` set, the Bell measurement on (input, pair half) is
    replaced by projection onto Bell_locked_m; otherwise the outcome is
    sampled with ``rng``. The correction for the outcome is applied only
    when ``correct`` is true. Returns (outcome, state of the receiving qubit).
    """
    if input_state.n != 1:
        raise ValueError("teleportation input must be a single qubit")
    state = qcore.tensor(input_state, bell_state(0))
    if locked_m is None:
        if rng is None:
            raise ValueError("an unconstrained teleportation needs an rng")
        m, state = bell_measure(state, (0, 1), rng)
    else:
        m = BellIndex(locked_m)
        _, state = bell_project(state, (0, 1), m)
    _, out = qcore.contract(state, (0, 1), bell_state(m))
    if correct:
        out = qcore.apply_unitary(out, TELEPORT_CORRECTIONS[int(m)], [0])
    return m, out


def teleport_constrained(input_state: StateVector, locked_m, rng=None, correct: bool = False) -> StateVector:
    """Output qubit when the joint measurement is locked to ``locked_m``.

    ``rng`` is accepted for interface symmetry; the locked projection is
    deterministic. Without correction only ``locked_m=0`` reproduces the input.
    """
    return teleport(input_state, BellIndex(locked_m), rng, correct)[1]


def random_qubit(gen: np.random.Generator) -> StateVector:
    """Haar-random single-qubit state."""
    z = gen.normal(size=2) + 1j * gen.normal(size=2)
    return StateVector.normalized(z)


def no_signalling(ensemble, n_sigma: float = 4.0) -> NoSignallingReport:
    """Does either wing's outcome marginal depend on the other wing's setting?"""
    if len(ensemble) == 0:
        raise ValueError("empty ensemble")
    return no_signalling_table(tabulate(ensemble), n_sigma)


def selection_sign_convention(ensemble: Ensemble) -> int:
    """Bell index whose CHSH relabeling applies to an ensemble (0 when unselected)."""
    return 0 if ensemble.selection.value is None else int(ensemble.selection.value)
