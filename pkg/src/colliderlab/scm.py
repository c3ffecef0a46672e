"""Finite structural causal models with colliders, locks and counterfactuals.

Every variable carries its own finite noise distribution and a deterministic
structural function ``fn(parent_values, u)``. Root "choice" variables use the
identity function, so intervening on them means replacing their noise,
which keeps intervened rows consistent with the model.

The noise joint is small enough to enumerate outright (a few thousand cells
at most), so every conditional law used here, including the locked-collider
law, is sampled exactly rather than by rejection.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass
from graphlib import CycleError, TopologicalSorter
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from .rng import RandomStream, SLOTS, map_partitions, partition_plan


class SCMError(ValueError):
    pass


class InfeasibleConstraintError(SCMError):
    """A lock (possibly together with an intervention) has zero probability."""


class EmptySelectionError(SCMError):
    pass


def identity(_parents: Mapping[str, Any], u: Any) -> Any:
    return u


@dataclass(frozen=True)
class Variable:
    name: str
    domain: tuple
    noise_support: tuple
    noise_probs: tuple[float, ...]
    fn: Callable[[Mapping[str, Any], Any], Any] = identity
    parents: tuple[str, ...] = ()

    def __post_init__(self):
        if len(self.noise_support) != len(self.noise_probs):
            raise SCMError(f"{self.name}: noise support and probabilities differ in length")
        probs = np.asarray(self.noise_probs, dtype=float)
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-12:
            raise SCMError(f"{self.name}: noise probabilities must be non-negative and sum to 1")

    @property
    def settable(self) -> bool:
        return not self.parents and self.fn is identity


def choice(name: str, domain: Sequence, probs: Sequence[float] | None = None) -> Variable:
    """Root variable whose value is its own noise draw."""
    domain = tuple(domain)
    probs = tuple(probs) if probs is not None else tuple([1.0 / len(domain)] * len(domain))
    return Variable(name, domain, domain, probs)


def bernoulli(name: str, p: float) -> Variable:
    return choice(name, (0, 1), (1 - p, p))


@dataclass(frozen=True)
class Constraint:
    variable: str
    value: Any

    def __str__(self):
        return f"{self.variable}={self.value}"


@dataclass(frozen=True)
class Row:
    """One world: endogenous values plus the noise that produced them."""

    values: Mapping[str, Any]
    noise: Mapping[str, Any]

    def __getitem__(self, name: str):
        return self.values[name]


class SCM:
    def __init__(self, variables: Sequence[Variable], constraint: Constraint | None = None,
                 settings: Sequence[str] = (), name: str = "scm", meta: Mapping[str, Any] | None = None):
        self.name = name
        self.meta = dict(meta or {})
        by_name = {}
        for v in variables:
            if v.name in by_name:
                raise SCMError(f"duplicate variable {v.name}")
            by_name[v.name] = v
        for v in variables:
            for p in v.parents:
                if p not in by_name:
                    raise SCMError(f"{v.name}: unknown parent {p}")
        try:
            order = list(TopologicalSorter({v.name: v.parents for v in variables}).static_order())
        except CycleError as exc:
            raise SCMError(f"parent graph has a cycle: {exc.args[1]}") from None
        # keep declaration order where the graph allows it
        declared = [v.name for v in variables]
        self.order: tuple[str, ...] = tuple(sorted(order, key=lambda n: (self._depth(n, by_name), declared.index(n))))
        self.variables: dict[str, Variable] = {n: by_name[n] for n in self.order}
        self.settings = frozenset(settings)
        for s in self.settings:
            if s not in self.variables or not self.variables[s].settable:
                raise SCMError(f"setting {s} must be a root choice variable")
        self._enumerate()
        self.constraint = None
        if constraint is not None:
            self._check_constraint(constraint)
            self.constraint = constraint

    @staticmethod
    def _depth(name, by_name) -> int:
        parents = by_name[name].parents
        return 0 if not parents else 1 + max(SCM._depth(p, by_name) for p in parents)

    def _enumerate(self) -> None:
        names = self.order
        supports = [self.variables[n].noise_support for n in names]
        self.radix = np.array([len(s) for s in supports], dtype=np.int64)
        n_cells = int(np.prod(self.radix))
        if n_cells > 200_000:
            raise SCMError(f"noise joint has {n_cells} cells; too large to enumerate")
        noise_codes = np.array(list(itertools.product(*[range(len(s)) for s in supports])), dtype=np.int64)
        value_codes = np.empty_like(noise_codes)
        probs = np.ones(n_cells)
        self._domain_index = {n: {val: i for i, val in enumerate(self.variables[n].domain)} for n in names}
        for row_i, codes in enumerate(noise_codes):
            values = {}
            for j, n in enumerate(names):
                var = self.variables[n]
                u = var.noise_support[codes[j]]
                probs[row_i] *= var.noise_probs[codes[j]]
                val = var.fn({p: values[p] for p in var.parents}, u)
                if val not in self._domain_index[n]:
                    raise SCMError(f"{n}: structural function returned {val!r} outside its domain")
                values[n] = val
                value_codes[row_i, j] = self._domain_index[n][val]
        self.noise_codes = noise_codes
        self.value_codes = value_codes
        self.cell_probs = probs
        self._col = {n: j for j, n in enumerate(names)}

    def _code(self, name: str, value) -> int:
        if name not in self._domain_index:
            raise SCMError(f"unknown variable {name}")
        try:
            return self._domain_index[name][value]
        except KeyError:
            raise SCMError(f"{value!r} not in the domain of {name}") from None

    def _check_constraint(self, constraint: Constraint) -> None:
        code = self._code(constraint.variable, constraint.value)
        mask = self.value_codes[:, self._col[constraint.variable]] == code
        if self.cell_probs[mask].sum() <= 0:
            raise InfeasibleConstraintError(f"lock {constraint} has zero prior probability")

    def lock(self, variable: str, value) -> "SCM":
        return SCM(list(self.variables.values()), Constraint(variable, value), self.settings, self.name, self.meta)

    def unlocked(self) -> "SCM":
        return SCM(list(self.variables.values()), None, self.settings, self.name, self.meta)

    def values_of(self, name: str) -> tuple:
        return self.variables[name].domain

    def cell_mask(self, event: Mapping[str, Any]) -> np.ndarray:
        mask = np.ones(len(self.cell_probs), dtype=bool)
        for name, value in event.items():
            mask &= self.value_codes[:, self._col[name]] == self._code(name, value)
        return mask

    def probability(self, event: Mapping[str, Any], given: Mapping[str, Any] | None = None) -> float:
        """Exact probability by enumeration (ignores any lock unless put in ``given``)."""
        given = dict(given or {})
        denom = self.cell_probs[self.cell_mask(given)].sum()
        if denom <= 0:
            raise InfeasibleConstraintError(f"conditioning event {given} has zero probability")
        return float(self.cell_probs[self.cell_mask({**given, **event})].sum() / denom)

    def row_from_cell(self, cell: int) -> Row:
        values, noise = {}, {}
        for j, n in enumerate(self.order):
            var = self.variables[n]
            values[n] = var.domain[self.value_codes[cell, j]]
            noise[n] = var.noise_support[self.noise_codes[cell, j]]
        return Row(values, noise)

    def rows(self) -> list[Row]:
        """Every world in the noise joint, including zero-probability ones."""
        return [self.row_from_cell(i) for i in range(len(self.cell_probs))]

    def evaluate(self, noise: Mapping[str, Any]) -> Row:
        values = {}
        for n in self.order:
            var = self.variables[n]
            values[n] = var.fn({p: values[p] for p in var.parents}, noise[n])
        return Row(values, dict(noise))

    def __repr__(self):
        lock = f", locked {self.constraint}" if self.constraint else ""
        return f"SCM({self.name}: {', '.join(self.order)}{lock})"


class Dataset:
    """Sampled worlds over an SCM, stored as per-cell indices."""

    def __init__(self, scm: SCM, cells: np.ndarray, provenance: str):
        self.scm = scm
        self.cells = np.asarray(cells, dtype=np.int64)
        self.provenance = provenance
        self._cache: dict[str, np.ndarray] = {}

    def __len__(self) -> int:
        return int(self.cells.size)

    @property
    def variables(self) -> tuple[str, ...]:
        return self.scm.order

    def column(self, name: str) -> np.ndarray:
        if name not in self.scm._col:
            raise KeyError(name)
        if name not in self._cache:
            domain = np.asarray(self.scm.variables[name].domain)
            self._cache[name] = domain[self.scm.value_codes[self.cells, self.scm._col[name]]]
        return self._cache[name]

    def row(self, i: int) -> Row:
        return self.scm.row_from_cell(int(self.cells[i]))

    def mask(self, predicate) -> np.ndarray:
        if callable(predicate):
            mask = np.asarray(predicate(self), dtype=bool)
        else:
            mask = np.ones(len(self), dtype=bool)
            for name, value in dict(predicate).items():
                mask &= self.column(name) == value
        if mask.shape != (len(self),):
            raise SCMError("predicate must yield one boolean per row")
        return mask

    def condition(self, predicate) -> "Dataset":
        return condition(self, predicate)

    def frequency(self, event: Mapping[str, Any]) -> float:
        return float(self.mask(event).mean())


def _describe(predicate) -> str:
    if callable(predicate):
        return getattr(predicate, "__name__", "predicate")
    return ",".join(f"{k}={v}" for k, v in dict(predicate).items())


def _sample_cells(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(probs)
    cdf /= cdf[-1]
    return np.minimum(np.searchsorted(cdf, u, side="right"), len(probs) - 1)


def sample(scm: SCM, n: int, rng: RandomStream, partitions: int = 1, workers: int = 1) -> Dataset:
    """Independent draws: each variable's noise by inverse CDF, then structural functions."""
    if scm.constraint is not None:
        raise SCMError("model is locked; use sample_constrained")
    if n < 1:
        raise ValueError("n must be >= 1")
    k = len(scm.order)
    if k > SLOTS:
        raise SCMError(f"at most {SLOTS} variables per trial block")
    cdfs = [np.cumsum(scm.variables[v].noise_probs) for v in scm.order]
    weights = np.concatenate([np.cumprod(scm.radix[::-1])[::-1][1:], [1]])

    def block(lo, hi):
        u = rng.block(lo, hi)
        cell = np.zeros(hi - lo, dtype=np.int64)
        for j, cdf in enumerate(cdfs):
            code = np.minimum(np.searchsorted(cdf, u[:, j], side="right"), len(cdf) - 1)
            cell += code * weights[j]
        return cell

    cells = np.concatenate(map_partitions(block, partition_plan(n, partitions), workers))
    return Dataset(scm, cells, "sampled")


def condition(data: Dataset, predicate) -> Dataset:
    """Keep rows satisfying ``predicate`` (a ``{var: value}`` mapping or a callable on the dataset)."""
    mask = data.mask(predicate)
    if not mask.any():
        raise EmptySelectionError(f"no rows satisfy {_describe(predicate)}")
    return Dataset(data.scm, data.cells[mask], f"{data.provenance}|conditioned({_describe(predicate)})")


def _conditional_cells(scm: SCM, event: Mapping[str, Any], n: int, rng: RandomStream, what: str,
                       partitions: int = 1, workers: int = 1) -> np.ndarray:
    mask = scm.cell_mask(event)
    probs = np.where(mask, scm.cell_probs, 0.0)
    if probs.sum() <= 0:
        raise InfeasibleConstraintError(f"{what} has zero probability")
    return np.concatenate(
        map_partitions(lambda lo, hi: _sample_cells(probs, rng.block(lo, hi)[:, 0]), partition_plan(n, partitions), workers)
    )


def sample_constrained(scm: SCM, n: int, rng: RandomStream, partitions: int = 1, workers: int = 1) -> Dataset:
    """Exact draws from the noise law given the lock; there are no discarded worlds."""
    if scm.constraint is None:
        raise SCMError("model has no constraint")
    c = scm.constraint
    cells = _conditional_cells(scm, {c.variable: c.value}, n, rng, f"lock {c}", partitions, workers)
    return Dataset(scm, cells, f"constrained({c})")


def _settable(scm: SCM, variable: str) -> Variable:
    var = scm.variables.get(variable)
    if var is None:
        raise SCMError(f"unknown variable {variable}")
    if not var.settable:
        raise SCMError(f"{variable} is not an exogenously settable choice")
    return var


def _check_row(scm: SCM, row: Row) -> None:
    redo = scm.evaluate(row.noise)
    if dict(redo.values) != dict(row.values):
        raise SCMError("row is inconsistent with the structural functions")


def counterfactual_fixed_noise(scm: SCM, row: Row, intervention: tuple[str, Any]) -> Row:
    """Hold every noise term, reset the intervened choice, recompute descendants.

    Locks are ignored: this is the unconstrained (fragile) semantics.
    """
    variable, value = intervention
    var = _settable(scm, variable)
    if value not in var.domain:
        raise SCMError(f"{value!r} not in the domain of {variable}")
    _check_row(scm, row)
    return scm.evaluate({**row.noise, variable: value})


def counterfactual_constrained(scm: SCM, row: Row, intervention: tuple[str, Any], n: int, rng: RandomStream,
                               hold: Sequence[str] | None = None) -> Dataset:
    """Counterfactual worlds for a locked model, as a distribution.

    Draws noise from the prior conditioned on: the intervened choice taking
    its new value, the lock holding, and each variable in ``hold`` keeping
    its factual value. ``hold`` defaults to the model's other setting
    variables.
    """
    if scm.constraint is None:
        raise SCMError("counterfactual_constrained needs a locked model")
    c = scm.constraint
    if row.values[c.variable] != c.value:
        raise SCMError(f"row violates the lock {c}")
    _check_row(scm, row)
    variable, value = intervention
    _settable(scm, variable)
    held = sorted((set(scm.settings) if hold is None else set(hold)) - {variable})
    event = {c.variable: c.value, variable: value, **{h: row.values[h] for h in held}}
    cells = _conditional_cells(scm, event, n, rng, f"lock {c} under {variable}:={value!r}")
    return Dataset(scm, cells, f"counterfactual({variable}:={value!r}|{c}|hold={','.join(held)})")


# -- builders --------------------------------------------------------------

def build_ivy(p: float, q: float) -> SCM:
    """Admission on academic OR athletic merit; Admit is the collider."""
    if not (0 < p < 1 and 0 < q < 1):
        raise SCMError("p and q must lie strictly between 0 and 1")
    admit = Variable(
        "Admit", (0, 1), (None,), (1.0,),
        fn=lambda v, _u: int(v["Academic"] or v["Athletic"]),
        parents=("Academic", "Athletic"),
    )
    return SCM([bernoulli("Academic", p), bernoulli("Athletic", q), admit], name="ivy")


DAMASCUS, ALEPPO = 0, 1


def build_death_in_damascus() -> SCM:
    """Two fair independent city choices; Meeting = 1 iff they coincide."""
    meeting = Variable(
        "Meeting", (0, 1), (None,), (1.0,),
        fn=lambda v, _u: int(v["YourChoice"] == v["DeathChoice"]),
        parents=("YourChoice", "DeathChoice"),
    )
    return SCM(
        [choice("YourChoice", (DAMASCUS, ALEPPO)), choice("DeathChoice", (DAMASCUS, ALEPPO)), meeting],
        settings=("YourChoice",),
        name="death-in-damascus",
    )


def _bin_rule(q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Finite noise for sampling M ~ q(. | context) by a shared inverse CDF.

    The union of every context's cumulative breakpoints cuts [0, 1) into
    intervals; the noise is the interval index (weighted by length) and
    each interval maps to a single bin in every context.
    """
    ctx = q.reshape(-1, q.shape[-1])
    cdf = np.cumsum(ctx, axis=1)
    cdf[:, -1] = 1.0
    edges = np.unique(np.concatenate([[0.0], cdf[:, :-1].ravel(), [1.0]]))
    edges = edges[(edges >= 0) & (edges <= 1)]
    lengths = np.diff(edges)
    keep = lengths > 1e-15
    lefts, lengths = edges[:-1][keep], lengths[keep]
    mids = lefts + 0.5 * lengths
    lengths = lengths / lengths.sum()
    # table[context, interval] = bin
    table = np.array([np.searchsorted(c, mids, side="right") for c in cdf])
    return np.minimum(table, q.shape[-1] - 1), lengths


def build_toy_bell(settings_map=None) -> SCM:
    """Charlie's binning model: four fair coins a, b, A, B and a bin M.

    M is drawn with probability q(m | a,b,A,B) = P_m(A,B | a,b), the exact
    quantum conditional for Bell state m at the mapped angles. The four
    conditionals sum to one in every context because the uniform mixture
    of Bell states is maximally mixed.
    """
    from .bellcore import CHSH_OPTIMAL, quantum_conditionals

    settings_map = settings_map if settings_map is not None else CHSH_OPTIMAL
    qm = quantum_conditionals(settings_map)  # [m, a, b, A, B]
    q = np.moveaxis(qm, 0, -1)  # [a, b, A, B, m]
    if np.max(np.abs(q.sum(axis=-1) - 1.0)) > 1e-10:
        raise SCMError("quantum conditionals do not sum to one")
    table, lengths = _bin_rule(q)

    def bin_fn(v, u):
        ctx = ((v["a"] * 2 + v["b"]) * 2 + v["A"]) * 2 + v["B"]
        return int(table[ctx, u])

    m_var = Variable("M", (0, 1, 2, 3), tuple(range(len(lengths))), tuple(lengths.tolist()),
                     fn=bin_fn, parents=("a", "b", "A", "B"))
    scm = SCM([choice("a", (0, 1)), choice("b", (0, 1)), choice("A", (0, 1)), choice("B", (0, 1)), m_var],
              settings=("a", "b"), name="toy-bell",
              meta={"settings_map": settings_map, "bin_probabilities": q})
    return scm


class Regime(str, enum.Enum):
    INITIAL_CONTROL = "initial-control"
    EQUILIBRIUM = "equilibrium"


# (origin, branch) -> terminal; S = source, F = floor, D = detector, C = ceiling
PENROSE_ROUTES = {
    ("S", "transmit"): "D",
    ("S", "reflect"): "C",
    ("F", "transmit"): "C",
    ("F", "reflect"): "D",
}


def build_penrose_paths(regime) -> SCM:
    regime = Regime(regime)
    p_source = 1.0 if regime == Regime.INITIAL_CONTROL else 0.5
    terminal = Variable(
        "Terminal", ("D", "C"), (None,), (1.0,),
        fn=lambda v, _u: PENROSE_ROUTES[(v["Origin"], v["Branch"])],
        parents=("Origin", "Branch"),
    )
    return SCM(
        [choice("Origin", ("S", "F"), (p_source, 1 - p_source)), choice("Branch", ("transmit", "reflect")), terminal],
        name=f"penrose-{regime.value}",
    )
