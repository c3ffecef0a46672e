"""Frequency tables, correlators, CHSH and chi-square tests.

Tables are indexed ``[a, b, A, B]``: settings first, outcomes second. Most
functions accept either a :class:`FreqTable16` of counts or a raw
``(2, 2, 2, 2)`` array, so exact probability tables go through the same
estimators as sampled ones.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Any, Mapping, NamedTuple

import numpy as np
from scipy import stats as _sps

DEFAULT_ALPHA = 1e-3

# Valid CHSH forms have an odd number of minus signs over (E00, E01, E10, E11).
SIGN_PATTERNS: tuple[tuple[int, int, int, int], ...] = tuple(
    s for s in itertools.product((1, -1), repeat=4) if s.count(-1) % 2 == 1
)

# Per-Bell-index relabeling for the default settings map; regenerate with
# derive_sign_convention on exact tables (tests pin this).
CHSH_SIGNS: dict[int, tuple[int, int, int, int]] = {
    0: (1, 1, 1, -1),
    1: (1, 1, -1, 1),
    2: (-1, -1, 1, -1),
    3: (-1, -1, -1, 1),
}


class SchemaError(KeyError):
    pass


class InsufficientDataError(ValueError):
    pass


class Estimate(NamedTuple):
    value: float
    se: float


@dataclass(frozen=True, eq=False)
class FreqTable16:
    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.shape != (2, 2, 2, 2):
            raise ValueError("FreqTable16 needs a (2,2,2,2) array")
        if not np.issubdtype(counts.dtype, np.integer):
            raise TypeError("FreqTable16 counts must be integers")
        if np.any(counts < 0):
            raise ValueError("negative count")
        counts = counts.astype(np.int64)
        counts.flags.writeable = False
        object.__setattr__(self, "counts", counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: "FreqTable16") -> "FreqTable16":
        return FreqTable16(self.counts + other.counts)

    def probabilities(self) -> np.ndarray:
        return self.counts / self.total


def _columns(source) -> tuple[np.ndarray, ...]:
    if hasattr(source, "column"):
        try:
            return tuple(np.asarray(source.column(k)) for k in ("a", "b", "A", "B"))
        except KeyError as exc:
            raise SchemaError(f"source lacks column {exc}") from None
    if isinstance(source, Mapping):
        missing = [k for k in ("a", "b", "A", "B") if k not in source]
        if missing:
            raise SchemaError(f"source lacks columns {missing}")
        return tuple(np.asarray(source[k]) for k in ("a", "b", "A", "B"))
    raise SchemaError(f"cannot tabulate {type(source).__name__}")


def tabulate(source) -> FreqTable16:
    """Count (a, b, A, B) over an Ensemble, Dataset or mapping of columns."""
    if isinstance(source, FreqTable16):
        return source
    a, b, A, B = (c.astype(np.int64) for c in _columns(source))
    if a.size == 0:
        raise InsufficientDataError("nothing to tabulate")
    flat = ((a * 2 + b) * 2 + A) * 2 + B
    if flat.min() < 0 or flat.max() > 15:
        raise ValueError("fields outside {0, 1}")
    return FreqTable16(np.bincount(flat, minlength=16).reshape(2, 2, 2, 2))


def _array(table) -> np.ndarray:
    arr = table.counts if isinstance(table, FreqTable16) else np.asarray(table, dtype=float)
    if arr.shape != (2, 2, 2, 2):
        raise ValueError("expected a (2,2,2,2) table")
    return arr.astype(float)


def correlator(table, a: int, b: int) -> float:
    """E(a,b) = P(A=B | a,b) - P(A!=B | a,b)."""
    cell = _array(table)[a, b]
    n = cell.sum()
    if n <= 0:
        raise InsufficientDataError(f"empty stratum (a={a}, b={b})")
    return float((cell[0, 0] + cell[1, 1] - cell[0, 1] - cell[1, 0]) / n)


def correlator_se(table, a: int, b: int) -> float:
    n = _array(table)[a, b].sum()
    e = correlator(table, a, b)
    return math.sqrt(max(1.0 - e * e, 0.0) / n)


def correlators(table) -> np.ndarray:
    return np.array([[correlator(table, a, b) for b in (0, 1)] for a in (0, 1)])


def _signs(sign_convention) -> tuple[int, int, int, int]:
    if sign_convention is None:
        return CHSH_SIGNS[0]
    if isinstance(sign_convention, (int, np.integer)):
        return CHSH_SIGNS[int(sign_convention)]
    signs = tuple(int(s) for s in sign_convention)
    if signs not in SIGN_PATTERNS:
        raise ValueError(f"{signs} is not a CHSH sign pattern")
    return signs


def chsh(table, sign_convention=None) -> Estimate:
    """S = sum of signed correlators; ``sign_convention`` is a pattern or a Bell index."""
    signs = _signs(sign_convention)
    value, var = 0.0, 0.0
    for s, (a, b) in zip(signs, itertools.product((0, 1), repeat=2)):
        value += s * correlator(table, a, b)
        var += correlator_se(table, a, b) ** 2
    return Estimate(value, math.sqrt(var))


def derive_sign_convention(table) -> tuple[int, int, int, int]:
    """Sign pattern maximizing S on a (typically exact) table; ties go to the first pattern."""
    e = correlators(table).ravel()
    scores = [float(np.dot(s, e)) for s in SIGN_PATTERNS]
    return SIGN_PATTERNS[int(np.argmax(scores))]


def lhv_chsh_bound() -> float:
    """Max |S| over every deterministic local strategy and every CHSH form."""
    # a local strategy is a pair of response tables A(a), B(b)
    responses = list(itertools.product((0, 1), repeat=2))
    best = 0.0
    for fa, fb in itertools.product(responses, repeat=2):
        table = np.zeros((2, 2, 2, 2))
        for a, b in itertools.product((0, 1), repeat=2):
            table[a, b, fa[a], fb[b]] = 1.0
        for signs in SIGN_PATTERNS:
            best = max(best, abs(chsh(table, signs).value))
    return best


class CheckResult(NamedTuple):
    name: str
    statistic: float
    p_value: float
    passed: bool
    df: int = 0


def chi_square_match(table, target_probs, alpha: float = DEFAULT_ALPHA, name: str = "chi_square_match") -> CheckResult:
    """Pearson goodness of fit of (A,B) within each (a,b) stratum.

    Expected counts are ``n_ab * target(A,B | a,b)``; a nonzero count in a
    zero-expectation cell fails outright.
    """
    observed = _array(table)
    target = np.asarray(target_probs, dtype=float).reshape(2, 2, 2, 2)
    if np.any(target < 0) or abs(target.sum() - 1.0) > 1e-9:
        raise ValueError("target probabilities must be non-negative and sum to 1")
    stat, df = 0.0, 0
    for a, b in itertools.product((0, 1), repeat=2):
        n_ab = observed[a, b].sum()
        t_ab = target[a, b].sum()
        if n_ab == 0:
            continue
        if t_ab <= 0:
            return CheckResult(name, math.inf, 0.0, False, df)
        expected = n_ab * target[a, b] / t_ab
        support = expected > 0
        if np.any(observed[a, b][~support] > 0):
            return CheckResult(name, math.inf, 0.0, False, df)
        stat += float((((observed[a, b] - expected) ** 2)[support] / expected[support]).sum())
        df += int(support.sum()) - 1
    if df == 0:
        return CheckResult(name, stat, 1.0, True, 0)
    p = float(_sps.chi2.sf(stat, df))
    return CheckResult(name, stat, p, p >= alpha, df)


def homogeneity_test(table_x, table_y, alpha: float = DEFAULT_ALPHA, name: str = "homogeneity") -> CheckResult:
    """Two-sample chi-square: same (A,B | a,b) law in both tables, stratum by stratum."""
    x, y = _array(table_x), _array(table_y)
    stat, df = 0.0, 0
    for a, b in itertools.product((0, 1), repeat=2):
        rows = np.vstack([x[a, b].ravel(), y[a, b].ravel()])
        rows = rows[:, rows.sum(axis=0) > 0]
        if rows.shape[1] < 2 or np.any(rows.sum(axis=1) == 0):
            continue
        res = _sps.chi2_contingency(rows, correction=False)
        stat += float(res.statistic)
        df += int(res.dof)
    if df == 0:
        return CheckResult(name, stat, 1.0, True, 0)
    p = float(_sps.chi2.sf(stat, df))
    return CheckResult(name, stat, p, p >= alpha, df)


def contingency(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, list, list]:
    xs, xi = np.unique(np.asarray(x), return_inverse=True)
    ys, yi = np.unique(np.asarray(y), return_inverse=True)
    table = np.zeros((len(xs), len(ys)), dtype=np.int64)
    np.add.at(table, (xi, yi), 1)
    return table, xs.tolist(), ys.tolist()


def independence_test(dataset, var_x: str, var_y: str, given=None, alpha: float = DEFAULT_ALPHA) -> CheckResult:
    """Chi-square independence of two columns, optionally after conditioning.

    ``given`` is anything ``dataset.condition`` accepts. A variable that is
    constant in the (conditioned) data cannot covary, so the test passes.
    """
    data = dataset if given is None else dataset.condition(given)
    table, _, _ = contingency(data.column(var_x), data.column(var_y))
    name = f"independence({var_x},{var_y}{'' if given is None else ' | given'})"
    if table.shape[0] < 2 or table.shape[1] < 2:
        return CheckResult(name, 0.0, 1.0, True, 0)
    res = _sps.chi2_contingency(table, correction=False)
    p = float(res.pvalue)
    return CheckResult(name, float(res.statistic), p, p >= alpha, int(res.dof))


def two_proportion_test(k1: int, n1: int, k2: int, n2: int, alpha: float = DEFAULT_ALPHA, name: str = "two_proportion"):
    """Pooled two-sided z test; ``passed`` means the proportions differ at ``alpha``."""
    p1, p2 = k1 / n1, k2 / n2
    pooled = (k1 + k2) / (n1 + n2)
    se = math.sqrt(pooled * (1 - pooled) * (1 / n1 + 1 / n2))
    if se == 0:
        z = 0.0 if p1 == p2 else math.inf
    else:
        z = (p1 - p2) / se
    p = float(2 * _sps.norm.sf(abs(z)))
    return CheckResult(name, z, p, p < alpha, 0)


@dataclass
class NoSignallingReport:
    max_deviation: float
    max_sigma: float
    passed: bool
    n_sigma: float
    details: list[dict[str, Any]] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "max_deviation": self.max_deviation,
            "max_sigma": self.max_sigma,
            "passed": self.passed,
            "n_sigma": self.n_sigma,
            "details": self.details,
        }


def no_signalling_table(table, n_sigma: float = 4.0) -> NoSignallingReport:
    """Compare each wing's outcome marginal across the other wing's two settings."""
    t = _array(table)
    details = []
    for wing in ("A", "B"):
        for own in (0, 1):
            if wing == "A":
                # P(A=0 | a=own, b) for b = 0, 1
                counts = [(t[own, b, 0, :].sum(), t[own, b].sum()) for b in (0, 1)]
            else:
                counts = [(t[a, own, :, 0].sum(), t[a, own].sum()) for a in (0, 1)]
            (k0, n0), (k1, n1) = counts
            if n0 == 0 or n1 == 0:
                raise InsufficientDataError(f"empty stratum for wing {wing}")
            dev = abs(k0 / n0 - k1 / n1)
            pooled = (k0 + k1) / (n0 + n1)
            se = math.sqrt(pooled * (1 - pooled) * (1 / n0 + 1 / n1))
            sigma = 0.0 if dev == 0 else (math.inf if se == 0 else dev / se)
            details.append({"wing": wing, "own_setting": own, "deviation": dev, "sigma": sigma})
    max_dev = max(d["deviation"] for d in details)
    max_sigma = max(d["sigma"] for d in details)
    return NoSignallingReport(max_dev, max_sigma, max_sigma < n_sigma, n_sigma, details)


@dataclass
class StatReport:
    total: int
    chsh: Estimate | None = None
    correlators: list[list[Estimate]] | None = None
    no_signalling: NoSignallingReport | None = None
    tests: list[CheckResult] = field(default_factory=list)
    quantities: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"total": self.total}
        if self.chsh is not None:
            out["chsh"] = {"value": self.chsh.value, "se": self.chsh.se}
        if self.correlators is not None:
            out["correlators"] = {
                f"E{a}{b}": {"value": self.correlators[a][b].value, "se": self.correlators[a][b].se}
                for a in (0, 1)
                for b in (0, 1)
            }
        if self.no_signalling is not None:
            out["no_signalling"] = self.no_signalling.to_dict()
        out["tests"] = [
            {"name": t.name, "statistic": _jsonable(t.statistic), "p_value": t.p_value, "passed": bool(t.passed), "df": t.df}
            for t in self.tests
        ]
        out["quantities"] = self.quantities
        return out

    @property
    def passed(self) -> bool:
        return all(t.passed for t in self.tests)


def _jsonable(x: float):
    return x if math.isfinite(x) else str(x)


def bell_report(source, sign_convention=None, n_sigma: float = 4.0) -> StatReport:
    table = tabulate(source) if not isinstance(source, FreqTable16) else source
    if np.any(table.counts.sum(axis=(2, 3)) == 0):
        # too few runs to fill every setting pair; report counts only
        return StatReport(total=table.total, quantities={"insufficient_data": True})
    corr = [[Estimate(correlator(table, a, b), correlator_se(table, a, b)) for b in (0, 1)] for a in (0, 1)]
    return StatReport(
        total=table.total,
        chsh=chsh(table, sign_convention),
        correlators=corr,
        no_signalling=no_signalling_table(table, n_sigma),
    )


def probability_estimate(successes: int, n: int) -> Estimate:
    if n == 0:
        raise InsufficientDataError("no trials")
    p = successes / n
    return Estimate(p, math.sqrt(p * (1 - p) / n))


def bonferroni(alpha: float, n_tests: int) -> float:
    return alpha / max(n_tests, 1)


__all__ = [
    "CHSH_SIGNS",
    "SIGN_PATTERNS",
    "Estimate",
    "FreqTable16",
    "StatReport",
    "CheckResult",
    "bell_report",
    "chi_square_match",
    "chsh",
    "correlator",
    "correlator_se",
    "derive_sign_convention",
    "homogeneity_test",
    "independence_test",
    "lhv_chsh_bound",
    "no_signalling_table",
    "tabulate",
    "two_proportion_test",
]
