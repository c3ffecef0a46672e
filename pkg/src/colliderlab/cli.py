"""Command-line runner for the named experiments.

    colliderlab run w-postselect --bell-index 0 --trials 1000000 --seed 42 --check
    colliderlab --list

Exit codes: 0 ok, 1 invalid configuration, 2 a ``--check`` failed,
3 infeasible constraint.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from dataclasses import asdict, dataclass, field
from typing import Any, Callable

import numpy as np
from scipy.stats import chisquare

from . import __version__
from . import bellcore as bc
from . import scm as S
from . import stats as st
from .rng import RandomStream

SCHEMA_VERSION = 1
EXIT_OK, EXIT_CONFIG, EXIT_CHECK, EXIT_INFEASIBLE = 0, 1, 2, 3
CHSH_QUANTUM = 2 * math.sqrt(2)

EXPERIMENTS: dict[str, str] = {
    "v-fixed": "Fig. 3: V-shaped case, preparation fixed at input C",
    "v-uniform": "Figs. 5-6: delayed-choice V, C drawn at random and postselected",
    "w-unselected": "Fig. 1: W-shaped DCES, all runs kept",
    "w-postselect": "Fig. 1: W-shaped DCES, postselection on outcome m at M",
    "w-constrained": "Fig. 2: W-shaped DCES, outcome at M fixed by a boundary constraint",
    "teleport": "Fig. 2 (locked M): teleportation through a locked joint measurement",
    "ivy": "Fig. M1 (collider): Ivy College admission",
    "damascus": "Fig. M1: Death in Damascus collider",
    "toy-bell": "Fig. 1 (toy analogue): four-bin coin-toss model",
    "penrose": "Fig. 8: Penrose beam-splitter retrodiction",
}
SCM_EXPERIMENTS = {"ivy", "damascus", "toy-bell", "penrose"}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    experiment: str
    trials: int = 100_000
    seed: int = 0
    bell_index: int = 0
    p: float = 0.5
    q: float = 0.5
    regime: str = "initial-control"
    mode: str | None = None
    lock: str | None = None
    out: str | None = None
    format: str = "csv"
    check: bool = False
    partitions: int = 1
    workers: int = 1

    def validate(self) -> None:
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; see --list")
        if self.trials < 1:
            raise ConfigError("--trials must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("--seed must be a 64-bit unsigned integer")
        if self.bell_index not in (0, 1, 2, 3):
            raise ConfigError("--bell-index must be 0..3")
        if not (0 < self.p < 1 and 0 < self.q < 1):
            raise ConfigError("--p and --q must lie strictly between 0 and 1")
        if self.regime not in {r.value for r in S.Regime}:
            raise ConfigError(f"--regime must be one of {[r.value for r in S.Regime]}")
        if self.format not in ("csv", "json"):
            raise ConfigError("--format must be csv or json")
        if self.partitions < 1 or self.workers < 1:
            raise ConfigError("--partitions and --workers must be >= 1")
        allowed_modes = {
            "teleport": {None, "locked", "corrected"},
            **{name: {None, "sample", "constrained"} for name in SCM_EXPERIMENTS},
        }.get(self.experiment, {None})
        if self.mode not in allowed_modes:
            raise ConfigError(f"--mode {self.mode!r} is not valid for {self.experiment}")
        if self.lock is not None:
            if self.experiment not in SCM_EXPERIMENTS:
                raise ConfigError("--lock applies to causal-model experiments only")
            if "=" not in self.lock:
                raise ConfigError("--lock expects VAR=VALUE")


@dataclass
class Outcome:
    columns: list[str]
    rows: list[tuple]
    report: st.StatReport
    checks: list[st.CheckResult] = field(default_factory=list)


def _try_chsh(source, signs) -> st.Estimate | None:
    try:
        return st.chsh(st.tabulate(source), signs)
    except st.InsufficientDataError:
        return None


def _chsh_check(name: str, estimate: st.Estimate | None, target: float) -> st.CheckResult:
    if estimate is None:
        return st.CheckResult(name, math.nan, math.nan, False)
    tol = max(0.05, 4 * estimate.se)
    dev = abs(estimate.value - target)
    return st.CheckResult(name, dev, math.nan, dev < tol)


def _ns_check(name: str, ens) -> st.CheckResult:
    try:
        ns = bc.no_signalling(ens)
    except st.InsufficientDataError:
        return st.CheckResult(name, math.nan, math.nan, False)
    return st.CheckResult(name, ns.max_sigma, math.nan, ns.passed)


def _ensemble_rows(ens: bc.Ensemble) -> list[tuple]:
    coll = ens.collider.tolist() if ens.collider is not None else [""] * len(ens)
    return list(zip(ens.a.tolist(), ens.b.tolist(), ens.A.tolist(), ens.B.tolist(), coll))


def _bell_outcome(ens: bc.Ensemble, signs: int) -> Outcome:
    report = st.bell_report(ens, signs)
    report.quantities["selection"] = str(ens.selection)
    report.quantities["settings_map"] = ens.settings_map.to_dict()
    report.quantities["sign_convention"] = list(st.CHSH_SIGNS[signs])
    return Outcome(["a", "b", "A", "B", "M"], _ensemble_rows(ens), report)


def _run_v_fixed(cfg, rng):
    ens = bc.run_v(bc.Fixed(cfg.bell_index), cfg.trials, rng=rng, partitions=cfg.partitions, workers=cfg.workers)
    out = _bell_outcome(ens, cfg.bell_index)
    out.checks = [_chsh_check("chsh_quantum", out.report.chsh, CHSH_QUANTUM), _ns_check("no_signalling", ens)]
    return out


def _run_v_uniform(cfg, rng):
    res = bc.run_v(bc.UniformRandom(), cfg.trials, rng=rng, partitions=cfg.partitions, workers=cfg.workers)
    out = _bell_outcome(res.unselected, 0)
    out.checks = [_chsh_check("chsh_unselected_zero", out.report.chsh, 0.0), _ns_check("no_signalling", res.unselected)]
    for c, sub in enumerate(res.by_preparation):
        est = _try_chsh(sub, c)
        if est is not None:
            out.report.quantities[f"chsh_C{c}"] = {"value": est.value, "se": est.se, "runs": len(sub)}
        out.checks.append(_chsh_check(f"chsh_postselected_C{c}", est, CHSH_QUANTUM))
    return out


def _run_w(variant: str):
    def run(cfg, rng):
        mode = bc.WMode.unselected() if variant == "unselected" else bc.WMode(variant, cfg.bell_index)
        ens = bc.run_w(mode, cfg.trials, rng=rng, partitions=cfg.partitions, workers=cfg.workers)
        signs = 0 if variant == "unselected" else cfg.bell_index
        out = _bell_outcome(ens, signs)
        if variant == "unselected":
            counts = np.bincount(ens.collider, minlength=4)
            out.report.quantities["M_marginal"] = (counts / counts.sum()).tolist()
            res = chisquare(counts)
            out.report.tests.append(st.CheckResult("M_uniform", float(res.statistic), float(res.pvalue), res.pvalue >= st.DEFAULT_ALPHA, 3))
            out.checks = [_chsh_check("chsh_unselected_zero", out.report.chsh, 0.0), out.report.tests[-1]]
        else:
            out.checks = [_chsh_check("chsh_quantum", out.report.chsh, CHSH_QUANTUM)]
        out.checks.append(_ns_check("no_signalling", ens))
        return out

    return run


def _run_teleport(cfg, rng):
    gen = rng.generator()
    correct = cfg.mode == "corrected"
    rows, fids = [], []
    for t in range(cfg.trials):
        psi = bc.random_qubit(gen)
        f = bc.qcore.fidelity(bc.teleport_constrained(psi, cfg.bell_index, correct=correct), psi)
        fids.append(f)
        rows.append((t, cfg.bell_index, repr(f)))
    fids = np.array(fids)
    report = st.StatReport(total=cfg.trials, quantities={
        "locked_m": cfg.bell_index, "corrected": correct,
        "min_fidelity": float(fids.min()), "mean_fidelity": float(fids.mean()),
    })
    checks = []
    if cfg.bell_index == 0 or correct:
        checks.append(st.CheckResult("fidelity_one", float(1 - fids.min()), math.nan, bool(fids.min() > 1 - 1e-10)))
    return Outcome(["trial", "locked_m", "fidelity"], rows, report, checks)


def _parse_value(text: str):
    try:
        return int(text)
    except ValueError:
        return text


def _scm_for(cfg) -> tuple[S.SCM, S.Constraint | None]:
    if cfg.experiment == "ivy":
        model, default = S.build_ivy(cfg.p, cfg.q), S.Constraint("Admit", 1)
    elif cfg.experiment == "damascus":
        model, default = S.build_death_in_damascus(), S.Constraint("Meeting", 1)
    elif cfg.experiment == "toy-bell":
        model, default = S.build_toy_bell(), S.Constraint("M", cfg.bell_index)
    else:
        model, default = S.build_penrose_paths(cfg.regime), S.Constraint("Terminal", "D")
    if cfg.lock is not None:
        var, _, value = cfg.lock.partition("=")
        if var not in model.variables:
            raise ConfigError(f"--lock: unknown variable {var!r} for {cfg.experiment}")
        return model, S.Constraint(var, _parse_value(value))
    return model, default if cfg.mode == "constrained" else None


def _run_scm(cfg, rng):
    model, constraint = _scm_for(cfg)
    if constraint is not None:
        model = model.lock(constraint.variable, constraint.value)
        data = S.sample_constrained(model, cfg.trials, rng, cfg.partitions, cfg.workers)
    else:
        data = S.sample(model, cfg.trials, rng, cfg.partitions, cfg.workers)
    columns = list(model.order)
    rows = list(zip(*[data.column(c).tolist() for c in columns]))
    report = st.StatReport(total=len(data), quantities={"provenance": data.provenance})
    checks: list[st.CheckResult] = []
    q = report.quantities

    def prob(event, given=None):
        sub = data if given is None else data.condition(given)
        est = st.probability_estimate(int(sub.mask(event).sum()), len(sub))
        return {"value": est.value, "se": est.se, "n": len(sub)}

    def safe(fn, *args, **kw):
        try:
            return fn(*args, **kw)
        except S.EmptySelectionError:
            return None

    if cfg.experiment == "ivy":
        q["P(Admit=1)"] = prob({"Admit": 1})
        cond = safe(data.condition, {"Admit": 1})
        if cond is not None and cond.column("Academic").std() > 0 and cond.column("Athletic").std() > 0:
            q["corr(Academic,Athletic|Admit=1)"] = float(np.corrcoef(cond.column("Academic"), cond.column("Athletic"))[0, 1])
        report.tests.append(st.independence_test(data, "Academic", "Athletic"))
        report.tests.append(safe(st.independence_test, data, "Academic", "Athletic", {"Admit": 1}))
    elif cfg.experiment == "damascus":
        q["P(Meeting=1)"] = prob({"Meeting": 1})
        report.tests.append(st.independence_test(data, "YourChoice", "DeathChoice"))
        report.tests.append(safe(st.independence_test, data, "YourChoice", "DeathChoice", {"Meeting": 0}))
    elif cfg.experiment == "penrose":
        q["P(Terminal=D|Origin=S)"] = safe(prob, {"Terminal": "D"}, {"Origin": "S"})
        q["P(Origin=S|Terminal=D)"] = safe(prob, {"Origin": "S"}, {"Terminal": "D"})
        target = {"initial-control": 1.0, "equilibrium": 0.5}[cfg.regime]
        est = q["P(Origin=S|Terminal=D)"]
        if est is not None and constraint is None:
            dev = abs(est["value"] - target)
            ok = dev == 0 if target == 1.0 else dev < max(4 * est["se"], 1e-12)
            checks.append(st.CheckResult("retrodiction", dev, math.nan, ok))
    else:
        qm = bc.quantum_conditionals(model.meta["settings_map"])
        bins = [constraint.value] if constraint is not None and constraint.variable == "M" else range(4)
        for m in bins:
            sub = safe(data.condition, {"M": m})
            if sub is None:
                continue
            table = st.tabulate(sub)
            res = st.chi_square_match(table, qm[m] / 4, name=f"bin{m}_matches_quantum")
            report.tests.append(res)
            est = _try_chsh(table, m)
            if est is not None:
                q[f"chsh_bin{m}"] = {"value": est.value, "se": est.se, "runs": len(sub)}
            checks.append(res)
    report.tests = [t for t in report.tests if t is not None]
    if cfg.experiment in ("ivy", "damascus") and constraint is None and len(report.tests) == 2:
        free, given = report.tests
        checks += [free, st.CheckResult("collider_induces_dependence", given.statistic, given.p_value, not given.passed)]
    return Outcome(columns, rows, report, checks)


RUNNERS: dict[str, Callable] = {
    "v-fixed": _run_v_fixed,
    "v-uniform": _run_v_uniform,
    "w-unselected": _run_w("unselected"),
    "w-postselect": _run_w("postselect"),
    "w-constrained": _run_w("constrained"),
    "teleport": _run_teleport,
    **{name: _run_scm for name in SCM_EXPERIMENTS},
}


def execute(cfg: ExperimentConfig) -> tuple[Outcome, dict[str, Any]]:
    """Run one experiment; returns the outcome and the JSON-ready report document."""
    cfg.validate()
    rng = RandomStream(cfg.seed)
    outcome = RUNNERS[cfg.experiment](cfg, rng)
    doc = {
        "schema_version": SCHEMA_VERSION,
        "header": {
            "tool": "colliderlab",
            "version": __version__,
            "seed": cfg.seed,
            "figure": EXPERIMENTS[cfg.experiment],
            "config": {k: v for k, v in asdict(cfg).items() if k not in ("out", "workers")},
        },
        "report": outcome.report.to_dict(),
        "checks": [
            {"name": c.name, "statistic": st._jsonable(c.statistic), "passed": bool(c.passed)} for c in outcome.checks
        ],
        "passed": all(c.passed for c in outcome.checks),
    }
    return outcome, doc


def render_runs(outcome: Outcome, fmt: str) -> str:
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(outcome.columns)
        writer.writerows(outcome.rows)
        return buf.getvalue()
    return json.dumps({"schema_version": SCHEMA_VERSION, "columns": outcome.columns, "rows": outcome.rows}) + "\n"


def run(cfg: ExperimentConfig, stdout=None) -> int:
    stdout = stdout or sys.stdout
    try:
        outcome, doc = execute(cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except S.InfeasibleConstraintError as exc:
        print(f"infeasible constraint: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except S.SCMError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    report_text = json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n"
    if cfg.out:
        os.makedirs(cfg.out, exist_ok=True)
        with open(os.path.join(cfg.out, f"runs.{cfg.format}"), "w", newline="") as fh:
            fh.write(render_runs(outcome, cfg.format))
        with open(os.path.join(cfg.out, "report.json"), "w") as fh:
            fh.write(report_text)
    stdout.write(report_text)
    if cfg.check and not doc["passed"]:
        failed = [c["name"] for c in doc["checks"] if not c["passed"]]
        print(f"check failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="colliderlab", description="Run collider-bias and Bell-test experiments.")
    p.add_argument("experiment_pos", nargs="?", metavar="EXPERIMENT")
    p.add_argument("--experiment")
    p.add_argument("--trials", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bell-index", type=int, default=0)
    p.add_argument("--p", type=float, default=0.5)
    p.add_argument("--q", type=float, default=0.5)
    p.add_argument("--regime", default="initial-control")
    p.add_argument("--mode")
    p.add_argument("--lock", metavar="VAR=VALUE")
    p.add_argument("--out", metavar="DIR", help="directory for runs.<format> and report.json")
    p.add_argument("--format", default="csv")
    p.add_argument("--check", action="store_true")
    p.add_argument("--partitions", type=int, default=1)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--list", action="store_true")
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if argv and argv[0] == "run":
        argv = argv[1:]
    elif argv and argv[0] == "list":
        argv = ["--list"] + argv[1:]
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.list:
        for name, ref in EXPERIMENTS.items():
            print(f"{name:14s} {ref}")
        return EXIT_OK
    experiment = args.experiment or args.experiment_pos
    if experiment is None:
        parser.print_usage(sys.stderr)
        print("error: an experiment name is required", file=sys.stderr)
        return EXIT_CONFIG
    if args.experiment and args.experiment_pos and args.experiment != args.experiment_pos:
        print("error: conflicting experiment names", file=sys.stderr)
        return EXIT_CONFIG
    cfg = ExperimentConfig(
        experiment=experiment, trials=args.trials, seed=args.seed, bell_index=args.bell_index,
        p=args.p, q=args.q, regime=args.regime, mode=args.mode, lock=args.lock, out=args.out,
        format=args.format, check=args.check, partitions=args.partitions, workers=args.workers,
    )
    return run(cfg)


if __name__ == "__main__":
    raise SystemExit(main())
