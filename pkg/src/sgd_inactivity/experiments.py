"""Monte Carlo replication of the multi-start SGD failure experiment."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import bounds
from .data import make_data_model
from .inactivity import classify, estimate_risk_floor, inactive_mask, persistence_audit
from .network import Architecture, as_arch, param_count
from .seeding import Role, derive_rng
from .sgd import (
    InitSpec,
    StepSchedule,
    TrainConfig,
    init_params,
    run_all,
    select_best,
    true_risk_estimate,
    validation_batch,
)

log = logging.getLogger(__name__)

CSV_COLUMNS = (
    "replicate", "n", "t", "in_inactive_region", "risk", "capped_risk",
    "all_runs_inactive", "risk_exact", "fallback",
)


@dataclass
class ExperimentConfig:
    """One experiment: a data model, a training setup and ``replicates`` independent repeats.

    ``kappa`` enables the comparison against ``kappa * min(floor, 1)``.
    ``floor_samples`` is only used when the data model has no closed-form floor.
    """

    train: TrainConfig
    data: object = "linear-1d"
    replicates: int = 200
    true_risk_samples: int = 10_000
    floor_samples: int = 200_000
    kappa: Optional[float] = None
    schedule: Optional[dict] = None
    output_dir: Optional[str] = None

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError("need at least one replicate")
        if self.true_risk_samples < 1:
            raise ValueError("true_risk_samples must be >= 1")
        make_data_model(self.data)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        train = dict(d.pop("train", {}))
        schedule = d.get("schedule")
        if schedule is not None:
            entry = schedule_entry(schedule)
            data = make_data_model(d.get("data", "linear-1d"))
            train["arch"] = list(bounds.architecture_from_entry(entry, data.input_dim).dims)
            train["N"] = entry.N
            d.setdefault("kappa", entry.kappa)
        known = {"data", "replicates", "true_risk_samples", "floor_samples", "kappa", "schedule", "output_dir"}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown experiment config keys: {sorted(extra)}")
        return cls(train=TrainConfig.from_dict(train), **d)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["train"] = self.train.to_dict()
        if not isinstance(self.data, (str, dict)):
            out["data"] = make_data_model(self.data).describe()
        return out


def schedule_entry(spec: dict) -> bounds.ScheduleEntry:
    """Certified schedule entry for ``{"kappa", "p", "width"}``."""
    (entry,) = bounds.make_schedule([int(spec["width"])], float(spec["kappa"]), float(spec["p"]))
    if not entry.certified:
        raise ValueError(f"schedule entry {entry} is not certified")
    return entry


def default_config(seed: int = 0) -> ExperimentConfig:
    """kappa = p = 1/2, width 1: depth 8, two restarts, linear target on [0, 1]."""
    return ExperimentConfig.from_dict({
        "data": "linear-1d",
        "replicates": 200,
        "schedule": {"kappa": 0.5, "p": 0.5, "width": 1},
        "train": {
            "T": 100, "M": 16, "schedule": {"kind": "constant", "gamma": 0.1},
            "init": {"kind": "uniform", "c": 2.0}, "readout": {"kind": "clip", "lo": 0.0, "hi": 1.0},
            "cube_c": 2.0, "seed": seed,
        },
    })


@dataclass
class ReplicateRecord:
    replicate: int
    n: int
    t: int
    in_inactive_region: bool
    risk: float
    capped_risk: float
    all_runs_inactive: bool
    risk_exact: bool
    fallback: bool
    risk_half_width: float = 0.0
    validation_risk: float = 0.0

    def csv_row(self) -> list:
        return [getattr(self, c) for c in CSV_COLUMNS]


def replicate_once(config: ExperimentConfig, replicate_index: int) -> ReplicateRecord:
    """Initialize, train every restart, select on a held-out batch, score the selection."""
    cfg = config.train
    data = make_data_model(config.data)
    seed = cfg.seed
    ts = run_all(cfg, data, seed, replicate_index)
    val = validation_batch(data, cfg.M, seed, replicate_index)
    sel = select_best(ts, val, cfg.cube_c, cfg.readout)
    inactive = classify(cfg.arch, sel.theta).inactive
    all_inactive = bool(inactive_mask(cfg.arch, ts.iterates[:, 0, :]).all())
    rng = derive_rng(seed, replicate_index, 0, 0, Role.TRUE_RISK)
    if np.all(np.isfinite(sel.theta)):
        est = true_risk_estimate(cfg.arch, sel.theta, data, cfg.readout, config.true_risk_samples, rng,
                                 constant=inactive)
        risk, exact, half = est.value, est.exact, est.half_width
    else:
        risk, exact, half = math.inf, False, 0.0
    return ReplicateRecord(
        replicate=replicate_index, n=sel.n, t=sel.t, in_inactive_region=inactive,
        risk=risk, capped_risk=min(risk, 1.0), all_runs_inactive=all_inactive,
        risk_exact=exact, fallback=sel.fallback, risk_half_width=half, validation_risk=sel.risk,
    )


@dataclass
class ExperimentReport:
    config: dict
    records: list[ReplicateRecord]
    estimate: float
    std_error: float
    ci95: tuple[float, float]
    inactive_at_selection: float
    all_inactive_freq: float
    all_inactive_ci95: tuple[float, float]
    analytic: dict
    checks: dict = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks.values())

    def summary(self) -> dict:
        return {
            "replicates": len(self.records),
            "estimate": self.estimate,
            "std_error": self.std_error,
            "ci95": list(self.ci95),
            "inactive_at_selection": self.inactive_at_selection,
            "all_runs_inactive_freq": self.all_inactive_freq,
            "all_runs_inactive_ci95": list(self.all_inactive_ci95),
            "analytic": self.analytic,
            "checks": self.checks,
            "passed": self.passed,
            "warnings": self.warnings,
            "config": self.config,
            "batches": "training and selection batches are drawn i.i.d. from the data model",
        }


def _normal_ci(mean: float, se: float, lo: float = 0.0, hi: float = 1.0) -> tuple[float, float]:
    return (max(lo, mean - 1.96 * se), min(hi, mean + 1.96 * se))


def analytic_values(config: ExperimentConfig) -> dict:
    cfg = config.train
    arch = cfg.arch
    data = make_data_model(config.data)
    neg = cfg.init.neg_probs(arch)
    floor = estimate_risk_floor(data, config.floor_samples, derive_rng(cfg.seed, 0, 0, 0, Role.AUX))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", bounds.EmptyUnionWarning)
        single = bounds.inactivity_prob_exact(arch, neg)
    all_runs = bounds.all_runs_inactive_prob(single, cfg.N)
    out = {
        "arch": list(arch.dims),
        "N": cfg.N,
        "risk_floor": floor.value,
        "risk_floor_exact": floor.exact,
        "risk_floor_half_width": floor.half_width,
        "prob_single_inactive": single,
        "prob_all_runs_inactive": all_runs,
        "risk_lower_bound": bounds.risk_lower_bound(all_runs, floor.value),
    }
    p = float(neg.min())
    if arch.depth >= 3 and 0.0 < p < 1.0:
        lb = bounds.inactivity_prob_lower_bound(p, arch.max_hidden_width, arch.depth, cfg.N)
        out["p"] = p
        out["prob_lower_bound"] = lb
        out["risk_lower_bound_uniform_p"] = bounds.risk_lower_bound(lb, floor.value)
    if config.kappa is not None:
        out["kappa"] = config.kappa
        out["kappa_floor_bound"] = config.kappa * min(floor.value, 1.0)
    return out


def aggregate(config: ExperimentConfig, records: list[ReplicateRecord]) -> ExperimentReport:
    records = sorted(records, key=lambda r: r.replicate)
    R = len(records)
    notes = []
    if R < 30:
        notes.append(f"only {R} replicates; normal confidence intervals are unreliable below 30")
        warnings.warn(notes[-1], RuntimeWarning, stacklevel=2)
    capped = np.array([r.capped_risk for r in records])
    est = float(capped.mean())
    se = float(capped.std(ddof=1)) / math.sqrt(R) if R > 1 else 0.0
    freq = float(np.mean([r.all_runs_inactive for r in records]))
    freq_se = math.sqrt(freq * (1.0 - freq) / R)
    analytic = analytic_values(config)

    checks = {}
    allowance = 3.0 * se
    if "kappa_floor_bound" in analytic:
        checks["kappa_floor_bound"] = {
            "passed": est + allowance >= analytic["kappa_floor_bound"],
            "bound": analytic["kappa_floor_bound"], "estimate": est, "allowance": allowance,
        }
    checks["risk_lower_bound"] = {
        "passed": est + allowance >= analytic["risk_lower_bound"],
        "bound": analytic["risk_lower_bound"], "estimate": est, "allowance": allowance,
    }
    prob = analytic["prob_all_runs_inactive"]
    sigma = math.sqrt(prob * (1.0 - prob) / R)
    checks["inactivity_frequency"] = {
        "passed": abs(freq - prob) <= 4.0 * sigma if sigma > 0 else freq == prob,
        "analytic": prob, "empirical": freq, "sigma": sigma,
    }
    floor = analytic["risk_floor"]
    slack = 0.0 if analytic["risk_floor_exact"] else analytic["risk_floor_half_width"]
    chain = [r.replicate for r in records
             if r.in_inactive_region and r.risk < floor - slack - (0.0 if r.risk_exact else r.risk_half_width)]
    checks["inactive_risk_floor"] = {"passed": not chain, "violations": chain}

    return ExperimentReport(
        config=config.to_dict(), records=records, estimate=est, std_error=se,
        ci95=_normal_ci(est, se), inactive_at_selection=float(np.mean([r.in_inactive_region for r in records])),
        all_inactive_freq=freq, all_inactive_ci95=_normal_ci(freq, freq_se), analytic=analytic,
        checks=checks, warnings=notes,
    )


def run_experiment(config: ExperimentConfig, workers: int = 1) -> ExperimentReport:
    """Run all replicates and compare against the analytic bounds.

    Replicates are independent given their seed paths, so ``workers`` only
    affects wall time. Finished replicates are written out if interrupted.
    """
    indices = range(config.replicates)
    records: list[ReplicateRecord] = []
    try:
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                for rec in pool.map(replicate_once, [config] * config.replicates, indices, chunksize=4):
                    records.append(rec)
        else:
            for i in indices:
                records.append(replicate_once(config, i))
    except KeyboardInterrupt:
        if config.output_dir and records:
            path = Path(config.output_dir) / "replicates.partial.csv"
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(records_to_csv(records))
            log.warning("interrupted; %d replicates written to %s", len(records), path)
        raise
    return aggregate(config, records)


def records_to_csv(records: list[ReplicateRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for rec in sorted(records, key=lambda r: r.replicate):
        writer.writerow(rec.csv_row())
    return buf.getvalue()


def records_from_csv(text: str) -> list[ReplicateRecord]:
    rows = list(csv.DictReader(io.StringIO(text)))
    out = []
    for row in rows:
        out.append(ReplicateRecord(
            replicate=int(row["replicate"]), n=int(row["n"]), t=int(row["t"]),
            in_inactive_region=row["in_inactive_region"] == "True",
            risk=float(row["risk"]), capped_risk=float(row["capped_risk"]),
            all_runs_inactive=row["all_runs_inactive"] == "True",
            risk_exact=row["risk_exact"] == "True", fallback=row["fallback"] == "True",
        ))
    return out


def curves_csv(report: ExperimentReport) -> str:
    """Long format ``series,N,value``: analytic curves over the restart count plus the empirical point."""
    a = report.analytic
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["series", "N", "value"])
    single, floor = a["prob_single_inactive"], a["risk_floor"]
    for n in range(1, max(2 * a["N"], 10) + 1):
        prob = bounds.all_runs_inactive_prob(single, n)
        writer.writerow(["prob_all_runs_inactive", n, prob])
        writer.writerow(["risk_lower_bound", n, bounds.risk_lower_bound(prob, floor)])
        if "p" in a:
            lb = bounds.inactivity_prob_lower_bound(a["p"], max(a["arch"][1:-1]), len(a["arch"]) - 1, n)
            writer.writerow(["prob_lower_bound", n, lb])
    writer.writerow(["empirical_capped_risk", a["N"], report.estimate])
    writer.writerow(["empirical_all_runs_inactive", a["N"], report.all_inactive_freq])
    return buf.getvalue()


def emit_report(report: ExperimentReport, out_dir, formats=("csv", "json", "curves")) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if "csv" in formats:
        path = out_dir / "replicates.csv"
        path.write_text(records_to_csv(report.records))
        written.append(path)
    if "json" in formats:
        path = out_dir / "summary.json"
        path.write_text(json.dumps(report.summary(), indent=2, sort_keys=True))
        written.append(path)
    if "curves" in formats:
        path = out_dir / "curves.csv"
        path.write_text(curves_csv(report))
        written.append(path)
    return written


# --------------------------------------------------------------------------
# inactivity at initialization

@dataclass
class MCInactivity:
    estimate: float
    half_width: float
    sigma: float
    analytic: float
    samples: int
    hits: int
    consistent: bool
    persistence_ok: Optional[bool] = None

    def to_dict(self) -> dict:
        return asdict(self)


def sample_inits(arch, spec: InitSpec, rng: np.random.Generator, count: int) -> np.ndarray:
    p = param_count(arch)
    if spec.kind == "uniform":
        return rng.uniform(-spec.c, spec.c, size=(count, p))
    laws = spec._laws_for(p)
    return np.column_stack([law.sample(rng, count) for law in laws])


def mc_inactivity(arch, init_spec: InitSpec, samples: int, seed: int = 0, chunk: int = 100_000,
                  audit_trainings: int = 0, data="linear-1d") -> MCInactivity:
    """Fraction of random initializations in the inactive region, against the closed form.

    ``half_width`` is four binomial standard deviations at the analytic value.
    With ``audit_trainings > 0`` that many short SGD runs are started from the
    first inactive draws and checked for persistence.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    arch = as_arch(arch)
    rng = derive_rng(seed, 0, 0, 0, Role.INACTIVITY_MC)
    hits = 0
    kept = []
    done = 0
    while done < samples:
        k = min(chunk, samples - done)
        thetas = sample_inits(arch, init_spec, rng, k)
        mask = inactive_mask(arch, thetas)
        hits += int(mask.sum())
        if audit_trainings and len(kept) < audit_trainings:
            kept.extend(thetas[mask][: audit_trainings - len(kept)])
        done += k
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", bounds.EmptyUnionWarning)
        analytic = bounds.inactivity_prob_exact(arch, init_spec.neg_probs(arch))
    est = hits / samples
    sigma = math.sqrt(analytic * (1.0 - analytic) / samples)
    consistent = abs(est - analytic) <= 4.0 * sigma if sigma > 0 else est == analytic
    persistence = None
    if audit_trainings and arch.output_dim == 1:
        model = make_data_model(data)
        cfg = TrainConfig(arch=arch, N=max(len(kept), 1), T=10, M=8,
                          schedule=StepSchedule("constant", 0.1), init=init_spec, seed=seed)
        if kept:
            ts = run_all(cfg, model, seed, theta0=np.array(kept))
            persistence = persistence_audit(ts)
        else:
            persistence = True
    return MCInactivity(est, 4.0 * sigma, sigma, analytic, samples, hits, consistent, persistence)
