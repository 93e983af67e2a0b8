"""Command line entry point: ``sgd-inactivity <subcommand>``.

Environment overrides: ``SGD_INACTIVITY_SEED`` (master seed) and
``SGD_INACTIVITY_THREADS`` (worker count for ``reproduce``).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import bounds
from .data import make_data_model
from .experiments import ExperimentConfig, default_config, emit_report, mc_inactivity, run_experiment
from .gradient import finite_diff_gradient, max_relative_error, risk_gradient
from .inactivity import classify
from .network import Architecture, ReadOut, param_count
from .seeding import derive_rng
from .sgd import InitSpec, TrainConfig, load_document, run_all, select_best, true_risk_estimate, validation_batch

log = logging.getLogger("sgd_inactivity")


def _env_int(name: str, default):
    value = os.environ.get(name)
    return int(value) if value not in (None, "") else default


def _seed(args) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    return _env_int("SGD_INACTIVITY_SEED", 0)


def _json_arg(text: str):
    if text.startswith("@"):
        return json.loads(Path(text[1:]).read_text())
    return json.loads(text)


def cmd_schedule(args) -> int:
    widths = [int(w) for w in args.widths.split(",")]
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(["W", "D", "N", "certified", "bound_value"])
    for e in bounds.make_schedule(widths, args.kappa, args.p):
        writer.writerow([e.W, e.D, e.N, e.certified, e.bound_value])
    return 0


def cmd_mc_prob(args) -> int:
    arch = Architecture(_json_arg(args.arch))
    res = mc_inactivity(arch, InitSpec.uniform(args.c), args.samples, seed=_seed(args),
                        audit_trainings=args.audit)
    print(json.dumps(res.to_dict(), indent=2))
    return 0 if res.consistent and res.persistence_ok in (None, True) else 1


def cmd_classify(args) -> int:
    arch = Architecture(_json_arg(args.arch))
    theta = np.asarray(_json_arg(args.theta), dtype=np.float64)
    print(classify(arch, theta).to_json())
    return 0


def cmd_gradcheck(args) -> int:
    arch = Architecture(_json_arg(args.arch))
    rng = derive_rng(_seed(args))
    theta = rng.uniform(-args.c, args.c, size=param_count(arch))
    data = make_data_model({"name": "coordinate-mean", "d": arch.input_dim})
    batch = data.sample(rng, args.batch_size)
    readout = ReadOut(args.readout)
    rep = risk_gradient(arch, theta, batch, readout)
    fd = finite_diff_gradient(arch, theta, batch, readout, args.h)
    err = max_relative_error(rep.gradient, fd)
    out = rep.to_dict()
    out.update({"finite_difference": fd.tolist(), "max_relative_error": err,
                "passed": bool(err < args.tol or rep.any_kink)})
    print(json.dumps(out, indent=2))
    return 0 if out["passed"] else 1


def cmd_train(args) -> int:
    doc = load_document(args.config)
    data = make_data_model(doc.pop("data", "linear-1d"))
    cfg = TrainConfig.from_dict(doc)
    seed = _seed(args) if _seed_given(args) else cfg.seed
    ts = run_all(cfg, data, seed, workers=args.threads)
    val = validation_batch(data, cfg.M, seed, 0)
    sel = select_best(ts, val, cfg.cube_c, cfg.readout)
    est = true_risk_estimate(cfg.arch, sel.theta, data, cfg.readout, args.risk_samples)
    out = {
        "n": sel.n, "t": sel.t, "validation_risk": sel.risk, "fallback": sel.fallback,
        "inactive": classify(cfg.arch, sel.theta).to_dict(),
        "true_risk": est.value, "true_risk_half_width": est.half_width, "true_risk_exact": est.exact,
        "theta": sel.theta.tolist(),
    }
    if args.save:
        ts.save(args.save)
    print(json.dumps(out, indent=2))
    return 0


def _seed_given(args) -> bool:
    return getattr(args, "seed", None) is not None or bool(os.environ.get("SGD_INACTIVITY_SEED"))


def cmd_reproduce(args) -> int:
    if args.config:
        doc = load_document(args.config)
        if _seed_given(args):
            doc.setdefault("train", {})["seed"] = _seed(args)
        config = ExperimentConfig.from_dict(doc)
    else:
        config = default_config(_seed(args))
    if args.replicates is not None:
        config.replicates = args.replicates
    config.output_dir = args.out
    threads = args.threads if args.threads is not None else _env_int("SGD_INACTIVITY_THREADS", 1)
    report = run_experiment(config, workers=threads)
    for path in emit_report(report, args.out):
        log.info("wrote %s", path)
    summary = report.summary()
    print(json.dumps({k: summary[k] for k in ("estimate", "std_error", "ci95", "checks", "passed")}, indent=2))
    return 0 if report.passed else 1


def cmd_verify_bounds(args) -> int:
    report = bounds.verify_bounds(args.samples, _seed(args))
    report["passed"] = all(v["passed"] for v in report.values())
    print(json.dumps(report, indent=2))
    return 0 if report["passed"] else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sgd-inactivity", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("schedule", help="depth/restart schedule as CSV")
    p.add_argument("--kappa", type=float, required=True)
    p.add_argument("--p", type=float, required=True)
    p.add_argument("--widths", required=True, help="comma separated, e.g. 1,2,3")
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("mc-prob", help="Monte Carlo inactivity frequency at initialization")
    p.add_argument("--arch", required=True, help="JSON list, e.g. [1,1,1,1]")
    p.add_argument("--c", type=float, default=2.0)
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--audit", type=int, default=0, help="short trainings to audit for persistence")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_mc_prob)

    p = sub.add_parser("classify", help="inactivity report for one parameter vector")
    p.add_argument("--arch", required=True)
    p.add_argument("--theta", required=True, help="JSON list or @file.json")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("gradcheck", help="backprop against central differences at a random point")
    p.add_argument("--arch", required=True)
    p.add_argument("--c", type=float, default=1.0)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--readout", choices=["clip", "identity"], default="identity")
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("train", help="run multi-start SGD from a config file and select")
    p.add_argument("--config", required=True, help="JSON or TOML training config")
    p.add_argument("--risk-samples", type=int, default=10_000)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--save", help="directory for the trajectory set")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("reproduce", help="replicate the failure experiment (default: width 1, depth 8)")
    p.add_argument("--config", help="JSON or TOML experiment config")
    p.add_argument("--out", default="results")
    p.add_argument("--replicates", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_reproduce)

    p = sub.add_parser("verify-bounds", help="randomized checks of the bound formulas")
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_verify_bounds)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
