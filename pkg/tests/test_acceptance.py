"""End-to-end acceptance gate. Each test prints one ``PASS``/``FAIL`` line."""
import csv
import json
import math
import time

import numpy as np
import pytest

from sgd_inactivity.bounds import (
    admissible_extremes,
    all_runs_inactive_prob,
    inactivity_prob_exact,
    inactivity_prob_lower_bound,
    kappa_bound_check,
    make_schedule,
    risk_lower_bound,
)
from sgd_inactivity.cli import main
from sgd_inactivity.data import make_data_model
from sgd_inactivity.experiments import mc_inactivity
from sgd_inactivity.gradient import finite_diff_gradient, max_relative_error, risk_gradient
from sgd_inactivity.inactivity import assert_constant_realization, is_layer_inactive
from sgd_inactivity.network import CLIP, IDENTITY, Architecture, layer_offsets, param_count
from sgd_inactivity.sgd import InitSpec, StepSchedule, TrainConfig, run_trajectory, training_batch

from conftest import force_inactive, random_arch, random_batch, random_inactive

pytestmark = pytest.mark.filterwarnings("ignore:only .* replicates:RuntimeWarning")


def verdict(capsys, number, name, ok, detail):
    with capsys.disabled():
        print(f"\n[acceptance {number}] {'PASS' if ok else 'FAIL'} {name}: {detail}")
    assert ok, detail


def test_1_gradient_matches_finite_differences(capsys):
    rng = np.random.default_rng(101)
    start = time.perf_counter()
    worst, done = 0.0, 0
    while done < 100:
        arch = random_arch(rng, 1, 4, 5)
        theta = rng.normal(size=param_count(arch))
        batch = random_batch(rng, arch)
        readout = CLIP if done % 2 else IDENTITY
        rep = risk_gradient(arch, theta, batch, readout)
        if rep.any_kink:
            continue
        fd = finite_diff_gradient(arch, theta, batch, readout, 1e-5)
        worst = max(worst, max_relative_error(rep.gradient, fd))
        done += 1
    elapsed = time.perf_counter() - start
    verdict(capsys, 1, "gradient vs central differences", worst < 1e-6 and elapsed < 10,
            f"max rel err {worst:.2e} over 100 instances in {elapsed:.2f}s")


def test_2_constant_realization(capsys):
    rng = np.random.default_rng(202)
    failures = 0
    for _ in range(1000):
        arch, theta, _ = random_inactive(rng, 3, 10, 5)
        probes = rng.uniform(-1, 2, size=(100, arch.input_dim))
        if not assert_constant_realization(arch, theta, probes, rng, perturbations=3):
            failures += 1
    verdict(capsys, 2, "constant realization on the inactive region", failures == 0,
            f"{failures} failures over 1000 parameter vectors")


def test_3_persistence(capsys):
    rng = np.random.default_rng(303)
    failures = 0
    runs = 0
    for gamma in (0.01, 0.1, 1.0, -0.1):
        for k in range(50):
            arch = random_arch(rng, 3, 6, 4)
            data = make_data_model({"name": "coordinate-mean", "d": arch.input_dim})
            j = int(rng.integers(2, arch.depth))
            cfg = TrainConfig(arch=arch, N=1, T=100, M=8, schedule=StepSchedule("constant", gamma),
                              readout=CLIP if k % 2 else IDENTITY, seed=k)
            theta0 = force_inactive(rng, arch, rng.uniform(-2, 2, size=param_count(arch)), j)
            traj = run_trajectory(cfg, data, cfg.seed, 0, 1, theta0=theta0)
            lo, hi = layer_offsets(arch)[j - 1], layer_offsets(arch)[j]
            ok = all(is_layer_inactive(arch, th, j) for th in traj)
            for t in range(1, cfg.T + 1):
                batch = training_batch(data, cfg.M, cfg.seed, 0, 1, t)
                # gamma = 1 can blow up the layers after the dead block; that is allowed
                with np.errstate(over="ignore", invalid="ignore"):
                    g = risk_gradient(arch, traj[t - 1], batch, cfg.readout).gradient
                ok = ok and bool(np.all(g[lo:hi] == 0.0))
            failures += not ok
            runs += 1
    verdict(capsys, 3, "persistence of the inactive block", failures == 0,
            f"{failures} failures over {runs} trajectories x 100 steps")


def test_4_inactivity_frequency(capsys):
    start = time.perf_counter()
    res = mc_inactivity((1,) * 9, InitSpec.uniform(2.0), 100_000, seed=404)
    elapsed = time.perf_counter() - start
    expected = 1 - 0.75 ** 6
    ok = abs(res.analytic - expected) < 1e-15 and res.consistent and elapsed < 30
    details = [f"depth 8: {res.estimate:.5f} vs {res.analytic:.6f} (4 sigma {res.half_width:.5f}), {elapsed:.2f}s"]
    rng = np.random.default_rng(404)
    bad = 0
    for i in range(20):
        arch = random_arch(rng, 3, 8, 3)
        r = mc_inactivity(arch, InitSpec.uniform(2.0), 100_000, seed=1000 + i)
        bad += not r.consistent
    details.append(f"{bad}/20 random architectures outside 4 sigma")
    verdict(capsys, 4, "inactivity frequency at initialization", ok and bad == 0, "; ".join(details))


def test_5_kappa_inequality(capsys):
    rng = np.random.default_rng(505)
    failures = 0
    for _ in range(10_000):
        p = float(rng.uniform(0.02, 0.98))
        kappa = float(rng.uniform(0.01, 0.99))
        W = float(rng.uniform(0.1, 12.0))
        D, N = admissible_extremes(W, kappa, p)
        check = kappa_bound_check(D, N, W, kappa, p)
        failures += not (check.hypotheses_hold and check.conclusion_value >= kappa)
    pinned = kappa_bound_check(23, 386, 2, 0.5, 0.5)
    ok = failures == 0 and pinned.conclusion_value >= 0.5 and abs(pinned.conclusion_value - 0.596451) < 1e-6
    verdict(capsys, 5, "restart/depth inequality at admissible extremes", ok,
            f"{failures} failures over 10^4 triples; pinned value {pinned.conclusion_value:.6f}")


@pytest.fixture(scope="module")
def reproduce_single(tmp_path_factory):
    out = tmp_path_factory.mktemp("single")
    start = time.perf_counter()
    code = main(["reproduce", "--seed", "0", "--threads", "1", "--out", str(out)])
    return code, out, time.perf_counter() - start


def test_6_desk_scale_reproduction(capsys, reproduce_single):
    (entry,) = make_schedule([1], 0.5, 0.5)
    code, out, elapsed = reproduce_single
    summary = json.loads((out / "summary.json").read_text())
    est, se = summary["estimate"], summary["std_error"]
    rows = list(csv.DictReader((out / "replicates.csv").open()))
    ok = ((entry.D, entry.N) == (8, 2) and summary["config"]["train"]["arch"] == [1] * 9
          and summary["config"]["train"]["N"] == 2 and len(rows) == 200
          and est + 3 * se >= 0.125 and est + 3 * se >= 0.16893 and elapsed < 120 and code == 0)
    verdict(capsys, 6, "desk-scale failure reproduction", ok,
            f"D={entry.D} N={entry.N}; V={est:.4f} se={se:.4f}; V+3se={est + 3 * se:.4f} "
            f">= 0.125 and >= 0.16893; {elapsed:.1f}s single-threaded")


def test_7_exact_dominates_bound(capsys):
    rng = np.random.default_rng(707)
    failures = 0
    for _ in range(1000):
        W = int(rng.integers(1, 5))
        D = int(rng.integers(3, 10))
        N = int(rng.integers(1, 20))
        p = float(rng.uniform(0.05, 0.95))
        arch = Architecture([int(rng.integers(1, 4))] + [int(rng.integers(1, W + 1)) for _ in range(D - 1)] + [1])
        exact = inactivity_prob_exact(arch, np.full(param_count(arch), p))
        lb = inactivity_prob_lower_bound(p, W, D, N)
        risk = risk_lower_bound(all_runs_inactive_prob(exact, N), float(rng.uniform(0, 3)))
        failures += not (exact >= inactivity_prob_lower_bound(p, W, D, 1)
                         and all_runs_inactive_prob(exact, N) >= lb * (1 - 1e-13) and risk <= 1.0)
    verdict(capsys, 7, "exact probability dominates the closed-form bound", failures == 0,
            f"{failures} failures over 1000 cases")


def test_8_determinism_across_threads(capsys, reproduce_single, tmp_path):
    _, single, _ = reproduce_single
    main(["reproduce", "--seed", "0", "--threads", "4", "--out", str(tmp_path)])
    a = (single / "replicates.csv").read_bytes()
    b = (tmp_path / "replicates.csv").read_bytes()
    verdict(capsys, 8, "byte-identical CSV across thread counts", a == b,
            f"{len(a)} bytes, threads 1 vs 4, identical={a == b}")
