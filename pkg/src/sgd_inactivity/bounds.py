"""Closed-form lower bounds on the failure probability and risk of multi-start SGD.

Everything is evaluated in log space: the schedules of interest push depths
into the thousands and restart counts beyond float range.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass
from decimal import Context, Decimal, localcontext
from typing import Sequence

import numpy as np

from .network import Architecture, as_arch, layer_offsets

# Depth beyond which an integer depth is no longer exactly representable as a float.
MAX_EXACT_DEPTH = 2 ** 53

# The inequality behind kappa_bound_check can be tight to ~1e-18 relative at the
# admissible extremes, below double resolution, so it is evaluated in decimal.
_DECIMAL = Context(prec=60, Emax=10 ** 9, Emin=-10 ** 9)


class EmptyUnionWarning(UserWarning):
    """Depth <= 2: there is no interior layer, so the inactive region is empty."""


def _one_minus_exp(log_x: float) -> float:
    """``1 - exp(log_x)`` for ``log_x <= 0``."""
    if log_x == -math.inf:
        return 1.0
    return -math.expm1(log_x)


def _log1m_exp(log_x: float) -> float:
    """``log(1 - exp(log_x))`` for ``log_x <= 0``, stable at both ends."""
    if log_x == -math.inf:
        return 0.0
    if log_x == 0.0:
        return -math.inf
    if log_x > -math.log(2.0):
        return math.log(-math.expm1(log_x))
    return math.log1p(-math.exp(log_x))


def _check_prob(name: str, x: float, open_interval: bool = False) -> None:
    if open_interval:
        if not 0.0 < x < 1.0:
            raise ValueError(f"{name} must lie in (0, 1), got {x}")
    elif not 0.0 <= x <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {x}")


def _empty_union(depth: int) -> float:
    warnings.warn(f"depth {depth} has no interior layer; inactivity probability is 0",
                  EmptyUnionWarning, stacklevel=3)
    return 0.0


def inactivity_prob_exact(arch, neg_probs: Sequence[float]) -> float:
    """Probability that an initialization with independent coordinates lands in the inactive region.

    ``neg_probs[i]`` is ``P(theta_i < 0)``. The result is
    ``1 - prod_{j=2}^{D-1} (1 - prod_{i in block j} neg_probs[i])``.
    """
    arch = as_arch(arch)
    neg_probs = np.asarray(neg_probs, dtype=np.float64)
    offsets = layer_offsets(arch)
    if neg_probs.shape != (offsets[-1],):
        raise ValueError(f"need {offsets[-1]} probabilities, got {neg_probs.shape}")
    if np.any((neg_probs < 0) | (neg_probs > 1)):
        raise ValueError("probabilities must lie in [0, 1]")
    if arch.depth < 3:
        return _empty_union(arch.depth)
    with np.errstate(divide="ignore"):
        logs = np.log(neg_probs)
    # fsum keeps the equal-width case bitwise identical to the closed-form lower bound
    log_survive = math.fsum(
        _log1m_exp(math.fsum(logs[offsets[j - 1]:offsets[j]].tolist())) for j in range(2, arch.depth)
    )
    return _one_minus_exp(log_survive)


def all_runs_inactive_prob(prob_single: float, N: int) -> float:
    _check_prob("prob_single", prob_single)
    if N < 1:
        raise ValueError("N must be >= 1")
    if prob_single == 0.0:
        return 0.0
    return math.exp(N * math.log(prob_single))


def _check_bound_inputs(p, W, D, N) -> None:
    _check_prob("p", p, open_interval=True)
    if W < 1:
        raise ValueError("W must be >= 1")
    if D < 3:
        raise ValueError("D must be >= 3")
    if N < 1:
        raise ValueError("N must be >= 1")


def log_inactivity_prob_lower_bound(p: float, W: float, D: float, N: float) -> float:
    """``log [1 - (1 - p^{W(W+1)})^{D-2}]^N``."""
    _check_bound_inputs(p, W, D, N)
    log_q = W * (W + 1) * math.log(p)
    if log_q > -700.0:
        log_miss = (D - 2) * _log1m_exp(log_q)
        return N * _log1m_exp(log_miss)
    # p^{W(W+1)} underflows: -log(1 - q) = q to double precision, so work with
    # y = log(-log_miss) = log(D - 2) + log_q directly.
    y = math.log(D - 2) + log_q
    if y < -30.0:
        log_hit = y - 0.5 * math.exp(y)
    elif math.exp(y) < math.log(2.0):
        log_hit = math.log(-math.expm1(-math.exp(y)))
    else:
        log_hit = math.log1p(-math.exp(-math.exp(y)))
    return N * log_hit


def inactivity_prob_lower_bound(p: float, W: float, D: float, N: float) -> float:
    """``[1 - (1 - p^{W(W+1)})^{D-2}]^N`` for max hidden width ``W``, depth ``D``, ``N`` restarts."""
    _check_bound_inputs(p, W, D, N)
    log_q = W * (W + 1) * math.log(p)
    if N == 1 and log_q > -700.0:
        # same rounding path as inactivity_prob_exact, so equal-width nets compare exactly
        return _one_minus_exp((D - 2) * _log1m_exp(log_q))
    return math.exp(log_inactivity_prob_lower_bound(p, W, D, N))


def risk_lower_bound(prob_all_inactive: float, floor_C: float) -> float:
    _check_prob("prob_all_inactive", prob_all_inactive)
    if floor_C < 0:
        raise ValueError("risk floor must be nonnegative")
    return prob_all_inactive * min(floor_C, 1.0)


@dataclass
class KappaCheck:
    hypotheses_hold: bool
    conclusion_value: float
    conclusion_holds: bool
    depth_threshold: float
    restart_threshold: float


def _dec(x) -> Decimal:
    return Decimal(x) if isinstance(x, int) else Decimal(float(x))


def _dec_ln1m(q: Decimal) -> Decimal:
    """``ln(1 - q)`` for ``0 <= q < 1`` without cancellation at small ``q``."""
    if q < Decimal("1e-15"):
        return -(q + q * q / 2 + q * q * q / 3)
    return (1 - q).ln()


def _dec_neg_expm1(x: Decimal) -> Decimal:
    """``1 - exp(x)`` for ``x <= 0``."""
    if -x < Decimal("1e-15"):
        return -(x + x * x / 2 + x * x * x / 6)
    return 1 - x.exp()


def _dec_thresholds(D, W, kappa, p) -> tuple[Decimal, Decimal]:
    """Depth threshold ``|log p| W p^{-W}`` and restart threshold ``|log kappa| (1 - p^W)^{1-D}``."""
    ln_p = _dec(p).ln()
    W = _dec(W)
    d_thr = -ln_p * W * (-W * ln_p).exp()
    ln1m_q = _dec_ln1m((W * ln_p).exp())
    n_thr = -_dec(kappa).ln() * ((1 - _dec(D)) * ln1m_q).exp()
    return d_thr, n_thr


def _float_down(x: Decimal) -> float:
    f = float(x)
    return math.nextafter(f, -math.inf) if Decimal(f) > x else f


def _float_up(x: Decimal) -> float:
    f = float(x)
    return math.nextafter(f, math.inf) if math.isfinite(f) and Decimal(f) < x else f


def depth_threshold(W: float, p: float) -> float:
    """Smallest float ``D`` with ``D >= |log p| W p^{-W}`` (``inf`` beyond float range)."""
    _check_prob("p", p, open_interval=True)
    with localcontext(_DECIMAL):
        return _float_up(_dec_thresholds(1, W, 0.5, p)[0])


def restart_threshold(D: float, W: float, kappa: float, p: float) -> float:
    """Largest float ``N`` with ``N <= |log kappa| (1 - p^W)^{1-D}`` (``inf`` beyond float range)."""
    _check_prob("kappa", kappa, open_interval=True)
    _check_prob("p", p, open_interval=True)
    with localcontext(_DECIMAL):
        return _float_down(_dec_thresholds(D, W, kappa, p)[1])


def log_restart_threshold(D: float, W: float, kappa: float, p: float) -> float:
    """``log(|log kappa| (1 - p^W)^{1-D})`` in double precision."""
    return math.log(abs(math.log(kappa))) + (1.0 - D) * _log1m_exp(W * math.log(p))


def admissible_extremes(W: float, kappa: float, p: float) -> tuple[float, float]:
    """Smallest admissible depth and, at that depth, the largest admissible restart count."""
    D = depth_threshold(W, p)
    return D, restart_threshold(D, W, kappa, p)


def kappa_bound_check(D: float, N: float, W: float, kappa: float, p: float) -> KappaCheck:
    """Evaluate both hypotheses and the conclusion ``[1 - (1-p^W)^D]^N >= kappa``.

    ``D``, ``N`` and ``W`` may be any positive reals. The arithmetic is done
    with 60 significant digits, so the comparisons are exact for all practical
    purposes even where the inequality is tight. When both hypotheses hold the
    conclusion is guaranteed; a failure then raises ``AssertionError``.
    """
    _check_prob("kappa", kappa, open_interval=True)
    _check_prob("p", p, open_interval=True)
    if not (D > 0 and N > 0 and W > 0):
        raise ValueError("D, N and W must be positive")
    with localcontext(_DECIMAL):
        d_thr, n_thr = _dec_thresholds(D, W, kappa, p)
        hyp = _dec(D) >= d_thr and _dec(N) <= n_thr
        log_miss = _dec(D) * _dec_ln1m((_dec(W) * _dec(p).ln()).exp())
        hit = _dec_neg_expm1(log_miss)
        dec_value = (_dec(N) * hit.ln()).exp() if hit > 0 else Decimal(0)
        holds = dec_value >= _dec(kappa)
        value = float(dec_value)
        d_float, n_float = float(d_thr), float(n_thr)
    if hyp and not holds:
        raise AssertionError(
            f"hypotheses hold but [1-(1-p^W)^D]^N = {value} < kappa = {kappa} "
            f"(D={D}, N={N}, W={W}, p={p})"
        )
    return KappaCheck(hyp, value, holds, d_float, n_float)


@dataclass
class ScheduleEntry:
    W: int
    D: int
    N: int
    kappa: float
    p: float
    certified: bool
    feasible: bool = True
    bound_value: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


def make_schedule(widths: Sequence[int], kappa: float, p: float) -> list[ScheduleEntry]:
    """Depth and restart count for each max width so the failure probability stays >= kappa.

    ``D = ceil(|log p| s p^{-s} + 2)`` and ``N = floor(|log kappa| (1 - p^s)^{3-D})``
    with ``s = W(W+1)``. Entries with ``N < 1`` or a depth beyond ``2**53`` are
    not certified.
    """
    _check_prob("kappa", kappa, open_interval=True)
    _check_prob("p", p, open_interval=True)
    entries = []
    for W in widths:
        W = int(W)
        if W < 1:
            raise ValueError("widths must be >= 1")
        s = W * (W + 1)
        with localcontext(_DECIMAL):
            d_thr = _dec_thresholds(1, s, kappa, p)[0]
            if d_thr + 2 > MAX_EXACT_DEPTH:
                entries.append(ScheduleEntry(W, 0, 0, kappa, p, certified=False, feasible=False))
                continue
            D = int((d_thr + 2).to_integral_value(rounding="ROUND_CEILING"))
            n_thr = _dec_thresholds(D - 2, s, kappa, p)[1]
            if n_thr > MAX_EXACT_DEPTH:
                entries.append(ScheduleEntry(W, D, 0, kappa, p, certified=False, feasible=False))
                continue
            N = int(n_thr.to_integral_value(rounding="ROUND_FLOOR"))
        certified = False
        value = 0.0
        if N >= 1:
            check = kappa_bound_check(D - 2, N, s, kappa, p)
            certified = check.hypotheses_hold and check.conclusion_holds
            value = check.conclusion_value
        entries.append(ScheduleEntry(W, D, N, kappa, p, certified, True, value))
    return entries


def architecture_from_entry(entry: ScheduleEntry, d: int) -> Architecture:
    """``(d, W, ..., W, 1)`` with ``D - 1`` hidden layers of width ``W``."""
    if not entry.certified:
        raise ValueError(f"schedule entry W={entry.W} is not certified")
    return Architecture([d] + [entry.W] * (entry.D - 1) + [1])


def _random_arch(rng: np.random.Generator, max_width: int, min_depth: int = 3, max_depth: int = 8) -> Architecture:
    depth = int(rng.integers(min_depth, max_depth + 1))
    return Architecture([int(rng.integers(1, max_width + 1)) for _ in range(depth)] + [1])


def verify_bounds(samples: int = 1000, seed: int = 0) -> dict:
    """Randomized checks of the bound formulas; each entry reports ``passed`` and failure count."""
    rng = np.random.default_rng(seed)
    report = {}

    fails = 0
    for _ in range(samples):
        arch = _random_arch(rng, 4)
        p = float(rng.uniform(0.05, 0.95))
        exact = inactivity_prob_exact(arch, np.full(layer_offsets(arch)[-1], p))
        lb = inactivity_prob_lower_bound(p, arch.max_hidden_width, arch.depth, 1)
        N = int(rng.integers(1, 50))
        risk = risk_lower_bound(all_runs_inactive_prob(exact, N), float(rng.uniform(0, 3)))
        if exact < lb or risk > 1.0:
            fails += 1
    report["exact_dominates_lower_bound"] = {"passed": fails == 0, "cases": samples, "failures": fails}

    fails = 0
    for _ in range(samples):
        p = float(rng.uniform(0.02, 0.98))
        kappa = float(rng.uniform(0.01, 0.99))
        W = float(rng.uniform(0.1, 12.0))
        D, N = admissible_extremes(W, kappa, p)
        check = kappa_bound_check(D, N, W, kappa, p)
        if not (check.hypotheses_hold and check.conclusion_value >= kappa):
            fails += 1
    report["kappa_inequality_at_extremes"] = {"passed": fails == 0, "cases": samples, "failures": fails}

    fails = 0
    for _ in range(samples):
        p = float(rng.uniform(0.05, 0.95))
        W = int(rng.integers(1, 4))
        D = int(rng.integers(3, 60))
        N = int(rng.integers(1, 20))
        base = inactivity_prob_lower_bound(p, W, D, N)
        if (inactivity_prob_lower_bound(p, W, D + 1, N) < base
                or inactivity_prob_lower_bound(p, W, D, N + 1) > base
                or inactivity_prob_lower_bound(min(p + 0.01, 0.99), W, D, N) < base):
            fails += 1
    report["lower_bound_monotone"] = {"passed": fails == 0, "cases": samples, "failures": fails}

    fails = 0
    entries = make_schedule(range(1, 6), 0.5, 0.5) + make_schedule(range(1, 4), 0.9, 0.7)
    for e in entries:
        if e.certified:
            value = inactivity_prob_lower_bound(e.p, e.W, e.D, e.N)
            if value < e.kappa:
                fails += 1
    report["schedule_certified"] = {"passed": fails == 0, "cases": len(entries), "failures": fails}
    return report
