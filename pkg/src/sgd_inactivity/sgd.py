"""Multi-start SGD: random initialization, the update recursion, argmin selection."""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .data import DataModel
from .gradient import Batch, empirical_risk, risk_gradient
from .network import (
    Architecture,
    ReadOut,
    as_arch,
    param_count,
    params_from_bytes,
    params_to_bytes,
    realize,
)
from .seeding import Role, derive_rng


# --------------------------------------------------------------------------
# initialization laws

@dataclass(frozen=True)
class UniformLaw:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"uniform law needs lo < hi, got [{self.lo}, {self.hi}]")

    @property
    def neg_prob(self) -> float:
        return min(1.0, max(0.0, (0.0 - self.lo) / (self.hi - self.lo)))

    def sample(self, rng, size):
        return rng.uniform(self.lo, self.hi, size=size)

    def to_dict(self):
        return {"law": "uniform", "lo": self.lo, "hi": self.hi}


@dataclass(frozen=True)
class NormalLaw:
    mean: float = 0.0
    std: float = 1.0

    def __post_init__(self):
        if not self.std > 0:
            raise ValueError("normal law needs std > 0")

    @property
    def neg_prob(self) -> float:
        return 0.5 * math.erfc(self.mean / (self.std * math.sqrt(2.0)))

    def sample(self, rng, size):
        return rng.normal(self.mean, self.std, size=size)

    def to_dict(self):
        return {"law": "normal", "mean": self.mean, "std": self.std}


def make_law(spec):
    if isinstance(spec, (UniformLaw, NormalLaw)):
        return spec
    spec = dict(spec)
    law = spec.pop("law")
    if law == "uniform":
        return UniformLaw(**spec)
    if law == "normal":
        return NormalLaw(**spec)
    raise ValueError(f"unknown one-dimensional law {law!r}")


@dataclass(frozen=True)
class InitSpec:
    """``uniform``: every coordinate i.i.d. on ``[-c, c]``.

    ``product``: independent coordinates with the listed laws; a single law is
    broadcast to all coordinates.
    """

    kind: str = "uniform"
    c: float = 2.0
    laws: tuple = ()

    def __post_init__(self):
        if self.kind == "uniform":
            if not self.c > 0:
                raise ValueError("uniform initialization needs c > 0")
        elif self.kind == "product":
            if not self.laws:
                raise ValueError("product initialization needs at least one law")
        else:
            raise ValueError(f"unknown initialization kind {self.kind!r}")

    @classmethod
    def uniform(cls, c: float) -> "InitSpec":
        return cls("uniform", float(c))

    @classmethod
    def product(cls, laws: Sequence) -> "InitSpec":
        return cls("product", 0.0, tuple(make_law(law) for law in laws))

    def _laws_for(self, p: int):
        if self.kind == "uniform":
            return [UniformLaw(-self.c, self.c)] * p
        if len(self.laws) == 1:
            return list(self.laws) * p
        if len(self.laws) != p:
            raise ValueError(f"init lists {len(self.laws)} laws for {p} parameters")
        return list(self.laws)

    def neg_probs(self, arch) -> np.ndarray:
        return np.array([law.neg_prob for law in self._laws_for(param_count(arch))])

    def to_dict(self) -> dict:
        if self.kind == "uniform":
            return {"kind": "uniform", "c": self.c}
        return {"kind": "product", "laws": [law.to_dict() for law in self.laws]}

    @classmethod
    def from_config(cls, spec) -> "InitSpec":
        if isinstance(spec, InitSpec):
            return spec
        spec = dict(spec)
        kind = spec.get("kind", "uniform")
        if kind == "uniform":
            return cls.uniform(spec["c"])
        if kind == "product":
            return cls.product(spec["laws"])
        raise ValueError(f"unknown initialization kind {kind!r}")


def init_params(arch, spec: InitSpec, rng: np.random.Generator) -> np.ndarray:
    p = param_count(arch)
    if spec.kind == "uniform":
        return rng.uniform(-spec.c, spec.c, size=p)
    laws = spec._laws_for(p)
    if len(set(laws)) == 1:
        return np.asarray(laws[0].sample(rng, p), dtype=np.float64)
    return np.array([law.sample(rng, None) for law in laws], dtype=np.float64)


# --------------------------------------------------------------------------
# step sizes

@dataclass(frozen=True)
class StepSchedule:
    """``constant``: gamma_t = gamma. ``harmonic``: gamma_t = gamma / t. ``custom``: explicit list for t = 1, 2, ..."""

    kind: str = "constant"
    gamma: float = 0.1
    values: tuple = ()

    def __post_init__(self):
        if self.kind not in ("constant", "harmonic", "custom"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")

    def rate(self, t: int) -> float:
        if t < 1:
            raise ValueError("step sizes are indexed from t = 1")
        if self.kind == "constant":
            return self.gamma
        if self.kind == "harmonic":
            return self.gamma / t
        if t > len(self.values):
            raise IndexError(f"custom schedule has {len(self.values)} entries, step {t} requested")
        return float(self.values[t - 1])

    def to_dict(self) -> dict:
        if self.kind == "custom":
            return {"kind": "custom", "values": list(self.values)}
        return {"kind": self.kind, "gamma": self.gamma}

    @classmethod
    def from_config(cls, spec) -> "StepSchedule":
        if isinstance(spec, StepSchedule):
            return spec
        if isinstance(spec, (int, float)):
            return cls("constant", float(spec))
        spec = dict(spec)
        kind = spec.get("kind", "constant")
        if kind == "custom":
            return cls("custom", 0.0, tuple(float(g) for g in spec["values"]))
        return cls(kind, float(spec["gamma"]))


# --------------------------------------------------------------------------
# configuration

@dataclass
class TrainConfig:
    arch: Architecture
    N: int = 2
    T: int = 100
    M: int = 16
    schedule: StepSchedule = field(default_factory=StepSchedule)
    init: InitSpec = field(default_factory=lambda: InitSpec.uniform(2.0))
    readout: ReadOut = field(default_factory=ReadOut)
    cube_c: float = 2.0
    seed: int = 0

    def __post_init__(self):
        self.arch = as_arch(self.arch)
        self.arch.require_scalar_output()
        self.schedule = StepSchedule.from_config(self.schedule)
        self.init = InitSpec.from_config(self.init)
        self.readout = ReadOut.from_config(self.readout)
        if self.N < 1 or self.M < 1 or self.T < 0:
            raise ValueError(f"need N >= 1, M >= 1, T >= 0; got N={self.N}, M={self.M}, T={self.T}")
        if not self.cube_c > 0:
            raise ValueError("cube_c must be positive")

    def to_dict(self) -> dict:
        return {
            "arch": list(self.arch.dims),
            "N": self.N,
            "T": self.T,
            "M": self.M,
            "schedule": self.schedule.to_dict(),
            "init": self.init.to_dict(),
            "readout": self.readout.to_dict(),
            "cube_c": self.cube_c,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {"arch", "N", "T", "M", "schedule", "init", "readout", "cube_c", "seed"}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown training config keys: {sorted(extra)}")
        return cls(**d)


def load_document(path) -> dict:
    """Read a JSON or TOML file (chosen by extension) into a dict."""
    path = Path(path)
    if path.suffix == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:
            import tomli as tomllib
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    with open(path) as fh:
        return json.load(fh)


# --------------------------------------------------------------------------
# batches

def training_batch(data: DataModel, M: int, master_seed: int, replicate: int, n: int, t: int) -> Batch:
    return data.sample(derive_rng(master_seed, replicate, n, t, Role.BATCH), M)


def validation_batch(data: DataModel, M: int, master_seed: int, replicate: int) -> Batch:
    return data.sample(derive_rng(master_seed, replicate, 0, 0, Role.VALIDATION), M)


# --------------------------------------------------------------------------
# trajectories

@dataclass
class TrajectorySet:
    """``iterates[n - 1, t]`` is the parameter vector of restart ``n`` after ``t`` steps."""

    iterates: np.ndarray
    config: TrainConfig
    master_seed: int
    replicate: int = 0

    @property
    def N(self) -> int:
        return self.iterates.shape[0]

    @property
    def T(self) -> int:
        return self.iterates.shape[1] - 1

    def trajectory(self, n: int) -> np.ndarray:
        if not 1 <= n <= self.N:
            raise IndexError(f"trajectory {n} out of range 1..{self.N}")
        return self.iterates[n - 1]

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        manifest = {
            "config": self.config.to_dict(),
            "master_seed": self.master_seed,
            "replicate": self.replicate,
            "N": self.N,
            "T": self.T,
            "param_count": self.iterates.shape[2],
            "layout": "iterates.bin holds N*(T+1) length-prefixed float64 vectors ordered by (n, t)",
        }
        (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))
        with open(directory / "iterates.bin", "wb") as fh:
            for row in self.iterates.reshape(-1, self.iterates.shape[2]):
                fh.write(params_to_bytes(row))

    @classmethod
    def load(cls, directory) -> "TrajectorySet":
        directory = Path(directory)
        manifest = json.loads((directory / "manifest.json").read_text())
        p = manifest["param_count"]
        blob = (directory / "iterates.bin").read_bytes()
        rec = 8 + 8 * p
        count = manifest["N"] * (manifest["T"] + 1)
        if len(blob) != rec * count:
            raise ValueError("iterates.bin does not match manifest")
        rows = [params_from_bytes(blob[i * rec:(i + 1) * rec]) for i in range(count)]
        iterates = np.array(rows).reshape(manifest["N"], manifest["T"] + 1, p)
        return cls(iterates, TrainConfig.from_dict(manifest["config"]), manifest["master_seed"], manifest["replicate"])


def run_trajectory(config: TrainConfig, data: DataModel, master_seed: int, replicate: int = 0,
                   n: int = 1, theta0: Optional[np.ndarray] = None) -> np.ndarray:
    """Iterates ``t = 0..T`` of restart ``n``, shape ``(T + 1, P)``.

    ``theta0`` overrides the random initialization.
    """
    arch = config.arch
    if theta0 is None:
        theta0 = init_params(arch, config.init, derive_rng(master_seed, replicate, n, 0, Role.INIT))
    theta = np.array(theta0, dtype=np.float64)
    if theta.shape != (param_count(arch),):
        raise ValueError(f"initial vector has shape {theta.shape}")
    out = np.empty((config.T + 1, theta.shape[0]))
    out[0] = theta
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(1, config.T + 1):
            gamma = config.schedule.rate(t)
            if gamma != 0.0:
                batch = training_batch(data, config.M, master_seed, replicate, n, t)
                g = risk_gradient(arch, theta, batch, config.readout).gradient
                theta = theta - gamma * g
            out[t] = theta
    return out


def run_all(config: TrainConfig, data: DataModel, master_seed: Optional[int] = None, replicate: int = 0,
            workers: int = 1, theta0: Optional[np.ndarray] = None) -> TrajectorySet:
    """Run ``N`` restarts; each has its own seed path, so ``workers`` never changes the result.

    ``theta0`` (shape ``(N, P)``) replaces the random initializations.
    """
    seed = config.seed if master_seed is None else master_seed

    def one(n):
        start = None if theta0 is None else theta0[n - 1]
        return run_trajectory(config, data, seed, replicate, n, start)

    indices = range(1, config.N + 1)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            trajs = list(pool.map(one, indices))
    else:
        trajs = [one(n) for n in indices]
    return TrajectorySet(np.stack(trajs), config, seed, replicate)


def verify_recursion(ts: TrajectorySet, data: DataModel) -> bool:
    """Recompute every update from the regenerated batches and compare bitwise."""
    cfg = ts.config
    with np.errstate(over="ignore", invalid="ignore"):
        for n in range(1, ts.N + 1):
            traj = ts.trajectory(n)
            for t in range(1, ts.T + 1):
                gamma = cfg.schedule.rate(t)
                if gamma == 0.0:
                    expected = traj[t - 1]
                else:
                    batch = training_batch(data, cfg.M, ts.master_seed, ts.replicate, n, t)
                    g = risk_gradient(cfg.arch, traj[t - 1], batch, cfg.readout).gradient
                    expected = traj[t - 1] - gamma * g
                if not np.array_equal(expected, traj[t], equal_nan=True):
                    return False
    return True


# --------------------------------------------------------------------------
# selection

@dataclass
class Selection:
    n: int
    t: int
    theta: np.ndarray
    risk: float
    fallback: bool = False


def select_best(ts: TrajectorySet, validation: Batch, cube_c: float, readout: ReadOut) -> Selection:
    """Minimize validation risk over iterates inside ``[-c, c]^P``; ties go to smallest ``n``, then ``t``.

    When no iterate lies in the cube, ``(1, 0)`` is returned with ``fallback=True``.
    """
    arch = ts.config.arch
    best = None
    for n in range(1, ts.N + 1):
        traj = ts.trajectory(n)
        in_cube = np.all(np.abs(traj) <= cube_c, axis=1)
        for t in np.flatnonzero(in_cube):
            r = empirical_risk(arch, traj[t], validation, readout)
            if best is None or r < best[0]:
                best = (r, n, int(t))
    if best is None:
        theta = ts.trajectory(1)[0]
        with np.errstate(over="ignore", invalid="ignore"):
            r = empirical_risk(arch, theta, validation, readout)
        return Selection(1, 0, theta.copy(), r, fallback=True)
    r, n, t = best
    return Selection(n, t, ts.trajectory(n)[t].copy(), r)


# --------------------------------------------------------------------------
# true risk

@dataclass
class RiskEstimate:
    value: float
    half_width: float
    exact: bool
    n_samples: int = 0


def true_risk_estimate(arch, theta, data: DataModel, readout: ReadOut, n_samples: int = 10_000,
                       rng: Optional[np.random.Generator] = None, constant: Optional[bool] = None) -> RiskEstimate:
    """Estimate ``E|c(N(X)) - E(X)|``.

    When the realization is constant (``constant=True``, or detected through
    the inactivity check when ``None``) and the data model has a closed form,
    the value is exact. Otherwise a Monte Carlo mean is returned with a 3-sigma
    half-width.
    """
    from .inactivity import classify

    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    arch = as_arch(arch)
    if constant is None:
        constant = classify(arch, theta).inactive
    if constant and data.constant_risk is not None:
        b = float(realize(arch, theta, np.zeros(arch.input_dim))[0])
        return RiskEstimate(float(data.constant_risk(readout(b))), 0.0, True)
    if rng is None:
        rng = np.random.default_rng(0)
    x = data.sample_inputs(rng, n_samples)
    with np.errstate(over="ignore", invalid="ignore"):
        dev = np.abs(readout(realize(arch, theta, x)[:, 0]) - data.target(x))
    mean = float(dev.mean())
    half = 3.0 * float(dev.std(ddof=1)) / math.sqrt(n_samples) if n_samples > 1 else math.inf
    return RiskEstimate(mean, half, False, n_samples)


def true_risk(arch, theta, data: DataModel, readout: ReadOut, n_samples: int = 10_000,
              rng: Optional[np.random.Generator] = None) -> float:
    return true_risk_estimate(arch, theta, data, readout, n_samples, rng).value
