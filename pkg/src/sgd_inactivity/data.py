"""Data laws ``(X, Y)`` with a target ``E(x) = E[Y | X = x]``."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .gradient import Batch


def _uniform_abs_dev(b):
    """``E|b - U|`` for ``U ~ U[0, 1]``."""
    b = np.asarray(b, dtype=np.float64)
    inside = 0.5 * (b * b + (1.0 - b) ** 2)
    out = np.where(b <= 0.0, 0.5 - b, np.where(b >= 1.0, b - 0.5, inside))
    return float(out) if out.ndim == 0 else out


def _fair_coin_abs_dev(b):
    """``E|b - B|`` for ``B ~ Bernoulli(1/2)`` on ``{0, 1}``."""
    b = np.asarray(b, dtype=np.float64)
    out = 0.5 * (np.abs(b) + np.abs(1.0 - b))
    return float(out) if out.ndim == 0 else out


@dataclass
class DataModel:
    """Inputs uniform on ``[u, v]^d``, target ``E`` into ``[label_lo, label_hi]``.

    ``labels`` is ``"deterministic"`` (``Y = E(X)``) or ``"bernoulli"``
    (``Y ~ Bernoulli(E(X))``). ``floor_exact`` is ``inf_b E|b - E(X)|`` and
    ``constant_risk(b)`` is ``E|b - E(X)|``, when known in closed form.
    """

    name: str
    input_dim: int
    target: Callable[[np.ndarray], np.ndarray]
    labels: str = "deterministic"
    u: float = 0.0
    v: float = 1.0
    label_lo: float = 0.0
    label_hi: float = 1.0
    floor_exact: Optional[float] = None
    constant_risk: Optional[Callable] = None
    lipschitz: Optional[float] = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.labels not in ("deterministic", "bernoulli"):
            raise ValueError(f"unknown label mechanism {self.labels!r}")
        if self.labels == "bernoulli" and (self.label_lo, self.label_hi) != (0.0, 1.0):
            raise ValueError("bernoulli labels need target range [0, 1]")
        if not self.u < self.v:
            raise ValueError("need u < v")

    def sample_inputs(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(self.u, self.v, size=(n, self.input_dim))

    def sample_targets(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Draws of ``B = E(X)``."""
        return self.target(self.sample_inputs(rng, n))

    def sample(self, rng: np.random.Generator, m: int) -> Batch:
        x = self.sample_inputs(rng, m)
        e = self.target(x)
        if self.labels == "bernoulli":
            y = (rng.random(m) < e).astype(np.float64)
        else:
            y = e
        return Batch(x, y)

    def describe(self) -> dict:
        return {"name": self.name, "input_dim": self.input_dim, "labels": self.labels, **self.params}


def _linear_1d() -> DataModel:
    return DataModel(
        name="linear-1d", input_dim=1, target=lambda x: x[:, 0].copy(),
        floor_exact=0.25, constant_risk=_uniform_abs_dev, lipschitz=1.0,
    )


def _bernoulli_linear() -> DataModel:
    return DataModel(
        name="bernoulli-linear", input_dim=1, target=lambda x: x[:, 0].copy(), labels="bernoulli",
        floor_exact=0.25, constant_risk=_uniform_abs_dev, lipschitz=1.0,
    )


def _coordinate_mean(d: int = 2) -> DataModel:
    d = int(d)
    if d == 1:
        floor, const = 0.25, _uniform_abs_dev
    else:
        floor, const = None, None
    return DataModel(
        name="coordinate-mean", input_dim=d, target=lambda x: x.mean(axis=1),
        floor_exact=floor, constant_risk=const, lipschitz=1.0 / np.sqrt(d), params={"d": d},
    )


def _step_1d() -> DataModel:
    return DataModel(
        name="step-1d", input_dim=1, target=lambda x: (x[:, 0] >= 0.5).astype(np.float64),
        floor_exact=0.5, constant_risk=_fair_coin_abs_dev,
    )


def _constant(value: float = 0.5) -> DataModel:
    value = float(value)
    return DataModel(
        name="constant", input_dim=1, target=lambda x: np.full(x.shape[0], value),
        floor_exact=0.0, constant_risk=lambda b: np.abs(np.asarray(b, dtype=np.float64) - value) + 0.0,
        lipschitz=0.0, params={"value": value},
    )


DATA_MODELS: dict[str, Callable[..., DataModel]] = {
    "linear-1d": _linear_1d,
    "bernoulli-linear": _bernoulli_linear,
    "coordinate-mean": _coordinate_mean,
    "step-1d": _step_1d,
    "constant": _constant,
}


def make_data_model(spec) -> DataModel:
    """Build a registered model from a name or ``{"name": ..., **params}``."""
    if isinstance(spec, DataModel):
        return spec
    if isinstance(spec, str):
        name, params = spec, {}
    else:
        params = dict(spec)
        name = params.pop("name")
    try:
        factory = DATA_MODELS[name]
    except KeyError:
        raise ValueError(f"unknown data model {name!r}; known: {sorted(DATA_MODELS)}") from None
    return factory(**params)
