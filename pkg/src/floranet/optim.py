"""The seven first-order update rules, applied uniformly to any parameter set.

Update rules follow the standard published definitions; epsilon sits outside
the square root everywhere (implementations differ on this, so it is fixed
here and covered by the single-step oracle tests).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .layers import Parameter

OPTIMIZER_KINDS = ("sgd", "rmsprop", "adagrad", "adadelta", "adam", "nadam", "adamax")

DEFAULT_LR = {
    "sgd": 0.01,
    "rmsprop": 0.001,
    "adagrad": 0.001,
    "adadelta": 1.0,
    "adam": 0.001,
    "nadam": 0.001,
    "adamax": 0.001,
}

_DEFAULT_RHO = {"rmsprop": 0.9, "adadelta": 0.95}


class OptimizerError(ValueError):
    """Invalid configuration or state/parameter mismatch."""


@dataclass
class OptimizerConfig:
    kind: str
    learning_rate: float | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    rho: float | None = None
    momentum: float = 0.0
    epsilon: float = 1e-7

    def __post_init__(self):
        if self.kind not in OPTIMIZER_KINDS:
            raise OptimizerError(
                f"unknown optimizer {self.kind!r}; expected one of {OPTIMIZER_KINDS}")
        if self.learning_rate is None:
            self.learning_rate = DEFAULT_LR[self.kind]
        if self.rho is None:
            self.rho = _DEFAULT_RHO.get(self.kind, 0.9)
        if self.learning_rate <= 0:
            raise OptimizerError(f"learning_rate must be > 0, got {self.learning_rate}")
        for name in ("beta1", "beta2", "rho", "momentum"):
            v = getattr(self, name)
            if not (0.0 <= v < 1.0):
                raise OptimizerError(f"{name} must be in [0, 1), got {v}")
        if self.epsilon <= 0:
            raise OptimizerError(f"epsilon must be > 0, got {self.epsilon}")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "learning_rate": self.learning_rate,
                "beta1": self.beta1, "beta2": self.beta2, "rho": self.rho,
                "momentum": self.momentum, "epsilon": self.epsilon}

    @staticmethod
    def from_dict(d: dict) -> "OptimizerConfig":
        return OptimizerConfig(**d)


_SLOT_NAMES = {
    "sgd": ("m",),          # allocated only when momentum > 0
    "rmsprop": ("v",),
    "adagrad": ("a",),
    "adadelta": ("a", "d"),
    "adam": ("m", "v"),
    "nadam": ("m", "v"),
    "adamax": ("m", "u"),
}


class Optimizer:
    """Per-parameter slot state plus the step rule for one optimizer kind."""

    def __init__(self, config: OptimizerConfig, params: list[Parameter]):
        self.config = config
        self.params = list(params)
        self.step_counter = 0
        names = _SLOT_NAMES[config.kind]
        if config.kind == "sgd" and config.momentum == 0.0:
            names = ()
        self.slots: list[dict[str, np.ndarray]] = [
            {n: np.zeros_like(p.values.data) for n in names} for p in self.params
        ]

    def _check(self, params: list[Parameter]) -> None:
        if len(params) != len(self.params):
            raise OptimizerError(
                f"state built for {len(self.params)} parameters, got {len(params)}")
        for p, q in zip(self.params, params):
            if p.values.shape != q.values.shape:
                raise OptimizerError(
                    f"parameter {q.name}: shape {q.values.shape} does not match "
                    f"state shape {p.values.shape}")

    def step(self, params: list[Parameter] | None = None) -> None:
        """Apply one update using each parameter's accumulated gradient.

        Frozen and moving-statistic parameters are left bit-unchanged; all
        gradients are zeroed afterwards.
        """
        if params is not None:
            self._check(params)
        else:
            params = self.params
        self.step_counter += 1
        cfg = self.config
        t = self.step_counter
        for p, slot in zip(params, self.slots):
            if p.trainable and not p.moving_stat:
                self._update(p.values.data, p.grads.data, slot, cfg, t)
            p.grads.data[...] = 0

    @staticmethod
    def _update(w: np.ndarray, g: np.ndarray, slot: dict, cfg: OptimizerConfig,
                t: int) -> None:
        lr, eps = cfg.learning_rate, cfg.epsilon
        kind = cfg.kind
        if kind == "sgd":
            if cfg.momentum > 0.0:
                m = slot["m"]
                m *= cfg.momentum
                m += g
                w -= lr * m
            else:
                w -= lr * g
        elif kind == "rmsprop":
            v = slot["v"]
            v *= cfg.rho
            v += (1.0 - cfg.rho) * g * g
            w -= lr * g / (np.sqrt(v) + eps)
        elif kind == "adagrad":
            a = slot["a"]
            a += g * g
            w -= lr * g / (np.sqrt(a) + eps)
        elif kind == "adadelta":
            a, d = slot["a"], slot["d"]
            a *= cfg.rho
            a += (1.0 - cfg.rho) * g * g
            delta = -(np.sqrt(d + eps) / np.sqrt(a + eps)) * g
            d *= cfg.rho
            d += (1.0 - cfg.rho) * delta * delta
            w += lr * delta
        elif kind == "adam":
            m, v = slot["m"], slot["v"]
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * g * g
            mhat = m / (1.0 - cfg.beta1 ** t)
            vhat = v / (1.0 - cfg.beta2 ** t)
            w -= lr * mhat / (np.sqrt(vhat) + eps)
        elif kind == "nadam":
            m, v = slot["m"], slot["v"]
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * g * g
            mhat = m / (1.0 - cfg.beta1 ** t)
            vhat = v / (1.0 - cfg.beta2 ** t)
            mbar = cfg.beta1 * mhat + (1.0 - cfg.beta1) * g / (1.0 - cfg.beta1 ** t)
            w -= lr * mbar / (np.sqrt(vhat) + eps)
        elif kind == "adamax":
            m, u = slot["m"], slot["u"]
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            np.maximum(cfg.beta2 * u, np.abs(g), out=u)
            mhat = m / (1.0 - cfg.beta1 ** t)
            w -= lr * mhat / (u + eps)
        else:
            raise OptimizerError(f"unknown optimizer {kind!r}")
