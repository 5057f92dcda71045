"""AdamW: bias-corrected Adam with decoupled weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, TensorError


class OptimError(TensorError):
    """Invalid optimizer configuration or state."""


@dataclass
class AdamWHyper:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4

    def validate(self) -> None:
        if not self.lr > 0:
            raise OptimError(f"lr must be positive, got {self.lr}")
        if not self.eps > 0:
            raise OptimError(f"eps must be positive, got {self.eps}")
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise OptimError(f"betas must lie in (0, 1), got {self.beta1}, {self.beta2}")
        if self.weight_decay < 0:
            raise OptimError(f"weight_decay must be >= 0, got {self.weight_decay}")


@dataclass
class AdamWState:
    """Per-parameter first/second moments plus the shared step counter.

    `m` and `v` mirror the shapes of the parameters they track; `v` stays
    elementwise >= 0 by construction.
    """

    hyper: AdamWHyper
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def init(cls, params: dict[str, Tensor], hyper: AdamWHyper) -> "AdamWState":
        hyper.validate()
        m = {name: np.zeros_like(p.data) for name, p in params.items()}
        v = {name: np.zeros_like(p.data) for name, p in params.items()}
        return cls(hyper=hyper, step=0, m=m, v=v)


def adamw_step(params: dict[str, Tensor], grads: dict[str, np.ndarray],
               state: AdamWState) -> None:
    """One optimizer step, in place on `params` and `state`.

    Update per parameter: moments m, v with bias correction, then
    theta <- theta*(1 - lr*wd) - lr * m_hat / (sqrt(v_hat) + eps),
    i.e. the weight decay is decoupled and uses the pre-step value.
    """
    h = state.hyper
    h.validate()
    state.step += 1
    t = state.step
    c1 = 1.0 - h.beta1 ** t
    c2 = 1.0 - h.beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.data.shape:
            raise OptimError(f"gradient shape {g.shape} != parameter shape "
                             f"{p.data.shape} for '{name}'")
        with np.errstate(over="ignore", invalid="ignore"):
            gsum = g.sum()
        if not np.isfinite(gsum) and not np.all(np.isfinite(g)):
            raise OptimError(f"non-finite gradient for parameter '{name}'")
        dt = p.data.dtype.type
        m = state.m[name]
        v = state.v[name]
        m *= dt(h.beta1)
        m += dt(1.0 - h.beta1) * g
        v *= dt(h.beta2)
        v += dt(1.0 - h.beta2) * np.square(g)
        # theta -= (lr/c1) * m / (sqrt(v)/sqrt(c2) + eps), i.e. the
        # bias-corrected update with one sqrt and no m_hat/v_hat temporaries
        denom = np.empty_like(v)
        np.sqrt(v, out=denom)
        denom *= dt(1.0 / np.sqrt(c2))
        denom += dt(h.eps)
        if h.weight_decay != 0.0:
            p.data *= dt(1.0 - h.lr * h.weight_decay)
        update = np.divide(m, denom, out=denom)
        update *= dt(h.lr / c1)
        p.data -= update
