"""Finite-difference verification of analytic gradients.

Runs in float64: central differences at h=1e-5 are accurate to ~1e-9 there,
which makes the 1e-4 / 1e-6 tolerances used by the test suite meaningful.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .tensor import GradError, Tensor


@dataclass
class GradCheckFailure:
    name: str
    index: tuple[int, ...]
    analytic: float
    numeric: float
    rel_err: float


@dataclass
class GradCheckReport:
    passed: bool
    worst_rel_err: float
    worst_name: str = ""
    worst_index: tuple[int, ...] = ()
    n_checked: int = 0
    failures: list[GradCheckFailure] = field(default_factory=list)

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"grad_check {status}: worst rel err {self.worst_rel_err:.3e} "
                f"at {self.worst_name}{list(self.worst_index)} "
                f"({self.n_checked} elements, {len(self.failures)} failures)")


def _rel_err(a: float, n: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), 1.0)


def grad_check(model_fn: Callable[[dict[str, Tensor]], Tensor],
               inputs: dict[str, Tensor],
               tolerance: float,
               h: float = 1e-5,
               max_failures: int = 20) -> GradCheckReport:
    """Compare analytic gradients of `model_fn` against central differences.

    `model_fn` must map `inputs` to a scalar Tensor and be deterministic
    across calls; every element of every requires_grad input is perturbed.
    Failures never raise; they are carried in the report.
    """
    for name, t in inputs.items():
        if t.data.dtype != np.float64:
            raise GradError(f"grad_check runs in 64-bit mode; input '{name}' "
                            f"has dtype {t.data.dtype}")

    loss = model_fn(inputs)
    if loss.data.size != 1:
        raise GradError(f"model_fn must return a scalar, got shape {loss.shape}")
    for t in inputs.values():
        t.zero_grad()
    loss.backward()
    analytic = {name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
                for name, t in inputs.items() if t.requires_grad}

    report = GradCheckReport(passed=True, worst_rel_err=0.0)
    for name, t in inputs.items():
        if not t.requires_grad:
            continue
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = model_fn(inputs).item()
            flat[i] = orig - h
            f_minus = model_fn(inputs).item()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = float(analytic[name].reshape(-1)[i])
            err = _rel_err(a, numeric)
            report.n_checked += 1
            index = np.unravel_index(i, t.data.shape)
            if err > report.worst_rel_err:
                report.worst_rel_err = err
                report.worst_name = name
                report.worst_index = tuple(int(k) for k in index)
            if err > tolerance:
                report.passed = False
                if len(report.failures) < max_failures:
                    report.failures.append(GradCheckFailure(
                        name=name, index=tuple(int(k) for k in index),
                        analytic=a, numeric=numeric, rel_err=err))
    return report
