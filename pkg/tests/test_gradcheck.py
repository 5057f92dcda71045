"""The finite-difference gradient checker itself."""

import numpy as np
import pytest

from uniad.gradcheck import grad_check
from uniad.tensor import GradError, Tensor, matmul


def linear_layer_loss(inputs):
    return (matmul(inputs["x"], inputs["w"]) + inputs["b"]).sum()


def make_inputs(seed=0):
    rng = np.random.default_rng(seed)
    return {
        "x": Tensor(rng.standard_normal((3, 4)), requires_grad=True, dtype=np.float64),
        "w": Tensor(rng.standard_normal((4, 2)), requires_grad=True, dtype=np.float64),
        "b": Tensor(rng.standard_normal(2), requires_grad=True, dtype=np.float64),
    }


def test_linear_layer_passes_tight_tolerance():
    report = grad_check(linear_layer_loss, make_inputs(), tolerance=1e-6)
    assert report.passed, str(report)
    assert report.n_checked == 3 * 4 + 4 * 2 + 2


def test_scaled_gradient_negative_control():
    # Analytic gradient deliberately scaled by 1.01: the extra term is zero
    # in value (so the numeric gradient is unchanged) but routes 1% more
    # gradient through w. The checker must flag it.
    inputs = make_inputs()

    def wrong(ins):
        true_loss = (matmul(ins["x"], ins["w"]) + ins["b"]).sum()
        h_live = matmul(ins["x"].detach(), ins["w"]).sum()
        h_const = matmul(ins["x"].detach(), ins["w"].detach()).sum()
        return true_loss + (h_live - h_const) * 0.01

    report = grad_check(wrong, inputs, tolerance=1e-6)
    assert not report.passed
    assert report.worst_rel_err > 1e-3
    assert report.failures and report.failures[0].name == "w"


def test_rejects_float32_inputs():
    bad = {"x": Tensor(np.zeros((2, 2), dtype=np.float32), requires_grad=True)}
    with pytest.raises(GradError, match="64-bit"):
        grad_check(lambda ins: ins["x"].sum(), bad, tolerance=1e-4)


def test_rejects_non_scalar_model_fn():
    inputs = make_inputs()
    with pytest.raises(GradError, match="scalar"):
        grad_check(lambda ins: matmul(ins["x"], ins["w"]), inputs, tolerance=1e-4)


def test_report_carries_worst_location():
    report = grad_check(linear_layer_loss, make_inputs(), tolerance=1e-6)
    assert report.worst_name in ("x", "w", "b")
    assert isinstance(report.worst_index, tuple)
    assert "PASS" in str(report)
