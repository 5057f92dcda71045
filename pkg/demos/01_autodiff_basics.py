# Tensors, reverse-mode gradients, and finite-difference verification.
# Run from the repo root after `pip install -e .`:
#   python3 demos/01_autodiff_basics.py

import numpy as np

from uniad import Tensor, grad_check, matmul, softmax_masked, use_dtype

# A tensor tracks its value and, once backward() runs, its gradient.
x = Tensor(3.0, requires_grad=True)
y = x * x + 2.0 * x          # y = x^2 + 2x
y.backward()
print("d/dx (x^2 + 2x) at x=3:", x.grad, "(expected 8)")

# Gradients sum over every path through the graph.
a = Tensor(np.array([1.0, 2.0]), requires_grad=True)
loss = (a * a).sum() + a.sum()
loss.backward()
print("grad of sum(a^2) + sum(a):", a.grad, "(expected 2a + 1)")

# softmax rows sum to one, so the gradient of their sum vanishes.
logits = Tensor(np.array([0.3, -1.0, 2.2]), requires_grad=True, dtype=np.float64)
softmax_masked(logits).sum().backward()
print("grad of sum(softmax(x)):", logits.grad, "(~0 elementwise)")

# Masking: prohibited entries get exactly zero weight.
w = softmax_masked(Tensor([1.0, 5.0, 2.0]), np.array([False, True, False]))
print("masked softmax weights:", w.data, "(middle entry exactly 0)")

# Analytic gradients are validated against central finite differences in
# float64. Here: a small linear layer at tolerance 1e-6.
with use_dtype(np.float64):
    rng = np.random.default_rng(0)
    inputs = {
        "x": Tensor(rng.standard_normal((4, 3)), requires_grad=True),
        "w": Tensor(rng.standard_normal((3, 2)), requires_grad=True),
    }
    report = grad_check(lambda t: matmul(t["x"], t["w"]).sum(), inputs,
                        tolerance=1e-6)
print(report)
