# The neighbor mask and what it does to attention.
#   python3 demos/02_neighbor_masked_attention.py

import numpy as np

from uniad import Tensor, build_neighbor_mask
from uniad.blocks import AttentionParams, attention, attention_weights

# On a 2-d token grid, each token prohibits attention to its Chebyshev ball
# (itself included). 5x5 grid, 3x3 neighborhood:
mask = build_neighbor_mask(5, 5, 3)
print("prohibited entries for the center token (reshaped to the grid):")
print(mask.matrix[12].reshape(5, 5).astype(int))
print("corner token:")
print(mask.matrix[0].reshape(5, 5).astype(int))

# Attention under the mask: masked pairs carry exactly zero weight and the
# remaining weights renormalize to one.
rng = np.random.default_rng(0)
k, c = 25, 8


def table():
    return Tensor(rng.standard_normal((k, c)) * 0.1, requires_grad=True)


params = AttentionParams(
    w_q=Tensor(rng.standard_normal((c, c)) * 0.3, requires_grad=True),
    w_k=Tensor(rng.standard_normal((c, c)) * 0.3, requires_grad=True),
    w_v=Tensor(rng.standard_normal((c, c)) * 0.3, requires_grad=True),
    w_o=Tensor(rng.standard_normal((c, c)) * 0.3, requires_grad=True),
    pe_q=table(), pe_kv=table(), heads=2)

x = Tensor(rng.standard_normal((k, c)).astype(np.float32))
w = attention_weights(x, x, params, mask)
print("\nweights at masked pairs, max |.|:", np.abs(w[:, mask.matrix]).max())
print("row sums:", w.sum(axis=-1).min(), "...", w.sum(axis=-1).max())

# The blockade is structural, not statistical: perturb one token and the
# attention outputs of every token that masks it do not move at all.
out_before = attention(x, x, params, mask).data
x_pert = x.data.copy()
x_pert[12] += 100.0
out_after = attention(Tensor(x_pert), Tensor(x_pert), params, mask).data
blind = np.where(mask.matrix[:, 12])[0]
moved = np.abs(out_after - out_before).max(axis=1)
print("\nafter perturbing token 12 by +100:")
print("  max output change among tokens that mask it:", moved[blind[blind != 12]].max())
print("  max output change among tokens that see it:  ",
      moved[~mask.matrix[:, 12]].max())
