# Training-time feature jittering: noise scaled to the token norm.
#   python3 demos/03_feature_jitter.py

import numpy as np

from uniad import Tensor, feature_jitter

rng = np.random.default_rng(0)

# For a token f with ||f|| = 12.8 and C = 256 channels, scale alpha = 20
# gives per-channel noise std alpha * ||f|| / C = 1.0.
c = 256
token = np.full(c, 12.8 / np.sqrt(c))
print("token norm:", np.linalg.norm(token))

batch = Tensor(np.tile(token, (1, 2000, 1)))
noisy = feature_jitter(batch, alpha=20.0, prob=1.0, rng=rng)
delta = noisy.data - batch.data
print("empirical noise std:", delta.std(), "(expected 1.0)")

# The jitter probability selects tokens; unselected tokens pass through
# bitwise unchanged.
noisy_half = feature_jitter(batch, alpha=20.0, prob=0.5, rng=rng)
touched = np.any(noisy_half.data != batch.data, axis=-1)
print("fraction of tokens jittered at p=0.5:", touched.mean())

# alpha=0 and p=0 are exact no-ops (the same object comes back).
print("alpha=0 is identity:", feature_jitter(batch, 0.0, 1.0, rng) is batch)
print("p=0     is identity:", feature_jitter(batch, 20.0, 0.0, rng) is batch)

# Norm-proportional scaling: weak tokens get weak noise.
mixed = np.zeros((1, 2, c))
mixed[0, 0] = token          # norm 12.8
mixed[0, 1] = token * 0.1    # norm 1.28
out = feature_jitter(Tensor(np.tile(mixed, (1000, 1, 1))), 20.0, 1.0, rng)
d = out.data - np.tile(mixed, (1000, 1, 1))
print("std on strong tokens:", d[:, 0].std(), "| std on weak tokens:", d[:, 1].std())
