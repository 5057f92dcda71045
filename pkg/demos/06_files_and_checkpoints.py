# The byte-exact interchange formats and checkpoint round trips.
#   python3 demos/06_files_and_checkpoints.py

import os
import tempfile

import numpy as np

from uniad import (
    ModelConfig,
    decode_features,
    encode_features,
    init_params,
    load_checkpoint,
    reconstruct,
    save_checkpoint,
)
from uniad.codec import read_header
from uniad.optim import AdamWHyper, AdamWState
from uniad.model import named_parameters

d = tempfile.mkdtemp(prefix="uniad_files_")

# Feature files: 19-byte header, then raw little-endian float32.
fmap = np.random.default_rng(0).standard_normal((272, 14, 14)).astype(np.float32)
path = os.path.join(d, "sample.ufm")
n = encode_features(fmap, path)
print(f"wrote {n} bytes; header: {read_header(path)}")
print("round trip bitwise equal:", np.array_equal(decode_features(path), fmap))

blob = open(path, "rb").read()
print("first 19 header bytes:", blob[:19].hex(" "))

# Checkpoints carry the config, every named parameter, and optimizer moments.
cfg = ModelConfig(c_org=16, c=8, h=4, w=4, enc_layers=1, dec_layers=2,
                  heads=2, neighbor_size=3)
params = init_params(cfg, np.random.default_rng(1))
state = AdamWState.init(named_parameters(params), AdamWHyper(lr=1e-3))
ckpt_path = os.path.join(d, "model.uck")
save_checkpoint(params, state, cfg, ckpt_path)
print(f"\ncheckpoint: {os.path.getsize(ckpt_path)} bytes, "
      f"{len(named_parameters(params))} tensors (+2 moments each)")

params2, state2, cfg2, _ = load_checkpoint(ckpt_path)
f = np.random.default_rng(2).standard_normal((16, 4, 4)).astype(np.float32)
same = np.array_equal(reconstruct(f, params, cfg), reconstruct(f, params2, cfg2))
print("reloaded model reproduces eval bitwise:", same)

# Loading against the wrong grid is refused.
try:
    load_checkpoint(ckpt_path, expect_grid=(272, 14, 14))
except Exception as exc:
    print("grid mismatch refused:", type(exc).__name__)
