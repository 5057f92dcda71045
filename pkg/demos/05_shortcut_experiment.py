# The identical-shortcut phenomenon, compressed: reconstruction baselines get
# better at reconstructing *everything*, anomalies included, so their
# detection decays while the masked-attention model holds.
#   python3 demos/05_shortcut_experiment.py     (several minutes on CPU)
#
# The full seeded experiment behind the acceptance suite is
#   uniad gen-synth --out data && uniad compare --data data --out results

import tempfile

from uniad import (
    ExperimentConfig,
    SyntheticSpec,
    generate_synthetic_dataset,
    load_dataset,
    shortcut_experiment,
)
from uniad.experiment import desk_train_config

out = tempfile.mkdtemp(prefix="uniad_shortcut_")
generate_synthetic_dataset(SyntheticSpec(), seed=0, out_dir=out)
dataset = load_dataset(out)

cfg = ExperimentConfig(archs=["mlp", "uniad"], regimes=["unified"], seeds=[0],
                       train_cfg=desk_train_config(seed=0))
report = shortcut_experiment(dataset, cfg, quiet=False)

print("\narch                peak    final   drop")
for arch in cfg.archs:
    t = report.runs(arch, "unified")[0]
    print(f"{arch:18s}  {t.peak_det:.3f}   {t.final_det:.3f}   "
          f"{100 * t.det_drop:5.1f} pts")
