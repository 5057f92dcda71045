"""Command-line surface: dataset generation, training, evaluation, the
comparative shortcut experiment, and artifact inspection.

Exit codes: 0 success, 2 usage/configuration error, 1 runtime failure.
Configuration precedence: built-in defaults < key=value config file < flags.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from dataclasses import fields, replace

import numpy as np

from . import codec, dataio
from .blocks import ConfigError
from .dataio import (
    CheckpointError,
    ManifestError,
    SyntheticSpec,
    generate_synthetic_dataset,
    load_checkpoint,
    load_dataset,
    load_manifest,
    save_checkpoint,
)
from .experiment import ExperimentConfig, desk_train_config, shortcut_experiment
from .model import ModelConfig
from .optim import OptimError
from .training import TrainConfig, evaluate, train

DATA_ROOT_ENV = "UNIAD_DATA_ROOT"
DEFAULT_SEEDS = (0, 1, 2, 3, 4)  # five seeds unless --seed/--seeds narrows it
_MODEL_FIELDS = {f.name: f.type for f in fields(ModelConfig)}
_TRAIN_FIELDS = {f.name: f.type for f in fields(TrainConfig)}
_SYNTH_FIELDS = {f.name: f.type for f in fields(SyntheticSpec)}


def _coerce(name: str, value: str, typ: str):
    if typ == "int":
        return int(value)
    if typ == "float":
        return float(value)
    return value


def parse_kv_file(path: str) -> dict[str, str]:
    """Flat key=value configuration file; '#' starts a comment."""
    out: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got '{line}'")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def _split_config(kv: dict[str, str]):
    """Route flat keys to (model, train, extras) dicts."""
    model: dict = {}
    tr: dict = {}
    extras: dict = {}
    for key, value in kv.items():
        if key in _MODEL_FIELDS:
            model[key] = _coerce(key, value, _MODEL_FIELDS[key])
        elif key in _TRAIN_FIELDS:
            tr[key] = _coerce(key, value, _TRAIN_FIELDS[key])
        elif key in ("regime", "seeds", "data", "out"):
            extras[key] = value
        else:
            raise ConfigError(f"unknown configuration key '{key}'")
    return model, tr, extras


def _parse_seeds(text: str) -> list[int]:
    try:
        seeds = [int(s) for s in text.split(",") if s.strip() != ""]
    except ValueError as exc:
        raise ConfigError(f"bad seed list '{text}'") from exc
    if not seeds:
        raise ConfigError("seed list is empty")
    return seeds


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_run_record(out_dir: str, command: str, config: dict,
                     seeds: list[int], artifacts: list[str]) -> str:
    """Reproducibility record beside the outputs: resolved config, seeds,
    and a sha256 per produced artifact."""
    record = {
        "command": command,
        "argv": sys.argv[1:],
        "config": config,
        "seeds": seeds,
        "artifacts": {os.path.relpath(p, out_dir): _sha256(p) for p in sorted(artifacts)},
    }
    path = os.path.join(out_dir, "run_record.json")
    codec.atomic_write(path, json.dumps(record, indent=1).encode())
    return path


def _resolve_data(args) -> str:
    data = getattr(args, "data", None) or os.environ.get(DATA_ROOT_ENV)
    if not data:
        raise ConfigError(f"no dataset given: pass --data or set ${DATA_ROOT_ENV}")
    if not os.path.exists(data):
        raise ConfigError(f"dataset path does not exist: {data}")
    return data


def _build_configs(args) -> tuple[ModelConfig, TrainConfig, dict]:
    model_kv: dict = {}
    train_kv: dict = {}
    extras: dict = {}
    if getattr(args, "config", None):
        if not os.path.exists(args.config):
            raise ConfigError(f"config file does not exist: {args.config}")
        model_kv, train_kv, extras = _split_config(parse_kv_file(args.config))
    for name in _MODEL_FIELDS:
        v = getattr(args, name, None)
        if v is not None:
            model_kv[name] = v
    for name in _TRAIN_FIELDS:
        v = getattr(args, name, None)
        if v is not None:
            train_kv[name] = v
    mc = ModelConfig(**model_kv)
    tc = TrainConfig(**train_kv)
    mc.validate()
    tc.validate()
    return mc, tc, extras


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model")
    g.add_argument("--arch", choices=("uniad", "vanilla_transformer", "mlp"))
    g.add_argument("--query-mode", dest="query_mode",
                   choices=("none", "single", "layer_wise"))
    g.add_argument("--mask-placement", dest="mask_placement",
                   choices=("none", "enc", "enc_dec1", "enc_dec2", "all"))
    g.add_argument("--loss-variant", dest="loss_variant",
                   choices=("mse", "normalized_mse", "cosine"))
    for name in ("c_org", "c", "h", "w", "enc_layers", "dec_layers",
                 "neighbor_size", "heads", "ffn_hidden"):
        g.add_argument(f"--{name.replace('_', '-')}", dest=name, type=int)
    g.add_argument("--jitter-scale", dest="jitter_scale", type=float)
    g.add_argument("--jitter-prob", dest="jitter_prob", type=float)


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("training")
    for name in ("epochs", "lr_drop_epoch", "batch_size", "eval_every", "pool_size"):
        g.add_argument(f"--{name.replace('_', '-')}", dest=name, type=int)
    for name in ("lr", "lr_drop_factor", "weight_decay"):
        g.add_argument(f"--{name.replace('_', '-')}", dest=name, type=float)


def _write_report(out_dir: str, stem: str, report) -> list[str]:
    report_path = os.path.join(out_dir, f"{stem}.json")
    codec.atomic_write(report_path, json.dumps(report.to_dict(), indent=1).encode())
    csv_path = os.path.join(out_dir, f"{stem}_trace.csv")
    rows = report.trace_csv_rows()
    with open(csv_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=["epoch", "loss", "det_auroc", "loc_auroc"])
        writer.writeheader()
        writer.writerows(rows)
    return [report_path, csv_path]


# -- subcommands ------------------------------------------------------------------


def cmd_gen_synth(args) -> int:
    spec_kv = parse_kv_file(args.spec) if args.spec else {}
    for item in args.override or []:
        if "=" not in item:
            raise ConfigError(f"--override expects key=value, got '{item}'")
        k, v = item.split("=", 1)
        spec_kv[k.strip()] = v.strip()
    unknown = set(spec_kv) - set(_SYNTH_FIELDS)
    if unknown:
        raise ConfigError(f"unknown synthetic-spec keys: {sorted(unknown)}")
    spec = SyntheticSpec(**{k: _coerce(k, v, _SYNTH_FIELDS[k]) for k, v in spec_kv.items()})
    spec.validate()
    os.makedirs(args.out, exist_ok=True)
    manifest = generate_synthetic_dataset(spec, args.seed, args.out)
    artifacts = [os.path.join(args.out, dataio.MANIFEST_NAME)]
    write_run_record(args.out, "gen-synth",
                     {"spec": spec.to_dict(), "seed": args.seed}, [args.seed], artifacts)
    print(f"wrote {len(manifest.samples)} samples "
          f"({spec.n_classes} classes) to {args.out}")
    return 0


def cmd_train(args) -> int:
    data = _resolve_data(args)
    model_cfg, train_cfg, extras = _build_configs(args)
    regime = args.regime or extras.get("regime", "unified")
    if regime not in ("unified", "separate"):
        raise ConfigError(f"regime must be 'unified' or 'separate', got '{regime}'")
    if args.seeds:
        seeds = _parse_seeds(args.seeds)
    elif "seeds" in extras:
        seeds = _parse_seeds(extras["seeds"])
    elif getattr(args, "seed", None) is not None:
        seeds = [train_cfg.seed]
    else:
        seeds = list(DEFAULT_SEEDS)
    dataset = load_dataset(data)
    os.makedirs(args.out, exist_ok=True)

    artifacts: list[str] = []
    finals: list[float] = []
    for seed in seeds:
        tcfg = replace(train_cfg, seed=seed)
        targets = ([None] if regime == "unified" else dataset.classes())
        for cid in targets:
            ds = dataset if cid is None else dataset.restricted_to_class(cid)
            tag = f"seed{seed}" + ("" if cid is None else f"_class{cid}")
            ckpt, report = train(ds, model_cfg, tcfg, quiet=args.quiet)
            ckpt_path = os.path.join(args.out, f"ckpt_{tag}.uck")
            save_checkpoint(ckpt.params, ckpt.opt_state, ckpt.model_cfg,
                            ckpt_path, train_cfg=tcfg.to_dict())
            artifacts.append(ckpt_path)
            artifacts += _write_report(args.out, f"report_{tag}", report)
            if report.pooled_det is not None:
                finals.append(report.pooled_det)
                print(f"{tag}: det AUROC {report.pooled_det:.4f}"
                      + (f", loc AUROC {report.pooled_loc:.4f}"
                         if report.pooled_loc is not None else ""))
    if len(finals) > 1:
        print(f"detection AUROC over {len(finals)} runs: "
              f"{np.mean(finals):.4f} +/- {np.std(finals):.4f}")
    write_run_record(args.out, "train",
                     {"model": model_cfg.to_dict(), "train": train_cfg.to_dict(),
                      "regime": regime, "data": data},
                     seeds, artifacts)
    return 0


def cmd_eval(args) -> int:
    data = _resolve_data(args)
    dataset = load_dataset(data)
    params, _, cfg, _ = load_checkpoint(
        args.ckpt, expect_grid=(dataset.c_org, dataset.h, dataset.w))
    report = evaluate(params, cfg, dataset, pool_size=args.pool_size or 4)
    det = "n/a" if report.pooled_det is None else f"{report.pooled_det:.4f}"
    loc = "n/a" if report.pooled_loc is None else f"{report.pooled_loc:.4f}"
    print(f"detection AUROC {det}, localization AUROC {loc}"
          + (" (localization flagged: missing masks)" if report.loc_flagged else ""))
    for cid, m in sorted(report.per_class.items()):
        cdet = "n/a" if m.det_auroc is None else f"{m.det_auroc:.4f}"
        cloc = "n/a" if m.loc_auroc is None else f"{m.loc_auroc:.4f}"
        print(f"  class {cid}: det {cdet}, loc {cloc}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        artifacts = _write_report(args.out, "eval_report", report)
        write_run_record(args.out, "eval",
                         {"ckpt": args.ckpt, "data": data,
                          "model": cfg.to_dict()}, [], artifacts)
    return 0


def cmd_compare(args) -> int:
    data = _resolve_data(args)
    dataset = load_dataset(data)
    base = desk_train_config()
    if getattr(args, "config", None):
        _, train_kv, _ = _split_config(parse_kv_file(args.config))
        base = replace(base, **train_kv)
    overrides = {name: getattr(args, name) for name in _TRAIN_FIELDS
                 if getattr(args, name, None) is not None}
    if overrides:
        base = replace(base, **overrides)
    base.validate()
    exp_cfg = ExperimentConfig(
        archs=[a.strip() for a in args.archs.split(",")],
        regimes=[r.strip() for r in args.regimes.split(",")],
        seeds=_parse_seeds(args.seeds),
        train_cfg=base)
    report, checkpoints = shortcut_experiment(dataset, exp_cfg, quiet=args.quiet,
                                              keep_checkpoints=True)
    os.makedirs(args.out, exist_ok=True)
    artifacts = []

    traces_path = os.path.join(args.out, "traces.csv")
    with open(traces_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=[
            "arch", "regime", "seed", "class_id", "epoch", "loss",
            "det_auroc", "loc_auroc"])
        writer.writeheader()
        writer.writerows(report.csv_rows())
    artifacts.append(traces_path)

    summary: dict = {"runs": []}
    for arch in exp_cfg.archs:
        for regime in exp_cfg.regimes:
            entry = {"arch": arch, "regime": regime,
                     "mean_final_det": report.mean_final_det(arch, regime),
                     "mean_det_drop": report.mean_det_drop(arch, regime)}
            summary["runs"].append(entry)
        if "unified" in exp_cfg.regimes and "separate" in exp_cfg.regimes:
            summary.setdefault("unified_vs_separate", {})[arch] = (
                report.unified_vs_separate_delta(arch))
    summary_path = os.path.join(args.out, "summary.json")
    codec.atomic_write(summary_path, json.dumps(summary, indent=1).encode())
    artifacts.append(summary_path)

    artifacts += _write_score_heatmaps(args.out, dataset, checkpoints)
    write_run_record(args.out, "compare",
                     {"train": base.to_dict(), "archs": exp_cfg.archs,
                      "regimes": exp_cfg.regimes, "data": data},
                     exp_cfg.seeds, artifacts)
    for entry in summary["runs"]:
        print(f"{entry['arch']:20s} {entry['regime']:9s} "
              f"final det {entry['mean_final_det']:.4f} "
              f"drop {entry['mean_det_drop']:.4f}")
    return 0


def _write_score_heatmaps(out_dir: str, dataset, checkpoints) -> list[str]:
    """Final-model score maps for one anomalous test sample per class,
    written as plain numeric CSV grids."""
    from .model import reconstruct
    from .scoring import anomaly_score_map

    written = []
    for (arch, regime, seed, cid), ckpt in checkpoints.items():
        if regime != "unified":
            continue
        for class_id in dataset.classes():
            sample = next((s for s in dataset.samples
                           if s.split == "test" and s.class_id == class_id
                           and s.image_label == "anomalous"), None)
            if sample is None:
                continue
            rec = reconstruct(sample.features.astype(np.float32),
                              ckpt.params, ckpt.model_cfg)
            s = anomaly_score_map(sample.features, rec, ckpt.model_cfg.loss_variant)
            path = os.path.join(out_dir, f"scoremap_{arch}_seed{seed}_class{class_id}.csv")
            np.savetxt(path, s, delimiter=",", fmt="%.6f")
            written.append(path)
    return written


def cmd_inspect(args) -> int:
    path = args.path
    if not os.path.exists(path):
        raise ConfigError(f"no such file: {path}")
    if path.endswith(".json") or os.path.isdir(path):
        manifest = load_manifest(path)
        print(f"manifest: {len(manifest.samples)} samples, grid "
              f"({manifest.c_org}, {manifest.h}, {manifest.w}), "
              f"image size {manifest.image_size}")
        by = {}
        for s in manifest.samples:
            key = (s.class_id, s.split, s.image_label)
            by[key] = by.get(key, 0) + 1
        for (cid, split, label), n in sorted(by.items()):
            print(f"  class {cid} {split:5s} {label:9s} x{n}")
        return 0
    with open(path, "rb") as f:
        magic = f.read(4)
    if magic == dataio.CHECKPOINT_MAGIC:
        params, state, cfg, train_cfg = load_checkpoint(path)
        from .model import parameter_count
        print(f"checkpoint: arch {cfg.arch}, grid ({cfg.c_org}, {cfg.h}, {cfg.w}), "
              f"{parameter_count(params)} parameters, adamw step {state.step}")
        for key, value in cfg.to_dict().items():
            print(f"  {key} = {value}")
        if train_cfg:
            print("  -- training --")
            for key, value in train_cfg.items():
                print(f"  {key} = {value}")
        return 0
    header = codec.read_header(path)
    print(", ".join(f"{k}: {v}" for k, v in header.items()))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="uniad",
        description="Unified multi-class anomaly detection by masked-attention "
                    "feature reconstruction.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-synth", help="generate the synthetic multi-class dataset")
    g.add_argument("--spec", help="key=value synthetic-spec file")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--override", "-o", action="append",
                   help="spec override key=value (repeatable)")
    g.set_defaults(func=cmd_gen_synth)

    t = sub.add_parser("train", help="train a model and write a checkpoint")
    t.add_argument("--data", help=f"dataset dir (default ${DATA_ROOT_ENV})")
    t.add_argument("--out", required=True)
    t.add_argument("--config", help="key=value run-config file")
    t.add_argument("--regime", choices=("unified", "separate"))
    t.add_argument("--seeds", help="comma-separated seed list")
    t.add_argument("--quiet", action="store_true")
    t.add_argument("--seed", dest="seed", type=int)
    _add_model_flags(t)
    _add_train_flags(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", help=f"dataset dir (default ${DATA_ROOT_ENV})")
    e.add_argument("--out")
    e.add_argument("--pool-size", dest="pool_size", type=int)
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("compare", help="run the comparative shortcut experiment")
    c.add_argument("--data", help=f"dataset dir (default ${DATA_ROOT_ENV})")
    c.add_argument("--out", required=True)
    c.add_argument("--archs", default="mlp,vanilla_transformer,uniad")
    c.add_argument("--regimes", default="unified")
    c.add_argument("--seeds", default="0")
    c.add_argument("--config", help="key=value run-config file")
    c.add_argument("--quiet", action="store_true")
    _add_train_flags(c)
    c.set_defaults(func=cmd_compare)

    i = sub.add_parser("inspect", help="print the header/config of an artifact")
    i.add_argument("path")
    i.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ManifestError, OptimError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (codec.CodecError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
