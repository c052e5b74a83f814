"""Command-line surface: synth, segment, features, train, eval, classify,
grid.

Every subcommand funnels its randomness through the seed in the run
config, exits 0 on success and nonzero with a message on stderr
otherwise, and produces byte-identical outputs for identical inputs.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import baselines, evaluation, training
from .audio import AudioError, load_wav
from .baselines import BaselineError
from .config import (
    ConfigError,
    FREQ_COMBINATIONS,
    RunConfig,
    load_config,
    parse_config_text,
    select_channels,
    serialize_config,
    to_feature_config,
    to_model_config,
    to_train_config,
    to_vad_config,
)
from .evaluation import EvaluationError, evaluate_predictions, make_split, write_report
from .features import (
    FeatureError,
    extract_features,
    read_feature_cache,
    write_feature_cache,
)
from .labels import LabelError, SUBCLASS_NAMES
from .model import ModelError, load_checkpoint, save_checkpoint
from .synth import SynthError, generate_dataset, load_manifest
from .training import TrainingError, predict_sets, train, write_history
from .vad import segment_syllables

_ERRORS = (
    AudioError,
    BaselineError,
    ConfigError,
    EvaluationError,
    FeatureError,
    LabelError,
    ModelError,
    SynthError,
    TrainingError,
    OSError,
)

GRID_COMBINATIONS = ("time", "formants_spectral", "mfcc", "lfcc", "mfcc_lfcc", "three_channel")
GRID_MODELS = ("sharnn", "gmm", "cascade")


def _combo_config(cfg: RunConfig, combo: str) -> RunConfig:
    from dataclasses import replace

    if combo == "time":
        return replace(cfg, experiment="time_only")
    if combo == "three_channel":
        return replace(cfg, experiment="three_channel")
    return replace(cfg, experiment="freq_only", freq_combination=combo)


def cmd_synth(args: argparse.Namespace) -> int:
    manifest = generate_dataset(args.out, per_class=args.per_class, seed=args.seed)
    print(manifest)
    return 0


def cmd_segment(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    clip = load_wav(args.wav)
    for seg in segment_syllables(clip, to_vad_config(cfg)):
        print(f"{seg.start_s:.6f}\t{seg.end_s:.6f}")
    return 0


def _extract_manifest(manifest_path: str, cfg: RunConfig) -> list:
    vad_cfg = to_vad_config(cfg)
    feat_cfg = to_feature_config(cfg)
    records = []
    for wav_path, label in load_manifest(manifest_path):
        clip = load_wav(wav_path)
        rec = extract_features(clip, vad_cfg, feat_cfg, label=label)
        if rec is None:
            print(f"warning: no syllables in {clip.source_id}, excluded", file=sys.stderr)
            continue
        records.append(rec)
    return records


def cmd_features(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    records = _extract_manifest(args.manifest, cfg)
    write_feature_cache(args.out, records)
    print(f"{args.out}: {len(records)} records")
    return 0


def _split_records(records: list, cfg: RunConfig):
    labels = [rec.label for rec in records]
    if any(lab is None for lab in labels):
        raise TrainingError("feature cache has unlabeled records")
    plan = make_split(len(records), labels, test_frac=cfg.test_frac, k=cfg.folds, seed=cfg.seed)
    return plan, labels


def cmd_train(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    records = read_feature_cache(args.cache)
    plan, _ = _split_records(records, cfg)
    train_idx = plan.train_indices(args.fold)
    val_idx = plan.val_indices(args.fold)
    pairs = [(select_channels(cfg, records[i]), records[i].label) for i in train_idx]
    val_pairs = [(select_channels(cfg, records[i]), records[i].label) for i in val_idx]
    params, history = train(pairs, to_train_config(cfg), to_model_config(cfg), val_dataset=val_pairs)
    save_checkpoint(args.out, "sharnn", serialize_config(cfg), params)
    history_path = args.history or f"{args.out}.history"
    write_history(history_path, history)
    print(f"{args.out}: best val sample_f1 {max(h[2] for h in history)!r}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    kind, cfg_text, params = load_checkpoint(args.checkpoint)
    if kind != "sharnn":
        raise ModelError(f"expected a sharnn checkpoint, got {kind!r}")
    cfg = parse_config_text(cfg_text)
    model_cfg = to_model_config(cfg)
    records = read_feature_cache(args.cache)
    plan, labels = _split_records(records, cfg)
    subset = {
        "all": tuple(range(len(records))),
        "test": plan.test,
        "val": plan.val_indices(args.fold),
        "train": plan.train_indices(args.fold),
    }[args.split]
    samples = [select_channels(cfg, records[i]) for i in subset]
    truths = [labels[i] for i in subset]
    preds, logits = predict_sets(model_cfg, params, samples)
    report = evaluate_predictions(
        preds,
        logits,
        truths,
        split_description=f"{args.split}: {len(subset)} of {len(records)} records, fold {args.fold}",
        seed=cfg.seed,
    )
    write_report(args.out, report)
    print(f"{args.out}: sample_f1 {report.sample_f1!r}")
    return 0


def cmd_classify(args: argparse.Namespace) -> int:
    kind, cfg_text, params = load_checkpoint(args.checkpoint)
    if kind != "sharnn":
        raise ModelError(f"expected a sharnn checkpoint, got {kind!r}")
    cfg = parse_config_text(cfg_text)
    model_cfg = to_model_config(cfg)
    clip = load_wav(args.wav)
    rec = extract_features(clip, to_vad_config(cfg), to_feature_config(cfg))
    if rec is None:
        raise FeatureError(f"no syllables detected in {args.wav}")
    preds, logits = predict_sets(model_cfg, params, [select_channels(cfg, rec)])
    if args.single:
        z = logits[0]
        probs = np.exp(z - z.max())
        probs /= probs.sum()
        print(SUBCLASS_NAMES[int(np.argmax(probs))])
    else:
        print(",".join(SUBCLASS_NAMES[i] for i in sorted(preds[0])))
    return 0


def _grid_cell(records, plan, cfg: RunConfig, model_name: str) -> float:
    """Test-set sample F1 of one (feature combination, model) cell."""
    train_idx = plan.train_indices(0)
    val_idx = plan.val_indices(0)
    test_idx = plan.test
    truth_sets = [records[i].label.subclass_set() for i in test_idx]
    if model_name == "sharnn":
        pairs = [(select_channels(cfg, records[i]), records[i].label) for i in train_idx]
        val_pairs = [(select_channels(cfg, records[i]), records[i].label) for i in val_idx]
        params, _ = train(pairs, to_train_config(cfg), to_model_config(cfg), val_dataset=val_pairs)
        preds, _ = predict_sets(to_model_config(cfg), params, [select_channels(cfg, records[i]) for i in test_idx])
        return evaluation.sample_f1(preds, truth_sets)
    vectors = {i: baselines.summarize_arrays(select_channels(cfg, records[i])) for i in range(len(records))}
    if model_name == "gmm":
        fit_idx = list(train_idx) + list(val_idx)
        k = min(cfg.gmm_components, min_class_count(records, fit_idx))
        gmm = baselines.GmmClassifier(n_components=k, seed=cfg.seed)
        gmm.fit([vectors[i] for i in fit_idx], [records[i].label for i in fit_idx])
        preds = [frozenset([gmm.predict(vectors[i])[1]]) for i in test_idx]
        return evaluation.sample_f1(preds, truth_sets)
    ensemble = baselines.cascade_train(
        [vectors[i] for i in train_idx],
        [records[i].label for i in train_idx],
        seed=cfg.seed,
        val_vectors=[vectors[i] for i in val_idx],
        val_labels=[records[i].label for i in val_idx],
    )
    preds = [baselines.cascade_predict_set(ensemble, vectors[i]) for i in test_idx]
    return evaluation.sample_f1(preds, truth_sets)


def min_class_count(records, indices) -> int:
    counts = {}
    for i in indices:
        for c in records[i].label.subclass_set():
            counts[c] = counts.get(c, 0) + 1
    return min(counts.values())


def cmd_grid(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    records = _extract_manifest(args.manifest, cfg)
    plan, _ = _split_records(records, cfg)
    lines = []
    for combo in GRID_COMBINATIONS:
        combo_cfg = _combo_config(cfg, combo)
        for model_name in GRID_MODELS:
            f1 = _grid_cell(records, plan, combo_cfg, model_name)
            lines.append(f"{combo}\t{model_name}\t{f1!r}")
            print(lines[-1])
    if args.out:
        Path(args.out).write_text("\n".join(lines) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hencall", description="Laying-hen call recognition pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a labeled synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--per-class", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("segment", help="print detected syllables of one clip")
    p.add_argument("--wav", required=True)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("features", help="extract features from a manifest into a cache")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("train", help="train the attention-RNN classifier")
    p.add_argument("--cache", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--history", default=None)
    p.add_argument("--fold", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a feature cache")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--cache", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", choices=("all", "test", "val", "train"), default="test")
    p.add_argument("--fold", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("classify", help="label one clip with a trained checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--wav", required=True)
    p.add_argument("--single", action="store_true", help="softmax-argmax single label")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("grid", help="F1 table over feature combinations and models")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_grid)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
