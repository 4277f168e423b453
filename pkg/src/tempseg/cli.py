"""Command-line front end.

Subcommands
    generate   synthesize a dataset (train/val/test CSV files + manifest)
    train      fit a model, writing a checkpoint and a JSON-lines log
    eval       score a checkpoint on a dataset (metrics, predictions,
               embeddings for external projection tools)
    predict    label a dataset with a checkpoint, no ground-truth needed
    gradcheck  finite-difference audit of every differentiable op
    ablate     run the five standard variants over several seeds

Configuration is a plain-text file of `key = value` lines (# comments
allowed).  Command-line flags override file values, which override the
built-in defaults below; the --variant flag is applied last since it
defines the experiment row.  Unknown keys are rejected.  Every command is
a pure function of its config: re-running overwrites outputs identically.

Ablation variants:
    1  single stage, no contrast        2  multi-stage, no contrast
    3  single stage, full contrast      4  multi-stage, sample-level only
    5  multi-stage, full contrast
"""

import argparse
import dataclasses
import json
import logging
import os
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import data as dt
from . import model as md
from . import train as tr
from .gradcheck_suite import OP_CHECKS, check_full_objective
from .metrics import evaluate_predictions

log = logging.getLogger("tempseg.cli")

_TOLERANCE = 1e-4   # gradcheck pass threshold


def _parse_bool(text: str) -> bool:
    if text == "true":
        return True
    if text == "false":
        return False
    raise ValueError(f"expected true or false, got {text!r}")


def _parse_auto_int(text: str):
    return None if text == "auto" else int(text)


def _parse_subjects(text: str) -> tuple:
    return tuple(part.strip() for part in text.split(",") if part.strip())


# key -> (default, parser, help).  This table is the documentation of
# record for the config file format.
_SCHEMA = {
    # model
    "input_dim":        (None, _parse_auto_int, "feature channels; auto = infer from data"),
    "num_classes":      (None, _parse_auto_int, "label count; auto = infer from data"),
    "num_stages":       (2, int, "refinement stages"),
    "layers_per_stage": (6, int, "dilated blocks per stage"),
    "hidden_channels":  (32, int, "feature width inside a stage"),
    "projection_dim":   (16, int, "contrastive embedding width"),
    "kernel_size":      (3, int, "dilated conv kernel width (odd)"),
    # objective
    "temperature":      (0.1, float, "contrastive similarity temperature"),
    "contrast_weight":  (1.0, float, "contrastive term weight (0 disables)"),
    # optimization
    "epochs":           (30, int, "training epochs"),
    "learning_rate":    (0.001, float, "optimizer step size"),
    "batch_size":       (32, int, "sequences per optimizer step"),
    "k_per_class":      (16, int, "hard examples kept per class"),
    "boundary_radius":  (2, int, "half-width of the boundary zone"),
    "include_segments": (True, _parse_bool, "add segment-level contrast examples"),
    "seed":             (0, int, "master seed (init, shuffling, synthesis)"),
    # synthetic data
    "synth_classes":    (5, int, "classes in generated data"),
    "synth_dim":        (6, int, "channels in generated data"),
    "signal_seed":      (7, int, "seed for the per-class signal banks"),
    "noise_std":        (0.3, float, "additive noise level"),
    "dwell_min":        (100, int, "shortest run length"),
    "dwell_max":        (300, int, "longest run length"),
    "transition_blur":  (5, int, "cross-fade half-width at boundaries"),
    "total_length":     (2000, int, "samples per generated sequence"),
    "sample_rate_hz":   (50.0, float, "sampling rate of the time grid"),
    "num_train":        (10, int, "generated training sequences"),
    "num_val":          (2, int, "generated validation sequences"),
    "num_test":         (2, int, "generated test sequences"),
    # dataset handling
    "data_dir":         ("data", str, "dataset root (train/val/test subdirs, or flat)"),
    "normalize":        (True, _parse_bool, "z-score features with train statistics"),
    "split_policy":     ("fractions", str, "flat-directory split: fractions | by-subject"),
    "train_fraction":   (0.8, float, "train share under the fractions policy"),
    "val_fraction":     (0.1, float, "validation share under the fractions policy"),
    "val_subjects":     ((), _parse_subjects, "comma-separated validation subject ids"),
    "test_subjects":    ((), _parse_subjects, "comma-separated test subject ids"),
    # ablation
    "ablate_seeds":     (5, int, "seeds per variant in the ablation table"),
}


@dataclass(frozen=True)
class ExperimentConfig:
    """One flat namespace over model, objective, optimizer, and data keys."""
    input_dim: int | None
    num_classes: int | None
    num_stages: int
    layers_per_stage: int
    hidden_channels: int
    projection_dim: int
    kernel_size: int
    temperature: float
    contrast_weight: float
    epochs: int
    learning_rate: float
    batch_size: int
    k_per_class: int
    boundary_radius: int
    include_segments: bool
    seed: int
    synth_classes: int
    synth_dim: int
    signal_seed: int
    noise_std: float
    dwell_min: int
    dwell_max: int
    transition_blur: int
    total_length: int
    sample_rate_hz: float
    num_train: int
    num_val: int
    num_test: int
    data_dir: str
    normalize: bool
    split_policy: str
    train_fraction: float
    val_fraction: float
    val_subjects: tuple
    test_subjects: tuple
    ablate_seeds: int

    def synth_config(self) -> dt.SynthConfig:
        return dt.default_synth_config(
            num_classes=self.synth_classes, dim=self.synth_dim,
            signal_seed=self.signal_seed, noise_std=self.noise_std,
            dwell_min=self.dwell_min, dwell_max=self.dwell_max,
            transition_blur=self.transition_blur,
            total_length=self.total_length,
            sample_rate_hz=self.sample_rate_hz, seed=self.seed)

    def model_config(self, input_dim: int, num_classes: int) -> md.ModelConfig:
        return md.ModelConfig(
            input_dim=input_dim, num_classes=num_classes,
            num_stages=self.num_stages,
            layers_per_stage=self.layers_per_stage,
            hidden_channels=self.hidden_channels,
            projection_dim=self.projection_dim,
            kernel_size=self.kernel_size,
            temperature=self.temperature,
            contrast_weight=self.contrast_weight)

    def train_config(self) -> tr.TrainConfig:
        return tr.TrainConfig(
            epochs=self.epochs, learning_rate=self.learning_rate,
            batch_size=self.batch_size, seed=self.seed,
            contrast_weight=self.contrast_weight,
            temperature=self.temperature, k_per_class=self.k_per_class,
            boundary_radius=self.boundary_radius,
            include_segments=self.include_segments)


def parse_config_file(path) -> dict:
    """Read `key = value` lines into parsed values; unknown keys rejected."""
    path = Path(path)
    values = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, text = line.partition("=")
            if not sep:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            key, text = key.strip(), text.strip()
            if key not in _SCHEMA:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            try:
                values[key] = _SCHEMA[key][1](text)
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: bad {key}: {exc}") from exc
    return values


def load_experiment_config(config_path=None, overrides: dict | None = None
                           ) -> ExperimentConfig:
    values = {key: default for key, (default, _, _) in _SCHEMA.items()}
    if config_path is not None:
        values.update(parse_config_file(config_path))
    for key, value in (overrides or {}).items():
        if key not in _SCHEMA:
            raise ValueError(f"unknown config key {key!r}")
        values[key] = value
    return ExperimentConfig(**values)


def variant_settings(variant: int) -> dict:
    """Config overrides realizing one standard ablation row."""
    table = {1: {"num_stages": 1, "contrast_weight": 0.0},
             2: {"contrast_weight": 0.0},
             3: {"num_stages": 1},
             4: {"include_segments": False},
             5: {}}
    if variant not in table:
        raise ValueError(f"variant must be in [1, 5], got {variant}")
    return table[variant]


# ---------------------------------------------------------------- commands

def cmd_generate(cfg: ExperimentConfig, out_dir) -> int:
    out = Path(out_dir)
    base = cfg.synth_config()
    manifest = {
        "seed": cfg.seed,
        "synth": {
            "num_classes": base.num_classes, "dim": base.dim,
            "frequencies": base.frequencies.tolist(),
            "amplitudes": base.amplitudes.tolist(),
            "offsets": base.offsets.tolist(),
            "noise_std": base.noise_std, "dwell_min": base.dwell_min,
            "dwell_max": base.dwell_max,
            "transition_blur": base.transition_blur,
            "total_length": base.total_length,
            "sample_rate_hz": base.sample_rate_hz,
        },
        "splits": {},
    }
    counts = {"train": cfg.num_train, "val": cfg.num_val, "test": cfg.num_test}
    offset = 0
    rates = []
    for split, n in counts.items():
        split_dir = out / split
        split_dir.mkdir(parents=True, exist_ok=True)
        names = []
        for i in range(n):
            seq_cfg = replace(base, seed=cfg.seed + offset)
            offset += 1
            seq = dt.synthesize_sequence(seq_cfg)
            name = f"seq_{i:03d}.csv"
            dt.write_csv_sequence(split_dir / name, seq)
            names.append(name)
            if split == "train":
                rates.append(dt.multiclass_window_rate(seq, 24, 1))
        manifest["splits"][split] = names
    if rates:
        manifest["multiclass_window_rate_24_1"] = float(np.mean(rates))
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")
    print(f"wrote {offset} sequences under {out}")
    return 0


def _load_splits(cfg: ExperimentConfig):
    """Train/val/test from subdirectories, or one flat dir plus a policy."""
    root = Path(cfg.data_dir)
    if (root / "train").is_dir():
        def maybe(name):
            sub = root / name
            if not sub.is_dir() or not any(sub.glob("*.csv")):
                return []
            return dt.load_csv_dataset(sub, cfg.input_dim)
        return dt.load_csv_dataset(root / "train", cfg.input_dim), \
            maybe("val"), maybe("test")
    sequences = dt.load_csv_dataset(root, cfg.input_dim)
    fractions = (cfg.train_fraction, cfg.val_fraction,
                 1.0 - cfg.train_fraction - cfg.val_fraction)
    return dt.split_sequences(sequences, cfg.split_policy,
                              fractions=fractions,
                              val_subjects=cfg.val_subjects,
                              test_subjects=cfg.test_subjects)


def _resolve_dims(cfg: ExperimentConfig, splits) -> tuple[int, int]:
    everything = [s for split in splits for s in split]
    if not everything:
        raise ValueError(f"no sequences found under {cfg.data_dir!r}")
    dim = everything[0].features.shape[1]
    if cfg.input_dim is not None and cfg.input_dim != dim:
        raise ValueError(f"config input_dim {cfg.input_dim} does not match "
                         f"dataset dim {dim}")
    classes = max(int(s.labels.max()) for s in everything) + 1
    if cfg.num_classes is not None:
        if classes > cfg.num_classes:
            raise ValueError(f"dataset has {classes} classes, config allows "
                             f"{cfg.num_classes}")
        classes = cfg.num_classes
    return dim, classes


def _prepared_splits(cfg: ExperimentConfig):
    train, val, test = _load_splits(cfg)
    dim, classes = _resolve_dims(cfg, (train, val, test))
    stats = None
    if cfg.normalize:
        train, rest, stats = dt.normalize_features(train, val + test)
        val, test = rest[:len(val)], rest[len(val):]
    return train, val, test, dim, classes, stats


def _train_once(cfg: ExperimentConfig, splits_bundle, log_fn=None):
    """Fit one model; returns the state with best-snapshot params applied."""
    train, val, _test, dim, classes, stats = splits_bundle
    model_cfg = cfg.model_config(dim, classes)
    state = tr.init_train_state(model_cfg, cfg.seed)
    state.norm_stats = stats
    tr.fit(state, train, val, cfg.train_config(), log_fn=log_fn)
    best = tr.TrainState(params=state.best_params, model_config=model_cfg,
                         m=state.m, v=state.v, step=state.step,
                         norm_stats=stats)
    return best, state.best_epoch, state.best_metric


def cmd_train(cfg: ExperimentConfig, out_dir, variant=None) -> int:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    bundle = _prepared_splits(cfg)
    with open(out / "training_log.jsonl", "w") as fh:
        def log_record(record):
            fh.write(json.dumps(record, sort_keys=True) + "\n")
        best, best_epoch, best_metric = _train_once(cfg, bundle, log_record)
    metadata = {"seed": cfg.seed, "variant": variant or 0,
                "best_epoch": best_epoch, "best_metric": best_metric}
    tr.save_checkpoint(best, out / "model.ckpt", metadata=metadata)
    print(f"checkpoint {out / 'model.ckpt'} (best epoch {best_epoch}, "
          f"validation F1 {best_metric:.4f})")
    return 0


def _forward_dataset(state: tr.TrainState, sequences):
    """Concatenated final-stage outputs with normalization applied."""
    expected = state.model_config.input_dim
    for seq in sequences:
        dim = seq.features.shape[1]
        if dim != expected:
            raise ValueError(f"checkpoint expects {expected} channels, "
                             f"dataset has {dim}")
    if state.norm_stats is not None:
        sequences = [replace(s, features=state.norm_stats.apply(s.features))
                     for s in sequences]
    truth, preds, probs, embeds = [], [], [], []
    for seq in sequences:
        outs = md.mstcn_forward(seq.features, state.params,
                                state.model_config)
        p = outs[-1].probs.values
        truth.append(seq.labels)
        preds.append(np.argmax(p, axis=1))
        probs.append(p)
        embeds.append(outs[-1].projected.values)
    return (np.concatenate(truth), np.concatenate(preds),
            np.concatenate(probs), np.concatenate(embeds))


def _write_predictions_csv(path, preds, probs, truth=None):
    c = probs.shape[1]
    prob_cols = ",".join(f"prob_{j}" for j in range(c))
    with open(path, "w") as fh:
        if truth is not None:
            fh.write(f"index,truth,pred,{prob_cols}\n")
        else:
            fh.write(f"index,pred,{prob_cols}\n")
        for i in range(len(preds)):
            cells = [str(i)]
            if truth is not None:
                cells.append(str(int(truth[i])))
            cells.append(str(int(preds[i])))
            cells.extend("%.17g" % v for v in probs[i])
            fh.write(",".join(cells) + "\n")


def _write_embeddings_csv(path, embeds, truth):
    """Unit-norm projected rows for external projection; zero rows are
    meaningless (dead projections) and get dropped with a warning."""
    p = embeds.shape[1]
    cols = ",".join(f"e_{j}" for j in range(p))
    dropped = 0
    with open(path, "w") as fh:
        fh.write(f"index,truth,{cols}\n")
        for i in range(len(embeds)):
            if not np.any(embeds[i]):
                dropped += 1
                continue
            cells = [str(i), str(int(truth[i]))]
            cells.extend("%.17g" % v for v in embeds[i])
            fh.write(",".join(cells) + "\n")
    if dropped:
        log.warning("dropped %d zero embedding rows", dropped)


def cmd_eval(checkpoint_path, data_path, out_dir) -> int:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    state = tr.load_checkpoint(checkpoint_path)
    sequences = dt.load_csv_dataset(data_path)
    truth, preds, probs, embeds = _forward_dataset(state, sequences)
    report = evaluate_predictions(truth, preds, probs,
                                  state.model_config.num_classes)
    (out / "metrics.json").write_text(report.to_json() + "\n")
    _write_predictions_csv(out / "predictions.csv", preds, probs, truth)
    _write_embeddings_csv(out / "embeddings.csv", embeds, truth)
    print(f"macro F1 {report.macro_f1:.4f}, Jaccard {report.jaccard:.4f} "
          f"on {report.total_samples} samples")
    return 0


def cmd_predict(checkpoint_path, data_path, out_dir) -> int:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    state = tr.load_checkpoint(checkpoint_path)
    sequences = dt.load_csv_dataset(data_path)
    _truth, preds, probs, _embeds = _forward_dataset(state, sequences)
    _write_predictions_csv(out / "predictions.csv", preds, probs)
    print(f"wrote {len(preds)} predictions to {out / 'predictions.csv'}")
    return 0


def cmd_gradcheck(seed: int = 0, inject_fault: str | None = None) -> int:
    failures = 0
    for name in sorted(OP_CHECKS):
        error = OP_CHECKS[name](np.random.default_rng(seed))
        if inject_fault == name:
            error += 1.0
        ok = error < _TOLERANCE
        failures += not ok
        print(f"{name:<24} max_rel_error={error:.3e} "
              f"{'PASS' if ok else 'FAIL'}")
    error = check_full_objective(seed_start=seed)
    if inject_fault == "full_objective":
        error += 1.0
    ok = error < _TOLERANCE
    failures += not ok
    print(f"{'full_objective':<24} max_rel_error={error:.3e} "
          f"{'PASS' if ok else 'FAIL'}")
    return 1 if failures else 0


def cmd_ablate(cfg: ExperimentConfig, out_dir) -> int:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    base_bundle = _prepared_splits(cfg)
    test = base_bundle[2]
    if not test:
        raise ValueError("ablation needs a non-empty test split")

    rows = []
    for variant in range(1, 6):
        for offset in range(cfg.ablate_seeds):
            run_cfg = dataclasses.replace(
                cfg, seed=cfg.seed + offset, **variant_settings(variant))
            best, _epoch, _metric = _train_once(run_cfg, base_bundle)
            report, _ = tr.evaluate(best.params, best.model_config, test)
            rows.append((variant, run_cfg.seed, report.macro_f1,
                         report.jaccard))
            log.info("variant %d seed %d: F1 %.4f JI %.4f", variant,
                     run_cfg.seed, report.macro_f1, report.jaccard)

    with open(out / "ablation_runs.csv", "w") as fh:
        fh.write("variant,seed,macro_f1,jaccard\n")
        for variant, seed, f1, ji in rows:
            fh.write("%d,%d,%.17g,%.17g\n" % (variant, seed, f1, ji))

    with open(out / "ablation_summary.csv", "w") as fh:
        fh.write("variant,macro_f1_mean,macro_f1_std,jaccard_mean,"
                 "jaccard_std\n")
        for variant in range(1, 6):
            f1s = np.array([r[2] for r in rows if r[0] == variant])
            jis = np.array([r[3] for r in rows if r[0] == variant])
            fh.write("%d,%.17g,%.17g,%.17g,%.17g\n"
                     % (variant, f1s.mean(), f1s.std(), jis.mean(),
                        jis.std()))
            print(f"variant {variant}: F1 {f1s.mean():.4f} ± {f1s.std():.4f}"
                  f", JI {jis.mean():.4f} ± {jis.std():.4f}")
    return 0


# ------------------------------------------------------------- entry point

_LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING,
               "info": logging.INFO, "debug": logging.DEBUG}


def _configure_logging() -> bool:
    level_name = os.environ.get("TEMPSEG_LOG_LEVEL", "warn")
    if level_name not in _LOG_LEVELS:
        print(f"error: TEMPSEG_LOG_LEVEL must be one of "
              f"{sorted(_LOG_LEVELS)}, got {level_name!r}", file=sys.stderr)
        return False
    logging.basicConfig(level=_LOG_LEVELS[level_name],
                        format="%(levelname)s %(name)s: %(message)s")
    return True


def _add_config_flags(parser):
    parser.add_argument("--config", metavar="PATH",
                        help="key = value configuration file")
    parser.add_argument("--seed", type=int, metavar="N")
    parser.add_argument("--stages", type=int, metavar="N",
                        dest="num_stages")
    parser.add_argument("--lambda", type=float, metavar="X",
                        dest="contrast_weight",
                        help="contrastive term weight")
    parser.add_argument("--tau", type=float, metavar="X",
                        dest="temperature", help="contrastive temperature")


def _config_from_args(args) -> ExperimentConfig:
    overrides = {key: getattr(args, key)
                 for key in ("seed", "num_stages", "contrast_weight",
                             "temperature")
                 if getattr(args, key, None) is not None}
    variant = getattr(args, "variant", None)
    if variant is not None:
        overrides.update(variant_settings(variant))
    return load_experiment_config(args.config, overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tempseg",
        description="Joint segmentation and recognition on sensor streams.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="synthesize a CSV dataset")
    _add_config_flags(p)
    p.add_argument("--out", required=True, metavar="DIR")
    p.set_defaults(func=lambda a: cmd_generate(_config_from_args(a), a.out))

    p = sub.add_parser("train", help="fit a model")
    _add_config_flags(p)
    p.add_argument("--variant", type=int, choices=range(1, 6),
                   metavar="{1..5}", help="standard ablation row to run")
    p.add_argument("--out", required=True, metavar="DIR")
    p.set_defaults(func=lambda a: cmd_train(_config_from_args(a), a.out,
                                            a.variant))

    p = sub.add_parser("eval", help="score a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("data")
    p.add_argument("--out", required=True, metavar="DIR")
    p.set_defaults(func=lambda a: cmd_eval(a.checkpoint, a.data, a.out))

    p = sub.add_parser("predict", help="label a dataset")
    p.add_argument("checkpoint")
    p.add_argument("data")
    p.add_argument("--out", required=True, metavar="DIR")
    p.set_defaults(func=lambda a: cmd_predict(a.checkpoint, a.data, a.out))

    p = sub.add_parser("gradcheck", help="audit gradients of every op")
    p.add_argument("--seed", type=int, default=0, metavar="N")
    p.add_argument("--inject-fault", metavar="OP", help=argparse.SUPPRESS)
    p.set_defaults(func=lambda a: cmd_gradcheck(a.seed, a.inject_fault))

    p = sub.add_parser("ablate", help="run the five standard variants")
    _add_config_flags(p)
    p.add_argument("--out", required=True, metavar="DIR")
    p.set_defaults(func=lambda a: cmd_ablate(_config_from_args(a), a.out))

    return parser


def main(argv=None) -> int:
    if not _configure_logging():
        return 2
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
