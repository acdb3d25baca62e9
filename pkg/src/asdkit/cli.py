"""Command-line front end: synth, train, score, evaluate, macs.

Exit codes are stable for scripting:
    0  success
    2  configuration problem (bad flags, bad/missing config or synth spec)
    3  data problem (empty manifest, unknown machine, no train clips)
    4  artifact problem (missing/corrupt model, covariance, threshold files)
    5  scores and ground truth do not match up

Every command echoes its resolved configuration next to its outputs; files
are written atomically (temp + rename).
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .config import RunConfig, normalize_mode
from .dataset import (DatasetManifest, MANIFEST_FILENAME, load_manifest,
                      scan_dataset)
from .dsp import extract_features, read_wav
from .errors import (AsdkitError, ConfigError, DatasetError, MismatchError,
                     ModelFileError, TooShortError, WavFormatError)
from .metrics import (ScoredClip, ScoredTestSet, build_report,
                      load_reference_csv, render_report, write_report_csv)
from .model import count_macs, init_model, load_model, save_model, train
from .scoring import (fit_covariances, fit_threshold, load_covariances,
                      load_thresholds, read_score_csv, save_covariances,
                      save_thresholds, score_mahalanobis, score_mse,
                      write_score_csv, decide)
from .synth import SynthSpec, synth_generate

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_ARTIFACT = 4
EXIT_MISMATCH = 5

MODEL_FILENAME = "model.aem"
COV_FILENAME = "covariances.cov"
THRESHOLDS_FILENAME = "thresholds.json"
LOSS_FILENAME = "loss_history.csv"
CONFIG_ECHO_FILENAME = "config.yaml"


def _resolve_manifest(data_root) -> DatasetManifest:
    root = Path(data_root)
    manifest_path = root / MANIFEST_FILENAME
    if manifest_path.exists():
        return load_manifest(manifest_path)
    return scan_dataset(root)


def _load_run_config(config_path, seed_override: int | None = None) -> RunConfig:
    if config_path is None:
        return RunConfig(seed=seed_override) if seed_override is not None else RunConfig()
    path = Path(config_path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return RunConfig.from_yaml(path, seed_override=seed_override)


def _model_paths(model_arg) -> dict[str, Path]:
    """Accept either the model file or its training output directory."""
    p = Path(model_arg)
    base = p.parent if p.is_file() else p
    model = p if p.is_file() else base / MODEL_FILENAME
    return {"model": model, "cov": base / COV_FILENAME,
            "thresholds": base / THRESHOLDS_FILENAME,
            "config": base / CONFIG_ECHO_FILENAME}


def _config_for_model(paths: dict[str, Path], config_arg) -> RunConfig:
    if config_arg is not None:
        return _load_run_config(config_arg)
    if paths["config"].exists():
        return RunConfig.from_yaml(paths["config"])
    return RunConfig()


def _write_loss_history(history, path) -> None:
    tmp = str(path) + ".tmp"
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "mse"])
        for epoch, value in enumerate(history):
            writer.writerow([epoch, repr(float(value))])
    os.replace(tmp, str(path))


def train_machine(config: RunConfig, data_root, machine: str, out_dir) -> dict:
    """Train the autoencoder for one machine and write all artifacts.

    Trains on source+target train clips together, fits per-domain residual
    covariances, and fits one threshold per scoring mode on the training
    scores. Returns the artifact paths.
    """
    manifest = _resolve_manifest(data_root)
    if machine not in manifest.machines():
        raise DatasetError(
            f"machine {machine!r} not in manifest (have: {manifest.machines()})")
    train_records = sorted(manifest.select(machine=machine, split="train"),
                           key=lambda r: r.path)
    if not train_records:
        raise DatasetError(f"no training clips for machine {machine!r}")
    root = Path(data_root)
    per_clip = []
    per_domain: dict[str, list[np.ndarray]] = {"source": [], "target": []}
    for rec in train_records:
        feats = extract_features(read_wav(root / rec.path), config.features)
        per_clip.append(feats)
        if rec.domain in per_domain:
            per_domain[rec.domain].append(feats)
    all_feats = np.vstack(per_clip)
    model0 = init_model(config.layer_dims, seed=config.seed)
    model, history = train(model0, all_feats, config.train)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"model": out / MODEL_FILENAME, "cov": out / COV_FILENAME,
             "thresholds": out / THRESHOLDS_FILENAME,
             "loss": out / LOSS_FILENAME, "config": out / CONFIG_ECHO_FILENAME}
    save_model(model, paths["model"])
    _write_loss_history(history, paths["loss"])

    cov = None
    if per_domain["source"] and per_domain["target"]:
        cov = fit_covariances(model, np.vstack(per_domain["source"]),
                              np.vstack(per_domain["target"]), ridge=config.ridge)
        save_covariances(cov, paths["cov"])
    else:
        print("warning: missing a training domain; covariance file not written, "
              "mahalanobis mode will be unavailable", file=sys.stderr)

    thresholds = {}
    mse_scores = [score_mse(model, feats) for feats in per_clip]
    thresholds["mse"] = fit_threshold(mse_scores, config.threshold_percentile,
                                      split="train", mode="mse")
    if cov is not None:
        mah_scores = [score_mahalanobis(model, feats, cov) for feats in per_clip]
        thresholds["mahalanobis"] = fit_threshold(
            mah_scores, config.threshold_percentile, split="train", mode="mahalanobis")
    save_thresholds(thresholds, paths["thresholds"])
    config.echo(paths["config"], extra={"command": "train", "machine": machine,
                                        "data_root": str(data_root)})
    return paths


def score_machine(config: RunConfig, paths: dict[str, Path], data_root,
                  machine: str, mode: str, out_csv):
    """Score every test clip of a machine; returns (rows, row_errors)."""
    mode = normalize_mode(mode)
    if not paths["model"].exists():
        raise ModelFileError(f"model file not found: {paths['model']}")
    model = load_model(paths["model"])
    cov = None
    if mode == "mahalanobis":
        if not paths["cov"].exists():
            raise ModelFileError(
                f"covariance file required for mahalanobis mode: {paths['cov']}")
        cov = load_covariances(paths["cov"])
    if not paths["thresholds"].exists():
        raise ModelFileError(f"threshold file not found: {paths['thresholds']}")
    thresholds = load_thresholds(paths["thresholds"])
    if mode not in thresholds:
        raise ModelFileError(f"no {mode!r} threshold in {paths['thresholds']}")
    threshold = thresholds[mode]

    manifest = _resolve_manifest(data_root)
    records = sorted(manifest.select(machine=machine, split="test"),
                     key=lambda r: r.path)
    if not records:
        raise DatasetError(f"no test clips for machine {machine!r}")
    root = Path(data_root)
    rows = []
    row_errors = []
    for rec in records:
        try:
            feats = extract_features(read_wav(root / rec.path), config.features)
            if mode == "mse":
                score = score_mse(model, feats, clip_id=rec.path)
            else:
                score = score_mahalanobis(model, feats, cov, clip_id=rec.path)
        except (WavFormatError, TooShortError, ConfigError, FileNotFoundError) as exc:
            row_errors.append((rec.path, str(exc)))
            continue
        rows.append((rec.path, score.value, decide(score, threshold)))
    write_score_csv(rows, out_csv)
    if row_errors:
        err_path = str(out_csv) + ".errors.csv"
        tmp = err_path + ".tmp"
        with open(tmp, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["clip_path", "error"])
            writer.writerows(row_errors)
        os.replace(tmp, err_path)
    config.echo(str(out_csv) + ".config.yaml",
                extra={"command": "score", "machine": machine, "mode": mode,
                       "data_root": str(data_root), "model": str(paths["model"])})
    return rows, row_errors


def evaluate_scores(scores_csv, manifest_path, out_base, reference_csv=None,
                    macs: int | None = None, p: float = 0.1):
    """Join scores with ground truth, compute the report, write CSV + table."""
    scores_path = Path(scores_csv)
    if not scores_path.exists():
        raise ConfigError(f"scores file not found: {scores_path}")
    truth_path = Path(manifest_path)
    if not truth_path.exists():
        raise ConfigError(f"truth manifest not found: {truth_path}")
    score_rows = read_score_csv(scores_path)
    if not score_rows:
        raise MismatchError(f"{scores_path}: no score rows")
    manifest = load_manifest(truth_path)
    by_path = {r.path: r for r in manifest.records}
    unmatched = [path for path, _, _ in score_rows if path not in by_path]
    if unmatched:
        raise MismatchError(
            f"{len(unmatched)} scored clips missing from truth manifest: "
            + ", ".join(unmatched[:10])
            + ("..." if len(unmatched) > 10 else ""))
    clips = []
    skipped = []
    for path, value, _decision in score_rows:
        rec = by_path[path]
        if rec.split != "test" or rec.condition == "unknown":
            skipped.append(path)
            continue
        clips.append(ScoredClip(path=path, machine_type=rec.machine_type,
                                section=rec.section, domain=rec.domain,
                                condition=rec.condition, score=value))
    reference = load_reference_csv(reference_csv) if reference_csv else None
    report = build_report(ScoredTestSet(clips), model_macs=macs,
                          reference=reference, p=p)
    out_base = str(out_base)
    write_report_csv(report, out_base + ".csv")
    table = render_report(report)
    tmp = out_base + ".txt.tmp"
    with open(tmp, "w") as fh:
        fh.write(table)
    os.replace(tmp, out_base + ".txt")
    echo = {"command": "evaluate", "scores": str(scores_path),
            "manifest": str(truth_path), "pauc_p": p,
            "reference": None if reference_csv is None else str(reference_csv),
            "macs_per_vector": macs}
    with open(out_base + ".config.yaml", "w") as fh:
        yaml.safe_dump(echo, fh, sort_keys=False)
    return report, skipped


def _frames_for_seconds(config: RunConfig, seconds: float) -> tuple[int, int]:
    f = config.features
    n_samples = int(round(seconds * f.sample_rate_hz))
    if n_samples < f.n_fft:
        raise ConfigError(f"{seconds} s is shorter than one {f.n_fft}-sample frame")
    t = 1 + (n_samples - f.n_fft) // f.hop_length
    if t < f.context_frames:
        raise ConfigError(f"{seconds} s gives only {t} frames, need "
                          f">= {f.context_frames}")
    return t, t - f.context_frames + 1


# ---------------------------------------------------------------------------
# commands

def _cmd_synth(args) -> int:
    spec_path = Path(args.spec)
    if not spec_path.exists():
        raise ConfigError(f"spec not found: {spec_path}")
    spec = SynthSpec.from_yaml(spec_path)
    manifest = synth_generate(spec, args.out, seed=args.seed)
    echo = {"command": "synth", "seed": args.seed, "spec": spec.to_dict()}
    with open(Path(args.out) / "synth_spec.yaml", "w") as fh:
        yaml.safe_dump(echo, fh, sort_keys=False)
    print(f"wrote {len(manifest.records)} clips for "
          f"{len(manifest.machines())} machine(s) under {args.out}")
    return EXIT_OK


def _cmd_train(args) -> int:
    config = _load_run_config(args.config, seed_override=args.seed)
    paths = train_machine(config, args.data_root, args.machine, args.out)
    print(f"trained model for {args.machine!r}: {paths['model']}")
    return EXIT_OK


def _cmd_score(args) -> int:
    paths = _model_paths(args.model)
    config = _config_for_model(paths, args.config)
    rows, row_errors = score_machine(config, paths, args.data_root,
                                     args.machine, args.mode, args.out)
    print(f"scored {len(rows)} clips -> {args.out}"
          + (f" ({len(row_errors)} warnings, see {args.out}.errors.csv)"
             if row_errors else ""))
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    report, skipped = evaluate_scores(args.scores, args.manifest, args.out,
                                      reference_csv=args.reference,
                                      macs=args.macs, p=args.pauc_p)
    if skipped:
        print(f"warning: {len(skipped)} scored clips were not labeled test clips "
              "and were excluded", file=sys.stderr)
    sys.stdout.write(render_report(report))
    return EXIT_OK


def _cmd_macs(args) -> int:
    model_path = Path(args.model)
    if not model_path.exists():
        raise ModelFileError(f"model file not found: {model_path}")
    model = load_model(model_path)
    config = _config_for_model(_model_paths(args.model), args.config)
    per_vector = count_macs(model)
    t, k = _frames_for_seconds(config, args.seconds)
    f = config.features
    print(f"layer dims: {model.layer_dims}")
    print(f"MACs per input vector: {per_vector}")
    print(f"clip of {args.seconds:g} s at {f.sample_rate_hz} Hz "
          f"(n_fft={f.n_fft}, hop={f.hop_length}, stack={f.context_frames}): "
          f"T={t} frames, K={k} vectors")
    print(f"MACs per clip: {per_vector * k}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="asdkit",
        description="First-shot unsupervised anomalous-sound-detection toolkit")
    parser.add_argument("--version", action="version", version=f"asdkit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--spec", required=True, help="synth spec YAML")
    p.add_argument("--out", required=True, help="output dataset root")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_synth)

    p = sub.add_parser("train", help="train the autoencoder for one machine")
    p.add_argument("--config", default=None, help="run config YAML")
    p.add_argument("--data-root", required=True)
    p.add_argument("--machine", required=True)
    p.add_argument("--out", required=True, help="artifact output directory")
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("score", help="score the test clips of one machine")
    p.add_argument("--model", required=True, help="model file or training out dir")
    p.add_argument("--config", default=None,
                   help="run config YAML (default: echo stored beside the model)")
    p.add_argument("--data-root", required=True)
    p.add_argument("--machine", required=True)
    p.add_argument("--mode", default="mse", choices=["mse", "mahala", "mahalanobis"])
    p.add_argument("--out", required=True, help="output scores CSV")
    p.set_defaults(fn=_cmd_score)

    p = sub.add_parser("evaluate", help="compute AUC/pAUC/official score from scores")
    p.add_argument("--scores", required=True, help="scores CSV from `asdkit score`")
    p.add_argument("--manifest", required=True, help="ground-truth manifest CSV")
    p.add_argument("--out", required=True, help="report base path (writes .csv and .txt)")
    p.add_argument("--reference", default=None,
                   help="reference table CSV (machine,auc_source,auc_target,pauc in percent)")
    p.add_argument("--macs", type=int, default=None, help="MACs figure to include")
    p.add_argument("--pauc-p", type=float, default=0.1)
    p.set_defaults(fn=_cmd_evaluate)

    p = sub.add_parser("macs", help="report model complexity")
    p.add_argument("--model", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--seconds", type=float, default=10.0,
                   help="clip length for the per-clip figure")
    p.set_defaults(fn=_cmd_macs)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DatasetError, TooShortError, WavFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ModelFileError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ARTIFACT
    except MismatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except AsdkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
