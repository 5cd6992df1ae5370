"""Command-line pipeline driver: generate, train, evaluate, ablate, all."""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import baselines, metrics, model as model_mod, pipeline
from .model import TrainConfig
from .pipeline import PipelineConfig, PipelineError


def _load_config(args) -> PipelineConfig:
    cfg = PipelineConfig.from_yaml(args.config) if args.config else PipelineConfig()
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "out", None) is not None:
        overrides["output_root"] = args.out
    if overrides:
        merged = cfg.as_dict()
        merged.update(overrides)
        cfg = PipelineConfig.from_mapping(merged)
    return cfg


def _train_config(cfg: PipelineConfig, max_epochs=None, batch_size=None) -> TrainConfig:
    return TrainConfig(learning_rate=cfg.learning_rate,
                       batch_size=batch_size or cfg.batch_size,
                       max_epochs=max_epochs or cfg.max_epochs,
                       patience=min(cfg.patience, max_epochs or cfg.max_epochs),
                       weight_decay=cfg.weight_decay,
                       seed=cfg.seed)


def _write_history(path, history) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_loss"])
        for epoch, train_loss, val_loss in history:
            writer.writerow([epoch, repr(train_loss), repr(val_loss)])


def cmd_generate(args) -> int:
    cfg = _load_config(args)
    t0 = time.time()
    summary = pipeline.generate_dataset(cfg, force=args.force, log=_log)
    _log(f"generated {summary['sequences']} sequences under {summary['root']} "
         f"in {time.time() - t0:.1f}s; splits {summary['splits']}")
    return 0


def _checkpoint_dir(cfg: PipelineConfig, name: str) -> Path:
    return Path(cfg.output_root) / "checkpoints" / name


def cmd_train(args) -> int:
    cfg = _load_config(args)
    root = Path(cfg.output_root)
    data = pipeline.normalized_split_sequences(root, cfg, tags=("train", "val"))
    if "train" not in data or "val" not in data:
        raise PipelineError("dataset lacks train/val splits; run generate first")
    _, train_seqs = data["train"]
    _, val_seqs = data["val"]
    grid_size = pipeline.dataset_manifest(root)["config"]["grid_size"]
    t0 = time.time()
    if args.model == "radiolstm":
        net = model_mod.RadioLSTM.create(
            in_channels=1, hidden1=cfg.hidden1, hidden2=cfg.hidden2,
            kernel_size=cfg.kernel_size, seed=cfg.seed)
        ctx_tr, tgt_tr = metrics.build_context_pairs(train_seqs, cfg.context_len,
                                                     cfg.horizon)
        ctx_va, tgt_va = metrics.build_context_pairs(val_seqs, cfg.context_len,
                                                     cfg.horizon)
        net, history = model_mod.train(
            (ctx_tr[:, :, None], tgt_tr[:, :, None]),
            (ctx_va[:, :, None], tgt_va[:, :, None]),
            _train_config(cfg), net)
        ckpt = _checkpoint_dir(cfg, "radiolstm")
        net.save(ckpt, meta={"grid_size": grid_size, "context_len": cfg.context_len,
                             "horizon": cfg.horizon, "seed": cfg.seed})
    elif args.model == "nextframe":
        net = baselines.NextFramePredictor(channels=cfg.baseline_channels,
                                           kernel_size=cfg.kernel_size,
                                           seed=cfg.seed)
        net, history = baselines.train_next_frame(
            train_seqs, val_seqs,
            _train_config(cfg, max_epochs=cfg.baseline_max_epochs,
                          batch_size=cfg.baseline_batch_size), net)
        ckpt = _checkpoint_dir(cfg, "nextframe")
        net.save(ckpt, meta={"grid_size": grid_size, "horizon": cfg.horizon,
                             "seed": cfg.seed})
    else:
        raise PipelineError(f"unknown model {args.model!r}")
    _write_history(root / f"history_{args.model}.csv", history)
    _log(f"trained {args.model}: {len(history)} epochs in {time.time() - t0:.1f}s, "
         f"best val {min(h[2] for h in history):.6g}; checkpoint at {ckpt}")
    return 0


def _load_predictors(cfg: PipelineConfig, checkpoints, grid_size: int) -> dict:
    """Last-frame repeat always participates; checkpoints add learned models."""
    predictors = {"last_frame_repeat": baselines.LastFrameRepeat()}
    for path in checkpoints:
        manifest_path = Path(path) / "manifest.json"
        with open(manifest_path) as fh:
            meta = json.load(fh).get("meta", {})
        if meta.get("grid_size") != grid_size:
            raise PipelineError(
                f"checkpoint {path} was trained on grid {meta.get('grid_size')}, "
                f"dataset uses {grid_size}")
        if meta.get("model") == "radiolstm":
            net, _ = model_mod.RadioLSTM.load(path)
            predictors["radiolstm"] = metrics.ForecasterPredictor(net)
        elif meta.get("model") == "nextframe":
            net, _ = baselines.NextFramePredictor.load(path)
            predictors["nextframe"] = net
        else:
            raise PipelineError(f"checkpoint {path} has unknown model kind")
    return predictors


def _default_checkpoints(cfg: PipelineConfig) -> list:
    found = []
    for name in ("radiolstm", "nextframe"):
        path = _checkpoint_dir(cfg, name)
        if (path / "manifest.json").exists():
            found.append(path)
    return found


def _write_results(path, records: dict) -> None:
    """results.csv rows: frame_index 0 is the aggregate, then 1..Tp."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "split", "Tc", "frame_index",
                         "nmse", "rmse", "ssim", "psnr_db"])
        for (name, split), record in sorted(records.items()):
            tc = record.scope[2]
            writer.writerow([name, split, tc, 0, repr(record.nmse),
                             repr(record.rmse), repr(record.ssim),
                             repr(record.psnr_db)])
            for k in range(len(record.per_frame["nmse"])):
                writer.writerow([name, split, tc, k + 1,
                                 repr(record.per_frame["nmse"][k]),
                                 repr(record.per_frame["rmse"][k]),
                                 repr(record.per_frame["ssim"][k]),
                                 repr(record.per_frame["psnr_db"][k])])


def cmd_evaluate(args) -> int:
    cfg = _load_config(args)
    root = Path(cfg.output_root)
    grid_size = pipeline.dataset_manifest(root)["config"]["grid_size"]
    checkpoints = args.checkpoint or _default_checkpoints(cfg)
    predictors = _load_predictors(cfg, checkpoints, grid_size)
    data = pipeline.normalized_split_sequences(root, cfg, tags=("test1", "test2"))
    records = {}
    for split in ("test1", "test2"):
        if split not in data:
            raise PipelineError(f"dataset lacks split {split}")
        _, seqs = data[split]
        contexts, targets = metrics.build_context_pairs(seqs, cfg.context_len,
                                                        cfg.horizon)
        for name, predictor in predictors.items():
            t0 = time.time()
            records[(name, split)] = metrics.evaluate(predictor, contexts,
                                                      targets, name, split)
            frames = targets.shape[0] * targets.shape[1]
            _log(f"{name} on {split}: nmse {records[(name, split)].nmse:.6g} "
                 f"({1e3 * (time.time() - t0) / frames:.2f} ms/frame)")
    out_csv = root / "results.csv"
    _write_results(out_csv, records)
    _log(f"wrote {out_csv}")
    if args.svg:
        _write_eval_svgs(cfg, root, records)
    return 0


def _write_eval_svgs(cfg, root, records) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for (name, split), record in sorted(records.items()):
        frames = np.arange(1, len(record.per_frame["nmse"]) + 1)
        ax.plot(frames, record.per_frame["nmse"], marker="o",
                label=f"{name}/{split}")
    ax.set_xlabel("predicted frame")
    ax.set_ylabel("NMSE")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(root / "per_frame_nmse.svg", metadata={"Date": None})
    plt.close(fig)

    data = pipeline.normalized_split_sequences(root, cfg, tags=("test1",))
    _, seqs = data["test1"]
    max_lag = min(12, seqs.shape[1] - 2)
    profile, count = metrics.pacf_profile(seqs, max_lag, seed=cfg.seed)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(np.arange(1, max_lag + 1), profile)
    ax.set_xlabel("lag")
    ax.set_ylabel(f"mean PACF ({count} series)")
    fig.tight_layout()
    fig.savefig(root / "pacf.svg", metadata={"Date": None})
    plt.close(fig)
    _log(f"wrote {root / 'per_frame_nmse.svg'} and {root / 'pacf.svg'}")


def cmd_ablate(args) -> int:
    cfg = _load_config(args)
    root = Path(cfg.output_root)
    data = pipeline.normalized_split_sequences(root, cfg,
                                               tags=("train", "val", "test2"))
    for tag in ("train", "val", "test2"):
        if tag not in data:
            raise PipelineError(f"dataset lacks split {tag}")
    train_cfg = _train_config(cfg, max_epochs=cfg.ablation_max_epochs or cfg.max_epochs)
    results = metrics.ablate_context(
        data["train"][1], data["val"][1], data["test2"][1],
        cfg.ablation_context_lengths, cfg.horizon, train_cfg,
        model_seed=cfg.seed, hidden1=cfg.hidden1, hidden2=cfg.hidden2,
        kernel_size=cfg.kernel_size)
    records = {(f"radiolstm_tc{tc:02d}", "test2"): record
               for tc, (record, _) in results.items()}
    out_csv = root / "ablation.csv"
    _write_results(out_csv, records)
    for tc in sorted(results):
        _log(f"Tc={tc}: test2 nmse {results[tc][0].nmse:.6g}")
    _log(f"wrote {out_csv}")
    return 0


def cmd_all(args) -> int:
    cmd_generate(args)
    for name in ("radiolstm", "nextframe"):
        args.model = name
        cmd_train(args)
    args.checkpoint = None
    return cmd_evaluate(args)


def _log(message: str) -> None:
    print(f"[radiomotion] {message}", flush=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="radiomotion",
        description="Dynamic radio-map dataset generation and forecasting")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="YAML config file (defaults are desk scale)")
        p.add_argument("--seed", type=int, help="override config seed")
        p.add_argument("--out", help="override output root")
        p.add_argument("--force", action="store_true",
                       help="overwrite existing outputs")

    p_gen = sub.add_parser("generate", help="build the dataset tree")
    common(p_gen)
    p_gen.set_defaults(func=cmd_generate)

    p_train = sub.add_parser("train", help="train a model on the dataset")
    common(p_train)
    p_train.add_argument("--model", choices=("radiolstm", "nextframe"),
                         default="radiolstm")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("evaluate", help="evaluate models on both test splits")
    common(p_eval)
    p_eval.add_argument("--checkpoint", action="append",
                        help="checkpoint directory (repeatable); defaults to "
                             "checkpoints under the output root")
    p_eval.add_argument("--svg", action="store_true",
                        help="emit per-frame NMSE and PACF SVG plots")
    p_eval.set_defaults(func=cmd_evaluate)

    p_abl = sub.add_parser("ablate", help="context-length ablation")
    common(p_abl)
    p_abl.set_defaults(func=cmd_ablate)

    p_all = sub.add_parser("all", help="generate, train both models, evaluate")
    common(p_all)
    p_all.add_argument("--svg", action="store_true")
    p_all.set_defaults(func=cmd_all, checkpoint=None)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # surfaced as one machine-readable line
        print("RADIOMOTION_ERROR " + json.dumps(
            {"command": args.command, "type": type(exc).__name__,
             "message": str(exc)}), file=sys.stderr, flush=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())
