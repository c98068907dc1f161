"""Command-line entry point: synth, train, track, eval, ablate."""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import metrics as metrics_mod
from . import synthworld
from .checkpoint import CheckpointError
from .config import ConfigError, RunConfig, load_config, validate_config
from .embedding import Vocabulary, default_vocabulary
from .language_update import UpdatePolicy, make_captioner
from .model import init_params, load_params, save_params
from .sequences import list_sequence_dirs, read_sequence, write_boxes, write_sequence
from .tracker import track_sequence
from .trainer import STAGE_VISION, STAGE_VISION_LANGUAGE, train_stage

log = logging.getLogger("dutrack")


def _setup_logging() -> None:
    level = os.environ.get("DUTRACK_LOG", "INFO").upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO), format="%(levelname)s %(name)s: %(message)s")


def _load_run_config(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    for key in ("seed", "jobs", "topk", "tau_s", "tau_d_strides", "tau_c", "captioner"):
        value = getattr(args, key, None)
        if value is not None:
            setattr(cfg, key, value)
    if getattr(args, "diagnostics", False):
        cfg.diagnostics = True
    validate_config(cfg)
    return cfg


def _vocab_for_checkpoint(checkpoint_path: Path) -> Vocabulary:
    sidecar = checkpoint_path.with_name(checkpoint_path.name + ".vocab.txt")
    if sidecar.exists():
        return Vocabulary.load(sidecar)
    log.warning("no vocabulary sidecar at %s; using the default vocabulary", sidecar)
    return default_vocabulary()


# ---------------------------------------------------------------------------
# synth


def cmd_synth(args) -> int:
    if bool(args.suite) == bool(args.spec):
        raise ConfigError("pass exactly one of --suite or --spec")
    specs = (
        synthworld.suite_specs(args.suite, args.seed or 0)
        if args.suite
        else synthworld.load_suite_file(args.spec)
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for spec in specs:
        seq = synthworld.generate_sequence(spec)
        write_sequence(seq, out / seq.name)
        log.info("wrote %s (%d frames)", out / seq.name, len(seq))
    print(f"materialized {len(specs)} sequences under {out}")
    return 0


# ---------------------------------------------------------------------------
# train


def cmd_train(args) -> int:
    cfg = _load_run_config(args)
    model_cfg = cfg.model_config()
    dataset = [read_sequence(d) for d in list_sequence_dirs(args.data)]
    vocab = default_vocabulary(sorted({seq.category for seq in dataset}))

    rng = np.random.default_rng(cfg.seed)
    params = init_params(model_cfg, len(vocab), rng)
    curves = {}
    if args.stage in ("both", "1"):
        tcfg = cfg.train_config(STAGE_VISION, cfg.stage1_epochs)
        curves["stage1"] = train_stage(dataset, tcfg, model_cfg, params, vocab)
    if args.stage in ("both", "2"):
        if args.stage == "2":
            if args.init_from:
                params = load_params(args.init_from, model_cfg, len(vocab))
            elif not args.from_scratch:
                raise ConfigError("stage 2 alone needs --init-from CHECKPOINT or --from-scratch")
        tcfg = cfg.train_config(STAGE_VISION_LANGUAGE, cfg.stage2_epochs)
        curves["stage2"] = train_stage(dataset, tcfg, model_cfg, params, vocab)

    out = Path(args.out)
    save_params(out, params)
    vocab.save(out.with_name(out.name + ".vocab.txt"))
    for stage, curve in curves.items():
        curve_path = out.with_name(out.name + f".{stage}.loss.csv")
        with curve_path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "loss"])
            for i, v in enumerate(curve):
                writer.writerow([i, f"{v:.8f}"])
    print(f"checkpoint written to {out}")
    return 0


# ---------------------------------------------------------------------------
# track


def _track_one(seq_dir: str, out_dir: str, cfg: RunConfig, checkpoint_path: str) -> str:
    seq_dir = Path(seq_dir)
    out_dir = Path(out_dir)
    model_cfg = cfg.model_config()
    vocab = _vocab_for_checkpoint(Path(checkpoint_path))
    params = load_params(checkpoint_path, model_cfg, len(vocab))
    return _track_loaded(seq_dir, out_dir, cfg, params, vocab)


def _track_loaded(seq_dir: Path, out_dir: Path, cfg: RunConfig, params, vocab) -> str:
    seq = read_sequence(seq_dir)
    captioner = make_captioner(cfg.captioner)
    boxes, diags = track_sequence(
        seq.frames, seq.boxes[0], seq.description, seq.category,
        params, cfg.model_config(), cfg.track_config(), vocab, captioner,
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    write_boxes(out_dir / f"{seq.name}.txt", boxes)
    if cfg.diagnostics:
        with (out_dir / f"{seq.name}.updates.txt").open("w", encoding="utf-8") as fh:
            for d in diags:
                fh.write(
                    f"{d.frame_index},{d.deltas.scale:.6f},{d.deltas.displacement:.6f},"
                    f"{d.deltas.color:.6f},{int(d.updated)},{d.description}\n"
                )
        with (out_dir / f"{seq.name}.captures.txt").open("w", encoding="utf-8") as fh:
            for d in diags:
                for idx, box, score in d.capture_boxes:
                    fh.write(
                        f"{d.frame_index},{idx},{box.x:.0f},{box.y:.0f},{box.w:.0f},{box.h:.0f},{score:.8f}\n"
                    )
    return seq.name


def run_tracking(data_dir, out_dir, cfg: RunConfig, checkpoint_path) -> list[str]:
    seq_dirs = list_sequence_dirs(data_dir)
    out_dir = Path(out_dir)
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            names = list(
                pool.map(
                    _track_one,
                    [str(d) for d in seq_dirs],
                    [str(out_dir)] * len(seq_dirs),
                    [cfg] * len(seq_dirs),
                    [str(checkpoint_path)] * len(seq_dirs),
                )
            )
        return names
    model_cfg = cfg.model_config()
    vocab = _vocab_for_checkpoint(Path(checkpoint_path))
    params = load_params(checkpoint_path, model_cfg, len(vocab))
    names = []
    for seq_dir in seq_dirs:
        names.append(_track_loaded(seq_dir, out_dir, cfg, params, vocab))
        log.info("tracked %s", names[-1])
    return names


def cmd_track(args) -> int:
    cfg = _load_run_config(args)
    names = run_tracking(args.data, args.out, cfg, args.checkpoint)
    print(f"tracked {len(names)} sequences into {args.out}")
    return 0


# ---------------------------------------------------------------------------
# eval


def cmd_eval(args) -> int:
    rows = metrics_mod.evaluate_results(args.data, args.results)
    overall = metrics_mod.write_report(Path(args.results) / "metrics.csv", rows)
    for name, m in rows:
        print(f"{name}: auc={m.auc:.4f} precision={m.precision:.4f} norm_precision={m.norm_precision:.4f}")
    print(f"ALL: auc={overall.auc:.4f} precision={overall.precision:.4f} norm_precision={overall.norm_precision:.4f}")
    return 0


# ---------------------------------------------------------------------------
# ablate

TOPK_SWEEP = (0, 1, 2, 3)
# (tau_s, tau_d in strides, tau_c); the first row disables every trigger and
# stands for the static-language baseline.
POLICY_SWEEP = (
    (0.0, 16.0, float("inf")),
    (0.5, 2.0, None),
    (0.8, 1.0, None),
    (1.0, 0.0, None),
)


def ablation_rows(data_dir, out_root, cfg: RunConfig, checkpoint_path):
    """Track the dataset under every sweep variant and score each one."""
    out_root = Path(out_root)
    rows = []
    for k in TOPK_SWEEP:
        variant = replace(cfg, topk=k)
        out = out_root / f"topk-{k}"
        run_tracking(data_dir, out, variant, checkpoint_path)
        overall = metrics_mod.write_report(out / "metrics.csv", metrics_mod.evaluate_results(data_dir, out))
        rows.append((f"topk={k}", overall))
        log.info("ablate %s: auc=%.4f", rows[-1][0], overall.auc)
    for tau_s, tau_d_strides, tau_c in POLICY_SWEEP:
        variant = replace(
            cfg, topk=max(cfg.topk, 3),
            tau_s=tau_s, tau_d_strides=tau_d_strides,
            tau_c=cfg.tau_c if tau_c is None else tau_c,
        )
        out = out_root / f"policy-s{tau_s}-d{tau_d_strides}"
        run_tracking(data_dir, out, variant, checkpoint_path)
        overall = metrics_mod.write_report(out / "metrics.csv", metrics_mod.evaluate_results(data_dir, out))
        rows.append((f"policy=({tau_s},{tau_d_strides}x stride)", overall))
        log.info("ablate %s: auc=%.4f", rows[-1][0], overall.auc)
    return rows


def cmd_ablate(args) -> int:
    cfg = _load_run_config(args)
    rows = ablation_rows(args.data, args.out, cfg, args.checkpoint)
    with (Path(args.out) / "ablation.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "auc", "precision", "norm_precision"])
        for name, m in rows:
            writer.writerow([name, f"{m.auc:.6f}", f"{m.precision:.6f}", f"{m.norm_precision:.6f}"])
    print(f"{'variant':<32} {'auc':>8} {'precision':>10} {'norm_prec':>10}")
    for name, m in rows:
        print(f"{name:<32} {m.auc:>8.4f} {m.precision:>10.4f} {m.norm_precision:>10.4f}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dutrack", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="materialize a suite of synthetic sequences")
    p.add_argument("--suite", help="built-in suite name (static, drift-color, scale-ramp, fast-motion, distractor, train)")
    p.add_argument("--spec", help="JSON suite spec file")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="run the two training stages")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--stage", choices=("both", "1", "2"), default="both")
    p.add_argument("--init-from", help="checkpoint to start stage 2 from")
    p.add_argument("--from-scratch", action="store_true", help="allow stage 2 without a stage-1 checkpoint")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("track", help="run the tracker over every sequence")
    p.add_argument("--config")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--topk", type=int, default=None)
    p.add_argument("--tau-s", dest="tau_s", type=float, default=None)
    p.add_argument("--tau-d-strides", dest="tau_d_strides", type=float, default=None)
    p.add_argument("--tau-c", dest="tau_c", type=float, default=None)
    p.add_argument("--captioner", default=None, help="external captioner command")
    p.add_argument("--diagnostics", action="store_true")
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("eval", help="score result files against a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--results", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="sweep top-k and update-policy variants")
    p.add_argument("--config")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--topk", type=int, default=None)
    p.add_argument("--tau-s", dest="tau_s", type=float, default=None)
    p.add_argument("--tau-d-strides", dest="tau_d_strides", type=float, default=None)
    p.add_argument("--tau-c", dest="tau_c", type=float, default=None)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, CheckpointError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
