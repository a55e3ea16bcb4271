"""Command-line surface: synth-corpus, train, enhance, evaluate, report.

Commands are idempotent for a fixed config and seed. While a command is
writing into an output directory it keeps a `.incomplete` marker there; the
marker disappears on success, so a leftover marker means partial outputs.
Errors print one clear message and exit nonzero (2 for configuration problems,
1 for runtime failures).
"""

from __future__ import annotations

import argparse
import sys
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path

from . import corpus, dsp, quality, report
from .config import ConfigError, load_experiment_config
from .train import CheckpointError, Trainer, TrainingDiverged, load_model

_MARKER = ".incomplete"


@contextmanager
def _managed_dir(path: Path):
    path.mkdir(parents=True, exist_ok=True)
    marker = path / _MARKER
    marker.write_text("command in progress; if this file persists, outputs are partial\n")
    yield path
    marker.unlink(missing_ok=True)


def _resolve_out(args_out, config, default_subdir: str) -> Path:
    if args_out is not None:
        return Path(args_out)
    return config.resolved_output_dir() / default_subdir


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_synth_corpus(args) -> int:
    cfg = load_experiment_config(args.config, seed_override=args.seed)
    out = _resolve_out(args.out, cfg, "corpus")
    with _managed_dir(out):
        records = corpus.build_manifest(cfg.corpus)
        saved = corpus.save_corpus(records, out)
    n_train = sum(1 for r in saved if r.split == "train")
    print(f"wrote {len(saved)} mixtures ({n_train} train / {len(saved) - n_train} test) to {out}")
    print(f"manifest: {out / 'manifest.jsonl'}")
    return 0


def cmd_train(args) -> int:
    cfg = load_experiment_config(args.config, seed_override=args.seed)
    train_cfg = cfg.train
    if args.pesq_plugin:
        train_cfg = replace(train_cfg, q_metric=f"plugin:{args.pesq_plugin}")
    corpus_dir = cfg.resolved_output_dir() / "corpus"
    manifest_path = corpus_dir / "manifest.jsonl"
    if not manifest_path.exists():
        raise ConfigError(
            f"no corpus manifest at {manifest_path}; run `crgan synth-corpus` first"
        )
    records = corpus.load_manifest(manifest_path)
    out = _resolve_out(args.out, cfg, f"train/{train_cfg.variant}")
    trainer = Trainer(records, train_cfg, root=corpus_dir)
    with _managed_dir(out):
        result = trainer.run(out_dir=out, resume=args.resume)
        if result.log_path is not None:
            report.render_loss_curves(result.log_path, out / "loss_curves.png")
    for summary in result.epochs:
        parts = [f"epoch {summary['epoch']}", f"g_total {summary['mean_g_total']:.6f}"]
        if "mean_d_total" in summary:
            parts.append(f"d_total {summary['mean_d_total']:.6f}")
        if "validation_quality" in summary:
            parts.append(f"val_q {summary['validation_quality']:.4f}")
        print("  ".join(parts))
    print(f"checkpoints and log in {out}")
    return 0


def cmd_enhance(args) -> int:
    model = load_model(args.checkpoint)
    in_dir = Path(args.input)
    wavs = sorted(in_dir.glob("*.wav"))
    if not wavs:
        raise ValueError(f"no .wav files in {in_dir}")
    out = Path(args.out)
    with _managed_dir(out):
        for path in wavs:
            enhanced = model.enhance(dsp.read_wav(path))
            dsp.write_wav(out / path.name, enhanced)
    print(f"enhanced {len(wavs)} files with {model.variant.value} -> {out}")
    return 0


def cmd_evaluate(args) -> int:
    pesq_source = f"plugin:{args.pesq_plugin}" if args.pesq_plugin else None
    out = Path(args.out)
    with _managed_dir(out):
        result = report.evaluate_directories(
            args.clean, args.enhanced, args.noisy,
            pesq_source=pesq_source, system=args.system,
        )
        report.write_metrics_tsv(result, out / "metrics.tsv")
        (out / "metrics.txt").write_text(report.render_evaluation_text(result))
    print(report.render_evaluation_text(result))
    print(f"per-utterance scores: {out / 'metrics.tsv'}")
    return 0


def cmd_report(args) -> int:
    out = Path(args.out)
    with _managed_dir(out):
        info = report.build_report(args.metrics, out)
    print((out / "report.txt").read_text())
    print(f"report files: {out / 'report.tsv'}, {out / 'report.txt'}, {out / 'report.png'}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crgan",
        description="Mask-based speech enhancement: synthetic corpus, GAN training, "
                    "enhancement, and objective evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-corpus", help="generate the synthetic clean/noisy corpus")
    p.add_argument("--config", required=True, help="experiment YAML")
    p.add_argument("--seed", type=int, default=None, help="override the experiment seed")
    p.add_argument("--out", default=None, help="corpus directory (default <output_dir>/corpus)")
    p.set_defaults(fn=cmd_synth_corpus)

    p = sub.add_parser("train", help="train the configured model variant")
    p.add_argument("--config", required=True, help="experiment YAML")
    p.add_argument("--seed", type=int, default=None, help="override the experiment seed")
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.add_argument("--out", default=None, help="run directory (default <output_dir>/train/<variant>)")
    p.add_argument("--pesq-plugin", default=None, help="external PESQ executable for quality targets")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("enhance", help="run a trained model over a directory of noisy WAVs")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="directory of noisy .wav files")
    p.add_argument("--out", required=True, help="directory for enhanced .wav files")
    p.set_defaults(fn=cmd_enhance)

    p = sub.add_parser("evaluate", help="score enhanced (and noisy baseline) against clean")
    p.add_argument("--clean", required=True)
    p.add_argument("--enhanced", required=True)
    p.add_argument("--noisy", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--system", default="enhanced", help="name for the enhanced system's rows")
    p.add_argument("--pesq-plugin", default=None, help="external PESQ executable")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("report", help="merge evaluation TSVs into a comparison report")
    p.add_argument("metrics", nargs="+", help="metrics.tsv files from `crgan evaluate`")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, CheckpointError, TrainingDiverged,
            quality.QualityError, quality.PluginError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
