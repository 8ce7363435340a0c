"""Command-line entry point: ``subband-kd <command> [options]``.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical divergence.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import checkpoint as ckpt_io
from .config import apply_overrides, load_config
from .data import CorpusIndex, DataError, generate_toy_corpus, read_wav, write_wav
from .metrics import MetricError, MetricReport, evaluate_pair, merge_pesq
from .network import DivergenceError, param_count
from .spectral import SpectralError
from .subband import PartitionError
from .training import DistillConfig, enhance, prepare_features, train_student, train_teacher

log = logging.getLogger("subband_kd")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4


class UsageError(Exception):
    pass


def teacher_path(teacher_dir, band: int) -> Path:
    return Path(teacher_dir) / f"teacher_band{band}.sbse"


def _config(args):
    cfg = load_config(args.config)
    overrides = {
        "seed": args.seed,
        "partition.band_width": args.band_width,
        "model.hidden_size": args.hidden_size,
        "model.teacher_hidden_size": getattr(args, "teacher_hidden_size", None),
        "train.lr": args.lr,
        "train.batch_size": args.batch_size,
        "train.max_epochs": args.epochs,
        "train.chunk_frames": args.chunk_frames,
        "distill.alpha": getattr(args, "alpha", None),
        "distill.teacher_dir": getattr(args, "teacher_dir", None),
        "paths.corpus_dir": getattr(args, "corpus_dir", None),
        "paths.checkpoint_dir": getattr(args, "checkpoint_dir", None),
        "paths.report_dir": getattr(args, "report_dir", None),
    }
    return apply_overrides(cfg, overrides)


def _corpus(cfg):
    index = CorpusIndex.load(cfg.paths.corpus_dir)
    stft_cfg = cfg.stft_config()
    train = prepare_features(index.load_pairs("train"), stft_cfg)
    if not train:
        raise DataError(f"corpus {cfg.paths.corpus_dir} has no training entries")
    val_pairs = index.load_pairs("val")
    val = prepare_features(val_pairs, stft_cfg) if val_pairs else None
    return train, val


# ------------------------------------------------------------------- commands

def cmd_gen_data(args) -> int:
    if args.count < 1:
        raise UsageError("--count must be at least 1")
    cfg = _config(args)
    out = args.out or cfg.paths.corpus_dir
    index = generate_toy_corpus(out, cfg.seed, args.count, args.duration, args.test_count)
    print(f"wrote {len(index.entries)} mixtures to {out}")
    return EXIT_OK


def cmd_train_teacher(args) -> int:
    cfg = _config(args)
    part = cfg.partition_for()
    part.band(args.band)
    train, val = _corpus(cfg)
    model, report = train_teacher(train, args.band, part, cfg.teacher_hidden,
                                  cfg.train_config(), val)
    out = Path(args.out) if args.out else teacher_path(cfg.distill.teacher_dir, args.band)
    ckpt_io.save(out, model)
    report.write_jsonl(Path(cfg.paths.report_dir) / f"{out.stem}.jsonl")
    print(f"band {args.band}: best validation MSE {report.best_val:.6g} -> {out}")
    return EXIT_OK


def load_teachers(teacher_dir, n_bands: int) -> list:
    missing = [i for i in range(n_bands) if not teacher_path(teacher_dir, i).is_file()]
    if missing:
        names = ", ".join(f"band {i} ({teacher_path(teacher_dir, i)})" for i in missing)
        raise DataError(f"missing teacher checkpoint for {names}")
    return [ckpt_io.load(teacher_path(teacher_dir, i)) for i in range(n_bands)]


def cmd_train_student(args) -> int:
    cfg = _config(args)
    part = cfg.partition_for()
    distill = None
    if args.distill:
        distill = DistillConfig(load_teachers(cfg.distill.teacher_dir, part.n_bands),
                                cfg.distill.alpha)
    train, val = _corpus(cfg)
    model, report = train_student(train, part, cfg.model.hidden_size, cfg.train_config(),
                                  distill, val)
    out = Path(args.out) if args.out else Path(cfg.paths.checkpoint_dir) / "student.sbse"
    ckpt_io.save(out, model)
    report.write_jsonl(Path(cfg.paths.report_dir) / f"{out.stem}.jsonl")
    print(f"student: best validation MSE {report.best_val:.6g} -> {out}")
    return EXIT_OK


def cmd_enhance(args) -> int:
    cfg = _config(args)
    part = cfg.partition_for()
    model = None
    if not args.bypass:
        if args.checkpoint is None:
            raise UsageError("--checkpoint is required unless --bypass is given")
        model = ckpt_io.load(args.checkpoint)
        if model.w != part.band_width:
            raise DataError(f"checkpoint width {model.w} does not match band width "
                            f"{part.band_width}")
    noisy = read_wav(args.input)
    out = enhance(model, noisy, part, cfg.stft_config(), bypass=args.bypass)
    write_wav(args.output, out)
    print(f"wrote {args.output} ({len(out)} samples)")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    clean_dir, test_dir = Path(args.clean_dir), Path(args.test_dir)
    clean = {p.name: p for p in sorted(clean_dir.glob("*.wav"))}
    test = {p.name: p for p in sorted(test_dir.glob("*.wav"))}
    unpaired = sorted(set(clean) ^ set(test))
    if unpaired:
        raise DataError(f"unpaired files: {', '.join(unpaired)}")
    if not clean:
        raise DataError(f"no WAV files in {clean_dir}")
    part = cfg.partition_for()
    rows = [evaluate_pair(Path(name).stem, read_wav(clean[name]), read_wav(test[name]),
                          part, cfg.stft_config()) for name in clean]
    report = MetricReport(rows)
    if args.pesq_csv:
        merge_pesq(report, args.pesq_csv)
    out_dir = Path(args.out_dir or cfg.paths.report_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report.to_json(out_dir / "metrics.json")
    report.to_csv(out_dir / "metrics.csv")
    mean = report.mean()
    print(f"{len(rows)} utterances: STOI {100 * mean['stoi']:.3f}%  "
          f"SI-SDR {mean['si_sdr']:.3f} dB  segSNR {mean['seg_snr']:.3f} dB")
    return EXIT_OK


def cmd_param_count(args) -> int:
    cfg = _config(args)
    n = param_count(cfg.partition.band_width, cfg.model.hidden_size)
    print(f"w={cfg.partition.band_width} h={cfg.model.hidden_size}: {n:,} parameters "
          f"({n / 1e6:.2f} M)")
    return EXIT_OK


# --------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int)
    common.add_argument("--band-width", type=int)
    common.add_argument("--hidden-size", type=int)
    common.add_argument("--lr", type=float)
    common.add_argument("--batch-size", type=int)
    common.add_argument("--epochs", type=int)
    common.add_argument("--chunk-frames", type=int)
    common.add_argument("--corpus-dir")
    common.add_argument("--checkpoint-dir")
    common.add_argument("--report-dir")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(
        prog="subband-kd", description="Sub-band speech enhancement with knowledge distillation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="generate the synthetic toy corpus")
    p.add_argument("--count", type=int, default=200, help="training mixtures")
    p.add_argument("--test-count", type=int, help="test mixtures (default count // 4)")
    p.add_argument("--duration", type=float, default=1.0, help="seconds per utterance")
    p.add_argument("--out", help="output directory (default paths.corpus_dir)")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-teacher", parents=[common], help="train the expert for one band")
    p.add_argument("--band", type=int, required=True)
    p.add_argument("--teacher-hidden-size", type=int)
    p.add_argument("--teacher-dir")
    p.add_argument("--out")
    p.set_defaults(func=cmd_train_teacher)

    p = sub.add_parser("train-student", parents=[common], help="train the general sub-band model")
    p.add_argument("--distill", action="store_true", help="guide with frozen per-band teachers")
    p.add_argument("--alpha", type=float)
    p.add_argument("--teacher-dir")
    p.add_argument("--out")
    p.set_defaults(func=cmd_train_student)

    p = sub.add_parser("enhance", parents=[common], help="enhance a noisy WAV file")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--checkpoint")
    p.add_argument("--bypass", action="store_true", help="skip the network (STFT round trip)")
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("evaluate", parents=[common], help="score enhanced files against clean ones")
    p.add_argument("--clean-dir", required=True)
    p.add_argument("--test-dir", required=True)
    p.add_argument("--out-dir")
    p.add_argument("--pesq-csv", help="externally computed PESQ scores (name,pesq)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("param-count", parents=[common], help="print the model parameter count")
    p.set_defaults(func=cmd_param_count)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, PartitionError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as e:
        if isinstance(e, (DataError, ckpt_io.CheckpointError, SpectralError, MetricError)):
            print(f"error: {e}", file=sys.stderr)
            return EXIT_DATA
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
