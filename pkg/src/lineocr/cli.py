"""Batch commands: gen, train, eval, detect-post, detect-eval, gradcheck, report.

Exit status: 0 success, 1 usage or config error, 2 data error,
3 verification failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, datagen, dbpost, gradcheck, imaging, metrics, report, train
from .config import ConfigError, RunConfig, defaults, load_config, render_defaults
from .nn import CheckpointError, load_checkpoint, save_checkpoint

log = logging.getLogger("lineocr")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_VERIFY = 0, 1, 2, 3
MANIFEST = "run_manifest.json"
LOCK = ".lock"


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class VerificationFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# -- output directories --------------------------------------------------

class RunDir:
    """An output directory owned by one writer; the manifest is written last."""

    def __init__(self, path: Path, cfg: RunConfig, command, force=False):
        self.path = Path(path)
        self.cfg = cfg
        self.command = command
        self.force = force
        self.files: list[str] = []
        self.curves: dict = {}
        self.extra: dict = {}
        self.t0 = time.time()
        self.times: dict = {}

    def __enter__(self):
        if self.path.exists() and not self.path.is_dir():
            raise UsageError(f"{self.path} exists and is not a directory")
        self.path.mkdir(parents=True, exist_ok=True)
        lock = self.path / LOCK
        try:
            fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise UsageError(f"{self.path} is locked by another writer ({lock})") from None
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        others = [p for p in self.path.iterdir() if p.name != LOCK]
        if others and not self.force:
            os.remove(lock)
            raise UsageError(f"{self.path} is not empty (use --force to reuse it)")
        if self.force and (self.path / MANIFEST).exists():
            os.remove(self.path / MANIFEST)
        return self

    def __exit__(self, *exc):
        try:
            os.remove(self.path / LOCK)
        except FileNotFoundError:
            pass
        return False

    def file(self, rel) -> Path:
        p = self.path / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        self.files.append(str(rel))
        return p

    def write_text(self, rel, text):
        self.file(rel).write_text(text, encoding="utf-8")

    def finish(self):
        missing = [f for f in self.files if not (self.path / f).exists()]
        if missing:
            raise VerificationFailure(f"artifacts missing before manifest: {missing}")
        self.times["total"] = round(time.time() - self.t0, 3)
        body = {
            "command": self.command,
            "tool_version": __version__,
            "config": self.cfg.text,
            "config_source": self.cfg.source,
            "files": self.files,
            "curves": self.curves,
            "wall_clock_seconds": self.times,
            **self.extra,
        }
        tmp = self.path / (MANIFEST + ".tmp")
        tmp.write_text(json.dumps(body, indent=2, sort_keys=True, ensure_ascii=False), encoding="utf-8")
        os.replace(tmp, self.path / MANIFEST)


def _snapshot_config(run: RunDir):
    run.file("config.cfg").write_bytes(run.cfg.text.encode("utf-8"))


def _atlas(cfg):
    return datagen.build_atlas(cfg.atlas_seed, cfg.alphabet_size)


# -- gen -----------------------------------------------------------------

def _generators(cfg, atlas, split):
    if split == "eval":
        for words in cfg.eval_words:
            for mode in cfg.eval_modes:
                yield datagen.LineGenerator(atlas, seed=cfg.data_seed, max_words=words,
                                            fixed_words=words, split="eval",
                                            force_augment=mode, stream=cfg.eval_seed), cfg.eval_count
    else:
        yield datagen.LineGenerator(atlas, seed=cfg.data_seed, max_words=cfg.max_words,
                                    augment_ratio=cfg.augment_ratio, split=split), None


def cmd_gen(cfg, out, splits, count, force=False):
    atlas = _atlas(cfg)
    with RunDir(out, cfg, "gen", force) as run:
        _snapshot_config(run)
        for split in splits:
            t = time.time()
            rows = []
            for gen, n in _generators(cfg, atlas, split):
                for s in gen.take(n if n is not None else count):
                    rel = f"{split}/{len(rows):06d}.pgm"
                    imaging.write_pgm(run.file(rel), s.image)
                    rows.append(s.manifest_row(Path(rel).name))
            run.write_text(f"{split}/manifest.jsonl",
                           "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in rows))
            info = {"alphabet": atlas.chars, "atlas_seed": atlas.seed, "data_seed": cfg.data_seed,
                    "split": split, "count": len(rows)}
            run.write_text(f"{split}/dataset.json", json.dumps(info, indent=2, ensure_ascii=False))
            run.times[f"gen_{split}"] = round(time.time() - t, 3)
            log.info("wrote %d %s lines", len(rows), split)
        run.finish()
    return EXIT_OK


# -- train ---------------------------------------------------------------

def _curve_csv(curve):
    return "step,loss\n" + "".join(f"{i},{v!r}\n" for i, v in enumerate(curve))


def cmd_train(cfg, out, resume=None, force=False):
    atlas = _atlas(cfg)
    settings = cfg.train_settings()
    if resume is not None:
        ckpt = _load_ckpt(resume)
        _check_alphabet(ckpt.meta.get("alphabet"), atlas.chars, resume)
        start = ckpt.stage + 1
    else:
        ckpt = train.fresh_checkpoint(atlas, cfg.model_seed, settings, cfg.width_div)
        start = 0
    stages = list(enumerate(cfg.stage_steps))[start:]
    if not stages:
        raise UsageError(f"nothing to train: stage_steps has {len(cfg.stage_steps)} stages, "
                         f"resuming after stage {start - 1}")
    failures = []
    with RunDir(out, cfg, "train", force) as run:
        _snapshot_config(run)
        run.extra["checkpoints"] = []
        for stage, steps in stages:
            t = time.time()
            try:
                res = train.run_stage(ckpt, atlas, stage, steps, settings, cfg.data_seed)
            except train.TrainingDiverged as exc:
                run.write_text("diverged.json", json.dumps(
                    {"stage": stage, "step": exc.step, "loss": repr(exc.loss), "batch_seeds": exc.seeds},
                    indent=2))
                run.finish()
                raise VerificationFailure(str(exc)) from None
            run.times[f"stage{stage}"] = round(time.time() - t, 3)
            run.write_text(f"loss_stage{stage}.csv", _curve_csv(res.curve))
            run.curves[f"stage{stage}"] = res.curve
            rel = f"stage{stage}.ckpt"
            save_checkpoint(ckpt, run.file(rel))
            run.extra["checkpoints"].append(rel)
            if len(res.curve) >= 200:
                first, last = np.mean(res.curve[:100]), np.mean(res.curve[-100:])
                if not last < first:
                    failures.append(f"stage {stage}: mean loss rose from {first:.4f} to {last:.4f}")
            log.info("stage %d done: %d steps, final loss %.4f", stage, steps,
                     res.curve[-1] if res.curve else float("nan"))
        run.extra["loss_check_failures"] = failures
        run.finish()
    if failures:
        raise VerificationFailure("; ".join(failures))
    return EXIT_OK


def _load_ckpt(path):
    try:
        return load_checkpoint(path)
    except FileNotFoundError:
        raise DataError(f"checkpoint {path} not found") from None
    except CheckpointError as exc:
        raise DataError(str(exc)) from None


def _check_alphabet(ckpt_alphabet, data_alphabet, where):
    if ckpt_alphabet != data_alphabet:
        raise DataError(f"alphabet mismatch: checkpoint {where} was trained on {ckpt_alphabet!r}, "
                        f"data uses {data_alphabet!r}")


# -- eval ----------------------------------------------------------------

def _read_dataset(path):
    path = Path(path)
    try:
        info = json.loads((path / "dataset.json").read_text(encoding="utf-8"))
        lines = (path / "manifest.jsonl").read_text(encoding="utf-8").splitlines()
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: not a dataset directory ({exc})") from None
    rows = []
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            r = json.loads(line)
            rows.append((r["words"], r["augment"], r["transcript"], path / r["image"]))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise DataError(f"{path / 'manifest.jsonl'}:{lineno}: malformed row ({exc})") from None
    if not rows:
        raise DataError(f"{path}: dataset is empty")
    return info, rows


def cmd_eval(cfg, out, checkpoint, dataset, decoder=None, beam_width=None, force=False):
    decoder = decoder or cfg.decoder
    beam_width = beam_width or cfg.beam_width
    ckpt = _load_ckpt(checkpoint)
    info, rows = _read_dataset(dataset)
    alphabet = ckpt.meta.get("alphabet")
    _check_alphabet(alphabet, info["alphabet"], checkpoint)
    atlas = datagen.GlyphAtlas(ckpt.meta.get("atlas_seed"), [None] * len(alphabet))  # decoding needs chars only
    try:
        images = [imaging.read_pgm(r[3]) for r in rows]
    except (OSError, ValueError) as exc:
        raise DataError(str(exc)) from None
    with RunDir(out, cfg, "eval", force) as run:
        _snapshot_config(run)
        t = time.time()
        hyps = train.recognize(ckpt.model, atlas, images, decoder, beam_width)
        run.times["decode"] = round(time.time() - t, 3)
        meta = {"checkpoint": str(checkpoint), "dataset": str(dataset), "stage": ckpt.stage}
        if decoder == "beam":
            meta["beam_width"] = beam_width
            greedy = train.recognize(ckpt.model, atlas, images, "greedy")
            g = metrics.evaluate_transcripts([(r[0], r[1], r[2], h) for r, h in zip(rows, greedy)])
            meta["greedy_crr"], meta["greedy_wrr"] = g.crr, g.wrr
        rep = metrics.evaluate_transcripts([(r[0], r[1], r[2], h) for r, h in zip(rows, hyps)],
                                           decoder, meta)
        run.write_text("report.json", rep.to_json())
        run.write_text("report.csv", rep.to_csv())
        run.write_text("crr_vs_words.svg", report.crr_chart(rep))
        run.write_text("transcripts.jsonl", "".join(
            json.dumps({"image": r[3].name, "ref": r[2], "hyp": h}, ensure_ascii=False) + "\n"
            for r, h in zip(rows, hyps)))
        run.finish()
    log.info("CRR %.2f WRR %.2f (%s)", rep.crr, rep.wrr, decoder)
    return EXIT_OK


# -- detection -----------------------------------------------------------

def _read_map(path):
    path = Path(path)
    try:
        if path.suffix == ".npy":
            m = np.load(path, allow_pickle=False).astype(np.float64)
            if m.ndim != 2:
                raise ValueError(f"{path}: map must be 2-D")
            return m
        return imaging.read_pgm(path)
    except (OSError, ValueError) as exc:
        raise DataError(str(exc)) from None


def cmd_detect_post(cfg, out, prob, thresh=None, mode="prob", force=False):
    if mode == "approx" and thresh is None:
        raise UsageError("mode approx requires a threshold map (--thresh)")
    P = _read_map(prob)
    if mode == "approx":
        T = _read_map(thresh)
        if T.shape != P.shape:
            raise DataError(f"map sizes differ: {P.shape} vs {T.shape}")
        source = dbpost.approx_binary_map(P, T, cfg.db_k)
    else:
        source = P
    polys = dbpost.box_formation(source, cfg.bin_thresh, cfg.box_score_thresh, cfg.unclip_ratio)
    with RunDir(out, cfg, "detect-post", force) as run:
        _snapshot_config(run)
        dbpost.write_polygons(run.file("polygons.jsonl"), polys)
        run.extra["mode"] = mode
        run.extra["polygons"] = len(polys)
        run.finish()
    log.info("%d polygons", len(polys))
    return EXIT_OK


def cmd_detect_eval(cfg, out, gt, pred, iou_thresh=None, force=False):
    iou_thresh = cfg.iou_thresh if iou_thresh is None else iou_thresh
    try:
        g, p = dbpost.read_polygons(gt), dbpost.read_polygons(pred)
    except OSError as exc:
        raise DataError(str(exc)) from None
    except ValueError as exc:
        raise DataError(str(exc)) from None
    score = metrics.detection_prf(g, p, iou_thresh)
    with RunDir(out, cfg, "detect-eval", force) as run:
        _snapshot_config(run)
        body = {"iou_thresh": iou_thresh, "precision": score.precision, "recall": score.recall,
                "f_measure": score.f_measure, "tp": score.tp, "n_gt": score.n_gt,
                "n_pred": score.n_pred, "notes": score.notes}
        run.write_text("detection.json", json.dumps(body, indent=2, sort_keys=True))
        run.write_text("detection.csv", metrics.detection_csv(score))
        run.finish()
    print(f"P {score.precision:.2f} R {score.recall:.2f} F {score.f_measure:.2f}")
    return EXIT_OK


# -- gradcheck / report --------------------------------------------------

def cmd_gradcheck(scope="all", seed=None):
    seeds = (seed,) if seed is not None else (1, 2, 3, 4, 5)
    try:
        results = gradcheck.run_checks(scope, seeds)
    except KeyError as exc:
        raise UsageError(exc.args[0]) from None
    print(gradcheck.format_table(results))
    if any(not r.passed for rs in results.values() for r in rs):
        raise VerificationFailure("gradient check failed")
    return EXIT_OK


def cmd_report(cfg, out, evals, force=False):
    reports = []
    for d in evals:
        try:
            reports.append((Path(d), metrics.EvalReport.from_json(
                (Path(d) / "report.json").read_text(encoding="utf-8"))))
        except (OSError, ValueError, TypeError, KeyError) as exc:
            raise DataError(f"{d}: unreadable evaluation report ({exc})") from None
    with RunDir(out, cfg, "report", force) as run:
        parts = ["# Recognition results", "",
                 "Synthetic glyph corpus; numbers are not comparable to real-handwriting benchmarks.", ""]
        for i, (d, rep) in enumerate(reports):
            name = d.name or str(d)
            parts.append(report.markdown_table(rep, name))
            run.write_text(f"chart_{i:02d}.svg", report.crr_chart(rep, f"CRR vs words ({name})"))
        run.write_text("summary.md", "\n".join(parts))
        run.finish()
    return EXIT_OK


# -- entry point ---------------------------------------------------------

def build_parser():
    p = _Parser(prog="lineocr", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, out=True):
        sp.add_argument("--config", help="key = value run configuration (defaults if omitted)")
        if out:
            sp.add_argument("--out", required=True, help="output directory (relative to the output root)")
            sp.add_argument("--force", action="store_true", help="reuse a non-empty output directory")

    sp = sub.add_parser("gen", help="render synthetic line datasets")
    common(sp)
    sp.add_argument("--split", default="train", help="comma list of train, val, test, eval")
    sp.add_argument("--count", type=int, default=100, help="lines per split (eval uses the config grid)")

    sp = sub.add_parser("train", help="curriculum training")
    common(sp)
    sp.add_argument("--resume", help="checkpoint of the last finished stage")

    sp = sub.add_parser("eval", help="score a checkpoint on a dataset split")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--dataset", required=True, help="split directory written by gen")
    sp.add_argument("--decoder", choices=("greedy", "beam"))
    sp.add_argument("--beam-width", type=int)

    sp = sub.add_parser("detect-post", help="probability map to text polygons")
    common(sp)
    sp.add_argument("--prob", required=True, help="probability map (.pgm or .npy)")
    sp.add_argument("--thresh", help="threshold map (.pgm or .npy), needed for --mode approx")
    sp.add_argument("--mode", choices=("prob", "approx"), default="prob")

    sp = sub.add_parser("detect-eval", help="precision/recall/F of polygon predictions")
    common(sp)
    sp.add_argument("--gt", required=True)
    sp.add_argument("--pred", required=True)
    sp.add_argument("--iou", type=float)

    sp = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    sp.add_argument("--scope", default="all", help="check name or 'all'")
    sp.add_argument("--seed", type=int)

    sp = sub.add_parser("report", help="summarize evaluation directories")
    common(sp)
    sp.add_argument("--eval", nargs="+", required=True, help="directories written by eval")

    sub.add_parser("config", help="print a config file with every default")
    return p


def _config(args) -> RunConfig:
    if getattr(args, "config", None):
        return load_config(args.config)
    return defaults()


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    c = args.command
    if c == "gradcheck":
        return cmd_gradcheck(args.scope, args.seed)
    if c == "config":
        sys.stdout.write(render_defaults())
        return EXIT_OK
    cfg = _config(args)
    out = cfg.resolve(args.out)
    if c == "gen":
        splits = [s.strip() for s in args.split.split(",") if s.strip()]
        bad = [s for s in splits if s not in datagen.SPLITS]
        if bad or not splits:
            raise UsageError(f"unknown split(s) {bad}; choose from {sorted(datagen.SPLITS)}")
        if args.count < 1:
            raise UsageError("--count must be >= 1")
        return cmd_gen(cfg, out, splits, args.count, args.force)
    if c == "train":
        return cmd_train(cfg, out, args.resume, args.force)
    if c == "eval":
        if args.beam_width is not None and args.beam_width < 1:
            raise UsageError("--beam-width must be >= 1")
        return cmd_eval(cfg, out, args.checkpoint, args.dataset, args.decoder, args.beam_width, args.force)
    if c == "detect-post":
        return cmd_detect_post(cfg, out, args.prob, args.thresh, args.mode, args.force)
    if c == "detect-eval":
        if args.iou is not None and not 0 < args.iou < 1:
            raise UsageError("--iou must lie in (0, 1)")
        return cmd_detect_eval(cfg, out, args.gt, args.pred, args.iou, args.force)
    if c == "report":
        return cmd_report(cfg, out, args.eval, args.force)
    raise UsageError(f"unknown command {c}")


def main(argv=None) -> int:
    try:
        return run(argv)
    except (UsageError, ConfigError) as exc:
        print(f"lineocr: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"lineocr: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except VerificationFailure as exc:
        print(f"lineocr: verification failed: {exc}", file=sys.stderr)
        return EXIT_VERIFY


if __name__ == "__main__":
    sys.exit(main())
