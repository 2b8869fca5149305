"""Command-line entry point: ``chargrid <command> ...``.

Every command accepts ``--seed``, ``--config`` and ``--threads``, before or
after the command name. ``--threads 1`` makes every command bit-reproducible.
Commands that write a directory also write ``manifest.json`` into it; single
file outputs get a ``<name>.manifest.json`` sibling.
"""

from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__, container
from .evaluate import evaluate_dirs
from .grid import Vocabulary, build_chargrid, build_vocabulary, prepare_input
from .ingest import ParseError, load_annotations, parse_ocr_tsv, read_page, write_page
from .synth import SynthConfig, TemplateError, generate, write_dataset
from .targets import anchor_targets, lineitem_row_boxes, rasterize_segmentation
from .train import (TrainConfig, TrainingDiverged, load_training_set, prepare_training_set,
                    toy_config, train)

logger = logging.getLogger("chargrid")

PRESETS = {"paper": TrainConfig, "toy": toy_config}


def _merge(base: dict, update: dict) -> dict:
    out = dict(base)
    for k, v in update.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_train_config(path=None, preset: str = "paper") -> TrainConfig:
    """Preset defaults overridden by the (possibly partial) JSON file at ``path``."""
    base = PRESETS[preset]().to_dict()
    if path is None:
        return TrainConfig.from_dict(base)
    return TrainConfig.from_dict(_merge(base, json.loads(Path(path).read_text())))


def write_manifest(target: Path, command: str, args: argparse.Namespace, config: dict | None = None):
    info = {
        "command": command,
        "arguments": {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items())
                      if k != "func"},
        "seed": args.seed,
        "threads": args.threads,
        "config": config,
        "versions": {"chargrid": __version__, "numpy": np.__version__,
                     "python": platform.python_version()},
    }
    if target.is_dir():
        path = target / "manifest.json"
    else:
        path = target.with_name(target.stem + ".manifest.json")
    path.write_text(json.dumps(info, indent=2, sort_keys=True))


def _page_files(path: Path) -> list[Path]:
    if path.is_file():
        return [path]
    if (path / "pages").is_dir():
        path = path / "pages"
    files = sorted(p for p in path.glob("*.json") if not p.name.endswith("manifest.json"))
    if not files:
        raise FileNotFoundError(f"no page files in {path}")
    return files


# -- commands -----------------------------------------------------------------

def cmd_ingest(args):
    text = args.tsv.read_text(encoding="utf-8")
    size = args.page_size or (None, None)
    page = parse_ocr_tsv(text, page_w=size[0], page_h=size[1])
    if args.annotations:
        page = load_annotations(args.annotations.read_text(encoding="utf-8"), page)
    write_page(page, args.out)
    logger.info("%s: %d characters, %d annotations", args.out, len(page.chars), len(page.annotations))


def cmd_synth(args):
    d = json.loads(args.config.read_text()) if args.config else {}
    d["seed"] = args.seed
    if args.n is not None:
        d["n_pages"] = args.n
    cfg = SynthConfig.from_dict(d)
    samples = generate(cfg)
    write_dataset(samples, args.out)
    write_manifest(args.out, "synth", args, cfg.to_dict())
    logger.info("wrote %d pages to %s", len(samples), args.out)


def cmd_vocab(args):
    pages = [read_page(p) for p in _page_files(args.data)]
    vocab = build_vocabulary(pages, args.n_classes)
    vocab.save(args.out)
    logger.info("vocabulary of %d classes from %d pages", vocab.n_classes, len(pages))


def cmd_build_grid(args):
    cfg = load_train_config(args.config, args.preset)
    if args.h is not None or args.w is not None:
        net = cfg.network.to_dict()
        net.update({k: v for k, v in (("input_h", args.h), ("input_w", args.w)) if v is not None})
        cfg = TrainConfig.from_dict({**cfg.to_dict(), "network": net})
    vocab = Vocabulary.load(args.vocab)
    h, w = cfg.grid_shape
    args.out.mkdir(parents=True, exist_ok=True)
    anchors = cfg.anchors() if args.with_targets else None
    files = _page_files(args.page)
    for f in files:
        page = read_page(f)
        arrays = {"chargrid": build_chargrid(page, vocab, cfg.stage1_scale * h, cfg.stage1_scale * w),
                  "input": prepare_input(page, vocab, h, w, cfg.stage1_scale)}
        if args.with_targets:
            boxes = lineitem_row_boxes(page, h, w)
            state, deltas = anchor_targets(anchors, boxes, cfg.fg_thresh, cfg.bg_thresh)
            arrays.update(seg_labels=rasterize_segmentation(page, h, w), gt_boxes=boxes,
                          anchor_state=state.astype(np.int8), box_deltas=deltas)
        container.save(args.out / f"{f.stem}.cgt", arrays)
    write_manifest(args.out, "build-grid", args, cfg.to_dict())
    logger.info("wrote %d grids to %s", len(files), args.out)


def cmd_train(args):
    cfg = load_train_config(args.config, args.preset)
    if args.iterations is not None:
        cfg.optimizer.max_iterations = args.iterations
    vocab = Vocabulary.load(args.vocab)
    cached = sorted(args.data.glob("*.cgt")) if args.data.is_dir() else []
    if cached:
        data = load_training_set(cached)
        if data.inputs.shape[1:] != (*cfg.grid_shape, cfg.network.n_vocab):
            raise ValueError(f"cached grids have shape {data.inputs.shape[1:]}, configuration "
                             f"expects {(*cfg.grid_shape, cfg.network.n_vocab)}")
    else:
        files = _page_files(args.data)
        data = prepare_training_set([read_page(f) for f in files], vocab, cfg, [f.stem for f in files])
    logger.info("training on %d pages for %d iterations", len(data), cfg.optimizer.max_iterations)

    def report(state, row):
        if state.iteration % args.log_every == 0:
            logger.info("iter %d  seg %.4f  boxmask %.4f  boxcoord %.4f  total %.4f",
                        *row[:5])

    train(data, cfg, seed=args.seed, out_dir=args.out, resume_from=args.resume,
          extra={"vocab": vocab.to_json()}, callback=report)
    write_manifest(args.out, "train", args, cfg.to_dict())


def cmd_predict(args):
    from .pipeline import Predictor, render_overlay

    vocab = Vocabulary.load(args.vocab) if args.vocab else None
    predictor = Predictor.from_checkpoint(args.ckpt, vocab)
    files = _page_files(args.page)
    pages = [read_page(f) for f in files]
    preds = predictor.predict(pages)
    if args.page.is_file():
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(preds[0].result.dumps(), encoding="utf-8")
    else:
        args.out.mkdir(parents=True, exist_ok=True)
        for f, p in zip(files, preds):
            (args.out / f"{f.stem}.json").write_text(p.result.dumps(), encoding="utf-8")
    if args.overlay:
        if len(pages) != 1:
            raise ValueError("--overlay needs a single page")
        img = render_overlay(predictor.inputs(pages)[0], preds[0].seg_argmax, preds[0].boxes)
        img.save(args.overlay)
    write_manifest(args.out, "predict", args)


def cmd_evaluate(args):
    report = evaluate_dirs(args.pred, args.truth)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(report.dumps() + "\n")
    table = report.table(args.model_name)
    args.out.with_suffix(".txt").write_text(table + "\n")
    print(table)


# -- parser -------------------------------------------------------------------

def _common(default) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=default(0), help="random seed (default 0)")
    p.add_argument("--config", type=Path, default=default(None), help="JSON configuration file")
    p.add_argument("--threads", type=int, default=default(1),
                   help="numeric library threads (default 1, bit-reproducible)")
    p.add_argument("--log-level", default=default("INFO"),
                   choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    return p


def build_parser() -> argparse.ArgumentParser:
    # options may appear before or after the command; only explicit values are stored
    suppress = lambda _v: argparse.SUPPRESS  # noqa: E731
    common = _common(suppress)
    parser = argparse.ArgumentParser(prog="chargrid", parents=[common],
                                     description="Chargrid document field extraction.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, func, help_text):
        p = sub.add_parser(name, parents=[common], help=help_text, description=help_text)
        p.set_defaults(func=func)
        return p

    p = add("ingest", cmd_ingest, "Parse word-level OCR TSV (and annotations) into a page JSON.")
    p.add_argument("--tsv", type=Path, required=True)
    p.add_argument("--annotations", type=Path)
    p.add_argument("--page-size", type=int, nargs=2, metavar=("W", "H"))
    p.add_argument("--out", type=Path, required=True)

    p = add("synth", cmd_synth, "Generate synthetic invoice pages with ground truth.")
    p.add_argument("--n", type=int)
    p.add_argument("--out", type=Path, required=True)

    p = add("vocab", cmd_vocab, "Build the character vocabulary from a page corpus.")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--n-classes", type=int, default=54)
    p.add_argument("--out", type=Path, required=True)

    p = add("build-grid", cmd_build_grid, "Encode pages as chargrids and network inputs.")
    p.add_argument("--page", type=Path, required=True, help="page JSON or directory of pages")
    p.add_argument("--vocab", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--with-targets", action="store_true")
    p.add_argument("--preset", choices=sorted(PRESETS), default="paper")
    p.add_argument("--h", type=int, help="grid height in cells (default from the preset)")
    p.add_argument("--w", type=int, help="grid width in cells (default from the preset)")

    p = add("train", cmd_train, "Train the network.")
    p.add_argument("--data", type=Path, required=True,
                   help="directory of pages, or of grids written by build-grid --with-targets")
    p.add_argument("--vocab", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--preset", choices=sorted(PRESETS), default="paper")
    p.add_argument("--iterations", type=int)
    p.add_argument("--resume", type=Path)
    p.add_argument("--log-every", type=int, default=50)

    p = add("predict", cmd_predict, "Extract fields from pages with a trained checkpoint.")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--page", type=Path, required=True, help="page JSON or directory of pages")
    p.add_argument("--vocab", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--overlay", type=Path)

    p = add("evaluate", cmd_evaluate, "Score predictions against ground truth.")
    p.add_argument("--pred", type=Path, required=True)
    p.add_argument("--truth", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--model-name", default="chargrid-net")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for k, v in vars(_common(lambda v: v).parse_args([])).items():
        if not hasattr(args, k):
            setattr(args, k, v)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    from threadpoolctl import threadpool_limits

    try:
        with threadpool_limits(limits=args.threads):
            args.func(args)
    except (ParseError, TemplateError, TrainingDiverged, ValueError, KeyError,
            FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"chargrid {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
