"""Train the toy network on a few synthetic invoices and score it on them.

    python demos/quickstart.py --pages 8 --iterations 500 --out runs/quickstart

Writes the checkpoint, predictions, an overlay of the first page and the
evaluation table under ``--out``.
"""

import argparse
from pathlib import Path

from threadpoolctl import threadpool_limits

from chargrid.evaluate import evaluate
from chargrid.grid import build_vocabulary
from chargrid.pipeline import Predictor, render_overlay
from chargrid.synth import SynthConfig, generate, write_dataset
from chargrid.train import OptimizerConfig, prepare_training_set, toy_config, train


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--pages", type=int, default=8)
    ap.add_argument("--iterations", type=int, default=500)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path, default=Path("runs/quickstart"))
    args = ap.parse_args()

    samples = generate(SynthConfig(seed=args.seed, n_pages=args.pages))
    write_dataset(samples, args.out / "data")
    pages = [p for p, _ in samples]
    cfg = toy_config(optimizer=OptimizerConfig(max_iterations=args.iterations))
    vocab = build_vocabulary(pages, cfg.network.n_vocab)

    def progress(state, row):
        if state.iteration % 50 == 0:
            print(f"iter {state.iteration:5d}  loss {row[4]:.4f}")

    with threadpool_limits(1):
        state, _ = train(prepare_training_set(pages, vocab, cfg), cfg, seed=args.seed,
                         out_dir=args.out / "ckpt", extra={"vocab": vocab.to_json()}, callback=progress)
        predictor = Predictor(state.net, vocab, state.cfg, state.loss_cfg.class_weights)
        preds = predictor.predict(pages)

    (args.out / "pred").mkdir(parents=True, exist_ok=True)
    for k, p in enumerate(preds):
        (args.out / "pred" / f"page_{k:04d}.json").write_text(p.result.dumps())
    render_overlay(predictor.inputs(pages[:1])[0], preds[0].seg_argmax, preds[0].boxes).save(
        args.out / "overlay_0000.png")
    print(evaluate([(p.result, t) for p, (_, t) in zip(preds, samples)]).table())


if __name__ == "__main__":
    main()
