"""Render one synthetic page as a chargrid image and its segmentation targets.

    python demos/show_chargrid.py --seed 3 --out chargrid.png
"""

import argparse

import numpy as np
from PIL import Image

from chargrid.grid import build_chargrid, build_vocabulary
from chargrid.pipeline import CLASS_COLORS
from chargrid.synth import SynthConfig, generate
from chargrid.targets import rasterize_segmentation


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--h", type=int, default=336)
    ap.add_argument("--w", type=int, default=256)
    ap.add_argument("--out", default="chargrid.png")
    args = ap.parse_args()

    (page, truth), = generate(SynthConfig(seed=args.seed, n_pages=1))
    vocab = build_vocabulary([page], 54)
    grid = build_chargrid(page, vocab, args.h, args.w)
    labels = rasterize_segmentation(page, args.h, args.w)

    # left: character indices as grey levels; right: target classes
    grey = np.where(grid > 0, 40 + (grid * 4) % 200, 255).astype(np.uint8)
    left = np.repeat(grey[..., None], 3, axis=2)
    right = CLASS_COLORS[labels]
    right[(grid > 0) & (labels == 0)] = (90, 90, 90)
    img = np.concatenate([left, np.full((args.h, 4, 3), 0, np.uint8), right], axis=1)
    Image.fromarray(img).resize((img.shape[1] * 3, img.shape[0] * 3), Image.NEAREST).save(args.out)
    print(f"{args.out}: {len(page.chars)} characters, {len(truth.line_items)} line items")


if __name__ == "__main__":
    main()
