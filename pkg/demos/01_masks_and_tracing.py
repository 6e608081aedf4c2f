#!/usr/bin/env python3
"""
Walk one synthetic frame through the non-learned half of the toolkit.

  step 1: render a synthetic ultrasound-like frame with its gold contour
  step 2: smear the contour into a Gaussian training mask
  step 3: trace the mask back into a 100-point contour
  step 4: score the trace with MSD and draw everything

No network is involved, so this runs in a couple of seconds and shows what
the model is asked to learn and how its output is read back.
"""
import argparse
import os

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from tonguetrack import (MaskConfig, PostprocessConfig, SyntheticConfig, contour_to_mask,
                         extract_contour, generate_synthetic, msd)
from tonguetrack.postprocess import binarize, skeletonize


def main(args):

    ## step 1: one frame, with a distractor edge and speckle
    ds = generate_synthetic(SyntheticConfig(n_frames=1, noise=args.noise, seed=args.seed))
    frame, gold = ds.frames[0], ds.contours[0]
    print("frame", frame.shape, "gold contour", gold.points.shape)

    ## step 2: training target
    mask = contour_to_mask(gold, MaskConfig(sigma=args.sigma, floor_threshold=0.4), 128, 128)
    print("mask support: %d pixels (%.1f%% of the frame)" % (np.count_nonzero(mask), 100 * np.mean(mask > 0)))

    ## step 3: threshold -> thin -> column means -> spline
    pp = PostprocessConfig(threshold=0.5)
    skeleton = skeletonize(binarize(mask, pp.threshold))
    traced = extract_contour(mask, pp)

    ## step 4: how far did the round trip drift?
    print("round-trip MSD: %.3f px (%.3f mm at 4 px/mm)" % (msd(traced, gold), msd(traced, gold) / 4))

    fig, ax = plt.subplots(1, 3, figsize=(11, 4))
    ax[0].imshow(frame, cmap="gray")
    ax[0].plot(gold.x, gold.y, "y-", lw=1)
    ax[0].set_title("frame + gold")
    ax[1].imshow(mask, cmap="magma")
    ax[1].set_title("mask, sigma=%g" % args.sigma)
    ax[2].imshow(skeleton, cmap="gray")
    ax[2].plot(traced.x, traced.y, "r-", lw=1)
    ax[2].set_title("skeleton + traced")
    for a in ax:
        a.axis("off")
    fig.tight_layout()
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "masks_and_tracing.png")
    fig.savefig(path, dpi=100)
    print("wrote", path)


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__.strip().splitlines()[0])
    parser.add_argument("--out", default="demo_out")
    parser.add_argument("--sigma", type=float, default=4.0)
    parser.add_argument("--noise", type=float, default=0.4)
    parser.add_argument("--seed", type=int, default=0)
    main(parser.parse_args())
