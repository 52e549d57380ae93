"""Does the non-local graph help? Paired ablation on synthetic images.

Trains two copies of the micro network that differ only in k (0 = purely
local vs. k feature-space neighbors), with identical seeds and identical
evaluation noise, and prints the paired per-image PSNR table. The direction
of the difference is the experiment's output, not an assertion.

    python scripts/nonlocal_ablation.py --out runs/ablation --k 4
"""
import argparse
import os
import sys

from graphdn.data import save_image
from graphdn.evaluate import ablation_compare
from graphdn.graph import NlgConfig
from graphdn.model import NetworkConfig
from graphdn.synthetic import synthetic_image
from graphdn.training import TrainConfig


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/ablation", help="output directory")
    ap.add_argument("--k", type=int, default=4, help="non-local arm's neighbor count")
    ap.add_argument("--images", type=int, default=40)
    ap.add_argument("--epochs", type=int, default=5)
    ap.add_argument("--sigma", type=float, default=25.0)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if args.k < 1:
        ap.error("--k must be >= 1 (it is paired against k=0)")

    net = NetworkConfig(prepro_branch_channels=6, trunk_channels=18,
                        n_graph_stages=1, res_blocks_per_stage=2,
                        layers_per_res_block=2,
                        nlg=NlgConfig(k=args.k, window_radius=8, exclusion_radius=1),
                        seed=args.seed, dtype="float32")
    train = TrainConfig(sigma=args.sigma, epochs=args.epochs, batch_size=10,
                        patch_size=32, patch_stride=32, learning_rate=3e-3,
                        seed=args.seed)

    # the evaluator reads images from disk, so materialize the set once
    img_dir = os.path.join(args.out, "images")
    os.makedirs(img_dir, exist_ok=True)
    paths = []
    for i in range(args.images):
        p = os.path.join(img_dir, f"synth{i:03d}.pgm")
        save_image(synthetic_image(1000 + i, 32, 32), p)
        paths.append(p)

    report = ablation_compare(net, train, paths, args.out, k_values=(0, args.k),
                              eval_seed=args.seed,
                              log=lambda s: print(s, flush=True))
    tsv = report.to_tsv()
    print(tsv, end="")
    out_path = os.path.join(args.out, "ablation.tsv")
    with open(out_path, "w") as f:
        f.write(tsv)
    print(f"written to {out_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
