"""Write a directory of seeded synthetic PGM images plus a manifest file.

The manifest (one relative path per line, # comments allowed) is what the
CLI's train/eval subcommands consume, so this is the quickest way to get a
self-contained dataset:

    python scripts/make_synthetic_set.py data/train --count 500 --size 32
    python scripts/make_synthetic_set.py data/test --count 24 --size 96 --seed 7
"""
import argparse
import os
import sys

from graphdn.data import save_image
from graphdn.synthetic import synthetic_images


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out_dir")
    ap.add_argument("--count", type=int, default=100)
    ap.add_argument("--size", type=int, default=96, help="square image extent")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--manifest", default="manifest.txt",
                    help="manifest filename inside out_dir")
    args = ap.parse_args(argv)

    os.makedirs(args.out_dir, exist_ok=True)
    names = []
    for img in synthetic_images(args.seed, args.count, args.size, args.size):
        fname = f"{img.name}.pgm"
        save_image(img, os.path.join(args.out_dir, fname))
        names.append(fname)

    manifest = os.path.join(args.out_dir, args.manifest)
    with open(manifest, "w") as f:
        f.write(f"# {args.count} synthetic images, seed {args.seed}, "
                f"{args.size}x{args.size}\n")
        f.writelines(n + "\n" for n in names)
    print(f"{args.count} images and {manifest} written")
    return 0


if __name__ == "__main__":
    sys.exit(main())
