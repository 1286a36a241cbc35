"""Writes the seeded standard-normal embedding fixture used by the synthetic tests.

    python3 make_embeddings.py --n 500 --d 32 --seed 7 --out embeddings_500x32.bin
"""

import argparse
import json

import numpy as np


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=500)
    ap.add_argument("--d", type=int, default=32)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--out", default="embeddings_500x32.bin")
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    rows = rng.standard_normal((args.n, args.d)).astype("<f4")
    header = {
        "n": args.n,
        "d": args.d,
        "dtype": "f32",
        "order": "row-major",
        "ids": [f"s{i:03d}" for i in range(args.n)],
        "encoder_id": f"random-normal:seed={args.seed}",
        "max_len": 0,
    }
    with open(args.out, "wb") as f:
        f.write(json.dumps(header, separators=(",", ":")).encode("utf-8"))
        f.write(b"\n")
        f.write(rows.tobytes(order="C"))


if __name__ == "__main__":
    main()
