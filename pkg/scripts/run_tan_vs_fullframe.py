"""Train the pixel classifier letterboxed and in the canonical space, then
compare both on held-out synthetic sequences."""

import argparse
import json

from tan.experiments import compare_tan_fullframe


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--train", type=int, default=40)
    p.add_argument("--test", type=int, default=20)
    p.add_argument("--frames", type=int, default=16)
    p.add_argument("--epochs", type=int, default=25)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out")
    a = p.parse_args()
    cmp = compare_tan_fullframe(a.train, a.test, a.frames, a.seed, a.epochs)
    doc = {"fullframe": cmp.fullframe, "tan": cmp.tan, "dice_gain_points": cmp.dice_gain, "seconds": cmp.seconds}
    text = json.dumps(doc, indent=1)
    print(text)
    if a.out:
        open(a.out, "w").write(text)


if __name__ == "__main__":
    main()
