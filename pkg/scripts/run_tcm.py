"""Temporal-coherence finetuning: SI and Dice before/after, optionally swept
over learning rates and with OHEM on or off."""

import argparse
import json
import time

from tan.analyzer import TcmStats, tcm_finetune
from tan.experiments import evaluate_model, make_videos, tcm_pairs, train_model


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--train", type=int, default=40)
    p.add_argument("--test", type=int, default=20)
    p.add_argument("--frames", type=int, default=16)
    p.add_argument("--epochs", type=int, default=25)
    p.add_argument("--seed", type=int, default=11)
    p.add_argument("--lr", type=float, nargs="+", default=[0.2])
    p.add_argument("--tcm-epochs", type=int, default=1)
    p.add_argument("--no-ohem", action="store_true", help="also run every lr with OHEM off")
    p.add_argument("--out")
    a = p.parse_args()

    t0 = time.perf_counter()
    train = make_videos(a.train, a.seed, a.frames)
    test = make_videos(a.test, a.seed + 1000, a.frames)
    model = train_model(train, "tan", epochs=a.epochs, seed=a.seed)
    _, before = evaluate_model(model, model.template, test, "tan")
    pairs = tcm_pairs(train, model.template)
    rows = []
    for ohem in ([True, False] if a.no_ohem else [True]):
        for lr in a.lr:
            stats = TcmStats()
            tuned = tcm_finetune(model, pairs, lr=lr, epochs=a.tcm_epochs, ohem=ohem, stats=stats, seed=a.seed)
            _, after = evaluate_model(tuned, tuned.template, test, "tan")
            row = {"lr": lr, "ohem": ohem, "si": after["si"], "dice_mean": after["dice_mean"],
                   "si_reduction": 1 - after["si"] / before["si"],
                   "dice_drop_points": 100 * (before["dice_mean"] - after["dice_mean"]),
                   "pairs_used": stats.used, "pairs_gated": stats.gated}
            rows.append(row)
            print(json.dumps(row))
    doc = {"before": before, "runs": rows, "seconds": time.perf_counter() - t0}
    if a.out:
        open(a.out, "w").write(json.dumps(doc, indent=1))
    print(json.dumps({"before_si": before["si"], "before_dice": before["dice_mean"], "seconds": doc["seconds"]}))


if __name__ == "__main__":
    main()
