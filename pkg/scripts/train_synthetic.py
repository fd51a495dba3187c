"""Train GMA on the synthetic task and report train/val accuracy per epoch.

    python3 scripts/train_synthetic.py --out runs/desk
    python3 scripts/train_synthetic.py --set n_stack=1 seed=3 --out runs/gma1
"""
import argparse
import json
import logging

from gmavqa.config import DESK, config_from_dict
from gmavqa.train import train


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--set", nargs="*", default=[], metavar="KEY=VALUE", help="override desk-preset keys")
    ap.add_argument("--out", default=None, help="directory for metrics.jsonl and checkpoint.gma")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    cfg = config_from_dict(dict(kv.split("=", 1) for kv in args.set), DESK)
    result = train(cfg, out_dir=args.out)
    best_train = max(m.get("train_acc", 0.0) for m in result.metrics)
    print(json.dumps({"epochs": len(result.metrics), "best_train_acc": best_train,
                      "last": result.metrics[-1]}, indent=1, sort_keys=True))


if __name__ == "__main__":
    main()
