"""Stacking and encoder ablations on the synthetic task (desk preset).

    python3 scripts/run_ablation.py --seeds 0 1 2 3 4 --out runs/ablation.json
"""
import argparse
import logging

from gmavqa.ablation import ENCODER_VARIANTS, STACK_VARIANTS, run_ablation, save_results, summarize
from gmavqa.config import DESK, config_from_dict


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--which", choices=["stack", "encoder", "both"], default="both")
    ap.add_argument("--set", nargs="*", default=[], metavar="KEY=VALUE", help="override desk-preset keys")
    ap.add_argument("--out", default="ablation.json")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    base = config_from_dict(dict(kv.split("=", 1) for kv in args.set), DESK)
    variants = []
    if args.which in ("stack", "both"):
        variants += STACK_VARIANTS
    if args.which in ("encoder", "both"):
        variants += ENCODER_VARIANTS[1:] if args.which == "both" else ENCODER_VARIANTS
    results = run_ablation(variants, args.seeds, base)
    if args.which == "both":
        results["dual"] = results["GMA-3"]
    save_results(args.out, results)
    print(summarize(results))


if __name__ == "__main__":
    main()
