"""Mean OSCR of CE, LS and ALS across split seeds, one row per score function.

    python3 scripts/compare_regimes.py            # configs/{ce,ls,als}.cfg
    python3 scripts/compare_regimes.py --metric auroc --scores msp energy vim
"""

import argparse
import time
from pathlib import Path

from oodlab.harness import load_config, run_experiment

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--configs", nargs=3, default=[str(CONFIGS / f"{n}.cfg") for n in ("ce", "ls", "als")],
                    metavar=("CE", "LS", "ALS"))
    ap.add_argument("--metric", default="oscr", choices=["accuracy", "auroc", "fpr95", "oscr"])
    ap.add_argument("--scores", nargs="+", default=["msp", "entropy", "max_logit", "energy"])
    args = ap.parse_args()

    table = {}
    for label, path in zip(("ce", "ls", "als"), args.configs):
        t = time.perf_counter()
        cfg = load_config(path).replace(scores=tuple(args.scores))
        report = run_experiment(cfg, save=False)
        table[label] = report.summary()
        note = f" (diverged: {report.diverged_seeds})" if report.partial else ""
        print(f"{label}: {len(cfg.split_seeds)} splits in {time.perf_counter() - t:.1f}s{note}")

    print(f"\n{'score':10s} {'ce':>16s} {'ls':>16s} {'als':>16s}  als>ls  als>=ce")
    for s in args.scores:
        cells = [table[r][s][args.metric] for r in ("ce", "ls", "als")]
        text = " ".join(f"{m:.4f} ± {sd:.4f}".rjust(16) for m, sd in cells)
        ce, ls, als = (c[0] for c in cells)
        print(f"{s:10s} {text}  {str(als > ls):>6s}  {str(als >= ce):>7s}")


if __name__ == "__main__":
    main()
