"""How each loss regime shapes the trained model's confidence.

Trains on one split and reports mean max-probability, mean max-logit and the
NMPC std (spread of the non-max probabilities) over correctly classified train
samples.

    python3 scripts/prob_scale.py --seed 2
"""

import argparse
from pathlib import Path

import numpy as np

from oodlab.harness import load_config, split_for_seed, train
from oodlab.losses import nmpc_penalty
from oodlab.model import predict_arrays

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

RUNS = [
    ("ce", {}),
    ("ls", {"alpha": 0.1}),
    ("ls", {"alpha": 0.3}),
    ("als", {"lam": 5.0, "strategy": "only_corr"}),
    ("als", {"lam": 5.0, "strategy": "ramp_all", "ramp_epochs": 50}),
]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=0, help="split seed")
    ap.add_argument("--epochs", type=int, default=None)
    args = ap.parse_args()

    print(f"{'run':46s} {'train acc':>9s} {'max-prob':>9s} {'max-logit':>9s} {'nmpc':>9s}")
    for loss, kw in RUNS:
        cfg = load_config(CONFIGS / f"{loss}.cfg").replace(**kw)
        if args.epochs is not None:
            cfg = cfg.replace(epochs=args.epochs)
        split = split_for_seed(cfg, args.seed)
        params, record = train(cfg, split)
        label = loss + "".join(f" {k}={v}" for k, v in kw.items())
        if params is None:
            print(f"{label:46s} diverged")
            continue
        _, logits, probs = predict_arrays(params, split.train_known.inputs)
        correct = probs.argmax(1) == split.train_known.labels
        nmpc = np.mean([nmpc_penalty(p) for p in probs[correct]]) if correct.any() else float("nan")
        print(f"{label:46s} {record.train_accuracy:9.4f} {probs.max(1).mean():9.4f} "
              f"{logits.max(1).mean():9.3f} {nmpc:9.2e}")


if __name__ == "__main__":
    main()
