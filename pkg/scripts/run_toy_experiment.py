"""Run the headline comparison: full pipeline vs visual-only pretraining vs
symmetric weak+weak augmentation, 5 seeds, plus the attention ablation.

Writes a JSON report next to stdout output. Expect roughly 15 minutes for
the headline block and a few more for the ablation on a single CPU.
"""
import argparse
import json
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from topofuse.train import (
    ablation_config,
    attention_ablation,
    headline_config,
    headline_experiment,
)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="toy_experiment.json")
    parser.add_argument("--seeds", type=int, default=5)
    parser.add_argument("--skip-ablation", action="store_true")
    args = parser.parse_args()

    seeds = tuple(range(args.seeds))
    t0 = time.perf_counter()
    rep = headline_experiment(headline_config(), seeds=seeds, verbose=True)
    headline_elapsed = time.perf_counter() - t0
    tt = rep["ttest_vs_visual"]
    print(f"\nheadline ({headline_elapsed:.0f}s):")
    print("  means:", {k: round(v, 4) for k, v in rep["means"].items()})
    print(f"  margin vs visual-only: {rep['margin_vs_visual']:+.4f} (p={tt.p:.4f})")
    print(f"  margin vs weak+weak:   {rep['margin_vs_weak_weak']:+.4f}")

    payload = {
        "headline": {
            "per_seed": rep["per_seed"],
            "means": rep["means"],
            "margin_vs_visual": rep["margin_vs_visual"],
            "margin_vs_weak_weak": rep["margin_vs_weak_weak"],
            "p_vs_visual": tt.p,
            "elapsed_s": headline_elapsed,
        }
    }
    if not args.skip_ablation:
        t1 = time.perf_counter()
        ab = attention_ablation(ablation_config(), seeds=seeds, verbose=True)
        print(f"\nablation ({time.perf_counter() - t1:.0f}s):")
        print(f"  cross-attention removal worse in {ab['cross_worse_count']}/"
              f"{ab['n_seeds']} seeds")
        payload["ablation"] = ab
    Path(args.out).write_text(json.dumps(payload, indent=2, default=str) + "\n")
    print(f"\nreport written to {args.out}")


if __name__ == "__main__":
    main()
