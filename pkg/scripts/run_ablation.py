"""Stage-II loss-term and Laplacian ablations from one stage-I checkpoint.

Writes one CSV row per (variant, lambda, seed) with the test-split metrics
and the mean per-frame Laplacian energy of the predictions.
"""
import argparse
import csv
import os

from talkstyle.experiments import VARIANTS, acceptance_corpus, evaluate_split, run_stage2, stage2_config
from talkstyle.losses import METRIC_COLUMNS


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("stage1", help="stage-1 checkpoint directory")
    ap.add_argument("out", help="directory for stage-2 checkpoints and results.csv")
    ap.add_argument("--variants", nargs="+", default=["ver_only", "wei_ver_lmk"], choices=sorted(VARIANTS))
    ap.add_argument("--lambdas", nargs="+", type=float, default=[0.0, 1.0])
    ap.add_argument("--seeds", nargs="+", type=int, default=[0, 1, 2])
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--tik", type=float, default=0.0, help="Tikhonov weight (ablation baseline)")
    args = ap.parse_args()
    corpus = acceptance_corpus()
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "results.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variant", "lambda_lap", "seed", *METRIC_COLUMNS, "lap_full"])
        for variant in args.variants:
            for lam in args.lambdas:
                for seed in args.seeds:
                    cfg = stage2_config(variant, lam, seed=seed, max_steps=args.steps, lambda_tik=args.tik)
                    run = run_stage2(corpus, args.stage1, os.path.join(args.out, f"{variant}_lam{lam:g}_s{seed}"), cfg)
                    rep = evaluate_split(run.model, corpus, cfg)
                    row = [variant, lam, seed, *(rep.metrics[c] for c in METRIC_COLUMNS), rep.lap_full]
                    w.writerow(row)
                    fh.flush()
                    print(" ".join(str(round(v, 5)) if isinstance(v, float) else str(v) for v in row))
    print(path)


if __name__ == "__main__":
    main()
