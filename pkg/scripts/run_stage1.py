"""Stage-I pre-training on the seeded acceptance corpus; prints the eval-loss curve."""
import argparse
import time

from talkstyle.experiments import acceptance_corpus, run_stage1, stage1_config


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out", help="checkpoint directory (loss.csv is written inside)")
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--corpus-seed", type=int, default=7)
    args = ap.parse_args()
    corpus = acceptance_corpus(args.corpus_seed)
    t0 = time.perf_counter()
    res = run_stage1(corpus, args.out, stage1_config(max_steps=args.steps, seed=args.seed))
    evals = [(r["step"], r["eval_loss"]) for r in res.history if r["eval_loss"] != ""]
    for step, loss in evals:
        print(f"step {step:6d}  eval_loss {loss:.4f}")
    print(f"ratio {evals[-1][1] / evals[0][1]:.3f}  time {time.perf_counter() - t0:.0f}s  -> {res.checkpoint}")


if __name__ == "__main__":
    main()
