"""Style-vector clustering and Stage-I -> Stage-II displacement for two checkpoints."""
import argparse

import numpy as np
from scipy import stats

from talkstyle.checkpoint import load_checkpoint
from talkstyle.experiments import acceptance_corpus, style_vectors, within_between


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("stage1")
    ap.add_argument("stage2")
    ap.add_argument("--n", type=int, default=40, help="sequences used for the displacement test")
    args = ap.parse_args()
    corpus = acceptance_corpus()
    labels = [s.speaker for s in corpus.sequences]
    vecs = {}
    for name, path in (("stage1", args.stage1), ("stage2", args.stage2)):
        model, cfg, _ = load_checkpoint(path)
        vecs[name] = style_vectors(model, corpus.sequences, cfg)
        within, between = within_between(vecs[name], labels)
        print(f"{name}: cosine within {within:.4f}  between {between:.4f}")
    disp = np.linalg.norm(vecs["stage2"][:args.n] - vecs["stage1"][:args.n], axis=1)
    p = stats.ttest_1samp(disp, 0.0, alternative="greater").pvalue
    print(f"displacement over {args.n}: mean {disp.mean():.4f} sd {disp.std(ddof=1):.4f} p {p:.2e}")


if __name__ == "__main__":
    main()
