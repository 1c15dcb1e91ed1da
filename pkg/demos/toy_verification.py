"""Train a small model on the synthetic speaker corpus and score held-out trials.

This is a shortened version of the acceptance run (fewer speakers and epochs),
done in-process with the library API instead of the CLI.  It takes a couple of
minutes on one core.

    python3 demos/toy_verification.py [--epochs 8]
"""
import argparse
import itertools
from dataclasses import replace

import numpy as np

from redimnet import metrics
from redimnet.config import load
from redimnet.features import batch_features
from redimnet.model import build
from redimnet.toy import make_toy_corpus
from redimnet.train import smoothed, train


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--speakers", type=int, default=8)
    ap.add_argument("--epochs", type=int, default=8)
    args = ap.parse_args()

    run = load("toy")
    cfg = replace(run.train, epochs=args.epochs, warmup_epochs=2, margin_hold=2, margin_ramp=3)
    corpus = make_toy_corpus(args.speakers, 10, 2.0, seed=0, heldout=4)
    model = build(run.model)
    res = train(model, corpus, cfg, run.loss, epoch_fn=lambda s: print(
        f"epoch {s['epoch']:2d} loss {s['loss']:.4f} lr {s['lr']:.4g} margin {s['margin']:.3f}"))

    loss = smoothed([r["loss"] for r in res.log], 10)
    print(f"smoothed loss {loss[0]:.3f} -> {loss[-1]:.3f}")

    emb = res.model.embed(batch_features(list(corpus.heldout_waves)))
    store = dict(zip(corpus.heldout_ids, emb))
    lab = corpus.heldout_labels
    ids = corpus.heldout_ids
    trials = [metrics.Trial(int(lab[i] == lab[j]), ids[i], ids[j])
              for i, j in itertools.combinations(range(len(ids)), 2)]
    ss = metrics.score_trials(trials, store, store)
    print(f"held-out EER {100 * metrics.eer(ss):.2f}%  minDCF {metrics.min_dcf(ss):.4f}")
    tar = np.array([t.label for t in trials]) == 1
    print(f"mean cosine: same speaker {ss.scores[tar].mean():.3f}, different {ss.scores[~tar].mean():.3f}")


if __name__ == "__main__":
    main()
