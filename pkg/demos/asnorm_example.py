"""Show what AS-Norm does to raw cosine scores on random embeddings.

Two speakers whose embeddings sit near a popular direction get high raw
scores against everyone.  Normalizing by each side's top-k cohort statistics
removes that offset.

    python3 demos/asnorm_example.py
"""
import numpy as np

from redimnet import metrics


def main():
    r = np.random.default_rng(0)
    dim = 32
    hub = r.standard_normal(dim)
    cohort = r.standard_normal((200, dim)) + 0.5 * hub
    emb = {f"s{i}": r.standard_normal(dim) for i in range(4)}
    emb["hub1"] = hub + 0.8 * r.standard_normal(dim)
    emb["hub2"] = hub + 0.8 * r.standard_normal(dim)
    trials = [metrics.Trial(0, "s0", "s1"), metrics.Trial(0, "s2", "s3"), metrics.Trial(0, "hub1", "hub2")]
    ss = metrics.score_trials(trials, emb, emb, cohort, topk=50)
    for t, raw, norm in zip(trials, ss.scores, ss.normalized):
        print(f"{t.enroll:>5} {t.test:>5}  raw {raw:+.3f}  as-norm {norm:+.3f}")


if __name__ == "__main__":
    main()
