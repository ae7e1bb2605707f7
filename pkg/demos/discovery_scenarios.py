"""The three things that can happen to an unlabeled point.

One labeled class sits at the origin. A batch of unlabeled points is
placed (a) on top of it, (b) one class-width away, (c) far out. The same
run settings then produce the three outcome kinds: standard
classification, component discovery inside the known class, and a new
class.
"""

import numpy as np

from nelmix.engine import NELConfig, run_nel


def scenario(offset, seed=1):
    rng = np.random.default_rng(42)
    lab = rng.normal(0, 0.25, (24, 2))
    unl = rng.normal(0, 0.25, (8, 2)) + np.asarray(offset)
    X = np.vstack([lab, unl])
    labels = np.array([0] * 24 + [-1] * 8, dtype=np.int64)
    cfg = NELConfig(variant="i2gmm", sweeps=60, preinference_sweeps=20, seed=seed)
    return run_nel(X, labels, cfg)


def main():
    for offset, blurb in [
        ((0.0, 0.0), "unlabeled batch inside the labeled class"),
        ((1.3, 0.0), "batch adjacent to it, same scale"),
        ((25.0, 25.0), "batch far away"),
    ]:
        res = scenario(offset)
        kinds = sorted(set(res.outcome[24:].tolist()))
        print(f"offset {offset}: {blurb}")
        print(f"  outcome kinds: {kinds}")
        print(f"  classes={res.n_classes} components={res.n_components}\n")


if __name__ == "__main__":
    main()
