"""
Digits with the small convolutional preset
==========================================

Trains the ``desk`` preset (one conv block, one hidden layer) on the
5000-image digit subset shipped with the tests and scores the 1000 query
images against the training codes.  Pass an iteration count as the first
argument; 2000 iterations take a few minutes on one core.
"""

import sys
import time
from pathlib import Path

import numpy as np

from bsdh.data import load_idx
from bsdh.index import CodeDatabase, encode
from bsdh.metrics import RelevanceJudge, evaluate
from bsdh.trainer import TrainConfig, train

iterations = int(sys.argv[1]) if len(sys.argv) > 1 else 2000
root = Path(__file__).resolve().parent.parent / "tests" / "data" / "mnist"


def pair(prefix):
    return load_idx(root / f"{prefix}-images-idx3-ubyte.gz", root / f"{prefix}-labels-idx1-ubyte.gz")


train_set, queries = pair("train"), pair("query")
queries.ids = queries.ids + len(train_set)  # keep ids unique across the two sets

# lam=1e-4: with the per-batch mean margin, 1e-3 lets the regularizer
# dominate and the codes collapse
config = TrainConfig(iterations=iterations, k_hat=10, o_hat=20, triplet_budget=20_000,
                     preset="desk", code_length=16, lam=1e-4, seed=0)


def progress(it, model, terms):
    if (it + 1) % max(1, iterations // 10) == 0:
        print("iter %5d  beta %7.1f  loss %.4f  active %.2f" % (it + 1, model.beta, terms.total, terms.active_frac))


start = time.perf_counter()
model, _ = train(config, train_set, callback=progress)
print("trained in %.0f s" % (time.perf_counter() - start))

db = CodeDatabase.build(model.bit_weights, encode(model, train_set.x), train_set.ids)
judge = RelevanceJudge(np.r_[train_set.ids, queries.ids], [*train_set.labels, *queries.labels])
for k in (8, 12, 16):
    r = evaluate(encode(model, queries.x), queries.ids, db, judge, k_bits=k)
    print("%2d bits: MAP %.3f  precision@500 %.3f  HAM2 %.3f" % (k, r.map, r.precision_at_500, r.ham2_precision))
