"""
Serving shorter codes from one long code
========================================

A single 32-bit model is trained once.  Shorter codes keep the bits with
the largest learned weights; this script compares that choice against
random subsets of the same size.
"""

import numpy as np

from bsdh.data import synthetic_clusters
from bsdh.index import CodeDatabase, pack_codes, sign_bits
from bsdh.metrics import RelevanceJudge, mean_average_precision
from bsdh.trainer import TrainConfig, train

data = synthetic_clusters(5, 200, 16, sigma=0.33, seed=0)
train_set, held_out = data.split(40, seed=0)
judge = RelevanceJudge.from_dataset(held_out)

model, _ = train(TrainConfig(iterations=500, k_hat=5, o_hat=20, code_length=32, seed=0), train_set)
bits = sign_bits(model.features(held_out.x))
w = model.bit_weights
db = CodeDatabase.build(w, pack_codes(bits), held_out.ids)


def loo_map(codes, database, k_bits=None):
    return mean_average_precision(codes, held_out.ids, database, judge, k_bits=k_bits, leave_one_out=True)


rng = np.random.default_rng(0)
print(" k  top-k weighted  random subsets (mean of 20)")
for k in (4, 8, 16, 24, 32):
    top = loo_map(pack_codes(bits), db, k)
    rand = []
    for _ in range(20):
        subset = np.sort(rng.choice(32, k, replace=False))
        sub = pack_codes(bits[:, subset])
        rand.append(loo_map(sub, CodeDatabase.build(w[subset], sub, held_out.ids)))
    print("%2d  %.3f           %.3f" % (k, top, np.mean(rand)))

# truncating a database keeps the same top bits and drops the rest
short = db.truncate(16)
print("truncated database: q=%d, %d bytes per code" % (short.q, short.codes.shape[1]))
