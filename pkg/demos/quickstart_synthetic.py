"""
Quickstart: hashing Gaussian clusters
=====================================

Train a small fully connected hashing model on synthetic clusters, encode
a held-out set into 16-bit codes and rank it with the lookup-table engine.
Runs in about 15 seconds.
"""

import numpy as np

from bsdh.data import synthetic_clusters
from bsdh.index import CodeDatabase, encode, query_lut, unpack_codes
from bsdh.metrics import RelevanceJudge, evaluate
from bsdh.trainer import TrainConfig, train

# five classes of 200 points in 16 dimensions; 40 per class are held out
data = synthetic_clusters(5, 200, 16, sigma=0.25, seed=0)
train_set, held_out = data.split(40, seed=0)

config = TrainConfig(iterations=500, k_hat=5, o_hat=20, preset="mlp", code_length=16, seed=0)
model, history = train(config, train_set)
print("loss: first %.4f  last %.4f" % (history.records[0].loss, history.records[-1].loss))

# codes are the signs of the pre-activations; weights come from the last layer
codes = encode(model, held_out.x)
db = CodeDatabase.build(model.bit_weights, codes, held_out.ids)
print("first code:", unpack_codes(codes[:1], 16)[0])
print("w^2 by bit:", np.round(model.bit_weights ** 2, 3))

# the five nearest neighbours of item 0 (itself included)
ranking = query_lut(db, codes[0], top_k=5)
print("item 0 label", held_out.labels[0], "neighbours", ranking.ids, "labels",
      held_out.labels[np.searchsorted(held_out.ids, ranking.ids)])

# each held-out point queries the others
report = evaluate(codes, held_out.ids, db, RelevanceJudge.from_dataset(held_out), leave_one_out=True)
print("leave-one-out MAP %.3f, precision@10 %.3f, HAM2 %.3f"
      % (report.map, report.precision_at_k[10], report.ham2_precision))
