"""
Chunked lookup tables versus direct evaluation
==============================================

Builds a random 64-bit database and times both search engines.  They agree
exactly because both sum the same fixed-point integer weights.
"""

import time

import numpy as np

from bsdh.index import CodeDatabase, pack_codes, query_bruteforce, query_lut

rng = np.random.default_rng(0)
q, n = 64, 200_000
db = CodeDatabase.build(rng.normal(size=q), pack_codes(rng.random((n, q)) < 0.5))
query = pack_codes(rng.random((1, q)) < 0.5)[0]

for k in (16, 32, 64):
    t0 = time.perf_counter()
    a = query_lut(db, query, k_bits=k, top_k=10)
    t1 = time.perf_counter()
    b = query_bruteforce(db, query, k_bits=k, top_k=10)
    t2 = time.perf_counter()
    print("%2d bits: lut %.3f s, brute force %.3f s, identical: %s" % (k, t1 - t0, t2 - t1, a == b))

# one table per 8-bit chunk, 256 entries each
print("tables for 20 bits:", db.lut(20).tables.shape)
