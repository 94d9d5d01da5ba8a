"""Retrieval metrics: MAP, precision@k, HAM2 and CMC."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DataError
from .index import bruteforce_affinities, hamming_distances, lut_affinities


class RelevanceJudge:
    """Ground truth keyed by item id.

    ``mode="class"``: relevant iff labels are equal.  ``mode="shared-tag"``:
    relevant iff the tag sets intersect.
    """

    def __init__(self, ids, labels, mode="class"):
        if mode not in ("class", "shared-tag"):
            raise DataError(f"unknown judge mode {mode!r}")
        ids = np.asarray(ids, dtype=np.int64)
        order = np.argsort(ids)
        self.ids = ids[order]
        self.mode = mode
        labels = [labels[i] for i in order]
        if mode == "class":
            if any(isinstance(lab, (set, frozenset, list, tuple)) for lab in labels):
                raise DataError("class judge needs one label per item, got tag sets")
            self.labels = np.asarray(labels)
        else:
            sets = [frozenset(lab) if isinstance(lab, (set, frozenset, list, tuple)) else frozenset([lab])
                    for lab in labels]
            vocab = sorted(set().union(*sets), key=repr)
            col = {t: i for i, t in enumerate(vocab)}
            self.tags = np.zeros((len(sets), len(vocab)), dtype=bool)
            for r, s in enumerate(sets):
                self.tags[r, [col[t] for t in s]] = True

    @classmethod
    def from_dataset(cls, dataset, mode=None):
        mode = mode or ("shared-tag" if dataset.multi_label else "class")
        labels = dataset.labels if dataset.multi_label else list(dataset.labels)
        return cls(dataset.ids, labels, mode)

    def _pos(self, ids):
        ids = np.asarray(ids, dtype=np.int64)
        pos = np.searchsorted(self.ids, ids)
        if np.any(pos >= len(self.ids)) or np.any(self.ids[np.minimum(pos, len(self.ids) - 1)] != ids):
            raise DataError("item id without ground truth")
        return pos

    def relevant(self, query_id, item_ids):
        qp = self._pos([query_id])[0]
        ip = self._pos(item_ids)
        if self.mode == "class":
            return self.labels[ip] == self.labels[qp]
        return np.any(self.tags[ip] & self.tags[qp], axis=1)


def average_precision(relevance, cutoff=None, n_relevant=None):
    """AP of a ranked 0/1 relevance list.

    Precision is accumulated at every relevant rank up to ``cutoff`` and
    divided by the number of relevant candidates (``n_relevant``, default:
    all relevant entries of the list).  No relevant candidate gives 0.
    """
    rel = np.asarray(relevance, dtype=bool)
    total = int(rel.sum()) if n_relevant is None else int(n_relevant)
    if total == 0:
        return 0.0
    head = rel[:cutoff] if cutoff is not None else rel
    hits = np.cumsum(head)
    ranks = np.arange(1, head.size + 1)
    return float(np.sum((hits / ranks)[head]) / total)


def precision_at_k(relevance, k):
    """Relevant fraction of the top ``k``; missing positions count as misses."""
    if k < 1:
        raise DataError("k must be >= 1")
    return float(np.sum(np.asarray(relevance[:k], dtype=bool)) / k)


def cmc(first_hit_ranks, n):
    """Cumulative match curve from 1-based first-hit ranks; entry r-1 is CMC[r]."""
    ranks = np.asarray(first_hit_ranks)
    if ranks.size == 0:
        raise DataError("no queries")
    return np.array([np.mean(ranks <= r) for r in range(1, n + 1)])


def first_hit_rank(relevance):
    hits = np.flatnonzero(relevance)
    if hits.size == 0:
        raise DataError("query has no relevant item in the database")
    return int(hits[0]) + 1


@dataclass
class QueryResult:
    """Ranked relevance of one query plus its Hamming-ball outcome."""

    relevance: np.ndarray
    ham2: float


def run_queries(query_codes, query_ids, db, judge, k_bits=None, leave_one_out=False,
                engine="lut", radius=2):
    """Rank ``db`` for every query; yields :class:`QueryResult` in query order.

    In leave-one-out mode the database entry with the query's own id is
    removed from its candidate set.
    """
    k_bits = db.q if k_bits is None else k_bits
    if engine not in ("lut", "bruteforce"):
        raise DataError(f"unknown engine {engine!r}")
    score = lut_affinities if engine == "lut" else bruteforce_affinities
    if len(query_ids) == 0:
        raise DataError("empty query set")
    for code, qid in zip(query_codes, query_ids):
        pq = db.prepare_query(code)
        aff, _ = score(db, pq, k_bits)
        dist = hamming_distances(db, pq, k_bits)
        keep = db.ids != qid if leave_one_out else np.ones(db.n, dtype=bool)
        ids, aff, dist = db.ids[keep], aff[keep], dist[keep]
        order = np.lexsort((ids, aff))
        rel = judge.relevant(qid, ids[order])
        ball = dist <= radius
        ham2 = float(np.mean(judge.relevant(qid, ids[ball]))) if ball.any() else 0.0
        yield QueryResult(rel, ham2)


def ham2_precision(query_code, query_id, db, judge, k_bits=None, leave_one_out=False, radius=2):
    """Precision inside the unweighted Hamming ball of radius 2; empty ball gives 0."""
    (res,) = run_queries([query_code], [query_id], db, judge, k_bits, leave_one_out, radius=radius)
    return res.ham2


def mean_average_precision(query_codes, query_ids, db, judge, k_bits=None, cutoff=None,
                           leave_one_out=False, engine="lut"):
    aps = [average_precision(r.relevance, cutoff)
           for r in run_queries(query_codes, query_ids, db, judge, k_bits, leave_one_out, engine)]
    return float(np.mean(aps))


DEFAULT_PRECISION_KS = (1, 5, 10, 20, 50, 100, 200, 500, 1000)


@dataclass
class MetricReport:
    bits: int
    n_queries: int
    map: float
    precision_at_500: float
    ham2_precision: float
    precision_at_k: dict = field(default_factory=dict)
    cmc: list | None = None

    def to_json_line(self):
        d = asdict(self)
        d["precision_at_k"] = {str(k): v for k, v in self.precision_at_k.items()}
        return json.dumps(d, sort_keys=True)

    def row(self):
        return {"bits": self.bits, "n_queries": self.n_queries, "map": self.map,
                "precision_at_500": self.precision_at_500, "ham2": self.ham2_precision}


def evaluate(query_codes, query_ids, db, judge, k_bits=None, cutoff=None, leave_one_out=False,
             engine="lut", ks=DEFAULT_PRECISION_KS, with_cmc=False, cmc_depth=None):
    k_bits = db.q if k_bits is None else k_bits
    aps, p500, ham2, pk, first = [], [], [], {k: [] for k in ks}, []
    for r in run_queries(query_codes, query_ids, db, judge, k_bits, leave_one_out, engine):
        aps.append(average_precision(r.relevance, cutoff))
        p500.append(precision_at_k(r.relevance, 500))
        ham2.append(r.ham2)
        for k in ks:
            pk[k].append(precision_at_k(r.relevance, k))
        if with_cmc:
            first.append(first_hit_rank(r.relevance))
    curve = None
    if with_cmc:
        depth = cmc_depth or db.n
        curve = cmc(first, depth).tolist()
    return MetricReport(
        bits=k_bits,
        n_queries=len(aps),
        map=float(np.mean(aps)),
        precision_at_500=float(np.mean(p500)),
        ham2_precision=float(np.mean(ham2)),
        precision_at_k={k: float(np.mean(v)) for k, v in pk.items()},
        cmc=curve,
    )


def write_reports_csv(reports, path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["bits", "n_queries", "map", "precision_at_500", "ham2"])
        w.writeheader()
        for rep in reports:
            w.writerow(rep.row())


def write_reports_jsonl(reports, path):
    with open(path, "w") as fh:
        for rep in reports:
            fh.write(rep.to_json_line() + "\n")


def write_precision_curve(report, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "precision"])
        for k, v in sorted(report.precision_at_k.items()):
            w.writerow([k, repr(v)])
