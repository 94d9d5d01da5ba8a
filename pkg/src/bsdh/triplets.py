"""Per-iteration batch and triplet generation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .objective import class_similarity, jaccard_similarity, laplacian


def max_triplet_count(K, O):
    """Triplets available from K categories of O images: ``K*O*(O-1)*(K-1)*O``."""
    if K < 2 or O < 2:
        raise DataError(f"need K >= 2 and O >= 2 to form triplets, got K={K}, O={O}")
    return K * O * (O - 1) * (K - 1) * O


@dataclass
class TripletBatch:
    image_ids: np.ndarray   # dataset positions of the M batch images
    triplets: np.ndarray    # (N, 3) indices into image_ids
    S: np.ndarray
    L: np.ndarray
    pool_size: int          # triplets available before budget subsampling

    @property
    def M(self):
        return len(self.image_ids)


def _relevance(dataset, positions):
    if dataset.multi_label:
        tags = [dataset.labels[i] for i in positions]
        rel = np.array([[bool(a & b) for b in tags] for a in tags])
        return rel, jaccard_similarity(tags)
    labels = dataset.labels[positions]
    S = class_similarity(labels)
    return S > 0, S


def enumerate_triplets(relevant):
    """All (anchor, positive, negative) index rows for a relevance matrix.

    Order: anchor ascending, then positive, then negative.
    """
    M = relevant.shape[0]
    rows = []
    for a in range(M):
        pos = np.flatnonzero(relevant[a])
        pos = pos[pos != a]
        neg = np.flatnonzero(~relevant[a])
        if pos.size and neg.size:
            pp, nn = np.meshgrid(pos, neg, indexing="ij")
            rows.append(np.column_stack([np.full(pp.size, a), pp.ravel(), nn.ravel()]))
    if not rows:
        return np.zeros((0, 3), dtype=np.int64)
    return np.concatenate(rows).astype(np.int64)


def _decode(relevant, flat):
    """Map sorted flat pool indices to triplet rows without materializing the pool."""
    M = relevant.shape[0]
    pos_lists, neg_lists, counts = [], [], []
    for a in range(M):
        pos = np.flatnonzero(relevant[a])
        pos = pos[pos != a]
        neg = np.flatnonzero(~relevant[a])
        pos_lists.append(pos)
        neg_lists.append(neg)
        counts.append(pos.size * neg.size)
    offsets = np.concatenate([[0], np.cumsum(counts)])
    # flat is sorted, so each anchor owns one contiguous slice of it
    bounds = np.searchsorted(flat, offsets)
    out = np.empty((flat.size, 3), dtype=np.int64)
    for a in range(M):
        lo, hi = bounds[a], bounds[a + 1]
        if lo == hi:
            continue
        local = flat[lo:hi] - offsets[a]
        nneg = neg_lists[a].size
        out[lo:hi, 0] = a
        out[lo:hi, 1] = pos_lists[a][local // nneg]
        out[lo:hi, 2] = neg_lists[a][local % nneg]
    return out, int(offsets[-1])


def sample_batch(dataset, k_hat=10, o_hat=20, triplet_budget=200_000, seed=0,
                 negatives_per_pair=None):
    """Pick ``k_hat`` categories and up to ``o_hat`` images each, then build triplets.

    The triplet pool is every (anchor, positive, negative) with anchor and
    positive sharing a label (a tag, for multi-label data) and the negative
    sharing none with the anchor.  If the pool exceeds ``triplet_budget`` a
    uniform subsample of that size is kept.  ``negatives_per_pair=n``
    instead draws ``n`` random negatives for every (anchor, positive) pair
    before budgeting.

    Categories with fewer than ``o_hat`` images contribute all of them.
    """
    if triplet_budget < 1:
        raise DataError("triplet_budget must be >= 1")
    rng = np.random.default_rng(seed)
    index = dataset.label_index
    eligible = sorted((lab for lab, members in index.items() if len(members) >= 2), key=repr)
    if len(eligible) < max(k_hat, 2):
        raise DataError(
            f"need {max(k_hat, 2)} categories with at least 2 items, dataset has {len(eligible)} "
            f"(short by {max(k_hat, 2) - len(eligible)})"
        )
    picked = rng.choice(len(eligible), k_hat, replace=False)
    chosen = []
    seen = set()
    for ci in picked:
        members = index[eligible[ci]]
        take = min(o_hat, len(members))
        for pos in rng.choice(members, take, replace=False):
            if pos not in seen:  # multi-label items may sit under several tags
                seen.add(pos)
                chosen.append(pos)
    positions = np.asarray(chosen, dtype=np.int64)
    relevant, S = _relevance(dataset, positions)

    if negatives_per_pair is None:
        pool = int(sum(((r.sum() - 1) * (~r).sum()) for r in relevant))
        if pool <= triplet_budget:
            triplets = enumerate_triplets(relevant)
        else:
            flat = np.sort(rng.choice(pool, triplet_budget, replace=False))
            triplets, _ = _decode(relevant, flat)
    else:
        rows = []
        for a in range(len(positions)):
            pos = np.flatnonzero(relevant[a])
            pos = pos[pos != a]
            neg = np.flatnonzero(~relevant[a])
            if pos.size == 0 or neg.size == 0:
                continue
            for p in pos:
                for n in rng.choice(neg, negatives_per_pair, replace=True):
                    rows.append((a, p, n))
        triplets = np.asarray(rows, dtype=np.int64).reshape(-1, 3)
        pool = len(triplets)
        if pool > triplet_budget:
            keep = np.sort(rng.choice(pool, triplet_budget, replace=False))
            triplets = triplets[keep]
    return TripletBatch(positions, triplets, S, laplacian(S), pool)
