"""Regularized triplet objective over weighted relaxed codes.

Throughout, ``outputs`` is an ``(M, q)`` array whose row ``j`` is the
weighted relaxed code ``r_j * |w|`` of batch image ``j``; the matrix ``R``
of the regularizer is its transpose.  ``triplets`` is an ``(N, 3)`` integer
array of ``(anchor, positive, negative)`` rows indexing into the batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, ShapeError


@dataclass
class ObjectiveConfig:
    lam: float = 0.001
    clamp: float | None = None  # None -> -q/2
    normalize_margin: bool = True

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be >= 0")

    def clamp_for(self, q):
        return -q / 2.0 if self.clamp is None else float(self.clamp)


@dataclass
class LossTerms:
    total: float
    margin: float
    reg: float
    active_frac: float


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"length mismatch: {a.shape} vs {b.shape}")
    return a, b


def weighted_affinity_codes(ha, hb, w):
    """Weighted Hamming affinity ``-sum w_i^2 ha_i hb_i`` (smaller is more similar)."""
    ha, hb = _pair(ha, hb)
    w = np.asarray(w, dtype=np.float64)
    if w.shape != ha.shape:
        raise ShapeError("weights must match code length")
    return float(-np.sum(w * w * ha * hb))


def weighted_euclidean(ra, rb, w):
    ra, rb = _pair(ra, rb)
    aw = np.abs(np.asarray(w, dtype=np.float64))
    if aw.shape != ra.shape:
        raise ShapeError("weights must match code length")
    d = (ra - rb) * aw
    return float(d @ d)


def triplet_margin_term(r_i, r_plus, r_minus, w, clamp):
    d = weighted_euclidean(r_i, r_plus, w) - weighted_euclidean(r_i, r_minus, w)
    return max(d, clamp)


def class_similarity(labels):
    """Same-class indicator matrix; the diagonal is 1."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise DataError("labels must be non-empty")
    return (labels[:, None] == labels[None, :]).astype(np.float64)


def jaccard_similarity(tagsets):
    """Proportion of shared tags, ``|a & b| / |a | b|``."""
    sets = [frozenset(s) for s in tagsets]
    if not sets:
        raise DataError("tag sets must be non-empty")
    if any(len(s) == 0 for s in sets):
        raise DataError("every item needs at least one tag")
    vocab = sorted(set().union(*sets), key=repr)
    col = {t: i for i, t in enumerate(vocab)}
    B = np.zeros((len(sets), len(vocab)))
    for r, s in enumerate(sets):
        B[r, [col[t] for t in s]] = 1.0
    inter = B @ B.T
    sizes = B.sum(axis=1)
    union = sizes[:, None] + sizes[None, :] - inter
    return inter / union


def laplacian(S):
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise DataError("similarity matrix must be square")
    if not np.array_equal(S, S.T):
        raise DataError("similarity matrix must be symmetric")
    return np.diag(S.sum(axis=1)) - S


def regularizer_value(R, L):
    """``tr(R L R^T)`` for ``R`` of shape (q, M)."""
    R = np.asarray(R, dtype=np.float64)
    L = np.asarray(L, dtype=np.float64)
    if R.ndim != 2 or L.shape != (R.shape[1], R.shape[1]):
        raise ShapeError(f"R is {R.shape} but L is {L.shape}")
    return float(np.sum((R @ L) * R))


def regularizer_gradient(outputs, L):
    """d tr(R L R^T) / d outputs; row j is ``2 (R L)_j``."""
    return 2.0 * (L @ outputs)


def canonical_triplets(triplets):
    """Triplets as an (N, 3) int array in lexicographic order.

    Reductions run over this order so results do not depend on how the
    caller ordered its triplets.
    """
    t = np.asarray(triplets, dtype=np.int64).reshape(-1, 3)
    if t.shape[0] == 0:
        return t
    return t[np.lexsort((t[:, 2], t[:, 1], t[:, 0]))]


def _check(outputs, triplets, L):
    outputs = np.asarray(outputs, dtype=np.float64)
    t = canonical_triplets(triplets)
    M = outputs.shape[0]
    if t.size and (t.min() < 0 or t.max() >= M):
        raise DataError("triplet index outside the batch")
    if L is not None and np.shape(L) != (M, M):
        raise ShapeError(f"L must be {M}x{M}")
    return outputs, t


def _margins(outputs, t):
    """``|a - p|^2 - |a - n|^2`` per triplet, from the batch Gram matrix."""
    G = outputs @ outputs.T
    a, p, n = t[:, 0], t[:, 1], t[:, 2]
    return (G[p, p] - G[n, n]) + 2.0 * (G[a, n] - G[a, p])


def active_triplets(outputs, triplets, cfg=None):
    """Mask of triplets above the clamp, in canonical triplet order."""
    cfg = cfg or ObjectiveConfig()
    outputs, t = _check(outputs, triplets, None)
    return _margins(outputs, t) > cfg.clamp_for(outputs.shape[1])


def loss_terms(outputs, triplets, L, cfg=None):
    cfg = cfg or ObjectiveConfig()
    outputs, t = _check(outputs, triplets, L)
    return _loss_terms(outputs, t, _margins(outputs, t), L, cfg)


def _loss_terms(outputs, t, d, L, cfg):
    C = cfg.clamp_for(outputs.shape[1])
    reg = cfg.lam * regularizer_value(outputs.T, L) if cfg.lam else 0.0
    if t.shape[0] == 0:
        return LossTerms(reg, 0.0, reg, 0.0)
    margin = float(np.sum(np.maximum(d, C)))
    if cfg.normalize_margin:
        margin /= t.shape[0]
    return LossTerms(margin + reg, margin, reg, float(np.mean(d > C)))


def batch_loss(outputs, triplets, L, cfg=None):
    return loss_terms(outputs, triplets, L, cfg).total


def image_gradient(outputs, triplets, L, cfg=None):
    """Per-image gradient of the batch loss w.r.t. each weighted output row.

    For every image the contributions of the triplets in which it plays the
    anchor, positive or negative role are accumulated separately and then
    combined; triplets whose margin is at or below the clamp contribute
    nothing.  The regularizer adds ``2 lam (R L)_j``.
    """
    cfg = cfg or ObjectiveConfig()
    outputs, t = _check(outputs, triplets, L)
    return _image_gradient(outputs, t, _margins(outputs, t), L, cfg)


def _image_gradient(outputs, t, d, L, cfg):
    M, q = outputs.shape
    grad = np.zeros((M, q))
    if t.shape[0]:
        active = d > cfg.clamp_for(q)
        t = t[active]
        a, p, n = outputs[t[:, 0]], outputs[t[:, 1]], outputs[t[:, 2]]
        roles = (
            (t[:, 0], 2.0 * (n - p)),
            (t[:, 1], -2.0 * (a - p)),
            (t[:, 2], 2.0 * (a - n)),
        )
        scale = 1.0 / len(active) if cfg.normalize_margin else 1.0
        for idx, contrib in roles:
            if idx.size == 0:
                continue
            order = np.argsort(idx, kind="stable")
            idx_sorted = idx[order]
            starts = np.flatnonzero(np.r_[True, idx_sorted[1:] != idx_sorted[:-1]])
            sums = np.add.reduceat(contrib[order], starts, axis=0)
            grad[idx_sorted[starts]] += sums
        grad *= scale
    if cfg.lam:
        grad += cfg.lam * regularizer_gradient(outputs, L)
    return grad


def loss_and_gradient(outputs, triplets, L, cfg=None):
    """``(LossTerms, image gradient)`` sharing one pass over the triplets."""
    cfg = cfg or ObjectiveConfig()
    outputs, t = _check(outputs, triplets, L)
    d = _margins(outputs, t)
    return _loss_terms(outputs, t, d, L, cfg), _image_gradient(outputs, t, d, L, cfg)


def triplet_gradients(outputs, triplets, cfg=None):
    """Per-triplet derivative blocks, shape (N, 3, q), for (anchor, positive, negative).

    Includes the margin normalization and the clamp gating but not the
    regularizer.  Summing the blocks into their images reproduces the
    margin part of :func:`image_gradient`.
    """
    cfg = cfg or ObjectiveConfig()
    outputs = np.asarray(outputs, dtype=np.float64)
    t = np.asarray(triplets, dtype=np.int64).reshape(-1, 3)
    q = outputs.shape[1]
    blocks = np.zeros((t.shape[0], 3, q))
    if t.shape[0] == 0:
        return blocks
    a, p, n = outputs[t[:, 0]], outputs[t[:, 1]], outputs[t[:, 2]]
    gate = (_margins(outputs, t) > cfg.clamp_for(q)).astype(np.float64)[:, None]
    scale = 1.0 / t.shape[0] if cfg.normalize_margin else 1.0
    blocks[:, 0] = 2.0 * (a - p) - 2.0 * (a - n)
    blocks[:, 1] = -2.0 * (a - p)
    blocks[:, 2] = 2.0 * (a - n)
    return blocks * (gate * scale)[:, None, :]
