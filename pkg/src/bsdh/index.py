"""Binary codes, bit-scalable truncation and weighted-Hamming search.

Codes are packed MSB-first: bit value 1 encodes +1 and 0 encodes -1, and
padding bits of the last byte are zero.  A :class:`CodeDatabase` stores its
codes with bits permuted into descending ``w_i^2`` order, so serving a
``k``-bit code is a prefix operation.

Both search engines work on the same fixed-point copy of the squared
weights (``round(w^2 * 2^F)`` as int64, with ``F`` chosen so that all sums
stay below ``2^53``).  Integer sums are exact, so the table-driven engine
and the direct evaluation agree bit for bit, and affinities convert to
float exactly.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, FormatError, ShapeError, UnsupportedVersionError

CHUNK_BITS = 8
MAGIC = b"BSDH-CDB"
VERSION = 1


def sign_bits(values):
    """``sign`` with ``sign(0) = +1`` as a boolean bit array (True = +1)."""
    return np.asarray(values) >= 0


def pack_codes(codes):
    """Pack ``(n, q)`` codes in {-1, +1} (or booleans) into ``(n, ceil(q/8))`` uint8."""
    bits = np.asarray(codes)
    bits = bits if bits.dtype == bool else bits > 0
    return np.packbits(np.atleast_2d(bits), axis=1, bitorder="big")


def unpack_codes(packed, q):
    """Inverse of :func:`pack_codes`; returns int8 codes in {-1, +1}."""
    bits = np.unpackbits(np.atleast_2d(np.asarray(packed, dtype=np.uint8)), axis=1, count=q, bitorder="big")
    return bits.astype(np.int8) * 2 - 1


def encode(model, images, batch_size=1024):
    """Packed sign codes of ``images`` under ``model`` (beta plays no role)."""
    chunks = [
        pack_codes(sign_bits(model.features(images[i:i + batch_size])))
        for i in range(0, len(images), batch_size)
    ]
    return np.concatenate(chunks) if chunks else np.zeros((0, (model.code_length + 7) // 8), np.uint8)


def select_bits(weights, k):
    """Indices of the ``k`` largest ``w_i^2``, descending, ties to the lower index."""
    w2 = np.square(np.asarray(weights, dtype=np.float64))
    q = w2.size
    if not 1 <= k <= q:
        raise DataError(f"k must be in [1, {q}], got {k}")
    return np.argsort(-w2, kind="stable")[:k]


def fixed_point_weights(weights):
    """Return ``(int64 w^2 * 2^F, 2^-F)`` with the total kept below ``2^52``."""
    w2 = np.square(np.asarray(weights, dtype=np.float64))
    total = float(w2.sum())
    if total <= 0:
        return np.zeros(w2.shape, dtype=np.int64), 1.0
    exp = 52 - math.frexp(total)[1]
    return np.rint(np.ldexp(w2, exp)).astype(np.int64), math.ldexp(1.0, -exp)


@dataclass
class LookupTables:
    """One 256-entry table per 8-bit chunk of the (truncated) code.

    ``tables[c, x]`` is the fixed-point sum of ``w_i^2 * (2*bit(x, i) - 1)``
    over the chunk's positions; padding positions contribute zero.
    """

    tables: np.ndarray  # (n_chunks, 256) int64
    scale: float
    k_bits: int

    @property
    def values(self):
        return self.tables * self.scale


def build_lut(weights_selected, scale=None, fixed=None):
    """Chunk tables for weights already in bit order (first weight = chunk MSB)."""
    w = np.asarray(weights_selected, dtype=np.float64)
    k = w.size
    if k == 0:
        raise DataError("need at least one selected weight")
    if fixed is None:
        fixed, scale = fixed_point_weights(w)
    n_chunks = (k + CHUNK_BITS - 1) // CHUNK_BITS
    padded = np.zeros(n_chunks * CHUNK_BITS, dtype=np.int64)
    padded[:k] = fixed
    per_chunk = padded.reshape(n_chunks, CHUNK_BITS)
    # bit i of the chunk sits at value 2^(7-i)
    patterns = np.unpackbits(np.arange(256, dtype=np.uint8)[:, None], axis=1).astype(np.int64)
    tables = (2 * patterns - 1) @ per_chunk.T
    return LookupTables(np.ascontiguousarray(tables.T), scale, k)


@dataclass
class RankingList:
    """Candidates ordered by ascending affinity (most similar first), ties by id."""

    ids: np.ndarray
    affinity: np.ndarray

    def __len__(self):
        return len(self.ids)

    def __eq__(self, other):
        return (
            isinstance(other, RankingList)
            and np.array_equal(self.ids, other.ids)
            and np.array_equal(self.affinity, other.affinity)
        )


@dataclass
class CodeDatabase:
    q: int
    weights: np.ndarray    # float32, original bit order
    bit_order: np.ndarray  # permutation, descending w^2
    codes: np.ndarray      # (n, ceil(q/8)) uint8, bits in bit_order
    ids: np.ndarray        # uint64-compatible int64
    _luts: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n(self):
        return len(self.ids)

    @classmethod
    def build(cls, weights, codes, ids=None):
        """Database from codes packed in natural bit order."""
        weights = np.asarray(weights, dtype=np.float32)
        q = weights.size
        codes = np.atleast_2d(np.asarray(codes, dtype=np.uint8))
        if codes.shape[1] != (q + 7) // 8:
            raise ShapeError(f"codes have {codes.shape[1]} bytes, q={q} needs {(q + 7) // 8}")
        ids = np.arange(len(codes), dtype=np.int64) if ids is None else np.asarray(ids, dtype=np.int64)
        if ids.shape != (len(codes),):
            raise ShapeError("need one id per code")
        order = select_bits(weights, q)
        permuted = pack_codes(unpack_codes(codes, q)[:, order])
        return cls(q, weights, order, permuted, ids)

    def __eq__(self, other):
        return isinstance(other, CodeDatabase) and self.q == other.q and all(
            np.array_equal(getattr(self, f), getattr(other, f))
            for f in ("weights", "bit_order", "codes", "ids")
        )

    def prepare_query(self, code):
        """Permute a naturally ordered packed query code into this database's bit order."""
        code = np.asarray(code, dtype=np.uint8).reshape(1, -1)
        return pack_codes(unpack_codes(code, self.q)[:, self.bit_order])[0]

    def natural_codes(self):
        """Stored codes packed back into the model's natural bit order."""
        bits = unpack_codes(self.codes, self.q)
        natural = np.empty_like(bits)
        natural[:, self.bit_order] = bits
        return pack_codes(natural)

    def fixed_weights(self, k_bits):
        fixed, scale = fixed_point_weights(self.weights[self.bit_order])
        return fixed[:k_bits], scale

    def lut(self, k_bits):
        self._check_bits(k_bits)
        if k_bits not in self._luts:
            fixed, scale = self.fixed_weights(k_bits)
            self._luts[k_bits] = build_lut(self.weights[self.bit_order][:k_bits], scale, fixed)
        return self._luts[k_bits]

    def _check_bits(self, k_bits):
        if not 1 <= k_bits <= self.q:
            raise DataError(f"k_bits must be in [1, {self.q}], got {k_bits}")

    def truncate(self, k_bits):
        """A new database keeping only the ``k_bits`` highest-weight bits."""
        self._check_bits(k_bits)
        keep = self.bit_order[:k_bits]
        bits = unpack_codes(self.codes, self.q)[:, :k_bits]
        w = self.weights[keep]
        # keep is already sorted by descending weight, so the new order is the identity
        return CodeDatabase(k_bits, w, select_bits(w, k_bits), pack_codes(bits), self.ids.copy())


def chunk_masks(k_bits):
    n_chunks = (k_bits + CHUNK_BITS - 1) // CHUNK_BITS
    masks = np.full(n_chunks, 0xFF, dtype=np.uint8)
    rem = k_bits % CHUNK_BITS
    if rem:
        masks[-1] = (0xFF << (CHUNK_BITS - rem)) & 0xFF
    return masks


def _rank(ids, fixed_aff, scale, top_k):
    order = np.lexsort((ids, fixed_aff))
    if top_k is not None:
        order = order[:max(0, top_k)]
    return RankingList(ids[order], fixed_aff[order] * scale)


def lut_affinities(db, prepared_query, k_bits):
    """Fixed-point affinity of every database code via table lookups."""
    lut = db.lut(k_bits)
    n_chunks = lut.tables.shape[0]
    xor = (db.codes[:, :n_chunks] ^ prepared_query[:n_chunks]) & chunk_masks(k_bits)
    aff = np.zeros(db.n, dtype=np.int64)
    for c in range(n_chunks):
        aff += lut.tables[c][xor[:, c]]
    return aff, lut.scale


def query_lut(db, query_code, k_bits=None, top_k=None, prepared=False):
    """Rank the database against one packed query code using chunk tables."""
    k_bits = db.q if k_bits is None else k_bits
    db._check_bits(k_bits)
    pq = np.asarray(query_code, dtype=np.uint8) if prepared else db.prepare_query(query_code)
    aff, scale = lut_affinities(db, pq, k_bits)
    return _rank(db.ids, aff, scale, top_k)


def bruteforce_affinities(db, prepared_query, k_bits):
    fixed, scale = db.fixed_weights(k_bits)
    H = unpack_codes(db.codes, db.q)[:, :k_bits].astype(np.int64)
    hq = unpack_codes(prepared_query, db.q)[0, :k_bits].astype(np.int64)
    return -(H * hq) @ fixed, scale


def query_bruteforce(db, query_code, k_bits=None, top_k=None, prepared=False):
    """Same contract as :func:`query_lut`, evaluating the affinity directly."""
    k_bits = db.q if k_bits is None else k_bits
    db._check_bits(k_bits)
    pq = np.asarray(query_code, dtype=np.uint8) if prepared else db.prepare_query(query_code)
    aff, scale = bruteforce_affinities(db, pq, k_bits)
    return _rank(db.ids, aff, scale, top_k)


def hamming_distances(db, prepared_query, k_bits):
    """Unweighted Hamming distance on the first ``k_bits`` of the bit order."""
    n_chunks = (k_bits + CHUNK_BITS - 1) // CHUNK_BITS
    xor = (db.codes[:, :n_chunks] ^ prepared_query[:n_chunks]) & chunk_masks(k_bits)
    return np.bitwise_count(xor).sum(axis=1, dtype=np.int64)


# -- persistence ------------------------------------------------------------
#
#   b"BSDH-CDB", u32 version, u32 q, u64 n,
#   f32[q] weights in bit order, u16[q] bit_order,
#   n records of (u64 id, ceil(q/8) code bytes MSB-first)

def dumps_db(db):
    nbytes = (db.q + 7) // 8
    rec = np.zeros(db.n, dtype=[("id", "<u8"), ("code", "u1", (nbytes,))])
    rec["id"] = db.ids
    rec["code"] = db.codes
    return b"".join([
        MAGIC,
        struct.pack("<IIQ", VERSION, db.q, db.n),
        np.asarray(db.weights[db.bit_order], dtype="<f4").tobytes(),
        np.asarray(db.bit_order, dtype="<u2").tobytes(),
        rec.tobytes(),
    ])


def loads_db(blob):
    blob = memoryview(blob)
    if len(blob) < 24 or bytes(blob[:8]) != MAGIC:
        raise FormatError("not a BSDH code database (bad magic)")
    version, q, n = struct.unpack_from("<IIQ", blob, 8)
    if version != VERSION:
        raise UnsupportedVersionError(f"code database version {version} is not supported (expected {VERSION})")
    if q < 1:
        raise FormatError("code length must be positive")
    nbytes = (q + 7) // 8
    pos = 24
    expected = pos + 4 * q + 2 * q + n * (8 + nbytes)
    if len(blob) != expected:
        raise FormatError(f"code database should be {expected} bytes, found {len(blob)}")
    w_sorted = np.frombuffer(blob, dtype="<f4", count=q, offset=pos).astype(np.float32)
    pos += 4 * q
    order = np.frombuffer(blob, dtype="<u2", count=q, offset=pos).astype(np.int64)
    pos += 2 * q
    if not np.array_equal(np.sort(order), np.arange(q)):
        raise FormatError("bit_order is not a permutation")
    rec = np.frombuffer(blob, dtype=[("id", "<u8"), ("code", "u1", (nbytes,))], count=n, offset=pos)
    codes = np.array(rec["code"], dtype=np.uint8).reshape(n, nbytes)
    if q % 8 and n and np.any(codes[:, -1] & ~chunk_masks(q)[-1]):
        raise FormatError("non-zero padding bits in code records")
    weights = np.empty(q, dtype=np.float32)
    weights[order] = w_sorted
    if not np.array_equal(select_bits(weights, q), order):
        raise FormatError("bit_order is not sorted by descending weight")
    return CodeDatabase(q, weights, order, codes, rec["id"].astype(np.int64))


def save_db(db, path):
    with open(path, "wb") as fh:
        fh.write(dumps_db(db))


def load_db(path):
    with open(path, "rb") as fh:
        return loads_db(fh.read())
