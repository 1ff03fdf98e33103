"""Hamming distance over packed codes and exact linear-scan ranking."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataio import PackedCodes

_POPCOUNT = np.array([bin(i).count("1") for i in range(256)], dtype=np.uint8)


@dataclass(frozen=True)
class CodeDatabase:
    """Packed codes plus one opaque integer id per sample."""

    codes: PackedCodes
    ids: np.ndarray

    def __post_init__(self):
        ids = np.asarray(self.ids, dtype=np.int64)
        if ids.shape != (self.codes.n,):
            raise ValueError(f"ids shape {ids.shape} != ({self.codes.n},)")
        if np.unique(ids).size != ids.size:
            raise ValueError("database ids must be unique")
        object.__setattr__(self, "ids", ids)

    @property
    def n(self) -> int:
        return self.codes.n

    @property
    def nbits(self) -> int:
        return self.codes.nbits


@dataclass(frozen=True)
class RankedList:
    """Ids sorted by ascending Hamming distance, ties by ascending id."""

    ids: np.ndarray
    distances: np.ndarray

    def __len__(self) -> int:
        return self.ids.shape[0]

    def entries(self):
        return zip(self.ids.tolist(), self.distances.tolist())


def hamming(a, b, nbits: int) -> int:
    """Number of differing bit positions below nbits; padding never counts."""
    a = np.asarray(a, dtype=np.uint8).ravel()
    b = np.asarray(b, dtype=np.uint8).ravel()
    nbytes = (nbits + 7) // 8
    if a.shape[0] != nbytes or b.shape[0] != nbytes:
        raise ValueError(
            f"code lengths {a.shape[0]} and {b.shape[0]} bytes do not match nbits={nbits}"
        )
    return int(_POPCOUNT[np.bitwise_xor(a, b)].sum())


def rank_all(query, db: CodeDatabase, nbits: int | None = None) -> RankedList:
    """Exact full ranking of the database against one packed query code."""
    query = np.asarray(query, dtype=np.uint8).ravel()
    if nbits is not None and nbits != db.nbits:
        raise ValueError(f"query has {nbits} bits, database has {db.nbits}")
    if query.shape[0] != db.codes.packed.shape[1]:
        raise ValueError(
            f"query record is {query.shape[0]} bytes, database records are {db.codes.packed.shape[1]}"
        )
    xor = np.bitwise_xor(db.codes.packed, query[None, :])
    dists = _POPCOUNT[xor].sum(axis=1, dtype=np.int64)
    order = np.lexsort((db.ids, dists))
    return RankedList(ids=db.ids[order], distances=dists[order])
