"""Protein vector database: exact top-K retrieval by chain-key cosine similarity.

The store is immutable after build. Embeddings are snapped to float32
precision at ingestion (then widened back to float64) so that retrieval is
bit-identical before and after a save/load round trip; the on-disk format
carries float32.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionError,
    FormatError,
    NormError,
    ParameterError,
    RetrievalError,
    StoreError,
)
from .matrix import as_matrix, mean_rows

__all__ = [
    "ProteinRecord",
    "NeighborSet",
    "Store",
    "chain_key",
    "build_store",
    "retrieve",
    "save_store",
    "load_store",
    "STORE_MAGIC",
]

STORE_MAGIC = b"MERASTO1"
STORE_VERSION = 1


def chain_key(seq_emb) -> np.ndarray:
    """Column-wise mean of the residue embeddings, as a 1xD row."""
    return mean_rows(seq_emb)


def _f32(arr: np.ndarray) -> np.ndarray:
    return arr.astype(np.float32).astype(np.float64)


@dataclass
class ProteinRecord:
    """One database entry.

    active_indices are the residue positions labeled 1; when labels are
    present the two must agree. extra holds optional named embedding blocks
    (e.g. a peptide block) for configurable experts; these are not part of
    the store file format and are rehydrated from the manifest when needed.
    """

    id: str
    seq_emb: np.ndarray
    active_indices: tuple[int, ...]
    cluster_id: str | None = None
    labels: np.ndarray | None = None
    extra: dict[str, np.ndarray] = field(default_factory=dict)
    chain_key: np.ndarray = field(init=False)

    def __post_init__(self):
        self.seq_emb = as_matrix(self.seq_emb, f"seq_emb of {self.id!r}")
        n = self.seq_emb.shape[0]
        idx = tuple(int(i) for i in self.active_indices)
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise StoreError(f"record {self.id!r}: active indices must be strictly increasing")
        if idx and (idx[0] < 0 or idx[-1] >= n):
            raise StoreError(f"record {self.id!r}: active index out of range 0..{n - 1}")
        self.active_indices = idx
        if self.labels is not None:
            labels = np.asarray(self.labels).astype(np.int8).reshape(-1)
            if labels.shape[0] != n:
                raise StoreError(
                    f"record {self.id!r}: {labels.shape[0]} labels for {n} residues"
                )
            if tuple(np.flatnonzero(labels == 1)) != idx:
                raise StoreError(
                    f"record {self.id!r}: active indices disagree with label positions"
                )
            self.labels = labels
        self.chain_key = chain_key(self.seq_emb)

    @classmethod
    def from_labels(cls, id, seq_emb, labels, cluster_id=None, extra=None):
        labels = np.asarray(labels).astype(np.int8).reshape(-1)
        idx = tuple(int(i) for i in np.flatnonzero(labels == 1))
        return cls(
            id=id,
            seq_emb=seq_emb,
            active_indices=idx,
            cluster_id=cluster_id,
            labels=labels,
            extra=extra or {},
        )

    @property
    def n_residues(self) -> int:
        return self.seq_emb.shape[0]

    def active_block(self) -> np.ndarray:
        return self.seq_emb[list(self.active_indices), :]


@dataclass(frozen=True)
class NeighborSet:
    """Top-K' retrieval result, similarity-descending, never the query itself."""

    query_id: str
    entries: tuple[tuple[ProteinRecord, float], ...]

    def ids(self) -> list[str]:
        return [rec.id for rec, _ in self.entries]

    def records(self) -> list[ProteinRecord]:
        return [rec for rec, _ in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


class Store:
    """Immutable collection of records plus their stacked unit chain keys."""

    def __init__(self, records: list[ProteinRecord]):
        self.records = tuple(records)
        self._by_id = {rec.id: rec for rec in self.records}
        if self.records:
            keys = np.vstack([rec.chain_key for rec in self.records])
            norms = np.linalg.norm(keys, axis=1, keepdims=True)
            zero = np.flatnonzero(norms[:, 0] == 0.0)
            if zero.size:
                raise NormError(
                    f"record {self.records[zero[0]].id!r} has a zero-norm chain key"
                )
            self._unit_keys = keys / norms
        else:
            self._unit_keys = np.zeros((0, 0))

    def __len__(self) -> int:
        return len(self.records)

    def __contains__(self, record_id: str) -> bool:
        return record_id in self._by_id

    def get(self, record_id: str) -> ProteinRecord:
        return self._by_id[record_id]

    def ids(self) -> list[str]:
        return [rec.id for rec in self.records]


def build_store(records: list[ProteinRecord]) -> Store:
    """Validate and ingest records; embeddings are quantized to f32 precision."""
    seen: set[str] = set()
    ingested = []
    dim = records[0].seq_emb.shape[1] if records else None
    for rec in records:
        if rec.id in seen:
            raise StoreError(f"duplicate record id: {rec.id!r}")
        seen.add(rec.id)
        if len(rec.active_indices) == 0:
            raise StoreError(f"record {rec.id!r} has no active sites")
        if rec.seq_emb.shape[1] != dim:
            raise StoreError(
                f"record {rec.id!r} has embedding width {rec.seq_emb.shape[1]}, "
                f"store uses {dim}"
            )
        ingested.append(
            ProteinRecord(
                id=rec.id,
                seq_emb=_f32(rec.seq_emb),
                active_indices=rec.active_indices,
                cluster_id=rec.cluster_id,
                labels=rec.labels,
                extra={k: _f32(as_matrix(v, k)) for k, v in rec.extra.items()},
            )
        )
    return Store(ingested)


def retrieve(
    store: Store,
    query_key,
    k: int,
    exclude_id: str | None = None,
    cluster_id: str | None = None,
) -> NeighborSet:
    """Exact top-K by cosine similarity over eligible records.

    Excludes exclude_id; restricted to cluster_id when given and when the
    records carry cluster ids. Ties break by ascending record id. Returns
    fewer than K entries when fewer are eligible; zero eligible records is
    an error.
    """
    if k < 1:
        raise ParameterError(f"K must be >= 1, got {k}")
    query = as_matrix(query_key, "query key")
    if len(store) == 0:
        raise RetrievalError("retrieval from an empty store")
    if query.shape != (1, store._unit_keys.shape[1]):
        raise DimensionError(
            f"query key shape {query.shape} does not match store dimension "
            f"{store._unit_keys.shape[1]}"
        )
    norm = float(np.linalg.norm(query))
    if norm == 0.0:
        raise NormError("query key has zero norm")

    sims = store._unit_keys @ (query[0] / norm)
    np.clip(sims, -1.0, 1.0, out=sims)

    eligible = []
    for idx, rec in enumerate(store.records):
        if exclude_id is not None and rec.id == exclude_id:
            continue
        if cluster_id is not None and rec.cluster_id is not None and rec.cluster_id != cluster_id:
            continue
        eligible.append((idx, rec))
    if not eligible:
        raise RetrievalError(
            f"no eligible records for query {exclude_id!r} "
            f"(store size {len(store)}, cluster {cluster_id!r})"
        )

    ranked = sorted(eligible, key=lambda pair: (-sims[pair[0]], pair[1].id))
    top = ranked[: min(k, len(ranked))]
    return NeighborSet(
        query_id=exclude_id if exclude_id is not None else "",
        entries=tuple((rec, float(sims[idx])) for idx, rec in top),
    )


# ---------------------------------------------------------------------------
# Binary format: magic, version byte, record count, then per record:
# id, D, n_seq, f32 row-major seq embedding, active indices, optional
# cluster id (zero-length string means absent). Integers are u32 LE.
# ---------------------------------------------------------------------------


def _pack_str(text: str) -> bytes:
    raw = text.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


class _Reader:
    def __init__(self, data: bytes, source: str):
        self.data = data
        self.offset = 0
        self.source = source

    def take(self, n: int) -> bytes:
        if self.offset + n > len(self.data):
            raise FormatError(
                f"{self.source}: truncated, needed {n} more bytes",
                offset=self.offset,
            )
        out = self.data[self.offset : self.offset + n]
        self.offset += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def string(self) -> str:
        length = self.u32()
        return self.take(length).decode("utf-8")


def save_store(store: Store, path) -> None:
    parts = [STORE_MAGIC, bytes([STORE_VERSION]), struct.pack("<I", len(store))]
    for rec in store.records:
        n, d = rec.seq_emb.shape
        parts.append(_pack_str(rec.id))
        parts.append(struct.pack("<II", d, n))
        parts.append(rec.seq_emb.astype("<f4").tobytes(order="C"))
        parts.append(struct.pack("<I", len(rec.active_indices)))
        parts.append(struct.pack(f"<{len(rec.active_indices)}I", *rec.active_indices))
        parts.append(_pack_str(rec.cluster_id or ""))
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_store(path) -> Store:
    with open(path, "rb") as fh:
        reader = _Reader(fh.read(), str(path))
    magic = reader.take(len(STORE_MAGIC))
    if magic != STORE_MAGIC:
        raise FormatError(
            f"{reader.source}: bad magic {magic!r}, expected {STORE_MAGIC!r}",
            offset=0,
        )
    version = reader.take(1)[0]
    if version != STORE_VERSION:
        raise FormatError(f"{reader.source}: unsupported version {version}", offset=8)
    count = reader.u32()
    records = []
    for _ in range(count):
        rec_id = reader.string()
        d = reader.u32()
        n = reader.u32()
        payload = reader.take(4 * n * d)
        seq = np.frombuffer(payload, dtype="<f4").reshape(n, d).astype(np.float64)
        n_act = reader.u32()
        idx_raw = reader.take(4 * n_act)
        indices = struct.unpack(f"<{n_act}I", idx_raw)
        cluster = reader.string() or None
        records.append(
            ProteinRecord(
                id=rec_id,
                seq_emb=seq,
                active_indices=indices,
                cluster_id=cluster,
            )
        )
    if reader.offset != len(reader.data):
        raise FormatError(
            f"{reader.source}: {len(reader.data) - reader.offset} trailing bytes",
            offset=reader.offset,
        )
    return build_store(records)
