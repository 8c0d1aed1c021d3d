"""Dataset manifest (JSON) and the binary embedding-file format.

Manifest grammar (paths are relative to the manifest's directory):

    {
      "proteins": [
        {
          "id": "P000",
          "seq": "emb/P000.emb",            # residue embeddings, required
          "text": "emb/P000.text.emb",      # text embeddings, optional
          "labels": [0, 1, 0, ...],         # inline, or "labels/P000.txt"
          "split": "train",                 # train | valid | test
          "cluster": "c3",                  # optional
          "extra": {"peptide": "emb/P000.pep.emb"}   # optional named blocks
        },
        ...
      ]
    }

A label file is whitespace-separated 0/1 tokens. Embedding files carry
float32 payloads and are widened to float64 on load.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, ManifestError
from .matrix import check_finite
from .store import ProteinRecord

__all__ = [
    "EMBEDDING_MAGIC",
    "write_embedding",
    "read_embedding",
    "ManifestEntry",
    "Manifest",
    "load_manifest",
    "save_manifest",
]

log = logging.getLogger(__name__)

EMBEDDING_MAGIC = b"MERAEMB1"
EMBEDDING_VERSION = 1

SPLITS = ("train", "valid", "test")


def write_embedding(path, matrix) -> None:
    arr = np.asarray(matrix, dtype=np.float64)
    if arr.ndim != 2:
        raise ManifestError(f"embedding must be 2-D, got shape {arr.shape}")
    rows, cols = arr.shape
    with open(path, "wb") as fh:
        fh.write(EMBEDDING_MAGIC)
        fh.write(bytes([EMBEDDING_VERSION]))
        fh.write(struct.pack("<II", rows, cols))
        fh.write(arr.astype("<f4").tobytes(order="C"))


def read_embedding(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 17:
        raise FormatError(f"{path}: truncated header", offset=len(data))
    if data[:8] != EMBEDDING_MAGIC:
        raise FormatError(
            f"{path}: bad magic {data[:8]!r}, expected {EMBEDDING_MAGIC!r}", offset=0
        )
    if data[8] != EMBEDDING_VERSION:
        raise FormatError(f"{path}: unsupported version {data[8]}", offset=8)
    rows, cols = struct.unpack("<II", data[9:17])
    expected = 17 + 4 * rows * cols
    if len(data) != expected:
        raise FormatError(
            f"{path}: payload is {len(data) - 17} bytes, declared {rows}x{cols} "
            f"needs {4 * rows * cols}",
            offset=min(len(data), expected),
        )
    arr = np.frombuffer(data, dtype="<f4", offset=17).reshape(rows, cols)
    out = arr.astype(np.float64)
    check_finite(out, str(path))
    return out


@dataclass
class ManifestEntry:
    id: str
    seq_path: Path
    labels: np.ndarray
    split: str
    text_path: Path | None = None
    cluster: str | None = None
    extra_paths: dict[str, Path] = field(default_factory=dict)

    def load_seq(self) -> np.ndarray:
        return read_embedding(self.seq_path)

    def load_text(self) -> np.ndarray | None:
        return None if self.text_path is None else read_embedding(self.text_path)

    def load_extra(self) -> dict[str, np.ndarray]:
        return {name: read_embedding(p) for name, p in self.extra_paths.items()}

    def record(self) -> ProteinRecord:
        try:
            return ProteinRecord.from_labels(
                id=self.id,
                seq_emb=self.load_seq(),
                labels=self.labels,
                cluster_id=self.cluster,
                extra=self.load_extra(),
            )
        except Exception as exc:
            raise ManifestError(f"protein {self.id!r}: {exc}") from exc


@dataclass
class Manifest:
    path: Path
    entries: list[ManifestEntry]

    def split(self, name: str) -> list[ManifestEntry]:
        if name not in SPLITS:
            raise ManifestError(f"unknown split {name!r}; valid: {SPLITS}")
        return [e for e in self.entries if e.split == name]

    def split_counts(self) -> dict[str, int]:
        return {s: len(self.split(s)) for s in SPLITS}

    def records(self, split: str) -> list[ProteinRecord]:
        return [e.record() for e in sorted(self.split(split), key=lambda e: e.id)]

    def text_embeddings(self, split: str) -> dict[str, np.ndarray]:
        out = {}
        for entry in self.split(split):
            text = entry.load_text()
            if text is not None:
                out[entry.id] = text
        return out


def _read_labels(value, base: Path, entry_id: str) -> np.ndarray:
    if isinstance(value, str):
        path = base / value
        if not path.is_file():
            raise ManifestError(f"protein {entry_id!r}: label file {path} not found")
        tokens = path.read_text().split()
        try:
            labels = np.array([int(t) for t in tokens], dtype=np.int8)
        except ValueError as exc:
            raise ManifestError(f"protein {entry_id!r}: bad label token: {exc}") from exc
    elif isinstance(value, list):
        labels = np.asarray(value, dtype=np.int8)
    else:
        raise ManifestError(
            f"protein {entry_id!r}: labels must be an inline list or a file path"
        )
    if labels.size == 0 or not np.isin(labels, (0, 1)).all():
        raise ManifestError(f"protein {entry_id!r}: labels must be non-empty 0/1")
    return labels


def load_manifest(path) -> Manifest:
    """Parse and fully validate a manifest; every referenced file must
    exist and every label vector must match its embedding's row count."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise ManifestError(f"manifest {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict) or not isinstance(data.get("proteins"), list):
        raise ManifestError(f"manifest {path} must be an object with a 'proteins' list")

    base = path.parent
    entries = []
    seen: set[str] = set()
    for i, raw in enumerate(data["proteins"]):
        if not isinstance(raw, dict):
            raise ManifestError(f"manifest entry #{i} is not an object")
        entry_id = raw.get("id")
        if not isinstance(entry_id, str) or not entry_id:
            raise ManifestError(f"manifest entry #{i} lacks a string id")
        if entry_id in seen:
            raise ManifestError(f"duplicate protein id {entry_id!r}")
        seen.add(entry_id)
        split = raw.get("split")
        if split not in SPLITS:
            raise ManifestError(
                f"protein {entry_id!r}: split must be one of {SPLITS}, got {split!r}"
            )
        seq_rel = raw.get("seq")
        if not isinstance(seq_rel, str):
            raise ManifestError(f"protein {entry_id!r}: missing 'seq' embedding path")
        seq_path = base / seq_rel
        if not seq_path.is_file():
            raise ManifestError(f"protein {entry_id!r}: {seq_path} not found")
        seq = read_embedding(seq_path)
        labels = _read_labels(raw.get("labels"), base, entry_id)
        if labels.shape[0] != seq.shape[0]:
            raise ManifestError(
                f"protein {entry_id!r}: {labels.shape[0]} labels for "
                f"{seq.shape[0]} embedding rows"
            )
        text_path = None
        if raw.get("text") is not None:
            if not isinstance(raw["text"], str):
                raise ManifestError(f"protein {entry_id!r}: 'text' must be a path")
            text_path = base / raw["text"]
            if not text_path.is_file():
                raise ManifestError(f"protein {entry_id!r}: {text_path} not found")
            read_embedding(text_path)  # parse check
        extra_paths = {}
        for name, rel in (raw.get("extra") or {}).items():
            extra_path = base / rel
            if not extra_path.is_file():
                raise ManifestError(f"protein {entry_id!r}: {extra_path} not found")
            block = read_embedding(extra_path)
            if block.shape[1] != seq.shape[1]:
                raise ManifestError(
                    f"protein {entry_id!r}: extra block {name!r} has width "
                    f"{block.shape[1]}, sequence embedding has {seq.shape[1]}"
                )
            extra_paths[name] = extra_path
        cluster = raw.get("cluster")
        if cluster is not None and not isinstance(cluster, str):
            raise ManifestError(f"protein {entry_id!r}: cluster must be a string")
        entries.append(
            ManifestEntry(
                id=entry_id,
                seq_path=seq_path,
                labels=labels,
                split=split,
                text_path=text_path,
                cluster=cluster,
                extra_paths=extra_paths,
            )
        )

    manifest = Manifest(path=path, entries=entries)
    counts = manifest.split_counts()
    total = max(1, sum(counts.values()))
    log.info(
        "manifest %s: %d proteins (train %d / valid %d / test %d = %.2f:%.2f:%.2f)",
        path,
        sum(counts.values()),
        counts["train"],
        counts["valid"],
        counts["test"],
        counts["train"] / total,
        counts["valid"] / total,
        counts["test"] / total,
    )
    return manifest


def save_manifest(path, proteins: list[dict]) -> None:
    path = Path(path)
    path.write_text(json.dumps({"proteins": proteins}, indent=1, sort_keys=True) + "\n")
