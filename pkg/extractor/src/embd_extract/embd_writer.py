"""Streaming writer for the EMBD embedding-file format.

Layout (little-endian): magic b"EMBD" | u32 version=1 | u32 dim |
u32 num_classes | u64 N | class-name table (u16 byte length + UTF-8 per
name) | N records of u64 sample_id | u32 label | u8 split
(0=train, 1=val, 2=test) | dim x float32.

Records are written batch by batch so memory stays flat for large image
collections; the header is emitted once the embedding width is known.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

SPLIT_CODE = {"train": 0, "val": 1, "test": 2}


class EmbdWriter:
    def __init__(self, path, class_names, n_records: int):
        self._path = Path(path)
        self._class_names = tuple(class_names)
        self._n_records = n_records
        self._fh = None
        self._dim = None
        self._written = 0
        self._rec_head = struct.Struct("<QIB")

    def _open(self, dim: int):
        self._dim = dim
        self._fh = open(self._path, "wb")
        self._fh.write(b"EMBD")
        self._fh.write(struct.pack("<IIIQ", 1, dim, len(self._class_names), self._n_records))
        for name in self._class_names:
            raw = name.encode("utf-8")
            self._fh.write(struct.pack("<H", len(raw)))
            self._fh.write(raw)

    def write_batch(self, sample_ids, labels, splits, embeddings: np.ndarray):
        if self._fh is None:
            self._open(embeddings.shape[1])
        if embeddings.shape[1] != self._dim:
            raise ValueError(
                f"embedding width changed from {self._dim} to {embeddings.shape[1]}"
            )
        emb32 = np.ascontiguousarray(embeddings, dtype="<f4")
        for sid, label, split, row in zip(sample_ids, labels, splits, emb32):
            self._fh.write(self._rec_head.pack(sid, label, SPLIT_CODE[split]))
            self._fh.write(row.tobytes())
            self._written += 1

    def close(self):
        if self._fh is None:
            raise ValueError("no records were written")
        self._fh.close()
        if self._written != self._n_records:
            raise ValueError(
                f"wrote {self._written} records but the header promised {self._n_records}"
            )

    @property
    def dim(self):
        return self._dim
