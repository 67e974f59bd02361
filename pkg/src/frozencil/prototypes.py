"""Nearest-mean classification over per-class prototypes in a feature space.

A feature space is a two-stage map: a frozen input stage (identity or
l2 normalization) followed by the main projection into the space where
prototypes live. Euclidean spaces average per-sample projections and
compare with the l2 distance; the hyperbolic space overrides ``mean``
and ``distance`` with its manifold versions.

Bank checkpoint layout (little-endian):
    magic b"PBNK" | u32 version=1 | u16 len + UTF-8 space_id |
    u32 space_dim | u32 input_dim | u64 n_entries |
    entries sorted by class: u32 class | u64 count |
    space_dim x float64 prototype | input_dim x float64 raw_mean.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    ConfigurationError,
    ConflictError,
    DataError,
    FormatError,
    StateError,
)


class FeatureSpace:
    """Base interface for prototype feature spaces.

    ``apply`` = ``project(preprocess(z))``. ``preprocess`` is the frozen
    input stage; ``raw_mean`` values stored in a bank are means of
    preprocessed embeddings, so affine projections can be refit later and
    prototypes re-derived without raw data (mean of an affine map equals
    the map of the mean).
    """

    space_id = "identity"

    def preprocess(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z, dtype=np.float64)

    def project(self, u: np.ndarray) -> np.ndarray:
        return u

    def apply(self, z: np.ndarray) -> np.ndarray:
        return self.project(self.preprocess(z))

    def mean(self, points: list[np.ndarray]) -> np.ndarray:
        return np.mean(np.stack(points), axis=0)

    def distance(self, a: np.ndarray, b: np.ndarray) -> float:
        return float(np.linalg.norm(a - b))


class IdentitySpace(FeatureSpace):
    """Raw embedding space: the base nearest-mean classifier."""


@dataclass(frozen=True)
class PrototypeEntry:
    prototype: np.ndarray  # vector in the bank's space
    count: int
    raw_mean: np.ndarray  # mean of preprocessed embeddings

    def fingerprint(self) -> bytes:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.prototype).tobytes())
        h.update(struct.pack("<q", self.count))
        h.update(np.ascontiguousarray(self.raw_mean).tobytes())
        return h.digest()


@dataclass(frozen=True)
class PrototypeBank:
    """Per-class prototypes accumulated over tasks; grows, never mutates."""

    space_id: str
    entries: dict[int, PrototypeEntry]

    def __post_init__(self):
        for cls, entry in self.entries.items():
            if entry.count <= 0:
                raise DataError(f"class {cls} has non-positive count {entry.count}")

    @classmethod
    def empty(cls, space_id: str) -> "PrototypeBank":
        return cls(space_id=space_id, entries={})

    def classes(self) -> list[int]:
        return sorted(self.entries)

    def fingerprints(self) -> dict[int, bytes]:
        return {cls: e.fingerprint() for cls, e in self.entries.items()}


def fit_prototypes(
    view, space: FeatureSpace, expected_classes=None
) -> list[tuple[int, np.ndarray, int, np.ndarray]]:
    """Per-class prototypes of a task view: project each training sample,
    then average in the space (tangent-space average for the hyperbolic
    space). Returns (class, prototype, count, raw_mean) sorted by class.

    ``expected_classes`` (e.g. the task's scheduled class set) turns a
    class with zero samples into an error instead of a silent omission.
    """
    if len(view.records) == 0:
        raise DataError("cannot fit prototypes on an empty view")
    by_class: dict[int, list[np.ndarray]] = {}
    for rec in view.records:
        by_class.setdefault(rec.label, []).append(
            np.asarray(rec.embedding, dtype=np.float64)
        )
    if expected_classes is not None:
        missing = sorted(set(expected_classes) - set(by_class))
        if missing:
            raise DataError(f"classes {missing} have zero training samples")
    out = []
    for cls in sorted(by_class):
        samples = by_class[cls]
        pre = [space.preprocess(z) for z in samples]
        projected = [space.project(u) for u in pre]
        prototype = space.mean(projected)
        raw_mean = np.mean(np.stack(pre), axis=0)
        out.append((cls, prototype, len(samples), raw_mean))
    return out


def add_task(bank: PrototypeBank, new_entries, space_id: str | None = None) -> PrototypeBank:
    """Extend a bank with one task's entries; existing entries are shared
    untouched. Entries may be (class, prototype, count, raw_mean) tuples
    as produced by ``fit_prototypes``."""
    if space_id is not None and space_id != bank.space_id:
        raise ConfigurationError(
            f"space mismatch: entries from {space_id!r}, bank is {bank.space_id!r}"
        )
    merged = dict(bank.entries)
    for cls, prototype, count, raw_mean in new_entries:
        if cls in merged:
            raise ConflictError(f"class {cls} already present in bank")
        merged[cls] = PrototypeEntry(
            prototype=np.asarray(prototype, dtype=np.float64),
            count=int(count),
            raw_mean=np.asarray(raw_mean, dtype=np.float64),
        )
    return PrototypeBank(space_id=bank.space_id, entries=merged)


def nmc_predict(bank: PrototypeBank, space: FeatureSpace, z: np.ndarray) -> int:
    """Label of the nearest prototype across all classes seen so far.

    Distance is the space's own metric; exact ties go to the lowest class
    index (classes are scanned in ascending order with a strict compare).
    """
    if not bank.entries:
        raise StateError("prototype bank is empty")
    if space.space_id != bank.space_id:
        raise ConfigurationError(
            f"space mismatch: predicting with {space.space_id!r} on a "
            f"{bank.space_id!r} bank"
        )
    x = space.apply(z)
    best_cls = -1
    best_dist = np.inf
    for cls in sorted(bank.entries):
        d = space.distance(x, bank.entries[cls].prototype)
        if d < best_dist:
            best_dist = d
            best_cls = cls
    return best_cls


# ---------------------------------------------------------------------------
# Checkpointing
# ---------------------------------------------------------------------------

_BANK_MAGIC = b"PBNK"


def save_bank(bank: PrototypeBank, path):
    classes = bank.classes()
    if not classes:
        raise StateError("refusing to checkpoint an empty bank")
    space_dim = bank.entries[classes[0]].prototype.shape[0]
    input_dim = bank.entries[classes[0]].raw_mean.shape[0]
    with open(Path(path), "wb") as fh:
        fh.write(_BANK_MAGIC)
        fh.write(struct.pack("<I", 1))
        sid = bank.space_id.encode("utf-8")
        fh.write(struct.pack("<H", len(sid)))
        fh.write(sid)
        fh.write(struct.pack("<IIQ", space_dim, input_dim, len(classes)))
        for cls in classes:
            entry = bank.entries[cls]
            fh.write(struct.pack("<IQ", cls, entry.count))
            fh.write(np.ascontiguousarray(entry.prototype, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(entry.raw_mean, dtype="<f8").tobytes())


def load_bank(path) -> PrototypeBank:
    with open(Path(path), "rb") as fh:
        if fh.read(4) != _BANK_MAGIC:
            raise FormatError("bad bank checkpoint magic")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != 1:
            raise FormatError(f"unsupported bank checkpoint version {version}")
        (sid_len,) = struct.unpack("<H", fh.read(2))
        space_id = fh.read(sid_len).decode("utf-8")
        space_dim, input_dim, n = struct.unpack("<IIQ", fh.read(16))
        entries: dict[int, PrototypeEntry] = {}
        for _ in range(n):
            cls, count = struct.unpack("<IQ", fh.read(12))
            proto = np.frombuffer(fh.read(8 * space_dim), dtype="<f8").copy()
            raw_mean = np.frombuffer(fh.read(8 * input_dim), dtype="<f8").copy()
            entries[cls] = PrototypeEntry(prototype=proto, count=count, raw_mean=raw_mean)
    return PrototypeBank(space_id=space_id, entries=entries)
