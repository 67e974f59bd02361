"""Embedding datasets, on-disk formats, task schedules, synthetic data.

Every experiment in this package starts from a labeled set of embedding
vectors. Two interchangeable on-disk formats are supported:

EMBD binary format (little-endian):
    magic b"EMBD" | u32 version=1 | u32 dim | u32 num_classes | u64 N |
    class-name table: num_classes x (u16 byte-length + UTF-8 bytes) |
    N records, each: u64 sample_id | u32 label | u8 split | dim x float32
    Split codes: 0=train, 1=val, 2=test. Floats round-trip bit-exactly.

CSV format:
    header ``sample_id,label,split,e0,...,e{d-1}`` with split written as the
    words train/val/test. Class names live in a sidecar text file at
    ``<path>.classes.txt``, one name per line.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DimensionError, FormatError, LabelError

EMBD_MAGIC = b"EMBD"
EMBD_VERSION = 1

SPLITS = ("train", "val", "test")
_SPLIT_CODE = {name: code for code, name in enumerate(SPLITS)}


@dataclass(frozen=True)
class EmbeddingRecord:
    """One labeled embedding vector with its split tag."""

    sample_id: int
    embedding: np.ndarray  # float32, shape (d,)
    label: int
    split: str

    def __post_init__(self):
        if self.split not in _SPLIT_CODE:
            raise FormatError(f"unknown split tag {self.split!r}")
        if self.label < 0:
            raise LabelError(f"negative label {self.label}")


@dataclass(frozen=True)
class EmbeddingDataset:
    """Immutable collection of embedding records sharing one dimension.

    ``select_task`` returns filtered instances that share the record
    objects and class table of the source, so views are cheap and keep
    the original (global) class indices.
    """

    dim: int
    class_names: tuple[str, ...]
    records: tuple[EmbeddingRecord, ...]

    def __post_init__(self):
        if self.dim < 1:
            raise DimensionError(f"dim must be >= 1, got {self.dim}")
        if len(set(self.class_names)) != len(self.class_names):
            raise ConfigurationError("class_names contains duplicates")
        if any(not name for name in self.class_names):
            raise ConfigurationError("class_names contains an empty name")
        for rec in self.records:
            if rec.embedding.shape != (self.dim,):
                raise DimensionError(
                    f"record {rec.sample_id} has dimension "
                    f"{rec.embedding.shape[0] if rec.embedding.ndim == 1 else rec.embedding.shape}, "
                    f"expected {self.dim}"
                )
            if rec.label >= len(self.class_names):
                raise LabelError(
                    f"record {rec.sample_id} label {rec.label} out of range "
                    f"for {len(self.class_names)} classes"
                )

    def __len__(self) -> int:
        return len(self.records)

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def embeddings(self) -> np.ndarray:
        """Record embeddings stacked into an (N, d) float64 array."""
        if not self.records:
            return np.zeros((0, self.dim))
        return np.stack([r.embedding for r in self.records]).astype(np.float64)

    def labels(self) -> np.ndarray:
        return np.array([r.label for r in self.records], dtype=np.int64)


@dataclass(frozen=True)
class TaskSchedule:
    """Ordered partition of class indices into disjoint task subsets."""

    tasks: tuple[frozenset[int], ...]

    def __post_init__(self):
        seen: set[int] = set()
        for idx, task in enumerate(self.tasks):
            if not task:
                raise ConfigurationError(f"task {idx + 1} is empty")
            overlap = seen & task
            if overlap:
                raise ConfigurationError(
                    f"task {idx + 1} reuses classes {sorted(overlap)}"
                )
            seen |= task

    @property
    def n_tasks(self) -> int:
        return len(self.tasks)

    def classes_through(self, t: int) -> frozenset[int]:
        """Union of task classes for tasks 1..t (1-based, inclusive)."""
        self._check_index(t)
        out: set[int] = set()
        for task in self.tasks[:t]:
            out |= task
        return frozenset(out)

    def all_classes(self) -> frozenset[int]:
        return self.classes_through(self.n_tasks)

    def _check_index(self, t: int):
        if not 1 <= t <= self.n_tasks:
            raise IndexError(f"task index {t} outside 1..{self.n_tasks}")

    def to_lists(self) -> list[list[int]]:
        return [sorted(task) for task in self.tasks]


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of the synthetic Gaussian-cluster generator.

    Class centers sit at ``mean_scale * e_c`` (the c-th standard basis
    vector), so any pair of centers is ``mean_scale * sqrt(2)`` apart and
    separability is controlled analytically by ``noise_std``.
    """

    n_classes: int
    dim: int
    samples_per_class: int
    mean_scale: float = 10.0
    noise_std: float = 1.0
    split_fractions: tuple[float, float, float] = (0.7, 0.15, 0.15)
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 1 or self.dim < 1 or self.samples_per_class < 1:
            raise ConfigurationError("n_classes, dim, samples_per_class must be >= 1")
        if self.n_classes > self.dim:
            raise ConfigurationError(
                f"n_classes ({self.n_classes}) must not exceed dim ({self.dim}): "
                "class centers are standard basis vectors"
            )
        if self.mean_scale <= 0:
            raise ConfigurationError("mean_scale must be > 0")
        if self.noise_std < 0:
            raise ConfigurationError("noise_std must be >= 0")
        fr = self.split_fractions
        if len(fr) != 3 or any(f < 0 for f in fr):
            raise ConfigurationError("split_fractions must be three values >= 0")
        if abs(sum(fr) - 1.0) > 1e-9:
            raise ConfigurationError(f"split_fractions sum to {sum(fr)}, expected 1")


def split_counts(total: int, fractions: tuple[float, float, float]) -> tuple[int, int, int]:
    """Apportion ``total`` into three split sizes by largest-remainder rounding.

    Remainder ties go to the earlier split in (train, val, test) order.
    """
    quotas = [total * f for f in fractions]
    floors = [int(np.floor(q)) for q in quotas]
    leftover = total - sum(floors)
    order = sorted(range(3), key=lambda i: (-(quotas[i] - floors[i]), i))
    for i in order[:leftover]:
        floors[i] += 1
    return tuple(floors)  # type: ignore[return-value]


def generate_synthetic(spec: SynthSpec) -> EmbeddingDataset:
    """Draw a Gaussian-cluster dataset around scaled basis-vector centers.

    Deterministic for a fixed seed. Per class, ``samples_per_class`` draws
    are apportioned over train/val/test by largest-remainder rounding.
    """
    rng = np.random.default_rng(spec.seed)
    counts = split_counts(spec.samples_per_class, spec.split_fractions)
    records: list[EmbeddingRecord] = []
    sample_id = 0
    for c in range(spec.n_classes):
        center = np.zeros(spec.dim)
        center[c] = spec.mean_scale
        for split, n in zip(SPLITS, counts):
            noise = rng.normal(0.0, spec.noise_std, size=(n, spec.dim))
            for row in noise:
                emb = (center + row).astype(np.float32)
                records.append(EmbeddingRecord(sample_id, emb, c, split))
                sample_id += 1
    names = tuple(f"class_{c}" for c in range(spec.n_classes))
    return EmbeddingDataset(dim=spec.dim, class_names=names, records=tuple(records))


def make_task_schedule(
    n_classes: int, n_tasks: int, order: str = "contiguous", seed: int = 0
) -> TaskSchedule:
    """Partition ``n_classes`` class indices into ``n_tasks`` ordered subsets.

    Classes are spread as evenly as possible; when ``n_classes % n_tasks``
    is nonzero the earlier tasks receive one extra class. ``order`` is
    either ``"contiguous"`` (indices in natural order) or ``"shuffled"``
    (seed-deterministic permutation before splitting).
    """
    if n_tasks < 1:
        raise ConfigurationError("n_tasks must be >= 1")
    if n_tasks > n_classes:
        raise ConfigurationError(
            f"n_tasks ({n_tasks}) exceeds n_classes ({n_classes})"
        )
    if order == "contiguous":
        indices = list(range(n_classes))
    elif order == "shuffled":
        indices = list(np.random.default_rng(seed).permutation(n_classes))
    else:
        raise ConfigurationError(f"unknown order {order!r}")

    base, extra = divmod(n_classes, n_tasks)
    tasks: list[frozenset[int]] = []
    pos = 0
    for t in range(n_tasks):
        size = base + (1 if t < extra else 0)
        tasks.append(frozenset(int(i) for i in indices[pos : pos + size]))
        pos += size
    return TaskSchedule(tasks=tuple(tasks))


def select_task(
    dataset: EmbeddingDataset, schedule: TaskSchedule, t: int, split: str
) -> EmbeddingDataset:
    """View of the records in task ``t`` (1-based) with the given split tag.

    The view shares record objects and the class table with the source,
    so class indices stay global. An empty result is legal.
    """
    schedule._check_index(t)
    if split not in _SPLIT_CODE:
        raise ConfigurationError(f"unknown split {split!r}")
    wanted = schedule.tasks[t - 1]
    filtered = tuple(
        r for r in dataset.records if r.label in wanted and r.split == split
    )
    return EmbeddingDataset(dim=dataset.dim, class_names=dataset.class_names, records=filtered)


# ---------------------------------------------------------------------------
# EMBD binary format
# ---------------------------------------------------------------------------

def _write_embd(dataset: EmbeddingDataset, path: Path):
    with open(path, "wb") as fh:
        fh.write(EMBD_MAGIC)
        fh.write(
            struct.pack(
                "<IIIQ", EMBD_VERSION, dataset.dim, dataset.n_classes, len(dataset.records)
            )
        )
        for name in dataset.class_names:
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
        rec_head = struct.Struct("<QIB")
        for rec in dataset.records:
            fh.write(rec_head.pack(rec.sample_id, rec.label, _SPLIT_CODE[rec.split]))
            fh.write(np.ascontiguousarray(rec.embedding, dtype="<f4").tobytes())


def _read_exact(fh, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated EMBD file while reading {what}")
    return buf


def _read_embd(path: Path) -> EmbeddingDataset:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != EMBD_MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {EMBD_MAGIC!r}")
        version, dim, n_classes, n_records = struct.unpack(
            "<IIIQ", _read_exact(fh, 20, "header")
        )
        if version != EMBD_VERSION:
            raise FormatError(f"unsupported EMBD version {version}")
        names = []
        for _ in range(n_classes):
            (length,) = struct.unpack("<H", _read_exact(fh, 2, "class table"))
            names.append(_read_exact(fh, length, "class name").decode("utf-8"))
        rec_head = struct.Struct("<QIB")
        records = []
        for _ in range(n_records):
            sample_id, label, split_code = rec_head.unpack(
                _read_exact(fh, rec_head.size, "record header")
            )
            if split_code >= len(SPLITS):
                raise FormatError(f"unknown split code {split_code}")
            if label >= n_classes:
                raise LabelError(
                    f"record {sample_id} label {label} out of range for {n_classes} classes"
                )
            emb = np.frombuffer(_read_exact(fh, 4 * dim, "embedding"), dtype="<f4").copy()
            records.append(EmbeddingRecord(sample_id, emb, label, SPLITS[split_code]))
        if fh.read(1):
            raise FormatError("trailing bytes after final record")
    return EmbeddingDataset(dim=dim, class_names=tuple(names), records=tuple(records))


# ---------------------------------------------------------------------------
# CSV format
# ---------------------------------------------------------------------------

def _sidecar_path(path: Path) -> Path:
    return Path(str(path) + ".classes.txt")


def _write_csv(dataset: EmbeddingDataset, path: Path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["sample_id", "label", "split"] + [f"e{i}" for i in range(dataset.dim)]
        )
        for rec in dataset.records:
            # repr of the float64 value round-trips the float32 exactly
            writer.writerow(
                [rec.sample_id, rec.label, rec.split]
                + [repr(float(v)) for v in rec.embedding]
            )
    with open(_sidecar_path(path), "w") as fh:
        for name in dataset.class_names:
            fh.write(name + "\n")


def _read_csv(path: Path) -> EmbeddingDataset:
    sidecar = _sidecar_path(path)
    if not sidecar.exists():
        raise FormatError(f"missing class-name sidecar {sidecar}")
    with open(sidecar) as fh:
        names = tuple(line.rstrip("\n") for line in fh if line.strip())
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError("empty CSV file") from None
        if header[:3] != ["sample_id", "label", "split"]:
            raise FormatError(f"bad CSV header {header[:3]}")
        dim = len(header) - 3
        if dim < 1:
            raise FormatError("CSV header declares no embedding columns")
        records = []
        for row in reader:
            if len(row) != dim + 3:
                raise DimensionError(
                    f"CSV row has {len(row) - 3} embedding values, expected {dim}"
                )
            sample_id, label = int(row[0]), int(row[1])
            split = row[2]
            if split not in _SPLIT_CODE:
                raise FormatError(f"unknown split word {split!r}")
            if label >= len(names):
                raise LabelError(
                    f"record {sample_id} label {label} out of range for {len(names)} classes"
                )
            emb = np.array([float(v) for v in row[3:]], dtype=np.float32)
            records.append(EmbeddingRecord(sample_id, emb, label, split))
    return EmbeddingDataset(dim=dim, class_names=names, records=tuple(records))


def load_dataset(path, format: str = "embd") -> EmbeddingDataset:
    """Load a dataset from ``path`` in the given format ("embd" or "csv")."""
    path = Path(path)
    if format == "embd":
        return _read_embd(path)
    if format == "csv":
        return _read_csv(path)
    raise ConfigurationError(f"unknown dataset format {format!r}")


def save_dataset(dataset: EmbeddingDataset, path, format: str = "embd"):
    """Write ``dataset`` to ``path``; EMBD round-trips bit-exactly."""
    path = Path(path)
    if format == "embd":
        _write_embd(dataset, path)
    elif format == "csv":
        _write_csv(dataset, path)
    else:
        raise ConfigurationError(f"unknown dataset format {format!r}")
