"""Extraction manifests: which images, which labels, which backbone.

The metadata CSV has a header ``filename,label,split`` where filename is
relative to the image root, label is a free-form class name, and split
is one of train/val/test. The EMBD class table becomes the sorted set
of unique label names; records get 0-based row indices as sample ids.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ManifestError

SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class ManifestRow:
    sample_id: int
    path: Path
    label_name: str
    split: str


@dataclass
class ExtractionManifest:
    model_ref: str
    image_root: Path
    metadata_path: Path
    output_path: Path
    batch_size: int = 32
    device: str = "cpu"
    rows: list[ManifestRow] = field(default_factory=list)
    class_names: tuple[str, ...] = ()

    @classmethod
    def load(
        cls,
        model_ref: str,
        image_root,
        metadata_path,
        output_path,
        batch_size: int = 32,
        device: str = "cpu",
    ) -> "ExtractionManifest":
        image_root = Path(image_root)
        metadata_path = Path(metadata_path)
        if batch_size < 1:
            raise ManifestError("batch_size must be >= 1")

        rows: list[ManifestRow] = []
        labels: set[str] = set()
        with open(metadata_path, newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise ManifestError(f"empty metadata file {metadata_path}") from None
            if [h.strip().lower() for h in header] != ["filename", "label", "split"]:
                raise ManifestError(
                    f"metadata header must be filename,label,split; got {header}"
                )
            for idx, row in enumerate(reader):
                if len(row) != 3:
                    raise ManifestError(f"metadata row {idx + 2} has {len(row)} fields")
                filename, label, split = (v.strip() for v in row)
                if split not in SPLITS:
                    raise ManifestError(f"metadata row {idx + 2}: unknown split {split!r}")
                if not label:
                    raise ManifestError(f"metadata row {idx + 2}: empty label")
                rows.append(ManifestRow(idx, image_root / filename, label, split))
                labels.add(label)
        if not rows:
            raise ManifestError(f"metadata file {metadata_path} lists no images")

        missing = [str(r.path) for r in rows if not r.path.is_file()]
        if missing:
            raise ManifestError(
                f"{len(missing)} manifest image(s) missing under {image_root}: "
                + ", ".join(missing[:10])
                + (", ..." if len(missing) > 10 else "")
            )

        return cls(
            model_ref=model_ref,
            image_root=image_root,
            metadata_path=metadata_path,
            output_path=Path(output_path),
            batch_size=batch_size,
            device=device,
            rows=rows,
            class_names=tuple(sorted(labels)),
        )

    def label_index(self, name: str) -> int:
        return self.class_names.index(name)
