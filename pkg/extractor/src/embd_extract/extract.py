"""The extraction pipeline: images -> frozen backbone -> EMBD file."""

from __future__ import annotations

import json
from pathlib import Path

import torch
from PIL import Image

from .embd_writer import EmbdWriter
from .errors import ManifestError
from .manifest import ExtractionManifest
from .models import Backbone, load_backbone


def _load_batch(backbone: Backbone, rows) -> torch.Tensor:
    tensors = []
    for row in rows:
        try:
            with Image.open(row.path) as img:
                tensors.append(backbone.preprocess(img.convert("RGB")))
        except OSError as exc:
            raise ManifestError(f"cannot decode image {row.path}: {exc}") from exc
    return torch.stack(tensors)


def extract(manifest: ExtractionManifest) -> Path:
    """Embed every manifest image and write the EMBD file plus a
    provenance sidecar at ``<output>.provenance.json``. Returns the
    output path. One record per metadata row, in row order; the
    embedding width is read from the model's first output batch."""
    backbone = load_backbone(manifest.model_ref, manifest.device)
    writer = EmbdWriter(manifest.output_path, manifest.class_names, len(manifest.rows))

    for start in range(0, len(manifest.rows), manifest.batch_size):
        rows = manifest.rows[start : start + manifest.batch_size]
        batch = _load_batch(backbone, rows)
        embeddings = backbone.embed(batch).numpy()
        writer.write_batch(
            [r.sample_id for r in rows],
            [manifest.label_index(r.label_name) for r in rows],
            [r.split for r in rows],
            embeddings,
        )
    writer.close()

    provenance = {
        "model_ref": manifest.model_ref,
        "preprocessing": backbone.preprocessing_description(),
        "preprocessing_hash": backbone.preprocessing_hash(),
        "dim": writer.dim,
        "n_records": len(manifest.rows),
        "class_names": list(manifest.class_names),
        "embd_format_version": 1,
    }
    sidecar = Path(str(manifest.output_path) + ".provenance.json")
    sidecar.write_text(json.dumps(provenance, indent=2, sort_keys=True) + "\n")
    return manifest.output_path
