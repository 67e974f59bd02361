"""CLI: embd-extract --model <ref> --images <dir> --metadata <csv> --out <embd>."""

from __future__ import annotations

import sys

import click

from .errors import ExtractError
from .extract import extract
from .manifest import ExtractionManifest


@click.command()
@click.option("--model", "model_ref", required=True,
              help="Backbone reference, e.g. torchvision:resnet18 or torchvision:resnet18:untrained.")
@click.option("--images", "image_root", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--metadata", type=click.Path(exists=True, dir_okay=False), required=True,
              help="CSV with header filename,label,split.")
@click.option("--out", "output_path", type=click.Path(), required=True)
@click.option("--batch-size", type=int, default=32, show_default=True)
@click.option("--device", default="cpu", show_default=True)
def main(model_ref, image_root, metadata, output_path, batch_size, device):
    """Embed an image collection with a frozen backbone into an EMBD file."""
    try:
        manifest = ExtractionManifest.load(
            model_ref, image_root, metadata, output_path,
            batch_size=batch_size, device=device,
        )
        out = extract(manifest)
    except ExtractError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(exc.exit_code)
    click.echo(f"wrote {len(manifest.rows)} embeddings to {out}")


if __name__ == "__main__":
    main()
