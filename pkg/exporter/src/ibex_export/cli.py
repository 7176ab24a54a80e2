"""Command line mirroring ExportConfig: feature and mask export."""

from __future__ import annotations

import sys
from pathlib import Path

import click

from .export import ExportConfig, export_features, export_masks
from .models import ExportError


@click.group()
def cli():
    """Export CNN activations and segmentation masks as UIBF datasets."""


@cli.command()
@click.option("--model", default="stub-identity", show_default=True)
@click.option("--layer", default="last-layer", show_default=True)
@click.option("--images", "image_dir", required=True, type=click.Path())
@click.option("--splits", default=None, type=click.Path())
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--untrained", is_flag=True, default=False,
              help="skip pretrained weight download")
def features(model, layer, image_dir, splits, out_dir, untrained):
    """Record the hooked layer's activations for every image."""
    cfg = ExportConfig(
        model=model,
        layer=layer,
        image_dir=Path(image_dir),
        splits=Path(splits) if splits else None,
        out_dir=Path(out_dir),
        pretrained=not untrained,
    )
    manifest = export_features(cfg)
    click.echo(f"features manifest written to {manifest}")


@cli.command()
@click.option("--images", "image_dir", required=True, type=click.Path())
@click.option("--masks", "mask_dir", required=True, type=click.Path())
@click.option("--vocab", "vocabulary", required=True, type=click.Path())
@click.option("--out", "out_dir", required=True, type=click.Path())
def masks(image_dir, mask_dir, vocabulary, out_dir):
    """Rasterize binary concept masks at native image resolution."""
    cfg = ExportConfig(
        image_dir=Path(image_dir),
        mask_dir=Path(mask_dir),
        vocabulary=Path(vocabulary),
        out_dir=Path(out_dir),
    )
    result = export_masks(cfg)
    for image_id, concept in result.all_zero:
        click.echo(f"note: all-zero mask retained for ({image_id}, {concept})")
    click.echo(f"concepts manifest written to {result.manifest_path}")


def main(argv: list[str] | None = None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.ClickException as exc:
        exc.show()
        return 1
    except ExportError as exc:
        click.echo(f"export error: {exc}", err=True)
        return 2


if __name__ == "__main__":
    sys.exit(main())
