"""sfs-export command line interface."""
from __future__ import annotations

import sys
from pathlib import Path

import click

from .export import ALL_STAGES, ExportJob, run_export

SAMPLE_IMAGES = ("astronaut", "chelsea", "coffee")


def _resolve_images(specs: tuple) -> dict:
    """IMAGE arguments are files, or names of scikit-image sample photos."""
    import skimage.data

    images = {}
    for spec in specs:
        p = Path(spec)
        if p.exists():
            images[p.stem] = p
        elif spec in SAMPLE_IMAGES:
            images[spec] = getattr(skimage.data, spec)().astype(float) / 255.0
        else:
            raise click.ClickException(
                f"{spec}: not a file and not one of the bundled samples "
                f"{', '.join(SAMPLE_IMAGES)}"
            )
    if not images:
        raise click.ClickException("no input images given")
    return images


@click.command()
@click.argument("images", nargs=-1)
@click.option("--out", required=True, type=click.Path(path_type=Path),
              help="Fixture directory to write.")
@click.option("--backend", default="classical", show_default=True,
              type=click.Choice(["classical", "hf"]))
@click.option("--stages", default=",".join(ALL_STAGES), show_default=True,
              help="Comma-separated subset of: " + ", ".join(ALL_STAGES))
@click.option("--size", default=0, show_default=True,
              help="Resize inputs to SIZE x SIZE (0 keeps the original).")
@click.option("--max-masks", default=100, show_default=True)
@click.option("--lexicon", default=None, type=click.Path(exists=True),
              help="Stopword lexicon file (default: the engine's bundled one).")
@click.option("--fastsam-weights", default=None, type=click.Path(),
              help="FastSAM checkpoint for the hf backend.")
def main(images, out, backend, stages, size, max_masks, lexicon, fastsam_weights):
    """Export images as an engine fixture directory (manifest + binary files)."""
    stage_tuple = tuple(s.strip() for s in stages.split(",") if s.strip())
    kwargs = {}
    if backend == "hf":
        kwargs["fastsam_weights"] = fastsam_weights
    job = ExportJob(
        out_dir=out,
        backend_name=backend,
        stages=stage_tuple,
        size=size,
        lexicon_path=lexicon,
        max_masks=max_masks,
        backend_kwargs=kwargs,
    )
    result = run_export(_resolve_images(images), job)
    click.echo(f"wrote {result.manifest_path} ({len(result.image_ids)} image(s))")
    for image_id, stage, message in result.failures:
        click.echo(f"partial: {image_id}/{stage}: {message}", err=True)
    sys.exit(0)


if __name__ == "__main__":
    main()
