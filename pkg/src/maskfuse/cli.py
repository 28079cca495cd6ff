"""Command-line interface: run, eval, bench, gen, validate.

Exit codes: 0 ok, 1 input error (bad fixtures/flags), 2 internal error.
Flag precedence: command line > --config file > built-in defaults.
"""
from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .errors import EngineError
from .evaluation import ConfusionMatrix, accumulate, finalize
from .fixtures import SceneSpec, generate_synthetic_scene, load_manifest, read_label_grid
from .fusion import FusionConfig
from .pipeline import MODES, PipelineConfig, run_bench, run_pipeline
from . import report as report_mod


def _effective_config(ctx, config_file, **flags) -> PipelineConfig:
    """Overlay: defaults < config file < explicitly given flags."""
    values = dict(flags)
    if config_file:
        try:
            file_values = json.loads(Path(config_file).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise click.UsageError(f"config file {config_file}: {e}")
        for key, val in file_values.items():
            if key not in values:
                raise click.UsageError(f"config file {config_file}: unknown key {key!r}")
            source = ctx.get_parameter_source(key)
            if source is not None and source.name != "COMMANDLINE":
                values[key] = val
    return PipelineConfig(
        mode=values["mode"],
        mask_budget=values["budget"],
        top_k=values["top_k"],
        fusion=FusionConfig(
            tau_closed=values["tau_closed"],
            tau_open=values["tau_open"],
            delta_margin=values["delta_margin"],
        ),
        strict_embeddings=values["strict_embeddings"],
        workers=values["workers"],
    )


def _pipeline_options(f):
    for option in reversed(
        [
            click.option("--mode", type=click.Choice(MODES), default="full", show_default=True),
            click.option("--budget", type=int, default=100, show_default=True,
                         help="Max masks kept per image (highest confidence first)."),
            click.option("--top-k", "top_k", type=int, default=3, show_default=True),
            click.option("--tau-closed", "tau_closed", type=float, default=0.5,
                         show_default=True),
            click.option("--tau-open", "tau_open", type=float, default=0.25, show_default=True),
            click.option("--delta-margin", "delta_margin", type=float, default=0.05,
                         show_default=True),
            click.option("--strict-embeddings", "strict_embeddings", is_flag=True,
                         default=False),
            click.option("--workers", type=int, default=1, show_default=True),
            click.option("--config", "config_file", type=click.Path(), default=None,
                         help="JSON file with any of the above keys."),
        ]
    ):
        f = option(f)
    return f


@click.group()
def cli():
    """Deterministic semantic labeling engine for class-agnostic masks."""


@cli.command()
@click.option("--manifest", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path())
@click.option("--palette", is_flag=True, default=False,
              help="Also export color PNGs of the rendered maps.")
@_pipeline_options
@click.pass_context
def run(ctx, manifest, out, palette, config_file, **flags):
    """Run the full labeling pipeline on a fixture manifest."""
    config = _effective_config(ctx, config_file, **flags)
    loaded = load_manifest(manifest)
    result = run_pipeline(loaded, config)
    report_mod.write_run_outputs(
        out, config, result, palette_taxonomy=loaded.output_taxonomy if palette else None
    )
    n_masks = sum(len(r.labels) for r in result.images)
    click.echo(f"labeled {n_masks} masks across {len(result.images)} image(s) -> {out}")
    if result.eval_report is not None:
        click.echo(f"mIoU = {result.eval_report.miou:.4f}")


@cli.command("eval")
@click.option("--manifest", required=True, type=click.Path(),
              help="Manifest providing ground-truth maps and the taxonomy.")
@click.option("--pred", required=True, type=click.Path(),
              help="Directory of rendered <image_id>.sfsl files (a run's output).")
@click.option("--out", required=True, type=click.Path())
def eval_cmd(manifest, pred, out):
    """Score rendered maps against the manifest's ground truth."""
    loaded = load_manifest(manifest)
    pred_dir = Path(pred)
    if (pred_dir / "rendered").is_dir():
        pred_dir = pred_dir / "rendered"
    gt_images = [img for img in loaded.images if img.ground_truth is not None]
    if not gt_images:
        raise EngineError(f"manifest {manifest} has no ground-truth maps")
    tax = gt_images[0].gt_taxonomy
    cm = ConfusionMatrix.empty(tax)
    for img in gt_images:
        ppath = pred_dir / f"{img.image_id}.sfsl"
        if not ppath.exists():
            raise EngineError(f"no prediction for image {img.image_id!r} at {ppath}")
        pred_map = read_label_grid(ppath, taxonomy_id=tax.taxonomy_id)
        accumulate(cm, img.ground_truth, pred_map, void_id=tax.void_id)
    result = finalize(cm, tax)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report_mod.write_eval_report(out_dir, result)
    click.echo(f"mIoU = {result.miou:.4f} over {result.evaluated_pixels} pixels -> {out}")


@cli.command()
@click.option("--manifest", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path())
@click.option("--iterations", type=int, default=5, show_default=True)
@_pipeline_options
@click.pass_context
def bench(ctx, manifest, out, iterations, config_file, **flags):
    """Time the pipeline stages (first iteration is warm-up)."""
    config = _effective_config(ctx, config_file, **flags)
    loaded = load_manifest(manifest)
    stats = run_bench(loaded, config, iterations)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report_mod.write_timing_report(out_dir, [stats])
    (out_dir / "config.json").write_text(
        json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    click.echo(
        f"mode={stats.mode}: total median {stats.total_median * 1e3:.2f} ms "
        f"over {stats.iterations} measured iteration(s) -> {out}"
    )


@cli.command()
@click.option("--out", required=True, type=click.Path())
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--width", type=int, default=256, show_default=True)
@click.option("--height", type=int, default=256, show_default=True)
@click.option("--regions", type=int, default=12, show_default=True)
@click.option("--taxonomy-size", "taxonomy_size", type=int, default=8, show_default=True)
@click.option("--dim", type=int, default=0, show_default=True,
              help="Embedding dim (0 = taxonomy size).")
@click.option("--closed-maps", "closed_maps", type=int, default=2, show_default=True)
@click.option("--closed-corruption", "closed_corruption", type=float, default=0.0,
              show_default=True)
@click.option("--caption-noise", "caption_noise", type=float, default=0.0, show_default=True)
@click.option("--distractors", type=int, default=0, show_default=True)
def gen(out, seed, **spec_kwargs):
    """Generate a deterministic synthetic fixture scene."""
    spec = SceneSpec(
        width=spec_kwargs["width"],
        height=spec_kwargs["height"],
        regions=spec_kwargs["regions"],
        taxonomy_size=spec_kwargs["taxonomy_size"],
        embedding_dim=spec_kwargs["dim"],
        closed_maps=spec_kwargs["closed_maps"],
        closed_corruption=spec_kwargs["closed_corruption"],
        caption_noise=spec_kwargs["caption_noise"],
        distractors=spec_kwargs["distractors"],
    )
    manifest_path = generate_synthetic_scene(out, seed, spec)
    click.echo(f"wrote {manifest_path}")


@cli.command()
@click.option("--manifest", required=True, type=click.Path())
def validate(manifest):
    """Load a manifest and check every invariant; exit nonzero on problems."""
    loaded = load_manifest(manifest)
    n_masks = sum(len(img.mask_set) for img in loaded.images)
    click.echo(
        f"ok: {len(loaded.images)} image(s), {n_masks} mask(s), "
        f"{len(loaded.taxonomies)} taxonomies, 0 errors"
    )


def main():
    try:
        cli(standalone_mode=False)
    except click.exceptions.Abort:
        sys.exit(1)
    except click.ClickException as e:
        e.show()
        sys.exit(1)
    except EngineError as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(1)
    except Exception as e:  # pragma: no cover - defensive
        click.echo(f"internal error: {type(e).__name__}: {e}", err=True)
        sys.exit(2)


if __name__ == "__main__":
    main()
