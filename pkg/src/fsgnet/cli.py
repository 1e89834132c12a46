"""Command line interface.

Exit codes: 0 on success, 2 on validation/usage errors, 3 when training
diverges.
"""

import sys
from pathlib import Path

import click
import numpy as np

from . import config as run_config
from .data import (DatasetName, SamplePair, load_dataset, split_dataset)
from .errors import DivergenceError, ValidationError
from .metrics import (METRIC_NAMES, format_report_row, parse_report_row,
                      rank_average)
from .network import (VARIANTS, REFERENCE_PARAMS, build_variant,
                      count_parameters)
from . import pipeline


@click.group()
def cli():
    """Retinal vessel segmentation: train, evaluate, and inspect models."""


def _load_split(dataset, data_root, split):
    pairs = load_dataset(dataset, data_root)
    if split == "all":
        return pairs
    train_pairs, test_pairs = split_dataset(pairs, dataset)
    return train_pairs if split == "train" else test_pairs


def _model_config(cfg):
    return build_variant(cfg["variant"], toggles=run_config.toggles_from(cfg))


dataset_choice = click.Choice([d.value for d in DatasetName])


@cli.command()
@click.option("--config", "config_path", type=click.Path(exists=True),
              default=None, help="YAML recipe file.")
@click.option("--dataset", type=dataset_choice, default=None)
@click.option("--data-root", type=click.Path(), default=None)
@click.option("--variant", type=click.Choice(sorted(VARIANTS)), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--max-epochs", type=int, default=None,
              help="Cap epochs (default: run until early stopping).")
@click.option("--out", "out_path", type=click.Path(), required=True,
              help="Checkpoint output path.")
def train(config_path, dataset, data_root, variant, seed, max_epochs, out_path):
    """Train a model and save the best-validation-F1 checkpoint."""
    overrides = {"dataset": dataset, "variant": variant, "seed": seed,
                 "data_root": data_root, "max_epochs": max_epochs}
    cfg = run_config.load_run_config(config_path, overrides)
    pairs = load_dataset(cfg["dataset"], cfg["data_root"])
    train_pairs, val_pairs = split_dataset(pairs, cfg["dataset"])
    click.echo(f"training variant {cfg['variant']} on {cfg['dataset']} "
               f"({len(train_pairs)} train / {len(val_pairs)} val)")
    ckpt = pipeline.train(_model_config(cfg),
                          run_config.train_config_from(cfg),
                          train_pairs, val_pairs,
                          aug=run_config.augmentation_from(cfg),
                          dataset=cfg["dataset"],
                          max_epochs=cfg["max_epochs"],
                          log_fn=click.echo)
    ckpt.metadata["variant"] = cfg["variant"]
    pipeline.save_checkpoint(ckpt, out_path)
    click.echo(f"saved {out_path} (best val F1 {ckpt.best_val_f1:.3f} "
               f"at epoch {ckpt.epoch})")


@cli.command("eval")
@click.option("--checkpoint", type=click.Path(exists=True), required=True)
@click.option("--dataset", type=dataset_choice, required=True)
@click.option("--data-root", type=click.Path(), default=None)
@click.option("--split", type=click.Choice(["train", "test", "all"]),
              default="test", show_default=True)
@click.option("--per-image", is_flag=True, help="Also print one row per image.")
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="Write the report row(s) to this file.")
def eval_cmd(checkpoint, dataset, data_root, split, per_image, out_path):
    """Evaluate a checkpoint; prints tab-separated metric rows (x100)."""
    ckpt = pipeline.load_checkpoint(checkpoint)
    model = pipeline.model_from_checkpoint(ckpt)
    pairs = _load_split(dataset, data_root, split)
    name = ckpt.metadata.get("variant", "model")
    report, rows = pipeline.evaluate(model, pairs, dataset=dataset,
                                     threshold=ckpt.train_config.threshold)
    header = "\t".join(["model", "dataset"] + [m.upper() for m in METRIC_NAMES])
    lines = [header, format_report_row(name, dataset, report)]
    if per_image:
        lines += [format_report_row(name, f"{dataset}:{sid}", rep)
                  for sid, rep in rows]
    text = "\n".join(lines)
    click.echo(text)
    if out_path:
        Path(out_path).write_text(text + "\n")


@cli.command()
@click.option("--checkpoint", type=click.Path(exists=True), required=True)
@click.option("--image", "image_path", type=click.Path(exists=True), required=True)
@click.option("--out-dir", type=click.Path(), required=True)
def predict(checkpoint, image_path, out_dir):
    """Segment one image; writes a binary mask and per-head probability maps."""
    from .data import _load_image  # single-image entry shares the loaders

    ckpt = pipeline.load_checkpoint(checkpoint)
    model = pipeline.model_from_checkpoint(ckpt)
    image = _load_image(image_path)
    pair = SamplePair(image=image,
                      mask=np.zeros(image.shape[:2], dtype=np.uint8),
                      id=Path(image_path).stem, dataset=DatasetName.DRIVE.value)
    paths = pipeline.predict_to_files(model, pair, out_dir,
                                      threshold=ckpt.train_config.threshold)
    for p in paths:
        click.echo(str(p))


@cli.command("cross-eval")
@click.option("--checkpoint", type=click.Path(exists=True), required=True)
@click.option("--dataset", type=dataset_choice, required=True,
              help="Foreign dataset to transfer to.")
@click.option("--data-root", type=click.Path(), default=None)
@click.option("--split", type=click.Choice(["train", "test", "all"]),
              default="test", show_default=True)
@click.option("--baseline", "baseline_path", type=click.Path(exists=True),
              required=True, help="In-domain report row produced by eval.")
def cross_eval(checkpoint, dataset, data_root, split, baseline_path):
    """Evaluate across domains; each metric carries its delta vs baseline."""
    ckpt = pipeline.load_checkpoint(checkpoint)
    model = pipeline.model_from_checkpoint(ckpt)
    rows = [line for line in Path(baseline_path).read_text().splitlines()
            if line.strip() and not line.startswith("model\t")]
    if not rows:
        raise ValidationError(f"no report rows in {baseline_path}")
    _, base_dataset, baseline, _ = parse_report_row(rows[0])
    pairs = _load_split(dataset, data_root, split)
    report, deltas, _ = pipeline.cross_evaluate(
        model, pairs, dataset, baseline, threshold=ckpt.train_config.threshold)
    name = ckpt.metadata.get("variant", "model")
    click.echo("\t".join(["model", "transfer"] + [m.upper() for m in METRIC_NAMES]))
    click.echo(pipeline.format_cross_row(name, f"{base_dataset}->{dataset}",
                                         report, deltas))


@cli.command()
@click.option("--variant", type=click.Choice(sorted(VARIANTS)), default=None,
              help="Inspect a single variant (default: all).")
def inspect(variant):
    """Print each variant's geometry and parameter count vs its reference."""
    names = [variant] if variant else list(VARIANTS)
    click.echo("\t".join(["variant", "base", "depths", "params",
                          "reference", "within 15%"]))
    for name in names:
        base, depths = VARIANTS[name]
        params = count_parameters(build_variant(name))
        ref = REFERENCE_PARAMS[name]
        ok = abs(params - ref) <= 0.15 * ref
        click.echo(f"{name}\t{base}\t{list(depths)}\t{params:,}\t{ref:,}"
                   f"\t{'yes' if ok else 'NO'}")


@cli.command()
@click.argument("reports", nargs=-1, required=True,
                type=click.Path(exists=True))
def rank(reports):
    """Merge eval report rows and append tie-aware rank averages.

    Models are ranked per dataset on each metric (1 = best, ties share the
    mean rank); a model's Rank Avg is its mean rank across all metrics of the
    datasets it appears in.
    """
    rows = []
    for path in reports:
        for line in Path(path).read_text().splitlines():
            if line.strip() and not line.startswith("model\t"):
                model, dataset, report, _ = parse_report_row(line)
                rows.append((model, dataset, report))
    if len(rows) < 2:
        raise ValidationError("ranking needs at least two report rows")
    by_dataset = {}
    for i, (model, dataset, report) in enumerate(rows):
        by_dataset.setdefault(dataset, []).append(i)
    row_ranks = {i: [] for i in range(len(rows))}
    for dataset, idxs in by_dataset.items():
        if len(idxs) < 2:
            continue
        avgs = rank_average([rows[i][2].values() for i in idxs])
        for pos, i in enumerate(idxs):
            row_ranks[i].append(float(avgs[pos]))
    click.echo("\t".join(["model", "dataset"] + [m.upper() for m in METRIC_NAMES]
                         + ["rank_avg"]))
    for i, (model, dataset, report) in enumerate(rows):
        avg = float(np.mean(row_ranks[i])) if row_ranks[i] else float("nan")
        click.echo(format_report_row(model, dataset, report, rank_avg=avg))


def main(argv=None):
    try:
        cli.main(args=argv, standalone_mode=False)
    except ValidationError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    except DivergenceError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(3)
    except click.UsageError as exc:
        exc.show()
        sys.exit(2)
    except click.ClickException as exc:
        exc.show()
        sys.exit(exc.exit_code)
    except click.exceptions.Abort:
        sys.exit(130)
    return 0


if __name__ == "__main__":
    main()
