"""Command-line entry point and experiment orchestration.

Commands: ``generate-corpus``, ``pretrain``, ``lineval``, ``render-map`` and
``ablate``. Every command takes ``--config`` (a declarative YAML run file),
plus ``--seed`` and ``--out`` overrides, echoes the config verbatim into its
output directory, and is deterministic given (config, seed, inputs).

Exit codes: 0 success, 1 configuration error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import csv
import dataclasses
import functools
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import click
import torch

from . import corpus as corpus_mod
from .config import RunConfig, echo_config, load_run_config
from .corpus import CorpusPaths, SlideImage, build_corpus, load_labeled_patches, read_manifest
from .errors import ConfigError, DataError, NumericError
from .lineval import (
    EvalReport,
    balanced_subsample,
    cached_features,
    evaluate_classifiers,
    train_linear,
    write_report,
)
from .maps import render_map
from .model import LinearClassifier, build_model, load_checkpoint, state_digest
from .trainer import PretrainResult, pretrain

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


# ---------------------------------------------------------------------------
# Pipeline functions (CLI-independent; also used by the acceptance suite)
# ---------------------------------------------------------------------------


def run_generate_corpus(cfg: RunConfig, out_dir: Path, seed: int) -> dict[str, dict[str, int]]:
    counts = build_corpus(cfg.corpus, seed, out_dir)
    return counts


def run_pretrain(
    cfg: RunConfig,
    corpus_dir: Path,
    out_dir: Path,
    seed: int,
    nearby_count: int | None = None,
    variant: str | None = None,
) -> PretrainResult:
    trainer_cfg = cfg.trainer
    if nearby_count is not None:
        trainer_cfg = dataclasses.replace(trainer_cfg, nearby_count=nearby_count)
    if variant is not None:
        trainer_cfg = dataclasses.replace(trainer_cfg, variant=variant)
    trainer_cfg.validate()

    paths = CorpusPaths(Path(corpus_dir))
    manifest_path = paths.unlabeled_manifest(trainer_cfg.nearby_count)
    if not manifest_path.exists():
        raise DataError(
            f"no unlabeled manifest for nearby count {trainer_cfg.nearby_count}: "
            f"{manifest_path} (run generate-corpus with this count first)"
        )
    manifest = read_manifest(manifest_path)
    if manifest.nearby_count != trainer_cfg.nearby_count:
        raise DataError(
            f"manifest nearby count {manifest.nearby_count} != trainer "
            f"nearby count {trainer_cfg.nearby_count}"
        )
    groups = corpus_mod.load_patch_groups(manifest, paths.patches_dir(trainer_cfg.nearby_count))
    encoder, head = build_model(cfg.encoder, cfg.projection, seed)
    return pretrain(groups, encoder, head, trainer_cfg, cfg.augment, out_dir, seed)


def _classifier_bundle_path(out_dir: Path, fraction: float) -> Path:
    return out_dir / f"classifiers_f{fraction * 100:g}.pt"


def save_classifiers(path: Path, classifiers: list[LinearClassifier], meta: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "format_version": 1,
            "in_dim": classifiers[0].linear.in_features,
            "num_classes": classifiers[0].linear.out_features,
            "states": [clf.state_dict() for clf in classifiers],
            "meta": meta,
        },
        path,
    )


def load_classifiers(path: Path) -> list[LinearClassifier]:
    if not Path(path).exists():
        raise DataError(f"classifier bundle not found: {path}")
    payload = torch.load(path, map_location="cpu")
    classifiers = []
    for state in payload["states"]:
        clf = LinearClassifier(payload["in_dim"], payload["num_classes"])
        clf.load_state_dict(state)
        clf.eval()
        classifiers.append(clf)
    return classifiers


def run_lineval(
    cfg: RunConfig,
    corpus_dir: Path,
    out_dir: Path,
    seed: int,
    checkpoint: Path | None,
    baseline: str | None = None,
    fractions: tuple[float, ...] | None = None,
) -> dict[float, EvalReport]:
    """Linear-probe a checkpointed (or random-init baseline) encoder."""
    if checkpoint is None and baseline is None:
        raise ConfigError("lineval needs --checkpoint or --baseline random-init")
    paths = CorpusPaths(Path(corpus_dir))
    manifest = read_manifest(paths.labeled_manifest)
    patches_dir = paths.patches_dir(None)
    train_images, train_labels = load_labeled_patches(manifest, patches_dir, corpus_mod.SPLIT_TRAIN)
    test_images, test_labels = load_labeled_patches(manifest, patches_dir, corpus_mod.SPLIT_TEST)
    if not train_images or not test_images:
        raise DataError("labeled manifest lacks train or test records")

    if baseline is not None:
        if baseline != "random-init":
            raise ConfigError(f"unknown baseline {baseline!r}")
        encoder, _ = build_model(cfg.encoder, cfg.projection, seed)
        checkpoint_id = f"random-init-seed{seed}-{state_digest(encoder)}"
    else:
        encoder, _, _ = load_checkpoint(checkpoint)
        checkpoint_id = f"{Path(checkpoint).stem}-{state_digest(encoder)}"

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cache_dir = out_dir / "cache"
    train_features = cached_features(
        cache_dir / f"{checkpoint_id}_train.npz", encoder, train_images, cfg.eval_transform
    )
    test_features = cached_features(
        cache_dir / f"{checkpoint_id}_test.npz", encoder, test_images, cfg.eval_transform
    )

    reports: dict[float, EvalReport] = {}
    chosen_fractions = fractions if fractions is not None else cfg.lineval.fractions
    for fraction in chosen_fractions:
        subset = balanced_subsample(train_labels, fraction, seed)
        classifiers = train_linear(
            train_features[subset],
            train_labels[subset],
            manifest.num_classes,
            cfg.lineval,
            cfg.lineval.batch_size_for(fraction),
            seed,
        )
        report = evaluate_classifiers(
            classifiers,
            test_features,
            test_labels,
            manifest.num_classes,
            checkpoint_id=checkpoint_id,
            fraction=fraction,
            seed=seed,
        )
        pct = f"{fraction * 100:g}"
        write_report(report, out_dir / f"report_f{pct}.txt", out_dir / f"folds_f{pct}.csv")
        save_classifiers(
            _classifier_bundle_path(out_dir, fraction),
            classifiers,
            meta={"checkpoint": checkpoint_id, "fraction": fraction, "seed": seed},
        )
        reports[fraction] = report

    with (out_dir / "summary.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["fraction_pct", "macro_f1", "balanced_accuracy"])
        for fraction in chosen_fractions:
            r = reports[fraction]
            writer.writerow(
                [
                    f"{fraction * 100:g}",
                    f"{r.macro_f1 * 100:.4f}",
                    f"{r.balanced_accuracy * 100:.4f}",
                ]
            )
    return reports


def run_render_map(
    cfg: RunConfig,
    slide_png: Path,
    mask_png: Path,
    checkpoint: Path,
    classifiers_path: Path,
    out_dir: Path,
) -> float:
    slide = SlideImage(
        slide_id=Path(slide_png).stem,
        pixels=corpus_mod.load_image(slide_png),
        mask=corpus_mod.load_mask(mask_png),
    )
    encoder, _, _ = load_checkpoint(checkpoint)
    classifiers = load_classifiers(classifiers_path)
    return render_map(
        slide,
        cfg.corpus.patch_size,
        encoder,
        classifiers,
        cfg.eval_transform,
        out_dir,
        cfg.corpus.num_classes,
    )


def _ablation_cell(
    cfg: RunConfig, corpus_dir: Path, cell_dir: Path, n: int, variant: str, seed: int
) -> dict[str, object]:
    result = run_pretrain(cfg, corpus_dir, cell_dir / "pretrain", seed, nearby_count=n, variant=variant)
    reports = run_lineval(
        cfg,
        corpus_dir,
        cell_dir / "lineval",
        seed,
        checkpoint=result.final_checkpoint,
        fractions=cfg.ablation.fractions,
    )
    row: dict[str, object] = {"n": n, "variant": variant, "status": "ok"}
    for fraction, report in reports.items():
        pct = f"{fraction * 100:g}"
        row[f"f1_{pct}"] = f"{report.macro_f1 * 100:.4f}"
        row[f"ba_{pct}"] = f"{report.balanced_accuracy * 100:.4f}"
    return row


def run_ablation(
    cfg: RunConfig, corpus_dir: Path, out_dir: Path, seed: int, jobs: int = 1
) -> list[dict[str, object]]:
    """Pretrain + evaluate every (nearby count, variant) grid cell.

    Failed cells are marked and the remaining cells still run.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cells = [(n, v) for n in cfg.ablation.n_values for v in cfg.ablation.variants]
    rows: list[dict[str, object]] = []

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = {
                (n, v): pool.submit(
                    _ablation_cell, cfg, corpus_dir, out_dir / f"n{n}_{v}", n, v, seed
                )
                for n, v in cells
            }
            for n, v in cells:
                try:
                    rows.append(futures[(n, v)].result())
                except Exception as exc:  # cell isolation: mark and continue
                    rows.append({"n": n, "variant": v, "status": f"failed: {exc}"})
    else:
        for n, v in cells:
            try:
                rows.append(_ablation_cell(cfg, corpus_dir, out_dir / f"n{n}_{v}", n, v, seed))
            except Exception as exc:
                rows.append({"n": n, "variant": v, "status": f"failed: {exc}"})

    columns = ["n", "variant", "status"]
    for fraction in cfg.ablation.fractions:
        pct = f"{fraction * 100:g}"
        columns += [f"f1_{pct}", f"ba_{pct}"]
    with (out_dir / "ablation.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([row.get(col, "NA") for col in columns])
    return rows


# ---------------------------------------------------------------------------
# Click commands
# ---------------------------------------------------------------------------


def _handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigError as exc:
            click.echo(f"config error: {exc}", err=True)
            sys.exit(EXIT_CONFIG)
        except (DataError, FileNotFoundError) as exc:
            click.echo(f"data error: {exc}", err=True)
            sys.exit(EXIT_DATA)
        except NumericError as exc:
            click.echo(f"numeric failure: {exc}", err=True)
            sys.exit(EXIT_NUMERIC)

    return wrapper


def _load(config_path: str, seed: int | None, out: str | None) -> tuple[RunConfig, int, Path]:
    cfg = load_run_config(config_path)
    effective_seed = cfg.seed if seed is None else seed
    out_dir = Path(out) if out is not None else Path(cfg.output_dir)
    return cfg, effective_seed, out_dir


_common = [
    click.option("--config", "config_path", required=True, type=click.Path(), help="Run config YAML."),
    click.option("--seed", type=int, default=None, help="Override the config seed."),
    click.option("--out", type=click.Path(), default=None, help="Override the output directory."),
]


def _with_common(fn):
    for opt in reversed(_common):
        fn = opt(fn)
    return fn


@click.group()
def main() -> None:
    """Contrastive pretraining on tile neighborhoods, with linear-probe evaluation."""


@main.command("generate-corpus")
@_with_common
@_handle_errors
def cmd_generate_corpus(config_path: str, seed: int | None, out: str | None) -> None:
    """Generate slides and extract unlabeled/labeled patch manifests."""
    cfg, effective_seed, out_dir = _load(config_path, seed, out)
    corpus_dir = out_dir / "corpus"
    counts = run_generate_corpus(cfg, corpus_dir, effective_seed)
    echo_config(config_path, cfg, corpus_dir)
    click.echo(f"corpus written to {corpus_dir}")
    click.echo(f"{'set':<16}{'records':>10}")
    for name, parts in counts.items():
        total = sum(parts.values())
        detail = ", ".join(f"{k}={v}" for k, v in parts.items())
        click.echo(f"{name:<16}{total:>10}  ({detail})")


@main.command("pretrain")
@_with_common
@click.option("--corpus", "corpus_dir", required=True, type=click.Path(), help="generate-corpus output dir.")
@_handle_errors
def cmd_pretrain(config_path: str, seed: int | None, out: str | None, corpus_dir: str) -> None:
    """Self-supervised pretraining; writes trace.csv and checkpoints."""
    cfg, effective_seed, out_dir = _load(config_path, seed, out)
    run_dir = out_dir / "pretrain"
    result = run_pretrain(cfg, Path(corpus_dir), run_dir, effective_seed)
    echo_config(config_path, cfg, run_dir)
    click.echo(f"trace: {result.trace_path}")
    click.echo(f"final checkpoint: {result.final_checkpoint}")


@main.command("lineval")
@_with_common
@click.option("--corpus", "corpus_dir", required=True, type=click.Path(), help="generate-corpus output dir.")
@click.option("--checkpoint", type=click.Path(), default=None, help="Encoder checkpoint to probe.")
@click.option(
    "--baseline",
    type=click.Choice(["random-init"]),
    default=None,
    help="Evaluate an untrained encoder instead of a checkpoint.",
)
@_handle_errors
def cmd_lineval(
    config_path: str,
    seed: int | None,
    out: str | None,
    corpus_dir: str,
    checkpoint: str | None,
    baseline: str | None,
) -> None:
    """Linear-probe evaluation over the configured label fractions."""
    cfg, effective_seed, out_dir = _load(config_path, seed, out)
    run_dir = out_dir / ("lineval_baseline" if baseline else "lineval")
    reports = run_lineval(
        cfg,
        Path(corpus_dir),
        run_dir,
        effective_seed,
        checkpoint=None if checkpoint is None else Path(checkpoint),
        baseline=baseline,
    )
    echo_config(config_path, cfg, run_dir)
    click.echo(f"{'fraction':>9}  {'macro-F1':>9}  {'bal-acc':>9}")
    for fraction, report in reports.items():
        click.echo(
            f"{fraction * 100:>8g}%  {report.macro_f1 * 100:>9.2f}  "
            f"{report.balanced_accuracy * 100:>9.2f}"
        )


@main.command("render-map")
@_with_common
@click.option("--slide", "slide_png", required=True, type=click.Path(), help="Slide PNG.")
@click.option("--mask", "mask_png", required=True, type=click.Path(), help="Class-mask PNG.")
@click.option("--checkpoint", required=True, type=click.Path(), help="Encoder checkpoint.")
@click.option("--classifiers", "classifiers_path", required=True, type=click.Path(), help="Fold classifier bundle from lineval.")
@_handle_errors
def cmd_render_map(
    config_path: str,
    seed: int | None,
    out: str | None,
    slide_png: str,
    mask_png: str,
    checkpoint: str,
    classifiers_path: str,
) -> None:
    """Classify every tile of a slide and write color-coded maps."""
    cfg, _, out_dir = _load(config_path, seed, out)
    run_dir = out_dir / "maps"
    accuracy = run_render_map(
        cfg, Path(slide_png), Path(mask_png), Path(checkpoint), Path(classifiers_path), run_dir
    )
    echo_config(config_path, cfg, run_dir)
    click.echo(f"tile accuracy vs mask: {accuracy * 100:.2f}%")


@main.command("ablate")
@_with_common
@click.option("--corpus", "corpus_dir", required=True, type=click.Path(), help="generate-corpus output dir.")
@click.option("--jobs", type=int, default=1, show_default=True, help="Parallel grid cells.")
@_handle_errors
def cmd_ablate(
    config_path: str, seed: int | None, out: str | None, corpus_dir: str, jobs: int
) -> None:
    """Pretrain + evaluate the configured (nearby count, variant) grid."""
    cfg, effective_seed, out_dir = _load(config_path, seed, out)
    run_dir = out_dir / "ablation"
    rows = run_ablation(cfg, Path(corpus_dir), run_dir, effective_seed, jobs=jobs)
    echo_config(config_path, cfg, run_dir)
    for row in rows:
        click.echo(", ".join(f"{k}={v}" for k, v in row.items()))


if __name__ == "__main__":
    main()
