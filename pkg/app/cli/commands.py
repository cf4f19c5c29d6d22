"""
Subcommand implementations: gen-data, pretrain, analyze, mask, probe.

Each command takes the resolved RunConfig plus its own arguments, writes its
artifacts under the configured directories and returns the JSON summary it wrote.
"""
import logging
from pathlib import Path
from typing import Optional

import numpy as np

from app.core.config import RunConfig
from app.core.exceptions import (
    ConfigException,
    DatasetException,
    InvalidTextureFamilyException,
    PartitionException,
    RelationException,
)
from app.models.relations import DiagnosticsRecord
from app.models.run import Checkpoint
from app.services.checkpoint import load_checkpoint
from app.services.diagnostics import RelationAnalyzer
from app.services.linear_probe import linear_probe
from app.services.mae import MaskedAutoencoder, patchify
from app.services.masking import informed_mask, mask_count
from app.services.texture_dataset import (
    boundary_fraction,
    gen_texture_dataset,
    load_texture_dataset,
    patch_labels,
    save_texture_dataset,
)
from app.services.trainer import run_pretraining
from app.utils.image_processing import load_images, upsample_grid, write_pgm
from app.utils.reporting import (
    artifact_hashes,
    plot_epoch_curves,
    plot_layer_metrics,
    read_csv,
    write_csv,
    write_json,
)


logger = logging.getLogger(__name__)

MASK_VALUES = {0: 0, 1: 255, 2: 128}


def write_summary(config: RunConfig, command: str, payload: dict, artifacts: list[Path]) -> dict:
    """Write `<command>.json` into the output directory with the resolved config and artifact hashes."""
    output = config.output_path
    summary = {
        "command": command,
        "config": config.model_dump(),
        "artifacts": artifact_hashes(artifacts),
        **payload,
    }
    write_json(output / f"{command}.json", summary)
    return summary


def load_model(path: str | Path, config: RunConfig | None = None) -> tuple[MaskedAutoencoder, Checkpoint]:
    """Rebuild a model from a checkpoint, checking it against the configured geometry when given."""
    checkpoint = load_checkpoint(path, config.model if config is not None else None)
    model = MaskedAutoencoder(checkpoint.model_config)
    model.load_state_arrays(checkpoint.parameters)
    return model, checkpoint


def _dataset_split(config: RunConfig, split: str, limit: Optional[int] = None):
    dataset = load_texture_dataset(config.data.dataset_dir)
    images, regions, labels = dataset.split(split)
    if limit is not None:
        images, regions, labels = images[:limit], regions[:limit], labels[:limit]
    return images, regions, labels


def cmd_gen_data(config: RunConfig) -> dict:
    """Generate the synthetic texture dataset."""
    try:
        manifest, images = gen_texture_dataset(config.data, config.model.image_size)
    except InvalidTextureFamilyException as e:
        raise ConfigException(str(e)) from e
    manifest_path = save_texture_dataset(config.data.dataset_dir, manifest, images)
    logger.info(f"Dataset written to {config.data.dataset_dir}")
    return write_summary(config, "gen-data", {
        "item_count": manifest.item_count,
        "class_count": manifest.class_count,
        "train_size": len(manifest.splits["train"]),
        "val_size": len(manifest.splits["val"]),
        "boundary_patch_fraction": float(np.mean([
            boundary_fraction(image.region, config.model.patch_size) for image in images
        ])),
    }, [manifest_path])


def cmd_pretrain(config: RunConfig, resume: Optional[str] = None) -> dict:
    """Pre-train with the configured mask mode; writes checkpoints, epoch logs and snapshots."""
    if config.data.image_dir:
        folder = load_images(config.data.image_dir, config.model.image_size)
        images = folder.images
    else:
        images, _, _ = _dataset_split(config, "train")

    checkpoint = load_checkpoint(resume, config.model) if resume else None
    output = config.output_path
    record, _ = run_pretraining(config.model, config.train, images, output, checkpoint)

    artifacts = [output / "final.ckpt", output / "epochs.csv", output / "trigger.csv"]
    if record.snapshots:
        rows = [
            {"epoch": epoch, **row}
            for epoch, snapshot in sorted(record.snapshots.items())
            for row in snapshot.rows()
        ]
        artifacts.append(write_csv(output / "snapshots.csv", ["epoch", "metric", "layer", "bin", "value"], rows))
    if config.analysis.plots:
        artifacts.extend(plot_epoch_curves(read_csv(output / "epochs.csv"), output / "plots"))

    return write_summary(config, "pretrain", {
        "trigger_epoch": record.trigger_epoch,
        "trigger_source": record.trigger_source,
        "final_loss": record.losses[-1] if record.losses else None,
        "phases": {phase: record.phases.count(phase) for phase in ("random", "informed")},
    }, artifacts)


def _layer_tables(record: DiagnosticsRecord, directory: Path) -> list[Path]:
    encoder_columns = ["sigma_f", "sigma_s", "kld_attention", "kld_cosine", "nmi", "attention_distance", "mu_intra", "mu_inter"]
    decoder_columns = ["mask_token_variance", "kld_decoder", "exploitation_visible", "exploitation_mask"]

    def table(columns: list[str]) -> list[dict]:
        depth = max(len(getattr(record, c)) for c in columns)
        return [
            {"layer": layer, **{c: (getattr(record, c)[layer] if layer < len(getattr(record, c)) else "") for c in columns}}
            for layer in range(depth)
        ]

    fourier_rows = [
        {"layer": layer, "bin": index, "frequency": record.fourier_frequencies[index], "delta_log_amplitude": value}
        for layer, curve in enumerate(record.fourier_delta)
        for index, value in enumerate(curve)
    ]
    return [
        record.to_csv(directory / "diagnostics.csv"),
        record.to_json(directory / "diagnostics.json"),
        write_csv(directory / "encoder_layers.csv", ["layer", *encoder_columns], table(encoder_columns)),
        write_csv(directory / "decoder_layers.csv", ["layer", *decoder_columns], table(decoder_columns)),
        write_csv(directory / "fourier.csv", ["layer", "bin", "frequency", "delta_log_amplitude"], fourier_rows),
    ]


def cmd_analyze(config: RunConfig, checkpoint_path: str) -> dict:
    """Relation diagnostics of a checkpoint over the validation subset."""
    model, _ = load_model(checkpoint_path, config)
    reference = None
    notices = []
    if config.analysis.reference_checkpoint:
        reference, _ = load_model(config.analysis.reference_checkpoint, config)
    else:
        notices.append("no reference checkpoint: KLD metrics skipped")
        logger.warning("No reference checkpoint configured; KLD metrics are skipped")

    if config.data.image_dir:
        images = load_images(config.data.image_dir, config.model.image_size).images[:config.analysis.subset_size]
    else:
        images, _, _ = _dataset_split(config, "val", config.analysis.subset_size)
    if len(images) == 0:
        raise DatasetException("No images to analyze")

    patches = patchify(images.astype(model.dtype), model.config.patch_size)
    analyzer = RelationAnalyzer(
        model,
        config.analysis,
        reference,
        seed=config.train.seed,
        negative_similarity=config.train.negative_similarity,
    )
    record = analyzer.analyze(patches, config.train.batch_size)

    directory = config.output_path / "analysis"
    directory.mkdir(parents=True, exist_ok=True)
    artifacts = _layer_tables(record, directory)
    if config.analysis.plots:
        artifacts.extend(plot_layer_metrics(record, directory / "plots"))
    return write_summary(config, "analyze", {
        "checkpoint": str(checkpoint_path),
        "reference_checkpoint": config.analysis.reference_checkpoint,
        "images": int(len(images)),
        "notices": notices,
    }, artifacts)


def cmd_mask(config: RunConfig, checkpoint_path: str, image_dir: Optional[str] = None, limit: int = 8) -> dict:
    """Informed-mask visualizations: mask and bipartition maps as PGM plus JSON per image."""
    model, _ = load_model(checkpoint_path, config)
    regions = None
    if image_dir:
        folder = load_images(image_dir, config.model.image_size)
        images, names = folder.images[:limit], [Path(n).stem for n in folder.names[:limit]]
    else:
        images, regions, _ = _dataset_split(config, "val", limit)
        names = [f"val_{i:04d}" for i in range(len(images))]

    analysis = config.analysis
    train = config.train
    grid = model.config.grid_size
    patch_size = model.config.patch_size
    directory = config.output_path / "masks"
    directory.mkdir(parents=True, exist_ok=True)

    patches = patchify(images.astype(model.dtype), patch_size)
    trace = model.trace_intact(patches, with_decoder=train.mask_layer_source == "decoder")
    embeddings = trace.layer_embeddings(train.mask_layer_source, train.mask_layer_index)

    artifacts, results, failures = [], [], []
    for i, name in enumerate(names):
        try:
            result = informed_mask(
                np.asarray(embeddings[i], dtype=np.float64),
                analysis.mask_ratio,
                analysis.hint_ratio,
                analysis.mask_hint_strategy,
                (train.seed, i),
                negative=train.negative_similarity,
            )
        except (PartitionException, RelationException) as e:
            logger.warning(f"{name}: {e}")
            failures.append({"image": name, "error": str(e)})
            continue

        flags = result.mask.flags().reshape(grid, grid)
        mask_map = np.vectorize(MASK_VALUES.get)(flags).astype(np.uint8)
        object_map = np.zeros(model.num_tokens, dtype=np.uint8)
        object_map[result.partition.object_tokens] = 255
        mask_path = directory / f"{name}_mask.pgm"
        partition_path = directory / f"{name}_partition.pgm"
        write_pgm(mask_path, upsample_grid(mask_map, patch_size))
        write_pgm(partition_path, upsample_grid(object_map.reshape(grid, grid), patch_size))

        entry = {
            "image": name,
            "mask": result.mask.to_dict(),
            "masked_before_hints": mask_count(analysis.mask_ratio, model.num_tokens),
            "object_tokens": result.partition.object_tokens.tolist(),
            "partition_labels": result.partition.labels().tolist(),
            "relevance_scores": result.ranking.scores.tolist(),
            "ncut_energy": result.partition.energy,
        }
        if regions is not None:
            foreground = np.flatnonzero(patch_labels(regions[i], patch_size))
            top = result.ranking.order[:entry["masked_before_hints"]]
            entry["foreground_tokens"] = int(foreground.size)
            entry["foreground_coverage"] = (
                float(np.isin(foreground, top).mean()) if foreground.size else None
            )
        json_path = write_json(directory / f"{name}.json", entry)
        artifacts.extend([mask_path, partition_path, json_path])
        results.append(entry)

    coverage = [r["foreground_coverage"] for r in results if r.get("foreground_coverage") is not None]
    return write_summary(config, "mask", {
        "checkpoint": str(checkpoint_path),
        "images": len(names),
        "masked": len(results),
        "failures": failures,
        "median_foreground_coverage": float(np.median(coverage)) if coverage else None,
    }, artifacts)


def cmd_probe(config: RunConfig, checkpoint_path: str, compare: Optional[list[str]] = None) -> dict:
    """Linear-probe accuracy of one checkpoint, or a comparison table over several."""
    if config.data.image_dir:
        raise DatasetException("Linear probing needs class labels; image folders carry none")
    train_images, _, train_labels = _dataset_split(config, "train")
    val_images, _, val_labels = _dataset_split(config, "val")

    rows = []
    for path in [checkpoint_path, *(compare or [])]:
        model, checkpoint = load_model(path, config)
        report = linear_probe(model, train_images, train_labels, val_images, val_labels, config.probe)
        rows.append({
            "checkpoint": str(path),
            "mask_mode": (checkpoint.train_config or {}).get("mask_mode", ""),
            "epochs": checkpoint.epoch,
            **report.to_dict(),
        })

    directory = config.output_path
    artifacts = [write_json(directory / "probe_report.json", {"results": rows})]
    if len(rows) > 1:
        artifacts.append(write_csv(directory / "probe_comparison.csv", list(rows[0].keys()), rows))
    return write_summary(config, "probe", {
        "accuracy": rows[0]["accuracy"],
        "num_classes": rows[0]["num_classes"],
        "train_size": rows[0]["train_size"],
        "val_size": rows[0]["val_size"],
        "results": rows,
    }, artifacts)
