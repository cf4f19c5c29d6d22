"""
Report writers: JSON summaries, CSV tables, artifact hashes and SVG plots.
"""
import csv
import hashlib
import json
import logging
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from app.models.relations import DiagnosticsRecord


logger = logging.getLogger(__name__)


def sha256_file(path: str | Path) -> str:
    digest = hashlib.sha256()
    with Path(path).open("rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def artifact_hashes(paths: Iterable[str | Path], root: str | Path | None = None) -> dict[str, str]:
    """SHA-256 of every existing artifact, keyed by path (relative to `root` when given)."""
    hashes = {}
    for path in sorted(Path(p) for p in paths):
        if not path.is_file():
            continue
        key = str(path.relative_to(root)) if root is not None else str(path)
        hashes[key] = sha256_file(path)
    return hashes


def write_json(path: str | Path, payload: Mapping) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=str), encoding="utf-8")
    return path


def write_csv(path: str | Path, fieldnames: Sequence[str], rows: Iterable[Mapping]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=list(fieldnames))
        writer.writeheader()
        writer.writerows(rows)
    return path


def read_csv(path: str | Path) -> list[dict]:
    with Path(path).open(newline="", encoding="utf-8") as handle:
        return list(csv.DictReader(handle))


def plot_layer_metrics(record: DiagnosticsRecord, directory: str | Path) -> list[Path]:
    """
    Render every per-layer metric and the Fourier curves as SVG line plots.

    Plots are secondary renderings of the CSV data.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for name in DiagnosticsRecord.LAYER_METRICS:
        values = getattr(record, name)
        if not values:
            continue
        fig, ax = plt.subplots(figsize=(4, 3))
        ax.plot(range(len(values)), values, marker="o")
        ax.set_xlabel("layer")
        ax.set_ylabel(name)
        fig.tight_layout()
        path = directory / f"{name}.svg"
        fig.savefig(path, format="svg")
        plt.close(fig)
        written.append(path)

    if record.fourier_delta:
        fig, ax = plt.subplots(figsize=(4, 3))
        for layer, curve in enumerate(record.fourier_delta):
            ax.plot(record.fourier_frequencies, curve, label=f"layer {layer}")
        ax.set_xlabel("normalized frequency")
        ax.set_ylabel("delta log amplitude")
        ax.legend(fontsize="small")
        fig.tight_layout()
        path = directory / "fourier_delta_log_amplitude.svg"
        fig.savefig(path, format="svg")
        plt.close(fig)
        written.append(path)
    logger.info(f"Wrote {len(written)} plot(s) to {directory}")
    return written


def plot_epoch_curves(rows: Sequence[Mapping], directory: str | Path) -> list[Path]:
    """Loss and exploitation-rate curves from the epoch log rows."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    epochs = [int(row["epoch"]) for row in rows]
    written = []

    fig, ax = plt.subplots(figsize=(4, 3))
    ax.plot(epochs, [float(row["loss"]) for row in rows])
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    fig.tight_layout()
    path = directory / "loss.svg"
    fig.savefig(path, format="svg")
    plt.close(fig)
    written.append(path)

    measured = [row for row in rows if row.get("R_V_to_O") not in ("", None)]
    if measured:
        fig, ax = plt.subplots(figsize=(4, 3))
        ax.plot([int(r["epoch"]) for r in measured], [float(r["R_V_to_O"]) for r in measured], label="visible")
        ax.plot([int(r["epoch"]) for r in measured], [float(r["R_M_to_O"]) for r in measured], label="mask")
        ax.set_xlabel("epoch")
        ax.set_ylabel("exploitation rate")
        ax.legend(fontsize="small")
        fig.tight_layout()
        path = directory / "exploitation_rate.svg"
        fig.savefig(path, format="svg")
        plt.close(fig)
        written.append(path)
    return written
