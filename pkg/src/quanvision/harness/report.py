"""Write a ComparisonReport to disk: metric files, summaries, plots, annotations."""

from __future__ import annotations

import csv
import json
import logging
from pathlib import Path

from ..imaging import save_annotation, write_sidecar
from ..nn import write_metrics
from .experiments import MODELS, ComparisonReport
from .plotting import plot_accuracy, plot_curves

log = logging.getLogger(__name__)

SUMMARY_FIELDS = (
    "run", "model", "setting", "seed", "train_count", "test_count", "epochs",
    "final_train_acc", "final_test_acc", "final_test_loss", "val_loss_variance", "test_hash",
)
LOCALIZATION_FIELDS = ("setting", "model", "source_id", "region_accuracy", "predicted_positive", "file")


def _aggregate(report: ComparisonReport) -> dict:
    out = {}
    for setting in report.settings:
        out[setting] = {
            model: {
                "mean_final_test_acc": report.mean_accuracy(model, setting),
                "mean_val_loss_variance": report.mean_variance(model, setting),
                "seeds": [r.seed for r in report.select(model, setting)],
            }
            for model in MODELS
        }
    return out


def _shared_test_sets(report: ComparisonReport) -> bool:
    for setting in report.settings:
        hashes = {r.test_hash for r in report.runs if r.setting == setting}
        if len(hashes) != 1:
            return False
    return True


def emit_report(report: ComparisonReport, output_dir) -> dict[str, Path]:
    """Write every report artifact; returns the main paths by role.

    Everything except ``timings.json`` is a pure function of the report's
    metrics, so reruns overwrite files with identical bytes.
    """
    out = Path(output_dir)
    metrics_dir = out / "metrics"
    metrics_dir.mkdir(parents=True, exist_ok=True)
    for run in report.runs:
        write_metrics(run.history, metrics_dir / f"{run.name}.csv")

    summary = out / "summary.csv"
    with summary.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SUMMARY_FIELDS)
        for r in report.runs:
            last = r.history[-1]
            writer.writerow([
                r.name, r.model, r.setting, r.seed, r.train_count, r.test_count, len(r.history),
                repr(last.train_acc), repr(last.test_acc), repr(last.test_loss), repr(r.val_loss_variance),
                r.test_hash,
            ])

    payload = {
        "stage": report.stage,
        "settings": _aggregate(report),
        "shared_test_sets": _shared_test_sets(report),
        "claims": report.claims(),
    }
    if report.reference_accuracy is not None:
        payload["reference_accuracy"] = report.reference_accuracy
        payload["validation_accuracy"] = {s: report.mean_accuracy("qnn", s) for s in report.settings}
    (out / "report.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    (out / "timings.json").write_text(json.dumps(report.timings, indent=2, sort_keys=True) + "\n")

    paths = {"summary": summary, "report": out / "report.json", "metrics": metrics_dir}
    paths["curves"] = out / "curves.png"
    plot_curves(report, paths["curves"])
    paths["accuracy"] = out / "accuracy.png"
    plot_accuracy(report, paths["accuracy"])

    if report.localization:
        rows = []
        for loc in report.localization:
            folder = out / "annotations" / loc.setting / loc.model
            folder.mkdir(parents=True, exist_ok=True)
            image = folder / f"{loc.source_id}.png"
            save_annotation(loc.annotation, image)
            write_sidecar(loc.annotation.records, folder / f"{loc.source_id}.csv")
            positives = sum(r.label for r in loc.annotation.records)
            rows.append([loc.setting, loc.model, loc.source_id, repr(loc.region_accuracy), positives,
                         image.relative_to(out).as_posix()])
        paths["localization"] = out / "localization.csv"
        with paths["localization"].open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(LOCALIZATION_FIELDS)
            writer.writerows(rows)
    log.info("report written to %s", out)
    return paths
