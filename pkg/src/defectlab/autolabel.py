"""Machine labeling at scale, with provenance and optional quality evaluation.

Every exported label carries a label_source of the form autolabel:<checksum>
so downstream training can always distinguish machine labels from human ones.
Machine labels never overwrite existing assignments; precedence is
human > oracle > autolabel and a violation raises rather than warns.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from . import classifier, metrics
from .classifier import Model
from .dataset import DatasetManifest, Sample, copy_sample, preprocess_image, save_manifest
from .errors import DecodeError, EmptyDatasetError, LabelPrecedenceError, RangeError
from .metrics import EvalReport

import numpy as np
import torch


@dataclass
class AutoLabelReport:
    """Outcome counts plus an EvalReport when ground truth was available."""

    labeled: int
    skipped: int
    decode_failures: list[str] = field(default_factory=list)
    evaluation: EvalReport | None = None

    @property
    def zero_coverage(self) -> bool:
        return self.labeled == 0

    def to_json_dict(self) -> dict:
        return {
            "labeled": self.labeled,
            "skipped": self.skipped,
            "decode_failures": list(self.decode_failures),
            "zero_coverage": self.zero_coverage,
            "evaluation": None if self.evaluation is None else self.evaluation.to_json_dict(),
        }

    def save_json(self, path: Path | str) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=2) + "\n")


def autolabel(model: Model, samples: list[Sample], threshold: float = 0.5,
              min_confidence: float | None = None, *,
              manifest: DatasetManifest | None = None,
              root=None) -> tuple[DatasetManifest, AutoLabelReport]:
    """Label samples with the model, gated by an optional confidence floor.

    Confidence is max(p, 1-p), so min_confidence must lie in (0.5, 1]; with no
    floor every decodable sample is labeled. Undecodable samples are recorded
    and skipped rather than aborting the run. Returns the delta manifest of
    newly labeled sample copies plus the report.
    """
    if not 0.0 < threshold < 1.0:
        raise RangeError(f"threshold must lie in (0, 1), got {threshold}")
    if min_confidence is not None and not 0.5 < min_confidence <= 1.0:
        raise RangeError(f"min_confidence must lie in (0.5, 1], got {min_confidence}")
    already = [s.id for s in samples if s.assigned_label is not None]
    if already:
        raise LabelPrecedenceError(
            f"samples already carry assigned labels (human/oracle labels win): {already[:5]}"
        )
    if root is None and manifest is not None:
        root = manifest.source_root

    cfg = model.preprocess_config
    decodable: list[Sample] = []
    failures: list[str] = []
    arrays = []
    for s in samples:
        try:
            arrays.append(preprocess_image(s, cfg, root=root))
            decodable.append(s)
        except DecodeError as e:
            failures.append(s.id)
            _ = e
    probs: list[float] = []
    if decodable:
        model.head.eval()
        with torch.no_grad():
            for start in range(0, len(decodable), 256):
                x = torch.from_numpy(
                    np.stack(arrays[start:start + 256])
                ).permute(0, 3, 1, 2).contiguous().to(model.dtype)
                probs.extend(torch.sigmoid(model.logits(x)).tolist())

    source = f"autolabel:{classifier.model_checksum(model)}"
    delta_samples: list[Sample] = []
    skipped = len(failures)
    for sample, p in zip(decodable, probs):
        confidence = max(p, 1.0 - p)
        if min_confidence is not None and confidence < min_confidence:
            skipped += 1
            continue
        label = 1 if p >= threshold else 0
        delta_samples.append(
            copy_sample(sample, assigned_label=label, label_source=source)
        )

    evaluation = None
    evaluable = [s for s in delta_samples if s.true_label is not None]
    if evaluable:
        truth = [s.true_label for s in evaluable]
        preds = [s.assigned_label for s in evaluable]
        cm = metrics.confusion(truth, preds)
        eval_probs = [
            p for s, p in zip(decodable, probs)
            if s.true_label is not None
            and (min_confidence is None or max(p, 1.0 - p) >= min_confidence)
        ]
        if len(set(truth)) == 2:
            evaluation = metrics.summarize(cm, scores=eval_probs, true_labels=truth)
        else:
            evaluation = metrics.summarize(cm)

    report = AutoLabelReport(
        labeled=len(delta_samples),
        skipped=skipped,
        decode_failures=failures,
        evaluation=evaluation,
    )
    assert report.labeled + report.skipped == len(samples)

    if manifest is not None:
        delta = DatasetManifest(
            samples=delta_samples,
            class_names=manifest.class_names,
            source_root=manifest.source_root,
            created_at=manifest.created_at,
        ) if delta_samples else _empty_delta(manifest)
    else:
        delta = DatasetManifest(samples=delta_samples) if delta_samples else _empty_delta(None)
    return delta, report


def _empty_delta(manifest: DatasetManifest | None) -> DatasetManifest:
    if manifest is not None:
        return DatasetManifest(
            samples=[], class_names=manifest.class_names,
            source_root=manifest.source_root, created_at=manifest.created_at,
        )
    return DatasetManifest(samples=[])


def export_labeled(delta: DatasetManifest, path: Path | str) -> None:
    """Write the delta manifest; rows carry the autolabel provenance column."""
    if not delta.samples:
        raise EmptyDatasetError("nothing to export: delta manifest is empty")
    save_manifest(delta, path)
