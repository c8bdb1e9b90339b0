"""Dataset ingestion, manifest persistence, pool bookkeeping, image preprocessing.

A manifest is the catalog of one binary-classification image dataset: one row
per image, each assigned to exactly one of the train/validation/test splits.
The labeled/unlabeled partition of the train split (the pool) is tracked
separately and mutated only through explicit label operations.
"""

from __future__ import annotations

import csv
import json
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import (
    ClassCountError,
    DecodeError,
    DuplicateIdError,
    EmptyDatasetError,
    IoError,
    LabelPrecedenceError,
    MissingLabelError,
    NotFoundError,
    ParseError,
    RangeError,
    StructureError,
)

SPLITS = ("train", "validation", "test")
IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp")
MANIFEST_HEADER = ("id", "image_ref", "split", "true_label", "assigned_label")
PROVENANCE_COLUMN = "label_source"

# Channel statistics of the default backbone's pretraining corpus.
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

MANIFEST_FORMAT_VERSION = 1


def _utc_iso(ts: float) -> str:
    return datetime.fromtimestamp(ts, tz=timezone.utc).isoformat()


@dataclass
class Sample:
    """One image record: identity, split assignment, and labels."""

    id: str
    image_ref: str
    split: str
    true_label: int | None = None
    assigned_label: int | None = None
    label_source: str | None = None

    def __post_init__(self):
        if self.split not in SPLITS:
            raise RangeError(f"invalid split {self.split!r} for sample {self.id!r}")
        for name in ("true_label", "assigned_label"):
            value = getattr(self, name)
            if value is not None and value not in (0, 1):
                raise RangeError(f"{name} must be 0 or 1, got {value!r}")

    def assign_label(self, label: int, source: str) -> None:
        """Set assigned_label; refuses to overwrite an existing assignment."""
        if label not in (0, 1):
            raise RangeError(f"label must be 0 or 1, got {label!r}")
        if self.assigned_label is not None:
            raise LabelPrecedenceError(
                f"sample {self.id!r} already labeled "
                f"({self.assigned_label} from {self.label_source}); "
                "overwriting requires correct_label()"
            )
        self.assigned_label = label
        self.label_source = source

    def correct_label(self, label: int, source: str) -> None:
        """Explicit correction path: overwrites an existing assignment."""
        if label not in (0, 1):
            raise RangeError(f"label must be 0 or 1, got {label!r}")
        self.assigned_label = label
        self.label_source = source

    def effective_label(self) -> int | None:
        """Label used for training: assignment wins over stored ground truth."""
        return self.assigned_label if self.assigned_label is not None else self.true_label


@dataclass
class DatasetManifest:
    """Ordered catalog of samples plus dataset-level metadata."""

    samples: list[Sample]
    class_names: tuple[str, str] = ("class_0", "class_1")
    source_root: Path = Path(".")
    created_at: str = ""

    def __post_init__(self):
        self.source_root = Path(self.source_root)
        self.class_names = tuple(self.class_names)  # type: ignore[assignment]
        if len(self.class_names) != 2:
            raise ClassCountError(
                f"binary manifest requires exactly 2 class names, got {list(self.class_names)}"
            )
        seen: set[str] = set()
        for s in self.samples:
            if s.id in seen:
                raise DuplicateIdError(f"duplicate sample id {s.id!r}")
            seen.add(s.id)
        self._by_id = {s.id: s for s in self.samples}

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DatasetManifest):
            return NotImplemented
        return (
            self.samples == other.samples
            and self.class_names == other.class_names
            and self.source_root == other.source_root
            and self.created_at == other.created_at
        )

    def by_id(self, sample_id: str) -> Sample:
        try:
            return self._by_id[sample_id]
        except KeyError:
            raise NotFoundError(f"unknown sample id {sample_id!r}") from None

    def split_ids(self, split: str) -> list[str]:
        if split not in SPLITS:
            raise RangeError(f"invalid split {split!r}")
        return [s.id for s in self.samples if s.split == split]

    def split_samples(self, split: str) -> list[Sample]:
        if split not in SPLITS:
            raise RangeError(f"invalid split {split!r}")
        return [s for s in self.samples if s.split == split]

    def split_counts(self) -> dict[str, int]:
        counts = {split: 0 for split in SPLITS}
        for s in self.samples:
            counts[s.split] += 1
        return counts

    def resolve_image_path(self, sample: Sample) -> Path:
        ref = Path(sample.image_ref)
        return ref if ref.is_absolute() else self.source_root / ref


@dataclass
class PoolState:
    """Partition of the train split into labeled and unlabeled ids."""

    labeled_ids: list[str] = field(default_factory=list)
    unlabeled_ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        overlap = set(self.labeled_ids) & set(self.unlabeled_ids)
        if overlap:
            raise DuplicateIdError(f"ids in both pools: {sorted(overlap)[:5]}")

    @property
    def size(self) -> int:
        return len(self.labeled_ids) + len(self.unlabeled_ids)

    def mark_labeled(self, ids: list[str]) -> None:
        """Move ids from the unlabeled to the labeled pool, preserving order."""
        moving = set(ids)
        unknown = moving - set(self.unlabeled_ids)
        if unknown:
            raise NotFoundError(f"ids not in unlabeled pool: {sorted(unknown)[:5]}")
        self.unlabeled_ids = [i for i in self.unlabeled_ids if i not in moving]
        self.labeled_ids = self.labeled_ids + list(ids)

    def check(self, manifest: DatasetManifest) -> None:
        """Assert pool conservation against the manifest's train split."""
        train = set(manifest.split_ids("train"))
        labeled, unlabeled = set(self.labeled_ids), set(self.unlabeled_ids)
        if labeled & unlabeled:
            raise DuplicateIdError("labeled and unlabeled pools overlap")
        if labeled | unlabeled != train or len(self.labeled_ids) + len(
            self.unlabeled_ids
        ) != len(train):
            raise StructureError("pools do not partition the train split")
        for sid in self.labeled_ids:
            if manifest.by_id(sid).assigned_label is None:
                raise MissingLabelError(f"labeled pool id {sid!r} has no assigned label")


def scan_directory(root: Path | str, layout: str = "split_dirs") -> DatasetManifest:
    """Build a manifest from an on-disk dataset.

    split_dirs expects root/<split>/<class_name>/<image>; flat expects a
    manifest.csv under root. Repeated scans of an unchanged tree produce
    identical manifests (ids are sorted relative paths, created_at is the
    newest image mtime).
    """
    root = Path(root)
    if not root.is_dir():
        raise StructureError(f"dataset root {root} does not exist")
    if layout == "flat":
        manifest_path = root / "manifest.csv"
        if not manifest_path.is_file():
            raise StructureError(f"flat layout requires {manifest_path}")
        return load_manifest(manifest_path)
    if layout != "split_dirs":
        raise RangeError(f"unknown layout {layout!r}")

    class_names: tuple[str, str] | None = None
    samples: list[Sample] = []
    newest = 0.0
    for split in SPLITS:
        split_dir = root / split
        if not split_dir.is_dir():
            raise StructureError(f"missing split directory {split_dir}")
        class_dirs = sorted(p.name for p in split_dir.iterdir() if p.is_dir())
        if len(class_dirs) != 2:
            raise ClassCountError(
                f"{split_dir} must contain exactly 2 class subdirectories, "
                f"found {len(class_dirs)}: {class_dirs}"
            )
        if class_names is None:
            class_names = (class_dirs[0], class_dirs[1])
        elif tuple(class_dirs) != class_names:
            raise StructureError(
                f"class subdirectories differ across splits: "
                f"{class_dirs} vs {list(class_names)}"
            )
        for label, cls in enumerate(class_dirs):
            for img in sorted((split_dir / cls).iterdir()):
                if img.suffix.lower() not in IMAGE_EXTENSIONS or not img.is_file():
                    continue
                rel = img.relative_to(root).as_posix()
                samples.append(
                    Sample(id=rel, image_ref=rel, split=split, true_label=label)
                )
                newest = max(newest, img.stat().st_mtime)
    if not samples:
        raise EmptyDatasetError(f"no images found under {root}")
    samples.sort(key=lambda s: s.id)
    assert class_names is not None
    return DatasetManifest(
        samples=samples,
        class_names=class_names,
        source_root=root,
        created_at=_utc_iso(newest),
    )


def _meta_path(path: Path) -> Path:
    return path.with_suffix(".meta.json")


def save_manifest(manifest: DatasetManifest, path: Path | str) -> None:
    """Write the manifest CSV (rows sorted by id) plus a metadata sidecar.

    The provenance column is emitted only when at least one sample carries a
    label_source, keeping plain manifests at the exact five-column header.
    """
    if not manifest.samples:
        raise EmptyDatasetError("refusing to save a manifest with no samples")
    path = Path(path)
    with_provenance = any(s.label_source for s in manifest.samples)
    header = MANIFEST_HEADER + ((PROVENANCE_COLUMN,) if with_provenance else ())

    def _cell(value: int | None) -> str:
        return "" if value is None else str(value)

    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for s in sorted(manifest.samples, key=lambda s: s.id):
                row = [s.id, s.image_ref, s.split, _cell(s.true_label), _cell(s.assigned_label)]
                if with_provenance:
                    row.append(s.label_source or "")
                writer.writerow(row)
        meta = {
            "format_version": MANIFEST_FORMAT_VERSION,
            "class_names": list(manifest.class_names),
            "source_root": str(manifest.source_root),
            "created_at": manifest.created_at,
        }
        _meta_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    except OSError as e:
        raise IoError(f"cannot write manifest to {path}: {e}") from e


def load_manifest(path: Path | str) -> DatasetManifest:
    """Load a manifest CSV written by save_manifest (sidecar optional)."""
    path = Path(path)
    if not path.is_file():
        raise NotFoundError(f"manifest {path} does not exist")
    samples: list[Sample] = []
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty manifest file", line=1) from None
        if tuple(header) not in (
            MANIFEST_HEADER,
            MANIFEST_HEADER + (PROVENANCE_COLUMN,),
        ):
            raise ParseError(f"unexpected header {header!r}", line=1)
        has_provenance = len(header) == len(MANIFEST_HEADER) + 1
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", line=lineno)
            sid, ref, split, true_s, assigned_s = row[:5]
            if split not in SPLITS:
                raise ParseError(f"invalid split {split!r}", line=lineno)
            labels: list[int | None] = []
            for cell in (true_s, assigned_s):
                if cell == "":
                    labels.append(None)
                elif cell in ("0", "1"):
                    labels.append(int(cell))
                else:
                    raise ParseError(f"invalid label value {cell!r}", line=lineno)
            source = (row[5] or None) if has_provenance else None
            try:
                samples.append(
                    Sample(
                        id=sid,
                        image_ref=ref,
                        split=split,
                        true_label=labels[0],
                        assigned_label=labels[1],
                        label_source=source,
                    )
                )
            except RangeError as e:
                raise ParseError(str(e), line=lineno) from e
    if not samples:
        raise EmptyDatasetError(f"manifest {path} contains no rows")
    ids = [s.id for s in samples]
    if len(set(ids)) != len(ids):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        raise DuplicateIdError(f"duplicate sample ids: {dupes[:5]}")

    meta_path = _meta_path(path)
    if meta_path.is_file():
        meta = json.loads(meta_path.read_text())
        return DatasetManifest(
            samples=samples,
            class_names=tuple(meta["class_names"]),
            source_root=Path(meta["source_root"]),
            created_at=meta["created_at"],
        )
    return DatasetManifest(samples=samples, source_root=path.parent, created_at="")


def init_pools(manifest: DatasetManifest, seed_size: int = 0, rng_seed: int = 0) -> PoolState:
    """Partition the train split into an initial labeled seed and the rest.

    The default seed_size of 0 leaves the whole train split unlabeled; the
    first query batch is then driven by the freshly initialized model.
    """
    import random

    train = manifest.split_samples("train")
    train_ids = [s.id for s in train]
    if seed_size < 0 or seed_size > len(train_ids):
        raise RangeError(
            f"seed_size {seed_size} outside [0, {len(train_ids)}] for this train split"
        )
    if seed_size > 0:
        missing = [s.id for s in train if s.true_label is None]
        if missing:
            raise MissingLabelError(
                f"seeding requires true labels; missing for {missing[:5]}"
            )
    rng = random.Random(f"init_pools:{rng_seed}")
    chosen = rng.sample(train_ids, seed_size) if seed_size else []
    chosen_set = set(chosen)
    for sid in chosen:
        sample = manifest.by_id(sid)
        sample.assign_label(sample.true_label, source="oracle")  # type: ignore[arg-type]
    pool = PoolState(
        labeled_ids=list(chosen),
        unlabeled_ids=[i for i in train_ids if i not in chosen_set],
    )
    pool.check(manifest)
    return pool


@dataclass(frozen=True)
class PreprocessConfig:
    """Decode-time image contract: square side and channel normalization."""

    side: int = 224
    mean: tuple[float, float, float] = IMAGENET_MEAN
    std: tuple[float, float, float] = IMAGENET_STD

    def __post_init__(self):
        if self.side < 1:
            raise RangeError(f"side must be positive, got {self.side}")


class _DecodedCache:
    """Bounded FIFO cache of decoded tensors keyed by path, mtime and config."""

    def __init__(self, max_entries: int = 4096):
        self.max_entries = max_entries
        self._store: OrderedDict[tuple, np.ndarray] = OrderedDict()

    def get(self, key: tuple) -> np.ndarray | None:
        return self._store.get(key)

    def put(self, key: tuple, value: np.ndarray) -> None:
        if len(self._store) >= self.max_entries:
            self._store.popitem(last=False)
        self._store[key] = value


_cache = _DecodedCache()


def preprocess_image(
    sample: Sample,
    cfg: PreprocessConfig = PreprocessConfig(),
    root: Path | str | None = None,
) -> np.ndarray:
    """Decode one image into a normalized float32 tensor of shape (side, side, 3).

    Grayscale inputs are replicated to 3 channels. Results are cached per
    (path, mtime, config) and returned read-only.
    """
    ref = Path(sample.image_ref)
    path = ref if ref.is_absolute() else Path(root or ".") / ref
    try:
        mtime = path.stat().st_mtime_ns
    except OSError as e:
        raise DecodeError(f"cannot read image {path}: {e}", sample_id=sample.id) from e
    key = (str(path), mtime, cfg.side, cfg.mean, cfg.std)
    cached = _cache.get(key)
    if cached is not None:
        return cached
    try:
        with Image.open(path) as img:
            img = img.convert("RGB")
            img = img.resize((cfg.side, cfg.side), Image.BILINEAR)
            arr = np.asarray(img, dtype=np.float32) / 255.0
    except DecodeError:
        raise
    except Exception as e:  # PIL raises a zoo of decode-time exceptions
        raise DecodeError(f"cannot decode image {path}: {e}", sample_id=sample.id) from e
    arr = (arr - np.asarray(cfg.mean, dtype=np.float32)) / np.asarray(cfg.std, dtype=np.float32)
    arr.flags.writeable = False
    _cache.put(key, arr)
    return arr


def copy_sample(sample: Sample, **changes) -> Sample:
    """Copy of a sample with selected fields replaced."""
    return replace(sample, **changes)
