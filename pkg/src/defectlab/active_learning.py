"""Pool-based active-learning engine with uncertainty sampling.

One session is a serialized state machine over the four-phase cycle: select a
query batch from the unlabeled pool, collect labels from an annotator, fine-tune
on the labeled pool, and validate. The session persists itself into a directory
(session.json, manifest.csv, history.csv, batches/, checkpoints/) so a crash or
restart never loses a completed iteration.

For a single sigmoid output the standard uncertainty measures (least
confidence, margin, entropy) induce the same ordering; the canonical score
here is the margin from 0.5, i.e. score = 0.5 - |p - 0.5|.
"""

from __future__ import annotations

import hashlib
import json
import os
import random
import uuid
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Protocol

import numpy as np

from . import classifier
from .classifier import Model, TrainConfig
from .dataset import (
    DatasetManifest,
    PoolState,
    Sample,
    init_pools,
    load_manifest,
    save_manifest,
)
from .errors import (
    BatchMismatchError,
    ChecksumError,
    ConflictError,
    DefectLabError,
    IntegrityError,
    MissingLabelError,
    NotFoundError,
    PoolExhaustedError,
    RangeError,
    ShapeError,
    VersionError,
)

STRATEGIES = ("uncertainty", "random")
SCOPES = ("cumulative", "batch_only")
RETENTIONS = ("all", "last", "none_but_final")
TERMINAL_STATUSES = ("converged_stopped", "exhausted", "aborted")
STATUSES = ("awaiting_labels", "training") + TERMINAL_STATUSES

SESSION_FORMAT_VERSION = 1


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _logical_time(counter: int) -> str:
    return datetime.fromtimestamp(counter, tz=timezone.utc).isoformat()


def _iteration_seed(base: int, iteration: int) -> int:
    return (base * 1_000_003 + iteration) & 0x7FFF_FFFF


@dataclass
class StopRule:
    """Plateau rule: stop once the last `window` accuracies span <= epsilon."""

    window: int
    epsilon: float

    def __post_init__(self):
        if self.window < 1:
            raise RangeError(f"stop window must be >= 1, got {self.window}")
        if self.epsilon < 0:
            raise RangeError(f"stop epsilon must be >= 0, got {self.epsilon}")

    def fires(self, accuracies: list[float]) -> bool:
        if len(accuracies) < self.window:
            return False
        tail = accuracies[-self.window:]
        return max(tail) - min(tail) <= self.epsilon


@dataclass
class ALConfig:
    query_size: int = 50
    max_queries: int = 40
    strategy: str = "uncertainty"
    fine_tune_epochs: int = 5
    fine_tune_scope: str = "cumulative"
    stop_rule: StopRule | None = None
    train_cfg: TrainConfig = field(default_factory=TrainConfig)
    rng_seed: int = 0
    seed_size: int = 0
    checkpoint_retention: str = "last"

    def __post_init__(self):
        if self.query_size < 1:
            raise RangeError(f"query_size must be >= 1, got {self.query_size}")
        if self.max_queries < 1:
            raise RangeError(f"max_queries must be >= 1, got {self.max_queries}")
        if self.strategy not in STRATEGIES:
            raise RangeError(f"unknown strategy {self.strategy!r}")
        if self.fine_tune_epochs < 1:
            raise RangeError(f"fine_tune_epochs must be >= 1, got {self.fine_tune_epochs}")
        if self.fine_tune_scope not in SCOPES:
            raise RangeError(f"unknown fine_tune_scope {self.fine_tune_scope!r}")
        if self.checkpoint_retention not in RETENTIONS:
            raise RangeError(f"unknown checkpoint_retention {self.checkpoint_retention!r}")

    @property
    def deterministic(self) -> bool:
        return self.train_cfg.deterministic


@dataclass
class QueryBatch:
    """One iteration's query: ids ordered by descending informativeness."""

    iteration: int
    sample_ids: list[str]
    scores: list[float | None]
    issued_at: str
    truncated: bool = False

    def __post_init__(self):
        if self.iteration < 1:
            raise RangeError(f"batch iteration must be >= 1, got {self.iteration}")
        if len(self.sample_ids) != len(set(self.sample_ids)):
            raise ShapeError("query batch contains duplicate ids")
        if len(self.scores) != len(self.sample_ids):
            raise ShapeError("scores not aligned with sample_ids")


@dataclass
class HistoryRow:
    iteration: int
    val_accuracy: float
    labeled_count: int
    timestamp: str


@dataclass
class ALSessionState:
    """The persistent record of one active-learning run."""

    session_id: str
    config: ALConfig
    manifest: DatasetManifest
    pool: PoolState
    model_checkpoint_ref: str | None = None
    pending_batch: QueryBatch | None = None
    history: list[HistoryRow] = field(default_factory=list)
    status: str = "training"
    batches_submitted: int = 0
    issued_batches: list[QueryBatch] = field(default_factory=list)
    last_submitted_ids: list[str] = field(default_factory=list)
    stop_requested: bool = False
    abort_cause: str | None = None
    service_meta: dict = field(default_factory=dict)
    dir: Path | None = None  # bound at save/resume time; not serialized

    @property
    def terminal(self) -> bool:
        return self.status in TERMINAL_STATUSES

    @property
    def labeled_count(self) -> int:
        return len(self.pool.labeled_ids)

    def queried_ids(self) -> set[str]:
        out: set[str] = set()
        for batch in self.issued_batches:
            out |= set(batch.sample_ids)
        return out

    def check_invariants(self) -> None:
        self.pool.check(self.manifest)
        counts = [row.labeled_count for row in self.history]
        if any(b <= a for a, b in zip(counts, counts[1:])):
            raise ConflictError("labeled_count must increase across history")


class Annotator(Protocol):
    kind: str

    def label(self, sample_ids: list[str]) -> list[int]: ...


class OracleAnnotator:
    """Annotator that answers queries from stored ground-truth labels."""

    kind = "oracle"

    def __init__(self, manifest: DatasetManifest):
        self.manifest = manifest

    def label(self, sample_ids: list[str]) -> list[int]:
        labels = []
        for sid in sample_ids:
            sample = self.manifest.by_id(sid)
            if sample.true_label is None:
                raise MissingLabelError(f"oracle has no ground truth for {sid!r}")
            labels.append(sample.true_label)
        return labels


def new_session(manifest: DatasetManifest, config: ALConfig,
                session_id: str | None = None) -> ALSessionState:
    """Create a fresh session: pools initialized, no batch issued yet."""
    pool = init_pools(manifest, seed_size=config.seed_size, rng_seed=config.rng_seed)
    return ALSessionState(
        session_id=session_id or uuid.uuid4().hex[:12],
        config=config,
        manifest=manifest,
        pool=pool,
    )


def uncertainty_scores(probs) -> list[float]:
    """Margin-from-0.5 informativeness: 0.5 at p=0.5, 0.0 at p in {0, 1}."""
    arr = np.asarray(probs, dtype=float)
    if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
        raise RangeError("probabilities must lie in [0, 1]")
    return (0.5 - np.abs(arr - 0.5)).tolist()


def select_query(pool: PoolState, scores_by_id: dict[str, float] | None, k: int,
                 strategy: str = "uncertainty", rng_seed: int = 0,
                 iteration: int = 1, timestamp: str | None = None) -> QueryBatch:
    """Pick the next batch from the unlabeled pool.

    Uncertainty takes the top-k scores with ties broken by lexicographic id;
    random draws uniformly without replacement, seeded per iteration. k larger
    than the pool truncates and flags the batch.
    """
    if k < 1:
        raise RangeError(f"query size must be >= 1, got {k}")
    if not pool.unlabeled_ids:
        raise PoolExhaustedError("unlabeled pool is empty")
    truncated = k > len(pool.unlabeled_ids)
    k = min(k, len(pool.unlabeled_ids))
    if strategy == "uncertainty":
        if scores_by_id is None:
            raise ShapeError("uncertainty strategy requires scores_by_id")
        missing = [i for i in pool.unlabeled_ids if i not in scores_by_id]
        if missing:
            raise ShapeError(f"scores missing for unlabeled ids: {missing[:5]}")
        ranked = sorted(pool.unlabeled_ids, key=lambda i: (-scores_by_id[i], i))
        ids = ranked[:k]
        scores: list[float | None] = [float(scores_by_id[i]) for i in ids]
    elif strategy == "random":
        rng = random.Random(f"{rng_seed}:select:{iteration}")
        ids = rng.sample(list(pool.unlabeled_ids), k)
        scores = [None if scores_by_id is None else float(scores_by_id[i]) for i in ids]
    else:
        raise RangeError(f"unknown strategy {strategy!r}")
    return QueryBatch(
        iteration=iteration,
        sample_ids=ids,
        scores=scores,
        issued_at=timestamp or _utc_now(),
        truncated=truncated,
    )


def submit_labels(session: ALSessionState, labels: dict[str, int],
                  annotator_kind: str = "human") -> ALSessionState:
    """Apply one full batch of labels atomically; partial submissions are rejected."""
    if session.status != "awaiting_labels" or session.pending_batch is None:
        raise ConflictError(
            f"session {session.session_id} is not awaiting labels (status={session.status})"
        )
    pending = set(session.pending_batch.sample_ids)
    got = set(labels)
    if pending != got:
        missing = sorted(pending - got)
        extra = sorted(got - pending)
        raise BatchMismatchError(
            f"submission must cover the pending batch exactly "
            f"(missing {len(missing)}, extra {len(extra)})",
            missing=missing, extra=extra,
        )
    bad = {k: v for k, v in labels.items() if v not in (0, 1)}
    if bad:
        raise RangeError(f"labels must be 0/1; offending entries: {dict(list(bad.items())[:5])}")

    batch_ids = list(session.pending_batch.sample_ids)
    for sid in batch_ids:
        session.manifest.by_id(sid).assign_label(labels[sid], source=annotator_kind)
    session.pool.mark_labeled(batch_ids)
    session.last_submitted_ids = batch_ids
    session.pending_batch = None
    session.batches_submitted += 1
    session.status = "training"
    session.pool.check(session.manifest)
    if session.dir is not None:
        save_session(session, session.dir)
    return session


def _fine_tune_scope_samples(session: ALSessionState) -> list[Sample]:
    if session.config.fine_tune_scope == "cumulative":
        ids = session.pool.labeled_ids
    else:
        ids = session.last_submitted_ids
    return [session.manifest.by_id(i) for i in ids]


def _issue_batch(session: ALSessionState, model: Model, root) -> None:
    iteration = len(session.history) + 1
    scores_by_id: dict[str, float] | None = None
    if session.config.strategy == "uncertainty":
        unlabeled = [session.manifest.by_id(i) for i in session.pool.unlabeled_ids]
        probs = classifier.predict_proba(model, unlabeled, root=root)
        scores = uncertainty_scores(probs)
        scores_by_id = dict(zip(session.pool.unlabeled_ids, scores))
    timestamp = (_logical_time(iteration) if session.config.deterministic else None)
    batch = select_query(
        session.pool,
        scores_by_id,
        k=session.config.query_size,
        strategy=session.config.strategy,
        rng_seed=session.config.rng_seed,
        iteration=iteration,
        timestamp=timestamp,
    )
    overlap = set(batch.sample_ids) & session.queried_ids()
    if overlap:
        raise ConflictError(f"ids queried twice: {sorted(overlap)[:5]}")
    session.pending_batch = batch
    session.issued_batches.append(batch)
    session.status = "awaiting_labels"


def step(session: ALSessionState, model: Model, val_samples: list[Sample],
         root=None) -> tuple[ALSessionState, Model]:
    """Advance the session one transition.

    On a fresh session this issues the first query batch from the initial
    model's scores. After a label submission it fine-tunes, validates, appends
    the history row, and either terminates (stop decision, plateau rule, pool
    or query budget exhausted) or issues the next batch.
    """
    if session.terminal:
        raise ConflictError(f"session {session.session_id} is terminal ({session.status})")
    if session.status == "awaiting_labels":
        raise ConflictError("labels for the pending batch have not been submitted")
    root = root if root is not None else session.manifest.source_root

    if session.batches_submitted > 0 and len(session.history) < session.batches_submitted:
        iteration = len(session.history) + 1
        ft_cfg = replace(
            session.config.train_cfg,
            epochs=session.config.fine_tune_epochs,
            rng_seed=_iteration_seed(session.config.train_cfg.rng_seed, iteration),
        )
        try:
            classifier.fine_tune(model, _fine_tune_scope_samples(session), ft_cfg, root=root)
            val_accuracy = classifier.accuracy(model, val_samples, root=root)
        except DefectLabError as e:
            session.status = "aborted"
            session.abort_cause = f"{type(e).__name__}: {e}"
            if session.dir is not None:
                save_session(session, session.dir)
            raise
        timestamp = (_logical_time(iteration) if session.config.deterministic
                     else _utc_now())
        session.history.append(
            HistoryRow(iteration, val_accuracy, session.labeled_count, timestamp)
        )
        session.check_invariants()

        if session.stop_requested:
            session.status = "converged_stopped"
        elif session.config.stop_rule is not None and session.config.stop_rule.fires(
            [row.val_accuracy for row in session.history]
        ):
            session.status = "converged_stopped"
        elif not session.pool.unlabeled_ids or iteration >= session.config.max_queries:
            session.status = "exhausted"
        if session.terminal:
            if session.dir is not None:
                save_session(session, session.dir, model=model)
            return session, model

    _issue_batch(session, model, root)
    if session.dir is not None:
        save_session(session, session.dir, model=model)
    return session, model


def request_stop(session: ALSessionState) -> ALSessionState:
    """Human stop decision: immediate while awaiting labels, else after the
    in-flight iteration completes."""
    if session.terminal:
        raise ConflictError(f"session {session.session_id} already terminal")
    if session.status == "awaiting_labels":
        # Pending ids were never removed from the unlabeled pool; voiding the
        # batch simply drops it.
        if session.pending_batch is not None:
            session.issued_batches = [
                b for b in session.issued_batches if b is not session.pending_batch
            ]
        session.pending_batch = None
        session.status = "converged_stopped"
        if session.dir is not None:
            save_session(session, session.dir)
    else:
        session.stop_requested = True
        if session.dir is not None:
            save_session(session, session.dir)
    return session


def run_with_oracle(session: ALSessionState, model: Model, oracle: Annotator,
                    val_samples: list[Sample], root=None,
                    on_iteration=None) -> tuple[ALSessionState, Model]:
    """Drive the loop with an automatic annotator until the session terminates."""
    while not session.terminal:
        if session.status == "awaiting_labels":
            assert session.pending_batch is not None
            ids = session.pending_batch.sample_ids
            labels = oracle.label(ids)
            submit_labels(session, dict(zip(ids, labels)),
                          annotator_kind=getattr(oracle, "kind", "oracle"))
        else:
            before = len(session.history)
            step(session, model, val_samples, root=root)
            if on_iteration is not None and len(session.history) > before:
                on_iteration(session)
    return session, model


def history_stats(history: list[HistoryRow], from_iter: int,
                  to_iter: int) -> tuple[float, float, float]:
    """(mean, population std, peak) of validation accuracy over an inclusive
    iteration range."""
    if from_iter > to_iter:
        raise RangeError(f"empty range [{from_iter}, {to_iter}]")
    present = {row.iteration for row in history}
    if from_iter not in present or to_iter not in present:
        raise RangeError(
            f"range [{from_iter}, {to_iter}] not covered by history "
            f"(iterations {min(present, default=0)}..{max(present, default=0)})"
        )
    values = np.asarray(
        [row.val_accuracy for row in history if from_iter <= row.iteration <= to_iter]
    )
    return float(values.mean()), float(values.std()), float(values.max())


def labels_to_target(history: list[HistoryRow], target: float) -> int | None:
    """Labeled count of the first iteration reaching the target accuracy."""
    for row in history:
        if row.val_accuracy >= target:
            return row.labeled_count
    return None


# --- persistence ----------------------------------------------------------


def _config_to_dict(config: ALConfig) -> dict:
    out = asdict(config)
    return out


def _config_from_dict(data: dict) -> ALConfig:
    data = dict(data)
    if data.get("stop_rule") is not None:
        data["stop_rule"] = StopRule(**data["stop_rule"])
    data["train_cfg"] = TrainConfig(**data["train_cfg"])
    return ALConfig(**data)


def _state_document(session: ALSessionState) -> dict:
    return {
        "session_id": session.session_id,
        "config": _config_to_dict(session.config),
        "pool": {
            "labeled_ids": list(session.pool.labeled_ids),
            "unlabeled_ids": list(session.pool.unlabeled_ids),
        },
        "model_checkpoint_ref": session.model_checkpoint_ref,
        "pending_batch": None if session.pending_batch is None else asdict(session.pending_batch),
        "history": [asdict(row) for row in session.history],
        "status": session.status,
        "batches_submitted": session.batches_submitted,
        "issued_batches": [asdict(b) for b in session.issued_batches],
        "last_submitted_ids": list(session.last_submitted_ids),
        "stop_requested": session.stop_requested,
        "abort_cause": session.abort_cause,
        "service_meta": session.service_meta,
    }


def _state_checksum(state: dict) -> str:
    canonical = json.dumps(state, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def _checkpoint_ref(session: ALSessionState, terminal: bool) -> str | None:
    retention = session.config.checkpoint_retention
    if retention == "all":
        return f"checkpoints/iter_{len(session.history):03d}.ckpt"
    if retention == "last":
        return "checkpoints/latest.ckpt"
    return "checkpoints/final.ckpt" if terminal else None


def save_session(session: ALSessionState, directory: Path | str,
                 model: Model | None = None) -> None:
    """Persist the full session: state, manifest, history CSV, batches, checkpoint."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    session.dir = directory

    if model is not None:
        ref = _checkpoint_ref(session, session.terminal)
        if ref is not None:
            classifier.save_checkpoint(model, directory / ref)
            session.model_checkpoint_ref = ref

    save_manifest(session.manifest, directory / "manifest.csv")

    batches_dir = directory / "batches"
    batches_dir.mkdir(exist_ok=True)
    for batch in session.issued_batches:
        path = batches_dir / f"{batch.iteration:03d}.json"
        if not path.exists():
            path.write_text(json.dumps(asdict(batch), indent=2) + "\n")

    history_path = directory / "history.csv"
    with history_path.open("w", encoding="utf-8", newline="") as fh:
        fh.write("iteration,val_accuracy,labeled_count,timestamp\n")
        for row in session.history:
            fh.write(f"{row.iteration},{row.val_accuracy!r},{row.labeled_count},{row.timestamp}\n")
        fh.flush()
        os.fsync(fh.fileno())

    state = _state_document(session)
    doc = {
        "format_version": SESSION_FORMAT_VERSION,
        "checksum": _state_checksum(state),
        "state": state,
    }
    tmp = directory / "session.json.tmp"
    tmp.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    tmp.replace(directory / "session.json")


def resume_session(directory: Path | str) -> ALSessionState:
    """Reload a persisted session; verifies integrity before returning it."""
    directory = Path(directory)
    if not directory.is_dir():
        raise NotFoundError(f"session directory {directory} does not exist")
    session_path = directory / "session.json"
    if not session_path.is_file():
        raise NotFoundError(f"{session_path} does not exist")
    doc = json.loads(session_path.read_text())
    if doc.get("format_version") != SESSION_FORMAT_VERSION:
        raise VersionError(
            f"session format_version {doc.get('format_version')} not supported"
        )
    state = doc["state"]
    if _state_checksum(state) != doc.get("checksum"):
        raise ChecksumError(f"session state checksum mismatch in {session_path}")

    manifest_path = directory / "manifest.csv"
    if not manifest_path.is_file():
        raise IntegrityError(f"session manifest missing: {manifest_path}")
    manifest = load_manifest(manifest_path)

    ref = state.get("model_checkpoint_ref")
    if ref is not None and not (directory / ref).is_file():
        raise IntegrityError(f"session checkpoint missing: {directory / ref}")

    def _batch(data) -> QueryBatch:
        return QueryBatch(**data)

    session = ALSessionState(
        session_id=state["session_id"],
        config=_config_from_dict(state["config"]),
        manifest=manifest,
        pool=PoolState(
            labeled_ids=list(state["pool"]["labeled_ids"]),
            unlabeled_ids=list(state["pool"]["unlabeled_ids"]),
        ),
        model_checkpoint_ref=ref,
        pending_batch=None if state["pending_batch"] is None else _batch(state["pending_batch"]),
        history=[HistoryRow(**row) for row in state["history"]],
        status=state["status"],
        batches_submitted=state["batches_submitted"],
        issued_batches=[_batch(b) for b in state["issued_batches"]],
        last_submitted_ids=list(state["last_submitted_ids"]),
        stop_requested=state["stop_requested"],
        abort_cause=state["abort_cause"],
        service_meta=dict(state.get("service_meta", {})),
        dir=directory,
    )
    session.check_invariants()
    return session


def load_session_model(session: ALSessionState) -> Model:
    """Load the model referenced by a resumed session's checkpoint."""
    if session.dir is None or session.model_checkpoint_ref is None:
        raise IntegrityError("session has no checkpoint to load a model from")
    return classifier.load_checkpoint(session.dir / session.model_checkpoint_ref)
