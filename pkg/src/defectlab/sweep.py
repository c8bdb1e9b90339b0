"""Resumable grid search over optimizer, learning rate, batch size, epochs, L2.

One fresh model is trained per grid cell so hyperparameter effects stay
isolated. Completed cells are persisted as one JSON per cell (named by a
stable cell hash) in the state directory, so an interrupted sweep resumes
exactly where it stopped and produces the same final report.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

from . import classifier, metrics
from .classifier import ModelConfig, TrainConfig
from .dataset import DatasetManifest
from .errors import (
    DivergenceError,
    EmptyResultError,
    IoError,
    MissingLabelError,
    RangeError,
)
from .metrics import EvalReport

REPORT_COLUMNS = (
    "optimizer", "lr", "batch", "epochs",
    "tn", "fp", "fn", "tp",
    "accuracy", "precision", "recall", "f1", "auc",
)


@dataclass(frozen=True)
class GridSpec:
    """Grid axes; defaults span the standard tuning ranges."""

    optimizers: tuple[str, ...] = ("sgd", "adam", "rmsprop")
    learning_rates: tuple[float, ...] = (1e-2, 1e-3, 1e-4, 1e-5)
    batch_sizes: tuple[int, ...] = (4, 32, 64)
    epochs: tuple[int, ...] = (30, 60, 120)
    l2_lambdas: tuple[float, ...] = (1e-1, 1e-2, 1e-3, 1e-4)
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("optimizers", "learning_rates", "batch_sizes", "epochs", "l2_lambdas"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
            if not getattr(self, name):
                raise RangeError(f"grid axis {name} must be non-empty")
        unknown = set(self.optimizers) - set(classifier.OPTIMIZERS)
        if unknown:
            raise RangeError(f"unknown optimizers in grid: {sorted(unknown)}")
        for lr in self.learning_rates:
            if not 1e-5 <= lr <= 1e-2:
                raise RangeError(f"grid learning rate {lr} outside [1e-5, 1e-2]")

    @property
    def size(self) -> int:
        return (len(self.optimizers) * len(self.learning_rates) * len(self.batch_sizes)
                * len(self.epochs) * len(self.l2_lambdas))

    def cells(self) -> list[dict]:
        product = itertools.product(
            self.optimizers, self.learning_rates, self.batch_sizes,
            self.epochs, self.l2_lambdas,
        )
        return [
            {"optimizer": o, "learning_rate": lr, "batch_size": b,
             "epochs": e, "l2_lambda": l2, "index": i}
            for i, (o, lr, b, e, l2) in enumerate(product)
        ]


@dataclass
class SweepCell:
    """Result of one grid cell; error is set when the cell diverged."""

    optimizer: str
    learning_rate: float
    batch_size: int
    epochs: int
    l2_lambda: float
    cell_index: int
    cell_hash: str
    report: EvalReport | None = None
    train_accuracy: float | None = None
    overfit_gap: float | None = None
    wall_time: float = 0.0
    error: str | None = None

    def to_json_dict(self) -> dict:
        return {
            "optimizer": self.optimizer,
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "l2_lambda": self.l2_lambda,
            "cell_index": self.cell_index,
            "cell_hash": self.cell_hash,
            "report": None if self.report is None else self.report.to_json_dict(),
            "train_accuracy": self.train_accuracy,
            "overfit_gap": self.overfit_gap,
            "wall_time": self.wall_time,
            "error": self.error,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "SweepCell":
        report = None
        if data.get("report") is not None:
            r = data["report"]
            cm = metrics.ConfusionMatrix(
                tn=r["confusion"][0][0], fp=r["confusion"][0][1],
                fn=r["confusion"][1][0], tp=r["confusion"][1][1],
            )
            report = EvalReport(
                cm=cm, accuracy=r["accuracy"],
                precision_0=r["precision_0"], recall_0=r["recall_0"], f1_0=r["f1_0"],
                precision_1=r["precision_1"], recall_1=r["recall_1"], f1_1=r["f1_1"],
                auc=r["auc"], degenerate=tuple(r.get("degenerate", ())),
            )
        return cls(
            optimizer=data["optimizer"], learning_rate=data["learning_rate"],
            batch_size=data["batch_size"], epochs=data["epochs"],
            l2_lambda=data["l2_lambda"], cell_index=data["cell_index"],
            cell_hash=data["cell_hash"], report=report,
            train_accuracy=data.get("train_accuracy"),
            overfit_gap=data.get("overfit_gap"),
            wall_time=data.get("wall_time", 0.0), error=data.get("error"),
        )


@dataclass
class SweepResult:
    cells: list[SweepCell] = field(default_factory=list)
    best_per_optimizer: dict[str, SweepCell] = field(default_factory=dict)


def _cell_hash(cell: dict, grid_seed: int) -> str:
    key = json.dumps(
        {k: cell[k] for k in ("optimizer", "learning_rate", "batch_size", "epochs", "l2_lambda")},
        sort_keys=True,
    ) + f":{grid_seed}"
    return hashlib.sha256(key.encode()).hexdigest()[:16]


def _select_best(cells: list[SweepCell]) -> dict[str, SweepCell]:
    best: dict[str, SweepCell] = {}
    scored = [c for c in cells if c.report is not None and c.error is None]
    # max accuracy; ties -> lower lr, then smaller batch, then fewer epochs.
    scored.sort(key=lambda c: (-c.report.accuracy, c.learning_rate, c.batch_size,
                               c.epochs, c.l2_lambda))
    for cell in scored:
        best.setdefault(cell.optimizer, cell)
    return best


def run_sweep(grid: GridSpec, data: DatasetManifest, model_cfg: ModelConfig,
              state_dir: Path | str | None = None, workers: int = 1,
              root=None, deterministic: bool = True,
              log=print) -> SweepResult:
    """Train and evaluate every grid cell; resume from persisted cells if any."""
    train_samples = data.split_samples("train")
    val_samples = data.split_samples("validation")
    if not train_samples or not val_samples:
        raise EmptyResultError("manifest needs non-empty train and validation splits")
    for s in train_samples + val_samples:
        if s.effective_label() is None:
            raise MissingLabelError(f"sample {s.id!r} lacks a label; sweep needs labeled splits")
    if root is None:
        root = data.source_root

    cells = grid.cells()
    if log:
        log(f"sweep grid: {grid.size} cells "
            f"({len(grid.optimizers)} optimizers x {len(grid.learning_rates)} lrs "
            f"x {len(grid.batch_sizes)} batches x {len(grid.epochs)} epochs "
            f"x {len(grid.l2_lambdas)} l2)")

    state_path = Path(state_dir) if state_dir is not None else None
    if state_path is not None:
        state_path.mkdir(parents=True, exist_ok=True)
    write_lock = threading.Lock()

    def _load_done(cell_hash: str) -> SweepCell | None:
        if state_path is None:
            return None
        path = state_path / f"{cell_hash}.json"
        if not path.is_file():
            return None
        return SweepCell.from_json_dict(json.loads(path.read_text()))

    def _persist(result: SweepCell) -> None:
        if state_path is None:
            return
        with write_lock:
            path = state_path / f"{result.cell_hash}.json"
            tmp = path.with_suffix(".tmp")
            tmp.write_text(json.dumps(result.to_json_dict(), indent=2) + "\n")
            tmp.replace(path)

    def _run_cell(cell: dict) -> SweepCell:
        cell_hash = _cell_hash(cell, grid.rng_seed)
        done = _load_done(cell_hash)
        if done is not None:
            return done
        seed = (grid.rng_seed * 1_000_003 + cell["index"]) & 0x7FFF_FFFF
        result = SweepCell(
            optimizer=cell["optimizer"], learning_rate=cell["learning_rate"],
            batch_size=cell["batch_size"], epochs=cell["epochs"],
            l2_lambda=cell["l2_lambda"], cell_index=cell["index"], cell_hash=cell_hash,
        )
        started = time.perf_counter()
        try:
            cfg = replace(model_cfg, l2_lambda=cell["l2_lambda"])
            model = classifier.build_model(cfg, rng_seed=seed)
            train_cfg = TrainConfig(
                optimizer=cell["optimizer"], learning_rate=cell["learning_rate"],
                batch_size=min(cell["batch_size"], len(train_samples)),
                epochs=cell["epochs"], rng_seed=seed, deterministic=deterministic,
            )
            classifier.train(model, train_samples, train_cfg, val_samples, root=root)
            result.report = metrics.evaluate_model(model, val_samples, root=root)
            result.train_accuracy = classifier.accuracy(model, train_samples, root=root)
            result.overfit_gap = result.train_accuracy - result.report.accuracy
        except DivergenceError as e:
            result.error = f"DivergenceError: {e}"
        result.wall_time = time.perf_counter() - started
        _persist(result)
        return result

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_cell, cells))
    else:
        results = [_run_cell(c) for c in cells]
    return SweepResult(cells=results, best_per_optimizer=_select_best(results))


def render_report(result: SweepResult, path: Path | str) -> None:
    """Write the best-per-optimizer table as CSV plus a readable text twin."""
    if not result.cells:
        raise EmptyResultError("sweep produced no cells to report")
    if not result.best_per_optimizer:
        raise EmptyResultError("sweep produced no successful cells to report")
    path = Path(path)
    rows = [result.best_per_optimizer[o] for o in sorted(result.best_per_optimizer)]

    def _fmt(v: float | None) -> str:
        return "" if v is None else f"{v:.3f}"

    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8", newline="") as fh:
            fh.write(",".join(REPORT_COLUMNS) + "\n")
            for cell in rows:
                r = cell.report
                fh.write(",".join([
                    cell.optimizer, repr(cell.learning_rate), str(cell.batch_size),
                    str(cell.epochs), str(r.cm.tn), str(r.cm.fp), str(r.cm.fn),
                    str(r.cm.tp), _fmt(r.accuracy), _fmt(r.precision_1),
                    _fmt(r.recall_1), _fmt(r.f1_1), _fmt(r.auc),
                ]) + "\n")
        text = path.with_suffix(".txt")
        blocks = []
        for cell in rows:
            blocks.append(
                f"== {cell.optimizer}  lr={cell.learning_rate}  "
                f"batch={cell.batch_size}  epochs={cell.epochs}  "
                f"l2={cell.l2_lambda}\n{cell.report.render()}\n"
                f"overfit gap {cell.overfit_gap:+.3f}\n"
            )
        text.write_text("\n".join(blocks))
    except OSError as e:
        raise IoError(f"cannot write sweep report to {path}: {e}") from e
