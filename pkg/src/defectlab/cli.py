"""Command-line entry points: scan, train, sweep, al, eval, autolabel.

Any flag may also be supplied through a JSON config file (--config); explicit
flags win over file values. Exit codes: 0 success, 1 I/O failure, 2 input
validation, 3 numeric failure, 64 usage.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import active_learning as al
from . import classifier, metrics, sweep
from .autolabel import autolabel as run_autolabel
from .autolabel import export_labeled
from .classifier import ModelConfig, TrainConfig
from .dataset import load_manifest, save_manifest, scan_directory
from .errors import DefectLabError, DivergenceError, IoError, UsageError

EXIT_OK = 0
EXIT_IO = 1
EXIT_INPUT = 2
EXIT_NUMERIC = 3
EXIT_USAGE = 64


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # usage problems exit 64, not argparse's 2
        raise UsageError(message)


def _model_config(args: argparse.Namespace) -> ModelConfig:
    widths = args.head_widths
    if isinstance(widths, str):
        widths = tuple(int(w) for w in widths.split(","))
    return ModelConfig(
        backbone=args.backbone,
        head_widths=tuple(widths),
        l2_lambda=args.l2,
        input_side=args.input_side,
    )


def _train_config(args: argparse.Namespace) -> TrainConfig:
    if args.epochs < 1:
        raise UsageError(f"--epochs must be >= 1, got {args.epochs}")
    if args.batch < 1:
        raise UsageError(f"--batch must be >= 1, got {args.batch}")
    if args.lr <= 0:
        raise UsageError(f"--lr must be positive, got {args.lr}")
    return TrainConfig(
        optimizer=args.optimizer,
        learning_rate=args.lr,
        batch_size=args.batch,
        epochs=args.epochs,
        rng_seed=args.seed,
        deterministic=not args.non_deterministic,
    )


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--backbone", default="vgg16_imagenet",
                   choices=list(classifier.BACKBONES))
    p.add_argument("--head-widths", default="256,64",
                   help="two comma-separated hidden layer widths")
    p.add_argument("--input-side", type=int, default=224)
    p.add_argument("--l2", type=float, default=0.0, help="L2 weight decay coefficient")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--optimizer", default="sgd", choices=list(classifier.OPTIMIZERS))
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--epochs", type=int, default=60)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--non-deterministic", action="store_true",
                   help="allow nondeterministic numerics for speed")


def cmd_scan(args: argparse.Namespace) -> int:
    manifest = scan_directory(Path(args.root), layout=args.layout)
    save_manifest(manifest, Path(args.out))
    counts = manifest.split_counts()
    print(f"scanned {len(manifest.samples)} samples "
          f"(train {counts['train']}, validation {counts['validation']}, "
          f"test {counts['test']}) -> {args.out}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    manifest = load_manifest(Path(args.manifest))
    model = classifier.build_model(_model_config(args), rng_seed=args.seed)
    train_cfg = _train_config(args)
    root = manifest.source_root
    model, report = classifier.train(
        model, manifest.split_samples("train"), train_cfg,
        manifest.split_samples("validation"), root=root,
    )
    evaluation = metrics.evaluate_model(model, manifest.split_samples("validation"),
                                        root=root)
    classifier.save_checkpoint(model, Path(args.out))
    report_path = Path(args.report) if args.report else Path(str(args.out) + ".report.json")
    evaluation.save_json(report_path)
    print(f"checkpoint -> {args.out}")
    print(f"report     -> {report_path}")
    print(evaluation.render())
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    manifest = load_manifest(Path(args.manifest))
    if args.grid:
        grid_data = json.loads(Path(args.grid).read_text())
        grid = sweep.GridSpec(**{k: tuple(v) if isinstance(v, list) else v
                                 for k, v in grid_data.items()})
    else:
        grid = sweep.GridSpec(rng_seed=args.seed)
    model_cfg = _model_config(args)
    result = sweep.run_sweep(grid, manifest, model_cfg, state_dir=args.state_dir,
                             workers=args.workers,
                             deterministic=not args.non_deterministic)
    sweep.render_report(result, Path(args.out))
    print(f"report -> {args.out}")
    for optimizer in sorted(result.best_per_optimizer):
        cell = result.best_per_optimizer[optimizer]
        print(f"  best {optimizer}: lr={cell.learning_rate} batch={cell.batch_size} "
              f"epochs={cell.epochs} accuracy={cell.report.accuracy:.3f}")
    return EXIT_OK


def _al_config(args: argparse.Namespace) -> al.ALConfig:
    stop_rule = None
    if args.stop_window is not None or args.stop_eps is not None:
        if args.stop_window is None or args.stop_eps is None:
            raise UsageError("--stop-window and --stop-eps must be given together")
        stop_rule = al.StopRule(window=args.stop_window, epsilon=args.stop_eps)
    return al.ALConfig(
        query_size=args.query_size,
        max_queries=args.max_queries,
        strategy=args.strategy,
        fine_tune_epochs=args.fine_tune_epochs,
        fine_tune_scope=args.fine_tune_scope,
        stop_rule=stop_rule,
        train_cfg=_train_config(args),
        rng_seed=args.seed,
        seed_size=args.seed_size,
        checkpoint_retention=args.retention,
    )


def _write_history_plot(history: list[al.HistoryRow], path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot([r.iteration for r in history], [r.val_accuracy for r in history],
            marker="o", markersize=3)
    ax.set_xlabel("query iteration")
    ax.set_ylabel("validation accuracy")
    ax.set_ylim(0.0, 1.0)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def cmd_al(args: argparse.Namespace) -> int:
    config = _al_config(args)
    session_dir = Path(args.session_dir)
    if args.mode == "oracle":
        manifest = load_manifest(Path(args.manifest))
        session = al.new_session(manifest, config)
        model = classifier.build_model(_model_config(args), rng_seed=args.seed)
        run_dir = session_dir / session.session_id
        al.save_session(session, run_dir, model=model)
        oracle = al.OracleAnnotator(manifest)
        val_samples = manifest.split_samples("validation")
        al.run_with_oracle(session, model, oracle, val_samples,
                           root=manifest.source_root)
        plot_path = Path(args.plot) if args.plot else run_dir / "history.png"
        _write_history_plot(session.history, plot_path)
        n_iters = len(session.history)
        mean, std, peak = al.history_stats(session.history, 1, n_iters)
        fraction = session.labeled_count / max(1, session.pool.size)
        print(f"session {session.session_id}: {session.status} after {n_iters} queries")
        print(f"labels used: {session.labeled_count}/{session.pool.size} "
              f"({fraction:.1%} of pool)")
        print(f"validation accuracy over 1..{n_iters}: "
              f"mean {mean:.3f}, std {std:.4f}, peak {peak:.3f}")
        print(f"history -> {run_dir / 'history.csv'}")
        print(f"plot    -> {plot_path}")
        return EXIT_OK

    # serve mode: create the session in the store, then block until terminal.
    from . import service

    manager = service.SessionManager(session_dir)
    managed = manager.create_session(args.manifest, config, _model_config(args),
                                     model_seed=args.seed)
    if managed.worker is not None:
        managed.worker.join()
    sid = managed.session.session_id
    host = args.bind.partition(":")[0] or "127.0.0.1"
    port = args.bind.partition(":")[2] or "8077"
    print(f"session {sid} created; annotate at http://{host}:{port}/ui/?session={sid}")
    print(f"API: http://{host}:{port}/api/v1/sessions/{sid}/pending")
    ui_dir = Path(__file__).resolve().parents[2] / "frontend" / "dist"
    service.serve(session_dir, bind=args.bind, ui_dir=ui_dir if ui_dir.is_dir() else None,
                  until_terminal=sid)
    return EXIT_OK


def cmd_al_compare(args: argparse.Namespace) -> int:
    print(f"labels needed to reach validation accuracy >= {args.target}:")
    for directory in args.session_dirs:
        session = al.resume_session(Path(directory))
        needed = al.labels_to_target(session.history, args.target)
        label = f"{session.config.strategy:12s} ({session.session_id})"
        if needed is None:
            print(f"  {label}: target never reached "
                  f"(best {max((r.val_accuracy for r in session.history), default=0.0):.3f})")
        else:
            print(f"  {label}: {needed} labels")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    model = classifier.load_checkpoint(Path(args.checkpoint))
    manifest = load_manifest(Path(args.manifest))
    samples = manifest.split_samples(args.split)
    evaluation = metrics.evaluate_model(model, samples, threshold=args.threshold,
                                        root=manifest.source_root)
    if args.out:
        evaluation.save_json(Path(args.out))
        print(f"report -> {args.out}")
    print(evaluation.render())
    return EXIT_OK


def cmd_autolabel(args: argparse.Namespace) -> int:
    model = classifier.load_checkpoint(Path(args.checkpoint))
    manifest = load_manifest(Path(args.manifest))
    samples = manifest.split_samples(args.split)
    delta, report = run_autolabel(
        model, samples, threshold=args.threshold,
        min_confidence=args.min_confidence, manifest=manifest,
    )
    if delta.samples:
        export_labeled(delta, Path(args.out))
        print(f"labeled manifest -> {args.out}")
    else:
        print("no samples passed the confidence gate; nothing exported")
    if args.report:
        report.save_json(Path(args.report))
    print(f"labeled {report.labeled}, skipped {report.skipped}"
          + (f", decode failures {len(report.decode_failures)}"
             if report.decode_failures else ""))
    if report.evaluation is not None:
        print(report.evaluation.render())
    return EXIT_OK


def build_parser() -> tuple[_Parser, dict[str, argparse.ArgumentParser]]:
    parser = _Parser(prog="defectlab",
                     description="Active-learning workbench for binary image "
                                 "defect classification")
    parser.add_argument("--config", default=None,
                        help="JSON file supplying defaults for any flag")
    subs = parser.add_subparsers(dest="command", required=True)
    registry: dict[str, argparse.ArgumentParser] = {}

    p = subs.add_parser("scan", help="build a manifest from an image directory")
    p.add_argument("root")
    p.add_argument("--layout", default="split_dirs", choices=["split_dirs", "flat"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_scan)
    registry["scan"] = p

    p = subs.add_parser("train", help="train on the train split, evaluate on validation")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--report", default=None, help="evaluation JSON path")
    _add_model_flags(p)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)
    registry["train"] = p

    p = subs.add_parser("sweep", help="hyperparameter grid search")
    p.add_argument("--manifest", required=True)
    p.add_argument("--grid", default=None, help="JSON file with grid axes")
    p.add_argument("--out", required=True, help="report CSV path")
    p.add_argument("--state-dir", default=None, help="resumable sweep state directory")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--non-deterministic", action="store_true")
    _add_model_flags(p)
    p.set_defaults(func=cmd_sweep)
    registry["sweep"] = p

    p = subs.add_parser("al", help="run an active-learning session")
    p.add_argument("--manifest", required=True)
    p.add_argument("--mode", default="oracle", choices=["oracle", "serve"])
    p.add_argument("--session-dir", required=True)
    p.add_argument("--query-size", type=int, default=50)
    p.add_argument("--max-queries", type=int, default=40)
    p.add_argument("--strategy", default="uncertainty",
                   choices=list(al.STRATEGIES))
    p.add_argument("--fine-tune-epochs", type=int, default=5)
    p.add_argument("--fine-tune-scope", default="cumulative", choices=list(al.SCOPES))
    p.add_argument("--stop-window", type=int, default=None)
    p.add_argument("--stop-eps", type=float, default=None)
    p.add_argument("--seed-size", type=int, default=0)
    p.add_argument("--retention", default="last", choices=list(al.RETENTIONS))
    p.add_argument("--plot", default=None, help="history curve output path")
    p.add_argument("--bind", default="127.0.0.1:8077", help="serve mode host:port")
    _add_model_flags(p)
    _add_train_flags(p)
    p.set_defaults(func=cmd_al)
    registry["al"] = p

    p = subs.add_parser("al-compare",
                        help="compare stored sessions by labels-to-target")
    p.add_argument("session_dirs", nargs="+")
    p.add_argument("--target", type=float, default=0.95)
    p.set_defaults(func=cmd_al_compare)
    registry["al-compare"] = p

    p = subs.add_parser("eval", help="evaluate a checkpoint on a manifest split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test", choices=["train", "validation", "test"])
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out", default=None, help="report JSON path")
    p.set_defaults(func=cmd_eval)
    registry["eval"] = p

    p = subs.add_parser("autolabel", help="label a split with a trained model")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test", choices=["train", "validation", "test"])
    p.add_argument("--out", required=True, help="labeled manifest CSV path")
    p.add_argument("--report", default=None, help="report JSON path")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--min-confidence", type=float, default=None)
    p.set_defaults(func=cmd_autolabel)
    registry["autolabel"] = p

    return parser, registry


def _apply_config_file(argv: list[str], registry: dict[str, argparse.ArgumentParser]) -> None:
    """Seed parser defaults from --config JSON; explicit flags still win."""
    if "--config" not in argv:
        return
    config_path = Path(argv[argv.index("--config") + 1])
    if not config_path.is_file():
        raise UsageError(f"config file {config_path} does not exist")
    try:
        values = json.loads(config_path.read_text())
    except json.JSONDecodeError as e:
        raise UsageError(f"config file {config_path} is not valid JSON: {e}") from e
    if not isinstance(values, dict):
        raise UsageError("config file must contain a JSON object")
    for sub in registry.values():
        known = {a.dest for a in sub._actions}
        sub.set_defaults(**{k: v for k, v in values.items() if k in known})


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        parser, registry = build_parser()
        _apply_config_file(argv, registry)
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except IoError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return EXIT_IO
    except DefectLabError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
