#!/usr/bin/env python3
"""Throwaway annotation service for frontend tests.

Builds a small synthetic two-class image dataset, creates one live session
whose query batches contain 10 items, prints the session id, and serves the
API on the requested port until killed.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from defectlab import active_learning as al
from defectlab import service
from defectlab.classifier import ModelConfig, TrainConfig
from defectlab.dataset import save_manifest, scan_directory


def build_dataset(root: Path, train: int = 30, validation: int = 12,
                  test: int = 4, side: int = 32, seed: int = 9) -> None:
    rng = np.random.default_rng(seed)
    half = side // 2
    for split, n in (("train", train), ("validation", validation), ("test", test)):
        for cls_idx, cls in enumerate(("ok", "defect")):
            directory = root / split / cls
            directory.mkdir(parents=True, exist_ok=True)
            for i in range(n // 2):
                contrast = rng.uniform(0.3, 0.6)
                sign = -1.0 if cls_idx else 1.0
                img = np.full((side, side, 3), 0.5)
                img[:, :half] += sign * contrast / 2
                img[:, half:] -= sign * contrast / 2
                img += rng.normal(0.0, 0.08, size=img.shape)
                Image.fromarray((np.clip(img, 0, 1) * 255).astype(np.uint8)).save(
                    directory / f"img_{i:04d}.png"
                )


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--port", type=int, required=True)
    parser.add_argument("--store", required=True)
    args = parser.parse_args()

    store = Path(args.store)
    data_root = store / "data"
    build_dataset(data_root)
    manifest = scan_directory(data_root)
    manifest_path = store / "manifest.csv"
    save_manifest(manifest, manifest_path)

    manager = service.SessionManager(store / "sessions")
    config = al.ALConfig(
        query_size=10,
        max_queries=3,
        strategy="uncertainty",
        fine_tune_epochs=1,
        train_cfg=TrainConfig(optimizer="adam", learning_rate=3e-3,
                              batch_size=4, epochs=1, rng_seed=3),
        rng_seed=11,
    )
    model_config = ModelConfig(backbone="tiny_cnn", head_widths=(8, 4),
                               l2_lambda=1e-3, input_side=32)
    managed = manager.create_session(str(manifest_path), config, model_config,
                                     model_seed=1)
    if managed.worker is not None:
        managed.worker.join()

    print(f"SESSION_ID {managed.session.session_id}", flush=True)
    service.serve(store / "sessions", bind=f"127.0.0.1:{args.port}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
