"""Transfer-learning CNN classifier: frozen pretrained backbone + sigmoid head.

The network is a pretrained convolutional feature extractor (non-trainable by
default) followed by two ReLU dense layers carrying an L2 weight penalty and a
single sigmoid output unit. Training minimizes binary cross-entropy plus the
penalty; the numerically fused logits form of BCE is used internally, which is
mathematically identical to applying BCE to the sigmoid output.

Backbones:
  vgg16_imagenet - the 13 convolutional layers of VGG16 with ImageNet weights
                   (requires the torchvision weight cache or network access).
  tiny_cnn       - a small fixed-weight convolutional stack for desk-scale
                   runs and tests; its reference weights are generated
                   deterministically and play the role of the pretraining.
"""

from __future__ import annotations

import hashlib
import io
import json
import math
import zipfile
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .dataset import IMAGENET_MEAN, IMAGENET_STD, PreprocessConfig, Sample, preprocess_image
from .errors import (
    BackboneUnavailableError,
    ChecksumError,
    DivergenceError,
    EmptyDatasetError,
    IntegrityError,
    MissingLabelError,
    RangeError,
    VersionError,
)

BACKBONES = ("vgg16_imagenet", "tiny_cnn")
OPTIMIZERS = ("sgd", "adam", "rmsprop")

CHECKPOINT_FORMAT_VERSION = 1
_TINY_BACKBONE_SEED = 73_2001  # fixed: defines the tiny backbone's "pretraining"


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters."""

    backbone: str = "vgg16_imagenet"
    freeze_backbone: bool = True
    head_widths: tuple[int, int] = (256, 64)
    l2_lambda: float = 0.0
    input_side: int = 224

    def __post_init__(self):
        if self.backbone not in BACKBONES:
            raise RangeError(f"unknown backbone {self.backbone!r}; expected one of {BACKBONES}")
        object.__setattr__(self, "head_widths", tuple(self.head_widths))
        if len(self.head_widths) != 2 or any(w < 1 for w in self.head_widths):
            raise RangeError(f"head_widths must be two positive integers, got {self.head_widths}")
        if not 0.0 <= self.l2_lambda < 1.0:
            raise RangeError(f"l2_lambda must lie in [0, 1), got {self.l2_lambda}")
        if self.input_side < 1:
            raise RangeError(f"input_side must be positive, got {self.input_side}")


@dataclass
class TrainConfig:
    """Optimization hyperparameters."""

    optimizer: str = "sgd"
    learning_rate: float = 0.01
    batch_size: int = 4
    epochs: int = 1
    rng_seed: int = 0
    deterministic: bool = True

    def __post_init__(self):
        if self.optimizer not in OPTIMIZERS:
            raise RangeError(f"unknown optimizer {self.optimizer!r}; expected one of {OPTIMIZERS}")
        if self.learning_rate <= 0:
            raise RangeError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1:
            raise RangeError(f"batch_size must be positive, got {self.batch_size}")


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    val_accuracy: float | None


@dataclass
class TrainReport:
    history: list[EpochStats] = field(default_factory=list)

    @property
    def final_val_accuracy(self) -> float | None:
        return self.history[-1].val_accuracy if self.history else None

    @property
    def final_train_loss(self) -> float | None:
        return self.history[-1].train_loss if self.history else None


class Model:
    """A backbone + head pair with its configuration and training history."""

    def __init__(self, config: ModelConfig, backbone: nn.Module, head: nn.Module,
                 feature_dim: int):
        self.config = config
        self.backbone = backbone
        self.head = head
        self.feature_dim = feature_dim
        self.train_history: list[EpochStats] = []
        self.backbone.eval()  # feature extractor; no train-time layers

    @property
    def preprocess_config(self) -> PreprocessConfig:
        if self.config.backbone == "vgg16_imagenet":
            mean, std = IMAGENET_MEAN, IMAGENET_STD
        else:
            mean, std = (0.5, 0.5, 0.5), (0.5, 0.5, 0.5)
        return PreprocessConfig(side=self.config.input_side, mean=mean, std=std)

    @property
    def dtype(self) -> torch.dtype:
        return next(self.head.parameters()).dtype

    def logits(self, x: torch.Tensor) -> torch.Tensor:
        features = self.backbone(x)
        return self.head(features.flatten(1)).squeeze(-1)

    def trainable_parameters(self) -> list[torch.nn.Parameter]:
        params = list(self.head.parameters())
        if not self.config.freeze_backbone:
            params += list(self.backbone.parameters())
        return params

    def hidden_dense_weights(self) -> tuple[torch.Tensor, torch.Tensor]:
        """The two ReLU dense layers' weight matrices (the L2-penalized ones)."""
        return self.head[0].weight, self.head[2].weight

    def astype(self, dtype: torch.dtype) -> "Model":
        self.backbone.to(dtype)
        self.head.to(dtype)
        return self


def _tiny_cnn_module() -> tuple[nn.Module, int]:
    stack = nn.Sequential(
        nn.Conv2d(3, 8, kernel_size=3, stride=2, padding=1),
        nn.ReLU(),
        nn.Conv2d(8, 16, kernel_size=3, stride=2, padding=1),
        nn.ReLU(),
        nn.Conv2d(16, 16, kernel_size=3, stride=2, padding=1),
        nn.ReLU(),
        nn.AdaptiveAvgPool2d(4),
    )
    return stack, 16 * 4 * 4


def tiny_backbone_reference_state() -> dict[str, torch.Tensor]:
    """Regenerate the tiny backbone's fixed reference ("pretrained") weights.

    Variance-preserving bounds keep feature magnitudes comparable to the
    input scale so the head trains well on top of the frozen stack.
    """
    module, _ = _tiny_cnn_module()
    g = torch.Generator().manual_seed(_TINY_BACKBONE_SEED)
    with torch.no_grad():
        for p in module.parameters():
            if p.dim() > 1:
                bound = math.sqrt(6.0 / p[0].numel())
                p.uniform_(-bound, bound, generator=g)
            else:
                p.zero_()
    return module.state_dict()


def _build_backbone(cfg: ModelConfig) -> tuple[nn.Module, int]:
    if cfg.backbone == "vgg16_imagenet":
        try:
            from torchvision.models import VGG16_Weights, vgg16

            net = vgg16(weights=VGG16_Weights.IMAGENET1K_V1)
        except Exception as e:
            raise BackboneUnavailableError(
                f"pretrained VGG16 weights unavailable: {e}"
            ) from e
        backbone = nn.Sequential(net.features, nn.AdaptiveAvgPool2d((7, 7)))
        return backbone, 512 * 7 * 7
    if cfg.backbone == "tiny_cnn":
        module, dim = _tiny_cnn_module()
        module.load_state_dict(tiny_backbone_reference_state())
        return module, dim
    raise RangeError(f"unknown backbone {cfg.backbone!r}")


def _init_linear(layer: nn.Linear, generator: torch.Generator) -> None:
    bound = 1.0 / math.sqrt(layer.in_features)
    with torch.no_grad():
        layer.weight.uniform_(-bound, bound, generator=generator)
        layer.bias.uniform_(-bound, bound, generator=generator)


def build_model(cfg: ModelConfig, rng_seed: int = 0) -> Model:
    """Assemble the network; head weights are drawn deterministically from rng_seed."""
    backbone, feature_dim = _build_backbone(cfg)
    if cfg.freeze_backbone:
        for p in backbone.parameters():
            p.requires_grad_(False)
    w1, w2 = cfg.head_widths
    head = nn.Sequential(
        nn.Linear(feature_dim, w1),
        nn.ReLU(),
        nn.Linear(w1, w2),
        nn.ReLU(),
        nn.Linear(w2, 1),
    )
    g = torch.Generator().manual_seed(rng_seed & 0x7FFF_FFFF)
    for layer in head:
        if isinstance(layer, nn.Linear):
            _init_linear(layer, g)
    return Model(cfg, backbone, head, feature_dim)


# --- data plumbing --------------------------------------------------------


def _sample_labels(samples: list[Sample]) -> list[int]:
    labels = []
    for s in samples:
        label = s.effective_label()
        if label is None:
            raise MissingLabelError(f"sample {s.id!r} carries no label")
        labels.append(label)
    return labels


def _batch_tensors(model: Model, samples: list[Sample], root,
                   labels: list[int] | None) -> tuple[torch.Tensor, torch.Tensor | None]:
    cfg = model.preprocess_config
    arrays = [preprocess_image(s, cfg, root=root) for s in samples]
    x = torch.from_numpy(np.stack(arrays)).permute(0, 3, 1, 2).contiguous()
    x = x.to(model.dtype)
    y = None
    if labels is not None:
        y = torch.tensor(labels, dtype=model.dtype)
    return x, y


def l2_penalty(model: Model) -> torch.Tensor:
    w1, w2 = model.hidden_dense_weights()
    return (w1 * w1).sum() + (w2 * w2).sum()


def training_loss(model: Model, samples: list[Sample], root=None) -> torch.Tensor:
    """Differentiable training objective on one batch: BCE + l2_lambda * sum(W^2).

    This is the exact expression the optimizer minimizes; tests differentiate
    it analytically and by finite differences.
    """
    labels = _sample_labels(samples)
    x, y = _batch_tensors(model, samples, root, labels)
    return _loss_from_batch(model, x, y)


def _loss_from_batch(model: Model, x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    logits = model.logits(x)
    bce = F.binary_cross_entropy_with_logits(logits, y)
    if model.config.l2_lambda:
        return bce + model.config.l2_lambda * l2_penalty(model)
    return bce


@contextmanager
def deterministic_mode(enabled: bool):
    if not enabled:
        yield
        return
    previous = torch.are_deterministic_algorithms_enabled()
    torch.use_deterministic_algorithms(True)
    try:
        yield
    finally:
        torch.use_deterministic_algorithms(previous)


def _make_optimizer(name: str, params, lr: float) -> torch.optim.Optimizer:
    if name == "sgd":
        return torch.optim.SGD(params, lr=lr)
    if name == "adam":
        return torch.optim.Adam(params, lr=lr)
    if name == "rmsprop":
        return torch.optim.RMSprop(params, lr=lr)
    raise RangeError(f"unknown optimizer {name!r}")


def _fit(model: Model, samples: list[Sample], cfg: TrainConfig,
         val_samples: list[Sample] | None, root) -> TrainReport:
    if cfg.epochs < 1:
        raise RangeError(f"epochs must be >= 1, got {cfg.epochs}")
    if not samples:
        raise EmptyDatasetError("cannot train on an empty sample list")
    if cfg.batch_size > len(samples):
        raise RangeError(
            f"batch_size {cfg.batch_size} exceeds training set size {len(samples)}"
        )
    labels = _sample_labels(samples)
    n = len(samples)
    report = TrainReport()
    with deterministic_mode(cfg.deterministic):
        shuffler = torch.Generator().manual_seed(cfg.rng_seed & 0x7FFF_FFFF)
        optimizer = _make_optimizer(cfg.optimizer, model.trainable_parameters(),
                                    cfg.learning_rate)
        model.head.train()
        try:
            for epoch in range(1, cfg.epochs + 1):
                perm = torch.randperm(n, generator=shuffler).tolist()
                loss_sum = 0.0
                for start in range(0, n, cfg.batch_size):
                    idx = perm[start:start + cfg.batch_size]
                    batch = [samples[i] for i in idx]
                    x, y = _batch_tensors(model, batch, root, [labels[i] for i in idx])
                    loss = _loss_from_batch(model, x, y)
                    if not torch.isfinite(loss):
                        raise DivergenceError("non-finite training loss", epoch=epoch)
                    optimizer.zero_grad()
                    loss.backward()
                    optimizer.step()
                    loss_sum += loss.item() * len(idx)
                val_acc = None
                if val_samples:
                    val_acc = accuracy(model, val_samples, root=root)
                report.history.append(EpochStats(epoch, loss_sum / n, val_acc))
        finally:
            model.head.eval()
    model.train_history.extend(report.history)
    return report


def train(model: Model, train_samples: list[Sample], cfg: TrainConfig,
          val_samples: list[Sample], root=None) -> tuple[Model, TrainReport]:
    """Run cfg.epochs of mini-batch optimization; reports loss and val accuracy."""
    report = _fit(model, train_samples, cfg, val_samples, root)
    return model, report


def fine_tune(model: Model, labeled_samples: list[Sample], cfg: TrainConfig,
              root=None) -> Model:
    """Continue optimization from current weights; never reinitializes the head."""
    _fit(model, labeled_samples, cfg, None, root)
    return model


def predict_proba(model: Model, samples: list[Sample], root=None,
                  batch_size: int = 256) -> list[float]:
    """Probability of class 1 for each sample, order-preserving."""
    if not samples:
        return []
    probs: list[float] = []
    model.head.eval()
    with torch.no_grad(), deterministic_mode(True):
        for start in range(0, len(samples), batch_size):
            batch = samples[start:start + batch_size]
            x, _ = _batch_tensors(model, batch, root, None)
            probs.extend(torch.sigmoid(model.logits(x)).tolist())
    return probs


def labels_from_probs(probs: list[float], threshold: float = 0.5) -> list[int]:
    """Thresholding rule: label 1 iff p >= threshold (ties go to class 1)."""
    if not 0.0 < threshold < 1.0:
        raise RangeError(f"threshold must lie in (0, 1), got {threshold}")
    return [1 if p >= threshold else 0 for p in probs]


def predict_label(model: Model, samples: list[Sample], threshold: float = 0.5,
                  root=None) -> list[int]:
    if not 0.0 < threshold < 1.0:
        raise RangeError(f"threshold must lie in (0, 1), got {threshold}")
    return labels_from_probs(predict_proba(model, samples, root=root), threshold)


def accuracy(model: Model, samples: list[Sample], threshold: float = 0.5,
             root=None) -> float:
    labels = _sample_labels(samples)
    preds = predict_label(model, samples, threshold, root=root)
    return sum(int(p == t) for p, t in zip(preds, labels)) / len(labels)


# --- checkpoints ----------------------------------------------------------


def _state_bytes(state: dict[str, torch.Tensor]) -> bytes:
    buf = io.BytesIO()
    torch.save(state, buf)
    return buf.getvalue()


def _backbone_fingerprint(model: Model) -> str:
    return hashlib.sha256(_state_bytes(model.backbone.state_dict())).hexdigest()


def model_checksum(model: Model) -> str:
    """Short content hash over all parameters; used for label provenance."""
    digest = hashlib.sha256()
    digest.update(_state_bytes(model.head.state_dict()))
    digest.update(_state_bytes(model.backbone.state_dict()))
    return digest.hexdigest()[:12]


def save_checkpoint(model: Model, path: Path | str) -> None:
    """Write an archive of config.json plus the weights blob and its checksum.

    Frozen backbones are stored as a fingerprint only and reconstructed from
    their pretraining source on load; unfrozen backbones are stored in full.
    """
    path = Path(path)
    payload: dict = {"head": model.head.state_dict()}
    if not model.config.freeze_backbone:
        payload["backbone"] = model.backbone.state_dict()
    blob = _state_bytes(payload)
    meta = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "model_config": asdict(model.config),
        "train_history": [asdict(h) for h in model.train_history],
        "weights_sha256": hashlib.sha256(blob).hexdigest(),
        "backbone_sha256": _backbone_fingerprint(model),
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        # fixed entry dates keep checkpoints bit-reproducible run to run
        for name, data in (
            ("config.json", json.dumps(meta, indent=2, sort_keys=True)),
            ("weights.pt", blob),
        ):
            info = zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))
            info.compress_type = zipfile.ZIP_DEFLATED
            zf.writestr(info, data)


def load_checkpoint(path: Path | str) -> Model:
    """Rebuild a model whose predictions are bit-identical to the saved one."""
    path = Path(path)
    if not path.is_file():
        raise IntegrityError(f"checkpoint {path} does not exist")
    try:
        with zipfile.ZipFile(path) as zf:
            meta = json.loads(zf.read("config.json"))
            blob = zf.read("weights.pt")
    except (zipfile.BadZipFile, KeyError, json.JSONDecodeError) as e:
        raise ChecksumError(f"corrupt checkpoint {path}: {e}") from e
    version = meta.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise VersionError(
            f"checkpoint format_version {version} not supported "
            f"(expected {CHECKPOINT_FORMAT_VERSION})"
        )
    if hashlib.sha256(blob).hexdigest() != meta["weights_sha256"]:
        raise ChecksumError(f"weights blob checksum mismatch in {path}")
    cfg_dict = dict(meta["model_config"])
    cfg_dict["head_widths"] = tuple(cfg_dict["head_widths"])
    cfg = ModelConfig(**cfg_dict)
    model = build_model(cfg, rng_seed=0)
    payload = torch.load(io.BytesIO(blob), weights_only=True)
    model.head.load_state_dict(payload["head"])
    if "backbone" in payload:
        model.backbone.load_state_dict(payload["backbone"])
    elif _backbone_fingerprint(model) != meta["backbone_sha256"]:
        raise ChecksumError(
            f"reconstructed backbone does not match recorded fingerprint in {path}"
        )
    model.train_history = [EpochStats(**h) for h in meta.get("train_history", [])]
    return model
