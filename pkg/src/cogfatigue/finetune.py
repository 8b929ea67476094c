"""Supervised fine-tuning of the encoder with a linear fatigue classifier."""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from sklearn.base import BaseEstimator, ClassifierMixin
from torch import nn
from torch.nn import functional as F

from .augment import AugmentConfig, temporal_crop
from .checkpoint import load_module_tensors, load_tensor_dir, module_tensors, save_tensor_dir
from .data import DatasetIndex, FatigueClass, ScanRecord, SplitSpec, make_kfold
from .encoder import EncoderConfig, FatigueEncoder, init_encoder
from .errors import ConfigError, RangeError, ShapeError, SizeError, TrainingError, ValidationError
from .metrics import Metrics, N_CLASSES, evaluate_predictions, format_mean_std
from .nifti import load_nifti
from .seeding import derive_seed, rng_for
from .volume import VolumeSeries


@dataclass(frozen=True)
class FinetuneConfig:
    epochs: int = 50
    lr: float = 1e-3
    batch_size: int = 8
    freeze_encoder: bool = False
    early_stop_patience: int = 10  # epochs without val-accuracy improvement
    use_class_weights: bool = False
    stop_at_train_acc: float | None = None  # optional convergence target

    def __post_init__(self) -> None:
        if self.epochs < 1 or self.batch_size < 1 or self.early_stop_patience < 1:
            raise RangeError("epochs, batch_size and early_stop_patience must be >= 1")
        if self.lr <= 0:
            raise RangeError(f"lr must be positive, got {self.lr}")

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "lr": self.lr,
            "batch_size": self.batch_size,
            "freeze_encoder": self.freeze_encoder,
            "early_stop_patience": self.early_stop_patience,
            "use_class_weights": self.use_class_weights,
            "stop_at_train_acc": self.stop_at_train_acc,
        }


@dataclass
class ClassifierModel:
    """Encoder plus 6-way linear head reading the attention-pooled features."""

    encoder: FatigueEncoder
    head: nn.Linear
    crop_len: int

    def __post_init__(self) -> None:
        if self.head.out_features != N_CLASSES:
            raise ValidationError(f"head must emit {N_CLASSES} classes, got {self.head.out_features}")

    def eval(self) -> "ClassifierModel":
        self.encoder.eval()
        self.head.eval()
        return self

    def logits(self, batch: torch.Tensor) -> torch.Tensor:
        return self.head(self.encoder.pooled(batch))

    def save(self, path: str | Path) -> Path:
        tensors = module_tensors(self.encoder, "enc.")
        tensors.update(module_tensors(self.head, "head."))
        meta = {
            "kind": "classifier",
            "encoder_config": self.encoder.cfg.to_dict(),
            "crop_len": self.crop_len,
        }
        return save_tensor_dir(path, tensors, meta)

    @classmethod
    def load(cls, path: str | Path) -> "ClassifierModel":
        tensors, meta = load_tensor_dir(path)
        if meta.get("kind") != "classifier":
            raise ConfigError(f"{path}: not a classifier checkpoint (kind={meta.get('kind')!r})")
        cfg = EncoderConfig.from_dict(meta["encoder_config"])
        encoder = FatigueEncoder(cfg)
        load_module_tensors(encoder, tensors, "enc.")
        head = nn.Linear(cfg.lstm_hidden, N_CLASSES)
        load_module_tensors(head, tensors, "head.")
        model = cls(encoder=encoder, head=head, crop_len=int(meta["crop_len"]))
        return model.eval()


def _as_volume(item: VolumeSeries | Path | str) -> VolumeSeries:
    if isinstance(item, VolumeSeries):
        return item
    return load_nifti(item)


def center_crop(vs: VolumeSeries, n: int) -> np.ndarray:
    """Deterministic inference crop: ``n`` timepoints centred in the series."""
    t = vs.n_timepoints
    if n > t:
        raise ShapeError(f"crop length {n} exceeds series length {t}")
    start = (t - n) // 2
    return vs.data[start : start + n]


def _encoder_from_checkpoint(path: str | Path) -> tuple[FatigueEncoder, EncoderConfig]:
    tensors, meta = load_tensor_dir(path)
    if meta.get("kind") != "moco":
        raise ConfigError(f"{path}: expected a pretraining checkpoint, got kind={meta.get('kind')!r}")
    cfg = EncoderConfig.from_dict(meta["encoder_config"])
    encoder = FatigueEncoder(cfg)
    load_module_tensors(encoder, tensors, "q.")
    return encoder, cfg


def _init_head(hidden: int, seed: int) -> nn.Linear:
    head = nn.Linear(hidden, N_CLASSES)
    gen = torch.Generator().manual_seed(seed % (2**63))
    bound = 1.0 / math.sqrt(hidden)
    with torch.no_grad():
        head.weight.uniform_(-bound, bound, generator=gen)
        head.bias.uniform_(-bound, bound, generator=gen)
    return head


def _class_weights(labels: Sequence[int]) -> torch.Tensor:
    counts = np.bincount(np.asarray(labels), minlength=N_CLASSES).astype(np.float64)
    weights = np.zeros(N_CLASSES)
    present = counts > 0
    weights[present] = counts[present].sum() / (present.sum() * counts[present])
    return torch.from_numpy(weights).float()


def _train_classifier(
    encoder: FatigueEncoder,
    head: nn.Linear,
    train_items: list[tuple[VolumeSeries | Path, int]],
    val_items: list[tuple[VolumeSeries | Path, int]],
    cfg: FinetuneConfig,
    crop_len: int,
    seed: int,
) -> list[dict]:
    """Shared training loop; mutates encoder/head in place, returns history.

    Training uses a random temporal crop per sample per epoch (the only
    augmentation); validation uses fixed center crops.  The epoch with the
    best validation accuracy wins; ties keep the earlier epoch.
    """
    if cfg.freeze_encoder:
        encoder.requires_grad_(False)
        params = list(head.parameters())
    else:
        params = list(encoder.parameters()) + list(head.parameters())
    optimizer = torch.optim.Adam(params, lr=cfg.lr)

    labels = [label for _, label in train_items]
    weight = _class_weights(labels) if cfg.use_class_weights else None

    val_x = val_y = None
    if val_items:
        val_x = torch.from_numpy(np.stack([center_crop(_as_volume(it), crop_len) for it, _ in val_items]))
        val_y = np.asarray([label for _, label in val_items])

    best_val = -1.0
    best_state: tuple[dict, dict] | None = None
    stale = 0
    history: list[dict] = []
    n = len(train_items)
    for epoch in range(cfg.epochs):
        order = rng_for(seed, "order", epoch).permutation(n)
        if cfg.freeze_encoder:
            encoder.eval()
        else:
            encoder.train()
        head.train()

        epoch_loss = 0.0
        correct = 0
        for start in range(0, n, cfg.batch_size):
            ids = order[start : start + cfg.batch_size]
            crops, ys = [], []
            for i in ids:
                vs = _as_volume(train_items[i][0])
                cropped = temporal_crop(vs, crop_len, derive_seed(seed, "crop", epoch, int(i)))
                crops.append(cropped.data)
                ys.append(train_items[i][1])
            x = torch.from_numpy(np.stack(crops))
            y = torch.tensor(ys, dtype=torch.long)
            logits = head(encoder.pooled(x))
            loss = F.cross_entropy(logits, y, weight=weight)
            if not torch.isfinite(loss):
                raise TrainingError(f"non-finite fine-tuning loss at epoch {epoch}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            epoch_loss += float(loss.detach()) * len(ids)
            correct += int((logits.detach().argmax(dim=1) == y).sum())

        train_acc = correct / n
        entry = {"epoch": epoch, "train_loss": epoch_loss / n, "train_acc": train_acc, "val_acc": None}

        if val_x is not None:
            encoder.eval()
            head.eval()
            with torch.no_grad():
                val_pred = head(encoder.pooled(val_x)).argmax(dim=1).numpy()
            val_acc = float((val_pred == val_y).mean())
            entry["val_acc"] = val_acc
            if val_acc > best_val:
                best_val = val_acc
                best_state = (copy.deepcopy(encoder.state_dict()), copy.deepcopy(head.state_dict()))
                stale = 0
            else:
                stale += 1
        history.append(entry)

        if cfg.stop_at_train_acc is not None and train_acc >= cfg.stop_at_train_acc:
            break
        if val_x is not None and stale >= cfg.early_stop_patience:
            break

    if best_state is not None:
        encoder.load_state_dict(best_state[0])
        head.load_state_dict(best_state[1])
    encoder.eval()
    head.eval()
    return history


def finetune(
    index: DatasetIndex,
    split: SplitSpec,
    cfg: FinetuneConfig | None = None,
    aug_cfg: AugmentConfig | None = None,
    encoder_cfg: EncoderConfig | None = None,
    checkpoint: str | Path | None = None,
    seed: int = 0,
    cache_scans: bool = True,
) -> tuple[ClassifierModel, list[dict]]:
    """Train a classifier on the split's train records, select on its val.

    The encoder starts from a pretraining checkpoint when given, otherwise
    from a fresh seeded init (the supervised-only baseline).  With
    ``cache_scans`` all train/val volumes stay in memory, which is right
    for desk-scale data; disable it for large corpora.
    """
    cfg = cfg or FinetuneConfig()
    aug_cfg = aug_cfg or AugmentConfig()
    if not split.train:
        raise SizeError("empty training split")

    def items_for(ids: Sequence[int]) -> list[tuple[VolumeSeries | Path, int]]:
        items: list[tuple[VolumeSeries | Path, int]] = []
        for i in ids:
            rec = index.records[i]
            if rec.label is None:
                raise ValidationError(f"record {rec.subject_id}/{rec.session_index} has no label")
            items.append((load_nifti(rec.path) if cache_scans else rec.path, int(rec.label)))
        return items

    if checkpoint is not None:
        encoder, enc_cfg = _encoder_from_checkpoint(checkpoint)
        if encoder_cfg is not None and encoder_cfg != enc_cfg:
            raise ConfigError("encoder config differs from the checkpoint's encoder config")
    else:
        enc_cfg = encoder_cfg or EncoderConfig()
        encoder = init_encoder(enc_cfg, derive_seed(seed, "encoder"))
    head = _init_head(enc_cfg.lstm_hidden, derive_seed(seed, "head"))

    history = _train_classifier(
        encoder, head, items_for(split.train), items_for(split.val), cfg, aug_cfg.crop_len, seed
    )
    model = ClassifierModel(encoder=encoder, head=head, crop_len=aug_cfg.crop_len).eval()
    return model, history


def predict_batch(model: ClassifierModel, scans: Sequence[VolumeSeries]) -> tuple[np.ndarray, np.ndarray]:
    """Classes and softmax probabilities for a list of scans (center crops)."""
    model.eval()
    x = torch.from_numpy(np.stack([center_crop(vs, model.crop_len) for vs in scans]))
    with torch.no_grad():
        logits = model.logits(x).double()
        probs = torch.softmax(logits, dim=1).numpy()
    classes = np.argmax(probs, axis=1)  # lowest index wins ties
    return classes, probs


def predict(model: ClassifierModel, scan: VolumeSeries) -> tuple[FatigueClass, np.ndarray]:
    """Class and 6-way probabilities for one scan; deterministic."""
    classes, probs = predict_batch(model, [scan])
    return FatigueClass(int(classes[0])), probs[0]


def evaluate(
    model: ClassifierModel,
    records: Sequence[ScanRecord],
    batch_size: int = 8,
    config_hash: str | None = None,
    seed: int | None = None,
) -> Metrics:
    """Confusion matrix and overall/per-group accuracy over labeled records."""
    if not records:
        raise SizeError("cannot evaluate an empty record list")
    y_true, y_pred, groups = [], [], []
    for start in range(0, len(records), batch_size):
        chunk = records[start : start + batch_size]
        scans = [load_nifti(rec.path) for rec in chunk]
        classes, _ = predict_batch(model, scans)
        for rec, pred in zip(chunk, classes):
            if rec.label is None:
                raise ValidationError(f"record {rec.subject_id}/{rec.session_index} has no label")
            y_true.append(int(rec.label))
            y_pred.append(int(pred))
            groups.append(rec.group)
    return evaluate_predictions(y_true, y_pred, groups, config_hash=config_hash, seed=seed)


@dataclass
class CrossValResult:
    mean_acc: float
    std_acc: float
    per_fold: list[Metrics]

    @property
    def summary(self) -> str:
        return format_mean_std(self.mean_acc, self.std_acc)


def config_fingerprint(*configs) -> str:
    """Short stable hash of a set of config dataclasses."""
    blob = json.dumps([c.to_dict() if hasattr(c, "to_dict") else repr(c) for c in configs], sort_keys=True)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]


def cross_validate(
    index: DatasetIndex,
    k: int,
    cfg: FinetuneConfig | None = None,
    aug_cfg: AugmentConfig | None = None,
    encoder_cfg: EncoderConfig | None = None,
    checkpoint: str | Path | None = None,
    seed: int = 0,
    cache_scans: bool = True,
) -> CrossValResult:
    """k independent train/evaluate rounds over a k-fold partition.

    Reports the mean and population standard deviation of the per-fold
    overall accuracy (``CrossValResult.summary`` formats it as
    ``mean ± std`` in percent).
    """
    cfg = cfg or FinetuneConfig()
    aug_cfg = aug_cfg or AugmentConfig()
    fingerprint = config_fingerprint(cfg, aug_cfg, encoder_cfg or EncoderConfig())
    folds = make_kfold(index, k, seed)
    per_fold = []
    for i, fold in enumerate(folds):
        model, _ = finetune(
            index,
            fold,
            cfg=cfg,
            aug_cfg=aug_cfg,
            encoder_cfg=encoder_cfg,
            checkpoint=checkpoint,
            seed=derive_seed(seed, "cv", i),
            cache_scans=cache_scans,
        )
        per_fold.append(
            evaluate(model, index.subset(fold.test), config_hash=fingerprint, seed=seed)
        )
    accs = np.asarray([m.overall_acc for m in per_fold])
    return CrossValResult(mean_acc=float(accs.mean()), std_acc=float(accs.std()), per_fold=per_fold)


class FatigueClassifier(ClassifierMixin, BaseEstimator):
    """sklearn-style classifier: fit on scans + labels, predict classes.

    ``X`` is a sequence of :class:`VolumeSeries`; ``y`` holds integer class
    labels 0..5.  Pass ``checkpoint`` to start from pretrained weights.
    """

    def __init__(
        self,
        encoder_config: EncoderConfig | None = None,
        finetune_config: FinetuneConfig | None = None,
        augment_config: AugmentConfig | None = None,
        checkpoint: str | None = None,
        random_state: int = 0,
    ):
        self.encoder_config = encoder_config
        self.finetune_config = finetune_config
        self.augment_config = augment_config
        self.checkpoint = checkpoint
        self.random_state = random_state

    def fit(self, X: Sequence[VolumeSeries], y, X_val=None, y_val=None):
        from .validation import check_class_labels, check_same_geometry, check_volume_list

        cfg = self.finetune_config or FinetuneConfig()
        aug_cfg = self.augment_config or AugmentConfig()
        X = check_volume_list(X, allow_single=False)
        check_same_geometry(X)
        y = check_class_labels(y, len(X))

        if self.checkpoint is not None:
            encoder, enc_cfg = _encoder_from_checkpoint(self.checkpoint)
        else:
            enc_cfg = self.encoder_config or EncoderConfig()
            encoder = init_encoder(enc_cfg, derive_seed(self.random_state, "encoder"))
        head = _init_head(enc_cfg.lstm_hidden, derive_seed(self.random_state, "head"))

        train_items = [(vs, int(label)) for vs, label in zip(X, y)]
        val_items = (
            [(vs, int(label)) for vs, label in zip(X_val, y_val)] if X_val is not None else []
        )
        self.history_ = _train_classifier(
            encoder, head, train_items, val_items, cfg, aug_cfg.crop_len, self.random_state
        )
        self.model_ = ClassifierModel(encoder=encoder, head=head, crop_len=aug_cfg.crop_len).eval()
        self.classes_ = np.arange(N_CLASSES)
        return self

    def predict(self, X: Sequence[VolumeSeries]) -> np.ndarray:
        classes, _ = predict_batch(self.model_, list(X))
        return classes

    def predict_proba(self, X: Sequence[VolumeSeries]) -> np.ndarray:
        _, probs = predict_batch(self.model_, list(X))
        return probs
