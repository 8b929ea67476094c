"""Momentum-contrast pretraining: loss, key queue, EMA update, training loop.

Two encoders share one architecture.  The query encoder learns by
backpropagation on the InfoNCE loss; the key encoder is an exponential
moving average of the query encoder and feeds a FIFO queue of negative
keys.  All randomness (batch order, augmentations) derives from the run
seed, epoch and step, so interrupted runs resume bit-exactly.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
import torch
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator
from torch.nn import functional as F

from .augment import AugmentConfig, ViewPair, make_view_pair
from .checkpoint import (
    load_module_tensors,
    load_tensor_dir,
    module_tensors,
    rng_state_from_hex,
    rng_state_to_hex,
    save_tensor_dir,
)
from .data import DatasetIndex
from .encoder import EncoderConfig, FatigueEncoder, init_encoder
from .errors import ConfigError, DomainError, RangeError, ShapeError, SizeError, TrainingError, ValidationError
from .nifti import load_nifti
from .seeding import derive_seed, rng_for
from .volume import VolumeSeries


@dataclass(frozen=True)
class PretrainConfig:
    temperature: float = 0.07
    momentum: float = 0.999
    queue_size: int = 1024
    batch_size: int = 8
    epochs: int = 200
    lr0: float = 0.03
    weight_decay: float = 1e-4
    sgd_momentum: float = 0.9
    lr_drop_epochs: tuple[int, ...] = (120, 160)
    lr_drop_factor: float = 10.0
    optimizer: str = "sgd"  # or "adam"

    def __post_init__(self) -> None:
        if self.temperature <= 0:
            raise RangeError(f"temperature must be > 0, got {self.temperature}")
        if not 0.0 <= self.momentum < 1.0:
            raise RangeError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.batch_size < 1 or self.queue_size < 1 or self.epochs < 1:
            raise ValidationError("batch_size, queue_size and epochs must be >= 1")
        if self.queue_size % self.batch_size != 0:
            raise ValidationError(
                f"queue_size ({self.queue_size}) must be a multiple of batch_size ({self.batch_size})"
            )
        if self.optimizer not in ("sgd", "adam"):
            raise ValidationError(f"optimizer must be 'sgd' or 'adam', got {self.optimizer!r}")

    def to_dict(self) -> dict:
        return {
            "temperature": self.temperature,
            "momentum": self.momentum,
            "queue_size": self.queue_size,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "lr0": self.lr0,
            "weight_decay": self.weight_decay,
            "sgd_momentum": self.sgd_momentum,
            "lr_drop_epochs": list(self.lr_drop_epochs),
            "lr_drop_factor": self.lr_drop_factor,
            "optimizer": self.optimizer,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PretrainConfig":
        d = dict(d)
        d["lr_drop_epochs"] = tuple(d["lr_drop_epochs"])
        return cls(**d)


def cosine_sim(a, b) -> float:
    """Cosine of the angle between two vectors; invariant to positive scaling."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ShapeError(f"vectors differ in length: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise DomainError("cosine similarity is undefined for a zero vector")
    return float(np.dot(a, b) / (na * nb))


def _as_tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    return torch.from_numpy(np.asarray(x))


def info_nce(q, k_pos, queue, temperature: float) -> torch.Tensor:
    """Contrastive loss for one query against its key and queued negatives.

    ``-log( exp(s+/t) / (exp(s+/t) + sum_i exp(s_i/t)) )`` where ``s+`` is
    the query/positive cosine similarity and ``s_i`` runs over the queue
    rows.  An empty queue gives exactly 0.  Differentiable in ``q`` when
    given torch tensors.
    """
    if temperature <= 0:
        raise RangeError(f"temperature must be > 0, got {temperature}")
    q = _as_tensor(q)
    k_pos = _as_tensor(k_pos).to(q.dtype)
    qn = F.normalize(q.reshape(-1), dim=0)
    s_pos = qn @ F.normalize(k_pos.reshape(-1), dim=0)
    logits = s_pos.reshape(1)
    queue = _as_tensor(queue) if queue is not None else torch.zeros((0, q.numel()))
    if queue.numel() > 0:
        negs = F.normalize(queue.to(q.dtype), dim=1) @ qn
        logits = torch.cat([logits, negs])
    logits = logits / temperature
    return torch.logsumexp(logits, dim=0) - logits[0]


def info_nce_batch(q: torch.Tensor, k: torch.Tensor, queue: torch.Tensor, temperature: float) -> torch.Tensor:
    """Mean InfoNCE over a batch of unit-norm embeddings (rowwise positives)."""
    if temperature <= 0:
        raise RangeError(f"temperature must be > 0, got {temperature}")
    l_pos = (q * k).sum(dim=1, keepdim=True)
    l_neg = q @ queue.t()
    logits = torch.cat([l_pos, l_neg], dim=1) / temperature
    labels = torch.zeros(q.shape[0], dtype=torch.long)
    return F.cross_entropy(logits, labels)


def momentum_update(
    theta_k: Mapping[str, torch.Tensor], theta_q: Mapping[str, torch.Tensor], m: float
) -> dict[str, torch.Tensor]:
    """EMA of every tensor: ``k * m + q * (1 - m)``, including running stats.

    Integer tensors (batch-norm step counters) are copied from ``theta_q``.
    Pure: inputs are never mutated.
    """
    if not 0.0 <= m < 1.0:
        raise RangeError(f"momentum must be in [0, 1), got {m}")
    if set(theta_k) != set(theta_q):
        raise ShapeError("parameter maps have different tensor names")
    out: dict[str, torch.Tensor] = {}
    with torch.no_grad():
        for name, k in theta_k.items():
            q = theta_q[name]
            if tuple(k.shape) != tuple(q.shape):
                raise ShapeError(f"{name}: shape {tuple(k.shape)} vs {tuple(q.shape)}")
            if k.is_floating_point():
                out[name] = k * m + q.to(k.dtype) * (1.0 - m)
            else:
                out[name] = q.clone()
    return out


def enqueue_dequeue(queue, ptr: int, keys):
    """Overwrite ``keys.shape[0]`` rows at ``ptr`` (modulo) and advance it.

    Returns a new ``(queue, ptr)``; rows outside the written window are
    untouched.  Works on torch tensors and numpy arrays alike.
    """
    k_total = queue.shape[0]
    b = keys.shape[0]
    if b > k_total:
        raise SizeError(f"batch of {b} keys exceeds queue size {k_total}")
    if keys.shape[1:] != queue.shape[1:]:
        raise ShapeError(f"key width {keys.shape[1:]} vs queue width {queue.shape[1:]}")
    new_queue = queue.clone() if isinstance(queue, torch.Tensor) else queue.copy()
    rows = (ptr + np.arange(b)) % k_total
    new_queue[rows] = keys
    return new_queue, int((ptr + b) % k_total)


def lr_at(epoch: int, cfg: PretrainConfig) -> float:
    """Step-decayed learning rate: lr0 divided by factor once per passed drop."""
    drops = sum(1 for e in cfg.lr_drop_epochs if e <= epoch)
    # single division keeps the defaults float-exact (0.03 -> 0.003 -> 0.0003)
    return cfg.lr0 / cfg.lr_drop_factor**drops


@dataclass
class MocoState:
    """Everything the training loop mutates, checkpointable as one unit."""

    query: FatigueEncoder
    key: FatigueEncoder
    queue: torch.Tensor
    queue_ptr: int
    epoch: int
    optimizer: torch.optim.Optimizer
    encoder_cfg: EncoderConfig
    pretrain_cfg: PretrainConfig
    seed: int


def _build_optimizer(encoder: FatigueEncoder, cfg: PretrainConfig) -> torch.optim.Optimizer:
    if cfg.optimizer == "adam":
        return torch.optim.Adam(encoder.parameters(), lr=cfg.lr0, weight_decay=cfg.weight_decay)
    return torch.optim.SGD(
        encoder.parameters(), lr=cfg.lr0, momentum=cfg.sgd_momentum, weight_decay=cfg.weight_decay
    )


def init_moco_state(encoder_cfg: EncoderConfig, pretrain_cfg: PretrainConfig, seed: int) -> MocoState:
    """Fresh state: key encoder cloned from query, random unit-norm queue."""
    query = init_encoder(encoder_cfg, derive_seed(seed, "query"))
    key = FatigueEncoder(encoder_cfg)
    key.load_state_dict(query.state_dict())
    key.requires_grad_(False)
    key.eval()

    raw = rng_for(seed, "queue").standard_normal(
        (pretrain_cfg.queue_size, encoder_cfg.embed_dim), dtype=np.float32
    )
    raw /= np.maximum(np.linalg.norm(raw, axis=1, keepdims=True), 1e-12)
    return MocoState(
        query=query,
        key=key,
        queue=torch.from_numpy(raw),
        queue_ptr=0,
        epoch=0,
        optimizer=_build_optimizer(query, pretrain_cfg),
        encoder_cfg=encoder_cfg,
        pretrain_cfg=pretrain_cfg,
        seed=seed,
    )


def _build_pairs(
    scans: Sequence[VolumeSeries], aug_cfg: AugmentConfig, seed: int, n_jobs: int
) -> list[ViewPair]:
    seeds = [derive_seed(seed, "pair", i) for i in range(len(scans))]
    if n_jobs and n_jobs > 1 and len(scans) > 1:
        return Parallel(n_jobs=n_jobs)(
            delayed(make_view_pair)(vs, aug_cfg, s) for vs, s in zip(scans, seeds)
        )
    return [make_view_pair(vs, aug_cfg, s) for vs, s in zip(scans, seeds)]


def pretrain_step(
    state: MocoState,
    batch: Sequence[VolumeSeries],
    pretrain_cfg: PretrainConfig,
    aug_cfg: AugmentConfig,
    seed: int,
    n_jobs: int = 0,
) -> float:
    """One contrastive update; returns the batch loss.

    Order: build view pairs, embed queries (grad) and keys (no grad),
    InfoNCE against the current queue, SGD step on the query encoder,
    EMA update of the key encoder, enqueue the new keys.
    """
    if not batch:
        raise SizeError("empty batch")
    pairs = _build_pairs(batch, aug_cfg, seed, n_jobs)
    xa = torch.from_numpy(np.stack([p.view_a.data for p in pairs]))
    xb = torch.from_numpy(np.stack([p.view_b.data for p in pairs]))

    state.query.train()
    q = state.query(xa)
    with torch.no_grad():
        k = state.key(xb)

    loss = info_nce_batch(q, k, state.queue, pretrain_cfg.temperature)
    if not torch.isfinite(loss):
        raise TrainingError(
            f"non-finite loss {loss.item()!r} at epoch {state.epoch} "
            f"(batch={len(batch)}, lr={state.optimizer.param_groups[0]['lr']})"
        )
    state.optimizer.zero_grad()
    loss.backward()
    state.optimizer.step()

    state.key.load_state_dict(
        momentum_update(state.key.state_dict(), state.query.state_dict(), pretrain_cfg.momentum)
    )
    state.queue, state.queue_ptr = enqueue_dequeue(state.queue, state.queue_ptr, k.detach())
    return float(loss.detach())


def save_moco_checkpoint(state: MocoState, path: str | Path) -> Path:
    """Checkpoint both encoders, queue, optimizer and RNG state."""
    tensors: dict[str, torch.Tensor] = {}
    tensors.update(module_tensors(state.query, "q."))
    tensors.update(module_tensors(state.key, "k."))
    tensors["queue"] = state.queue

    opt_state = state.optimizer.state_dict()
    opt_scalars: dict[str, dict] = {}
    for pid, entries in opt_state["state"].items():
        for key, value in entries.items():
            if isinstance(value, torch.Tensor):
                tensors[f"opt.{pid}.{key}"] = value
            else:
                opt_scalars.setdefault(str(pid), {})[key] = value

    meta = {
        "kind": "moco",
        "encoder_config": state.encoder_cfg.to_dict(),
        "pretrain_config": state.pretrain_cfg.to_dict(),
        "epoch": state.epoch,
        "queue_ptr": state.queue_ptr,
        "seed": state.seed,
        "torch_rng": rng_state_to_hex(torch.get_rng_state()),
        "optimizer_param_groups": opt_state["param_groups"],
        "optimizer_scalars": opt_scalars,
    }
    return save_tensor_dir(path, tensors, meta)


def load_moco_checkpoint(path: str | Path) -> tuple[MocoState, dict]:
    """Rebuild a :class:`MocoState` from disk; returns (state, meta)."""
    tensors, meta = load_tensor_dir(path)
    if meta.get("kind") != "moco":
        raise ConfigError(f"{path}: not a pretraining checkpoint (kind={meta.get('kind')!r})")
    encoder_cfg = EncoderConfig.from_dict(meta["encoder_config"])
    pretrain_cfg = PretrainConfig.from_dict(meta["pretrain_config"])

    query = FatigueEncoder(encoder_cfg)
    load_module_tensors(query, tensors, "q.")
    key = FatigueEncoder(encoder_cfg)
    load_module_tensors(key, tensors, "k.")
    key.requires_grad_(False)
    key.eval()

    optimizer = _build_optimizer(query, pretrain_cfg)
    params = [p for g in optimizer.param_groups for p in g["params"]]
    opt_sd = {"state": {}, "param_groups": meta["optimizer_param_groups"]}
    scalars = meta.get("optimizer_scalars", {})
    for pid in range(len(params)):
        entries: dict = dict(scalars.get(str(pid), {}))
        prefix = f"opt.{pid}."
        for name, arr in tensors.items():
            if name.startswith(prefix):
                entries[name[len(prefix) :]] = torch.from_numpy(np.ascontiguousarray(arr))
        if entries:
            opt_sd["state"][pid] = entries
    if opt_sd["state"]:
        optimizer.load_state_dict(opt_sd)

    state = MocoState(
        query=query,
        key=key,
        queue=torch.from_numpy(np.ascontiguousarray(tensors["queue"])),
        queue_ptr=int(meta["queue_ptr"]),
        epoch=int(meta["epoch"]),
        optimizer=optimizer,
        encoder_cfg=encoder_cfg,
        pretrain_cfg=pretrain_cfg,
        seed=int(meta["seed"]),
    )
    return state, meta


@dataclass
class PretrainResult:
    checkpoint_path: Path
    history: list[dict]
    log_path: Path


def pretrain(
    index: DatasetIndex,
    encoder_cfg: EncoderConfig,
    pretrain_cfg: PretrainConfig,
    aug_cfg: AugmentConfig,
    out_dir: str | Path,
    seed: int = 0,
    resume: str | Path | None = None,
    n_jobs: int = 0,
    on_epoch: Callable[[dict], None] | None = None,
) -> PretrainResult:
    """Run (or resume) the full pretraining loop with per-epoch checkpoints.

    Epoch logs append to ``<out_dir>/log.jsonl``; a checkpoint directory is
    written after every epoch.  Resuming from a checkpoint reproduces the
    uninterrupted run exactly: batch order and augmentations derive from
    ``(seed, epoch, step)``, never from ambient RNG state.
    """
    if len(index) == 0:
        raise SizeError("cannot pretrain on an empty dataset")
    if len(index) < pretrain_cfg.batch_size:
        raise SizeError(
            f"dataset of {len(index)} scans smaller than batch_size {pretrain_cfg.batch_size}"
        )
    out_dir = Path(out_dir)
    ckpt_root = out_dir / "checkpoints"
    ckpt_root.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / "log.jsonl"

    if resume is not None:
        state, meta = load_moco_checkpoint(resume)
        if state.seed != seed:
            raise ConfigError(f"checkpoint seed {state.seed} differs from requested seed {seed}")
        if state.encoder_cfg != encoder_cfg or state.pretrain_cfg != pretrain_cfg:
            raise ConfigError("checkpoint configuration differs from the requested configuration")
        torch.set_rng_state(rng_state_from_hex(meta["torch_rng"]))
    else:
        state = init_moco_state(encoder_cfg, pretrain_cfg, seed)

    batch = pretrain_cfg.batch_size
    history: list[dict] = []
    last_ckpt = Path(resume) if resume is not None else ckpt_root / "epoch_0000"
    for epoch in range(state.epoch, pretrain_cfg.epochs):
        lr = lr_at(epoch, pretrain_cfg)
        for group in state.optimizer.param_groups:
            group["lr"] = lr

        order = rng_for(seed, "order", epoch).permutation(len(index))
        started = time.perf_counter()
        losses = []
        for step in range(len(index) // batch):
            ids = order[step * batch : (step + 1) * batch]
            scans = [load_nifti(index.records[i].path) for i in ids]
            losses.append(
                pretrain_step(state, scans, pretrain_cfg, aug_cfg, derive_seed(seed, "step", epoch, step), n_jobs)
            )
        state.epoch = epoch + 1

        entry = {
            "epoch": epoch,
            "loss": float(np.mean(losses)),
            "lr": lr,
            "wall_time_s": time.perf_counter() - started,
        }
        history.append(entry)
        with open(log_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(entry) + "\n")
        if on_epoch is not None:
            on_epoch(entry)
        last_ckpt = save_moco_checkpoint(state, ckpt_root / f"epoch_{epoch:04d}")

    return PretrainResult(checkpoint_path=last_ckpt, history=history, log_path=log_path)


class MocoPretrainer(BaseEstimator):
    """Estimator facade over :func:`pretrain` (fit on a :class:`DatasetIndex`)."""

    def __init__(
        self,
        encoder_config: EncoderConfig | None = None,
        pretrain_config: PretrainConfig | None = None,
        augment_config: AugmentConfig | None = None,
        out_dir: str = "moco-run",
        seed: int = 0,
        n_jobs: int = 0,
    ):
        self.encoder_config = encoder_config
        self.pretrain_config = pretrain_config
        self.augment_config = augment_config
        self.out_dir = out_dir
        self.seed = seed
        self.n_jobs = n_jobs

    def fit(self, X: DatasetIndex, y=None):
        result = pretrain(
            X,
            self.encoder_config or EncoderConfig(),
            self.pretrain_config or PretrainConfig(),
            self.augment_config or AugmentConfig(),
            self.out_dir,
            seed=self.seed,
            n_jobs=self.n_jobs,
        )
        self.checkpoint_path_ = result.checkpoint_path
        self.history_ = result.history
        return self
