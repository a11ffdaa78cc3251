"""Training regimes: single-net SGD, two-stage freeze-then-fuse fine-tuning,
evaluation, and the all-strategies comparison run.

Everything is deterministic: (seed, config, dataset) fixes every metric row
and every byte of the final checkpoint.
"""

from __future__ import annotations

import time
import zlib
from dataclasses import dataclass, field, replace

import numpy as np

from . import checkpoint as ckpt_io
from . import tensor as T
from .datasets import PairedDataset
from .models import (
    FusionStrategy, MultimodalNet, STRATEGY_ALIASES, STRATEGY_REPORT_NAMES,
    StreamConfig, UnimodalNet, build_multimodal,
)
from .tensor import Tensor


class TransplantError(ValueError):
    """Stage-1 stream parameters do not line up with the fusion net."""


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.001
    batch_size: int = 32
    epochs: int = 30
    seed: int = 0
    precision: int = 32
    shuffle: bool = True
    momentum: float = 0.0
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("learning rate must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.precision not in (32, 64):
            raise ValueError("precision must be 32 or 64")

    @classmethod
    def unimodal(cls, **kw) -> "TrainConfig":
        kw.setdefault("lr", 0.001)
        kw.setdefault("batch_size", 32)
        return cls(**kw)

    @classmethod
    def multimodal(cls, **kw) -> "TrainConfig":
        kw.setdefault("lr", 0.0001)
        kw.setdefault("batch_size", 1)
        return cls(**kw)

    @property
    def dtype(self):
        return np.float32 if self.precision == 32 else np.float64

    def to_kv(self) -> dict:
        return {"lr": repr(self.lr), "batch_size": str(self.batch_size),
                "epochs": str(self.epochs), "seed": str(self.seed),
                "precision": str(self.precision), "shuffle": str(self.shuffle),
                "momentum": repr(self.momentum),
                "weight_decay": repr(self.weight_decay)}


def config_hash(*parts) -> int:
    """Stable CRC32 over canonical reprs; identifies a training setup."""
    blob = "|".join(repr(p) for p in parts).encode("utf-8")
    return zlib.crc32(blob) & 0xFFFFFFFF


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    train_loss: float
    test_accuracy: float


@dataclass
class Checkpoint:
    state: dict  # name -> array, insertion order
    config_hash: int
    epoch: int

    def save(self, path) -> None:
        records = {"meta.epoch": np.asarray(float(self.epoch)),
                   "meta.config_hash": np.asarray(float(self.config_hash))}
        records.update(self.state)
        ckpt_io.save_tensors(path, records)

    @classmethod
    def load(cls, path) -> "Checkpoint":
        records = ckpt_io.load_tensors(path)
        epoch = int(records.pop("meta.epoch"))
        chash = int(records.pop("meta.config_hash"))
        return cls(state=records, config_hash=chash, epoch=epoch)

    def layer_hashes(self) -> dict:
        return {name: zlib.crc32(arr.tobytes()) & 0xFFFFFFFF
                for name, arr in self.state.items()}


@dataclass
class EvalResult:
    accuracy: float
    rows: list  # (sample_id, label, predicted, scores)


def _batch_slices(n: int, batch: int):
    for start in range(0, n, batch):
        yield slice(start, min(start + batch, n))


def accuracy(net, data: PairedDataset, batch_size: int = 128) -> float:
    """Fraction of correct argmax predictions (no per-sample dump)."""
    if len(data) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    dtype = net.dtype
    correct = 0
    for sl in _batch_slices(len(data), batch_size):
        scores = net.scores(data.images[sl].astype(dtype, copy=False),
                            data.spectrograms[sl].astype(dtype, copy=False))
        correct += int((scores.argmax(axis=1) == data.labels[sl]).sum())
    return correct / len(data)


def evaluate(net, data: PairedDataset, batch_size: int = 64) -> EvalResult:
    """Accuracy under first-index argmax tie-breaking, plus a per-sample dump."""
    if len(data) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    dtype = net.dtype
    rows = []
    correct = 0
    for sl in _batch_slices(len(data), batch_size):
        scores = net.scores(data.images[sl].astype(dtype, copy=False),
                            data.spectrograms[sl].astype(dtype, copy=False))
        preds = scores.argmax(axis=1)
        labels = data.labels[sl]
        correct += int((preds == labels).sum())
        for j in range(scores.shape[0]):
            i = sl.start + j
            rows.append((data.image_ids[i], int(labels[j]), int(preds[j]),
                         scores[j].astype(np.float64).tolist()))
    return EvalResult(accuracy=correct / len(data), rows=rows)


def train(net, train_data: PairedDataset, test_data: PairedDataset,
          cfg: TrainConfig) -> tuple:
    """SGD over seeded-shuffle minibatches; returns (Checkpoint, metric rows).

    Each epoch appends one (epoch, mean train loss, test accuracy) row. A
    non-finite loss aborts immediately with the failing epoch and batch.
    """
    if len(train_data) == 0:
        raise ValueError("cannot train on an empty dataset")
    dtype = net.dtype
    images = train_data.images.astype(dtype, copy=False)
    specs = train_data.spectrograms.astype(dtype, copy=False)
    labels = train_data.labels
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 17]))
    metrics: list[EpochMetrics] = []
    n = len(train_data)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n) if cfg.shuffle else np.arange(n)
        losses = []
        for bi, sl in enumerate(_batch_slices(n, cfg.batch_size)):
            idx = order[sl]
            try:
                loss = net.loss_t(Tensor(np.ascontiguousarray(images[idx])),
                                  Tensor(np.ascontiguousarray(specs[idx])),
                                  labels[idx])
            except T.NumericError as e:
                raise T.NumericError(f"non-finite loss at epoch {epoch}, "
                                     f"batch {bi}: {e}") from e
            losses.append(loss.item())
            T.backward(loss)
            T.sgd_step(net.params, cfg.lr, cfg.momentum, cfg.weight_decay)
        test_acc = accuracy(net, test_data) if len(test_data) else float("nan")
        metrics.append(EpochMetrics(epoch, float(np.mean(losses)), test_acc))
    chash = config_hash(cfg, getattr(net, "strategy", None), net.cfg)
    return Checkpoint(state=net.params.state_arrays(), config_hash=chash,
                      epoch=cfg.epochs), metrics


# ---------------------------------------------------------------------------
# two-stage fine-tuning

@dataclass(frozen=True)
class StageSchedule:
    stage1_image: TrainConfig
    stage1_audio: TrainConfig
    stage2: TrainConfig


@dataclass
class TwoStageResult:
    checkpoint: Checkpoint
    stage1_image: Checkpoint
    stage1_audio: Checkpoint
    stage1_image_metrics: list
    stage1_audio_metrics: list
    stage2_metrics: list
    frozen_names: frozenset
    trainable_names: frozenset


def transplant(fusion_net: MultimodalNet, image_net: UnimodalNet,
               audio_net: UnimodalNet) -> None:
    """Copy stage-1 stream weights into the fusion net by name.

    The fusion net's declared stream name sets drive the mapping: a name
    like image.conv1.w pulls conv1.w from the image stream. Any name the
    source stream cannot supply is an error.
    """
    for prefix, src in (("image.", image_net), ("audio.", audio_net)):
        dst_names = fusion_net.param_sets.image if prefix == "image." \
            else fusion_net.param_sets.audio
        for name in sorted(dst_names):
            short = name[len(prefix):]
            if short not in src.params:
                raise TransplantError(f"fusion parameter {name!r} has no "
                                      f"counterpart {short!r} in the {prefix[:-1]} stream")
            src_t = src.params[short]
            dst_t = fusion_net.params[name]
            if src_t.shape != dst_t.shape:
                raise TransplantError(f"shape mismatch transplanting {name!r}: "
                                      f"{src_t.shape} vs {dst_t.shape}")
            dst_t.data = src_t.data.astype(dst_t.data.dtype, copy=True)
            dst_t.grad = np.zeros_like(dst_t.data)


def two_stage_finetune(schedule: StageSchedule, fusion_net: MultimodalNet,
                       image_net: UnimodalNet, audio_net: UnimodalNet,
                       train_data: PairedDataset,
                       test_data: PairedDataset) -> TwoStageResult:
    """Train each stream standalone, transplant, then train only the fusion part.

    For strategies with a parameterless fusion (sum / mul / score-avg) the
    closest trainable stand-in is each stream's final class-score layer, so
    stage 2 unfreezes exactly the two fc8 layers; everything transplanted
    below them stays frozen. Stage 2 with 0 epochs degenerates to pure
    score fusion of the stage-1 streams.
    """
    if fusion_net.strategy is FusionStrategy.EARLY_CONCAT:
        raise ValueError("two-stage fine-tuning needs per-modality streams; "
                         "the early-concat net has a single merged stream")
    ck_img, m_img = train(image_net, train_data, test_data, schedule.stage1_image)
    ck_aud, m_aud = train(audio_net, train_data, test_data, schedule.stage1_audio)
    transplant(fusion_net, image_net, audio_net)

    stream_names = fusion_net.param_sets.image | fusion_net.param_sets.audio
    if fusion_net.param_sets.fusion:
        trainable = fusion_net.param_sets.fusion
    else:
        trainable = fusion_net.fc8_names()
    frozen = frozenset(fusion_net.params.names()) - trainable
    fusion_net.params.freeze(sorted(stream_names))
    fusion_net.params.unfreeze(sorted(trainable))

    if schedule.stage2.epochs > 0:
        ck_fused, m_fused = train(fusion_net, train_data, test_data, schedule.stage2)
    else:
        chash = config_hash(schedule.stage2, fusion_net.strategy, fusion_net.cfg)
        ck_fused = Checkpoint(state=fusion_net.params.state_arrays(),
                              config_hash=chash, epoch=0)
        m_fused = []
    return TwoStageResult(checkpoint=ck_fused, stage1_image=ck_img,
                          stage1_audio=ck_aud, stage1_image_metrics=m_img,
                          stage1_audio_metrics=m_aud, stage2_metrics=m_fused,
                          frozen_names=frozen, trainable_names=frozenset(trainable))


# ---------------------------------------------------------------------------
# strategy comparison

COMPARE_ROWS = ("image", "audio", "net1", "net2", "net3-sum", "net3-mul",
                "fc7-concat", "score-avg")


@dataclass
class StrategyRow:
    name: str
    accuracy: float
    epochs: int
    wall_seconds: float
    metrics: list


@dataclass
class ComparisonReport:
    rows: list  # of StrategyRow, in COMPARE_ROWS order

    def row(self, name: str) -> StrategyRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    def accuracy(self, name: str) -> float:
        return self.row(name).accuracy


def _build_row_net(name: str, stream_cfg: StreamConfig, seed: int, dtype):
    if name in ("image", "audio"):
        return UnimodalNet(stream_cfg, name, seed=seed, dtype=dtype)
    return build_multimodal(STRATEGY_ALIASES[name], stream_cfg, seed=seed, dtype=dtype)


def compare_strategies(train_data: PairedDataset, test_data: PairedDataset,
                       cfg: TrainConfig, stream_cfg: StreamConfig) -> ComparisonReport:
    """Train both unimodal streams and all six fusion variants under one
    seed and one config, and collect the final test accuracies."""
    rows = []
    for name in COMPARE_ROWS:
        net = _build_row_net(name, stream_cfg, cfg.seed, cfg.dtype)
        t0 = time.perf_counter()
        _, metrics = train(net, train_data, test_data, cfg)
        wall = time.perf_counter() - t0
        rows.append(StrategyRow(name=name, accuracy=metrics[-1].test_accuracy,
                                epochs=cfg.epochs, wall_seconds=wall,
                                metrics=metrics))
    return ComparisonReport(rows=rows)
