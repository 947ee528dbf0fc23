"""Loss, training loop, transfer-learning workflows, checkpoints, and the
optimizer x freeze-ratio sweep harness."""

from __future__ import annotations

import json
import logging
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

from .arch import ArchDescriptor, apply_freeze, build_architecture, count_parameters
from .data import AugmentConfig, DatasetIndex, make_batches
from .layers import Parameter, param_shapes
from .metrics import ConfusionMatrix, SampleRecord, macro_metrics
from .model import Model
from .optim import Optimizer, OptimizerConfig
from .tensor import Rng, Tensor, TensorFormatError, tensor_from_bytes, tensor_to_bytes

log = logging.getLogger("floranet.train")

CKPT_MAGIC = b"FLORCKPT"
CKPT_VERSION = 1


class TrainError(ValueError):
    pass


class TrainingDiverged(TrainError):
    """Non-finite loss; carries the first offending (epoch, batch, layer)."""

    def __init__(self, epoch: int, batch: int, layer: str):
        self.epoch, self.batch, self.layer = epoch, batch, layer
        super().__init__(
            f"non-finite loss at epoch {epoch}, batch {batch}; "
            f"first non-finite output in layer {layer!r}")


class CheckpointError(TrainError):
    pass


class ClampedProbabilityWarning(UserWarning):
    """A true-class probability of zero was clamped before taking the log."""


def cross_entropy(probs: np.ndarray, one_hot: np.ndarray):
    """Mean negative log-likelihood plus its gradient w.r.t. the logits.

    The returned gradient is for the pre-softmax logits of the layer that
    produced `probs` (softmax and cross-entropy fused): (p - y) / N.
    """
    if probs.shape != one_hot.shape:
        raise TrainError(f"shape mismatch: probs {probs.shape} vs labels {one_hot.shape}")
    n = probs.shape[0]
    if not np.isfinite(probs).all():
        # leave divergence diagnosis to the caller
        return float("nan"), (probs - one_hot) / n
    row_sums = probs.sum(axis=1)
    if np.abs(row_sums - 1.0).max() > 1e-3:
        raise TrainError("probability rows must sum to 1")
    true_p = (probs * one_hot).sum(axis=1)
    if (true_p <= 0).any():
        warnings.warn("zero probability at true label clamped to 1e-12",
                      ClampedProbabilityWarning, stacklevel=2)
        true_p = np.maximum(true_p, 1e-12)
    loss = float(-np.log(true_p).mean())
    grad = (probs - one_hot) / n
    return loss, grad


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    optimizer: OptimizerConfig = field(default_factory=lambda: OptimizerConfig("sgd"))
    freeze_ratio: float = 0.0
    seed: int = 0
    augment: AugmentConfig | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise TrainError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise TrainError(f"batch_size must be >= 1, got {self.batch_size}")

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "optimizer": self.optimizer.to_dict(),
            "freeze_ratio": self.freeze_ratio,
            "seed": self.seed,
            "augment": self.augment.to_dict() if self.augment else None,
        }

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        return TrainConfig(
            epochs=d["epochs"],
            batch_size=d["batch_size"],
            optimizer=OptimizerConfig.from_dict(d["optimizer"]),
            freeze_ratio=d["freeze_ratio"],
            seed=d["seed"],
            augment=AugmentConfig.from_dict(d["augment"]) if d.get("augment") else None,
        )


@dataclass
class TrainResult:
    model: Model
    history: dict
    config: TrainConfig
    steps: int = 0


@dataclass
class EvalResult:
    cm: ConfusionMatrix
    loss: float
    records: list[SampleRecord]

    @property
    def metrics(self) -> dict:
        return macro_metrics(self.cm)


def _first_nonfinite_layer(model: Model, x: np.ndarray) -> str:
    outs = model.forward(x, mode="train", return_all=True)
    for node, out in zip(model.desc.nodes, outs):
        if not np.isfinite(out).all():
            return node.name
    return "<loss>"


def evaluate(model: Model, index: DatasetIndex, batch_size: int = 32,
             collect_records: bool = False) -> EvalResult:
    """Inference-mode pass over a dataset: confusion matrix and mean loss."""
    hw = model.desc.input_shape[:2]
    cm = ConfusionMatrix(index.num_classes)
    records: list[SampleRecord] = []
    total_loss, n_batches, pos = 0.0, 0, 0
    for x, y in make_batches(index, hw, batch_size, shuffle=False):
        probs = model.forward(x, mode="infer")
        loss, _ = cross_entropy(probs, y)
        total_loss += loss
        n_batches += 1
        actual = y.argmax(axis=1)
        predicted = probs.argmax(axis=1)
        cm.accumulate_batch(actual, predicted)
        if collect_records:
            for row in range(len(actual)):
                src, _ = index.samples[pos + row]
                sid = str(src) if not isinstance(src, np.ndarray) else f"sample_{pos + row}"
                records.append(SampleRecord(sid, int(actual[row]), int(predicted[row]),
                                            float(probs[row, predicted[row]])))
        pos += len(actual)
    return EvalResult(cm, total_loss / max(n_batches, 1), records)


def train(desc: ArchDescriptor, train_index: DatasetIndex,
          val_index: DatasetIndex | None, config: TrainConfig,
          model: Model | None = None) -> TrainResult:
    """Run the epoch loop; returns the trained model and per-epoch history.

    The model is freshly initialized from config.seed unless one is passed in
    (transfer learning). Frozen-prefix parameters are never touched: their
    gradients are skipped and batch-norm nodes in the prefix run in
    inference mode throughout.
    """
    if len(train_index) == 0:
        raise TrainError("empty training set")
    if model is None:
        model = Model(desc, Rng(config.seed))
    plan = apply_freeze(desc, config.freeze_ratio)
    model.apply_freeze_plan(plan)
    optimizer = Optimizer(config.optimizer, model.parameters())
    hw = desc.input_shape[:2]

    history = {"train_loss": [], "train_acc": [], "val_loss": [], "val_acc": []}
    for epoch in range(config.epochs):
        epoch_loss, correct, seen, batch_no = 0.0, 0, 0, 0
        for x, y in make_batches(train_index, hw, config.batch_size,
                                 seed=config.seed, epoch=epoch,
                                 augment_config=config.augment):
            probs = model.forward(x, mode="train")
            loss, dlogits = cross_entropy(probs, y)
            if not np.isfinite(loss):
                raise TrainingDiverged(epoch, batch_no,
                                       _first_nonfinite_layer(model, x))
            model.backward_from_logits(dlogits)
            optimizer.step()
            epoch_loss += loss * len(x)
            correct += int((probs.argmax(axis=1) == y.argmax(axis=1)).sum())
            seen += len(x)
            batch_no += 1
        history["train_loss"].append(epoch_loss / seen)
        history["train_acc"].append(correct / seen)
        if val_index is not None and len(val_index) > 0:
            vloss, vcorrect, vseen = 0.0, 0, 0
            for x, y in make_batches(val_index, hw, config.batch_size,
                                     seed=config.seed, epoch=epoch,
                                     augment_config=config.augment, shuffle=False):
                probs = model.forward(x, mode="infer")
                loss, _ = cross_entropy(probs, y)
                vloss += loss * len(x)
                vcorrect += int((probs.argmax(axis=1) == y.argmax(axis=1)).sum())
                vseen += len(x)
            history["val_loss"].append(vloss / vseen)
            history["val_acc"].append(vcorrect / vseen)
        else:
            history["val_loss"].append(float("nan"))
            history["val_acc"].append(float("nan"))
        log.info("epoch %d/%d loss %.4f acc %.4f", epoch + 1, config.epochs,
                 history["train_loss"][-1], history["train_acc"][-1])
    return TrainResult(model, history, config, steps=optimizer.step_counter)


def pretrain_then_finetune(desc: ArchDescriptor,
                           source_data: tuple[DatasetIndex, DatasetIndex | None],
                           target_data: tuple[DatasetIndex, DatasetIndex | None],
                           freeze_ratio: float,
                           source_config: TrainConfig,
                           target_config: TrainConfig):
    """Train on a source task, then fine-tune the base on a target task.

    The head is re-created for the target class count; base weights start
    from the source model and the freeze plan applies to the base prefix.
    """
    src_train, src_val = source_data
    tgt_train, tgt_val = target_data
    src_desc = build_architecture(desc.name, desc.input_shape,
                                  src_train.num_classes, desc.head)
    src_result = train(src_desc, src_train, src_val, source_config)

    tgt_desc = build_architecture(desc.name, desc.input_shape,
                                  tgt_train.num_classes, desc.head)
    tgt_model = Model(tgt_desc, Rng(target_config.seed))
    tgt_model.copy_weights_from(src_result.model, range(tgt_desc.base_len))
    tgt_config = TrainConfig(
        epochs=target_config.epochs, batch_size=target_config.batch_size,
        optimizer=target_config.optimizer, freeze_ratio=freeze_ratio,
        seed=target_config.seed, augment=target_config.augment)
    tgt_result = train(tgt_desc, tgt_train, tgt_val, tgt_config, model=tgt_model)
    return src_result, tgt_result


SWEEP_COLUMNS = ("architecture", "optimizer", "freeze_ratio", "head",
                 "accuracy", "loss", "precision", "recall", "f1", "status")


def run_sweep(arch_names: list[str], optimizer_kinds: list[str],
              freeze_ratios: list[float], heads: list[str],
              data: tuple[DatasetIndex, DatasetIndex, DatasetIndex],
              config: TrainConfig, input_shape=(32, 32, 3)) -> list[dict]:
    """Train one cell per grid point from an identical seed and evaluate on
    the test split. A failing cell is recorded and the sweep continues."""
    if not arch_names or not optimizer_kinds or not freeze_ratios or not heads:
        raise TrainError("sweep grid must be non-empty on every axis")
    train_index, val_index, test_index = data
    rows = []
    for arch in arch_names:
        for head in heads:
            for kind in optimizer_kinds:
                for ratio in freeze_ratios:
                    row = {"architecture": arch, "optimizer": kind,
                           "freeze_ratio": ratio, "head": head}
                    try:
                        desc = build_architecture(arch, input_shape,
                                                  train_index.num_classes, head)
                        cell_cfg = TrainConfig(
                            epochs=config.epochs, batch_size=config.batch_size,
                            optimizer=OptimizerConfig(kind),
                            freeze_ratio=ratio, seed=config.seed,
                            augment=config.augment)
                        result = train(desc, train_index, val_index, cell_cfg)
                        ev = evaluate(result.model, test_index, config.batch_size)
                        m = ev.metrics
                        row.update(accuracy=m["top1_accuracy"], loss=ev.loss,
                                   precision=m["precision"], recall=m["recall"],
                                   f1=m["f1"], status="ok")
                    except KeyboardInterrupt:
                        raise
                    except Exception as exc:
                        log.error("sweep cell %s failed: %s", row, exc)
                        row.update(accuracy=float("nan"), loss=float("nan"),
                                   precision=float("nan"), recall=float("nan"),
                                   f1=float("nan"), status=f"failed: {exc}")
                    rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# Checkpoint file:
#   magic "FLORCKPT" | format version u32 LE | header length u64 LE
#   | UTF-8 JSON header | tensor records (tensor-core format) in
#   descriptor order.
# ---------------------------------------------------------------------------

def save_checkpoint(path, model: Model, class_names: list[str],
                    train_config: TrainConfig | None = None,
                    history: dict | None = None) -> None:
    header = {
        "architecture": model.desc.to_dict(),
        "class_names": list(class_names),
        "preprocessing": {
            "input_size": list(model.desc.input_shape[:2]),
            "pixel_scale": "1/255",
        },
        "train_config": train_config.to_dict() if train_config else None,
        "history": history or {},
        "param_counts": count_parameters(model.desc),
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<I", CKPT_VERSION))
        f.write(struct.pack("<Q", len(header_bytes)))
        f.write(header_bytes)
        for p in model.parameters():
            f.write(tensor_to_bytes(p.values))


@dataclass
class LoadedCheckpoint:
    model: Model
    class_names: list[str]
    header: dict


def load_checkpoint(path) -> LoadedCheckpoint:
    """Read and verify a checkpoint: blob shapes against the descriptor and
    parameter totals against the header."""
    with open(path, "rb") as f:
        buf = f.read()
    if len(buf) < len(CKPT_MAGIC) + 12:
        raise CheckpointError("file too short to be a checkpoint")
    if buf[:len(CKPT_MAGIC)] != CKPT_MAGIC:
        raise CheckpointError(f"bad magic {buf[:len(CKPT_MAGIC)]!r}")
    pos = len(CKPT_MAGIC)
    (version,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    if version != CKPT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (hlen,) = struct.unpack_from("<Q", buf, pos)
    pos += 8
    if len(buf) - pos < hlen:
        raise CheckpointError("header truncated")
    try:
        header = json.loads(buf[pos:pos + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable header: {exc}") from exc
    pos += hlen

    desc = ArchDescriptor.from_dict(header["architecture"])
    params: list[list[Parameter]] = []
    for node in desc.nodes:
        group = []
        for pname, shape, moving in param_shapes(node):
            try:
                t, pos = tensor_from_bytes(buf, pos)
            except TensorFormatError as exc:
                raise CheckpointError(
                    f"parameter {node.name}/{pname}: {exc}") from exc
            if t.shape != tuple(shape):
                raise CheckpointError(
                    f"parameter {node.name}/{pname}: blob shape {t.shape} "
                    f"does not match descriptor shape {tuple(shape)}")
            group.append(Parameter(pname, t, Tensor.zeros(t.shape, t.dtype),
                                   trainable=not moving, moving_stat=moving))
        params.append(group)
    if pos != len(buf):
        raise CheckpointError(f"{len(buf) - pos} unexpected trailing bytes")

    counts = count_parameters(desc)
    declared = header.get("param_counts", {})
    if declared and declared.get("total") != counts["total"]:
        raise CheckpointError(
            f"header declares {declared.get('total')} parameters, descriptor "
            f"defines {counts['total']}")
    model = Model(desc, params=params)
    return LoadedCheckpoint(model, list(header.get("class_names", [])), header)
