"""Training loop, RMSprop, plateau LR schedule, checkpoints, evaluation.

Checkpoints are single binary files: the 16-byte framed header (magic CUNC,
version 1) followed by a length-prefixed UTF-8 config document and a sorted
sequence of named little-endian binary32 arrays. Parameter tensors, batch
norm running statistics, optimizer accumulators, and bookkeeping scalars all
live in one flat namespace (param/, buffer/, rms/, state/ prefixes), so a
checkpoint alone is enough to rebuild the network and resume or evaluate.

The training loop is deterministic given (graph seed, data, train seed): the
epoch shuffle and every augmentation draw derive from SeedSequence keys, and
the wall clock is injectable so log files can be reproduced bitwise in tests.
"""

from __future__ import annotations

import math
import os
import struct
import time
from dataclasses import dataclass, field

import numpy as np

from .config import (CUNetConfig, DenseUNetConfig, format_config,
                     format_dense_config, parse_config, parse_dense_config)
from .fileio import atomic_write_bytes, atomic_write_text, pack_record, unpack_record
from .graph import NetworkGraph, build_cu_net, build_dense_unet, forward
from .metrics import EvalResult, decode_keypoints, pck
from .supervision import total_loss
from .synth import DatasetReader, augment
from .tensor import Tensor, backward

__all__ = [
    "RMSProp", "PlateauSchedule", "TrainResult", "Checkpoint",
    "train", "evaluate",
    "save_checkpoint", "load_checkpoint", "apply_checkpoint",
    "build_from_checkpoint",
]

CHECKPOINT_MAGIC = b"CUNC"
CHECKPOINT_VERSION = 1

DEFAULT_LR = 2.5e-4
DROP_LR = 5e-5


class RMSProp:
    """RMSprop over a named parameter dict: s <- 0.99 s + 0.01 g^2,
    theta <- theta - lr g / (sqrt(s) + 1e-8).

    A step with any non-finite gradient is skipped entirely (no parameter or
    accumulator moves) and the offending names are returned.
    """

    def __init__(self, params: dict[str, Tensor], lr: float = DEFAULT_LR,
                 rho: float = 0.99, eps: float = 1e-8):
        if lr <= 0:
            raise ValueError(f"rmsprop: lr must be positive, got {lr}")
        if not 0.0 <= rho < 1.0:
            raise ValueError(f"rmsprop: rho must be in [0, 1), got {rho}")
        if eps <= 0:
            raise ValueError(f"rmsprop: eps must be positive, got {eps}")
        self.params = dict(params)
        self.lr = lr
        self.rho = rho
        self.eps = eps
        self.accum = {name: np.zeros_like(t.data) for name, t in self.params.items()}

    def step(self) -> list[str]:
        bad = [name for name, t in self.params.items()
               if t.grad is not None and not np.isfinite(t.grad).all()]
        if bad:
            return bad
        for name, t in self.params.items():
            g = t.grad
            if g is None:
                continue
            s = self.accum[name]
            s *= self.rho
            s += (1.0 - self.rho) * g * g
            update = g / (np.sqrt(s) + self.eps)
            update *= self.lr
            t.data -= update
        return []

    def clear_grads(self) -> None:
        for t in self.params.values():
            t.grad = None


class PlateauSchedule:
    """One-shot LR drop when a higher-is-better metric stalls.

    The first update records the baseline without counting toward patience.
    After `patience` consecutive epochs with improvement below
    `min_improvement`, the rate drops to `drop_lr` once and stays there.
    """

    def __init__(self, initial_lr: float = DEFAULT_LR, drop_lr: float = DROP_LR,
                 patience: int = 5, min_improvement: float = 1e-4):
        self.lr = initial_lr
        self.drop_lr = drop_lr
        self.patience = patience
        self.min_improvement = min_improvement
        self.best: float | None = None
        self.bad_epochs = 0
        self.dropped = False

    def update(self, metric: float) -> float:
        if math.isnan(metric):
            metric = -math.inf
        if self.best is None:
            self.best = metric
            return self.lr
        if metric > self.best + self.min_improvement:
            self.best = metric
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if not self.dropped and self.bad_epochs >= self.patience:
                self.lr = self.drop_lr
                self.dropped = True
                self.bad_epochs = 0
        return self.lr


# ---------------------------------------------------------------------------
# checkpoints

@dataclass
class Checkpoint:
    config_text: str
    arrays: dict[str, np.ndarray]  # name -> float32 array

    @property
    def scalars(self) -> dict[str, float]:
        # stored scalars round-trip as one-element arrays
        return {name[len("state/"):]: float(arr.item())
                for name, arr in self.arrays.items() if name.startswith("state/")}


def _encode_arrays(arrays: dict[str, np.ndarray]) -> bytes:
    out = bytearray()
    out += struct.pack("<I", len(arrays))
    for name in sorted(arrays):
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(arrays[name], dtype="<f4")
        if len(raw) > 0xFFFF:
            raise ValueError(f"checkpoint: array name too long: {name[:40]}...")
        if arr.ndim > 0xFF:
            raise ValueError(f"checkpoint: array {name} has too many dimensions")
        out += struct.pack("<H", len(raw))
        out += raw
        out += struct.pack("<B", arr.ndim)
        for d in arr.shape:
            out += struct.pack("<I", d)
        out += arr.tobytes()
    return bytes(out)


def _decode_arrays(payload: bytes, offset: int) -> dict[str, np.ndarray]:
    def need(n: int, what: str):
        if offset + n > len(payload):
            raise ValueError(f"checkpoint: truncated while reading {what}")

    need(4, "array count")
    (count,) = struct.unpack_from("<I", payload, offset)
    offset += 4
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        need(2, "array name length")
        (name_len,) = struct.unpack_from("<H", payload, offset)
        offset += 2
        need(name_len, "array name")
        name = payload[offset:offset + name_len].decode("utf-8")
        offset += name_len
        need(1, f"rank of {name}")
        ndim = payload[offset]
        offset += 1
        need(4 * ndim, f"shape of {name}")
        shape = struct.unpack_from(f"<{ndim}I", payload, offset) if ndim else ()
        offset += 4 * ndim
        size = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        need(4 * size, f"data of {name}")
        data = np.frombuffer(payload, dtype="<f4", count=size, offset=offset)
        offset += 4 * size
        if name in arrays:
            raise ValueError(f"checkpoint: duplicate array {name}")
        arrays[name] = data.reshape(shape).copy()
    if offset != len(payload):
        raise ValueError(f"checkpoint: {len(payload) - offset} trailing bytes")
    return arrays


def _graph_config_text(graph: NetworkGraph) -> str:
    if graph.arch == "dense":
        return format_dense_config(graph.config)
    if graph.arch in ("cu", "stacked"):
        return format_config(graph.config)
    raise ValueError(f"checkpoint: cannot serialize a {graph.arch!r} graph "
                     f"(no config document)")


def save_checkpoint(path, graph: NetworkGraph, optimizer: RMSProp | None = None,
                    scalars: dict[str, float] | None = None) -> None:
    arrays: dict[str, np.ndarray] = {}
    for name, t in graph.params.items():
        arrays[f"param/{name}"] = t.data
    for name, buf in graph.buffers.items():
        arrays[f"buffer/{name}"] = buf
    if optimizer is not None:
        for name, s in optimizer.accum.items():
            arrays[f"rms/{name}"] = s
    for key, value in (scalars or {}).items():
        arrays[f"state/{key}"] = np.asarray(float(value), dtype=np.float32)

    config_bytes = _graph_config_text(graph).encode("utf-8")
    payload = struct.pack("<I", len(config_bytes)) + config_bytes
    payload += _encode_arrays(arrays)
    atomic_write_bytes(path, pack_record(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, payload))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    payload = unpack_record(blob, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)
    if len(payload) < 4:
        raise ValueError("checkpoint: payload too short for config length")
    (config_len,) = struct.unpack_from("<I", payload, 0)
    if 4 + config_len > len(payload):
        raise ValueError("checkpoint: truncated config document")
    config_text = payload[4:4 + config_len].decode("utf-8")
    arrays = _decode_arrays(payload, 4 + config_len)
    return Checkpoint(config_text=config_text, arrays=arrays)


def _match_names(kind: str, have, want) -> None:
    have, want = set(have), set(want)
    missing = sorted(want - have)
    extra = sorted(have - want)
    if missing:
        raise ValueError(f"checkpoint: missing {kind} {missing[0]!r}"
                         + (f" (+{len(missing) - 1} more)" if len(missing) > 1 else ""))
    if extra:
        raise ValueError(f"checkpoint: unexpected {kind} {extra[0]!r}"
                         + (f" (+{len(extra) - 1} more)" if len(extra) > 1 else ""))


def apply_checkpoint(graph: NetworkGraph, ckpt: Checkpoint,
                     optimizer: RMSProp | None = None) -> dict[str, float]:
    """Copy stored params/buffers (and optimizer accumulators) into place.

    Name sets must match the graph exactly; the first mismatching or
    mis-shaped entry is named. Returns the stored bookkeeping scalars.
    """
    stored_params = {k[len("param/"):]: v for k, v in ckpt.arrays.items()
                     if k.startswith("param/")}
    stored_buffers = {k[len("buffer/"):]: v for k, v in ckpt.arrays.items()
                      if k.startswith("buffer/")}
    _match_names("parameter", stored_params, graph.params)
    _match_names("buffer", stored_buffers, graph.buffers)
    for name, t in graph.params.items():
        src = stored_params[name]
        if src.shape != t.data.shape:
            raise ValueError(f"checkpoint: parameter {name!r} has shape {src.shape}, "
                             f"graph expects {t.data.shape}")
    for name, buf in graph.buffers.items():
        src = stored_buffers[name]
        if src.shape != buf.shape:
            raise ValueError(f"checkpoint: buffer {name!r} has shape {src.shape}, "
                             f"graph expects {buf.shape}")
    for name, t in graph.params.items():
        t.data[...] = stored_params[name].astype(t.data.dtype)
    for name, buf in graph.buffers.items():
        buf[...] = stored_buffers[name].astype(buf.dtype)
    graph.initialized = True
    if optimizer is not None:
        stored_rms = {k[len("rms/"):]: v for k, v in ckpt.arrays.items()
                      if k.startswith("rms/")}
        if stored_rms:
            _match_names("optimizer slot", stored_rms, optimizer.accum)
            for name, s in optimizer.accum.items():
                src = stored_rms[name]
                if src.shape != s.shape:
                    raise ValueError(f"checkpoint: optimizer slot {name!r} has shape "
                                     f"{src.shape}, expected {s.shape}")
                s[...] = src.astype(s.dtype)
    return ckpt.scalars


def build_from_checkpoint(path, dtype=np.float32) -> tuple[NetworkGraph, Checkpoint]:
    """Rebuild the stored network: parse the config block, build shapes,
    then overwrite every tensor from the file."""
    ckpt = load_checkpoint(path)
    keys = {line.partition("=")[0].strip()
            for line in ckpt.config_text.splitlines() if "=" in line}
    if "arch" in keys:
        cfg = parse_dense_config(ckpt.config_text)
        graph = build_dense_unet(cfg, dtype=dtype, init=False)
    else:
        cfg = parse_config(ckpt.config_text)
        graph = build_cu_net(cfg, dtype=dtype, init=False)
    apply_checkpoint(graph, ckpt)
    return graph, ckpt


# ---------------------------------------------------------------------------
# evaluation

def _heat_stride(reader: DatasetReader) -> float:
    return reader.input_res / reader.heat_res


def _batch_arrays(reader: DatasetReader, indices, dtype,
                  augmented=None) -> tuple[np.ndarray, np.ndarray, list]:
    samples = [augmented(i) if augmented else reader.load(i) for i in indices]
    x = np.stack([s.image for s in samples]).astype(dtype)
    y = np.stack([s.heatmaps for s in samples]).astype(dtype)
    return x, y, samples


def evaluate(graph: NetworkGraph, reader: DatasetReader, alpha: float = 0.5,
             kind: str = "pckh", batch_size: int = 32,
             indices=None) -> EvalResult:
    """Score the final head on a dataset: argmax decode against the
    continuous ground truth in heatmap coordinates."""
    if not graph.heads:
        raise ValueError("evaluate: graph has no supervision heads")
    if indices is None:
        indices = range(len(reader))
    indices = list(indices)
    if not indices:
        raise ValueError("evaluate: dataset is empty")
    dtype = next(iter(graph.params.values())).data.dtype
    stride = _heat_stride(reader)

    preds, gts, vis = [], [], []
    for start in range(0, len(indices), batch_size):
        chunk = indices[start:start + batch_size]
        x, _, samples = _batch_arrays(reader, chunk, dtype)
        heads = forward(graph, Tensor(x), mode="eval")
        preds.append(decode_keypoints(heads[-1].data))
        gts.append(np.stack([s.pose.xy for s in samples]) / stride)
        vis.append(np.stack([s.pose.visible for s in samples]))
    return pck(np.concatenate(preds), np.concatenate(gts), np.concatenate(vis),
               alpha=alpha, kind=kind)


# ---------------------------------------------------------------------------
# training

@dataclass
class TrainResult:
    epochs_run: int
    best_metric: float
    best_epoch: int
    final_lr: float
    checkpoint_path: str
    log_path: str
    stopped_early: bool = False
    aborted: bool = False
    abort_reason: str | None = None
    skipped_steps: int = 0
    rows: list[tuple] = field(default_factory=list)


def _epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, epoch])))


def _augment_rng(seed: int, epoch: int, index: int) -> np.random.Generator:
    return np.random.Generator(
        np.random.PCG64(np.random.SeedSequence([seed, epoch, index])))


def _write_log(path, rows) -> None:
    lines = ["epoch,train_loss,val_pck,lr,seconds"]
    for epoch, loss, metric, lr, seconds in rows:
        metric_text = "nan" if math.isnan(metric) else f"{metric:.6f}"
        lines.append(f"{epoch},{loss:.8f},{metric_text},{lr:.8g},{seconds:.3f}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def train(graph: NetworkGraph, train_reader: DatasetReader,
          val_reader: DatasetReader, out_dir, *, epochs: int,
          batch_size: int = 8, initial_lr: float = DEFAULT_LR,
          drop_lr: float = DROP_LR, patience: int = 5,
          min_improvement: float = 1e-4, seed: int = 0,
          augment_data: bool = False, alpha: float = 0.5,
          ref_kind: str = "pckh", target_metric: float | None = None,
          eval_batch: int = 32, now=None, log_fn=None) -> TrainResult:
    """Run the full loop: shuffled minibatches, RMSprop, per-epoch validation,
    plateau LR drop, checkpoint-on-improvement, CSV log.

    A checkpoint is written before the first step, so even an aborted run
    leaves a loadable model. A non-finite training loss aborts immediately;
    the last good checkpoint stays in place. `target_metric` stops early once
    the validation score reaches it. `now` replaces the wall clock in tests.
    """
    if epochs < 1:
        raise ValueError(f"train: epochs must be >= 1, got {epochs}")
    if batch_size < 1:
        raise ValueError(f"train: batch_size must be >= 1, got {batch_size}")
    if not graph.heads:
        raise ValueError("train: graph has no supervision heads")
    cfg = graph.config
    if train_reader.input_res != cfg.input_res:
        raise ValueError(f"train: dataset input_res {train_reader.input_res} does not "
                         f"match network input_res {cfg.input_res}")
    if val_reader.input_res != cfg.input_res:
        raise ValueError(f"train: validation input_res {val_reader.input_res} does not "
                         f"match network input_res {cfg.input_res}")
    if len(train_reader) == 0:
        raise ValueError("train: training dataset is empty")

    now = now or time.perf_counter
    os.makedirs(out_dir, exist_ok=True)
    ckpt_path = os.path.join(os.fspath(out_dir), "checkpoint.bin")
    log_path = os.path.join(os.fspath(out_dir), "log.csv")

    dtype = next(iter(graph.params.values())).data.dtype
    opt = RMSProp(graph.params, lr=initial_lr)
    sched = PlateauSchedule(initial_lr=initial_lr, drop_lr=drop_lr,
                            patience=patience, min_improvement=min_improvement)
    best_metric = -math.inf
    best_epoch = 0
    skipped_steps = 0
    rows: list[tuple] = []
    t0 = now()

    def emit(text: str) -> None:
        if log_fn is not None:
            log_fn(text)

    def checkpoint(epoch: int) -> None:
        save_checkpoint(ckpt_path, graph, optimizer=opt,
                        scalars={"epoch": epoch, "best_metric": best_metric,
                                 "lr": opt.lr})

    checkpoint(0)
    result = TrainResult(epochs_run=0, best_metric=best_metric, best_epoch=0,
                         final_lr=opt.lr, checkpoint_path=ckpt_path,
                         log_path=log_path, rows=rows)

    for epoch in range(1, epochs + 1):
        perm = _epoch_rng(seed, epoch).permutation(len(train_reader))
        loss_sum = 0.0
        sample_count = 0
        for start in range(0, len(perm), batch_size):
            chunk = perm[start:start + batch_size].tolist()
            if augment_data:
                def load(i):
                    return augment(train_reader.load(i), train_reader.input_res,
                                   train_reader.sigma, _augment_rng(seed, epoch, i))
            else:
                load = None
            x, y, _ = _batch_arrays(train_reader, chunk, dtype, augmented=load)
            heads = forward(graph, Tensor(x), mode="train")
            loss = total_loss(heads, Tensor(y))
            loss_value = loss.item()
            if not math.isfinite(loss_value):
                result.aborted = True
                result.abort_reason = (f"non-finite training loss at epoch {epoch}; "
                                       f"last checkpoint kept")
                result.epochs_run = epoch - 1
                result.final_lr = opt.lr
                emit(result.abort_reason)
                if rows:
                    _write_log(log_path, rows)
                return result
            backward(loss)
            bad = opt.step()
            opt.clear_grads()
            if bad:
                skipped_steps += 1
                emit(f"epoch {epoch}: skipped a step, non-finite gradient in "
                     f"{bad[0]}")
            loss_sum += loss_value * len(chunk)
            sample_count += len(chunk)

        train_loss = loss_sum / sample_count
        val = evaluate(graph, val_reader, alpha=alpha, kind=ref_kind,
                       batch_size=eval_batch)
        metric = val.overall
        lr_used = opt.lr
        opt.lr = sched.update(metric)
        rows.append((epoch, train_loss, metric, lr_used, now() - t0))
        _write_log(log_path, rows)
        emit(f"epoch {epoch}: loss {train_loss:.6f}  {ref_kind}@{alpha:g} "
             f"{metric:.4f}  lr {lr_used:g}")

        improved = not math.isnan(metric) and metric > best_metric
        if improved:
            best_metric = metric
            best_epoch = epoch
            checkpoint(epoch)
        result.epochs_run = epoch
        result.best_metric = best_metric
        result.best_epoch = best_epoch
        result.final_lr = opt.lr
        result.skipped_steps = skipped_steps
        if target_metric is not None and metric >= target_metric:
            result.stopped_early = True
            emit(f"epoch {epoch}: reached target {target_metric:g}, stopping")
            break

    return result
