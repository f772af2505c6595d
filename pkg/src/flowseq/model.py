"""Bidirectional asymmetric LSTM classifier over flow sequences.

Layout per sequence of ``alpha`` normalized 65-vectors:

* a dense LSTM stack runs forward in time over the vectors;
* a 1-D ConvLSTM stack runs backward in time, treating each vector as a
  one-channel signal of length 65; each step's hidden map is max-pooled
  along its length and flattened;
* both hidden states are projected to ``fusion_dim``, l2-normalized,
  summed and squashed with tanh;
* a dropout + linear head gives per-flow logits over the abstract labels.

Padded timesteps (pad_mask False) have their inputs zeroed and do not
advance either recurrent state, so outputs at real timesteps never depend
on pad contents.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterator, Optional

import numpy as np

from .dataset import AbstractLabel, NormalizationSpec, SequenceArrays
from .flows.features import N_MODEL_FEATURES
from .nn import (Adam, ConvLSTMCellParams, LSTMCellParams, Tensor, add, backward,
                 blend, conv1d_same, convlstm_step_projected, dropout, l2_normalize,
                 linear, lstm_step_projected, masked_nll, maxpool1d, no_grad,
                 parameter, reshape, scale, softmax, stack, sum_squares, tanh,
                 xavier_uniform)
from .rng import substream

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
BENIGN = int(AbstractLabel.BENIGN)


@dataclass(frozen=True)
class ModelConfig:
    n_features: int = N_MODEL_FEATURES
    lstm_hidden: tuple[int, ...] = (48, 48)
    conv_channels: tuple[int, ...] = (3, 6)
    kernel: int = 3
    pool: int = 2
    fusion_dim: int = 32
    n_classes: int = len(AbstractLabel)
    input_dropout: float = 0.5
    head_dropout: float = 0.3
    eps: float = 1e-12
    lstm_reverse: bool = False
    conv_reverse: bool = True

    @property
    def pooled_length(self) -> int:
        return (self.n_features - self.pool) // self.pool + 1

    @property
    def conv_flat(self) -> int:
        return self.conv_channels[-1] * self.pooled_length

    def swapped(self) -> "ModelConfig":
        d = asdict(self)
        d["lstm_reverse"], d["conv_reverse"] = self.conv_reverse, self.lstm_reverse
        return ModelConfig.from_dict(d)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["lstm_hidden"] = tuple(d["lstm_hidden"])
        d["conv_channels"] = tuple(d["conv_channels"])
        return cls(**d)


@dataclass(frozen=True)
class TrainConfig:
    l2: float = 0.5          # lambda_1
    lr: float = 1e-3         # lambda_2
    epochs: int = 10
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.l2 < 0:
            raise ValueError("l2 weight must be >= 0")
        if self.lr <= 0:
            raise ValueError("learning rate must be > 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")


class BiALSTM:
    def __init__(self, config: ModelConfig = ModelConfig(), seed: int = 0):
        self.config = cfg = config
        rng = substream(seed, "init")
        self.lstm: list[LSTMCellParams] = []
        d = cfg.n_features
        for i, h in enumerate(cfg.lstm_hidden):
            self.lstm.append(LSTMCellParams.init(d, h, rng, prefix=f"lstm{i}"))
            d = h
        self.conv: list[ConvLSTMCellParams] = []
        c_in = 1
        for i, c in enumerate(cfg.conv_channels):
            self.conv.append(ConvLSTMCellParams.init(c_in, c, cfg.kernel, rng, prefix=f"conv{i}"))
            c_in = c
        n = cfg.fusion_dim
        self.u_conv = parameter(xavier_uniform((n, cfg.conv_flat), rng), "u_conv")
        self.u_fc = parameter(xavier_uniform((n, cfg.lstm_hidden[-1]), rng), "u_fc")
        self.head_w = parameter(xavier_uniform((cfg.n_classes, n), rng), "head.w")
        self.head_b = parameter(np.zeros(cfg.n_classes), "head.b")

    # -- parameters ------------------------------------------------------

    def parameters(self) -> list[Tensor]:
        out: list[Tensor] = []
        for cell in self.lstm:
            out.extend(cell.tensors())
        for cell in self.conv:
            out.extend(cell.tensors())
        out.extend([self.u_conv, self.u_fc, self.head_w, self.head_b])
        return out

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        for p in self.parameters():
            yield p.name, p

    def n_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def parameter_hash(self) -> str:
        h = hashlib.sha256()
        for name, p in self.named_parameters():
            h.update(name.encode())
            h.update(np.ascontiguousarray(p.data).tobytes())
        return h.hexdigest()

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, p in self.named_parameters():
            a = np.asarray(arrays[name], dtype=np.float64)
            if a.shape != p.shape:
                raise ValueError(f"{name}: shape {a.shape} != expected {p.shape}")
            p.data = a.copy()

    # -- forward ---------------------------------------------------------

    @staticmethod
    def _order(n: int, reverse: bool) -> range:
        return range(n - 1, -1, -1) if reverse else range(n)

    def lstm_unit(self, x: Tensor, mask: np.ndarray) -> Tensor:
        """(B, T, d) -> (B, T, h_last)."""
        b, t_len = mask.shape
        inp = x
        for cell in self.lstm:
            proj = linear(inp, cell.w_x, cell.b)
            h = Tensor(np.zeros((b, cell.hidden)))
            c = Tensor(np.zeros((b, cell.hidden)))
            outs: list[Optional[Tensor]] = [None] * t_len
            for t in self._order(t_len, self.config.lstm_reverse):
                h_new, c_new = lstm_step_projected(proj[:, t], h, c, cell)
                m = mask[:, t]
                if m.all():
                    h, c = h_new, c_new
                else:
                    h, c = blend(m[:, None], h_new, h), blend(m[:, None], c_new, c)
                outs[t] = h
            inp = stack(outs, axis=1)
        return inp

    def conv_unit(self, x: Tensor, mask: np.ndarray) -> Tensor:
        """(B, T, L) -> (B, T, c_last * pooled_length)."""
        b, t_len = mask.shape
        length = self.config.n_features
        inp = reshape(x, (b * t_len, 1, length))
        for cell in self.conv:
            ch = cell.channels
            proj = reshape(conv1d_same(inp, cell.w_x, cell.b), (b, t_len, 4 * ch, length))
            h = Tensor(np.zeros((b, ch, length)))
            c = Tensor(np.zeros((b, ch, length)))
            outs: list[Optional[Tensor]] = [None] * t_len
            for t in self._order(t_len, self.config.conv_reverse):
                h_new, c_new = convlstm_step_projected(proj[:, t], h, c, cell)
                m = mask[:, t]
                if m.all():
                    h, c = h_new, c_new
                else:
                    h, c = blend(m[:, None, None], h_new, h), blend(m[:, None, None], c_new, c)
                outs[t] = h
            inp = reshape(stack(outs, axis=1), (b * t_len, ch, length))
        pooled = maxpool1d(inp, self.config.pool, self.config.pool)
        return reshape(pooled, (b, t_len, self.config.conv_flat))

    def fuse(self, h_conv: Tensor, h_fc: Tensor) -> Tensor:
        eps = self.config.eps
        a = l2_normalize(linear(h_conv, self.u_conv), eps)
        b = l2_normalize(linear(h_fc, self.u_fc), eps)
        return tanh(add(a, b))

    def forward(self, x: np.ndarray, mask: np.ndarray, training: bool = False,
                rng: Optional[np.random.Generator] = None) -> Tensor:
        """Logits (B, T, n_classes) for normalized input x (B, T, d)."""
        x = np.asarray(x, dtype=np.float64)
        mask = np.asarray(mask, dtype=bool)
        if x.ndim != 3 or x.shape[:2] != mask.shape or x.shape[2] != self.config.n_features:
            raise ValueError(f"forward: x {x.shape} / mask {mask.shape} do not match config")
        if x.size and (x.min() < -1e-6 or x.max() > 1 + 1e-6):
            log.warning("input outside [0, 1] (min %.3g, max %.3g); is it normalized?",
                        x.min(), x.max())
        xt = Tensor(x * mask[..., None])
        h_fc = self.lstm_unit(dropout(xt, self.config.input_dropout, rng, training), mask)
        h_conv = self.conv_unit(xt, mask)
        h = dropout(self.fuse(h_conv, h_fc), self.config.head_dropout, rng, training)
        return linear(h, self.head_w, self.head_b)

    def loss(self, x: np.ndarray, mask: np.ndarray, y: np.ndarray, l2: float,
             training: bool = True, rng: Optional[np.random.Generator] = None) -> Tensor:
        logits = self.forward(x, mask, training, rng)
        nll = masked_nll(logits, y, mask)
        if l2 == 0:
            return nll
        return add(nll, scale(sum_squares(self.parameters()), l2))

    def predict_proba(self, x: np.ndarray, mask: np.ndarray, batch_size: int = 256) -> np.ndarray:
        out = []
        with no_grad():
            for s in range(0, x.shape[0], batch_size):
                logits = self.forward(x[s:s + batch_size], mask[s:s + batch_size])
                out.append(softmax(logits.data))
        if not out:
            return np.zeros((0,) + x.shape[1:2] + (self.config.n_classes,))
        return np.concatenate(out)


def anomaly_scores(proba: np.ndarray) -> np.ndarray:
    return 1.0 - proba[..., BENIGN]


# ---------------------------------------------------------------------------
# training

@dataclass
class TrainResult:
    losses: list[float] = field(default_factory=list)      # mean batch loss per epoch
    steps: int = 0


def train(model: BiALSTM, data: SequenceArrays, cfg: TrainConfig,
          on_epoch: Optional[Callable[[int, float], None]] = None) -> TrainResult:
    if len(data) == 0 or not data.mask.any():
        raise ValueError("empty training set")
    shuffle_rng = substream(cfg.seed, "shuffle")
    drop_rng = substream(cfg.seed, "dropout")
    opt = Adam(model.parameters(), lr=cfg.lr)
    result = TrainResult()
    n = len(data)
    for epoch in range(cfg.epochs):
        perm = shuffle_rng.permutation(n)
        total, batches = 0.0, 0
        for s in range(0, n, cfg.batch_size):
            idx = perm[s:s + cfg.batch_size]
            mask = data.mask[idx]
            if not mask.any():
                continue
            opt.zero_grad()
            loss = model.loss(data.x[idx], mask, data.y[idx], cfg.l2, training=True, rng=drop_rng)
            backward(loss)
            opt.step()
            total += float(loss.data)
            batches += 1
            result.steps += 1
        mean = total / max(batches, 1)
        result.losses.append(mean)
        log.info("epoch %d/%d loss %.5f", epoch + 1, cfg.epochs, mean)
        if on_epoch is not None:
            on_epoch(epoch, mean)
    return result


# ---------------------------------------------------------------------------
# inference

@dataclass
class Prediction:
    flow_ids: list[str]
    labels: list[str]                # ground-truth names, "" if unknown
    true_class: np.ndarray           # abstract class, -1 if unknown
    pred_class: np.ndarray
    scores: np.ndarray               # 1 - P(benign)
    malicious: np.ndarray            # scores >= threshold
    proba: np.ndarray                # (n, n_classes)


def predict(model: BiALSTM, data: SequenceArrays, threshold: float = 0.5) -> Prediction:
    """Per-flow outputs for every real timestep, in sequence order."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must be in [0, 1]")
    proba = model.predict_proba(data.x, data.mask)
    m = data.mask
    p = proba[m]
    scores = anomaly_scores(p)
    ids = [fid for row, mrow in zip(data.flow_ids, m) for fid, keep in zip(row, mrow) if keep]
    labels = [lab for row, mrow in zip(data.labels, m) for lab, keep in zip(row, mrow) if keep]
    return Prediction(ids, labels, data.y[m], p.argmax(axis=1), scores, scores >= threshold, p)


# ---------------------------------------------------------------------------
# checkpoint

@dataclass
class Checkpoint:
    model: BiALSTM
    normalizer: Optional[NormalizationSpec] = None
    train_config: Optional[TrainConfig] = None
    seed: int = 0
    extra: dict = field(default_factory=dict)


def save_checkpoint(ckpt: Checkpoint, path: str | os.PathLike) -> None:
    meta = {
        "version": CHECKPOINT_VERSION,
        "model_config": ckpt.model.config.to_dict(),
        "normalizer": ckpt.normalizer.to_dict() if ckpt.normalizer is not None else None,
        "labels": {lab.name: int(lab) for lab in AbstractLabel},
        "train_config": asdict(ckpt.train_config) if ckpt.train_config is not None else None,
        "seed": ckpt.seed,
        "parameter_hash": ckpt.model.parameter_hash(),
        "extra": ckpt.extra,
    }
    arrays = {name: p.data for name, p in ckpt.model.named_parameters()}
    arrays["__meta__"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(z["__meta__"].tobytes().decode())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {meta.get('version')}")
        model = BiALSTM(ModelConfig.from_dict(meta["model_config"]))
        model.load_arrays({k: z[k] for k in z.files if k != "__meta__"})
    if {lab.name: int(lab) for lab in AbstractLabel} != meta["labels"]:
        raise ValueError(f"{path}: label table does not match this build")
    if model.parameter_hash() != meta["parameter_hash"]:
        raise ValueError(f"{path}: parameter hash mismatch")
    norm = NormalizationSpec.from_dict(meta["normalizer"]) if meta["normalizer"] else None
    tc = TrainConfig(**meta["train_config"]) if meta["train_config"] else None
    return Checkpoint(model, norm, tc, int(meta["seed"]), meta.get("extra", {}))
