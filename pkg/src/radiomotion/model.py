"""ConvLSTM encoder-decoder forecaster for radio-map sequences.

A two-level recurrent UNet: level 1 runs at frame resolution, level 2 at
half resolution behind a max-pool. The decoder inherits the encoder's final
states, rolls level 2 forward on its own hidden state, upsamples, fuses the
encoder level-1 hidden state through a skip connection, and emits one frame
per step through a 1x1 convolution with a sigmoid. All tensors are batched
(B, C, H, W).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

GATES = ("i", "f", "o", "g")


@dataclass
class RecurrentState:
    h: Tensor
    c: Tensor


def zero_state(batch: int, channels: int, height: int, width: int,
               dtype=np.float32) -> RecurrentState:
    shape = (batch, channels, height, width)
    return RecurrentState(h=Tensor(np.zeros(shape, dtype)),
                          c=Tensor(np.zeros(shape, dtype)))


def _uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> Tensor:
    bound = math.sqrt(1.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype),
                  requires_grad=True)


@dataclass
class ConvLSTMCell:
    """One convolutional LSTM cell: gates are convolutions over the
    concatenated input and hidden state."""

    in_channels: int
    hidden_channels: int
    kernel_size: int
    w_x: dict = field(repr=False)   # gate -> (hidden, in, k, k)
    w_h: dict = field(repr=False)   # gate -> (hidden, hidden, k, k)
    b: dict = field(repr=False)     # gate -> (hidden,)

    @classmethod
    def create(cls, in_channels: int, hidden_channels: int, kernel_size: int,
               rng: np.random.Generator, dtype=np.float32) -> "ConvLSTMCell":
        k = kernel_size
        w_x = {g: _uniform(rng, (hidden_channels, in_channels, k, k),
                           in_channels * k * k, dtype) for g in GATES}
        w_h = {g: _uniform(rng, (hidden_channels, hidden_channels, k, k),
                           hidden_channels * k * k, dtype) for g in GATES}
        b = {g: Tensor(np.zeros(hidden_channels, dtype), requires_grad=True)
             for g in GATES}
        # Positive initial forget bias keeps early memory open.
        b["f"].data[:] = 1.0
        return cls(in_channels, hidden_channels, kernel_size, w_x, w_h, b)

    def parameters(self, prefix: str) -> dict:
        out = {}
        for g in GATES:
            out[f"{prefix}.w_x{g}"] = self.w_x[g]
            out[f"{prefix}.w_h{g}"] = self.w_h[g]
            out[f"{prefix}.b_{g}"] = self.b[g]
        return out

    def step(self, x: Tensor, state: RecurrentState,
             fused: bool = True) -> RecurrentState:
        """One state update.

        The fused path evaluates all four gates through a single convolution
        over concatenated weights; the unfused path follows the gate
        equations one convolution pair at a time. Both compute the same
        update: sigmoid input/forget/output gates, tanh candidate,
        ``C' = f.C + i.g`` and ``H' = o.tanh(C')``.
        """
        if x.data.shape[1] != self.in_channels:
            raise ValueError(f"cell expects {self.in_channels} input channels, "
                             f"got {x.data.shape[1]}")
        if x.data.shape[2:] != state.h.data.shape[2:]:
            raise ValueError(f"input {x.data.shape} does not match state "
                             f"{state.h.data.shape} spatially")
        hch = self.hidden_channels
        if fused:
            kernel = ad.concat([ad.concat([self.w_x[g], self.w_h[g]], axis=1)
                                for g in GATES], axis=0)
            bias = ad.concat([self.b[g] for g in GATES], axis=0)
            z = ad.conv2d(ad.concat([x, state.h], axis=1), kernel, bias)
            gi = ad.sigmoid(ad.narrow(z, 1, 0, hch))
            gf = ad.sigmoid(ad.narrow(z, 1, hch, hch))
            go = ad.sigmoid(ad.narrow(z, 1, 2 * hch, hch))
            gg = ad.tanh(ad.narrow(z, 1, 3 * hch, hch))
        else:
            def gate(g, act):
                pre = ad.add(ad.conv2d(x, self.w_x[g], self.b[g]),
                             ad.conv2d(state.h, self.w_h[g]))
                return act(pre)

            gi = gate("i", ad.sigmoid)
            gf = gate("f", ad.sigmoid)
            go = gate("o", ad.sigmoid)
            gg = gate("g", ad.tanh)
        c_new = ad.add(ad.mul(gf, state.c), ad.mul(gi, gg))
        h_new = ad.mul(go, ad.tanh(c_new))
        return RecurrentState(h=h_new, c=c_new)


@dataclass
class RadioLSTM:
    """Two-level ConvLSTM encoder plus autoregressive two-level decoder."""

    enc1: ConvLSTMCell
    enc2: ConvLSTMCell
    dec2: ConvLSTMCell
    dec1: ConvLSTMCell
    up_w: Tensor
    up_b: Tensor
    head_w: Tensor
    head_b: Tensor
    in_channels: int
    hidden1: int
    hidden2: int
    kernel_size: int

    @classmethod
    def create(cls, in_channels: int = 1, hidden1: int = 16, hidden2: int = 32,
               kernel_size: int = 3, seed: int = 0,
               dtype=np.float32) -> "RadioLSTM":
        rng = np.random.default_rng(seed)
        enc1 = ConvLSTMCell.create(in_channels, hidden1, kernel_size, rng, dtype)
        enc2 = ConvLSTMCell.create(hidden1, hidden2, kernel_size, rng, dtype)
        dec2 = ConvLSTMCell.create(hidden2, hidden2, kernel_size, rng, dtype)
        # Skip concatenation: upsampled hidden2 (hidden1 channels) + encoder
        # level-1 final hidden state.
        dec1 = ConvLSTMCell.create(2 * hidden1, hidden1, kernel_size, rng, dtype)
        up_w = _uniform(rng, (hidden2, hidden1, 2, 2), hidden2 * 4, dtype)
        up_b = Tensor(np.zeros(hidden1, dtype), requires_grad=True)
        head_w = _uniform(rng, (1, hidden1, 1, 1), hidden1, dtype)
        head_b = Tensor(np.zeros(1, dtype), requires_grad=True)
        return cls(enc1, enc2, dec2, dec1, up_w, up_b, head_w, head_b,
                   in_channels, hidden1, hidden2, kernel_size)

    def parameters(self) -> dict:
        params = {}
        params.update(self.enc1.parameters("enc1"))
        params.update(self.enc2.parameters("enc2"))
        params.update(self.dec2.parameters("dec2"))
        params.update(self.dec1.parameters("dec1"))
        params.update({"up.w": self.up_w, "up.b": self.up_b,
                       "head.w": self.head_w, "head.b": self.head_b})
        return params

    @property
    def dtype(self):
        return self.head_w.data.dtype

    def encode(self, context) -> tuple[RecurrentState, RecurrentState]:
        """Run both encoder levels over the context frames.

        ``context`` is (B, Tc, C, H, W) array data or a list of frame
        tensors; H and W must be even for the pooling stage.
        """
        frames = self._frame_tensors(context)
        if not frames:
            raise ValueError("encode needs at least one context frame")
        batch, _, h, w = frames[0].data.shape
        s1 = zero_state(batch, self.hidden1, h, w, self.dtype)
        s2 = zero_state(batch, self.hidden2, h // 2, w // 2, self.dtype)
        for x in frames:
            s1 = self.enc1.step(x, s1)
            s2 = self.enc2.step(ad.max_pool2(s1.h), s2)
        return s1, s2

    def forecast(self, states, horizon: int) -> list:
        """Autoregressively emit ``horizon`` frames from the encoded states.

        The decoder levels start from the encoder's final states; level 2
        consumes its own previous hidden state each step, and the skip
        connection always injects the encoder level-1 final hidden state.
        """
        if horizon < 0:
            raise ValueError("horizon must be non-negative")
        s1, s2 = states
        skip = s1.h
        d1 = RecurrentState(h=s1.h, c=s1.c)
        d2 = RecurrentState(h=s2.h, c=s2.c)
        outputs = []
        for _ in range(horizon):
            d2 = self.dec2.step(d2.h, d2)
            up = ad.transposed_conv2(d2.h, self.up_w, self.up_b)
            d1 = self.dec1.step(ad.concat([up, skip], axis=1), d1)
            frame = ad.sigmoid(ad.conv2d(d1.h, self.head_w, self.head_b))
            outputs.append(frame)
        return outputs

    def predict(self, context: np.ndarray, horizon: int) -> np.ndarray:
        """Inference helper: (Tc, C, H, W) or (B, Tc, C, H, W) in, same
        batching out, no tape recorded."""
        ctx = np.asarray(context, dtype=self.dtype)
        squeeze = ctx.ndim == 4
        if squeeze:
            ctx = ctx[None]
        with ad.no_grad():
            frames = self.forecast(self.encode(ctx), horizon)
        if not frames:
            out = np.zeros((ctx.shape[0], 0) + ctx.shape[2:], self.dtype)
        else:
            out = np.stack([f.data for f in frames], axis=1)
        return out[0] if squeeze else out

    def _frame_tensors(self, context) -> list:
        if isinstance(context, (list, tuple)):
            return list(context)
        arr = np.asarray(context)
        if arr.ndim != 5:
            raise ValueError(f"context must be (B, Tc, C, H, W), got {arr.shape}")
        if arr.dtype != self.dtype:
            arr = arr.astype(self.dtype)
        return [Tensor(arr[:, t]) for t in range(arr.shape[1])]

    def save(self, path, meta: dict | None = None) -> None:
        info = {"model": "radiolstm", "in_channels": self.in_channels,
                "hidden1": self.hidden1, "hidden2": self.hidden2,
                "kernel_size": self.kernel_size, "dtype": str(self.dtype)}
        info.update(meta or {})
        ad.save_checkpoint(path, self.parameters(), info)

    @classmethod
    def load(cls, path) -> tuple["RadioLSTM", dict]:
        tensors, meta = ad.load_checkpoint(path)
        model = cls.create(in_channels=meta["in_channels"],
                           hidden1=meta["hidden1"], hidden2=meta["hidden2"],
                           kernel_size=meta["kernel_size"], seed=0,
                           dtype=np.dtype(meta["dtype"]))
        for name, param in model.parameters().items():
            param.data = tensors[name].astype(param.data.dtype)
        return model, meta


def mse_loss(pred, target) -> Tensor:
    """Mean squared error over every element of the frame stack."""
    p = _join_frames(pred)
    t = target if isinstance(target, Tensor) else None
    if t is None:
        t = _join_frames(target)
        if t.data.dtype != p.data.dtype:
            t = Tensor(t.data.astype(p.data.dtype))
    diff = ad.sub(p, t)
    return ad.mean(ad.mul(diff, diff))


def _join_frames(frames):
    if isinstance(frames, Tensor):
        return frames
    if isinstance(frames, (list, tuple)):
        return ad.concat([f if isinstance(f, Tensor) else Tensor(f) for f in frames],
                         axis=-3)
    return Tensor(np.asarray(frames))


class AdamW:
    """Adaptive-moment update with decoupled weight decay and bias correction."""

    def __init__(self, params: dict, lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.params = dict(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            if self.weight_decay:
                p.data -= self.lr * self.weight_decay * p.data
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 4
    max_epochs: int = 100
    patience: int = 30
    weight_decay: float = 0.0
    seed: int = 0
    min_improvement: float = 1e-6

    def __post_init__(self):
        if min(self.learning_rate, self.batch_size, self.max_epochs,
               self.patience) <= 0:
            raise ValueError("learning_rate, batch_size, max_epochs and patience must be positive")
        if self.patience > self.max_epochs:
            raise ValueError("patience must not exceed max_epochs")


class EarlyStopper:
    """Minimum-tracking plateau detector.

    ``update`` returns (improved, stop); improvements smaller than
    ``min_improvement`` are ignored, and ``stop`` turns true once
    ``patience`` consecutive epochs bring no new minimum.
    """

    def __init__(self, patience: int, min_improvement: float = 1e-6):
        self.patience = patience
        self.min_improvement = min_improvement
        self.best = math.inf
        self.stale = 0

    def update(self, value: float) -> tuple[bool, bool]:
        if value < self.best - self.min_improvement:
            self.best = value
            self.stale = 0
            return True, False
        self.stale += 1
        return False, self.stale >= self.patience


def _batch_loss(model: RadioLSTM, contexts: np.ndarray,
                targets: np.ndarray) -> Tensor:
    preds = model.forecast(model.encode(contexts), targets.shape[1])
    return mse_loss(preds, targets[:, :, 0])


def validation_loss(model: RadioLSTM, contexts: np.ndarray,
                    targets: np.ndarray, batch_size: int) -> float:
    total_val = 0.0
    with ad.no_grad():
        for lo in range(0, len(contexts), batch_size):
            hi = min(lo + batch_size, len(contexts))
            loss = _batch_loss(model, contexts[lo:hi], targets[lo:hi])
            total_val += float(loss.data) * (hi - lo)
    return total_val / len(contexts)


def train(train_pairs, val_pairs, config: TrainConfig,
          model: RadioLSTM) -> tuple[RadioLSTM, list]:
    """Minimize sequence MSE over the training pairs.

    ``train_pairs`` and ``val_pairs`` are (contexts, targets) arrays of
    shape (M, Tc, 1, H, W) / (M, Tp, 1, H, W). Stops at ``max_epochs`` or
    when validation loss plateaus for ``patience`` epochs, and returns the
    parameters of the best-validation epoch plus the per-epoch history of
    (epoch, train_loss, val_loss). Deterministic for a fixed seed.
    """
    ctx_tr, tgt_tr = train_pairs
    ctx_va, tgt_va = val_pairs
    if len(ctx_tr) == 0 or len(ctx_va) == 0:
        raise ValueError("training and validation sets must be non-empty")
    ctx_tr = np.asarray(ctx_tr, dtype=model.dtype)
    tgt_tr = np.asarray(tgt_tr, dtype=model.dtype)
    ctx_va = np.asarray(ctx_va, dtype=model.dtype)
    tgt_va = np.asarray(tgt_va, dtype=model.dtype)

    rng = np.random.default_rng(config.seed)
    optimizer = AdamW(model.parameters(), lr=config.learning_rate,
                      weight_decay=config.weight_decay)
    stopper = EarlyStopper(config.patience, config.min_improvement)
    best_params = {k: p.data.copy() for k, p in model.parameters().items()}
    history = []
    for epoch in range(config.max_epochs):
        order = rng.permutation(len(ctx_tr))
        running = 0.0
        for lo in range(0, len(order), config.batch_size):
            batch = order[lo:lo + config.batch_size]
            loss = _batch_loss(model, ctx_tr[batch], tgt_tr[batch])
            optimizer.zero_grad()
            ad.backward(loss)
            optimizer.step()
            running += float(loss.data) * len(batch)
        train_loss = running / len(ctx_tr)
        val_loss = validation_loss(model, ctx_va, tgt_va, config.batch_size)
        history.append((epoch, train_loss, val_loss))
        improved, stop = stopper.update(val_loss)
        if improved:
            best_params = {k: p.data.copy() for k, p in model.parameters().items()}
        if stop:
            break
    for name, param in model.parameters().items():
        param.data = best_params[name]
    return model, history
