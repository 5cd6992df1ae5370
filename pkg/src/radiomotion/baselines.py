"""Reference predictors: last-frame repeat and a frame-by-frame conv net."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .model import AdamW, EarlyStopper, TrainConfig, _uniform, mse_loss

# Keeps logits finite when inverting the sigmoid on inputs that touch 0 or 1.
_LOGIT_EPS = 1e-6


def last_frame_repeat(context: np.ndarray, horizon: int) -> np.ndarray:
    """Repeat the final observed frame ``horizon`` times."""
    context = np.asarray(context)
    if context.shape[0] == 0:
        raise ValueError("empty context")
    if horizon < 0:
        raise ValueError("horizon must be non-negative")
    last = context[-1]
    return np.repeat(last[None], horizon, axis=0).copy()


class LastFrameRepeat:
    """Predictor-protocol wrapper around :func:`last_frame_repeat`."""

    def predict(self, context: np.ndarray, horizon: int) -> np.ndarray:
        return last_frame_repeat(context, horizon)

    def predict_batch(self, contexts: np.ndarray, horizon: int) -> np.ndarray:
        contexts = np.asarray(contexts)
        if contexts.shape[1] == 0:
            raise ValueError("empty context")
        last = contexts[:, -1]
        return np.repeat(last[:, None], horizon, axis=1).copy()


def _logit(x: np.ndarray) -> np.ndarray:
    clipped = np.clip(x, _LOGIT_EPS, 1.0 - _LOGIT_EPS)
    return np.log(clipped / (1.0 - clipped))


class NextFramePredictor:
    """Small conv net mapping frame t to frame t+1, rolled out autoregressively.

    The head is residual in logit space: the network output is added to the
    logit of the previous frame before the sigmoid, so a zero final layer is
    exactly the identity map (and an untrained run starts from frame
    persistence). Stands in for a frame-by-frame model with no temporal
    memory.
    """

    def __init__(self, channels: int = 16, kernel_size: int = 3, seed: int = 0,
                 dtype=np.float32, identity: bool = False):
        rng = np.random.default_rng(seed)
        k = kernel_size
        c = channels
        self.channels = channels
        self.kernel_size = kernel_size
        self.w1 = _uniform(rng, (c, 1, k, k), k * k, dtype)
        self.b1 = Tensor(np.zeros(c, dtype), requires_grad=True)
        self.w2 = _uniform(rng, (c, c, k, k), c * k * k, dtype)
        self.b2 = Tensor(np.zeros(c, dtype), requires_grad=True)
        # Zero-initialized head: training starts from the identity rollout.
        self.w3 = Tensor(np.zeros((1, c, 1, 1), dtype), requires_grad=True)
        self.b3 = Tensor(np.zeros(1, dtype), requires_grad=True)
        self.trained = identity

    @property
    def dtype(self):
        return self.w1.data.dtype

    def parameters(self) -> dict:
        return {"l1.w": self.w1, "l1.b": self.b1, "l2.w": self.w2,
                "l2.b": self.b2, "head.w": self.w3, "head.b": self.b3}

    def _step(self, frame: Tensor, base_logit: Tensor) -> Tensor:
        h = ad.tanh(ad.conv2d(frame, self.w1, self.b1))
        h = ad.tanh(ad.conv2d(h, self.w2, self.b2))
        delta = ad.conv2d(h, self.w3, self.b3)
        return ad.sigmoid(ad.add(base_logit, delta))

    def forward(self, frames: Tensor) -> Tensor:
        """One-step prediction for a (B, 1, H, W) batch of frames."""
        base = Tensor(_logit(frames.data).astype(self.dtype))
        return self._step(frames, base)

    def predict(self, context: np.ndarray, horizon: int) -> np.ndarray:
        contexts = np.asarray(context)[None]
        return self.predict_batch(contexts, horizon)[0]

    def predict_batch(self, contexts: np.ndarray, horizon: int) -> np.ndarray:
        if not self.trained:
            raise RuntimeError("NextFramePredictor is untrained; call train_next_frame first")
        contexts = np.asarray(contexts, dtype=self.dtype)
        if contexts.shape[1] == 0:
            raise ValueError("empty context")
        current = contexts[:, -1]  # (B, H, W)
        outputs = []
        with ad.no_grad():
            for _ in range(horizon):
                frame = self.forward(Tensor(current[:, None]))
                current = frame.data[:, 0]
                outputs.append(current)
        if not outputs:
            return np.zeros((contexts.shape[0], 0) + contexts.shape[2:], self.dtype)
        return np.stack(outputs, axis=1)

    def save(self, path, meta: dict | None = None) -> None:
        info = {"model": "nextframe", "channels": self.channels,
                "kernel_size": self.kernel_size, "dtype": str(self.dtype)}
        info.update(meta or {})
        ad.save_checkpoint(path, self.parameters(), info)

    @classmethod
    def load(cls, path) -> tuple["NextFramePredictor", dict]:
        tensors, meta = ad.load_checkpoint(path)
        net = cls(channels=meta["channels"], kernel_size=meta["kernel_size"],
                  dtype=np.dtype(meta["dtype"]))
        for name, param in net.parameters().items():
            param.data = tensors[name].astype(param.data.dtype)
        net.trained = True
        return net, meta


def consecutive_frame_pairs(sequences: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """All (frame_t, frame_t+1) pairs from (M, F, H, W) sequences."""
    inputs = sequences[:, :-1].reshape(-1, *sequences.shape[2:])
    targets = sequences[:, 1:].reshape(-1, *sequences.shape[2:])
    return inputs, targets


def train_next_frame(train_sequences: np.ndarray, val_sequences: np.ndarray,
                     config: TrainConfig, net: NextFramePredictor
                     ) -> tuple[NextFramePredictor, list]:
    """Fit the one-step predictor on consecutive-frame pairs."""
    x_tr, y_tr = consecutive_frame_pairs(np.asarray(train_sequences, dtype=net.dtype))
    x_va, y_va = consecutive_frame_pairs(np.asarray(val_sequences, dtype=net.dtype))
    if len(x_tr) == 0 or len(x_va) == 0:
        raise ValueError("training and validation sets must be non-empty")

    rng = np.random.default_rng(config.seed)
    optimizer = AdamW(net.parameters(), lr=config.learning_rate,
                      weight_decay=config.weight_decay)
    stopper = EarlyStopper(config.patience, config.min_improvement)
    best = {k: p.data.copy() for k, p in net.parameters().items()}
    history = []

    def batch_loss(x, y):
        pred = net.forward(Tensor(x[:, None]))
        return mse_loss(pred, y[:, None])

    for epoch in range(config.max_epochs):
        order = rng.permutation(len(x_tr))
        running = 0.0
        for lo in range(0, len(order), config.batch_size):
            sel = order[lo:lo + config.batch_size]
            loss = batch_loss(x_tr[sel], y_tr[sel])
            optimizer.zero_grad()
            ad.backward(loss)
            optimizer.step()
            running += float(loss.data) * len(sel)
        train_loss = running / len(x_tr)
        with ad.no_grad():
            val_total = 0.0
            for lo in range(0, len(x_va), config.batch_size):
                hi = min(lo + config.batch_size, len(x_va))
                val_total += float(batch_loss(x_va[lo:hi], y_va[lo:hi]).data) * (hi - lo)
        val_loss = val_total / len(x_va)
        history.append((epoch, train_loss, val_loss))
        improved, stop = stopper.update(val_loss)
        if improved:
            best = {k: p.data.copy() for k, p in net.parameters().items()}
        if stop:
            break
    for name, param in net.parameters().items():
        param.data = best[name]
    net.trained = True
    return net, history
