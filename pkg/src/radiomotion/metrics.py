"""Evaluation metrics, frame-wise reports, PACF, and the ablation harness."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import model as model_mod

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
PSNR_CAP_DB = 100.0


def nmse(pred: np.ndarray, gt: np.ndarray) -> float:
    """Normalized mean square error: sum((gt-pred)^2) / sum(gt^2)."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    denom = float((gt * gt).sum())
    if denom == 0.0:
        raise ValueError("nmse undefined for an all-zero reference")
    return float(((gt - pred) ** 2).sum()) / denom


def rmse(pred: np.ndarray, gt: np.ndarray) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    return math.sqrt(float(((gt - pred) ** 2).mean()))


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    offsets = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(offsets ** 2) / (2.0 * sigma ** 2))
    window = np.outer(g, g)
    return window / window.sum()


def _windowed_mean(img: np.ndarray, window: np.ndarray) -> np.ndarray:
    views = np.lib.stride_tricks.sliding_window_view(img, window.shape)
    return np.tensordot(views, window, axes=([2, 3], [0, 1]))


def ssim(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mean local structural similarity for unit-range images.

    11x11 Gaussian window (sigma 1.5), C1 = 0.01^2, C2 = 0.03^2, unit
    exponents, and C3 = C2/2, which reduces the luminance/contrast/structure
    product to the standard two-factor form.
    """
    x = np.asarray(pred, dtype=np.float64)
    y = np.asarray(gt, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    if x.ndim != 2 or min(x.shape) < SSIM_WINDOW:
        raise ValueError(f"ssim needs 2D images at least {SSIM_WINDOW} px per side, "
                         f"got {x.shape}")
    window = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA)
    mu_x = _windowed_mean(x, window)
    mu_y = _windowed_mean(y, window)
    mu_xx = _windowed_mean(x * x, window)
    mu_yy = _windowed_mean(y * y, window)
    mu_xy = _windowed_mean(x * y, window)
    var_x = mu_xx - mu_x * mu_x
    var_y = mu_yy - mu_y * mu_y
    cov = mu_xy - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + SSIM_C1) * (2.0 * cov + SSIM_C2)
    den = (mu_x * mu_x + mu_y * mu_y + SSIM_C1) * (var_x + var_y + SSIM_C2)
    return float((num / den).mean())


def psnr(pred: np.ndarray, gt: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for unit dynamic range, capped at
    100 dB so identical images stay finite."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    mse = float(((gt - pred) ** 2).mean())
    if mse <= 0.0:
        return PSNR_CAP_DB
    return min(-10.0 * math.log10(mse), PSNR_CAP_DB)


def pacf(series, max_lag: int) -> np.ndarray:
    """Partial autocorrelations for lags 1..max_lag (Durbin-Levinson).

    Uses biased sample autocovariances. Raises for constant series; if the
    innovation variance hits zero mid-recursion (a perfectly predictable
    series) the remaining lags are reported as zero.
    """
    x = np.asarray(series, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("series must be 1D")
    n = x.size
    if max_lag < 1:
        raise ValueError("max_lag must be >= 1")
    if n <= max_lag + 1:
        raise ValueError(f"series of length {n} too short for max_lag {max_lag}")
    xc = x - x.mean()
    gamma = np.array([(xc[: n - h] * xc[h:]).sum() / n for h in range(max_lag + 1)])
    if gamma[0] <= 0.0:
        raise ValueError("pacf undefined for a zero-variance series")

    out = np.zeros(max_lag)
    phi = np.zeros(max_lag + 1)
    v = gamma[0]
    for k in range(1, max_lag + 1):
        if v <= 1e-14 * gamma[0]:
            break
        acc = gamma[k] - np.dot(phi[1:k], gamma[k - 1:0:-1])
        phi_kk = acc / v
        phi[1:k] = phi[1:k] - phi_kk * phi[k - 1:0:-1]
        phi[k] = phi_kk
        v *= (1.0 - phi_kk * phi_kk)
        out[k - 1] = phi_kk
    return out


@dataclass(frozen=True, eq=False)
class MetricsRecord:
    """Aggregate and per-frame-index metric averages for one evaluation."""

    nmse: float
    rmse: float
    ssim: float
    psnr_db: float
    per_frame: dict
    scope: tuple  # (split_tag, model_name, context_len)

    @classmethod
    def from_per_frame(cls, per_frame: dict, scope: tuple) -> "MetricsRecord":
        return cls(nmse=float(np.mean(per_frame["nmse"])),
                   rmse=float(np.mean(per_frame["rmse"])),
                   ssim=float(np.mean(per_frame["ssim"])),
                   psnr_db=float(np.mean(per_frame["psnr_db"])),
                   per_frame={k: list(map(float, v)) for k, v in per_frame.items()},
                   scope=scope)


def evaluate(predictor, contexts: np.ndarray, targets: np.ndarray,
             model_name: str, split_tag: str) -> MetricsRecord:
    """Average each metric per frame index and overall across all pairs.

    ``contexts`` is (M, Tc, H, W) and ``targets`` (M, Tp, H, W), both
    normalized. The predictor maps a (Tc, H, W) context to (Tp, H, W)
    predictions (``predict_batch`` is used when available).
    """
    contexts = np.asarray(contexts)
    targets = np.asarray(targets)
    n_pairs, horizon = targets.shape[0], targets.shape[1]
    if n_pairs == 0:
        raise ValueError("cannot evaluate an empty split")
    if hasattr(predictor, "predict_batch"):
        preds = predictor.predict_batch(contexts, horizon)
    else:
        preds = np.stack([predictor.predict(contexts[m], horizon)
                          for m in range(n_pairs)])
    if preds.shape != targets.shape:
        raise ValueError(f"predictor produced {preds.shape}, expected {targets.shape}")

    per_frame = {"nmse": [], "rmse": [], "ssim": [], "psnr_db": []}
    for k in range(horizon):
        vals = {m: 0.0 for m in per_frame}
        for m in range(n_pairs):
            p, g = preds[m, k], targets[m, k]
            vals["nmse"] += nmse(p, g)
            vals["rmse"] += rmse(p, g)
            vals["ssim"] += ssim(p, g)
            vals["psnr_db"] += psnr(p, g)
        for name in per_frame:
            per_frame[name].append(vals[name] / n_pairs)
    return MetricsRecord.from_per_frame(
        per_frame, scope=(split_tag, model_name, int(contexts.shape[1])))


def build_context_pairs(sequences: np.ndarray, context_len: int,
                        horizon: int) -> tuple[np.ndarray, np.ndarray]:
    """Aligned pairs from (M, F, H, W) normalized sequences: the target is
    always the last ``horizon`` frames."""
    n_frames = sequences.shape[1]
    if context_len + horizon > n_frames:
        raise ValueError(f"context {context_len} + horizon {horizon} exceeds "
                         f"{n_frames} frames")
    start = n_frames - context_len - horizon
    contexts = sequences[:, start:start + context_len]
    targets = sequences[:, n_frames - horizon:]
    return contexts, targets


def ablate_context(train_sequences: np.ndarray, val_sequences: np.ndarray,
                   test_sequences: np.ndarray, context_lengths,
                   horizon: int, train_config, model_seed: int = 0,
                   hidden1: int = 16, hidden2: int = 32,
                   kernel_size: int = 3, split_tag: str = "test2") -> dict:
    """Train one forecaster per context length on aligned pairs and evaluate
    on the held-out sequences; every run predicts identical target frames."""
    results = {}
    reference_targets = None
    for context_len in context_lengths:
        ctx_tr, tgt_tr = build_context_pairs(train_sequences, context_len, horizon)
        ctx_va, tgt_va = build_context_pairs(val_sequences, context_len, horizon)
        ctx_te, tgt_te = build_context_pairs(test_sequences, context_len, horizon)
        if reference_targets is None:
            reference_targets = tgt_te
        elif not np.array_equal(reference_targets, tgt_te):
            raise AssertionError("ablation targets differ between context lengths")
        net = model_mod.RadioLSTM.create(in_channels=1, hidden1=hidden1,
                                         hidden2=hidden2, kernel_size=kernel_size,
                                         seed=model_seed)
        net, history = model_mod.train((ctx_tr[:, :, None], tgt_tr[:, :, None]),
                                       (ctx_va[:, :, None], tgt_va[:, :, None]),
                                       train_config, net)
        record = evaluate(ForecasterPredictor(net), ctx_te, tgt_te,
                          model_name="radiolstm", split_tag=split_tag)
        results[int(context_len)] = (record, history)
    return results


class ForecasterPredictor:
    """Adapter giving a trained RadioLSTM the (Tc, H, W) predictor surface."""

    def __init__(self, net, batch_size: int = 16):
        self.net = net
        self.batch_size = batch_size

    def predict(self, context: np.ndarray, horizon: int) -> np.ndarray:
        return self.net.predict(np.asarray(context)[:, None], horizon)[:, 0]

    def predict_batch(self, contexts: np.ndarray, horizon: int) -> np.ndarray:
        chunks = []
        for lo in range(0, len(contexts), self.batch_size):
            batch = np.asarray(contexts[lo:lo + self.batch_size])[:, :, None]
            chunks.append(self.net.predict(batch, horizon)[:, :, 0])
        return np.concatenate(chunks, axis=0)


def pacf_profile(sequences: np.ndarray, max_lag: int, n_cells: int = 64,
                 seed: int = 0) -> tuple[np.ndarray, int]:
    """Average per-pixel PACF over a cell subsample of many sequences.

    Cells whose 15-frame series has (numerically) zero variance are skipped;
    returns (mean pacf per lag 1..max_lag, number of contributing series).
    """
    sequences = np.asarray(sequences, dtype=np.float64)
    n_seq, n_frames, height, width = sequences.shape
    rng = np.random.default_rng(seed)
    flat_cells = rng.choice(height * width, size=min(n_cells, height * width),
                            replace=False)
    total = np.zeros(max_lag)
    count = 0
    for s in range(n_seq):
        for cell in flat_cells:
            series = sequences[s, :, cell // width, cell % width]
            if series.var() <= 1e-24:
                continue
            total += pacf(series, max_lag)
            count += 1
    if count == 0:
        raise ValueError("no cell series with nonzero variance")
    return total / count, count
