"""Adam training loop for the noise regressors."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .data import LabeledWindows
from .errors import ModelError, TrainingDivergedError
from .pronet import Hyper, RegressorModel, forward, forward_raw, mse_loss_and_grads

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 200
    epochs: int = 200
    seed: int = 0
    holdout: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    dtype: str = "float32"
    eval_batch: int = 2000


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = -1
    seconds: float = 0.0


class Adam:
    def __init__(self, params: dict, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k in sorted(params):
            g = grads[k].astype(params[k].dtype, copy=False)
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            params[k] -= (self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)).astype(params[k].dtype)


def evaluate_mse(model: RegressorModel, data: LabeledWindows, batch: int = 2000, floored: bool = False) -> float:
    """Mean squared error over a dataset, in batches."""
    sq = 0.0
    fn = forward if floored else forward_raw
    for s in range(0, len(data), batch):
        y = np.asarray(fn(model, data.samples[s:s + batch]), dtype=np.float64)
        sq += float(np.sum((y - data.labels[s:s + batch]) ** 2))
    return sq / len(data)


def predict_dataset(model: RegressorModel, data: LabeledWindows, batch: int = 2000) -> np.ndarray:
    """Floored predictions for every window, in batches."""
    out = [np.asarray(forward(model, data.samples[s:s + batch]), dtype=np.float64) for s in range(0, len(data), batch)]
    return np.concatenate(out) if out else np.zeros(0)


def rmse_on(model: RegressorModel, data: LabeledWindows, batch: int = 2000) -> float:
    """RMSE of the floored (deployed) output against the labels."""
    return float(np.sqrt(evaluate_mse(model, data, batch, floored=True)))


def holdout_split(data: LabeledWindows, fraction: float, seed: int):
    """Hold out whole source windows (all levels and axes together)."""
    keys = np.char.add(np.char.add(data.sequence, ":"), data.window.astype(str))
    uniq = np.unique(keys)
    rng = np.random.default_rng([seed, 7])
    n_val = int(round(fraction * len(uniq)))
    if n_val == 0 or n_val >= len(uniq):
        return data, None
    val_keys = rng.choice(uniq, size=n_val, replace=False)
    mask = np.isin(keys, val_keys)
    return data.subset(np.flatnonzero(~mask)), data.subset(np.flatnonzero(mask))


def train(data: LabeledWindows, hyper: Hyper | None = None, config: TrainConfig | None = None,
          validation: LabeledWindows | None = None, init: RegressorModel | None = None,
          max_steps: int | None = None):
    """Fit one regressor by minibatch Adam on the mean squared error.

    Keeps the parameters with the lowest held-out MSE seen at the end of any
    epoch. Without an explicit ``validation`` set a fraction of the source
    windows is held out. Returns ``(model, history)``.
    """
    config = config or TrainConfig()
    if len(data) == 0:
        raise ModelError("cannot train on an empty dataset")
    hyper = hyper or Hyper(sensor=data.sensor, input_len=data.window_len)
    if hyper.sensor != data.sensor:
        raise ModelError(f"dataset holds {data.sensor} windows, model is {hyper.sensor}")
    if hyper.input_len != data.window_len:
        raise ModelError(f"dataset windows have length {data.window_len}, model expects {hyper.input_len}")
    dtype = np.dtype(config.dtype)
    if validation is None and config.holdout > 0:
        data, validation = holdout_split(data, config.holdout, config.seed)
    model = (init.copy() if init is not None else RegressorModel.init(hyper, seed=config.seed)).astype(dtype)
    opt = Adam(model.params, config.lr, config.beta1, config.beta2, config.eps)
    rng = np.random.default_rng([config.seed, 11])
    hist = TrainHistory()
    best, best_val = model.copy(), np.inf
    x_all = data.samples.astype(dtype)
    y_all = data.labels.astype(dtype)
    started = time.perf_counter()
    steps = 0
    for epoch in range(config.epochs):
        order = rng.permutation(len(data))
        total = 0.0
        for s in range(0, len(order), config.batch_size):
            idx = order[s:s + config.batch_size]
            loss, grads = mse_loss_and_grads(model, x_all[idx], y_all[idx])
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"loss became {loss} at epoch {epoch}, step {steps} (lr={config.lr}, batch={config.batch_size})")
            opt.step(model.params, grads)
            total += loss * len(idx)
            steps += 1
            if max_steps is not None and steps >= max_steps:
                break
        hist.train_loss.append(total / len(data))
        val = evaluate_mse(model, validation, config.eval_batch) if validation is not None else hist.train_loss[-1]
        hist.val_loss.append(val)
        if val < best_val:
            best_val, best, hist.best_epoch = val, model.copy(), epoch
        log.info("epoch %d train %.3e val %.3e", epoch, hist.train_loss[-1], val)
        if max_steps is not None and steps >= max_steps:
            break
    hist.seconds = time.perf_counter() - started
    best.meta = {"best_epoch": hist.best_epoch, "best_val_mse": float(best_val), "epochs_run": len(hist.train_loss),
                 "lr": config.lr, "batch_size": config.batch_size, "seed": config.seed}
    return best, hist
