"""Single-axis noise regressor and the accelerometer/gyroscope pair.

Architecture: three blocks of (1-D convolution, leaky ReLU, layer norm over
channels), global average pooling over time, then four (linear, leaky ReLU)
layers down to one output, scaled to sensor units and floored to stay
positive. Activations use a ``(batch, time, channels)`` layout. Forward and
backward passes are plain numpy.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ModelError, ModelFormatError, WarmupError

MODEL_FORMAT_VERSION = 1

DEFAULT_SCALES = {
    # input multiplier, output multiplier, output floor
    "accel": (10.0, 0.1, 1e-4),
    "gyro": (100.0, 0.01, 1e-5),
}


@dataclass
class Hyper:
    sensor: str = "accel"
    input_len: int = 200
    channels: tuple = (16, 32, 64)
    kernels: tuple = (7, 5, 3)
    hidden: tuple = (64, 32, 16)
    leaky_slope: float = 0.01
    ln_eps: float = 1e-5
    input_scale: float | None = None
    output_scale: float | None = None
    floor: float | None = None
    center: bool = True

    def __post_init__(self):
        if self.sensor not in DEFAULT_SCALES:
            raise ModelError(f"unknown sensor kind {self.sensor!r}")
        self.channels = tuple(int(c) for c in self.channels)
        self.kernels = tuple(int(k) for k in self.kernels)
        self.hidden = tuple(int(h) for h in self.hidden)
        if len(self.channels) != 3 or len(self.kernels) != 3 or len(self.hidden) != 3:
            raise ModelError("expected 3 conv layers and 3 hidden widths (4 linear layers)")
        if any(k % 2 == 0 for k in self.kernels):
            raise ModelError("kernel sizes must be odd for same padding")
        i, o, f = DEFAULT_SCALES[self.sensor]
        self.input_scale = i if self.input_scale is None else float(self.input_scale)
        self.output_scale = o if self.output_scale is None else float(self.output_scale)
        self.floor = f if self.floor is None else float(self.floor)

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        for k in ("channels", "kernels", "hidden"):
            d[k] = list(d[k])
        return d

    def param_shapes(self) -> dict:
        shapes = {}
        cin = 1
        for i, (c, k) in enumerate(zip(self.channels, self.kernels)):
            shapes[f"conv{i}.weight"] = (c, cin, k)
            shapes[f"conv{i}.bias"] = (c,)
            shapes[f"ln{i}.scale"] = (c,)
            shapes[f"ln{i}.shift"] = (c,)
            cin = c
        widths = (cin,) + self.hidden + (1,)
        for i in range(4):
            shapes[f"fc{i}.weight"] = (widths[i + 1], widths[i])
            shapes[f"fc{i}.bias"] = (widths[i + 1],)
        return shapes


@dataclass
class RegressorModel:
    hyper: Hyper
    params: dict
    meta: dict = field(default_factory=dict)

    @property
    def sensor(self) -> str:
        return self.hyper.sensor

    @classmethod
    def init(cls, hyper: Hyper | None = None, seed: int = 0, dtype=np.float64) -> "RegressorModel":
        """He-style initialisation for leaky ReLU; layer norm starts as identity."""
        hyper = hyper or Hyper()
        rng = np.random.default_rng(seed)
        params = {}
        gain = np.sqrt(2.0 / (1.0 + hyper.leaky_slope ** 2))
        for name, shape in hyper.param_shapes().items():
            if name.endswith(".weight"):
                fan_in = int(np.prod(shape[1:]))
                bound = gain * np.sqrt(3.0 / fan_in)
                params[name] = rng.uniform(-bound, bound, size=shape)
            elif name.endswith(".scale"):
                params[name] = np.ones(shape)
            else:
                params[name] = np.zeros(shape)
        return cls(hyper, {k: v.astype(dtype) for k, v in params.items()})

    @classmethod
    def zeros(cls, hyper: Hyper | None = None) -> "RegressorModel":
        hyper = hyper or Hyper()
        return cls(hyper, {k: np.zeros(s) for k, s in hyper.param_shapes().items()})

    def astype(self, dtype) -> "RegressorModel":
        return RegressorModel(self.hyper, {k: v.astype(dtype) for k, v in self.params.items()}, dict(self.meta))

    def copy(self) -> "RegressorModel":
        return RegressorModel(self.hyper, {k: v.copy() for k, v in self.params.items()}, dict(self.meta))


# ----------------------------------------------------------------- layers

def _leaky(x, slope):
    # valid for 0 <= slope < 1
    return np.maximum(x, slope * x)


def _leaky_grad(z, slope):
    return np.where(z > 0, z.dtype.type(1.0), z.dtype.type(slope))


def _im2col(h, k):
    """(N, T, C) -> (N*T, C*K) same-padded patches, channel-major."""
    n, t, c = h.shape
    pad = k // 2
    hp = np.pad(h, ((0, 0), (pad, pad), (0, 0)))
    cols = np.lib.stride_tricks.sliding_window_view(hp, k, axis=1)  # (N, T, C, K)
    return cols.reshape(n * t, c * k)


def _conv_forward(h, w, b):
    """Same-padded stride-1 convolution. ``h`` (N, T, Cin), ``w`` (Cout, Cin, K)."""
    n, t, _ = h.shape
    cout, cin, k = w.shape
    cols = _im2col(h, k)
    out = cols @ w.reshape(cout, cin * k).T + b
    return out.reshape(n, t, cout), cols


def _conv_backward(dout, cols, w, need_input_grad=True):
    n, t, cout = dout.shape
    _, cin, k = w.shape
    d2 = dout.reshape(n * t, cout)
    dw = (d2.T @ cols).reshape(w.shape)
    db = d2.sum(0)
    if not need_input_grad:
        return None, dw, db
    # input gradient is a same-padded correlation of dout with the flipped kernel
    w_flip = w[:, :, ::-1].transpose(0, 2, 1).reshape(cout * k, cin)
    dh = _im2col(dout, k) @ w_flip
    return dh.reshape(n, t, cin), dw, db


def _ln_forward(a, scale, shift, eps):
    mu = a.mean(-1, keepdims=True)
    xc = a - mu
    var = np.mean(xc * xc, -1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    return xhat * scale + shift, (xhat, inv)


def _ln_backward(dout, cache, scale):
    xhat, inv = cache
    c = xhat.shape[-1]
    dscale = np.einsum("ntc,ntc->c", dout, xhat)
    dshift = dout.reshape(-1, c).sum(0)
    dx = dout * scale
    da = dx - dx.mean(-1, keepdims=True)
    da -= xhat * np.mean(dx * xhat, -1, keepdims=True)
    da *= inv
    return da, dscale, dshift


# ----------------------------------------------------------------- passes

def _prepare(model: RegressorModel, windows) -> np.ndarray:
    x = np.asarray(windows)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.hyper.input_len:
        raise ModelError(f"expected windows of length {model.hyper.input_len}, got shape {np.shape(windows)}")
    if not np.all(np.isfinite(x)):
        raise ModelError("non-finite values in input window")
    dtype = model.params["conv0.weight"].dtype
    x = x.astype(dtype, copy=False)
    if model.hyper.center:
        x = x - x.mean(1, keepdims=True)
    return (x * dtype.type(model.hyper.input_scale))[:, :, None]


def forward_raw(model: RegressorModel, windows, keep_cache: bool = False):
    """Network output before the positivity floor, shape (N,)."""
    hp, p = model.hyper, model.params
    h = _prepare(model, windows)
    caches = []
    for i in range(3):
        z, cols = _conv_forward(h, p[f"conv{i}.weight"], p[f"conv{i}.bias"])
        a = _leaky(z, hp.leaky_slope)
        out, ln_cache = _ln_forward(a, p[f"ln{i}.scale"], p[f"ln{i}.shift"], hp.ln_eps)
        if keep_cache:
            caches.append((cols, _leaky_grad(z, hp.leaky_slope), ln_cache))
        h = out
    g = h.mean(1)
    fc_caches = []
    t_len = h.shape[1]
    for i in range(4):
        z = g @ p[f"fc{i}.weight"].T + p[f"fc{i}.bias"]
        fc_caches.append((g, z))
        g = _leaky(z, hp.leaky_slope)
    y = g[:, 0] * hp.output_scale
    if keep_cache:
        return y, (caches, fc_caches, t_len)
    return y


def forward(model: RegressorModel, windows) -> np.ndarray:
    """Noise standard deviation per window, floored at ``hyper.floor``.

    Accepts one window (returns a scalar) or a stack (N, input_len).
    """
    single = np.ndim(windows) == 1
    y = np.maximum(forward_raw(model, windows), model.hyper.floor)
    return float(y[0]) if single else y


def backward(model: RegressorModel, cache, dy) -> dict:
    """Gradients of ``sum(dy * forward_raw(...))`` with respect to every parameter."""
    hp, p = model.hyper, model.params
    caches, fc_caches, t_len = cache
    grads = {}
    dg = (np.asarray(dy) * hp.output_scale)[:, None].astype(p["fc0.weight"].dtype)
    for i in reversed(range(4)):
        g_in, z = fc_caches[i]
        dz = dg * _leaky_grad(z, hp.leaky_slope)
        grads[f"fc{i}.weight"] = dz.T @ g_in
        grads[f"fc{i}.bias"] = dz.sum(0)
        dg = dz @ p[f"fc{i}.weight"]
    dh = np.broadcast_to(dg[:, None, :] / t_len, (len(dg), t_len, dg.shape[1]))
    for i in reversed(range(3)):
        cols, slope_mask, ln_cache = caches[i]
        da, grads[f"ln{i}.scale"], grads[f"ln{i}.shift"] = _ln_backward(dh, ln_cache, p[f"ln{i}.scale"])
        da *= slope_mask
        dh, grads[f"conv{i}.weight"], grads[f"conv{i}.bias"] = _conv_backward(
            da, cols, p[f"conv{i}.weight"], need_input_grad=i > 0)
    return grads


def mse_loss_and_grads(model: RegressorModel, windows, labels):
    """Mean squared error on the raw output and its parameter gradients."""
    y, cache = forward_raw(model, windows, keep_cache=True)
    err = y - np.asarray(labels, dtype=y.dtype)
    loss = float(np.mean(err.astype(np.float64) ** 2))
    grads = backward(model, cache, 2.0 * err / len(err))
    return loss, grads


# ----------------------------------------------------------------- runtime

def _axes_from_buffer(buffer, n):
    """Last ``n`` samples of (f, w) as two (n, 3) arrays."""
    if hasattr(buffer, "f") and hasattr(buffer, "w") and not hasattr(buffer, "__len__"):
        raise ModelError("buffer must be a sequence of samples or an ImuSeries")
    if hasattr(buffer, "f") and np.ndim(buffer.f) == 2:
        f, w = np.asarray(buffer.f), np.asarray(buffer.w)
    elif isinstance(buffer, tuple) and len(buffer) == 2:
        f, w = np.asarray(buffer[0]), np.asarray(buffer[1])
    else:
        f = np.array([s.f for s in buffer]).reshape(-1, 3)
        w = np.array([s.w for s in buffer]).reshape(-1, 3)
    if len(f) < n:
        raise WarmupError(f"warm-up not complete: {len(f)} of {n} samples buffered")
    return f[-n:], w[-n:]


def predict_sigmas(accel_model: RegressorModel, gyro_model: RegressorModel, buffer):
    """Per-axis ``(sigma_f, sigma_w)`` from the trailing samples of ``buffer``.

    ``buffer`` is a list of ImuSamples, an ImuSeries, or an ``(f, w)`` pair of
    (N, 3) arrays; the last ``input_len`` samples are used.
    """
    if accel_model.sensor != "accel" or gyro_model.sensor != "gyro":
        raise ModelError("predict_sigmas needs an accel model and a gyro model, in that order")
    n = accel_model.hyper.input_len
    if gyro_model.hyper.input_len != n:
        raise ModelError("accel and gyro models disagree on input length")
    f, w = _axes_from_buffer(buffer, n)
    sigma_f = forward(accel_model, f.T)
    sigma_w = forward(gyro_model, w.T)
    return np.asarray(sigma_f, dtype=float), np.asarray(sigma_w, dtype=float)


# ----------------------------------------------------------------- storage

def save_model(model: RegressorModel, path: str) -> None:
    """``.npz`` container: one array per parameter plus a JSON header."""
    header = {"format_version": MODEL_FORMAT_VERSION, "hyper": model.hyper.to_dict(), "meta": model.meta}
    arrays = {f"param/{k}": v for k, v in model.params.items()}
    with open(path, "wb") as fh:
        np.savez(fh, header=np.array(json.dumps(header, sort_keys=True)), **arrays)


def load_model(path: str, expected_sensor: str | None = None) -> RegressorModel:
    try:
        with np.load(path, allow_pickle=False) as z:
            header = json.loads(str(z["header"]))
            params = {k[len("param/"):]: z[k] for k in z.files if k.startswith("param/")}
    except FileNotFoundError:
        raise ModelFormatError(f"{path}: no such model file") from None
    except Exception as exc:
        raise ModelFormatError(f"{path}: unreadable model file ({type(exc).__name__}: {exc})") from None
    version = header.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise ModelFormatError(f"{path}: format version {version}, expected {MODEL_FORMAT_VERSION}")
    hyper = Hyper(**header["hyper"])
    for name, shape in hyper.param_shapes().items():
        if name not in params:
            raise ModelFormatError(f"{path}: missing tensor {name}")
        if params[name].shape != tuple(shape):
            raise ModelFormatError(f"{path}: tensor {name} has shape {params[name].shape}, expected {shape}")
    if expected_sensor is not None and hyper.sensor != expected_sensor:
        raise ModelFormatError(f"{path}: holds a {hyper.sensor} model, expected {expected_sensor}")
    return RegressorModel(hyper, params, header.get("meta", {}))
