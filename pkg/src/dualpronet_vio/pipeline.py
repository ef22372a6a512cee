"""Closed-loop runs: simulated world -> sliding-window estimator -> trajectory."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import WarmupError
from .estimator import EstimatorConfig, SlidingWindowEstimator, trajectory_from_history
from .preintegration import NavState, NoiseSigmas
from .pronet import RegressorModel, predict_sigmas
from .sim import SimWorld

log = logging.getLogger(__name__)


class ConstantSigmas:
    """Fixed process noise (the constant-Q baselines)."""

    adaptive = False

    def __init__(self, sigma_f, sigma_w):
        self.sigma_f = np.broadcast_to(np.asarray(sigma_f, dtype=float), (3,)).copy()
        self.sigma_w = np.broadcast_to(np.asarray(sigma_w, dtype=float), (3,)).copy()

    def __call__(self, f_buf, w_buf):
        return self.sigma_f, self.sigma_w


class StreamSigmas:
    """Adaptive plumbing fed by an arbitrary callable ``fn(f_buf, w_buf) -> (sf, sw)``."""

    adaptive = True

    def __init__(self, fn):
        self.fn = fn

    def __call__(self, f_buf, w_buf):
        return self.fn(f_buf, w_buf)


class NetworkSigmas:
    """Per-axis sigmas regressed from the trailing IMU buffer by the two networks."""

    adaptive = True

    def __init__(self, accel: RegressorModel, gyro: RegressorModel):
        self.accel, self.gyro = accel, gyro

    def __call__(self, f_buf, w_buf):
        return predict_sigmas(self.accel, self.gyro, (f_buf, w_buf))


@dataclass
class VioResult:
    t: np.ndarray
    p: np.ndarray
    q: np.ndarray
    gt_p: np.ndarray
    gt_q: np.ndarray
    sigma_t: np.ndarray
    sigma_f: np.ndarray
    sigma_w: np.ndarray
    solve_log: list = field(default_factory=list)


@dataclass
class RunConfig:
    keyframe_every: int = 100       # IMU samples between keyframes
    buffer_len: int = 200           # samples fed to the regressors
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    sigma_bf: float = 4e-4
    sigma_bw: float = 2e-5


def run_vio(world: SimWorld, source, config: RunConfig | None = None) -> VioResult:
    """Run the estimator over a simulated world.

    ``source(f_buf, w_buf)`` returns the sigmas for the next interval. Adaptive
    sources are consulted once per keyframe on the trailing ``buffer_len``
    samples; until that many samples exist the initial sigmas (from
    ``source.warmup``, default 1x baseline) stay in place.
    """
    cfg = config or RunConfig()
    imu = world.imu.noisy
    ref = world.reference
    x0 = NavState(ref.p[0], ref.q[0], ref.v[0])
    warm_f, warm_w = getattr(source, "warmup", (0.08, 0.004))
    if not source.adaptive:
        warm_f, warm_w = source(None, None)
    sigmas = NoiseSigmas(warm_f, warm_w, cfg.sigma_bf, cfg.sigma_bw)
    est = SlidingWindowEstimator(x0, float(imu.t[0]), sigmas, cfg.estimator, world.r_bc, world.p_bc)
    frames = {fr.imu_index: fr for fr in world.frames}
    first = frames[0]
    est.add_first_observations(first.ids, first.bearings)
    gt_idx = [0]
    step = cfg.keyframe_every
    for start in range(0, len(imu) - step, step):
        stop = start + step
        if source.adaptive and start >= cfg.buffer_len:
            try:
                sf, sw = source(imu.f[start - cfg.buffer_len:start], imu.w[start - cfg.buffer_len:start])
                est.update_process_noise(sf, sw)
            except WarmupError:
                pass
        frame = frames.get(stop)
        ids = frame.ids if frame is not None else np.zeros(0, dtype=int)
        bearings = frame.bearings if frame is not None else np.zeros((0, 3))
        est.add_keyframe(imu.samples(start, stop + 1), float(imu.t[stop]), ids, bearings)
        gt_idx.append(stop)
    t, p, q = trajectory_from_history(est.history)
    gt_idx = np.array(gt_idx)
    sig_t = np.array([s[0] for s in est.sigma_log])
    sig_f = np.array([s[1] for s in est.sigma_log]).reshape(-1, 3)
    sig_w = np.array([s[2] for s in est.sigma_log]).reshape(-1, 3)
    return VioResult(t, p, q, ref.p[gt_idx], ref.q[gt_idx], sig_t, sig_f, sig_w, est.solve_log)
