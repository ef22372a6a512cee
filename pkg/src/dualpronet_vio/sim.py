"""Synthetic world: analytic trajectories, IMU streams and feature tracks.

Positions are sums of sinusoids per axis; attitude is yaw (linear plus a
sinusoid) with small pitch/roll oscillations, so every derivative the IMU
needs is closed form. The reference states the estimator is compared against
are obtained by integrating the clean IMU stream with the same discrete
scheme the estimator uses (see :func:`integrate_reference`), which keeps
zero-noise round trips exact.
"""
from __future__ import annotations

import logging
import os
import zlib
from dataclasses import dataclass, field

import numpy as np

from .data import ACCEL_GRID, EUROC_DURATIONS, EUROC_SEQUENCES, GYRO_GRID
from .geometry import quat_multiply, quat_normalize, rotation_to_quat, quat_to_rotation
from .preintegration import GRAVITY, ImuSeries, NavState

log = logging.getLogger(__name__)

# camera z (optical axis) along body x, camera x along body -y
R_BODY_CAM = np.array([[0.0, 0.0, 1.0],
                       [-1.0, 0.0, 0.0],
                       [0.0, -1.0, 0.0]])
P_BODY_CAM = np.array([0.05, 0.0, 0.02])


@dataclass
class TrajectorySpec:
    seed: int = 0
    duration: float = 30.0
    imu_rate: float = 200.0
    camera_rate: float = 20.0
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    # (3, K) arrays: one row per axis, K sinusoids each
    pos_amp: np.ndarray = field(default_factory=lambda: np.zeros((3, 1)))
    pos_freq: np.ndarray = field(default_factory=lambda: np.zeros((3, 1)))
    pos_phase: np.ndarray = field(default_factory=lambda: np.zeros((3, 1)))
    yaw0: float = 0.0
    yaw_rate: float = 0.0
    yaw_amp: float = 0.0
    yaw_freq: float = 0.0
    pitch_amp: float = 0.0
    pitch_freq: float = 0.0
    roll_amp: float = 0.0
    roll_freq: float = 0.0

    def __post_init__(self):
        for name in ("pos_amp", "pos_freq", "pos_phase"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.ndim == 1:
                arr = arr[:, None]
            setattr(self, name, arr)
        self.center = np.asarray(self.center, dtype=float)


@dataclass
class GroundTruth:
    """Analytic trajectory sampled at IMU rate; ``R`` maps body to world."""

    t: np.ndarray
    p: np.ndarray
    v: np.ndarray
    a: np.ndarray
    R: np.ndarray
    w_body: np.ndarray

    @property
    def q(self) -> np.ndarray:
        return np.array([rotation_to_quat(r) for r in self.R])


def random_trajectory_spec(seed: int, duration: float = 30.0, aggressiveness: float = 1.0) -> TrajectorySpec:
    """Smooth random motion a few metres across, EuRoC-like in scale."""
    rng = np.random.default_rng(seed)
    k = 3
    amp = rng.uniform(0.3, 1.5, size=(3, k)) * aggressiveness
    amp[2] *= 0.4
    freq = rng.uniform(0.03, 0.25, size=(3, k))
    # keep accelerations bounded as the motion gets faster
    amp = np.minimum(amp, 2.5 / (2 * np.pi * freq) ** 2)
    return TrajectorySpec(
        seed=seed, duration=duration,
        center=np.array([0.0, 0.0, 1.0]),
        pos_amp=amp, pos_freq=freq, pos_phase=rng.uniform(0, 2 * np.pi, size=(3, k)),
        yaw0=rng.uniform(-np.pi, np.pi),
        yaw_rate=rng.uniform(-0.15, 0.15) * aggressiveness,
        yaw_amp=rng.uniform(0.2, 0.8), yaw_freq=rng.uniform(0.03, 0.15),
        pitch_amp=rng.uniform(0.02, 0.12), pitch_freq=rng.uniform(0.1, 0.4),
        roll_amp=rng.uniform(0.02, 0.12), roll_freq=rng.uniform(0.1, 0.4),
    )


def _sinusoid(t, amp, freq, phase):
    """Value and first two derivatives of ``sum amp sin(2 pi f t + phase)``."""
    w = 2.0 * np.pi * np.asarray(freq)
    arg = np.multiply.outer(t, w) + phase
    s, c = np.sin(arg), np.cos(arg)
    return (s * amp).sum(-1), (c * amp * w).sum(-1), (-s * amp * w * w).sum(-1)


def _rx(a):
    c, s = np.cos(a), np.sin(a)
    o, z = np.ones_like(a), np.zeros_like(a)
    return np.stack([np.stack([o, z, z], -1), np.stack([z, c, -s], -1), np.stack([z, s, c], -1)], -2)


def _ry(a):
    c, s = np.cos(a), np.sin(a)
    o, z = np.ones_like(a), np.zeros_like(a)
    return np.stack([np.stack([c, z, s], -1), np.stack([z, o, z], -1), np.stack([-s, z, c], -1)], -2)


def _rz(a):
    c, s = np.cos(a), np.sin(a)
    o, z = np.ones_like(a), np.zeros_like(a)
    return np.stack([np.stack([c, -s, z], -1), np.stack([s, c, z], -1), np.stack([z, z, o], -1)], -2)


def evaluate_trajectory(spec: TrajectorySpec, t) -> GroundTruth:
    t = np.atleast_1d(np.asarray(t, dtype=float))
    p = np.empty((len(t), 3))
    v = np.empty((len(t), 3))
    a = np.empty((len(t), 3))
    for ax in range(3):
        p[:, ax], v[:, ax], a[:, ax] = _sinusoid(t, spec.pos_amp[ax], spec.pos_freq[ax], spec.pos_phase[ax])
    p += spec.center

    yaw, dyaw, _ = _sinusoid(t, np.array([spec.yaw_amp]), np.array([spec.yaw_freq]), np.zeros(1))
    yaw = yaw + spec.yaw0 + spec.yaw_rate * t
    dyaw = dyaw + spec.yaw_rate
    pitch, dpitch, _ = _sinusoid(t, np.array([spec.pitch_amp]), np.array([spec.pitch_freq]), np.zeros(1))
    roll, droll, _ = _sinusoid(t, np.array([spec.roll_amp]), np.array([spec.roll_freq]), np.array([0.7]))

    rx, ry, rz = _rx(roll), _ry(pitch), _rz(yaw)
    ryx = ry @ rx
    R = rz @ ryx
    ez, ey, ex = np.array([0.0, 0, 1]), np.array([0.0, 1, 0]), np.array([1.0, 0, 0])
    # omega_body = dyaw (Ry Rx)^T e_z + dpitch Rx^T e_y + droll e_x
    w_body = (dyaw[:, None] * np.einsum("nji,j->ni", ryx, ez)
              + dpitch[:, None] * np.einsum("nji,j->ni", rx, ey)
              + droll[:, None] * ex)
    return GroundTruth(t=t, p=p, v=v, a=a, R=R, w_body=w_body)


def generate_trajectory(spec: TrajectorySpec) -> GroundTruth:
    n = int(round(spec.duration * spec.imu_rate)) + 1
    t = np.arange(n) / spec.imu_rate
    return evaluate_trajectory(spec, t)


@dataclass
class NoiseSchedule:
    """Piecewise-constant per-axis noise levels with constant (or walking) biases.

    ``boundaries`` has one more entry than ``sigma_f``/``sigma_w`` have rows;
    segment ``k`` covers ``[boundaries[k], boundaries[k+1])``.
    """

    boundaries: np.ndarray
    sigma_f: np.ndarray
    sigma_w: np.ndarray
    bf: np.ndarray = field(default_factory=lambda: np.zeros(3))
    bw: np.ndarray = field(default_factory=lambda: np.zeros(3))
    bias_walk_f: float | None = None
    bias_walk_w: float | None = None
    seed: int = 0

    def __post_init__(self):
        self.boundaries = np.asarray(self.boundaries, dtype=float)
        self.sigma_f = np.broadcast_to(np.asarray(self.sigma_f, dtype=float).reshape(len(self.boundaries) - 1, -1),
                                       (len(self.boundaries) - 1, 3)).copy()
        self.sigma_w = np.broadcast_to(np.asarray(self.sigma_w, dtype=float).reshape(len(self.boundaries) - 1, -1),
                                       (len(self.boundaries) - 1, 3)).copy()
        self.bf = np.asarray(self.bf, dtype=float)
        self.bw = np.asarray(self.bw, dtype=float)
        if np.any(self.sigma_f < 0) or np.any(self.sigma_w < 0):
            raise ValueError("noise levels must be non-negative")

    @classmethod
    def constant(cls, sigma_f, sigma_w, duration, **kw) -> "NoiseSchedule":
        return cls(boundaries=[0.0, duration + 1e-9], sigma_f=[sigma_f], sigma_w=[sigma_w], **kw)

    def segment_index(self, t) -> np.ndarray:
        idx = np.searchsorted(self.boundaries, t, side="right") - 1
        return np.clip(idx, 0, len(self.sigma_f) - 1)

    def sigmas_at(self, t):
        k = self.segment_index(t)
        return self.sigma_f[k], self.sigma_w[k]


def random_schedule(seed: int, duration: float, segment: tuple = (4.0, 10.0),
                    accel_grid=ACCEL_GRID, gyro_grid=GYRO_GRID,
                    bias_scale: tuple = (0.05, 0.005)) -> NoiseSchedule:
    """Segments of random length with one grid level per sensor (shared by its axes)."""
    rng = np.random.default_rng(seed)
    bounds = [0.0]
    while bounds[-1] < duration:
        bounds.append(bounds[-1] + rng.uniform(*segment))
    n = len(bounds) - 1
    sf = rng.choice(np.asarray(accel_grid), size=n)
    sw = rng.choice(np.asarray(gyro_grid), size=n)
    return NoiseSchedule(
        boundaries=np.array(bounds), sigma_f=np.repeat(sf[:, None], 3, 1), sigma_w=np.repeat(sw[:, None], 3, 1),
        bf=rng.normal(scale=bias_scale[0], size=3), bw=rng.normal(scale=bias_scale[1], size=3),
        seed=seed + 1,
    )


@dataclass
class ImuSynthesis:
    noisy: ImuSeries
    clean: ImuSeries
    bf: np.ndarray
    bw: np.ndarray
    sigma_f: np.ndarray
    sigma_w: np.ndarray


def synthesize_imu(traj: GroundTruth, schedule: NoiseSchedule, g_w=GRAVITY, source_id: str = "sim") -> ImuSynthesis:
    """Specific force ``R^T (a + g) + b_f + n_f`` and rate ``w + b_w + n_w``.

    ``g_w`` is the upward gravity reaction ``[0, 0, 9.81]``: a level, static
    accelerometer reads +9.81 on its z axis. ``clean`` has neither bias nor noise.
    """
    g_w = np.asarray(g_w, dtype=float)
    rng = np.random.default_rng(schedule.seed)
    n = len(traj.t)
    f_clean = np.einsum("nji,nj->ni", traj.R, traj.a + g_w)
    w_clean = traj.w_body.copy()
    sf, sw = schedule.sigmas_at(traj.t)
    bf = np.tile(schedule.bf, (n, 1))
    bw = np.tile(schedule.bw, (n, 1))
    dt = np.diff(traj.t, prepend=traj.t[0])
    if schedule.bias_walk_f:
        bf += np.cumsum(rng.normal(size=(n, 3)) * schedule.bias_walk_f * np.sqrt(dt)[:, None], axis=0)
    if schedule.bias_walk_w:
        bw += np.cumsum(rng.normal(size=(n, 3)) * schedule.bias_walk_w * np.sqrt(dt)[:, None], axis=0)
    nf = rng.normal(size=(n, 3)) * sf
    nw = rng.normal(size=(n, 3)) * sw
    rate = 1.0 / np.median(np.diff(traj.t)) if n > 1 else 200.0
    return ImuSynthesis(
        noisy=ImuSeries(traj.t.copy(), f_clean + bf + nf, w_clean + bw + nw, rate, source_id),
        clean=ImuSeries(traj.t.copy(), f_clean, w_clean, rate, source_id),
        bf=bf, bw=bw, sigma_f=sf, sigma_w=sw,
    )


@dataclass
class ReferenceStates:
    t: np.ndarray
    p: np.ndarray
    q: np.ndarray
    v: np.ndarray

    def state(self, i: int, bf=None, bw=None) -> NavState:
        return NavState(self.p[i], self.q[i], self.v[i],
                        np.zeros(3) if bf is None else bf, np.zeros(3) if bw is None else bw)

    def rotation(self, i: int) -> np.ndarray:
        return quat_to_rotation(self.q[i])


def integrate_reference(clean: ImuSeries, x0: NavState, g_w=GRAVITY) -> ReferenceStates:
    """World-frame Euler integration of a bias-free stream, the same discrete
    scheme used by pre-integration."""
    g_w = np.asarray(g_w, dtype=float)
    n = len(clean)
    p = np.empty((n, 3))
    v = np.empty((n, 3))
    q = np.empty((n, 4))
    p[0], v[0], q[0] = x0.p, x0.v, x0.q
    for i in range(n - 1):
        dt = clean.t[i + 1] - clean.t[i]
        acc = quat_to_rotation(q[i]) @ clean.f[i] - g_w
        p[i + 1] = p[i] + v[i] * dt + 0.5 * acc * dt * dt
        v[i + 1] = v[i] + acc * dt
        dq = quat_normalize(np.concatenate(([1.0], 0.5 * clean.w[i] * dt)))
        q[i + 1] = quat_normalize(quat_multiply(q[i], dq))
    return ReferenceStates(clean.t.copy(), p, q, v)


@dataclass(frozen=True)
class PinholeCamera:
    width: int = 640
    height: int = 480
    fx: float = 320.0
    fy: float = 320.0
    cx: float = 320.0
    cy: float = 240.0

    @classmethod
    def from_hfov(cls, width=640, height=480, hfov_deg=90.0) -> "PinholeCamera":
        f = 0.5 * width / np.tan(np.radians(hfov_deg) / 2)
        return cls(width, height, f, f, width / 2.0, height / 2.0)

    def project(self, pc: np.ndarray) -> np.ndarray:
        pc = np.atleast_2d(pc)
        return np.stack([self.fx * pc[:, 0] / pc[:, 2] + self.cx,
                         self.fy * pc[:, 1] / pc[:, 2] + self.cy], axis=1)

    def back_project(self, uv: np.ndarray) -> np.ndarray:
        """Pixels to unit bearings."""
        uv = np.atleast_2d(uv)
        rays = np.stack([(uv[:, 0] - self.cx) / self.fx, (uv[:, 1] - self.cy) / self.fy,
                         np.ones(len(uv))], axis=1)
        return rays / np.linalg.norm(rays, axis=1, keepdims=True)

    def in_image(self, uv: np.ndarray) -> np.ndarray:
        return (uv[:, 0] >= 0) & (uv[:, 0] < self.width) & (uv[:, 1] >= 0) & (uv[:, 1] < self.height)


@dataclass
class CameraFrame:
    """Observations of one image: ``ids`` (M,), ``pixels`` (M, 2), ``bearings`` (M, 3)."""

    index: int
    t: float
    imu_index: int
    ids: np.ndarray
    pixels: np.ndarray
    bearings: np.ndarray
    outlier: np.ndarray | None = None


def sample_landmarks(rng, count: int, center, box: float = 10.0) -> np.ndarray:
    return np.asarray(center) + rng.uniform(-box / 2, box / 2, size=(count, 3))


def synthesize_features(ref: ReferenceStates, landmarks: np.ndarray, camera: PinholeCamera,
                        pixel_noise: float = 1.0, camera_every: int = 10, seed: int = 0,
                        outlier_rate: float = 0.0, min_depth: float = 0.3,
                        r_bc=R_BODY_CAM, p_bc=P_BODY_CAM, min_visible: int = 8) -> list:
    """Project landmarks into a camera frame every ``camera_every`` IMU samples.

    Outliers (``outlier_rate``) replace a measurement with a uniformly random
    pixel; ``CameraFrame.outlier`` flags them.
    """
    rng = np.random.default_rng(seed)
    frames = []
    for k, i in enumerate(range(0, len(ref.t), camera_every)):
        r_wb = ref.rotation(i)
        # world -> camera: p_c = R_bc^T (R_wb^T (X - p) - p_bc)
        pb = (landmarks - ref.p[i]) @ r_wb
        pc = (pb - p_bc) @ r_bc
        front = pc[:, 2] > min_depth
        uv = np.full((len(landmarks), 2), -1.0)
        uv[front] = camera.project(pc[front])
        vis = front & camera.in_image(uv)
        ids = np.flatnonzero(vis)
        px = uv[ids] + rng.normal(scale=pixel_noise, size=(len(ids), 2)) if pixel_noise > 0 else uv[ids]
        out = rng.random(len(ids)) < outlier_rate if outlier_rate > 0 else np.zeros(len(ids), bool)
        if out.any():
            px[out] = rng.uniform([0, 0], [camera.width, camera.height], size=(out.sum(), 2))
        if len(ids) < min_visible:
            log.warning("frame %d sees only %d landmarks (under-constrained)", k, len(ids))
        frames.append(CameraFrame(k, float(ref.t[i]), i, ids, px, camera.back_project(px) if len(ids) else
                                  np.zeros((0, 3)), out))
    return frames


@dataclass
class SimConfig:
    seed: int = 0
    duration: float = 30.0
    aggressiveness: float = 1.0
    landmarks: int = 300
    box: float = 10.0
    pixel_noise: float = 1.0
    outlier_rate: float = 0.0
    camera_every: int = 10
    schedule: str = "random"  # or "constant"
    sigma_f: float = 0.08
    sigma_w: float = 0.004
    segment_min: float = 4.0
    segment_max: float = 10.0


@dataclass
class SimWorld:
    config: SimConfig
    spec: TrajectorySpec
    truth: GroundTruth
    schedule: NoiseSchedule
    imu: ImuSynthesis
    reference: ReferenceStates
    landmarks: np.ndarray
    camera: PinholeCamera
    frames: list
    r_bc: np.ndarray = field(default_factory=lambda: R_BODY_CAM.copy())
    p_bc: np.ndarray = field(default_factory=lambda: P_BODY_CAM.copy())


def simulate_world(cfg: SimConfig, schedule: NoiseSchedule | None = None) -> SimWorld:
    spec = random_trajectory_spec(cfg.seed, cfg.duration, cfg.aggressiveness)
    truth = generate_trajectory(spec)
    if schedule is None:
        if cfg.schedule == "constant":
            rng = np.random.default_rng(cfg.seed + 7)
            schedule = NoiseSchedule.constant(cfg.sigma_f, cfg.sigma_w, cfg.duration,
                                              bf=rng.normal(scale=0.05, size=3),
                                              bw=rng.normal(scale=0.005, size=3), seed=cfg.seed + 1)
        else:
            schedule = random_schedule(cfg.seed, cfg.duration, (cfg.segment_min, cfg.segment_max))
    imu = synthesize_imu(truth, schedule, source_id=f"sim{cfg.seed}")
    x0 = NavState(truth.p[0], rotation_to_quat(truth.R[0]), truth.v[0])
    ref = integrate_reference(imu.clean, x0)
    rng = np.random.default_rng(cfg.seed + 11)
    lm = sample_landmarks(rng, cfg.landmarks, spec.center, cfg.box)
    cam = PinholeCamera.from_hfov()
    frames = synthesize_features(ref, lm, cam, cfg.pixel_noise, cfg.camera_every,
                                 seed=cfg.seed + 13, outlier_rate=cfg.outlier_rate)
    return SimWorld(cfg, spec, truth, schedule, imu, ref, lm, cam, frames)


def sequence_seed(name: str, base_seed: int = 0) -> int:
    return (zlib.crc32(name.encode()) + 1000003 * base_seed) % (2 ** 31)


def write_euroc(root: str, name: str, series: ImuSeries, ref: ReferenceStates | None = None,
                bf=None, bw=None) -> str:
    """Dump a stream in the EuRoC ASL layout under ``root/name/mav0``."""
    base = os.path.join(root, name, "mav0")
    os.makedirs(os.path.join(base, "imu0"), exist_ok=True)
    ts = np.round(series.t * 1e9).astype(np.int64)
    with open(os.path.join(base, "imu0", "data.csv"), "w") as fh:
        fh.write("#timestamp [ns],w_RS_S_x [rad s^-1],w_RS_S_y [rad s^-1],w_RS_S_z [rad s^-1],"
                 "a_RS_S_x [m s^-2],a_RS_S_y [m s^-2],a_RS_S_z [m s^-2]\n")
        for k in range(len(ts)):
            fh.write(str(ts[k]) + "," + ",".join("%.17g" % x for x in (*series.w[k], *series.f[k])) + "\n")
    if ref is not None:
        os.makedirs(os.path.join(base, "state_groundtruth_estimate0"), exist_ok=True)
        bf = np.zeros((len(ts), 3)) if bf is None else np.broadcast_to(bf, (len(ts), 3))
        bw = np.zeros((len(ts), 3)) if bw is None else np.broadcast_to(bw, (len(ts), 3))
        with open(os.path.join(base, "state_groundtruth_estimate0", "data.csv"), "w") as fh:
            fh.write("#timestamp,p_RS_R_x [m],p_RS_R_y [m],p_RS_R_z [m],q_RS_w [],q_RS_x [],q_RS_y [],"
                     "q_RS_z [],v_RS_R_x [m s^-1],v_RS_R_y [m s^-1],v_RS_R_z [m s^-1],"
                     "b_w_RS_S_x [rad s^-1],b_w_RS_S_y [rad s^-1],b_w_RS_S_z [rad s^-1],"
                     "b_a_RS_S_x [m s^-2],b_a_RS_S_y [m s^-2],b_a_RS_S_z [m s^-2]\n")
            for k in range(len(ts)):
                row = np.concatenate([ref.p[k], ref.q[k], ref.v[k], bw[k], bf[k]])
                fh.write(str(ts[k]) + "," + ",".join("%.17g" % x for x in row) + "\n")
    return base


def synthesize_euroc_standins(root: str, names=tuple(EUROC_SEQUENCES), seed: int = 0,
                              native_sigma=(0.005, 0.0003), duration_scale: float = 1.0) -> list:
    """Write synthetic sequences in EuRoC layout, one per short name.

    Stand-ins for the real recordings when they are not available: durations
    follow the real sequences, motion gets more aggressive for the
    medium/difficult ones, and the sensor carries a small native noise.
    """
    written = []
    for name in names:
        level = EUROC_SEQUENCES.get(name, "_easy").rsplit("_", 1)[-1]
        aggr = {"easy": 0.7, "medium": 1.0, "difficult": 1.4}.get(level, 1.0)
        s = sequence_seed(name, seed)
        duration = EUROC_DURATIONS.get(name, 120.0) * duration_scale
        spec = random_trajectory_spec(s, duration, aggr)
        truth = generate_trajectory(spec)
        rng = np.random.default_rng(s + 5)
        sched = NoiseSchedule.constant(native_sigma[0], native_sigma[1], duration,
                                       bf=rng.normal(scale=0.05, size=3), bw=rng.normal(scale=0.005, size=3),
                                       seed=s + 1)
        imu = synthesize_imu(truth, sched, source_id=name)
        x0 = NavState(truth.p[0], rotation_to_quat(truth.R[0]), truth.v[0])
        ref = integrate_reference(imu.clean, x0)
        written.append(write_euroc(root, name, imu.noisy, ref, sched.bf, sched.bw))
    return written
