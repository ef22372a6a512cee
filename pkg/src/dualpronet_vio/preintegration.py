"""IMU pre-integration between two keyframes.

The deltas ``alpha`` (position), ``beta`` (velocity) and ``gamma`` (attitude)
are accumulated in the frame of the first keyframe with a forward Euler
recursion, together with the 15x15 error-state covariance ``P`` and the
Jacobian ``J`` of the deltas with respect to the error state at the start of
the interval (its bias columns drive first-order bias correction).

Error-state ordering everywhere: ``(d_alpha, d_beta, d_theta, d_bf, d_bw)``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import PreintegrationError
from .geometry import (
    IDENTITY_QUAT,
    quat_conjugate,
    quat_left,
    quat_multiply,
    quat_normalize,
    quat_right,
    quat_to_rotation,
    right_jacobian_so3,
    skew,
)

log = logging.getLogger(__name__)

GRAVITY = np.array([0.0, 0.0, 9.81])

A, B, TH, BF, BW = (slice(0, 3), slice(3, 6), slice(6, 9), slice(9, 12), slice(12, 15))
# noise blocks of the 12-vector (n_f, n_w, n_bf, n_bw)
NF, NW, NBF, NBW = (slice(0, 3), slice(3, 6), slice(6, 9), slice(9, 12))

# blocks of a keyframe's error state (dp, dtheta, dv, dbf, dbw)
SP, SQ, SV, SBF, SBW = (slice(0, 3), slice(3, 6), slice(6, 9), slice(9, 12), slice(12, 15))

MAX_STEP = 0.1
BIAS_WARN = 0.1


@dataclass(frozen=True)
class ImuSample:
    t: float
    f: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "f", np.asarray(self.f, dtype=float))
        object.__setattr__(self, "w", np.asarray(self.w, dtype=float))


@dataclass(frozen=True)
class NoiseSigmas:
    """Per-axis noise standard deviations.

    ``sigma_f`` [m/s^2] and ``sigma_w`` [rad/s] are per-sample measurement
    noise and may change at run time; ``sigma_bf`` and ``sigma_bw`` drive the
    bias random walk and are fixed for a run.
    """

    sigma_f: np.ndarray
    sigma_w: np.ndarray
    sigma_bf: np.ndarray = field(default_factory=lambda: np.full(3, 4e-4))
    sigma_bw: np.ndarray = field(default_factory=lambda: np.full(3, 2e-5))

    def __post_init__(self):
        for name in ("sigma_f", "sigma_w", "sigma_bf", "sigma_bw"):
            v = np.broadcast_to(np.asarray(getattr(self, name), dtype=float), (3,)).copy()
            if not np.all(np.isfinite(v)) or np.any(v <= 0.0):
                raise PreintegrationError(f"{name} must be finite and positive, got {v}")
            v.setflags(write=False)
            object.__setattr__(self, name, v)

    def with_measurement(self, sigma_f, sigma_w) -> "NoiseSigmas":
        return replace(self, sigma_f=sigma_f, sigma_w=sigma_w)


@dataclass(frozen=True)
class NavState:
    p: np.ndarray
    q: np.ndarray
    v: np.ndarray
    bf: np.ndarray = field(default_factory=lambda: np.zeros(3))
    bw: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        for name in ("p", "v", "bf", "bw"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).copy())
        object.__setattr__(self, "q", quat_normalize(np.asarray(self.q, dtype=float)))

    @property
    def rotation(self) -> np.ndarray:
        return quat_to_rotation(self.q)


@dataclass
class PreintegratedDelta:
    alpha: np.ndarray = field(default_factory=lambda: np.zeros(3))
    beta: np.ndarray = field(default_factory=lambda: np.zeros(3))
    gamma: np.ndarray = field(default_factory=lambda: IDENTITY_QUAT.copy())
    P: np.ndarray = field(default_factory=lambda: np.zeros((15, 15)))
    J: np.ndarray = field(default_factory=lambda: np.eye(15))
    bf_lin: np.ndarray = field(default_factory=lambda: np.zeros(3))
    bw_lin: np.ndarray = field(default_factory=lambda: np.zeros(3))
    dt_sum: float = 0.0
    # (sample, next sample, sigmas) per step, kept for re-propagation
    steps: list = field(default_factory=list, repr=False)
    bias_warned: bool = field(default=False, repr=False, compare=False)

    @classmethod
    def start(cls, bf_lin=None, bw_lin=None) -> "PreintegratedDelta":
        d = cls()
        if bf_lin is not None:
            d.bf_lin = np.asarray(bf_lin, dtype=float).copy()
        if bw_lin is not None:
            d.bw_lin = np.asarray(bw_lin, dtype=float).copy()
        return d

    @property
    def sigmas_used(self) -> list:
        return [s for _, _, s in self.steps]


def build_process_noise(sigmas: NoiseSigmas) -> np.ndarray:
    """Diagonal 12x12 ``Q = diag(sf^2, sw^2, sbf^2, sbw^2)``."""
    if not isinstance(sigmas, NoiseSigmas):
        raise PreintegrationError("build_process_noise expects NoiseSigmas")
    return np.diag(np.concatenate([sigmas.sigma_f, sigmas.sigma_w,
                                   sigmas.sigma_bf, sigmas.sigma_bw]) ** 2)


def error_state_matrices(delta: PreintegratedDelta, s: ImuSample):
    """Continuous-time error dynamics ``d(dx)/dt = F dx + G n`` at sample ``s``."""
    r = quat_to_rotation(delta.gamma)
    a = s.f - delta.bf_lin
    w = s.w - delta.bw_lin
    F = np.zeros((15, 15))
    F[A, B] = np.eye(3)
    F[B, TH] = -r @ skew(a)
    F[B, BF] = -r
    F[TH, TH] = -skew(w)
    F[TH, BW] = -np.eye(3)
    G = np.zeros((15, 12))
    G[B, NF] = -r
    G[TH, NW] = -np.eye(3)
    G[BF, NBF] = np.eye(3)
    G[BW, NBW] = np.eye(3)
    return F, G


def _increment_rotation(w: np.ndarray, dt: float):
    """Rotation vector of ``normalize([1, w dt / 2])`` and its derivative wrt ``w``."""
    s = np.linalg.norm(w)
    h = 0.5 * s * dt
    if s < 1e-10:
        return w * dt, dt * np.eye(3)
    u = w / s
    phi = 2.0 * np.arctan(h)
    dphi = dt / (1.0 + h * h)
    D = (phi / s) * np.eye(3) + (dphi - phi / s) * np.outer(u, u)
    return phi * u, D


def discrete_transition(delta: PreintegratedDelta, s: ImuSample, dt: float,
                        linearization: str = "discrete"):
    """One-step error transition ``Phi`` (15x15) and noise input ``Gd`` (15x12).

    ``"first_order"`` gives ``(I + F dt, G dt)``. ``"discrete"`` (default) is
    the exact Jacobian of the Euler step; it agrees with the first-order form
    up to O(dt^2) terms and makes the bias Jacobian match re-propagation. Its
    bias-walk input is ``sqrt(dt)`` so that ``sigma_bf``/``sigma_bw`` act as
    random-walk densities.
    """
    if linearization == "first_order":
        F, G = error_state_matrices(delta, s)
        return np.eye(15) + F * dt, G * dt
    if linearization != "discrete":
        raise ValueError(f"unknown linearization {linearization!r}")
    r = quat_to_rotation(delta.gamma)
    a = s.f - delta.bf_lin
    w = s.w - delta.bw_lin
    rot_vec, D = _increment_rotation(w, dt)
    dr = quat_to_rotation(quat_normalize(np.concatenate(([1.0], 0.5 * w * dt))))
    jr_d = right_jacobian_so3(rot_vec) @ D
    ra_x = r @ skew(a)
    dt2 = 0.5 * dt * dt

    phi = np.eye(15)
    phi[A, B] = dt * np.eye(3)
    phi[A, TH] = -dt2 * ra_x
    phi[A, BF] = -dt2 * r
    phi[B, TH] = -dt * ra_x
    phi[B, BF] = -dt * r
    phi[TH, TH] = dr.T
    phi[TH, BW] = -jr_d

    gd = np.zeros((15, 12))
    gd[A, NF] = -dt2 * r
    gd[B, NF] = -dt * r
    gd[TH, NW] = -jr_d
    # bias-walk sigmas are densities (per sqrt(s)): per-step variance sigma^2 dt
    gd[BF, NBF] = np.sqrt(dt) * np.eye(3)
    gd[BW, NBW] = np.sqrt(dt) * np.eye(3)
    return phi, gd


def _step_deltas(alpha, beta, gamma, s: ImuSample, dt, bf, bw):
    r = quat_to_rotation(gamma)
    acc = r @ (s.f - bf)
    w = s.w - bw
    alpha = alpha + beta * dt + 0.5 * acc * dt * dt
    beta = beta + acc * dt
    dq = quat_normalize(np.concatenate(([1.0], 0.5 * w * dt)))
    gamma = quat_normalize(quat_multiply(gamma, dq))
    return alpha, beta, gamma


def propagate(delta: PreintegratedDelta, s_i: ImuSample, s_next: ImuSample,
              sigmas: NoiseSigmas, linearization: str = "discrete") -> PreintegratedDelta:
    """Advance the deltas, covariance and Jacobian over ``[s_i.t, s_next.t]``.

    Returns a new delta; the input is left untouched.
    """
    dt = float(s_next.t - s_i.t)
    if not (dt > 0.0) or dt > MAX_STEP:
        raise PreintegrationError(
            f"IMU step dt={dt:.6g}s at t={s_i.t:.6f} outside (0, {MAX_STEP}] (dropped samples?)")
    phi, gd = discrete_transition(delta, s_i, dt, linearization)
    alpha, beta, gamma = _step_deltas(delta.alpha, delta.beta, delta.gamma, s_i, dt,
                                      delta.bf_lin, delta.bw_lin)
    q = build_process_noise(sigmas)
    P = phi @ delta.P @ phi.T + gd @ q @ gd.T
    P = 0.5 * (P + P.T)
    return PreintegratedDelta(
        alpha=alpha, beta=beta, gamma=gamma, P=P, J=phi @ delta.J,
        bf_lin=delta.bf_lin, bw_lin=delta.bw_lin, dt_sum=delta.dt_sum + dt,
        steps=delta.steps + [(s_i, s_next, sigmas)],
    )


def preintegrate(samples, sigmas, bf_lin=None, bw_lin=None,
                 linearization: str = "discrete") -> PreintegratedDelta:
    """Pre-integrate consecutive samples ``samples[0] .. samples[-1]``.

    ``sigmas`` is a single :class:`NoiseSigmas` or one per step.
    """
    delta = PreintegratedDelta.start(bf_lin, bw_lin)
    per_step = isinstance(sigmas, (list, tuple))
    for k in range(len(samples) - 1):
        sg = sigmas[k] if per_step else sigmas
        delta = propagate(delta, samples[k], samples[k + 1], sg, linearization)
    return delta


def repropagate(delta: PreintegratedDelta, bf_lin, bw_lin,
                linearization: str = "discrete") -> PreintegratedDelta:
    """Integrate the recorded steps again about new linearization biases."""
    out = PreintegratedDelta.start(bf_lin, bw_lin)
    for s_i, s_next, sg in delta.steps:
        out = propagate(out, s_i, s_next, sg, linearization)
    return out


def _small_quat_raw(u):
    q = np.concatenate(([1.0], 0.5 * u))
    return q / np.linalg.norm(q)


def _small_quat(u):
    return quat_normalize(_small_quat_raw(u))


def correct_for_bias(delta: PreintegratedDelta, bf_new, bw_new):
    """First-order bias-corrected ``(alpha, beta, gamma)``."""
    dbf = np.asarray(bf_new, dtype=float) - delta.bf_lin
    dbw = np.asarray(bw_new, dtype=float) - delta.bw_lin
    if (np.linalg.norm(dbf) > BIAS_WARN or np.linalg.norm(dbw) > BIAS_WARN) and not delta.bias_warned:
        delta.bias_warned = True  # once per factor
        log.warning("bias moved far from its linearization point (|dbf|=%.3g, |dbw|=%.3g); "
                    "consider re-propagating", np.linalg.norm(dbf), np.linalg.norm(dbw))
    J = delta.J
    alpha = delta.alpha + J[A, BF] @ dbf + J[A, BW] @ dbw
    beta = delta.beta + J[B, BF] @ dbf + J[B, BW] @ dbw
    gamma = quat_normalize(quat_multiply(delta.gamma, _small_quat(J[TH, BW] @ dbw)))
    return alpha, beta, gamma


def imu_residual(delta: PreintegratedDelta, xk: NavState, xk1: NavState, g_w=GRAVITY) -> np.ndarray:
    """15-vector residual ordered ``(alpha, beta, theta, bf, bw)``."""
    return imu_residual_and_jacobians(delta, xk, xk1, g_w, jacobians=False)[0]


def imu_residual_and_jacobians(delta: PreintegratedDelta, xk: NavState, xk1: NavState,
                               g_w=GRAVITY, jacobians: bool = True):
    """Residual and its Jacobians wrt each state's error ``(dp, dtheta, dv, dbf, dbw)``.

    Returns ``(r, Jk, Jk1)`` with ``Jk``, ``Jk1`` of shape (15, 15) (``None``
    when ``jacobians`` is false).
    """
    g_w = np.asarray(g_w, dtype=float)
    dt = delta.dt_sum
    if dt <= 0.0:
        raise PreintegrationError("delta has no integrated time")
    alpha, beta, _ = correct_for_bias(delta, xk.bf, xk.bw)
    gamma = quat_multiply(delta.gamma, _small_quat_raw(delta.J[TH, BW] @ (xk.bw - delta.bw_lin)))
    rk_t = quat_to_rotation(xk.q).T
    y_p = xk1.p - xk.p - xk.v * dt + 0.5 * g_w * dt * dt
    y_v = xk1.v - xk.v + g_w * dt
    qa = quat_multiply(quat_conjugate(xk.q), xk1.q)
    gamma_inv = quat_conjugate(gamma)
    e = quat_multiply(qa, gamma_inv)

    r = np.empty(15)
    r[0:3] = rk_t @ y_p - alpha
    r[3:6] = rk_t @ y_v - beta
    sign = 1.0 if e[0] >= 0.0 else -1.0
    r[6:9] = 2.0 * sign * e[1:]
    r[9:12] = xk1.bf - xk.bf
    r[12:15] = xk1.bw - xk.bw
    if not jacobians:
        return r, None, None

    J = delta.J
    dbw = xk.bw - delta.bw_lin
    # exact derivative of c(u) = normalize([1, u/2]) at u = J_theta_bw @ dbw
    u = J[TH, BW] @ dbw
    m = np.sqrt(1.0 + 0.25 * u @ u)
    raw = np.concatenate(([1.0], 0.5 * u))
    dc_du = (np.vstack([np.zeros(3), 0.5 * np.eye(3)]) * m - np.outer(raw, u) / (4.0 * m)) / (m * m)
    conj = np.diag([1.0, -1.0, -1.0, -1.0])
    # e = qa (x) conj(c) (x) conj(gamma_lin); the sign of e is made canonical
    de_dbw = quat_left(qa) @ quat_right(quat_conjugate(delta.gamma)) @ conj @ dc_du @ J[TH, BW]

    jk = np.zeros((15, 15))
    jk1 = np.zeros((15, 15))
    jk[0:3, SP] = -rk_t
    jk[0:3, SQ] = skew(rk_t @ y_p)
    jk[0:3, SV] = -rk_t * dt
    jk[0:3, SBF] = -J[A, BF]
    jk[0:3, SBW] = -J[A, BW]
    jk1[0:3, SP] = rk_t

    jk[3:6, SQ] = skew(rk_t @ y_v)
    jk[3:6, SV] = -rk_t
    jk[3:6, SBF] = -J[B, BF]
    jk[3:6, SBW] = -J[B, BW]
    jk1[3:6, SV] = rk_t

    jk[6:9, SQ] = -sign * quat_right(e)[1:, 1:]
    jk[6:9, SBW] = 2.0 * sign * de_dbw[1:]
    jk1[6:9, SQ] = sign * (quat_left(qa) @ quat_right(gamma_inv))[1:, 1:]

    jk[9:12, SBF] = -np.eye(3)
    jk1[9:12, SBF] = np.eye(3)
    jk[12:15, SBW] = -np.eye(3)
    jk1[12:15, SBW] = np.eye(3)
    return r, jk, jk1


def predict_state(xk: NavState, delta: PreintegratedDelta, g_w=GRAVITY) -> NavState:
    """Dead-reckon the next keyframe state from ``xk`` through the deltas."""
    g_w = np.asarray(g_w, dtype=float)
    dt = delta.dt_sum
    alpha, beta, gamma = correct_for_bias(delta, xk.bf, xk.bw)
    rk = quat_to_rotation(xk.q)
    p = xk.p + xk.v * dt - 0.5 * g_w * dt * dt + rk @ alpha
    v = xk.v - g_w * dt + rk @ beta
    q = quat_multiply(xk.q, gamma)
    return NavState(p=p, q=q, v=v, bf=xk.bf, bw=xk.bw)


@dataclass
class ImuSeries:
    """Time-ordered IMU stream stored as arrays (``t`` [s], ``f``, ``w`` of shape (N, 3))."""

    t: np.ndarray
    f: np.ndarray
    w: np.ndarray
    nominal_rate: float = 200.0
    source_id: str = ""

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.f = np.asarray(self.f, dtype=float).reshape(-1, 3)
        self.w = np.asarray(self.w, dtype=float).reshape(-1, 3)
        if not (len(self.t) == len(self.f) == len(self.w)):
            raise ValueError("t, f and w must have the same length")

    def __len__(self) -> int:
        return len(self.t)

    def sample(self, i: int) -> ImuSample:
        return ImuSample(self.t[i], self.f[i], self.w[i])

    def samples(self, start: int = 0, stop: int | None = None) -> list:
        stop = len(self) if stop is None else stop
        return [ImuSample(self.t[i], self.f[i], self.w[i]) for i in range(start, stop)]

    @property
    def duration(self) -> float:
        return float(self.t[-1] - self.t[0]) if len(self.t) else 0.0
