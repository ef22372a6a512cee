"""Sliding-window visual-inertial estimator.

Keyframe states ``(p, q, v, b_f, b_w)`` and anchored inverse-depth landmarks
are refined jointly by Levenberg-Marquardt over pre-integrated IMU factors,
robustified bearing factors and a dense marginalization prior. The oldest
keyframe is removed by Schur complement once the window exceeds capacity.

Per-keyframe error state: ``(dp, dtheta, dv, dbf, dbw)``, 15 entries, with
``q <- q (x) [1, dtheta/2]``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse

from .errors import EstimatorError
from .geometry import quat_boxminus, quat_boxplus
from .preintegration import (
    GRAVITY,
    SBF,
    SBW,
    SP,
    SQ,
    SV,
    NavState,
    NoiseSigmas,
    PreintegratedDelta,
    imu_residual_and_jacobians,
    predict_state,
    preintegrate,
    repropagate,
)

log = logging.getLogger(__name__)

STATE_DIM = 15
MIN_LAMBDA = 1e-3  # 1 km
DEGENERATE_NORM = 1e-8


class DegenerateFeatureError(EstimatorError):
    pass


# ----------------------------------------------------------------- visual

def tangent_basis(bearing) -> tuple:
    """Two unit vectors completing ``bearing`` to an orthonormal frame.

    The helper axis switches with the dominant component, so the basis is
    not continuous over the sphere; only orthonormality is guaranteed.
    """
    b = np.asarray(bearing, dtype=float)
    b1, b2 = _tangent_basis_batch(b[None])
    return b1[0], b2[0]


def _tangent_basis_batch(b: np.ndarray):
    helper = np.zeros_like(b)
    use_x = np.abs(b[:, 0]) < 0.9
    helper[use_x, 0] = 1.0
    helper[~use_x, 1] = 1.0
    b1 = np.cross(b, helper)
    b1 /= np.linalg.norm(b1, axis=1, keepdims=True)
    b2 = np.cross(b, b1)
    return b1, b2


@dataclass
class VisualBatch:
    r: np.ndarray        # (M, 2)
    d_pi: np.ndarray     # (M, 2, 3)
    d_thi: np.ndarray
    d_pj: np.ndarray
    d_thj: np.ndarray
    d_lam: np.ndarray    # (M, 2)
    ok: np.ndarray       # (M,) bool


def visual_residual_batch(r_i, p_i, r_j, p_j, b_i, lam, b_j, r_bc, p_bc, jacobians=True) -> VisualBatch:
    """Bearing residuals of M observation pairs.

    The landmark ``b_i / lam`` in camera ``i`` is carried to camera ``j``; the
    residual is the measured bearing minus the predicted one, expressed in the
    tangent basis of the measured bearing.
    """
    lam = np.asarray(lam, dtype=float)
    pc_i = b_i / lam[:, None]
    pb_i = pc_i @ r_bc.T + p_bc
    pw = np.einsum("mab,mb->ma", r_i, pb_i) + p_i
    pb_j = np.einsum("mba,mb->ma", r_j, pw - p_j)
    pc_j = (pb_j - p_bc) @ r_bc
    norm = np.linalg.norm(pc_j, axis=1)
    ok = norm > DEGENERATE_NORM
    safe = np.where(ok, norm, 1.0)
    u = pc_j / safe[:, None]
    b1, b2 = _tangent_basis_batch(b_j)
    basis = np.stack([b1, b2], axis=1)  # (M, 2, 3)
    r = np.einsum("mka,ma->mk", basis, b_j - u)
    if not jacobians:
        return VisualBatch(r, None, None, None, None, None, ok)
    eye = np.eye(3)
    proj = (eye[None] - u[:, :, None] * u[:, None, :]) / safe[:, None, None]
    d_pc = -np.einsum("mka,mab->mkb", basis, proj)           # dr / dP_cj
    d_pb = d_pc @ r_bc.T                                      # dr / dP_bj
    d_pw = np.einsum("mka,mba->mkb", d_pb, r_j)               # dr / dP_w (R_j^T)
    d_pj = -d_pw
    d_thj = np.einsum("mka,mab->mkb", d_pb, _skew_batch(pb_j))
    d_pi = d_pw
    d_thi = -np.einsum("mka,mab,mbc->mkc", d_pw, r_i, _skew_batch(pb_i))
    dpw_dlam = -np.einsum("mab,mb->ma", r_i, b_i @ r_bc.T) / (lam * lam)[:, None]
    d_lam = np.einsum("mka,ma->mk", d_pw, dpw_dlam)
    return VisualBatch(r, d_pi, d_thi, d_pj, d_thj, d_lam, ok)


def _skew_batch(v: np.ndarray) -> np.ndarray:
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def visual_residual(b_i, b_j, x_i: NavState, x_j: NavState, lam: float,
                    r_bc=np.eye(3), p_bc=np.zeros(3), jacobians: bool = False):
    """Residual (2,) of one observation pair, optionally with Jacobians.

    ``b_i`` is the anchor bearing in camera ``i``, ``b_j`` the measured bearing
    in camera ``j``. Jacobians are returned as a dict keyed ``p_i``,
    ``theta_i``, ``p_j``, ``theta_j`` (each 2x3) and ``lam`` (2,).
    """
    if lam <= 0:
        raise EstimatorError(f"inverse depth must be positive, got {lam}")
    vb = visual_residual_batch(
        x_i.rotation[None], np.asarray(x_i.p)[None], x_j.rotation[None], np.asarray(x_j.p)[None],
        np.asarray(b_i, dtype=float)[None], np.array([lam], dtype=float), np.asarray(b_j, dtype=float)[None],
        np.asarray(r_bc, dtype=float), np.asarray(p_bc, dtype=float), jacobians)
    if not vb.ok[0]:
        raise DegenerateFeatureError("transformed landmark collapses onto the camera centre")
    if not jacobians:
        return vb.r[0]
    return vb.r[0], {"p_i": vb.d_pi[0], "theta_i": vb.d_thi[0], "p_j": vb.d_pj[0],
                     "theta_j": vb.d_thj[0], "lam": vb.d_lam[0]}


# ----------------------------------------------------------------- window containers

@dataclass
class Landmark:
    anchor: int                # keyframe id holding the anchor bearing
    obs: dict                  # keyframe id -> measured unit bearing
    lam: float | None = None   # inverse depth along the anchor bearing
    degenerate: bool = False

    @property
    def bearing(self) -> np.ndarray:
        return self.obs[self.anchor]


@dataclass
class ImuFactor:
    """Pre-integrated factor between keyframes ``k`` and ``k1``."""

    k: int
    k1: int
    delta: PreintegratedDelta
    sigmas: NoiseSigmas
    _sqrt_info: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        # the driver re-propagates after each solve, so the far-bias warning is noise here
        self.delta.bias_warned = True

    def sqrt_info(self) -> np.ndarray:
        if self._sqrt_info is None:
            self._sqrt_info = _sqrt_information(self.delta.P, f"IMU factor {self.k}->{self.k1}")
        return self._sqrt_info

    def repropagate(self, bf, bw) -> None:
        self.delta = repropagate(self.delta, bf, bw)
        self.delta.bias_warned = True
        self._sqrt_info = None


def _sqrt_information(P: np.ndarray, label: str) -> np.ndarray:
    """``S`` with ``S^T S = P^-1``; rejects covariances that are not PSD."""
    P = 0.5 * (P + P.T)
    eig = np.linalg.eigvalsh(P)
    if not np.all(np.isfinite(eig)) or eig[0] < -1e-10 * max(1.0, eig[-1]):
        raise EstimatorError(f"{label}: covariance is not positive semidefinite (min eigenvalue {eig[0]:.3g})")
    try:
        chol = np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        raise EstimatorError(f"{label}: covariance is singular, cannot form its information") from None
    return scipy.linalg.solve_triangular(chol, np.eye(len(P)), lower=True)


@dataclass
class MarginalizationPrior:
    """Linear prior ``|| r_p + J_p dx ||^2`` on the keyframes in ``keyframes``.

    ``dx`` stacks each keyframe's error state relative to ``anchor_states``.
    ``H_p = J_p^T J_p`` is the information of the eliminated subproblem.
    """

    keyframes: list
    anchor_states: dict
    J_p: np.ndarray
    r_p: np.ndarray

    @property
    def H_p(self) -> np.ndarray:
        return self.J_p.T @ self.J_p

    def delta_x(self, states: dict) -> np.ndarray:
        return np.concatenate([state_difference(states[k], self.anchor_states[k]) for k in self.keyframes])

    def residual(self, states: dict) -> np.ndarray:
        return self.r_p + self.J_p @ self.delta_x(states)

    @classmethod
    def initial(cls, k: int, x: NavState, sigmas) -> "MarginalizationPrior":
        """Diagonal prior on one keyframe, ``sigmas`` per error-state entry."""
        s = np.broadcast_to(np.asarray(sigmas, dtype=float), (STATE_DIM,))
        return cls([k], {k: x}, np.diag(1.0 / s), np.zeros(STATE_DIM))


def state_difference(x: NavState, ref: NavState) -> np.ndarray:
    d = np.empty(STATE_DIM)
    d[SP] = x.p - ref.p
    d[SQ] = quat_boxminus(x.q, ref.q)
    d[SV] = x.v - ref.v
    d[SBF] = x.bf - ref.bf
    d[SBW] = x.bw - ref.bw
    return d


def state_boxplus(x: NavState, d: np.ndarray) -> NavState:
    return NavState(x.p + d[SP], quat_boxplus(x.q, d[SQ]), x.v + d[SV], x.bf + d[SBF], x.bw + d[SBW])


@dataclass
class WindowState:
    keyframes: list = field(default_factory=list)
    states: dict = field(default_factory=dict)
    times: dict = field(default_factory=dict)
    landmarks: dict = field(default_factory=dict)
    r_bc: np.ndarray = field(default_factory=lambda: np.eye(3))
    p_bc: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def copy(self) -> "WindowState":
        lms = {i: Landmark(l.anchor, dict(l.obs), l.lam, l.degenerate) for i, l in self.landmarks.items()}
        return WindowState(list(self.keyframes), dict(self.states), dict(self.times), lms,
                           self.r_bc.copy(), self.p_bc.copy())

    def active_landmarks(self) -> list:
        """Ids of landmarks that enter the optimization."""
        kf = set(self.keyframes)
        return sorted(i for i, l in self.landmarks.items()
                      if l.lam is not None and not l.degenerate and l.anchor in kf and len(l.obs) >= 2)


@dataclass
class SolverConfig:
    robust: str = "huber"             # or "l2"
    huber_delta: float = 1.0          # on the whitened residual norm
    pixel_sigma: float = 1.5
    focal: float = 320.0
    max_iterations: int = 30
    rel_cost_tol: float = 1e-8
    step_tol: float = 1e-10
    lm_lambda: float = 1e-4
    lm_lambda_cap: float = 1e8
    gravity: np.ndarray = field(default_factory=lambda: GRAVITY.copy())

    @property
    def visual_sigma(self) -> float:
        """Bearing noise on the unit sphere."""
        return self.pixel_sigma / self.focal


@dataclass
class SolveResult:
    state: WindowState
    cost_log: list
    iterations: int
    converged: bool
    warning: str | None = None


# ----------------------------------------------------------------- linearization

def _robust_weight(s: np.ndarray, cfg: SolverConfig):
    """Cost and IRLS weight for squared whitened norms ``s``."""
    if cfg.robust == "l2":
        return s.copy(), np.ones_like(s)
    if cfg.robust != "huber":
        raise EstimatorError(f"unknown robust loss {cfg.robust!r}")
    d = cfg.huber_delta
    inlier = s <= d * d
    root = np.sqrt(np.maximum(s, 1e-300))
    cost = np.where(inlier, s, 2.0 * d * root - d * d)
    weight = np.where(inlier, 1.0, d / root)
    return cost, weight


@dataclass
class _Layout:
    kf_col: dict
    lm_col: dict
    dim: int


def _layout(state: WindowState, landmarks: list) -> _Layout:
    kf_col = {k: i * STATE_DIM for i, k in enumerate(state.keyframes)}
    base = len(state.keyframes) * STATE_DIM
    lm_col = {l: base + i for i, l in enumerate(landmarks)}
    return _Layout(kf_col, lm_col, base + len(landmarks))


def _visual_pairs(state: WindowState, landmarks: list):
    lm, ki, kj, bi, bj = [], [], [], [], []
    kf = set(state.keyframes)
    for l in landmarks:
        mark = state.landmarks[l]
        for k, b in mark.obs.items():
            if k == mark.anchor or k not in kf:
                continue
            lm.append(l)
            ki.append(mark.anchor)
            kj.append(k)
            bi.append(mark.bearing)
            bj.append(b)
    return (np.array(lm, dtype=int), np.array(ki, dtype=int), np.array(kj, dtype=int),
            np.array(bi).reshape(-1, 3), np.array(bj).reshape(-1, 3))


def _pair_poses(state: WindowState, ki, kj):
    order = {k: n for n, k in enumerate(state.keyframes)}
    rots = np.array([state.states[k].rotation for k in state.keyframes])
    pos = np.array([state.states[k].p for k in state.keyframes])
    ii = np.array([order[k] for k in ki], dtype=int)
    jj = np.array([order[k] for k in kj], dtype=int)
    return rots[ii], pos[ii], rots[jj], pos[jj]


def _evaluate(state: WindowState, imu_factors: list, prior, cfg: SolverConfig, landmarks: list,
              pairs, want_jacobian: bool):
    """Total cost and, optionally, the whitened/robust-weighted system ``(J, r)``."""
    layout = _layout(state, landmarks) if want_jacobian else None
    cost = 0.0
    rows_r, trip_r, trip_c, trip_v = [], [], [], []
    row = 0

    def add_block(r_w, blocks):
        nonlocal row
        n = len(r_w)
        rows_r.append(r_w)
        if want_jacobian:
            for col, jac in blocks:
                rr, cc = np.meshgrid(np.arange(n) + row, np.arange(jac.shape[1]) + col, indexing="ij")
                trip_r.append(rr.ravel())
                trip_c.append(cc.ravel())
                trip_v.append(jac.ravel())
        row += n

    kf = set(state.keyframes)
    for fac in imu_factors:
        if fac.k not in kf or fac.k1 not in kf:
            continue
        r, jk, jk1 = imu_residual_and_jacobians(fac.delta, state.states[fac.k], state.states[fac.k1],
                                                cfg.gravity, jacobians=want_jacobian)
        s = fac.sqrt_info()
        r_w = s @ r
        cost += float(r_w @ r_w)
        blocks = [(layout.kf_col[fac.k], s @ jk), (layout.kf_col[fac.k1], s @ jk1)] if want_jacobian else []
        add_block(r_w, blocks)

    if prior is not None:
        r_w = prior.residual(state.states)
        cost += float(r_w @ r_w)
        blocks = []
        if want_jacobian:
            for i, k in enumerate(prior.keyframes):
                blocks.append((layout.kf_col[k], prior.J_p[:, i * STATE_DIM:(i + 1) * STATE_DIM]))
        add_block(r_w, blocks)

    lm_ids, ki, kj, bi, bj = pairs
    vis_cost = 0.0
    if len(lm_ids):
        r_i, p_i, r_j, p_j = _pair_poses(state, ki, kj)
        lam = np.array([state.landmarks[l].lam for l in lm_ids])
        vb = visual_residual_batch(r_i, p_i, r_j, p_j, bi, lam, bj, state.r_bc, state.p_bc, want_jacobian)
        inv_sigma = 1.0 / cfg.visual_sigma
        r_w = np.where(vb.ok[:, None], vb.r * inv_sigma, 0.0)
        s = np.sum(r_w * r_w, axis=1)
        c, w = _robust_weight(s, cfg)
        vis_cost = float(np.sum(c))
        cost += vis_cost
        sw = np.sqrt(w)[:, None]
        rows_r.append((r_w * sw).ravel())
        if want_jacobian:
            m = len(lm_ids)
            scale = (inv_sigma * sw * vb.ok[:, None])[:, :, None]
            jac = np.concatenate([vb.d_pi, vb.d_thi, vb.d_pj, vb.d_thj, vb.d_lam[:, :, None]], axis=2) * scale
            ci = np.array([layout.kf_col[k] for k in ki])
            cj = np.array([layout.kf_col[k] for k in kj])
            cl = np.array([layout.lm_col[l] for l in lm_ids])
            cols = np.concatenate([ci[:, None] + np.arange(6), cj[:, None] + np.arange(6), cl[:, None]], axis=1)
            rr = row + 2 * np.arange(m)[:, None, None] + np.arange(2)[None, :, None]
            trip_r.append(np.broadcast_to(rr, (m, 2, 13)).ravel())
            trip_c.append(np.broadcast_to(cols[:, None, :], (m, 2, 13)).ravel())
            trip_v.append(jac.ravel())
        row += 2 * len(lm_ids)
    if not want_jacobian:
        return cost, None, None
    r_all = np.concatenate(rows_r) if rows_r else np.zeros(0)
    jmat = scipy.sparse.coo_matrix(
        (np.concatenate(trip_v), (np.concatenate(trip_r), np.concatenate(trip_c))),
        shape=(row, layout.dim)).tocsr()
    return cost, jmat, r_all


def _apply_step(state: WindowState, step: np.ndarray, landmarks: list) -> WindowState:
    out = state.copy()
    for i, k in enumerate(state.keyframes):
        out.states[k] = state_boxplus(state.states[k], step[i * STATE_DIM:(i + 1) * STATE_DIM])
    base = len(state.keyframes) * STATE_DIM
    for i, l in enumerate(landmarks):
        out.landmarks[l].lam = max(float(state.landmarks[l].lam + step[base + i]), MIN_LAMBDA)
    return out


def window_cost(state: WindowState, imu_factors: list, prior, cfg: SolverConfig | None = None) -> float:
    cfg = cfg or SolverConfig()
    lms = state.active_landmarks()
    return _evaluate(state, imu_factors, prior, cfg, lms, _visual_pairs(state, lms), False)[0]


def flag_degenerate(state: WindowState) -> int:
    """Mark landmarks whose transformed point collapses; returns how many."""
    lms = state.active_landmarks()
    lm_ids, ki, kj, bi, bj = _visual_pairs(state, lms)
    if not len(lm_ids):
        return 0
    r_i, p_i, r_j, p_j = _pair_poses(state, ki, kj)
    vb = visual_residual_batch(
        r_i, p_i, r_j, p_j, bi, np.array([state.landmarks[l].lam for l in lm_ids]), bj, state.r_bc, state.p_bc, False)
    bad = set(lm_ids[~vb.ok].tolist())
    for l in bad:
        state.landmarks[l].degenerate = True
    return len(bad)


def solve_window(state: WindowState, imu_factors: list, prior=None,
                 config: SolverConfig | None = None) -> SolveResult:
    """Levenberg-Marquardt on the window; never returns a worse iterate than the input."""
    cfg = config or SolverConfig()
    if len(state.keyframes) < 2:
        raise EstimatorError("solve_window needs at least two keyframes")
    if flag_degenerate(state):
        log.debug("excluded degenerate landmarks")
    lms = state.active_landmarks()
    pairs = _visual_pairs(state, lms)
    cost, jmat, r = _evaluate(state, imu_factors, prior, cfg, lms, pairs, True)
    cost_log = [cost]
    mu = cfg.lm_lambda
    converged = False
    warning = None
    it = 0
    while it < cfg.max_iterations:
        it += 1
        H = (jmat.T @ jmat).toarray()
        g = jmat.T @ r
        diag = np.diag(H).copy()
        diag[diag <= 0] = 1e-12
        accepted = False
        while not accepted:
            A = H + mu * np.diag(diag)
            try:
                cho = scipy.linalg.cho_factor(A, check_finite=False)
                step = -scipy.linalg.cho_solve(cho, g, check_finite=False)
            except (np.linalg.LinAlgError, ValueError):
                step = None
            if step is not None and np.all(np.isfinite(step)):
                trial = _apply_step(state, step, lms)
                trial_cost = _evaluate(trial, imu_factors, prior, cfg, lms, pairs, False)[0]
                if trial_cost <= cost:
                    accepted = True
                    break
            mu *= 10.0
            if mu > cfg.lm_lambda_cap:
                warning = "damping exceeded cap; returning best iterate"
                break
        if not accepted:
            break
        decrease = cost - trial_cost
        state, cost = trial, trial_cost
        cost_log.append(cost)
        mu = max(mu / 10.0, 1e-12)
        if decrease <= cfg.rel_cost_tol * max(cost_log[-2], 1e-300) or np.linalg.norm(step) < cfg.step_tol:
            converged = True
            break
        cost, jmat, r = _evaluate(state, imu_factors, prior, cfg, lms, pairs, True)
    if warning:
        log.warning(warning)
    return SolveResult(state, cost_log, it, converged, warning)


# ----------------------------------------------------------------- marginalization

def schur_complement(H: np.ndarray, b: np.ndarray, marg: np.ndarray, keep: np.ndarray, reg: float = 1e-9):
    """Eliminate ``marg`` from the normal equations ``H dx = -b``.

    Returns ``(H_p, b_p)`` on ``keep``. A singular eliminated block is
    regularized with ``reg`` on its diagonal.
    """
    hmm = H[np.ix_(marg, marg)]
    hmk = H[np.ix_(marg, keep)]
    hkk = H[np.ix_(keep, keep)]
    hmm = 0.5 * (hmm + hmm.T)
    try:
        cho = scipy.linalg.cho_factor(hmm, check_finite=False)
    except np.linalg.LinAlgError:
        log.info("singular marginalized block; adding %g to its diagonal", reg)
        cho = scipy.linalg.cho_factor(hmm + reg * np.eye(len(marg)), check_finite=False)
    x = scipy.linalg.cho_solve(cho, np.column_stack([hmk, b[marg]]), check_finite=False)
    h_p = hkk - hmk.T @ x[:, :-1]
    b_p = b[keep] - hmk.T @ x[:, -1]
    return 0.5 * (h_p + h_p.T), b_p


def prior_from_information(h_p: np.ndarray, b_p: np.ndarray, floor: float = 0.0):
    """Factor ``H_p`` into ``J_p^T J_p`` and find ``r_p`` with ``J_p^T r_p = b_p``.

    Eigenvalues at or below ``floor`` (relative to the largest) are dropped,
    which makes the stored prior PSD by construction.
    """
    w, v = np.linalg.eigh(h_p)
    tol = max(floor, 1e-12) * max(w[-1], 0.0)
    keep = w > tol
    sq = np.sqrt(w[keep])
    J_p = sq[:, None] * v[:, keep].T
    r_p = (v[:, keep].T @ b_p) / sq
    return J_p, r_p


def marginalize_oldest(state: WindowState, imu_factors: list, prior, config: SolverConfig | None = None):
    """Fold the oldest keyframe and the landmarks anchored there into a prior.

    Returns ``(prior, removed_landmarks)``. The caller drops the keyframe,
    its IMU factor and re-anchors or drops the returned landmarks.
    """
    cfg = config or SolverConfig()
    oldest = state.keyframes[0]
    lms_all = state.active_landmarks()
    lms = [l for l in lms_all if state.landmarks[l].anchor == oldest]
    pairs = _visual_pairs(state, lms)
    facs = [f for f in imu_factors if f.k == oldest or f.k1 == oldest]
    use_prior = prior if (prior is not None and oldest in prior.keyframes) else None
    sub = state
    _, jmat, r = _evaluate(sub, facs, use_prior, cfg, lms, pairs, True)
    layout = _layout(sub, lms)
    H = (jmat.T @ jmat).toarray()
    b = jmat.T @ r
    # keyframes actually touched by the eliminated factors
    touched = np.flatnonzero(np.abs(jmat).sum(axis=0).A1 > 0)
    kf_touched = sorted({state.keyframes[c // STATE_DIM] for c in touched if c < len(state.keyframes) * STATE_DIM})
    keep_kf = [k for k in state.keyframes if k in kf_touched and k != oldest]
    marg = list(range(layout.kf_col[oldest], layout.kf_col[oldest] + STATE_DIM)) + [layout.lm_col[l] for l in lms]
    keep = [c for k in keep_kf for c in range(layout.kf_col[k], layout.kf_col[k] + STATE_DIM)]
    if prior is not None and use_prior is None:
        raise EstimatorError("existing prior does not cover the oldest keyframe")
    if not keep:
        return None, lms
    h_p, b_p = schur_complement(H, b, np.array(marg), np.array(keep))
    J_p, r_p = prior_from_information(h_p, b_p)
    anchors = {k: state.states[k] for k in keep_kf}
    return MarginalizationPrior(keep_kf, anchors, J_p, r_p), lms


# ----------------------------------------------------------------- landmarks

def camera_pose(x: NavState, r_bc, p_bc):
    """World rotation and centre of the camera mounted on body state ``x``."""
    r_wb = x.rotation
    return r_wb @ r_bc, x.p + r_wb @ p_bc


def triangulate(state: WindowState, mark: Landmark, min_parallax_deg: float = 1.0):
    """Midpoint triangulation from all window observations; returns the inverse
    depth along the anchor bearing or ``None`` when ill-conditioned."""
    a = np.zeros((3, 3))
    rhs = np.zeros(3)
    dirs = []
    for k, b in mark.obs.items():
        if k not in state.states:
            continue
        r_wc, c = camera_pose(state.states[k], state.r_bc, state.p_bc)
        d = r_wc @ b
        proj = np.eye(3) - np.outer(d, d)
        a += proj
        rhs += proj @ c
        dirs.append(d)
    if len(dirs) < 2:
        return None
    cosines = np.clip(np.array(dirs) @ dirs[0], -1.0, 1.0)
    if np.degrees(np.arccos(cosines.min())) < min_parallax_deg:
        return None
    try:
        point = np.linalg.solve(a, rhs)
    except np.linalg.LinAlgError:
        return None
    r_wc, c = camera_pose(state.states[mark.anchor], state.r_bc, state.p_bc)
    pc = r_wc.T @ (point - c)
    depth = float(pc @ mark.bearing)
    if depth < 0.1 or depth > 1e3:
        return None
    return 1.0 / float(np.linalg.norm(pc))


def landmark_world(state: WindowState, mark: Landmark) -> np.ndarray:
    r_wc, c = camera_pose(state.states[mark.anchor], state.r_bc, state.p_bc)
    return r_wc @ (mark.bearing / mark.lam) + c


def reanchor(state: WindowState, lm_id: int, old_kf: int) -> None:
    """Move a landmark's anchor off ``old_kf`` to its next observation."""
    mark = state.landmarks[lm_id]
    world = landmark_world(state, mark) if mark.lam is not None and mark.anchor in state.states else None
    mark.obs.pop(old_kf, None)
    if not mark.obs:
        del state.landmarks[lm_id]
        return
    mark.anchor = min(mark.obs)
    if world is None:
        mark.lam = None
        return
    r_wc, c = camera_pose(state.states[mark.anchor], state.r_bc, state.p_bc)
    pc = r_wc.T @ (world - c)
    n = float(np.linalg.norm(pc))
    mark.lam = 1.0 / n if n > 1e-6 and pc @ mark.bearing > 0 else None


# ----------------------------------------------------------------- driver

@dataclass
class EstimatorConfig:
    window: int = 10
    solver: SolverConfig = field(default_factory=SolverConfig)
    iterations_per_keyframe: int = 8
    rel_cost_tol: float = 1e-6
    # initial prior std on the first keyframe (p, theta, v, bf, bw)
    prior_sigmas: tuple = (1e-3,) * 3 + (1e-3,) * 3 + (1e-2,) * 3 + (0.1,) * 3 + (0.01,) * 3
    # bias drift (accel, gyro) beyond which a factor is re-integrated
    repropagate_threshold: tuple = (0.05, 0.005)


class SlidingWindowEstimator:
    """Keyframe-by-keyframe sliding-window smoother.

    ``update_process_noise`` changes the sigmas used for the *next* IMU
    interval; factors already integrated keep their covariance.
    """

    def __init__(self, x0: NavState, t0: float, sigmas: NoiseSigmas, config: EstimatorConfig | None = None,
                 r_bc=np.eye(3), p_bc=np.zeros(3)):
        self.config = config or EstimatorConfig()
        self.sigmas = sigmas
        self.state = WindowState(r_bc=np.asarray(r_bc, dtype=float), p_bc=np.asarray(p_bc, dtype=float))
        self.state.keyframes.append(0)
        self.state.states[0] = x0
        self.state.times[0] = t0
        self.prior = MarginalizationPrior.initial(0, x0, self.config.prior_sigmas)
        self.factors: list = []
        self.next_id = 1
        self.history: list = [(t0, x0)]
        self.solve_log: list = []
        self.sigma_log: list = []

    def update_process_noise(self, sigma_f, sigma_w) -> bool:
        sf = np.broadcast_to(np.asarray(sigma_f, dtype=float), (3,))
        sw = np.broadcast_to(np.asarray(sigma_w, dtype=float), (3,))
        if not (np.all(np.isfinite(sf)) and np.all(np.isfinite(sw)) and np.all(sf > 0) and np.all(sw > 0)):
            log.warning("rejected non-positive process noise update (sigma_f=%s, sigma_w=%s)", sf, sw)
            return False
        self.sigmas = self.sigmas.with_measurement(sf, sw)
        return True

    @property
    def latest(self) -> NavState:
        return self.state.states[self.state.keyframes[-1]]

    def add_keyframe(self, samples: list, t: float, ids, bearings) -> NavState:
        """Integrate ``samples`` (from the last keyframe time to ``t``), add the
        keyframe with its bearing observations, optimize and slide."""
        last = self.state.keyframes[-1]
        x_last = self.state.states[last]
        delta = preintegrate(samples, self.sigmas, x_last.bf, x_last.bw)
        k = self.next_id
        self.next_id += 1
        self.sigma_log.append((t, self.sigmas.sigma_f.copy(), self.sigmas.sigma_w.copy()))
        self.factors.append(ImuFactor(last, k, delta, self.sigmas))
        self.state.keyframes.append(k)
        self.state.times[k] = t
        self.state.states[k] = predict_state(x_last, delta, self.config.solver.gravity)
        self._add_observations(k, ids, bearings)
        self._optimize()
        if len(self.state.keyframes) > self.config.window:
            self._slide()
        self.history.append((t, self.latest))
        return self.latest

    def add_first_observations(self, ids, bearings) -> None:
        self._add_observations(0, ids, bearings)

    def _add_observations(self, k, ids, bearings) -> None:
        for l, b in zip(np.asarray(ids).tolist(), np.asarray(bearings)):
            mark = self.state.landmarks.get(l)
            if mark is None:
                self.state.landmarks[l] = Landmark(anchor=k, obs={k: np.asarray(b, dtype=float)})
            else:
                mark.obs[k] = np.asarray(b, dtype=float)

    def _initialize_landmarks(self) -> None:
        for mark in self.state.landmarks.values():
            if mark.lam is None and not mark.degenerate and len(mark.obs) >= 2:
                mark.lam = triangulate(self.state, mark)

    def _optimize(self) -> None:
        self._initialize_landmarks()
        cfg = self.config.solver
        solver_cfg = SolverConfig(**{**cfg.__dict__, "max_iterations": self.config.iterations_per_keyframe,
                                       "rel_cost_tol": self.config.rel_cost_tol})
        res = solve_window(self.state, self.factors, self.prior, solver_cfg)
        self.state = res.state
        self.solve_log.append((res.iterations, res.cost_log[0], res.cost_log[-1], res.warning))
        # keep first-order bias correction valid
        for fac in self.factors:
            x = self.state.states[fac.k]
            th_f, th_w = self.config.repropagate_threshold
            if np.linalg.norm(x.bf - fac.delta.bf_lin) > th_f or np.linalg.norm(x.bw - fac.delta.bw_lin) > th_w:
                fac.repropagate(x.bf, x.bw)

    def _slide(self) -> None:
        oldest = self.state.keyframes[0]
        prior, removed = marginalize_oldest(self.state, self.factors, self.prior, self.config.solver)
        self.prior = prior
        self.factors = [f for f in self.factors if f.k != oldest]
        for l in list(self.state.landmarks):
            mark = self.state.landmarks[l]
            if oldest not in mark.obs:
                continue
            if mark.anchor == oldest:
                reanchor(self.state, l, oldest)
            else:
                mark.obs.pop(oldest)
        self.state.keyframes.pop(0)
        del self.state.states[oldest]
        del self.state.times[oldest]


def trajectory_from_history(history: list):
    """``(t, p, q)`` arrays from ``(t, NavState)`` pairs."""
    t = np.array([h[0] for h in history])
    p = np.array([h[1].p for h in history])
    q = np.array([h[1].q for h in history])
    return t, p, q


def rotation_error(q_est, q_ref) -> float:
    return float(np.linalg.norm(quat_boxminus(q_est, q_ref)))
