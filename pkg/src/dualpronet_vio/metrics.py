"""Trajectory containers, TUM I/O, alignment and error metrics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import parse_euroc_groundtruth_csv
from .errors import DataError
from .geometry import quat_multiply, quat_normalize, rotation_to_quat


@dataclass
class Trajectory:
    """Timestamped poses; ``q`` is scalar-first ``[w, x, y, z]``."""

    t: np.ndarray
    p: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float).reshape(-1)
        self.p = np.asarray(self.p, dtype=float).reshape(-1, 3)
        self.q = np.asarray(self.q, dtype=float).reshape(-1, 4)
        if not (len(self.t) == len(self.p) == len(self.q)):
            raise DataError("trajectory arrays differ in length")
        if len(self.t) > 1 and np.any(np.diff(self.t) <= 0):
            raise DataError("trajectory timestamps must increase strictly")

    def __len__(self) -> int:
        return len(self.t)

    def transformed(self, r: np.ndarray, t: np.ndarray) -> "Trajectory":
        """Apply ``x -> r x + t`` to every pose."""
        q_r = rotation_to_quat(r)
        q = np.array([quat_normalize(quat_multiply(q_r, qi)) for qi in self.q])
        return Trajectory(self.t.copy(), self.p @ r.T + t, q)


def write_tum(path: str, traj: Trajectory) -> None:
    """``timestamp tx ty tz qx qy qz qw`` per line."""
    with open(path, "w") as fh:
        for t, p, q in zip(traj.t, traj.p, traj.q):
            fh.write(f"{t:.9f} {p[0]:.9f} {p[1]:.9f} {p[2]:.9f} {q[1]:.9f} {q[2]:.9f} {q[3]:.9f} {q[0]:.9f}\n")


def read_tum(path: str) -> Trajectory:
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.replace(",", " ").split()
            if len(parts) != 8:
                raise DataError(f"{path}:{lineno}: expected 8 fields, found {len(parts)}")
            try:
                rows.append([float(x) for x in parts])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise DataError(f"{path}: no poses")
    a = np.array(rows)
    q = np.column_stack([a[:, 7], a[:, 4:7]])
    return Trajectory(a[:, 0], a[:, 1:4], q)


def read_trajectory(path: str) -> Trajectory:
    """TUM text file, or an EuRoC ground-truth CSV (detected by its commas and column count)."""
    head = ""
    try:
        with open(path) as fh:
            for line in fh:
                if line.strip() and not line.startswith("#"):
                    head = line
                    break
    except OSError as exc:
        raise DataError(f"cannot read trajectory {path}: {exc.strerror}") from None
    if head.count(",") >= 7:
        gt = parse_euroc_groundtruth_csv(path)
        return Trajectory(gt.t, gt.p, gt.q)
    return read_tum(path)


def associate(est: Trajectory, gt: Trajectory, max_dt: float = 0.01):
    """Nearest-timestamp pairs ``(i_est, i_gt)`` within ``max_dt`` seconds."""
    if len(gt) == 0 or len(est) == 0:
        return np.zeros(0, dtype=int), np.zeros(0, dtype=int)
    j = np.searchsorted(gt.t, est.t)
    j0 = np.clip(j - 1, 0, len(gt) - 1)
    j1 = np.clip(j, 0, len(gt) - 1)
    pick = np.where(np.abs(gt.t[j0] - est.t) <= np.abs(gt.t[j1] - est.t), j0, j1)
    ok = np.abs(gt.t[pick] - est.t) <= max_dt
    return np.flatnonzero(ok), pick[ok]


def umeyama_se3(src: np.ndarray, dst: np.ndarray):
    """Rotation and translation minimizing ``sum |dst - (R src + t)|^2`` (no scale)."""
    mu_s, mu_d = src.mean(0), dst.mean(0)
    cov = (dst - mu_d).T @ (src - mu_s) / len(src)
    u, _, vt = np.linalg.svd(cov)
    s = np.eye(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        s[2, 2] = -1.0
    r = u @ s @ vt
    return r, mu_d - r @ mu_s


@dataclass
class Alignment:
    est: Trajectory       # associated and aligned estimate
    gt: Trajectory        # associated ground truth
    rotation: np.ndarray
    translation: np.ndarray


def associate_and_align(est: Trajectory, gt: Trajectory, max_dt: float = 0.01, min_pairs: int = 10) -> Alignment:
    """Associate by timestamp, then rigidly align the estimate onto ground truth."""
    i, j = associate(est, gt, max_dt)
    if len(i) < min_pairs:
        raise DataError(f"only {len(i)} timestamp pairs within {max_dt * 1e3:.0f} ms, need {min_pairs}")
    e = Trajectory(est.t[i], est.p[i], est.q[i])
    g = Trajectory(gt.t[j], gt.p[j], gt.q[j])
    r, t = umeyama_se3(e.p, g.p)
    return Alignment(e.transformed(r, t), g, r, t)


def ate(est_p, gt_p) -> float:
    """Root-mean-square 3-D position error over paired positions."""
    est_p = np.asarray(est_p.p if isinstance(est_p, Trajectory) else est_p, dtype=float).reshape(-1, 3)
    gt_p = np.asarray(gt_p.p if isinstance(gt_p, Trajectory) else gt_p, dtype=float).reshape(-1, 3)
    if est_p.shape != gt_p.shape:
        raise DataError(f"position arrays differ in shape: {est_p.shape} vs {gt_p.shape}")
    if len(est_p) == 0:
        raise DataError("no positions to compare")
    d = est_p - gt_p
    return float(np.sqrt(np.mean(np.sum(d * d, axis=1))))


def rmse(predictions, labels) -> float:
    predictions = np.asarray(predictions, dtype=float).reshape(-1)
    labels = np.asarray(labels, dtype=float).reshape(-1)
    if predictions.shape != labels.shape:
        raise DataError(f"length mismatch: {len(predictions)} predictions vs {len(labels)} labels")
    if len(labels) == 0:
        raise DataError("rmse needs at least one pair")
    d = predictions - labels
    return float(np.sqrt(np.mean(d * d)))


def aligned_ate(est: Trajectory, gt: Trajectory, max_dt: float = 0.01) -> float:
    al = associate_and_align(est, gt, max_dt)
    return ate(al.est, al.gt)


def improvement(baseline: float, ours: float) -> float:
    """Relative improvement ``(baseline - ours) / baseline``."""
    return (baseline - ours) / baseline

