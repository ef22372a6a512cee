"""EuRoC ingestion and construction of labelled noise-regression windows.

Each labelled example is one axis of one sensor over ``window_len`` samples:
the Savitzky-Golay-smoothed signal plus i.i.d. Gaussian noise of a known
standard deviation, which is the label.
"""
from __future__ import annotations

import glob
import os
import zlib
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import savgol_filter

from .errors import DataError
from .preintegration import ImuSeries

DATASET_FORMAT_VERSION = 1

ACCEL_GRID = (0.01, 0.03, 0.05, 0.07, 0.09, 0.11, 0.13, 0.15, 0.17, 0.19, 0.21)
GYRO_GRID = (0.001, 0.003, 0.005, 0.007, 0.009, 0.011, 0.013, 0.015)

EUROC_SEQUENCES = {
    "MH01": "MH_01_easy", "MH02": "MH_02_easy", "MH03": "MH_03_medium",
    "MH04": "MH_04_difficult", "MH05": "MH_05_difficult",
    "V101": "V1_01_easy", "V102": "V1_02_medium", "V103": "V1_03_difficult",
    "V201": "V2_01_easy", "V202": "V2_02_medium", "V203": "V2_03_difficult",
}
# approximate recording lengths in seconds, used for synthetic stand-ins
EUROC_DURATIONS = {
    "MH01": 182.0, "MH02": 150.0, "MH03": 132.0, "MH04": 99.0, "MH05": 111.0,
    "V101": 144.0, "V102": 84.0, "V103": 105.0, "V201": 112.0, "V202": 115.0, "V203": 115.0,
}

SENSORS = ("accel", "gyro")


@dataclass(frozen=True)
class DatasetManifest:
    train: tuple = ("MH01", "MH03", "MH05", "V102", "V201", "V203")
    test: tuple = ("MH02", "MH04", "V101", "V103", "V202")

    def __post_init__(self):
        object.__setattr__(self, "train", tuple(self.train))
        object.__setattr__(self, "test", tuple(self.test))
        overlap = set(self.train) & set(self.test)
        if overlap:
            raise DataError(f"train and test sequences overlap: {sorted(overlap)}")
        if not self.train and not self.test:
            raise DataError("manifest lists no sequences")


@dataclass
class LabeledWindows:
    """A stack of single-axis windows with their injected noise level.

    ``sequence``/``window``/``axis``/``level`` record provenance so that
    ordering and splits can be audited.
    """

    samples: np.ndarray
    labels: np.ndarray
    sensor: str
    sequence: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype="U16"))
    window: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    axis: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    level: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        self.labels = np.asarray(self.labels, dtype=float)
        if self.sensor not in SENSORS:
            raise DataError(f"unknown sensor kind {self.sensor!r}")
        n = len(self.labels)
        if self.samples.ndim != 2 or len(self.samples) != n:
            raise DataError("samples must be (N, window_len) with one label per row")
        for name, dtype in (("sequence", "U16"), ("window", np.int64), ("axis", np.int64), ("level", np.int64)):
            arr = np.asarray(getattr(self, name))
            if arr.size == 0 and n:
                arr = np.zeros(n, dtype=dtype)
            setattr(self, name, arr.astype(dtype))
        if not np.all(np.isfinite(self.samples)):
            raise DataError("non-finite samples in dataset")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def window_len(self) -> int:
        return self.samples.shape[1]

    def subset(self, idx) -> "LabeledWindows":
        return LabeledWindows(self.samples[idx], self.labels[idx], self.sensor, self.sequence[idx],
                              self.window[idx], self.axis[idx], self.level[idx])

    @classmethod
    def concatenate(cls, parts) -> "LabeledWindows":
        parts = list(parts)
        if not parts:
            raise DataError("nothing to concatenate")
        sensor = parts[0].sensor
        if any(p.sensor != sensor for p in parts):
            raise DataError("cannot mix sensor kinds in one dataset")
        cat = lambda name: np.concatenate([getattr(p, name) for p in parts])  # noqa: E731
        return cls(cat("samples"), cat("labels"), sensor, cat("sequence"), cat("window"),
                   cat("axis"), cat("level"))


def parse_euroc_imu_csv(path: str, source_id: str | None = None) -> ImuSeries:
    """Read ``timestamp[ns], w_x, w_y, w_z, a_x, a_y, a_z`` rows."""
    if not os.path.exists(path):
        raise DataError(f"no such file: {path}")
    ts, rows = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) != 7:
                raise DataError(f"{path}:{lineno}: expected 7 fields, got {len(parts)}")
            try:
                ts.append(int(parts[0]))
                rows.append([float(x) for x in parts[1:]])
            except ValueError as exc:
                if lineno == 1:
                    continue  # header without leading '#'
                raise DataError(f"{path}:{lineno}: {exc}") from None
    if not ts:
        raise DataError(f"{path}: no samples")
    ts = np.array(ts, dtype=np.int64)
    bad = np.flatnonzero(np.diff(ts) <= 0)
    if bad.size:
        raise DataError(f"{path}: timestamps not increasing at data row {bad[0] + 2}")
    data = np.array(rows)
    t = ts * 1e-9
    rate = 1.0 / np.median(np.diff(t)) if len(t) > 1 else 200.0
    return ImuSeries(t=t, f=data[:, 3:6], w=data[:, 0:3], nominal_rate=float(rate),
                     source_id=source_id or os.path.basename(os.path.dirname(os.path.dirname(path))))


@dataclass
class EurocGroundTruth:
    t: np.ndarray
    p: np.ndarray
    q: np.ndarray
    v: np.ndarray
    bw: np.ndarray
    bf: np.ndarray


def parse_euroc_groundtruth_csv(path: str) -> EurocGroundTruth:
    try:
        raw = np.loadtxt(path, delimiter=",", comments="#", dtype=float)
    except (OSError, ValueError) as exc:
        raise DataError(f"{path}: {exc}") from None
    raw = np.atleast_2d(raw)
    if raw.shape[1] < 17:
        raise DataError(f"{path}: expected 17 columns, got {raw.shape[1]}")
    return EurocGroundTruth(t=raw[:, 0] * 1e-9, p=raw[:, 1:4], q=raw[:, 4:8], v=raw[:, 8:11],
                            bw=raw[:, 11:14], bf=raw[:, 14:17])


def savitzky_golay(series: ImuSeries, window_len: int = 21, poly_order: int = 3) -> ImuSeries:
    """Per-axis Savitzky-Golay smoothing with mirror padding at the ends."""
    if window_len < 1 or window_len % 2 == 0:
        raise DataError(f"window_len must be a positive odd integer, got {window_len}")
    if not 0 <= poly_order < window_len:
        raise DataError(f"poly_order must be in [0, window_len), got {poly_order}")
    if len(series) < window_len:
        raise DataError(f"series of {len(series)} samples is shorter than the filter window")
    smooth = lambda x: savgol_filter(x, window_len, poly_order, axis=0, mode="mirror")  # noqa: E731
    return ImuSeries(series.t.copy(), smooth(series.f), smooth(series.w), series.nominal_rate,
                     series.source_id)


def _rng_for(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng([seed, zlib.crc32(name.encode())])


def build_training_set(series: ImuSeries, grid_f=ACCEL_GRID, grid_w=GYRO_GRID, window_len: int = 200,
                       seed: int = 0, smooth: tuple | None = (21, 3)):
    """Labelled windows for both sensors of one sequence.

    Returns ``{"accel": LabeledWindows, "gyro": LabeledWindows}``. Windows do
    not overlap; every (window, level) pair yields one example per axis, with
    the same level injected on all three axes. Ordering is window, level, axis.
    """
    if len(grid_f) == 0 or len(grid_w) == 0:
        raise DataError("noise grids must not be empty")
    if len(series) <= window_len:
        raise DataError(f"series {series.source_id!r} has {len(series)} samples, need > {window_len}")
    if any(s < 0 for s in grid_f) or any(s < 0 for s in grid_w):
        raise DataError("noise levels must be non-negative")
    clean = savitzky_golay(series, *smooth) if smooth else series
    n_win = len(series) // window_len
    rng = _rng_for(seed, series.source_id)
    out = {}
    for sensor, data, grid in (("accel", clean.f, grid_f), ("gyro", clean.w, grid_w)):
        windows = data[: n_win * window_len].reshape(n_win, window_len, 3).transpose(0, 2, 1)
        n_lv = len(grid)
        noise = rng.standard_normal((n_win, n_lv, 3, window_len))
        sig = np.asarray(grid, dtype=float)
        noisy = windows[:, None, :, :] + noise * sig[None, :, None, None]
        shape = (n_win, n_lv, 3)
        out[sensor] = LabeledWindows(
            samples=noisy.reshape(-1, window_len),
            labels=np.broadcast_to(sig[None, :, None], shape).reshape(-1),
            sensor=sensor,
            sequence=np.full(np.prod(shape), series.source_id, dtype="U16"),
            window=np.broadcast_to(np.arange(n_win)[:, None, None], shape).reshape(-1),
            axis=np.broadcast_to(np.arange(3)[None, None, :], shape).reshape(-1),
            level=np.broadcast_to(np.arange(n_lv)[None, :, None], shape).reshape(-1),
        )
    return out


def find_sequence(root: str, name: str) -> str:
    """Path of ``imu0/data.csv`` for a short name (``MH01``) or an EuRoC directory name."""
    candidates = [name, EUROC_SEQUENCES.get(name, name)]
    for cand in candidates:
        for path in (os.path.join(root, cand, "mav0", "imu0", "data.csv"),
                     os.path.join(root, cand, "imu0", "data.csv")):
            if os.path.exists(path):
                return path
    prefix = EUROC_SEQUENCES.get(name, name)[:5]
    hits = sorted(glob.glob(os.path.join(root, prefix + "*", "mav0", "imu0", "data.csv")))
    if hits:
        return hits[0]
    raise DataError(f"sequence {name!r} not found under {root}")


def build_split(manifest: DatasetManifest, root: str, grid_f=ACCEL_GRID, grid_w=GYRO_GRID,
                window_len: int = 200, seed: int = 0, smooth: tuple | None = (21, 3)):
    """Train/test datasets split by whole sequence.

    Returns ``(train, test)``, each ``{"accel": ..., "gyro": ...}`` or ``None``
    for an empty side.
    """
    paths = {}
    for name in manifest.train + manifest.test:
        paths[name] = find_sequence(root, name)

    def assemble(names):
        if not names:
            return None
        parts = {"accel": [], "gyro": []}
        for name in sorted(names):
            series = parse_euroc_imu_csv(paths[name], source_id=name)
            sets = build_training_set(series, grid_f, grid_w, window_len, seed, smooth)
            for k in parts:
                parts[k].append(sets[k])
        return {k: LabeledWindows.concatenate(v) for k, v in parts.items()}

    return assemble(manifest.train), assemble(manifest.test)


def save_dataset(path: str, data: LabeledWindows) -> None:
    np.savez(path, format_version=np.array(DATASET_FORMAT_VERSION), sensor=np.array(data.sensor),
             samples=data.samples, labels=data.labels, sequence=data.sequence, window=data.window,
             axis=data.axis, level=data.level)


def load_dataset(path: str) -> LabeledWindows:
    try:
        with np.load(path, allow_pickle=False) as z:
            version = int(z["format_version"])
            if version != DATASET_FORMAT_VERSION:
                raise DataError(f"{path}: dataset format version {version}, expected {DATASET_FORMAT_VERSION}")
            return LabeledWindows(z["samples"], z["labels"], str(z["sensor"]), z["sequence"],
                                  z["window"], z["axis"], z["level"])
    except DataError:
        raise
    except Exception as exc:  # zipfile/EOF/key errors on damaged files
        raise DataError(f"{path}: unreadable dataset ({type(exc).__name__}: {exc})") from None
