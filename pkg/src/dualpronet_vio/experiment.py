"""Constant-Q baselines versus adaptive noise on seeded synthetic worlds."""
from __future__ import annotations

import csv
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import VioError
from .metrics import Trajectory, associate_and_align, ate, improvement, write_tum
from .pipeline import ConstantSigmas, NetworkSigmas, RunConfig, run_vio
from .pronet import load_model
from .sim import SimConfig, simulate_world

log = logging.getLogger(__name__)

# (name, sigma_f [m/s^2], sigma_w [rad/s])
BASELINES = (("half", 0.04, 0.002), ("base", 0.08, 0.004), ("double", 0.16, 0.008))

ALIGNMENT_NOTE = "positions aligned by closed-form SE(3) (rotation + translation, no scale); 10 ms association"


@dataclass
class ExperimentConfig:
    seeds: tuple = (0,)
    sim: SimConfig = field(default_factory=SimConfig)
    run: RunConfig = field(default_factory=RunConfig)
    variants: tuple = ("half", "base", "double", "adaptive")
    accel_model: str | None = None
    gyro_model: str | None = None
    out_dir: str | None = None
    plots: bool = True
    jobs: int = 1


@dataclass
class RunRecord:
    seed: int
    variant: str
    sigma_f: str
    sigma_w: str
    ate: float = float("nan")
    status: str = "ok"


@dataclass
class ExperimentReport:
    records: list
    traces: dict            # seed -> dict of arrays
    trajectories: dict      # (seed, variant) -> (est Trajectory, gt Trajectory)

    def ate_table(self) -> dict:
        """``{seed: {variant: ate}}`` for successful runs."""
        out: dict = {}
        for r in self.records:
            if r.status == "ok":
                out.setdefault(r.seed, {})[r.variant] = r.ate
        return out


def _source_for(variant: str, models):
    for name, sf, sw in BASELINES:
        if variant == name:
            return ConstantSigmas(sf, sw)
    if variant == "adaptive":
        if models is None:
            raise VioError("adaptive variant needs accel_model and gyro_model")
        return NetworkSigmas(*models)
    raise VioError(f"unknown variant {variant!r}")


def _run_seed(seed: int, cfg: ExperimentConfig):
    models, model_error = None, None
    if "adaptive" in cfg.variants:
        try:
            models = (load_model(cfg.accel_model, "accel"), load_model(cfg.gyro_model, "gyro"))
        except VioError as exc:
            model_error = exc
    sim_cfg = SimConfig(**{**cfg.sim.__dict__, "seed": seed})
    world = simulate_world(sim_cfg)
    records, trajs = [], {}
    trace = {"t": world.imu.noisy.t[:: cfg.run.keyframe_every],
             "true_f": world.imu.sigma_f[:: cfg.run.keyframe_every, 0],
             "true_w": world.imu.sigma_w[:: cfg.run.keyframe_every, 0]}
    for variant in cfg.variants:
        sf = sw = "adaptive"
        for name, f, w in BASELINES:
            if name == variant:
                sf, sw = f"{f:g}", f"{w:g}"
        rec = RunRecord(seed, variant, sf, sw)
        try:
            if variant == "adaptive" and model_error is not None:
                raise model_error
            res = run_vio(world, _source_for(variant, models), cfg.run)
            est = Trajectory(res.t, res.p, res.q)
            gt = Trajectory(res.t, res.gt_p, res.gt_q)
            al = associate_and_align(est, gt)
            rec.ate = ate(al.est, al.gt)
            trajs[variant] = (al.est, al.gt)
            if variant == "adaptive":
                trace["pred_t"] = res.sigma_t
                trace["pred_f"] = res.sigma_f
                trace["pred_w"] = res.sigma_w
        except (VioError, np.linalg.LinAlgError, FloatingPointError) as exc:
            rec.status = f"failed: {type(exc).__name__}: {exc}".replace("\t", " ").replace("\n", " ")
            log.error("seed %d variant %s failed: %s", seed, variant, exc)
        records.append(rec)
    return seed, records, trace, trajs


def run_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    """Run every variant on every seed; failures are recorded, not raised."""
    seeds = list(cfg.seeds)
    if cfg.jobs > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(_run_seed, seeds, [cfg] * len(seeds)))
    else:
        results = [_run_seed(s, cfg) for s in seeds]
    results.sort(key=lambda r: r[0])
    records, traces, trajs = [], {}, {}
    for seed, recs, trace, tr in results:
        records.extend(recs)
        traces[seed] = trace
        for variant, pair in tr.items():
            trajs[(seed, variant)] = pair
    report = ExperimentReport(records, traces, trajs)
    if cfg.out_dir:
        write_report(report, cfg)
    return report


def summarize(report: ExperimentReport) -> dict:
    """Adaptive-versus-baseline statistics used by the acceptance check."""
    table = report.ate_table()
    wins, gains, n = 0, [], 0
    for seed, row in sorted(table.items()):
        if "adaptive" not in row or not all(b in row for b, _, _ in BASELINES):
            continue
        n += 1
        best = min(row[b] for b, _, _ in BASELINES)
        wins += row["adaptive"] <= best
        gains.append(improvement(row["base"], row["adaptive"]))
    return {"seeds": n, "wins_vs_best": int(wins), "mean_improvement_vs_base": float(np.mean(gains)) if gains else float("nan"),
            "improvements": gains}


def write_report(report: ExperimentReport, cfg: ExperimentConfig) -> list:
    """Results TSV, sigma traces, TUM trajectories and figures under ``cfg.out_dir``."""
    out = cfg.out_dir
    os.makedirs(out, exist_ok=True)
    written = []
    table = report.ate_table()
    path = os.path.join(out, "results.tsv")
    with open(path, "w", newline="") as fh:
        fh.write(f"# {ALIGNMENT_NOTE}\n")
        fh.write("# improvement = (ate_base - ate_variant) / ate_base\n")
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["seed", "variant", "sigma_f", "sigma_w", "ate_m", "improvement_vs_base", "status"])
        for r in report.records:
            base = table.get(r.seed, {}).get("base")
            imp = improvement(base, r.ate) if base and r.status == "ok" else float("nan")
            w.writerow([r.seed, r.variant, r.sigma_f, r.sigma_w, f"{r.ate:.6f}", f"{imp:.4f}", r.status])
    written.append(path)
    s = summarize(report)
    path = os.path.join(out, "summary.tsv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["variant", "mean_ate_m", "runs"])
        for v in cfg.variants:
            vals = [row[v] for row in table.values() if v in row]
            w.writerow([v, f"{np.mean(vals):.6f}" if vals else "nan", len(vals)])
        w.writerow(["adaptive_wins_vs_best_constant", s["wins_vs_best"], s["seeds"]])
        w.writerow(["adaptive_mean_improvement_vs_base", f"{s['mean_improvement_vs_base']:.4f}", s["seeds"]])
    written.append(path)
    for seed, tr in sorted(report.traces.items()):
        path = os.path.join(out, f"sigma_trace_seed{seed}.csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "true_sigma_f", "true_sigma_w", "pred_sigma_f_x", "pred_sigma_f_y", "pred_sigma_f_z",
                        "pred_sigma_w_x", "pred_sigma_w_y", "pred_sigma_w_z"])
            pred = {}
            if "pred_t" in tr:
                for i, t in enumerate(tr["pred_t"]):
                    pred[round(float(t), 6)] = (tr["pred_f"][i], tr["pred_w"][i])
            for i, t in enumerate(tr["t"]):
                pf, pw = pred.get(round(float(t), 6), (np.full(3, np.nan), np.full(3, np.nan)))
                w.writerow([f"{t:.3f}", f"{tr['true_f'][i]:.6g}", f"{tr['true_w'][i]:.6g}",
                            *[f"{x:.6g}" for x in pf], *[f"{x:.6g}" for x in pw]])
        written.append(path)
    for (seed, variant), (est, gt) in sorted(report.trajectories.items()):
        path = os.path.join(out, f"traj_seed{seed}_{variant}.tum")
        write_tum(path, est)
        written.append(path)
        gpath = os.path.join(out, f"traj_seed{seed}_groundtruth.tum")
        if not os.path.exists(gpath):
            write_tum(gpath, gt)
            written.append(gpath)
    if cfg.plots:
        from .plotting import plot_sigma_trace, plot_trajectories

        for seed in sorted(report.traces):
            pairs = {v: report.trajectories[(seed, v)] for v in cfg.variants if (seed, v) in report.trajectories}
            if pairs:
                written.append(plot_trajectories(pairs, os.path.join(out, f"traj_seed{seed}.png"), f"seed {seed}"))
            written.append(plot_sigma_trace(report.traces[seed], os.path.join(out, f"sigma_seed{seed}.png"),
                                            f"seed {seed}"))
    return written
