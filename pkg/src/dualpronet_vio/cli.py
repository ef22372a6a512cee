"""Command line driver.

Every subcommand reads a key-value config file (``--config``) with
``--set key=value`` overrides. Failures print one JSON line on stderr
(``{"error": <class>, "kind": ..., "exit_code": ..., "message": ...}``) and
exit with the class's code; success exits 0.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from .config import dump_config, load_config
from .errors import ConfigError, DataError, VioError

log = logging.getLogger("dualpronet_vio")

TARGET_RMSE = {"accel": 0.0602, "gyro": 0.0037}
UNITS = {"accel": "m/s^2", "gyro": "rad/s"}


def _setup(cfg: dict, command: str) -> str:
    logging.basicConfig(level=getattr(logging, cfg["log_level"]), format="%(levelname)s %(name)s: %(message)s")
    out = cfg["out_dir"]
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, f"{command}.config.txt"), "w") as fh:
        fh.write(dump_config(cfg))
    return out


def cmd_prep(cfg: dict) -> int:
    from .data import DatasetManifest, build_split, save_dataset
    from .sim import synthesize_euroc_standins

    out = _setup(cfg, "prep")
    manifest = DatasetManifest(cfg["train_sequences"], cfg["test_sequences"])
    root = cfg["euroc_root"]
    note = f"EuRoC recordings from {root}"
    if root is None or cfg["synthesize"]:
        root = os.path.join(out, "euroc_standins")
        synthesize_euroc_standins(root, manifest.train + manifest.test, cfg["seed"],
                                  duration_scale=cfg["duration_scale"])
        note = f"synthetic stand-ins for the EuRoC sequences under {root} (real recordings not used)"
    elif not os.path.isdir(root):
        raise DataError(f"euroc_root {root} is not a directory")
    smooth = (cfg["sg_window"], cfg["sg_order"]) if cfg["smooth"] else None
    train, test = build_split(manifest, root, window_len=cfg["window_len"], seed=cfg["seed"], smooth=smooth)
    rows = []
    for split, sets in (("train", train), ("test", test)):
        for sensor, data in (sets or {}).items():
            path = os.path.join(out, f"{split}_{sensor}.npz")
            save_dataset(path, data)
            rows.append((split, sensor, len(data), os.path.basename(path)))
    with open(os.path.join(out, "dataset_manifest.tsv"), "w", newline="") as fh:
        fh.write(f"# source: {note}\n")
        fh.write(f"# train sequences: {', '.join(manifest.train)}\n# test sequences: {', '.join(manifest.test)}\n")
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["split", "sensor", "windows", "file"])
        w.writerows(rows)
    print(f"prep: wrote {len(rows)} datasets to {out} ({note})")
    return 0


def cmd_train(cfg: dict) -> int:
    from .data import load_dataset
    from .plotting import plot_training
    from .pronet import save_model
    from .training import TrainConfig, train

    out = _setup(cfg, "train")
    ds_dir = cfg["dataset_dir"] or out
    model_dir = cfg["model_dir"] or out
    os.makedirs(model_dir, exist_ok=True)
    tc = TrainConfig(lr=cfg["lr"], batch_size=cfg["batch_size"], epochs=cfg["epochs"], seed=cfg["seed"],
                     holdout=cfg["holdout"], dtype=cfg["dtype"])
    for sensor in cfg["sensors"]:
        if sensor not in TARGET_RMSE:
            raise ConfigError(f"unknown sensor {sensor!r}")
        data = load_dataset(os.path.join(ds_dir, f"train_{sensor}.npz"))
        model, hist = train(data, config=tc)
        save_model(model, os.path.join(model_dir, f"{sensor}.npz"))
        with open(os.path.join(out, f"train_{sensor}.tsv"), "w", newline="") as fh:
            w = csv.writer(fh, delimiter="\t", lineterminator="\n")
            w.writerow(["epoch", "train_mse", "heldout_mse"])
            for e, (a, b) in enumerate(zip(hist.train_loss, hist.val_loss)):
                w.writerow([e, f"{a:.6e}", f"{b:.6e}"])
        plot_training(hist, os.path.join(out, f"train_{sensor}.png"), f"{sensor} regressor")
        print(f"train: {sensor} best epoch {hist.best_epoch} held-out mse {model.meta['best_val_mse']:.3e}")
    return 0


def cmd_eval_net(cfg: dict) -> int:
    from .data import load_dataset
    from .metrics import rmse
    from .plotting import plot_predictions
    from .pronet import load_model
    from .training import predict_dataset

    out = _setup(cfg, "eval-net")
    ds_dir = cfg["dataset_dir"] or out
    model_dir = cfg["model_dir"] or out
    path = os.path.join(out, "eval_net.tsv")
    with open(path, "w", newline="") as fh:
        fh.write("# rmse over all test windows of the floored network output against the injected sigma\n")
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["sensor", "level", "windows", "rmse", "unit", "target", "status"])
        for sensor in cfg["sensors"]:
            data = load_dataset(os.path.join(ds_dir, f"test_{sensor}.npz"))
            model = load_model(os.path.join(model_dir, f"{sensor}.npz"), sensor)
            pred = predict_dataset(model, data)
            total = rmse(pred, data.labels)
            ok = "pass" if total <= TARGET_RMSE[sensor] else "fail"
            w.writerow([sensor, "all", len(data), f"{total:.6f}", UNITS[sensor], TARGET_RMSE[sensor], ok])
            for lv in np.unique(data.labels):
                m = data.labels == lv
                w.writerow([sensor, f"{lv:g}", int(m.sum()), f"{rmse(pred[m], data.labels[m]):.6f}",
                            UNITS[sensor], "", ""])
            plot_predictions(data.labels, pred, os.path.join(out, f"eval_{sensor}.png"), UNITS[sensor],
                             f"{sensor} regressor, test split")
            print(f"eval-net: {sensor} rmse {total:.6f} {UNITS[sensor]} (target {TARGET_RMSE[sensor]}): {ok}")
    return 0


def _sim_config(cfg: dict, seed: int):
    from .sim import SimConfig

    keys = ("duration", "aggressiveness", "landmarks", "box", "pixel_noise", "outlier_rate", "schedule",
            "sigma_f", "sigma_w", "segment_min", "segment_max")
    return SimConfig(seed=seed, **{k: cfg[k] for k in keys})


def cmd_sim(cfg: dict) -> int:
    from .sim import simulate_world, write_euroc

    out = _setup(cfg, "sim")
    world = simulate_world(_sim_config(cfg, cfg["seed"]))
    name = f"sim_seed{cfg['seed']}"
    base = write_euroc(out, name, world.imu.noisy, world.reference, world.schedule.bf, world.schedule.bw)
    with open(os.path.join(base, "noise_schedule.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t_start", "t_end", "sigma_f", "sigma_w"])
        sch = world.schedule
        for i in range(len(sch.sigma_f)):
            w.writerow([f"{sch.boundaries[i]:.6f}", f"{sch.boundaries[i + 1]:.6f}",
                        f"{sch.sigma_f[i, 0]:g}", f"{sch.sigma_w[i, 0]:g}"])
    ids, frame, bearings, pixels, outl = [], [], [], [], []
    for fr in world.frames:
        ids.append(fr.ids)
        frame.append(np.full(len(fr.ids), fr.imu_index))
        bearings.append(fr.bearings)
        pixels.append(fr.pixels)
        outl.append(fr.outlier)
    np.savez(os.path.join(base, "features.npz"), imu_index=np.concatenate(frame), landmark_id=np.concatenate(ids),
             bearing=np.concatenate(bearings), pixel=np.concatenate(pixels), outlier=np.concatenate(outl),
             landmarks=world.landmarks, r_bc=world.r_bc, p_bc=world.p_bc)
    print(f"sim: wrote {len(world.imu.noisy)} IMU samples and {len(world.frames)} camera frames to {base}")
    return 0


def cmd_run(cfg: dict) -> int:
    from .estimator import EstimatorConfig, SolverConfig
    from .experiment import ExperimentConfig, run_experiment, summarize
    from .pipeline import RunConfig

    out = _setup(cfg, "run")
    model_dir = cfg["model_dir"] or out
    est = EstimatorConfig(window=cfg["window"], solver=SolverConfig(robust=cfg["robust"]))
    ec = ExperimentConfig(
        seeds=cfg["seeds"], sim=_sim_config(cfg, cfg["seed"]),
        run=RunConfig(keyframe_every=cfg["keyframe_every"], estimator=est),
        variants=cfg["variants"], accel_model=os.path.join(model_dir, "accel.npz"),
        gyro_model=os.path.join(model_dir, "gyro.npz"), out_dir=out, plots=cfg["plots"], jobs=cfg["jobs"])
    if "adaptive" in ec.variants:
        for p in (ec.accel_model, ec.gyro_model):
            if not os.path.exists(p):
                raise ConfigError(f"adaptive variant needs a trained model at {p}")
    report = run_experiment(ec)
    for r in report.records:
        print(f"run: seed {r.seed} {r.variant:8s} ate {r.ate:.4f} m  {r.status}")
    failed = [r for r in report.records if r.status != "ok"]
    if "adaptive" in ec.variants and len(ec.variants) > 1:
        s = summarize(report)
        print(f"run: adaptive <= best constant on {s['wins_vs_best']}/{s['seeds']} seeds, "
              f"mean improvement over base {100 * s['mean_improvement_vs_base']:.1f}%")
    if failed:
        raise VioError(f"{len(failed)} of {len(report.records)} runs failed; see {os.path.join(out, 'results.tsv')}")
    return 0


def cmd_ate(args, cfg: dict) -> int:
    from .metrics import Trajectory, associate, associate_and_align, ate, read_trajectory

    est, gt = read_trajectory(args.estimate), read_trajectory(args.groundtruth)
    if args.no_align:
        i, j = associate(est, gt, args.max_dt)
        if len(i) == 0:
            raise DataError("no timestamp pairs")
        value, n = ate(est.p[i], gt.p[j]), len(i)
    else:
        al = associate_and_align(est, gt, args.max_dt)
        value, n = ate(al.est, al.gt), len(al.gt)
    print(json.dumps({"ate_m": value, "pairs": n, "aligned": not args.no_align}))
    return 0


class _Parser(argparse.ArgumentParser):
    """Usage errors become ConfigError so they share the JSON error line."""

    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dualpronet-vio", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed_required=True):
        sp.add_argument("--config", "-c", help="key-value config file" + (" (must define seed)" if seed_required else ""))
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
        sp.add_argument("--out", help="shorthand for --set out_dir=...")
        return sp

    common(sub.add_parser("prep", help="build labelled train/test window datasets"))
    common(sub.add_parser("train", help="train the accelerometer and gyroscope regressors"))
    common(sub.add_parser("eval-net", help="test-split RMSE of trained regressors"), False)
    common(sub.add_parser("sim", help="write a synthetic world in EuRoC layout"))
    common(sub.add_parser("run", help="closed-loop runs: constant-noise baselines and adaptive"))
    a = common(sub.add_parser("ate", help="absolute trajectory error between two trajectory files"), False)
    a.add_argument("estimate", help="TUM trajectory")
    a.add_argument("groundtruth", help="TUM trajectory or EuRoC ground-truth CSV")
    a.add_argument("--no-align", action="store_true", help="skip SE(3) alignment")
    a.add_argument("--max-dt", type=float, default=0.01, help="association tolerance [s]")
    return p


def _emit_error(exc: BaseException, code: int) -> None:
    kind = getattr(exc, "kind", "internal")
    msg = str(exc) or type(exc).__name__
    print(json.dumps({"error": type(exc).__name__, "kind": kind, "exit_code": code, "message": msg}), file=sys.stderr)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        try:
            args = parser.parse_args(argv)
        except SystemExit as exc:  # --help
            return int(exc.code or 0)
        overrides = list(args.set)
        if args.out:
            overrides.append(f"out_dir={args.out}")
        needs_seed = args.command in ("prep", "train", "sim", "run")
        cfg = load_config(args.config, overrides, require_seed=needs_seed)
        if args.command == "ate":
            return cmd_ate(args, cfg)
        return {"prep": cmd_prep, "train": cmd_train, "eval-net": cmd_eval_net, "sim": cmd_sim,
                "run": cmd_run}[args.command](cfg)
    except VioError as exc:
        _emit_error(exc, exc.exit_code)
        return exc.exit_code
    except KeyboardInterrupt as exc:
        _emit_error(exc, 130)
        return 130
    except Exception as exc:  # noqa: BLE001
        log.debug("unexpected failure", exc_info=True)
        _emit_error(exc, 1)
        return 1


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
