import json
import os

import pytest
from hypothesis import given
from hypothesis import strategies as st

from dualpronet_vio.cli import main
from dualpronet_vio.config import SCHEMA, dump_config, load_config, parse_text
from dualpronet_vio.errors import ConfigError


def write_cfg(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


# ---- config format

def test_config_parsing(tmp_path):
    path = write_cfg(tmp_path, """
# experiment
seed = 7
; another comment style
seeds = 0-3, 9
variants = half, adaptive   # inline comment
plots = no
duration = 12.5
""")
    cfg = load_config(path)
    assert cfg["seed"] == 7 and cfg["seeds"] == (0, 1, 2, 3, 9)
    assert cfg["variants"] == ("half", "adaptive") and cfg["plots"] is False and cfg["duration"] == 12.5
    assert cfg["window"] == 10  # default


def test_seeds_default_to_seed(tmp_path):
    assert load_config(write_cfg(tmp_path, "seed = 3\n"))["seeds"] == (3,)


def test_overrides_win(tmp_path):
    cfg = load_config(write_cfg(tmp_path, "seed = 1\nwindow = 5\n"), ["window=7", "robust = l2"])
    assert cfg["window"] == 7 and cfg["robust"] == "l2"


@pytest.mark.parametrize("text, match", [
    ("window = 4\n", "mandatory"),
    ("seed = 1\nwindw = 4\n", "unknown config key 'windw'"),
    ("seed = 1\nwindow = four\n", "bad value for 'window'"),
    ("seed = 1\nrobust = cauchy\n", "robust must be one of"),
    ("[run]\nseed = 1\n", "section headers"),
    ("seed = 1\nseed = 2\n", "seed"),
    ("seed = 1\nplots = maybe\n", "plots"),
])
def test_config_errors(tmp_path, text, match):
    with pytest.raises(ConfigError, match=match):
        load_config(write_cfg(tmp_path, text))


def test_missing_file_and_bad_override(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(str(tmp_path / "absent.cfg"))
    with pytest.raises(ConfigError, match="key=value"):
        load_config(write_cfg(tmp_path, "seed = 1\n"), ["window"])


def test_seed_optional_when_not_required():
    cfg = load_config(None, [], require_seed=False)
    assert cfg["seed"] is None and cfg["seeds"] is None


@given(st.integers(0, 10 ** 6), st.integers(1, 50), st.sampled_from(["huber", "l2"]),
       st.lists(st.sampled_from(["half", "base", "double", "adaptive"]), min_size=1, max_size=4, unique=True),
       st.floats(0.1, 100, allow_nan=False))
def test_dump_round_trips(seed, window, robust, variants, duration):
    cfg = load_config(None, [f"seed={seed}", f"window={window}", f"robust={robust}",
                             f"variants={','.join(variants)}", f"duration={duration!r}"], require_seed=False)
    again = {k: v for k, v in parse_text(dump_config(cfg)).items()}
    back = load_config(None, [f"{k}={v}" for k, v in again.items()], require_seed=False)
    assert back == cfg


def test_schema_has_seed_without_default():
    assert SCHEMA["seed"][1] is None


# ---- exit codes and error lines

def run_cli(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def error_line(err):
    line = [x for x in err.strip().splitlines() if x.startswith("{")][-1]
    return json.loads(line)


def test_missing_seed_is_config_error(capsys, tmp_path):
    code, _, err = run_cli(capsys, "sim", "--config", write_cfg(tmp_path, "duration = 3\n"))
    e = error_line(err)
    assert code == 2 and e == {"error": "ConfigError", "kind": "config", "exit_code": 2, "message": e["message"]}
    assert "seed" in e["message"]


def test_usage_error_is_json(capsys):
    code, _, err = run_cli(capsys, "frobnicate")
    assert code == 2 and error_line(err)["error"] == "ConfigError"


def test_missing_trajectory_is_data_error(capsys, tmp_path):
    code, _, err = run_cli(capsys, "ate", str(tmp_path / "a.tum"), str(tmp_path / "b.tum"))
    assert code == 3 and error_line(err)["kind"] == "data"


def test_missing_model_is_config_error(capsys, tmp_path):
    cfg = write_cfg(tmp_path, "seed = 1\nduration = 3\nvariants = adaptive\n")
    code, _, err = run_cli(capsys, "run", "-c", cfg, "--out", str(tmp_path / "o"),
                           "--set", f"model_dir={tmp_path / 'nomodels'}")
    assert code == 2 and "trained model" in error_line(err)["message"]


def test_help_exits_zero(capsys):
    assert main(["--help"]) == 0


# ---- end to end on a small scale

def test_prep_train_eval(capsys, tmp_path):
    out = str(tmp_path / "net")
    cfg = write_cfg(tmp_path, f"""seed = 0
out_dir = {out}
duration_scale = 0.03
train_sequences = MH01, V201
test_sequences = MH02
epochs = 1
""")
    code, stdout, _ = run_cli(capsys, "prep", "-c", cfg)
    assert code == 0 and "synthetic stand-ins" in stdout
    manifest = open(os.path.join(out, "dataset_manifest.tsv")).read()
    assert manifest.startswith("# source: synthetic stand-ins")
    assert run_cli(capsys, "train", "-c", cfg)[0] == 0
    for f in ("accel.npz", "gyro.npz", "train_accel.tsv", "train_gyro.png", "train.config.txt"):
        assert os.path.exists(os.path.join(out, f)), f
    code, stdout, _ = run_cli(capsys, "eval-net", "-c", cfg)
    assert code == 0 and "eval-net: gyro rmse" in stdout
    rows = [r.split("\t") for r in open(os.path.join(out, "eval_net.tsv")).read().splitlines()
            if not r.startswith("#")]
    assert rows[0] == ["sensor", "level", "windows", "rmse", "unit", "target", "status"]
    assert {r[0] for r in rows[1:]} == {"accel", "gyro"}
    assert sum(r[1] == "all" for r in rows) == 2
    assert os.path.exists(os.path.join(out, "eval_accel.png"))


def test_sim_run_ate(capsys, tmp_path):
    out = str(tmp_path / "vio")
    cfg = write_cfg(tmp_path, f"seed = 3\nout_dir = {out}\nduration = 6\nvariants = half, base\nplots = false\n")
    assert run_cli(capsys, "sim", "-c", cfg)[0] == 0
    gt_csv = os.path.join(out, "sim_seed3", "mav0", "state_groundtruth_estimate0", "data.csv")
    assert os.path.exists(gt_csv)
    assert os.path.exists(os.path.join(out, "sim_seed3", "mav0", "imu0", "data.csv"))
    code, stdout, _ = run_cli(capsys, "run", "-c", cfg)
    assert code == 0 and "seed 3 half" in stdout
    table = [r.split("\t") for r in open(os.path.join(out, "results.tsv")).read().splitlines()
             if not r.startswith("#")]
    reported = {r[1]: float(r[4]) for r in table[1:]}
    code, stdout, _ = run_cli(capsys, "ate", os.path.join(out, "traj_seed3_base.tum"),
                              os.path.join(out, "traj_seed3_groundtruth.tum"))
    assert code == 0
    # the TUM files carry 9 decimals, the table 6
    assert json.loads(stdout)["ate_m"] == pytest.approx(reported["base"], abs=2e-6)
    code, stdout, _ = run_cli(capsys, "ate", os.path.join(out, "traj_seed3_base.tum"), gt_csv)
    assert code == 0 and json.loads(stdout)["pairs"] == 13
