"""Key-value run configuration.

File format: one ``key = value`` per line, ``#`` or ``;`` starts a comment,
blank lines are ignored. Lists are comma separated. ``seed`` must be present.
Command-line ``--set key=value`` overrides are applied after the file is read
and go through the same validation.
"""
from __future__ import annotations

import configparser

from .errors import ConfigError

_SECTION = "config"


def _as_bool(v: str) -> bool:
    s = v.strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _as_list(v: str) -> tuple:
    return tuple(x.strip() for x in v.split(",") if x.strip())


def _as_int_list(v: str) -> tuple:
    out = []
    for part in _as_list(v):
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    return tuple(out)


def _as_opt_str(v: str):
    return v.strip() or None


# key -> (parser, default); a default of ``None`` means "not set"
SCHEMA = {
    "seed": (int, None),
    "out_dir": (str, "out"),
    "log_level": (str, "INFO"),
    # prep
    "euroc_root": (_as_opt_str, None),
    "synthesize": (_as_bool, False),
    "duration_scale": (float, 1.0),
    "train_sequences": (_as_list, ("MH01", "MH03", "MH05", "V102", "V201", "V203")),
    "test_sequences": (_as_list, ("MH02", "MH04", "V101", "V103", "V202")),
    "window_len": (int, 200),
    "smooth": (_as_bool, True),
    "sg_window": (int, 21),
    "sg_order": (int, 3),
    # train / eval-net
    "dataset_dir": (_as_opt_str, None),
    "model_dir": (_as_opt_str, None),
    "sensors": (_as_list, ("accel", "gyro")),
    "epochs": (int, 50),
    "lr": (float, 1e-3),
    "batch_size": (int, 200),
    "holdout": (float, 0.1),
    "dtype": (str, "float32"),
    # sim
    "duration": (float, 30.0),
    "aggressiveness": (float, 1.0),
    "landmarks": (int, 300),
    "box": (float, 10.0),
    "pixel_noise": (float, 1.0),
    "outlier_rate": (float, 0.0),
    "schedule": (str, "random"),
    "sigma_f": (float, 0.08),
    "sigma_w": (float, 0.004),
    "segment_min": (float, 4.0),
    "segment_max": (float, 10.0),
    # run
    "seeds": (_as_int_list, None),
    "variants": (_as_list, ("half", "base", "double", "adaptive")),
    "window": (int, 10),
    "robust": (str, "huber"),
    "keyframe_every": (int, 100),
    "jobs": (int, 1),
    "plots": (_as_bool, True),
}

CHOICES = {
    "schedule": ("random", "constant"),
    "robust": ("huber", "l2"),
    "dtype": ("float32", "float64"),
    "log_level": ("DEBUG", "INFO", "WARNING", "ERROR"),
}


def _parse_value(key: str, raw: str):
    if key not in SCHEMA:
        raise ConfigError(f"unknown config key {key!r}")
    parser = SCHEMA[key][0]
    try:
        value = parser(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {exc}") from None
    if key in CHOICES and value not in CHOICES[key]:
        raise ConfigError(f"{key} must be one of {', '.join(CHOICES[key])}, got {value!r}")
    return value


def parse_text(text: str, source: str = "<config>") -> dict:
    """Raw ``{key: string}`` pairs from config text."""
    cp = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"),
                                   inline_comment_prefixes=("#",), delimiters=("=",))
    cp.optionxform = str
    try:
        cp.read_string(f"[{_SECTION}]\n" + text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}".replace("\n", " ")) from None
    if len(cp.sections()) != 1:
        raise ConfigError(f"{source}: section headers are not supported")
    return dict(cp[_SECTION])


def split_override(item: str):
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not key=value")
    key, value = item.split("=", 1)
    return key.strip(), value.strip()


def load_config(path: str | None, overrides=(), require_seed: bool = True) -> dict:
    """Defaults, then the file, then overrides; returns typed values for every key."""
    raw: dict = {}
    if path is not None:
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        raw = parse_text(text, path)
        if require_seed and "seed" not in raw:
            raise ConfigError(f"{path}: 'seed' is mandatory")
    elif require_seed:
        raise ConfigError("a config file with a 'seed' entry is required")
    for item in overrides:
        key, value = split_override(item)
        raw[key] = value
    cfg = {k: default for k, (_, default) in SCHEMA.items()}
    for key, value in raw.items():
        cfg[key] = _parse_value(key, value)
    if require_seed and cfg["seed"] is None:
        raise ConfigError("'seed' is mandatory")
    if cfg["seeds"] is None and cfg["seed"] is not None:
        cfg["seeds"] = (cfg["seed"],)
    return cfg


def dump_config(cfg: dict) -> str:
    """Round-trippable text for a typed config (written next to outputs)."""
    lines = []
    for key in SCHEMA:
        v = cfg.get(key)
        if v is None:
            continue
        if isinstance(v, bool):
            s = "true" if v else "false"
        elif isinstance(v, tuple):
            s = ", ".join(str(x) for x in v)
        else:
            s = str(v)
        lines.append(f"{key} = {s}")
    return "\n".join(lines) + "\n"
