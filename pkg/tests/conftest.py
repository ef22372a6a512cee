import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def unit_quats():
    """Hypothesis strategy for unit quaternions (scalar first)."""
    comp = st.floats(-1.0, 1.0, allow_nan=False)
    return st.tuples(comp, comp, comp, comp).filter(lambda v: np.linalg.norm(v) > 0.1).map(
        lambda v: np.array(v) / np.linalg.norm(v))


def vec3(bound=10.0):
    comp = st.floats(-bound, bound, allow_nan=False)
    return st.tuples(comp, comp, comp).map(np.array)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


TRAIN_EPOCHS = 50


def _source_digest() -> str:
    import hashlib
    import pathlib

    import dualpronet_vio

    root = pathlib.Path(dualpronet_vio.__file__).parent
    h = hashlib.sha256(str(TRAIN_EPOCHS).encode())
    for name in ("data.py", "pronet.py", "training.py", "sim.py", "preintegration.py", "geometry.py"):
        h.update((root / name).read_bytes())
    return h.hexdigest()[:16]


@pytest.fixture(scope="session")
def trained_models(request):
    """Accel and gyro regressors trained on synthetic EuRoC stand-ins.

    Training takes tens of minutes on one core, so the result is cached in
    pytest's cache directory under a digest of the sources it depends on;
    ``pytest --cache-clear`` forces a fresh run. Returns a dict with the
    models, their paths, the test split and wall-clock training seconds.
    """
    import os
    import time

    from dualpronet_vio.data import DatasetManifest, build_split
    from dualpronet_vio.pronet import load_model, save_model
    from dualpronet_vio.sim import synthesize_euroc_standins
    from dualpronet_vio.training import TrainConfig, train

    base = request.config.cache.mkdir("dualpronet_models")
    root = os.path.join(str(base), _source_digest())
    euroc = os.path.join(root, "euroc")
    if not os.path.isdir(euroc):
        synthesize_euroc_standins(euroc, seed=0)
    train_set, test_set = build_split(DatasetManifest(), euroc, seed=0)
    out = {"test": test_set, "seconds": {}, "paths": {}, "cached": {}}
    for sensor in ("accel", "gyro"):
        path = os.path.join(root, f"{sensor}.npz")
        stamp = path + ".seconds"
        out["cached"][sensor] = os.path.exists(path)
        if not os.path.exists(path):
            t0 = time.time()
            model, _ = train(train_set[sensor], config=TrainConfig(epochs=TRAIN_EPOCHS, seed=0))
            with open(stamp, "w") as fh:
                fh.write(f"{time.time() - t0:.1f}\n")
            save_model(model, path)
        out["seconds"][sensor] = float(open(stamp).read())
        out["paths"][sensor] = path
        out[sensor] = load_model(path, sensor)
    return out


# one line per acceptance criterion, echoed after the run whatever -s/-q say
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
