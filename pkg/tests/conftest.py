import os
from pathlib import Path

import numpy as np
import pytest

from filterdecode import data as io
from filterdecode import network as N
from filterdecode import trainer as Tr

ROOT = Path(__file__).resolve().parents[1]
MNIST_DIR = Path(os.environ.get("FILTERDECODE_MNIST", "/root/data/mnist"))
MODEL_PATH = Path(os.environ.get("FILTERDECODE_MODEL", ROOT / "artifacts" / "lenet.cdn"))


def mnist_available() -> bool:
    return all((MNIST_DIR / name).is_file() for files in io.MNIST_FILES.values() for name in files)


needs_mnist = pytest.mark.skipif(not mnist_available(), reason=f"MNIST not found in {MNIST_DIR} (set FILTERDECODE_MNIST)")


@pytest.fixture(scope="session")
def mnist():
    if not mnist_available():
        pytest.skip(f"MNIST not found in {MNIST_DIR}")
    return io.load_mnist(MNIST_DIR)


@pytest.fixture(scope="session")
def trained_lenet(mnist):
    """LeNet trained with the default config; cached on disk because training takes a while."""
    if not MODEL_PATH.is_file():
        train_set, test_set = mnist
        cfg = Tr.TrainConfig()
        net = N.lenet_architecture(np.random.default_rng(cfg.seed), cfg.init_std)
        MODEL_PATH.parent.mkdir(parents=True, exist_ok=True)
        result = Tr.train(net, train_set, cfg, test_data=test_set,
                          log_path=MODEL_PATH.with_name("train_log.csv"))
        N.save_model(result.net, MODEL_PATH)
    return N.load_model(MODEL_PATH)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_conv_net(rng, n_layers, size=None, max_channels=4, max_filter=5, bias=False,
                    dtype=np.float64):
    """A conv-only network with random shapes that chain; weights optionally float32-rounded."""
    size = size or int(rng.integers(2 * max_filter + 2, 17))
    channels = [int(rng.integers(1, max_channels + 1)) for _ in range(n_layers + 1)]
    layers = []
    extent = size
    for i in range(n_layers):
        room = extent - (n_layers - i - 1)
        h = int(rng.integers(1, min(max_filter, room) + 1))
        w = int(rng.integers(1, min(max_filter, room) + 1))
        weights = rng.standard_normal((channels[i + 1], h, w, channels[i])).astype(dtype).astype(np.float64)
        biases = rng.standard_normal(channels[i + 1]) if bias else None
        layers.append(N.conv(weights, biases))
        extent -= max(h, w) - 1
    return N.Network((size, size, channels[0]), layers)


# -- acceptance summary -----------------------------------------------------------
#
# Tests marked ``@pytest.mark.criterion(n, title)`` get one PASS/FAIL line each
# at the end of the run; ``record_property("detail", ...)`` adds the measured values.

_criteria: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or (report.when != "call" and not report.failed and not report.skipped):
        return
    number, title = marker.args
    detail = dict(item.user_properties).get("detail", "")
    if report.skipped:
        status, detail = "SKIP", str(report.longrepr[-1]) if isinstance(report.longrepr, tuple) else detail
    elif report.failed:
        status = "FAIL"
        if not detail and call.excinfo is not None:
            detail = call.excinfo.exconly().splitlines()[0][:160]
    else:
        status = "PASS"
    _criteria[number] = (status, title, detail)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        status, title, detail = _criteria[number]
        line = f"criterion {number} {status}: {title}"
        terminalreporter.write_line(line + (f" | {detail}" if detail else ""))
