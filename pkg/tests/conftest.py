import numpy as np
import pytest

from sigmacough.convnet import loss_and_gradients


def finite_difference_check(params, batch, rng, n_probe=12, eps=1e-5):
    """Worst relative error between analytic and central-difference gradients.

    ``n_probe`` entries are sampled per tensor; ``None`` checks every entry.
    """
    _, grads = loss_and_gradients(params, batch)
    named, gnamed = params.named_tensors(), grads.named_tensors()
    worst = 0.0
    for name, tensor in named.items():
        flat, gflat = tensor.reshape(-1), gnamed[name].reshape(-1)
        if n_probe is None or n_probe >= flat.size:
            picks = range(flat.size)
        else:
            picks = rng.choice(flat.size, size=n_probe, replace=False)
        for i in picks:
            orig = flat[i]
            flat[i] = orig + eps
            up, _ = loss_and_gradients(params, batch)
            flat[i] = orig - eps
            down, _ = loss_and_gradients(params, batch)
            flat[i] = orig
            fd = (up - down) / (2 * eps)
            a = gflat[i]
            worst = max(worst, abs(a - fd) / max(abs(a), abs(fd), 1e-6))
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance reporting ------------------------------------------------------------

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): numbered acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    ok = _criteria.get(number, (title, True))[1]
    if rep.failed or (rep.when == "call" and rep.skipped):
        ok = False
    _criteria[number] = (title, ok)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, ok = _criteria[number]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  [{number:2d}] {title}")
