import numpy as np
import pytest

from calibfpa.aperture import generate_aperture, raster_schedule
from calibfpa.sysmat import build_block_diag


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def invertible_aperture(n=60, s=5, p=0.8, threshold=1e-5, max_seed=200):
    """First seed whose full-raster blocks are all comfortably invertible.

    Circular shifts of a random p=0.8 pattern often produce exactly singular
    m=s blocks; exact-recovery checks need a nonsingular system.
    """
    sched = raster_schedule(s * s)
    for seed in range(max_seed):
        ap = generate_aperture(n, n, s, s, p, seed=seed)
        if build_block_diag(sched, ap, s).min_singular_values().min() > threshold:
            return ap
    raise RuntimeError("no well-conditioned aperture found")


# -- trained desk-scale networks, shared by the acceptance and slow tests -----


@pytest.fixture(scope="session")
def desk_run():
    """64 scenes x 5 snapshots at r in [4.5, 5.5), 30 epochs."""
    import time

    from calibfpa.calib import train_calib
    from calibfpa.pipeline import PRESET_EPOCHS, gen_dataset, preset_config

    t0 = time.perf_counter()
    cfg = preset_config("desk")
    data = gen_dataset(cfg)
    res = train_calib(data["train"].calib_dataset(), data["val"].calib_dataset(), epochs=PRESET_EPOCHS["desk"], seed=0)
    return {"result": res, "data": data, "seconds": time.perf_counter() - t0}


@pytest.fixture(scope="session")
def fullrange_run():
    """Same budget with radii over all nine bins."""
    from calibfpa.calib import train_calib
    from calibfpa.pipeline import gen_dataset, preset_config

    cfg = preset_config("desk", r_min=1.5, r_max=10.5, n_test=0)
    data = gen_dataset(cfg)
    return train_calib(data["train"].calib_dataset(), data["val"].calib_dataset(), epochs=30, seed=0)


# -- one PASS/FAIL line per acceptance criterion ------------------------------

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, title = mark.args
    if rep.when == "setup" and not rep.passed:
        _CRITERIA[n] = (title, "FAIL" if rep.failed else "SKIP")
    elif rep.when == "call":
        _CRITERIA[n] = (title, "PASS" if rep.passed else "FAIL")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        title, status = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d} {status}  {title}")
