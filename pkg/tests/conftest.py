import numpy as np
import pytest

from gsurf.core.types import Camera, GaussianSet, normalize_quaternions


def random_scene(seed: int, n: int = 5, size: int = 8):
    """A few disks in front of a small camera, all of them touching the image."""
    rng = np.random.default_rng(seed)
    cam = Camera.look_at((0.3, -0.2, 3.0), (0.0, 0.0, 0.0), up=(0.0, 1.0, 0.0), width=size, height=size,
                         fx=1.6 * size, fy=1.5 * size)
    centroids = rng.uniform(-0.4, 0.4, (n, 3))
    q = normalize_quaternions(np.column_stack([np.full(n, 2.0), rng.normal(0, 0.6, (n, 3))]))
    log_scales = np.log(rng.uniform(0.25, 0.5, (n, 2)))
    logits = rng.uniform(-0.5, 1.5, n)
    g = GaussianSet(centroids, q, log_scales, logits, rng.uniform(0, 1, (n, 3)))
    colors = rng.uniform(0.1, 1.0, (n, 3))
    return cam, g, colors


@pytest.fixture
def scene5():
    return random_scene(0)


ACCEPTANCE = {}  # criterion number -> (status, detail)


@pytest.fixture
def acceptance():
    def record(number: int, ok, detail: str):
        status = "SKIP" if ok is None else ("PASS" if ok else "FAIL")
        ACCEPTANCE[number] = (status, detail)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        status, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {status}  {detail}")
