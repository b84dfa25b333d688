import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=50, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def smooth_image(h, w, channels=3, seed=0):
    """Band-limited random image in (0, 1)."""
    r = np.random.default_rng(seed)
    y, x = np.mgrid[0:h, 0:w].astype(float)
    img = np.full((h, w, channels), 0.5)
    for _ in range(4):
        kx, ky = r.uniform(0.2, 0.6, 2) * r.choice([-1, 1], 2)
        ph = r.uniform(0, 2 * np.pi, channels)
        img += 0.1 * np.sin(kx * x[..., None] + ky * y[..., None] + ph)
    return img


ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request):
    """Record one acceptance line; the terminal summary lists them all."""

    def record(tag, ok, detail):
        line = f"{tag} {'PASS' if ok else 'FAIL'}: {detail}"
        request.config.stash.setdefault(ACCEPTANCE, {})[tag] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, {})
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for tag in sorted(lines, key=lambda t: int(t[1:])):
            terminalreporter.write_line(lines[tag])
