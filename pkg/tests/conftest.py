import sys

import numpy as np
import pytest

from nwrap.frame_io import FrameYUV420


def random_frame(rng, h, w, depth=8):
    m = (1 << depth) - 1
    return FrameYUV420(rng.integers(0, m + 1, (h, w)).astype(np.uint16),
                       rng.integers(0, m + 1, (h // 2, w // 2)).astype(np.uint16),
                       rng.integers(0, m + 1, (h // 2, w // 2)).astype(np.uint16), depth)


def natural_frame(h=128, w=128, depth=8):
    from skimage import data
    from nwrap.frame_io import requantize, rgb_to_yuv420
    f = rgb_to_yuv420(data.astronaut()[100:100 + h, 150:150 + w])
    return requantize(f, depth)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def desk_corpus(tmp_path_factory):
    from nwrap.corpus import make_desk_corpus
    root = tmp_path_factory.mktemp("desk")
    make_desk_corpus(root, 20, 160, seed=3)
    return root


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.LINES:
        terminalreporter.section("acceptance criteria")
        for line in mod.LINES:
            terminalreporter.write_line(line)
