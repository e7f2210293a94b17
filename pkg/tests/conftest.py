import logging

import numpy as np
import pytest

logging.getLogger("reefsim.encoder").setLevel(logging.ERROR)


@pytest.fixture(scope="session")
def encoder():
    """One backbone for the whole session; tests must not mutate it."""
    from reefsim.encoder import load_backbone

    return load_backbone("pretrained")


def make_rgb(h, w, seed=0):
    rng = np.random.default_rng(seed)
    return rng.integers(0, 256, (h, w, 3), dtype=np.uint8)


def checkerboard(h, w, cell=16, lo=30, hi=220):
    yy, xx = np.mgrid[0:h, 0:w]
    board = (((yy // cell) + (xx // cell)) % 2) * (hi - lo) + lo
    return np.repeat(board[:, :, None], 3, axis=2).astype(np.uint8)
