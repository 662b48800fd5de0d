import numpy as np
import pytest

from mvrate import MvField


def make_random_field(rng, width=None, height=None, frames=None,
                      present_prob=0.6, mv_span=64):
    """Random MvField with the given (or random) geometry."""
    width = int(rng.integers(1, 13)) if width is None else width
    height = int(rng.integers(1, 13)) if height is None else height
    frames = int(rng.integers(1, 6)) if frames is None else frames
    shape = (frames, height, width)
    present = rng.random(shape) < present_prob
    dx = rng.integers(-mv_span, mv_span + 1, size=shape).astype(np.int16)
    dy = rng.integers(-mv_span, mv_span + 1, size=shape).astype(np.int16)
    return MvField(grid_width=width, grid_height=height,
                   present=present, dx=dx, dy=dy)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
