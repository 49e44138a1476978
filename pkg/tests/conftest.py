import numpy as np
import pytest


def ramp_words(base=100, stride=7):
    return [(base + stride * i) & 0xFFFFFFFF for i in range(32)]


def ramp_block(base=100, stride=7):
    return b"".join(w.to_bytes(4, "little") for w in ramp_words(base, stride))


def random_block(rng):
    return rng.integers(0, 256, size=128, dtype=np.uint8).tobytes()


@pytest.fixture
def rng():
    return np.random.default_rng(0xB0DD7)
