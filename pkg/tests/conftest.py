import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from disan import autodiff as ad  # noqa: E402
from disan.disa import DisaBlockParams  # noqa: E402
from disan.attention import MultiDimParams  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def randomize(groups, rng, scale=1.0):
    """Overwrite every parameter (biases included) with N(0, scale^2) draws."""
    for g in groups:
        g.tensor.value[...] = rng.normal(scale=scale, size=g.tensor.value.shape)


def random_block(d_e, d_h, rng, scale=0.7):
    p = DisaBlockParams.init(d_e, d_h, rng)
    randomize(p.groups(), rng, scale)
    return p


def random_multidim(d, rng, with_query=False, scale=0.7, activation="elu"):
    p = MultiDimParams.init(d, rng, with_query=with_query, activation=activation)
    randomize(p.groups(), rng, scale)
    return p


def block_dict(p):
    return {g.name: g.tensor.value for g in p.groups()}


def leaf(rng, *shape):
    return ad.leaf(rng.normal(size=shape))


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    results = getattr(acceptance, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for number in sorted(results):
            terminalreporter.write_line(results[number])
