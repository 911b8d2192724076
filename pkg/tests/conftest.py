import random

import pytest

from dhlab.chart_algebra import Chart


@pytest.fixture
def rng():
    return random.Random(12345)


@pytest.fixture
def chart_p5_n2():
    return Chart(5, 2, 1, 1)
