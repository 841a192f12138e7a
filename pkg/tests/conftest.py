from datetime import date, timedelta

import numpy as np
import pytest

from revol.market_data import OhlcBar, SyntheticSpec, generate_synthetic, make_windows


def flat_bars(closes, start=date(2020, 1, 1)):
    """Bars with open=high=low=close taken from a close series (weekday dates)."""
    bars = []
    d = start
    for c in closes:
        while d.weekday() >= 5:
            d += timedelta(days=1)
        bars.append(OhlcBar(d, c, c, c, c))
        d += timedelta(days=1)
    return bars


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def gbm_bars():
    spec = SyntheticSpec(regimes=((600, 0.0005, 0.015),), seed=42)
    return generate_synthetic(spec)


@pytest.fixture(scope="session")
def gbm_samples(gbm_bars):
    return make_windows(gbm_bars, w=16, symbol="GBM")
