import numpy as np
import pytest

from clusterlab.metric_symbols import build_symbols, make_metric


@pytest.fixture(scope="session")
def flat64():
    return build_symbols(make_metric("flat", 64, 64), 64)


@pytest.fixture(scope="session")
def sawtooth64():
    return build_symbols(make_metric("sawtooth", 64, 64), 64)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def band_limited(rng, n, band, period=1.0):
    """Random centered Fourier coefficients supported in |xi| <= band."""
    k = np.arange(-(n // 2), n - n // 2)
    xi = 2 * np.pi * k / period
    c = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) * (np.abs(xi) <= band)
    return c / np.sqrt(period * np.sum(np.abs(c) ** 2))


ACCEPTANCE = []


def record_criterion(number, title, passed, detail):
    """Store a verdict for the end-of-run summary and print it for -s runs."""
    line = f"criterion {number} {'PASS' if passed else 'FAIL'}: {title} ({detail})"
    ACCEPTANCE.append((number, line))
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
