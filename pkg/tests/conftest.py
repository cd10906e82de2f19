import logging
import time
import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ttc.dataset import DuffingConfig, LabeledDataset, TimeSeries, generate_duffing_dataset

settings.register_profile(
    "ttc", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("ttc")

SUITE_BUDGET_S = 600.0
_SESSION_START = time.perf_counter()
# (criterion, verdict, detail) rows filled in by the acceptance tests
ACCEPTANCE: list[tuple[str, str, str]] = []


def record(criterion: str, ok: bool | None, detail: str) -> None:
    verdict = "SKIP" if ok is None else ("PASS" if ok else "FAIL")
    ACCEPTANCE.append((criterion, verdict, detail))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    elapsed = time.perf_counter() - _SESSION_START
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    failed = len(tr.stats.get("failed", [])) + len(tr.stats.get("error", []))
    passed = len(tr.stats.get("passed", []))
    tr.section("acceptance criteria")
    for criterion, verdict, detail in sorted(ACCEPTANCE, key=lambda r: r[0]):
        tr.write_line(f"{verdict} {criterion}: {detail}")
    ok = elapsed < SUITE_BUDGET_S and failed == 0
    tr.write_line(
        f"{'PASS' if ok else 'FAIL'} 7 property suites and runtime: {passed} passed, {failed} failed, "
        f"{elapsed:.0f} s (budget {SUITE_BUDGET_S:.0f} s)"
    )


@pytest.fixture(autouse=True)
def _quiet():
    logging.getLogger("ttc").setLevel(logging.ERROR)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        yield
    logging.getLogger("ttc").setLevel(logging.NOTSET)


@pytest.fixture(scope="session")
def duffing_small():
    """10 healthy + 10 faulty oscillators at 20 dB."""
    return generate_duffing_dataset(DuffingConfig(samples_per_class=10, snr_db=20.0, seed=7))


@pytest.fixture(scope="session")
def duffing_clean_small():
    return generate_duffing_dataset(DuffingConfig(samples_per_class=10, seed=7))


@pytest.fixture(scope="session")
def duffing_desk():
    """Desk-scale Duffing datasets (100 units per class, seed 0) keyed by SNR, built on first use."""
    cache = {}

    def get(snr):
        if snr not in cache:
            cache[snr] = generate_duffing_dataset(DuffingConfig(samples_per_class=100, snr_db=snr, seed=0))
        return cache[snr]

    return get


def make_dataset(n_per_class=6, T=60, M=3, shift=1.5, seed=0, lifespans=False):
    """Gaussian toy fleet; class 1 units are shifted on the first sensor."""
    rng = np.random.default_rng(seed)
    series, labels = [], []
    for i in range(2 * n_per_class):
        y = int(i >= n_per_class)
        X = rng.standard_normal((T, M))
        X[:, 0] += shift * y
        series.append(TimeSeries(f"u{i:03d}", X, tuple(f"s{j}" for j in range(M))))
        labels.append(y)
    meta = {"lifespans": [T + 10 * i for i in range(2 * n_per_class)]} if lifespans else {}
    return LabeledDataset(tuple(series), np.array(labels), meta)


def markov_chain(order, q, n, seed):
    """Sample a chain whose next symbol depends on the previous ``order`` symbols."""
    rng = np.random.default_rng(seed)
    n_ctx = q**order
    cum = np.cumsum(rng.dirichlet(np.full(q, 0.3), size=n_ctx), axis=1)
    out = np.empty(n, dtype=np.int64)
    out[:order] = rng.integers(q, size=order)
    u = rng.random(n)
    ctx = 0
    for i in range(order):
        ctx = ctx * q + out[i]
    for i in range(order, n):
        out[i] = min(int(np.searchsorted(cum[ctx], u[i] * cum[ctx, -1], side="right")), q - 1)
        ctx = (ctx * q + out[i]) % n_ctx
    return out


@pytest.fixture
def toy():
    return make_dataset()
