import numpy as np
import pytest

from xvaengine.cli_io import load_config, load_credit, load_portfolio, resolve
from xvaengine.credit import BANK, CreditSetup, EntityCredit
from xvaengine.instruments import NettingSet, Portfolio, Trade

TOY_CONFIG = "builtin:toy_config.json"


@pytest.fixture(scope="session")
def toy_config():
    return load_config(TOY_CONFIG)


@pytest.fixture(scope="session")
def toy_portfolio():
    return load_portfolio(resolve("builtin:toy_portfolio.csv"))


@pytest.fixture(scope="session")
def toy_credit():
    return load_credit(resolve("builtin:toy_credit.csv"))


@pytest.fixture(scope="session")
def toy_params(toy_config):
    return toy_config.model


def flat_credit(cp_spread_bps=100.0, bank_spread_bps=0.0, recovery=0.4, names=("A",), **setup):
    cps = {n: EntityCredit(n, (1.0,), (float(cp_spread_bps),), recovery) for n in names}
    return CreditSetup(cps, EntityCredit(BANK, (1.0,), (float(bank_spread_bps),), recovery), **setup)


def single_swap_book(kind="payer-swap", notional=1e4, maturity=5.0, set_id="A", cp="A", margin=None,
                     fixed_rate="par"):
    trade = Trade("t1", kind, notional, maturity, set_id, fixed_rate=fixed_rate)
    kwargs = {} if margin is None else {"margin": margin}
    return Portfolio((NettingSet(set_id, cp, (trade,), **kwargs),))


def assert_within(value, target, se, k=3.0):
    assert abs(value - target) <= k * se, f"{value} vs {target} (se {se})"


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = {}


def record_acceptance(number, ok, detail):
    """Store one acceptance outcome; the terminal summary prints them in order."""
    ACCEPTANCE[number] = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(ACCEPTANCE[number])
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
