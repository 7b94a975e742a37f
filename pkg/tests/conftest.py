import itertools

import numpy as np
import pytest

from tzsim.backhaul import BackhaulChain


def enumerate_outage(chain: BackhaulChain, start: int, k: int) -> float:
    """P(any outage in steps 1..k) by summing over every k-step path."""
    t = chain.transition.tolist()
    c = chain.cssr.tolist()
    survive = 0.0
    for path in itertools.product(range(9), repeat=k):
        p, prev = 1.0, start - 1
        for s in path:
            p *= t[prev][s] * c[s]
            prev = s
        survive += p
    return 1.0 - survive


@pytest.fixture
def ref_chain():
    return BackhaulChain.default()


@pytest.fixture
def np_rng():
    return np.random.default_rng(20181122)


ACCEPTANCE_RESULTS: dict[int, tuple[str, bool, str]] = {}


def record_acceptance(number: int, name: str, passed: bool, detail: str) -> None:
    ACCEPTANCE_RESULTS[number] = (name, passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        name, passed, detail = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {number}. {name}: {detail}")
