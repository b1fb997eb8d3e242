import pytest

from divgcn.data import k_core_filter, make_dataset, temporal_split
from divgcn.synth import SynthConfig, generate


def small_dataset(seed=0):
    log, table = generate(SynthConfig(users=40, items=80, categories=4, per_user=20, seed=seed))
    kept = k_core_filter(log, 5)
    return make_dataset(temporal_split(kept), table.restrict({x.item_id for x in kept}))


@pytest.fixture(scope="session")
def small_data():
    return small_dataset()


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[number])
