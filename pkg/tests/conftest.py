import copy

import pytest

from cgsim import load_scenario


def scenario(profile="NR_R16", grants=None, ues=None, **top):
    """Small scenario tree with one UE and one K=1 grant unless overridden."""
    d = {
        "schema_version": 1,
        "profile": profile,
        "configured_grants": grants if grants is not None else [{"ue_id": 0, "cg_id": 0, "period_p": 2, "K": 1}],
        "ues": ues if ues is not None else [{"id": 0, "traffic": {"kind": "deterministic", "period_slots": 2}}],
        "duration_slots": 40,
    }
    d.update(top)
    return d


@pytest.fixture
def make():
    def _make(d):
        return load_scenario(copy.deepcopy(d))
    return _make


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(RESULTS, key=lambda k: (int(str(k).split("/")[0]), str(k))):
        terminalreporter.write_line(RESULTS[key])
