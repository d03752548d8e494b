"""Acceptance criteria A1-A10 at their stated sizes and tolerances.

Each test prints one PASS/FAIL line; the same lines are repeated in the
pytest terminal summary. Failures carry the measured values and, where the
academic example cannot be simulated, diagnostics on a stabilized variant.
"""

import pytest

from ncrsm.acceptance import CRITERIA, Suite

RESULTS = {}


@pytest.fixture(scope="module")
def suite():
    return Suite(diagnostics=True)


@pytest.mark.parametrize("name", CRITERIA)
def test_criterion(suite, name):
    res = getattr(suite, name)()
    RESULTS[name] = res
    print(res.line())
    for d in res.details:
        print("    detail:", d)
    for d in res.diagnostics:
        print("    diagnostic:", d)
    assert res.passed, res.line() + "".join("\n  " + d for d in res.details)
