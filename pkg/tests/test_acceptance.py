"""Acceptance suite: one test per criterion at its stated tolerance.

Each test prints a ``PASS``/``FAIL`` line, and the lines are repeated in
the terminal summary.  The d = 1 white-noise replicas are run once and
shared by the exponent, sandwich and concentration criteria.
"""

import pytest

from msre.acceptance import NAMES, SEED, Suite, fresh_report_bytes

pytestmark = pytest.mark.acceptance


@pytest.fixture(scope="module")
def suite():
    return Suite(SEED)


@pytest.mark.parametrize("name", NAMES)
def test_criterion(name, suite, acceptance_log):
    out = suite.run(name)
    acceptance_log(out.line())
    assert out.report["pass"], out.report
    assert out.on_time, f"{name} took {out.seconds:.1f}s, limit {out.runtime_limit}s"


def test_determinism(suite, acceptance_log):
    first = suite.report_bytes()
    second = fresh_report_bytes(SEED)
    differ = sorted(n for n in NAMES if first[n] != second[n])
    ok = not differ
    detail = "all reports byte-identical" if ok else f"differing reports: {', '.join(differ)}"
    acceptance_log(f"{'PASS' if ok else 'FAIL'} determinism: {detail}")
    assert ok, detail
