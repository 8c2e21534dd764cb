import os
from fractions import Fraction

import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from ghz_purify.ensembles import GhzDiagonalEnsemble
from ghz_purify.register import iter_ghz_labels, party_names

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

ACCEPTANCE_LINES: list[str] = []


@st.composite
def ensembles(draw, n=3, signs=(1,), min_support=1):
    labels = list(iter_ghz_labels(n, signs))
    raw = draw(st.lists(st.integers(0, 12), min_size=len(labels), max_size=len(labels)))
    if sum(1 for r in raw if r) < min_support:
        raw[0] = raw[0] or 1
    total = sum(raw)
    if total == 0:
        raw[0], total = 1, 1
    w = {lab: Fraction(r, total) for lab, r in zip(labels, raw)}
    return GhzDiagonalEnsemble(party_names(n), w)


def random_ensembles(rng, count, n=3, signs=(1,), top=9):
    out = []
    labels = list(iter_ghz_labels(n, signs))
    while len(out) < count:
        raw = [rng.randint(0, top) for _ in labels]
        if sum(raw):
            out.append(GhzDiagonalEnsemble(party_names(n),
                                           {lab: Fraction(r, sum(raw)) for lab, r in zip(labels, raw)}))
    return out


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def F():
    return Fraction
