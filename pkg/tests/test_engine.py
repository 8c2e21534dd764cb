import random
from fractions import Fraction as F

import pytest

from conftest import random_ensembles
from ghz_purify.engine import (
    DISCARDED,
    UNENTANGLED,
    aggregate,
    bitflip_branches,
    measurable_tags,
    phaseflip_branches,
    run_conventional_bitflip,
    run_full_mepp,
    run_link,
    run_phaseflip,
    run_recycling,
    shuffled_orders,
)
from ghz_purify.ensembles import (
    BellDiagonalEnsemble,
    GhzDiagonalEnsemble,
    PhaseEnsemble,
    conventional_round,
    entanglement_link,
    link_weights,
    mepp_figures,
    phase_round,
    recycle_pair_tables,
    recycle_subsystems,
    symmetric_ensemble,
)
from ghz_purify.register import PHI_PLUS, PSI_PLUS, GhzLabel, ghz3, iter_ghz_labels, party_names


def vec(*xs):
    return GhzDiagonalEnsemble.from_vector([F(x) for x in xs])


def bell(f, parties):
    return BellDiagonalEnsemble.from_bell({PHI_PLUS: F(f), PSI_PLUS: 1 - F(f)}, parties)


def relabel(e, parties):
    return GhzDiagonalEnsemble(tuple(parties), dict(e.weights))


def sparse_ensembles(n, count, support, seed=0):
    rng = random.Random(seed)
    labels = list(iter_ghz_labels(n, (1, -1)))
    out = []
    for _ in range(count):
        raw = {lab: rng.randint(1, 9) for lab in rng.sample(labels, support)}
        tot = sum(raw.values())
        out.append(GhzDiagonalEnsemble(party_names(n), {k: F(v, tot) for k, v in raw.items()}))
    return out


def grid_ensembles(n=3, count=24, signs=(1,), seed=11):
    fixed = [vec("0.7", "0.1", "0.1", "0.1"), vec("0.4", "0.3", "0.2", "0.1"),
             vec("0.5", "0", "0.5", "0"), vec(1, 0, 0, 0)] if n == 3 else []
    return fixed + random_ensembles(random.Random(seed), count - len(fixed), n, signs)


# -- conventional ----------------------------------------------------------------

def test_conventional_plug():
    rep = run_conventional_bitflip(vec("0.7", "0.1", "0.1", "0.1"))
    assert rep.kept_weight == F(52, 100)
    assert rep.output.vector() == (F(49, 52), F(1, 52), F(1, 52), F(1, 52))


def test_conventional_pure():
    rep = run_conventional_bitflip(vec(1, 0, 0, 0))
    assert rep.kept_weight == 1
    assert {b.final for b in rep.branches} == {ghz3(0)}


def test_conventional_four_photon_uniform():
    e = GhzDiagonalEnsemble.from_vector([F(1, 8)] * 8)
    rep = run_conventional_bitflip(e)
    assert rep.kept_weight == F(1, 8)
    assert rep.output == e


@pytest.mark.parametrize("n", [2, 3, 4])
def test_conventional_matches_closed_form(n):
    for e in grid_ensembles(n, 20, signs=(1, -1), seed=n):
        rep = run_conventional_bitflip(e)
        out, y = conventional_round(e)
        assert rep.total_probability == 1
        assert rep.kept_weight == y
        assert rep.output == out
        assert not rep.unclassified()


@pytest.mark.parametrize("n", [5, 6])
def test_conventional_large_n(n):
    e = random_ensembles(random.Random(n), 1, n, top=2)[0]
    rep = run_conventional_bitflip(e)
    assert rep.output == conventional_round(e)[0]


def test_conventional_budget():
    with pytest.raises(ValueError):
        run_conventional_bitflip(GhzDiagonalEnsemble.pure(7))


def test_conventional_branch_shape():
    recs = bitflip_branches(3, ghz3(0), ghz3(0))
    # all-Even and all-Odd, each followed by 8 X outcomes
    assert len(recs) == 16
    for r in recs:
        assert r.pattern in ("EEE", "OOO")
        if r.pattern == "OOO":
            assert r.corrections[:3] == ("xA2", "xB2", "xC2")
        minus = sum(o.endswith("-") for o in r.outcomes)
        assert ("zA1" in r.corrections) == (minus % 2 == 1)
    mixed = bitflip_branches(3, ghz3(0), ghz3(2))
    assert {r.final for r in mixed} == {DISCARDED}


# -- recycling -------------------------------------------------------------------

def test_recycling_symmetric():
    rec = run_recycling(vec("0.7", "0.1", "0.1", "0.1"))
    assert rec.recycled_weight == F(48, 100)
    assert all(pe.fidelity() == F(7, 8) for pe in rec.pairs().values())


def test_recycling_pure():
    assert run_recycling(vec(1, 0, 0, 0)).recycled_weight == 0


def test_recycling_single_pair_type():
    rec = run_recycling(vec("0.5", "0", "0.5", "0"))
    pairs = rec.pairs()
    assert pairs[("A", "C")].weights == {GhzLabel((0, 0)): F(1, 2)}
    assert pairs[("A", "B")].total == pairs[("B", "C")].total == 0


def test_recycling_matches_tables():
    for e in grid_ensembles(3, 24):
        rec = run_recycling(e)
        assert rec.pairs() == recycle_pair_tables(e)
        assert rec.report.total_probability == 1
        assert rec.recycled_weight == 1 - sum(w ** 2 for w in e.vector())
        assert not rec.report.unclassified()


@pytest.mark.parametrize("n", [4, 5])
def test_recycling_general_n_matches_subset_rule(n):
    for e in sparse_ensembles(n, 6 if n == 4 else 2, 4 if n == 4 else 3):
        rec = run_recycling(e)
        assert rec.subsystems == recycle_subsystems(e)
        assert not rec.report.unclassified()


@pytest.mark.parametrize("n", [4, 5, 6])
def test_recycled_subsystem_sizes(n):
    # kept parties are never fewer than half
    e = random_ensembles(random.Random(n), 1, n, top=3)[0]
    rec = run_recycling(e) if n < 6 else None
    sizes = {len(ps) for ps in (rec.subsystems if rec else recycle_subsystems(e))}
    assert all(-(-n // 2) <= k < n for k in sizes)


def test_recycling_party_count():
    with pytest.raises(ValueError):
        run_recycling(symmetric_ensemble(F(1, 2), 2))


def test_omega_branch_corrections():
    recs = bitflip_branches(3, ghz3(0), ghz3(2), mode="recycling")
    oeo = [r for r in recs if r.pattern == "OEO"]
    assert sum(r.conditional for r in oeo) == F(1, 2)
    for r in oeo:
        assert r.parties == ("A", "C")
        assert r.final == GhzLabel((0, 0))
        minus = sum(o.endswith("-") for o in r.outcomes)
        assert ("zC1" in r.corrections) == (minus % 2 == 1)
        assert sorted(o[:2] for o in r.outcomes) == ["A2", "B1", "B2", "C2"]


# -- link ------------------------------------------------------------------------

def test_link_pair_formula():
    rep = run_link(bell(F(7, 8), ("A", "B")), bell(F(7, 8), ("A", "C")), "A")
    assert rep.output.vector() == (F(49, 64), F(1, 64), F(7, 64), F(7, 64))
    assert rep.kept_weight == 1


def test_link_noiseless_all_branches():
    rep = run_link(bell(1, ("A", "B")), bell(1, ("A", "C")), "A")
    assert len(rep.branches) == 4
    assert {b.final for b in rep.branches} == {ghz3(0)}
    assert [b.probability for b in rep.branches] == [F(1, 4)] * 4


def rand_on(parties, rng, signs=(1,)):
    return relabel(random_ensembles(rng, 1, len(parties), signs)[0], parties)


def test_link_three_plus_two():
    rng = random.Random(5)
    for _ in range(8):
        a, b = rand_on("ABC", rng, (1, -1)), rand_on("AD", rng, (1, -1))
        rep = run_link(a, b, "A")
        assert rep.output == entanglement_link(a, b, "A")
        assert rep.output.n == 4 and rep.kept_weight == 1


def test_link_three_plus_three_both_orders():
    rng = random.Random(6)
    for _ in range(6):
        a, b = rand_on("ABC", rng), rand_on("ABD", rng)
        one = run_link(a, b, ("A", "B"))
        two = run_link(a, b, ("B", "A"))
        want = link_weights(a, b, ("A", "B"))
        assert one.kept_weight == two.kept_weight == want.total
        assert one.output == two.output == want.normalize()
        assert one.output.n == 4


@pytest.mark.parametrize("shape", ["symmetric", "chain"])
def test_link_two_two_two(shape):
    rng = random.Random(7)
    for _ in range(5):
        if shape == "symmetric":
            x, y, z = rand_on("AB", rng), rand_on("AC", rng), rand_on("AD", rng)
            j1, j2 = "A", "A"
        else:
            x, y, z = rand_on("AB", rng), rand_on("BC", rng), rand_on("CD", rng)
            j1, j2 = "B", "C"
        first = run_link(x, y, j1).output
        assert first == entanglement_link(x, y, j1)
        final = run_link(first, z, j2).output
        assert final == entanglement_link(entanglement_link(x, y, j1), z, j2)
        assert final.n == 4 and final.total == 1


def test_link_asymmetric_grid():
    rng = random.Random(8)
    for _ in range(20):
        a, b = rand_on("AB", rng, (1, -1)), rand_on("AC", rng, (1, -1))
        assert run_link(a, b, "A").output == entanglement_link(a, b, "A")


def test_link_errors():
    with pytest.raises(ValueError):
        run_link(bell(1, ("A", "B")), bell(1, ("C", "D")), "A")


# -- phase flip ------------------------------------------------------------------

@pytest.mark.parametrize("n", [2, 3, 4, 5])
def test_phaseflip_matches_update(n):
    for k in range(1, 21):
        p = PhaseEnsemble.from_p0(F(k, 21))
        rep = run_phaseflip(p, n)
        out, y = phase_round(p)
        assert rep.total_probability == 1
        assert rep.kept_weight == y
        o = rep.output
        assert o.weight(GhzLabel((0,) * n)) == out.p0
        assert not rep.unclassified()


def test_phaseflip_plugs():
    rep = run_phaseflip(PhaseEnsemble.from_p0(F(4, 5)), 3)
    assert rep.output.fidelity() == F(16, 17) and rep.kept_weight == F(68, 100)
    assert run_phaseflip(PhaseEnsemble.from_p0(1), 3).kept_weight == 1
    assert run_phaseflip(PhaseEnsemble.from_p0(F(4, 5)), 4).output.fidelity() == F(16, 17)
    with pytest.raises(ValueError):
        run_phaseflip(PhaseEnsemble.from_p0(1), 6)


@pytest.mark.parametrize("n", [3, 4])
def test_cross_terms_have_odd_parity_count(n):
    for sa, sb in ((1, -1), (-1, 1)):
        recs = phaseflip_branches(n, sa, sb)
        assert recs
        for r in recs:
            assert r.pattern.count("O") % 2 == 1
            assert r.final == DISCARDED


@pytest.mark.parametrize("n", [3, 4])
def test_phaseflip_corrections_are_needed(n):
    patterns = {r.pattern for r in phaseflip_branches(n, 1, 1) if r.final != DISCARDED}
    mutated = 0
    for pat in patterns:
        for party, par in zip(party_names(n), pat):
            if par != "O":
                continue
            recs = phaseflip_branches(n, 1, 1, skip=(pat, party))
            assert any(r.final == UNENTANGLED for r in recs), (pat, party)
            mutated += 1
    assert mutated > 0


def test_copy_one_flip_swaps_family():
    """Flipping a copy-1 photon instead of copy 2 moves the state to the other family."""
    from ghz_purify.engine import _copy_matched, phase_state
    from ghz_purify.qnd import parity_project
    from ghz_purify.register import PhotonRegister, tensor

    st_ = tensor(phase_state(3, 1, PhotonRegister.copy("ABC")),
                 phase_state(3, 1, PhotonRegister.copy("ABC", 2)))
    for party, want in (("A", "O"), ("B", "O"), ("C", "E")):
        (st_,) = [post for par, _, post in parity_project(st_, (party, 1), (party, 2))
                  if par.value == want]
    assert _copy_matched(st_.pauli(("A", 2), "x").pauli(("B", 2), "x"), "ABC") == "phi0"
    assert _copy_matched(st_.pauli(("A", 1), "x").pauli(("B", 2), "x"), "ABC") == "phi0'"


# -- order independence and logs ------------------------------------------------

def test_measurement_order_independence():
    e = vec("0.4", "0.3", "0.2", "0.1")
    base_c = aggregate(run_conventional_bitflip(e).branches)
    base_r = aggregate(run_recycling(e).report.branches)
    p = PhaseEnsemble.from_p0(F(3, 4))
    base_p = aggregate(run_phaseflip(p, 3).branches)
    a, b = vec("0.4", "0.3", "0.2", "0.1"), relabel(vec("0.7", "0.1", "0.1", "0.1"), "ABD")
    base_l = aggregate(run_link(a, b, ("A", "B")).branches)
    for order in shuffled_orders(3, 4):
        assert aggregate(run_conventional_bitflip(e, order).branches) == base_c
        assert aggregate(run_recycling(e, order).report.branches) == base_r
        assert aggregate(run_phaseflip(p, 3, order).branches) == base_p
    for order in shuffled_orders(4, 4, seed=1):
        assert aggregate(run_link(a, b, ("A", "B"), order).branches) == base_l
    assert len(measurable_tags(3)) == 6


def test_log_line_format():
    rep = run_conventional_bitflip(vec(1, 0, 0, 0))
    line = rep.log_lines()[0]
    assert line.startswith("pattern=EEE outcomes=A2+,B2+,C2+ p=1/16 final=000:+")
    rec = run_recycling(vec("0.5", "0", "0.5", "0")).report
    assert any(" final=phi+ on=AC " in ln for ln in rec.log_lines())
    oeo = sum(b.probability for b in rec.branches if b.pattern == "OEO")
    assert oeo == F(1, 4)


def test_full_scheme_matches_generic_analytics():
    for e in grid_ensembles(3, 10, seed=3):
        assert run_full_mepp(e) == mepp_figures(e)
