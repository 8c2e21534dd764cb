"""Exact branch enumeration of the purification, recycling, link and phase-flip rounds.

Each protocol is run on every product of two GHZ basis states from the input
ensembles. Every parity outcome and every single-photon measurement outcome
becomes its own branch, and the bookkeeping of corrections and final labels is
kept per branch. Branch trees for a product depend only on the two labels, so
they are cached and reused across ensembles; the same kernels run in floating
point for the Monte Carlo harness.
"""

from __future__ import annotations

import itertools
import random
from collections import defaultdict
from dataclasses import dataclass, field, replace
from fractions import Fraction
from functools import lru_cache
from typing import NamedTuple, Sequence

from .ensembles import (
    CurvePoint,
    GhzDiagonalEnsemble,
    curve_point,
    PhaseEnsemble,
    keep_set,
    make_ensemble,
)
from .qnd import EVEN, ODD, parity_project
from .register import (
    BellLabel,
    GhzLabel,
    PhotonRegister,
    PureState,
    Tag,
    classify_ghz,
    make_ghz,
    party_names,
    tensor,
)

BITFLIP_BUDGET = range(2, 7)
PHASEFLIP_BUDGET = range(2, 6)

DISCARDED = "discarded"
UNENTANGLED = "unentangled"
CONVENTIONAL = "conventional"  # recycling runs hand uniform patterns back to the conventional round


@dataclass(frozen=True)
class Step:
    """One stochastic event on a branch, with its probability given the prefix."""

    what: str  # "parity:A" or "measure:A2"
    outcome: str
    probability: Fraction | float


@dataclass(frozen=True)
class BranchRecord:
    inputs: tuple[GhzLabel, ...]
    pattern: str
    outcomes: tuple[str, ...]
    weight: Fraction | float  # probability of the input product
    conditional: Fraction | float  # probability of the branch given that product
    corrections: tuple[str, ...]
    final: GhzLabel | str
    parties: tuple[str, ...] = ()
    steps: tuple[Step, ...] = ()
    intermediate: str = ""

    @property
    def probability(self):
        return self.weight * self.conditional

    @property
    def kept(self) -> bool:
        return isinstance(self.final, GhzLabel)

    def final_str(self) -> str:
        if not isinstance(self.final, GhzLabel):
            return self.final
        if self.final.n == 2:
            return str(BellLabel.from_ghz(self.final))
        return str(self.final)

    def line(self) -> str:
        p = self.probability
        ptxt = f"{p.numerator}/{p.denominator}" if isinstance(p, Fraction) else repr(p)
        parts = [
            f"pattern={self.pattern}",
            f"outcomes={','.join(self.outcomes) or '-'}",
            f"p={ptxt}",
            f"final={self.final_str()}",
        ]
        if self.parties and self.kept:
            parts.append(f"on={''.join(self.parties)}")
        parts.append(f"inputs={'x'.join(map(str, self.inputs))}")
        parts.append(f"corrections={','.join(self.corrections) or '-'}")
        if self.intermediate:
            parts.append(f"intermediate={self.intermediate}")
        return " ".join(parts)


@dataclass
class ProtocolReport:
    protocol: str
    branches: list[BranchRecord] = field(default_factory=list)

    @property
    def total_probability(self):
        return sum((b.probability for b in self.branches), Fraction(0))

    @property
    def kept_weight(self):
        """Yield: total probability of branches ending in a classified state."""
        return sum((b.probability for b in self.branches if b.kept), Fraction(0))

    def subsystems(self) -> dict[tuple[str, ...], GhzDiagonalEnsemble]:
        """Unnormalized output weight per surviving party set."""
        acc: dict = defaultdict(lambda: defaultdict(Fraction))
        for b in self.branches:
            if b.kept:
                acc[b.parties][b.final] += b.probability
        return {ps: make_ensemble(ps, w, normalized=False) for ps, w in sorted(acc.items())}

    @property
    def output(self) -> GhzDiagonalEnsemble:
        subs = self.subsystems()
        if len(subs) != 1:
            raise ValueError(f"{self.protocol} produced outputs on {sorted(subs)}; "
                             "use subsystems()")
        (out,) = subs.values()
        return out.normalize()

    def unclassified(self) -> list[BranchRecord]:
        return [b for b in self.branches if b.final == UNENTANGLED]

    def log_lines(self) -> list[str]:
        return [b.line() for b in self.branches]


# -- branch expansion helpers --------------------------------------------------

class _Path(NamedTuple):
    state: object
    p: object
    steps: tuple
    pattern: tuple  # (party, Parity) in check order
    outcomes: tuple  # (tag, outcome)
    corrections: tuple


def _tag_str(tag: Tag) -> str:
    return f"{tag[0]}{tag[1]}"


def _parity_stage(paths, parties, copies=(1, 2)):
    for party in parties:
        nxt = []
        for path in paths:
            for parity, p, post in parity_project(path.state, (party, copies[0]), (party, copies[1])):
                nxt.append(path._replace(
                    state=post, p=path.p * p,
                    steps=path.steps + (Step(f"parity:{party}", parity.value, p),),
                    pattern=path.pattern + ((party, parity),)))
        paths = nxt
    return paths


def _measure_stage(paths, tags, order=None):
    for tag in _ordered(tags, order):
        nxt = []
        for path in paths:
            for outcome, p, post in path.state.measure(tag, "X"):
                nxt.append(path._replace(
                    state=post, p=path.p * p,
                    steps=path.steps + (Step(f"measure:{_tag_str(tag)}", outcome, p),),
                    outcomes=path.outcomes + ((tag, outcome),)))
        paths = nxt
    return paths


def _ordered(tags, order):
    """Canonical measurement order unless an explicit priority list is given."""
    tags = list(tags)
    if order is None:
        return sorted(tags, key=lambda t: (t[0], -t[1]))
    rank = {t: k for k, t in enumerate(order)}
    missing = [t for t in tags if t not in rank]
    if missing:
        raise ValueError(f"measurement order misses {missing}")
    return sorted(tags, key=rank.__getitem__)


def _correct(path: _Path, tag: Tag, which: str) -> _Path:
    return path._replace(state=path.state.pauli(tag, which),
                         corrections=path.corrections + (f"{which}{_tag_str(tag)}",))


def _minus_count(path: _Path) -> int:
    return sum(o == "-" for _, o in path.outcomes)


def _pattern_str(path: _Path) -> str:
    return "".join(par.value for _, par in path.pattern)


def _start(state) -> _Path:
    one = Fraction(1) if isinstance(state, PureState) else 1.0
    return _Path(state, one, (), (), (), ())


def _record(path: _Path, inputs, final, parties=(), intermediate="") -> BranchRecord:
    return BranchRecord(
        inputs=tuple(inputs), pattern=_pattern_str(path),
        outcomes=tuple(f"{_tag_str(t)}{o}" for t, o in path.outcomes),
        weight=1, conditional=path.p, corrections=path.corrections, final=final,
        parties=tuple(parties), steps=path.steps, intermediate=intermediate)


def _product_state(n, la, lb, exact, b_parties=None, a_parties=None):
    a_parties = a_parties or party_names(n)
    b_parties = b_parties or a_parties
    st = tensor(make_ghz(len(a_parties), la, PhotonRegister.copy(a_parties, 1)),
                make_ghz(len(b_parties), lb, PhotonRegister.copy(b_parties, 2)))
    return st if exact else st.to_float()


def _classify_on(state, parties) -> GhzLabel | str:
    st = state.reorder(PhotonRegister(tuple(sorted(state.register.photons))))
    label = classify_ghz(st)
    if label is None:
        return UNENTANGLED
    if tuple(p for p, _ in st.register) != tuple(parties):
        raise AssertionError("surviving photons do not match the expected parties")
    return label


# -- bit-flip round with optional recycling -------------------------------------

@lru_cache(maxsize=None)
def bitflip_branches(n: int, la: GhzLabel, lb: GhzLabel, exact: bool = True,
                     mode: str = "conventional", order: tuple | None = None
                     ) -> tuple[BranchRecord, ...]:
    """Branches of one product ``la (copy 1) x lb (copy 2)``.

    Uniform parity patterns go through the conventional round. Mixed patterns
    are recycled: every copy-2 photon and the copy-1 photon of each party
    outside the kept set are measured in X, and an odd number of minus
    outcomes is fixed by a phase flip on a kept photon.

    ``mode`` is "conventional" (mixed patterns discarded), "recycling"
    (uniform patterns left to the conventional round) or "full" (both).
    """
    if mode not in ("conventional", "recycling", "full"):
        raise ValueError(f"unknown bit-flip mode {mode!r}")
    parties = party_names(n)
    paths = _parity_stage([_start(_product_state(n, la, lb, exact))], parties)
    out = []
    for path in paths:
        bits = tuple(0 if par is EVEN else 1 for _, par in path.pattern)
        keep = keep_set(bits)
        if keep is None:
            if mode == "recycling":
                out.append(_record(path, (la, lb), CONVENTIONAL))
                continue
            if bits[0] == 1:
                for party in parties:
                    path = _correct(path, (party, 2), "x")
            for done in _measure_stage([path], [(q, 2) for q in parties], order):
                if _minus_count(done) % 2:
                    done = _correct(done, (parties[0], 1), "z")
                out.append(_record(done, (la, lb), _classify_on(done.state, parties), parties))
        elif mode == "conventional":
            out.append(_record(path, (la, lb), DISCARDED))
        else:
            kept = tuple(parties[k] for k in keep)
            tags = [(q, 2) for q in parties] + [(q, 1) for q in parties if q not in kept]
            for done in _measure_stage([path], tags, order):
                if _minus_count(done) % 2:
                    done = _correct(done, (kept[-1], 1), "z")
                out.append(_record(done, (la, lb), _classify_on(done.state, kept), kept))
    return tuple(out)


def _product_records(kernel, items_a, items_b):
    out = []
    for (la, wa), (lb, wb) in itertools.product(items_a, items_b):
        w = wa * wb
        for rec in kernel(la, lb):
            out.append(replace(rec, weight=w))
    return out


def _check_budget(n, budget, what):
    if n not in budget:
        raise ValueError(f"{what} enumeration supports n in {budget.start}..{budget.stop - 1}, got {n}")


def _require_normalized(e: GhzDiagonalEnsemble):
    if not e.normalized or e.total != 1:
        raise ValueError(f"input ensemble must be normalized (total weight {e.total})")


def run_conventional_bitflip(e: GhzDiagonalEnsemble, order=None) -> ProtocolReport:
    _require_normalized(e)
    _check_budget(e.n, BITFLIP_BUDGET, "bit-flip")
    items = list(e.items())
    recs = _product_records(lambda a, b: bitflip_branches(e.n, a, b, True, "conventional", order),
                            items, items)
    return _rename(ProtocolReport("conventional", recs), e.parties)


def _rename(report: ProtocolReport, parties) -> ProtocolReport:
    """Translate default party names A, B, ... to the ensemble's own names."""
    default = party_names(len(parties))
    if tuple(parties) == default:
        return report
    table = dict(zip(default, parties))
    report.branches = [replace(b, parties=tuple(table[p] for p in b.parties))
                       for b in report.branches]
    return report


@dataclass
class RecyclingReport:
    report: ProtocolReport
    subsystems: dict[tuple[str, ...], GhzDiagonalEnsemble]

    @property
    def recycled_weight(self) -> Fraction:
        return sum((e.total for e in self.subsystems.values()), Fraction(0))

    @property
    def conventional_weight(self) -> Fraction:
        return sum((b.probability for b in self.report.branches if b.final == CONVENTIONAL),
                   Fraction(0))

    def pairs(self) -> dict[tuple[str, str], GhzDiagonalEnsemble]:
        """All party pairs, empty ones included (three-party inputs)."""
        parties = sorted({p for ps in self.subsystems for p in ps})
        n = max((len(ps) for ps in self.subsystems), default=2)
        if n != 2:
            raise ValueError("pair view only applies to three-party inputs")
        return {pr: self.subsystems.get(pr) or make_ensemble(pr, {}, normalized=False)
                for pr in itertools.combinations(parties, 2)}


def run_recycling(e: GhzDiagonalEnsemble, order=None) -> RecyclingReport:
    """Recycle every cross-combination into the subsystem its parity pattern leaves."""
    _require_normalized(e)
    if e.n not in range(3, 7):
        raise ValueError(f"recycling needs 3..6 parties, got {e.n}")
    items = list(e.items())
    recs = _product_records(lambda a, b: bitflip_branches(e.n, a, b, True, "recycling", order),
                            items, items)
    report = _rename(ProtocolReport("recycling", recs), e.parties)
    subs = report.subsystems()
    if e.n == 3:
        for pr in itertools.combinations(e.parties, 2):
            subs.setdefault(pr, make_ensemble(pr, {}, normalized=False))
    return RecyclingReport(report, dict(sorted(subs.items())))


# -- entanglement link ---------------------------------------------------------

@lru_cache(maxsize=None)
def link_branches(a_parties: tuple, la: GhzLabel, b_parties: tuple, lb: GhzLabel,
                  junctions: tuple, exact: bool = True, order: tuple | None = None
                  ) -> tuple[BranchRecord, ...]:
    """Branches of linking ``la`` (copy 1) and ``lb`` (copy 2) at the junction parties.

    The first junction fuses the states: on Odd every copy-2 photon is bit
    flipped. Later junctions are parity checks that discard on Odd. Each
    junction's copy-2 photon is then measured in X and a minus outcome is
    fixed by a phase flip on its copy-1 partner.
    """
    st = _product_state(0, la, lb, exact, b_parties=b_parties, a_parties=a_parties)
    first, rest = junctions[0], junctions[1:]
    out_parties = tuple(sorted(set(a_parties) | set(b_parties)))
    out = []
    for path in _parity_stage([_start(st)], [first]):
        if path.pattern[-1][1] is ODD:
            for q in b_parties:
                path = _correct(path, (q, 2), "x")
        for checked in _parity_stage([path], rest):
            if any(par is ODD for _, par in checked.pattern[1:]):
                out.append(_record(checked, (la, lb), DISCARDED))
                continue
            for done in _measure_stage([checked], [(j, 2) for j in junctions], order):
                for tag, o in done.outcomes:
                    if o == "-":
                        done = _correct(done, (tag[0], 1), "z")
                final = _classify_on(done.state, out_parties)
                out.append(_record(done, (la, lb), final, out_parties))
    return tuple(out)


def run_link(a: GhzDiagonalEnsemble, b: GhzDiagonalEnsemble, junction, order=None) -> ProtocolReport:
    _require_normalized(a)
    _require_normalized(b)
    js = (junction,) if isinstance(junction, str) else tuple(junction)
    shared = set(a.parties) & set(b.parties)
    if not js or len(set(js)) != len(js) or set(js) != shared:
        raise ValueError(f"junction {js} must list exactly the shared parties {sorted(shared)}")
    n_out = len(set(a.parties) | set(b.parties))
    if n_out > 6:
        raise ValueError("link enumeration supports at most six output parties")
    recs = _product_records(
        lambda x, y: link_branches(a.parties, x, b.parties, y, js, True, order),
        list(a.items()), list(b.items()))
    return ProtocolReport("link", recs)


# -- phase-flip round ----------------------------------------------------------

def phase_state(n: int, sign: int, register: PhotonRegister, exact: bool = True):
    """Hadamard image of the plus/minus GHZ state: even/odd weight strings."""
    st = make_ghz(n, GhzLabel((0,) * n, sign), register)
    for tag in register:
        st = st.hadamard(tag)
    return st if exact else st.to_float()


def _copy_matched(state, parties) -> str:
    """Name the family of a two-copy state with identical copies, or ''."""
    i1 = [state.index((p, 1)) for p in parties]
    i2 = [state.index((p, 2)) for p in parties]
    fam = set()
    for lab in state.terms:
        if any(lab[a] != lab[b] for a, b in zip(i1, i2)):
            return ""
        fam.add(sum(lab[a] for a in i1) % 2)
    if len(fam) != 1:
        return ""
    return "phi0" if fam == {0} else "phi0'"


@lru_cache(maxsize=None)
def phaseflip_branches(n: int, sa: int, sb: int, exact: bool = True, order: tuple | None = None,
                       skip: tuple | None = None) -> tuple[BranchRecord, ...]:
    """Branches of one product of phase-basis states with signs ``sa``, ``sb``.

    Patterns with an even number of Odd parities are kept; each Odd party's
    copy-2 photon is bit flipped so both copies agree. ``skip`` names one
    ``(pattern, party)`` correction to leave out (mutation testing).
    """
    parties = party_names(n)
    st = tensor(phase_state(n, sa, PhotonRegister.copy(parties, 1), exact),
                phase_state(n, sb, PhotonRegister.copy(parties, 2), exact))
    inputs = (GhzLabel((0,) * n, sa), GhzLabel((0,) * n, sb))
    out = []
    for path in _parity_stage([_start(st)], parties):
        pat = _pattern_str(path)
        if pat.count("O") % 2:
            out.append(_record(path, inputs, DISCARDED))
            continue
        for party, par in path.pattern:
            if par is ODD and skip != (pat, party):
                path = _correct(path, (party, 2), "x")
        family = _copy_matched(path.state, parties)
        for done in _measure_stage([path], [(q, 2) for q in parties], order):
            for tag, o in done.outcomes:
                if o == "-":
                    done = _correct(done, (tag[0], 1), "z")
            final_state = done.state
            for q in parties:
                final_state = final_state.hadamard((q, 1))
            final = _classify_on(final_state, parties) if family else UNENTANGLED
            if isinstance(final, GhzLabel) and any(final.mask):
                final = UNENTANGLED
            out.append(_record(done._replace(state=final_state), inputs, final, parties,
                               intermediate=family or "none"))
    return tuple(out)


def run_phaseflip(p: PhaseEnsemble, n: int, order=None, skip=None) -> ProtocolReport:
    _check_budget(n, PHASEFLIP_BUDGET, "phase-flip")
    items = [(s, w) for s, w in ((1, p.p0), (-1, p.p1)) if w]
    recs = _product_records(lambda a, b: phaseflip_branches(n, a, b, True, order, skip),
                            items, items)
    return ProtocolReport("phaseflip", recs)


def phase_output(report: ProtocolReport) -> tuple[PhaseEnsemble, Fraction]:
    out = report.output
    n = out.n
    return PhaseEnsemble(out.weight(GhzLabel((0,) * n)), out.weight(GhzLabel((0,) * n, -1))), \
        report.kept_weight


# -- whole scheme ----------------------------------------------------------------

def run_full_mepp(e: GhzDiagonalEnsemble, link_junction: str | None = None) -> CurvePoint:
    """Conventional round, pair recycling and pair linking, all by enumeration.

    The recycled pairs that share ``link_junction`` (default: the first
    party) are linked into a three-party state; their fidelity is reported as
    the 2-to-3 fidelity.
    """
    if e.n != 3:
        raise ValueError("the full scheme is defined for three parties")
    conv = run_conventional_bitflip(e)
    rec = run_recycling(e)
    pairs = rec.pairs()
    p32 = rec.recycled_weight
    phi = sum((pe.weight(GhzLabel((0, 0))) for pe in pairs.values()), Fraction(0))
    j = link_junction or e.parties[0]
    first, second = [pe for pr, pe in pairs.items() if j in pr]
    f_23 = None
    if first.total and second.total:
        f_23 = run_link(first.normalize(), second.normalize(), j).output.fidelity()
    return curve_point(e.vector()[0], conv.kept_weight, p32, conv.output.fidelity(),
                       phi / p32 if p32 else None, f_23)


def measurable_tags(n: int) -> tuple[Tag, ...]:
    parties = party_names(n)
    return tuple((p, c) for p in parties for c in (1, 2))


def shuffled_orders(n: int, count: int, seed: int = 0) -> list[tuple]:
    """Alternative measurement priority lists for order-independence checks."""
    rng = random.Random(seed)
    tags = list(measurable_tags(n))
    out = []
    for _ in range(count):
        rng.shuffle(tags)
        out.append(tuple(tags))
    return out


def aggregate(records: Sequence[BranchRecord]) -> dict:
    acc: dict = defaultdict(Fraction)
    for r in records:
        acc[(r.parties, r.final)] += r.probability
    return dict(acc)
