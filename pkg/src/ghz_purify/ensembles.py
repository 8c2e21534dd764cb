"""Closed-form calculus on GHZ-diagonal ensembles with rational weights."""

from __future__ import annotations

import itertools
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

from .register import (
    THREE_PHOTON_MASKS,
    BellLabel,
    GhzLabel,
    iter_ghz_labels,
    party_names,
)


def as_fraction(x) -> Fraction:
    """Exact rational from int, Fraction, decimal string or float (via repr)."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, bool):
        raise TypeError("booleans are not probabilities")
    if isinstance(x, int):
        return Fraction(x)
    if isinstance(x, float):
        return Fraction(repr(x))
    if isinstance(x, str):
        try:
            return Fraction(x.strip())
        except ValueError:
            raise ValueError(f"not a rational number: {x!r}") from None
    raise TypeError(f"cannot convert {type(x).__name__} to a rational")


@dataclass(frozen=True)
class GhzDiagonalEnsemble:
    """Mixture of GHZ basis states over ``parties``.

    Zero weights are dropped so equal mixtures compare equal. Unnormalized
    ensembles carry their total weight explicitly through :attr:`total`.
    """

    parties: tuple[str, ...]
    weights: Mapping[GhzLabel, Fraction] = field(default_factory=dict)
    normalized: bool = True

    def __post_init__(self):
        object.__setattr__(self, "parties", tuple(self.parties))
        if len(set(self.parties)) != len(self.parties):
            raise ValueError(f"duplicate parties {self.parties}")
        clean = {}
        for label, w in self.weights.items():
            w = as_fraction(w)
            if w < 0:
                raise ValueError(f"negative weight {w} for {label}")
            if label.n != len(self.parties):
                raise ValueError(f"label {label} does not fit parties {self.parties}")
            if w:
                clean[label] = clean.get(label, Fraction(0)) + w
        object.__setattr__(self, "weights", dict(sorted(clean.items())))
        if self.normalized and self.total != 1:
            raise ValueError(f"ensemble weights sum to {self.total}, expected 1")

    def __eq__(self, other):
        # the two-party subclass is a view, not a different kind of value
        if not isinstance(other, GhzDiagonalEnsemble):
            return NotImplemented
        return (self.parties, self.weights, self.normalized) == \
            (other.parties, other.weights, other.normalized)

    @property
    def n(self) -> int:
        return len(self.parties)

    @property
    def total(self) -> Fraction:
        return sum(self.weights.values(), Fraction(0))

    def weight(self, label: GhzLabel) -> Fraction:
        return self.weights.get(label, Fraction(0))

    def fidelity(self, label: GhzLabel | None = None) -> Fraction:
        """Relative weight of ``label`` (default: all-H/all-V plus state)."""
        if label is None:
            label = GhzLabel((0,) * self.n)
        tot = self.total
        return self.weight(label) / tot if tot else Fraction(0)

    def normalize(self) -> GhzDiagonalEnsemble:
        tot = self.total
        if tot == 0:
            raise ZeroDivisionError("cannot normalize an empty ensemble")
        return make_ensemble(self.parties, {k: v / tot for k, v in self.weights.items()})

    def scaled(self, factor) -> GhzDiagonalEnsemble:
        factor = as_fraction(factor)
        return make_ensemble(self.parties, {k: v * factor for k, v in self.weights.items()},
                             normalized=False)

    def vector(self) -> tuple[Fraction, ...]:
        """Plus-sign weights in the order used by :meth:`from_vector`."""
        return tuple(self.weight(lab) for lab in _vector_order(self.n))

    @classmethod
    def from_vector(cls, values: Sequence, parties: Sequence[str] | None = None,
                    normalized: bool = True) -> GhzDiagonalEnsemble:
        """Plus-sign ensemble from ``2**(n-1)`` weights.

        Three photons use (Phi_0, Phi_1, Phi_2, Phi_3) with Phi_k carrying a
        bit flip on photon k; every other size uses binary mask order.
        """
        size = len(values)
        n = size.bit_length()
        if size < 2 or 2 ** (n - 1) != size:
            raise ValueError(f"weight vector length {size} is not a power of two")
        if parties is None:
            parties = party_names(n)
        return make_ensemble(parties, dict(zip(_vector_order(n), map(as_fraction, values))),
                             normalized=normalized)

    @classmethod
    def pure(cls, n: int, label: GhzLabel | None = None) -> GhzDiagonalEnsemble:
        label = label or GhzLabel((0,) * n)
        return make_ensemble(party_names(n), {label: Fraction(1)})

    def items(self):
        return self.weights.items()


@dataclass(frozen=True, eq=False)
class BellDiagonalEnsemble(GhzDiagonalEnsemble):
    """Two-photon special case; mask 00 is phi, mask 01 is psi."""

    def __post_init__(self):
        super().__post_init__()
        if self.n != 2:
            raise ValueError("Bell-diagonal ensembles hold exactly two parties")

    @classmethod
    def from_bell(cls, weights: Mapping[BellLabel, object], parties=("A", "B"),
                  normalized: bool = True) -> BellDiagonalEnsemble:
        return cls(tuple(parties), {b.to_ghz(): as_fraction(w) for b, w in weights.items()},
                   normalized)

    @property
    def bell_weights(self) -> dict[BellLabel, Fraction]:
        return {BellLabel.from_ghz(k): v for k, v in self.weights.items()}

    def bell(self, label: BellLabel) -> Fraction:
        return self.weight(label.to_ghz())


def make_ensemble(parties: Sequence[str], weights: Mapping[GhzLabel, object],
                  normalized: bool = True) -> GhzDiagonalEnsemble:
    cls = BellDiagonalEnsemble if len(parties) == 2 else GhzDiagonalEnsemble
    return cls(tuple(parties), dict(weights), normalized)


def _vector_order(n: int) -> list[GhzLabel]:
    if n == 3:
        return [GhzLabel(m) for m in THREE_PHOTON_MASKS]
    return list(iter_ghz_labels(n))


@dataclass(frozen=True)
class PhaseEnsemble:
    """Weights of the plus/minus GHZ pair (or its Hadamard image)."""

    p0: Fraction
    p1: Fraction

    def __post_init__(self):
        p0, p1 = as_fraction(self.p0), as_fraction(self.p1)
        object.__setattr__(self, "p0", p0)
        object.__setattr__(self, "p1", p1)
        if p0 < 0 or p1 < 0 or p0 + p1 != 1:
            raise ValueError(f"phase ensemble ({p0}, {p1}) is not a distribution")

    @classmethod
    def from_p0(cls, p0) -> PhaseEnsemble:
        p0 = as_fraction(p0)
        return cls(p0, 1 - p0)


@dataclass(frozen=True)
class SymmetricNoise:
    """Three-photon noise with equal single-flip weights ``(1 - F0)/3``."""

    F0: Fraction

    def __post_init__(self):
        f0 = as_fraction(self.F0)
        if not 0 <= f0 <= 1:
            raise ValueError(f"F0 = {f0} outside [0, 1]")
        object.__setattr__(self, "F0", f0)

    @property
    def F1(self) -> Fraction:
        return (1 - self.F0) / 3

    def ensemble(self) -> GhzDiagonalEnsemble:
        return GhzDiagonalEnsemble.from_vector([self.F0, self.F1, self.F1, self.F1])


def symmetric_ensemble(F0, n: int = 3) -> GhzDiagonalEnsemble:
    """``F0`` on the target and the rest spread over the other plus labels."""
    F0 = as_fraction(F0)
    if not 0 <= F0 <= 1:
        raise ValueError(f"F0 = {F0} outside [0, 1]")
    rest = (1 - F0) / (2 ** (n - 1) - 1)
    return GhzDiagonalEnsemble.from_vector([F0] + [rest] * (2 ** (n - 1) - 1),
                                           party_names(n))


# -- purification rounds -------------------------------------------------------

def _require_normalized(e: GhzDiagonalEnsemble, what: str = "input"):
    if not e.normalized or e.total != 1:
        raise ValueError(f"{what} ensemble must be normalized (total weight {e.total})")


def conventional_round(e: GhzDiagonalEnsemble) -> tuple[GhzDiagonalEnsemble, Fraction]:
    """One bit-flip round keeping the identity-combinations.

    Copies are kept when their masks match; the surviving sign is the product
    of the two input signs. For plus-only input the weight of label L becomes
    ``w(L)**2 / sum(w**2)``.
    """
    _require_normalized(e)
    acc: dict[GhzLabel, Fraction] = defaultdict(Fraction)
    for (la, wa), (lb, wb) in itertools.product(e.items(), repeat=2):
        if la.mask == lb.mask:
            acc[GhzLabel(la.mask, la.sign * lb.sign)] += wa * wb
    y = sum(acc.values(), Fraction(0))
    return make_ensemble(e.parties, {k: v / y for k, v in acc.items()}), y


def phase_round(p: PhaseEnsemble) -> tuple[PhaseEnsemble, Fraction]:
    y = p.p0 ** 2 + p.p1 ** 2
    return PhaseEnsemble(p.p0 ** 2 / y, p.p1 ** 2 / y), y


@dataclass(frozen=True)
class CurvePoint:
    """Yields and fidelities of one purification round at a given F0."""

    F0: Fraction
    Y_c: Fraction
    P_3to2: Fraction
    Y_2to3: Fraction
    Y_e: Fraction
    F_c: Fraction
    F_2: Fraction
    F_2to3: Fraction
    F_e: Fraction

    CSV_FIELDS = ("F0", "Y_c", "Y_2to3", "Y_e", "F_c", "F_2", "F_2to3", "F_e")

    def row(self) -> dict[str, Fraction]:
        return {k: getattr(self, k) for k in self.CSV_FIELDS}


def yields_and_fidelities(F0) -> CurvePoint:
    """Closed forms under symmetric three-photon noise."""
    if isinstance(F0, SymmetricNoise):
        F0 = F0.F0
    F = SymmetricNoise(F0).F0
    y_c = (1 - 2 * F + 4 * F ** 2) / 3
    p32 = (2 + 2 * F - 4 * F ** 2) / 3
    y23 = p32 / 2
    y_e = (2 - F + 2 * F ** 2) / 3
    f_c = 3 * F ** 2 / (1 - 2 * F + 4 * F ** 2)
    f_2 = 3 * F / (1 + 2 * F)
    f_23 = 9 * F ** 2 / (1 + 4 * F + 4 * F ** 2)
    f_e = (f_c * y_c + f_23 * y23) / y_e
    return CurvePoint(F, y_c, p32, y23, y_e, f_c, f_2, f_23, f_e)


def mepp_figures(e: GhzDiagonalEnsemble) -> CurvePoint:
    """The same figures computed from the generic operations for any 3-photon input.

    Recycled pairs are linked as AB with AC at the first party; under
    symmetric noise every pairing gives the same target fidelity. Fidelities
    of empty outputs (no recycled pairs) are ``None``.
    """
    _require_normalized(e)
    if e.n != 3:
        raise ValueError("mepp_figures needs a three-party ensemble")
    out, y_c = conventional_round(e)
    pairs = recycle_pair_tables(e)
    p32 = sum((p.total for p in pairs.values()), Fraction(0))
    phi = sum((p.weight(GhzLabel((0, 0))) for p in pairs.values()), Fraction(0))
    f_2 = phi / p32 if p32 else None
    a, b, c = e.parties
    f_23 = None
    if pairs[(a, b)].total and pairs[(a, c)].total:
        linked = entanglement_link(pairs[(a, b)].normalize(), pairs[(a, c)].normalize(), a)
        f_23 = linked.fidelity()
    return curve_point(e.vector()[0], y_c, p32, out.fidelity(), f_2, f_23)


def curve_point(F0, y_c, p32, f_c, f_2, f_23) -> CurvePoint:
    """Assemble the figures; a fidelity with nothing to average over is ``None``."""
    y23 = p32 / 2
    y_e = y_c + y23
    f_e = (f_c * y_c + (f_23 or 0) * y23) / y_e if y_e else None
    return CurvePoint(F0, y_c, p32, y23, y_e, f_c, f_2, f_23, f_e)


# -- recycling -----------------------------------------------------------------

def keep_set(pattern: Sequence[int]) -> tuple[int, ...] | None:
    """Positions forming the recycled subsystem for a parity pattern.

    The pattern is 0 for Even and 1 for Odd per party. The kept parties are
    the majority group; on a tie, the group containing the first party.
    Uniform patterns return ``None`` (they belong to the conventional round).
    """
    pattern = tuple(pattern)
    if len(set(pattern)) < 2:
        return None
    zeros = [k for k, b in enumerate(pattern) if b == 0]
    ones = [k for k, b in enumerate(pattern) if b == 1]
    if len(zeros) != len(ones):
        return tuple(max(zeros, ones, key=len))
    return tuple(zeros if pattern[0] == 0 else ones)


def _xor(a, b):
    return tuple(x ^ y for x, y in zip(a, b))


def recycle_subsystems(e: GhzDiagonalEnsemble) -> dict[tuple[str, ...], GhzDiagonalEnsemble]:
    """Unnormalized sub-ensembles distilled from every cross-combination."""
    _require_normalized(e)
    acc: dict[tuple[str, ...], dict] = defaultdict(lambda: defaultdict(Fraction))
    for (la, wa), (lb, wb) in itertools.product(e.items(), repeat=2):
        if la.mask == lb.mask:
            continue
        keep = keep_set(_xor(la.mask, lb.mask))
        sub = GhzLabel.canonical([la.mask[k] for k in keep], la.sign * lb.sign)
        acc[tuple(e.parties[k] for k in keep)][sub] += wa * wb
    return {ps: make_ensemble(ps, w, normalized=False) for ps, w in sorted(acc.items())}


def recycle_pair_tables(F) -> dict[tuple[str, str], BellDiagonalEnsemble]:
    """Pair ensembles AB, AC, BC recycled from three-photon cross-combinations."""
    e = F if isinstance(F, GhzDiagonalEnsemble) else GhzDiagonalEnsemble.from_vector(
        [as_fraction(x) for x in F])
    if e.n != 3:
        raise ValueError("pair tables are defined for three parties")
    subs = recycle_subsystems(e)
    out = {}
    for pair in itertools.combinations(e.parties, 2):
        out[pair] = subs.get(pair) or make_ensemble(pair, {}, normalized=False)
    return out


def recycle_pattern(e: GhzDiagonalEnsemble, pattern) -> GhzDiagonalEnsemble:
    """Unnormalized sub-ensemble recycled from one mixed parity pattern class.

    A pattern and its complement always occur together (each with half the
    weight of the product) and leave the same parties entangled, so both are
    counted: a cross product of masks differing by ``pattern`` contributes
    ``w_i * w_j`` per ordered pair.
    """
    _require_normalized(e)
    bits = _pattern_bits(pattern, e.n)
    odd = sum(bits)
    if odd == 0 or odd == e.n:
        raise ValueError("uniform parity patterns belong to the conventional round")
    keep = keep_set(bits)
    comp = tuple(1 - b for b in bits)
    acc: dict[GhzLabel, Fraction] = defaultdict(Fraction)
    for (la, wa), (lb, wb) in itertools.product(e.items(), repeat=2):
        if _xor(la.mask, lb.mask) in (bits, comp):
            sub = GhzLabel.canonical([la.mask[k] for k in keep], la.sign * lb.sign)
            acc[sub] += wa * wb
    return make_ensemble(tuple(e.parties[k] for k in keep), acc, normalized=False)


def four_photon_recycle(f, pattern) -> GhzDiagonalEnsemble:
    """Four-party recycling for one parity pattern with one or two Odd entries.

    ``f`` is an 8-vector in binary mask order (or a four-party ensemble).
    Three-Odd patterns are folded onto their complement.
    """
    e = f if isinstance(f, GhzDiagonalEnsemble) else GhzDiagonalEnsemble.from_vector(
        [as_fraction(x) for x in f])
    if e.n != 4:
        raise ValueError("four_photon_recycle needs a four-party ensemble")
    bits = _pattern_bits(pattern, 4)
    if sum(bits) == 3:
        bits = tuple(1 - b for b in bits)
    if sum(bits) not in (1, 2):
        raise ValueError(f"pattern {pattern!r} has no recyclable subsystem")
    return recycle_pattern(e, bits)


def _pattern_bits(pattern, n: int) -> tuple[int, ...]:
    if isinstance(pattern, str):
        try:
            bits = tuple({"E": 0, "O": 1}[c] for c in pattern.upper())
        except KeyError:
            raise ValueError(f"bad parity pattern {pattern!r}") from None
    else:
        bits = tuple(b if isinstance(b, int) else (1 if str(b) == "O" else 0) for b in pattern)
    if len(bits) != n:
        raise ValueError(f"pattern {pattern!r} does not have {n} entries")
    return bits


# -- entanglement link ---------------------------------------------------------

def _junction_list(a_parties, b_parties, junction) -> tuple[str, ...]:
    js = (junction,) if isinstance(junction, str) else tuple(junction)
    shared = set(a_parties) & set(b_parties)
    if not js or len(set(js)) != len(js) or set(js) != shared:
        raise ValueError(f"junction {js} must list exactly the shared parties {sorted(shared)}")
    return js


def link_label(a_parties: Sequence[str], la: GhzLabel, b_parties: Sequence[str],
               lb: GhzLabel, junction) -> tuple[tuple[str, ...], GhzLabel | None]:
    """Label produced by linking two GHZ basis states.

    The first junction fuses the two states; b's mask is aligned to a at that
    party (a phi-like junction adds nothing, a psi-like one flips b's side).
    Further junctions are consistency checks and return ``None`` on mismatch.
    Output parties are sorted.
    """
    js = _junction_list(a_parties, b_parties, junction)
    bits = dict(zip(a_parties, la.mask))
    other = dict(zip(b_parties, lb.mask))
    if other[js[0]] != bits[js[0]]:
        other = {k: 1 - v for k, v in other.items()}
    parties = tuple(sorted(set(a_parties) | set(b_parties)))
    for j in js[1:]:
        if other[j] != bits[j]:
            return parties, None
    for p in b_parties:
        if p not in js:
            bits[p] = other[p]
    return parties, GhzLabel.canonical([bits[p] for p in parties], la.sign * lb.sign)


def link_weights(a: GhzDiagonalEnsemble, b: GhzDiagonalEnsemble, junction) -> GhzDiagonalEnsemble:
    """Unnormalized link output; its total is the probability every check passes."""
    _require_normalized(a, "first")
    _require_normalized(b, "second")
    acc: dict[GhzLabel, Fraction] = defaultdict(Fraction)
    parties = tuple(sorted(set(a.parties) | set(b.parties)))
    for (la, wa), (lb, wb) in itertools.product(a.items(), b.items()):
        parties, lab = link_label(a.parties, la, b.parties, lb, junction)
        if lab is not None:
            acc[lab] += wa * wb
    return make_ensemble(parties, acc, normalized=False)


def entanglement_link(a: GhzDiagonalEnsemble, b: GhzDiagonalEnsemble, junction) -> GhzDiagonalEnsemble:
    """Fuse two ensembles sharing ``junction`` into one larger GHZ-diagonal ensemble."""
    return link_weights(a, b, junction).normalize()


# -- channel ingestion ---------------------------------------------------------

def channel_to_ensemble(n: int, p_bitflip, q_phaseflip=0) -> tuple[GhzDiagonalEnsemble, PhaseEnsemble]:
    """Ensembles produced by independent per-photon bit and phase flips on the target GHZ state."""
    p, q = as_fraction(p_bitflip), as_fraction(q_phaseflip)
    if not (0 <= p <= Fraction(1, 2) and 0 <= q <= Fraction(1, 2)):
        raise ValueError("flip rates must lie in [0, 1/2]")
    if n < 2:
        raise ValueError("need at least two photons")
    weights = {}
    for lab in iter_ghz_labels(n):
        k = sum(lab.mask)
        weights[lab] = p ** k * (1 - p) ** (n - k) + p ** (n - k) * (1 - p) ** k
    p1 = (1 - (1 - 2 * q) ** n) / 2
    return make_ensemble(party_names(n), weights), PhaseEnsemble(1 - p1, p1)


# -- plain-text serialization --------------------------------------------------

def dump_ensemble(e: GhzDiagonalEnsemble) -> str:
    lines = [f"n={e.n} normalized={'true' if e.normalized else 'false'} parties={''.join(e.parties)}"]
    for label, w in e.items():
        lines.append(f"label={label} weight={w.numerator}/{w.denominator}")
    return "\n".join(lines) + "\n"


def load_ensemble(text: str) -> GhzDiagonalEnsemble:
    rows = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not rows:
        raise ValueError("empty ensemble file")
    header = _kv(rows[0], 1)
    try:
        n = int(header["n"])
        normalized = {"true": True, "false": False}[header["normalized"].lower()]
    except (KeyError, ValueError):
        raise ValueError(f"line 1: bad header {rows[0]!r}") from None
    parties = tuple(header.get("parties", "".join(party_names(n))))
    if len(parties) != n:
        raise ValueError(f"line 1: parties {parties} do not match n={n}")
    weights = {}
    for lineno, row in enumerate(rows[1:], start=2):
        kv = _kv(row, lineno)
        try:
            label = GhzLabel.parse(kv["label"])
            w = as_fraction(kv["weight"])
        except (KeyError, ValueError) as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
        if label in weights:
            raise ValueError(f"line {lineno}: duplicate label {label}")
        weights[label] = w
    return make_ensemble(parties, weights, normalized)


def _kv(row: str, lineno: int) -> dict[str, str]:
    out = {}
    for tok in row.split():
        key, sep, val = tok.partition("=")
        if not sep:
            raise ValueError(f"line {lineno}: expected key=value, got {tok!r}")
        out[key] = val
    return out


def iter_grid(start, stop, steps: int) -> Iterable[Fraction]:
    start, stop = as_fraction(start), as_fraction(stop)
    if steps < 1 or stop < start:
        raise ValueError("sweep needs stop >= start and at least one step")
    for k in range(steps + 1):
        yield start + (stop - start) * k / steps
