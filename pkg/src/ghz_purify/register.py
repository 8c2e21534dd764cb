"""Photon registers and sparse real-amplitude polarization states.

Two state flavours share one interface:

* :class:`PureState` keeps amplitudes exactly as ``r * 2**(-half/2)`` with a
  rational ``r`` per basis label and a single ``half`` exponent (0 or 1) shared
  by the whole state. Every state reachable from GHZ products by Pauli,
  Hadamard, parity projection and single-photon measurement stays in this form
  as long as branch probabilities are squares or twice squares of rationals,
  which holds for all protocol branches.
* :class:`FloatState` mirrors the same operations in double precision for the
  Monte Carlo engine.

Bit convention: 0 is H, 1 is V.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from math import isqrt
from typing import Callable, Iterable, Iterator, Sequence

Tag = tuple[str, int]
PolarizationLabel = tuple[int, ...]

PARTY_NAMES = "ABCDEFGHIJKLMNOPQRSTUVWXYZ"
FLOAT_ZERO = 1e-14
FLOAT_MATCH = 1e-12


def party_names(n: int) -> tuple[str, ...]:
    if not 1 <= n <= len(PARTY_NAMES):
        raise ValueError(f"unsupported party count {n}")
    return tuple(PARTY_NAMES[:n])


def label_str(bits: Iterable[int]) -> str:
    return "".join("HV"[b] for b in bits)


def parse_label(text: str) -> PolarizationLabel:
    try:
        return tuple({"H": 0, "V": 1, "0": 0, "1": 1}[c] for c in text)
    except KeyError:
        raise ValueError(f"bad polarization label {text!r}") from None


@dataclass(frozen=True)
class PhotonRegister:
    """Ordered photon tags ``(party, copy)``; A1 B1 C1 ... A2 B2 C2 by default."""

    photons: tuple[Tag, ...]

    def __post_init__(self):
        if len(set(self.photons)) != len(self.photons):
            raise ValueError(f"duplicate photon tags in {self.photons}")

    @classmethod
    def copy(cls, parties: Sequence[str], copy: int = 1) -> PhotonRegister:
        return cls(tuple((p, copy) for p in parties))

    def __len__(self):
        return len(self.photons)

    def __iter__(self):
        return iter(self.photons)

    def __add__(self, other: PhotonRegister) -> PhotonRegister:
        overlap = set(self.photons) & set(other.photons)
        if overlap:
            raise ValueError(f"registers share photons {sorted(overlap)}")
        return PhotonRegister(self.photons + other.photons)

    def index(self, tag: Tag) -> int:
        try:
            return self.photons.index(tag)
        except ValueError:
            raise KeyError(f"photon {tag} not in register {self.photons}") from None

    def without(self, tag: Tag) -> PhotonRegister:
        i = self.index(tag)
        return PhotonRegister(self.photons[:i] + self.photons[i + 1:])

    def parties(self) -> tuple[str, ...]:
        return tuple(p for p, _ in self.photons)


def _square_root(p: Fraction) -> tuple[Fraction, int]:
    """Return ``(s, j)`` with ``sqrt(p) == s * 2**(-j/2)``."""
    for j, q in ((0, p), (1, 2 * p)):
        rn, rd = isqrt(q.numerator), isqrt(q.denominator)
        if rn * rn == q.numerator and rd * rd == q.denominator:
            return Fraction(rn, rd), j
    raise ArithmeticError(f"branch probability {p} has no dyadic square root")


class _State:
    register: PhotonRegister
    terms: dict

    # subclass hooks
    def _make(self, register, terms, half=0):
        raise NotImplementedError

    def _hadamard_terms(self, terms):
        raise NotImplementedError

    def _weight(self, terms):
        raise NotImplementedError

    def _renormalized(self, register, terms, p):
        raise NotImplementedError

    def __len__(self):
        return len(self.register)

    def index(self, tag: Tag) -> int:
        return self.register.index(tag)

    def pauli(self, tag: Tag, which: str):
        i = self.index(tag)
        if which == "x":
            terms = {lab[:i] + (1 - lab[i],) + lab[i + 1:]: c for lab, c in self.terms.items()}
        elif which == "z":
            terms = {lab: (-c if lab[i] else c) for lab, c in self.terms.items()}
        else:
            raise ValueError(f"unknown Pauli {which!r}")
        return self._make(self.register, terms, self.half)

    def hadamard(self, tag: Tag):
        i = self.index(tag)
        acc: dict = {}
        for lab, c in self.terms.items():
            h, v = lab[:i] + (0,) + lab[i + 1:], lab[:i] + (1,) + lab[i + 1:]
            acc[h] = acc.get(h, 0) + c
            acc[v] = acc.get(v, 0) + (-c if lab[i] else c)
        return self._hadamard_terms(acc)

    def cnot(self, control: Tag, target: Tag):
        ci, ti = self.index(control), self.index(target)
        if ci == ti:
            raise ValueError("control and target coincide")
        terms = {}
        for lab, c in self.terms.items():
            if lab[ci]:
                lab = lab[:ti] + (1 - lab[ti],) + lab[ti + 1:]
            terms[lab] = c
        return self._make(self.register, terms, self.half)

    def restrict(self, keep: Callable[[PolarizationLabel], bool]):
        """Project onto the span of labels accepted by ``keep``.

        Returns ``(probability, normalized post-state)`` or ``None`` when the
        projection annihilates the state.
        """
        sub = {lab: c for lab, c in self.terms.items() if keep(lab)}
        if not sub:
            return None
        p = self._weight(sub)
        return p, self._renormalized(self.register, sub, p)

    def drop(self, tag: Tag):
        """Remove a photon whose bit is already fixed across all terms."""
        i = self.index(tag)
        if len({lab[i] for lab in self.terms}) > 1:
            raise ValueError(f"photon {tag} is not in a definite Z state")
        terms = {lab[:i] + lab[i + 1:]: c for lab, c in self.terms.items()}
        return self._make(self.register.without(tag), terms, self.half)

    def measure(self, tag: Tag, basis: str = "Z"):
        """Destructive single-photon measurement, every nonzero branch."""
        if basis == "X":
            st, names = self.hadamard(tag), "+-"
        elif basis == "Z":
            st, names = self, "HV"
        else:
            raise ValueError(f"unknown basis {basis!r}")
        i = st.index(tag)
        out = []
        for bit in (0, 1):
            hit = st.restrict(lambda lab, b=bit: lab[i] == b)
            if hit is not None:
                p, post = hit
                out.append((names[bit], p, post.drop(tag)))
        return out

    def reorder(self, register: PhotonRegister):
        """Same state, photons listed in a new order."""
        if sorted(register.photons) != sorted(self.register.photons):
            raise ValueError("reorder must be a permutation of the register")
        perm = [self.index(t) for t in register]
        terms = {tuple(lab[k] for k in perm): c for lab, c in self.terms.items()}
        return self._make(register, terms, self.half)

    def relabel(self, register: PhotonRegister):
        if len(register) != len(self.register):
            raise ValueError("relabel must keep the photon count")
        return self._make(register, dict(self.terms), self.half)

    def labels(self) -> list[PolarizationLabel]:
        return sorted(self.terms)


class PureState(_State):
    """Exact state: amplitude of ``label`` is ``terms[label] * 2**(-half/2)``."""

    __slots__ = ("register", "terms", "half")

    def __init__(self, register: PhotonRegister, terms: dict, half: int = 0, *, check: bool = True):
        if half not in (0, 1):
            raise ValueError("half must be 0 or 1")
        self.register = register
        self.terms = {lab: Fraction(c) for lab, c in terms.items() if c != 0}
        self.half = half
        if check:
            n = len(register)
            if any(len(lab) != n for lab in self.terms):
                raise ValueError("label length does not match register")
            if self._weight(self.terms) != 1:
                raise ValueError("state is not normalized")

    @classmethod
    def basis(cls, register: PhotonRegister, label: Sequence[int] | str) -> PureState:
        if isinstance(label, str):
            label = parse_label(label)
        return cls(register, {tuple(label): Fraction(1)})

    @classmethod
    def superpose(cls, register: PhotonRegister, signs: dict) -> PureState:
        """Equal-weight superposition ``sum(sign * |label>) / sqrt(k)``."""
        s, j = _square_root(Fraction(1, len(signs)))
        terms = {}
        for lab, sign in signs.items():
            if isinstance(lab, str):
                lab = parse_label(lab)
            terms[tuple(lab)] = sign * s
        return cls(register, terms, j)

    def _make(self, register, terms, half=0):
        return PureState(register, terms, half, check=False)

    def _hadamard_terms(self, terms):
        if self.half == 1:
            terms = {k: c / 2 for k, c in terms.items()}
            return PureState(self.register, terms, 0, check=False)
        return PureState(self.register, terms, 1, check=False)

    def _weight(self, terms):
        total = sum((c * c for c in terms.values()), Fraction(0))
        return total / 2 if self.half else total

    def _renormalized(self, register, terms, p):
        s, j = _square_root(p)
        half = self.half - j
        scale = 1 / s
        if half < 0:
            half, scale = 1, scale * 2
        return PureState(register, {k: c * scale for k, c in terms.items()}, half, check=False)

    def amplitude(self, label: Sequence[int]) -> float:
        return float(self.terms.get(tuple(label), 0)) * (2 ** -0.5 if self.half else 1.0)

    def norm_squared(self) -> Fraction:
        return self._weight(self.terms)

    def to_float(self) -> FloatState:
        f = 2 ** -0.5 if self.half else 1.0
        return FloatState(self.register, {k: float(c) * f for k, c in self.terms.items()})

    def __eq__(self, other):
        if not isinstance(other, PureState):
            return NotImplemented
        return (self.register == other.register and self.half == other.half
                and self.terms == other.terms)

    def __repr__(self):
        return f"PureState({self.register.photons}, {self})"

    def __str__(self):
        mags = {abs(c) for c in self.terms.values()}
        if len(mags) == 1:
            (m,) = mags
            body = ""
            for lab in sorted(self.terms):
                sign = "-" if self.terms[lab] < 0 else "+"
                body += ("" if not body and sign == "+" else sign) + f"|{label_str(lab)}⟩"
            return f"{_amp_str(m, self.half)} ({body})"
        parts = []
        for lab in sorted(self.terms):
            c = self.terms[lab]
            parts.append(f"{'-' if c < 0 else '+'}{_amp_str(abs(c), self.half)}|{label_str(lab)}⟩")
        return " ".join(parts).lstrip("+")


def _amp_str(m: Fraction, half: int) -> str:
    if not half:
        return str(m)
    num, den = m.numerator, m.denominator
    if den == 1:
        return f"{num}/√2"
    return f"{num}/{den}√2"


class FloatState(_State):
    """Double-precision mirror of :class:`PureState`."""

    __slots__ = ("register", "terms", "half")

    def __init__(self, register: PhotonRegister, terms: dict, half: int = 0):
        self.register = register
        self.terms = {lab: float(c) for lab, c in terms.items() if abs(c) > FLOAT_ZERO}
        self.half = 0

    def _make(self, register, terms, half=0):
        return FloatState(register, terms)

    def _hadamard_terms(self, terms):
        r = 2 ** -0.5
        return FloatState(self.register, {k: c * r for k, c in terms.items()})

    def _weight(self, terms):
        return math.fsum(c * c for c in terms.values())

    def _renormalized(self, register, terms, p):
        s = math.sqrt(p)
        return FloatState(register, {k: c / s for k, c in terms.items()})

    def amplitude(self, label: Sequence[int]) -> float:
        return self.terms.get(tuple(label), 0.0)

    def norm_squared(self) -> float:
        return self._weight(self.terms)

    def __repr__(self):
        body = " ".join(f"{c:+.6f}|{label_str(lab)}⟩" for lab, c in sorted(self.terms.items()))
        return f"FloatState({self.register.photons}, {body})"


AnyState = PureState | FloatState


@dataclass(frozen=True, order=True)
class GhzLabel:
    """GHZ basis label ``(|m> + sign |~m>)/sqrt(2)`` with ``mask[0] == 0``."""

    mask: tuple[int, ...]
    sign: int = 1

    def __post_init__(self):
        if self.sign not in (1, -1):
            raise ValueError("sign must be +1 or -1")
        if len(self.mask) < 1 or any(b not in (0, 1) for b in self.mask):
            raise ValueError(f"bad mask {self.mask}")
        if self.mask[0] != 0:
            raise ValueError(f"non-canonical GHZ mask {self.mask}; first bit must be 0")

    @classmethod
    def canonical(cls, bits: Sequence[int], sign: int = 1) -> GhzLabel:
        bits = tuple(bits)
        if bits and bits[0]:
            bits = tuple(1 - b for b in bits)
        return cls(bits, sign)

    @classmethod
    def parse(cls, text: str) -> GhzLabel:
        mask, _, sign = text.partition(":")
        if sign not in ("+", "-"):
            raise ValueError(f"bad GHZ label {text!r}")
        return cls(tuple(int(c) for c in mask), 1 if sign == "+" else -1)

    @classmethod
    def from_index(cls, n: int, index: int, sign: int = 1) -> GhzLabel:
        """Binary numbering: bits of ``index`` are the masks of photons 2..n."""
        if not 0 <= index < 2 ** (n - 1):
            raise ValueError(f"index {index} out of range for {n} photons")
        return cls((0,) + tuple((index >> (n - 2 - k)) & 1 for k in range(n - 1)), sign)

    @property
    def n(self) -> int:
        return len(self.mask)

    @property
    def index(self) -> int:
        return int("".join(map(str, self.mask)), 2)

    def flipped_sign(self) -> GhzLabel:
        return GhzLabel(self.mask, -self.sign)

    def restrict(self, positions: Sequence[int]) -> GhzLabel:
        return GhzLabel.canonical([self.mask[k] for k in positions], self.sign)

    def __str__(self):
        return "".join(map(str, self.mask)) + (":+" if self.sign > 0 else ":-")


# three-photon ordering (Phi_0, Phi_1, Phi_2, Phi_3) where Phi_k flips photon k
THREE_PHOTON_MASKS = ((0, 0, 0), (0, 1, 1), (0, 1, 0), (0, 0, 1))


def ghz3(k: int, sign: int = 1) -> GhzLabel:
    return GhzLabel(THREE_PHOTON_MASKS[k], sign)


@dataclass(frozen=True)
class BellLabel:
    kind: str  # "phi" or "psi"
    sign: int = 1

    def __post_init__(self):
        if self.kind not in ("phi", "psi") or self.sign not in (1, -1):
            raise ValueError(f"bad Bell label {self.kind}{self.sign}")

    @classmethod
    def from_ghz(cls, label: GhzLabel) -> BellLabel:
        if label.n != 2:
            raise ValueError("Bell labels need a two-photon GHZ label")
        return cls("psi" if label.mask[1] else "phi", label.sign)

    def to_ghz(self) -> GhzLabel:
        return GhzLabel((0, 1 if self.kind == "psi" else 0), self.sign)

    def __str__(self):
        return self.kind + ("+" if self.sign > 0 else "-")


PHI_PLUS, PHI_MINUS = BellLabel("phi", 1), BellLabel("phi", -1)
PSI_PLUS, PSI_MINUS = BellLabel("psi", 1), BellLabel("psi", -1)


# -- functional API -----------------------------------------------------------

def make_ghz(n: int, label: GhzLabel, register: PhotonRegister | None = None) -> PureState:
    if n < 2:
        raise ValueError("GHZ states need at least two photons")
    if label.n != n:
        raise ValueError(f"label {label} does not describe {n} photons")
    if register is None:
        register = PhotonRegister.copy(party_names(n))
    m = label.mask
    comp = tuple(1 - b for b in m)
    return PureState.superpose(register, {m: 1, comp: label.sign})


def make_ghz_float(n: int, label: GhzLabel, register: PhotonRegister | None = None) -> FloatState:
    return make_ghz(n, label, register).to_float()


def apply_pauli(state: AnyState, photon: Tag, which: str):
    return state.pauli(photon, which)


def apply_hadamard(state: AnyState, photon: Tag):
    return state.hadamard(photon)


def measure_single(state: AnyState, photon: Tag, basis: str = "Z"):
    """All outcome branches ``(outcome, probability, post-state)``.

    Outcomes are ``"H"/"V"`` for the Z basis and ``"+"/"-"`` for X. The
    measured photon leaves the register.
    """
    return state.measure(photon, basis)


def tensor(a: AnyState, b: AnyState):
    register = a.register + b.register
    terms = {la + lb: ca * cb for la, ca in a.terms.items() for lb, cb in b.terms.items()}
    if isinstance(a, PureState) and isinstance(b, PureState):
        half = a.half + b.half
        if half == 2:
            terms = {k: c / 2 for k, c in terms.items()}
            half = 0
        return PureState(register, terms, half, check=False)
    if isinstance(a, PureState) or isinstance(b, PureState):
        raise TypeError("cannot mix exact and floating states")
    return FloatState(register, terms)


def classify_ghz(state: AnyState) -> GhzLabel | None:
    """GHZ label whose basis state equals ``state`` up to a global sign."""
    if len(state.register) < 2 or len(state.terms) != 2:
        return None
    (l0, c0), (l1, c1) = sorted(state.terms.items())
    if any(a == b for a, b in zip(l0, l1)):
        return None
    if isinstance(state, PureState):
        if abs(c0) != abs(c1):
            return None
    elif abs(abs(c0) - abs(c1)) > FLOAT_MATCH:
        return None
    # sorted order puts the first-bit-0 label first
    return GhzLabel(l0, 1 if (c0 > 0) == (c1 > 0) else -1)


def classify_bell(state: AnyState) -> BellLabel | None:
    if len(state.register) != 2:
        return None
    g = classify_ghz(state)
    return None if g is None else BellLabel.from_ghz(g)


def iter_ghz_labels(n: int, signs: Sequence[int] = (1,)) -> Iterator[GhzLabel]:
    for idx in range(2 ** (n - 1)):
        for s in signs:
            yield GhzLabel.from_index(n, idx, s)
