"""Parity-check detectors.

The cross-Kerr QND is modelled at the level the protocols use it: a probe
phase per two-photon basis label, and a nondestructive projection onto the
even span {HH, VV} or the odd span {HV, VH}. A CNOT-based parity check gives
the same statistics and serves as an independent oracle.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

from .register import AnyState, Tag


class Parity(enum.Enum):
    EVEN = "E"
    ODD = "O"

    def __str__(self):
        return self.value


EVEN, ODD = Parity.EVEN, Parity.ODD


class ProbePhase(enum.Enum):
    PLUS_THETA = "+theta"
    MINUS_THETA = "-theta"
    ZERO = "0"

    @property
    def parity(self) -> Parity:
        # the X-quadrature readout cannot tell +theta from -theta
        return ODD if self is ProbePhase.ZERO else EVEN


def probe_phase(pair: Sequence[int]) -> ProbePhase:
    """Phase picked up by the coherent probe for a two-photon basis label."""
    if len(pair) != 2:
        raise ValueError(f"probe phase needs a two-photon label, got {pair!r}")
    a, b = pair
    if a == b:
        return ProbePhase.PLUS_THETA if a == 0 else ProbePhase.MINUS_THETA
    return ProbePhase.ZERO


def _check_pair(state: AnyState, a: Tag, b: Tag) -> tuple[int, int]:
    if a == b:
        raise ValueError("parity check needs two distinct photons")
    return state.index(a), state.index(b)


def parity_project(state: AnyState, photon_a: Tag, photon_b: Tag):
    """Nondestructive parity projection of two photons.

    Returns ``[(Parity, probability, post-state), ...]`` for every outcome
    with nonzero probability. Coherence inside each span is kept and both
    photons stay in the register.
    """
    i, j = _check_pair(state, photon_a, photon_b)
    out = []
    for parity in (EVEN, ODD):
        hit = state.restrict(lambda lab: probe_phase((lab[i], lab[j])).parity is parity)
        if hit is not None:
            out.append((parity, hit[0], hit[1]))
    return out


def parity_via_cnot(state: AnyState, control: Tag, target: Tag):
    """Parity check through a CNOT, used only as a statistics oracle.

    The target is read in Z on a bookkeeping copy of the branch; after an Odd
    reading a compensating bit flip returns the target to H. Undoing the
    detector (``x`` on the target when Odd, then the CNOT again) recovers the
    post-state of :func:`parity_project`.
    """
    _check_pair(state, control, target)
    st = state.cnot(control, target)
    t = st.index(target)
    out = []
    for parity, bit in ((EVEN, 0), (ODD, 1)):
        hit = st.restrict(lambda lab, b=bit: lab[t] == b)
        if hit is None:
            continue
        p, post = hit
        if parity is ODD:
            post = post.pauli(target, "x")
        out.append((parity, p, post))
    return out


@dataclass(frozen=True)
class QndDetector:
    """Ideal QND parity gate; ``readout_error`` is reserved and must be zero."""

    readout_error: Fraction = Fraction(0)

    def __post_init__(self):
        if self.readout_error != 0:
            raise NotImplementedError("noisy parity readout is not modelled")

    def __call__(self, state: AnyState, photon_a: Tag, photon_b: Tag):
        return parity_project(state, photon_a, photon_b)
