"""Seeded Monte Carlo runs of the enumerated pipelines.

Each input product gets a branch tree from the floating-point kernel. A batch
of trials is pushed down the tree by a multinomial split at every parity check
and every measurement, using the conditional branch probabilities, so one
batch costs a handful of RNG calls instead of one per trial.

Trials are cut into fixed-size chunks. Chunk ``k`` of grid point ``i`` draws
from ``PCG64(SeedSequence(seed, spawn_key=(i, k)))``, so tallies do not depend
on how many worker threads run the chunks.
"""

from __future__ import annotations

import math
import os
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Sequence

import numpy as np

from .engine import (
    BITFLIP_BUDGET,
    PHASEFLIP_BUDGET,
    BranchRecord,
    bitflip_branches,
    link_branches,
    phaseflip_branches,
)
from .ensembles import (
    BellDiagonalEnsemble,
    GhzDiagonalEnsemble,
    PhaseEnsemble,
    conventional_round,
    link_weights,
    mepp_figures,
    phase_round,
    recycle_subsystems,
    symmetric_ensemble,
)
from .register import FLOAT_MATCH, BellLabel, GhzLabel

RNG_ID = "numpy.PCG64/SeedSequence"
CHUNK = 32768
PIPELINES = ("conventional", "recycling", "link", "phaseflip", "full-mepp")
MAX_MC_PARTIES = 8
# the phase kernel expands every kept branch in the X basis; 8 parties takes minutes
MAX_PHASE_MC_PARTIES = 7


def worker_count() -> int:
    raw = os.environ.get("GHZ_PURIFY_THREADS", "")
    try:
        n = int(raw)
    except ValueError:
        n = os.cpu_count() or 1
    return max(1, min(n, 64))


@dataclass(frozen=True)
class McConfig:
    pipeline: str
    trials: int
    seed: int
    input: object  # GhzDiagonalEnsemble, PhaseEnsemble, or a pair of ensembles for "link"
    n: int = 3
    junction: object = None
    point: int = 0

    def __post_init__(self):
        if self.pipeline not in PIPELINES:
            raise ValueError(f"unknown pipeline {self.pipeline!r}; choose from {', '.join(PIPELINES)}")
        if not isinstance(self.trials, int) or self.trials < 1:
            raise ValueError("trials must be a positive integer")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must fit in 64 unsigned bits")


@dataclass
class McEstimate:
    stats: dict[str, float]
    stderr: dict[str, float]
    trials: int
    rng: str = RNG_ID
    counts: dict = field(default_factory=dict, repr=False)


# -- branch trees ----------------------------------------------------------------

class _Leaf:
    __slots__ = ("key",)

    def __init__(self, key):
        self.key = key


def _build(records: Sequence[BranchRecord], depth: int = 0):
    if len(records) == 1 and len(records[0].steps) == depth:
        r = records[0]
        return _Leaf((r.parties, r.final))
    groups: dict = {}
    for r in records:
        if len(r.steps) <= depth:
            raise AssertionError("branch tree has a leaf on an inner node")
        groups.setdefault(r.steps[depth].outcome, []).append(r)
    probs = np.array([float(g[0].steps[depth].probability) for g in groups.values()])
    return probs / probs.sum(), [_build(g, depth + 1) for g in groups.values()]


def _descend(node, count: int, rng, tally: Counter):
    if isinstance(node, _Leaf):
        tally[node.key] += count
        return
    probs, children = node
    if len(children) == 1:
        _descend(children[0], count, rng, tally)
        return
    for child, c in zip(children, rng.multinomial(count, probs)):
        if c:
            _descend(child, int(c), rng, tally)


def _checked_tree(exact_recs, float_recs):
    """Tree from the float kernel after matching it branch by branch to the exact one."""
    if len(exact_recs) != len(float_recs):
        raise AssertionError("float kernel enumerates a different branch set")
    for e, f in zip(exact_recs, float_recs):
        if e.final != f.final or e.pattern != f.pattern or e.outcomes != f.outcomes:
            raise AssertionError(f"float branch {f.line()} differs from exact {e.line()}")
        if abs(float(e.conditional) - f.conditional) > FLOAT_MATCH:
            raise AssertionError(f"float probability drift on branch {e.line()}")
    return _build(float_recs)


@lru_cache(maxsize=None)
def bitflip_tree(n: int, la: GhzLabel, lb: GhzLabel, mode: str):
    flt = bitflip_branches(n, la, lb, False, mode)
    if n in BITFLIP_BUDGET:
        return _checked_tree(bitflip_branches(n, la, lb, True, mode), flt)
    return _build(flt)


@lru_cache(maxsize=None)
def link_tree(a_parties, la, b_parties, lb, junctions):
    return _checked_tree(link_branches(a_parties, la, b_parties, lb, junctions, True),
                         link_branches(a_parties, la, b_parties, lb, junctions, False))


@lru_cache(maxsize=None)
def phase_tree(n: int, sa: int, sb: int):
    flt = phaseflip_branches(n, sa, sb, False)
    if n in PHASEFLIP_BUDGET:
        return _checked_tree(phaseflip_branches(n, sa, sb, True), flt)
    return _build(flt)


# -- sampling ------------------------------------------------------------------

def _rng(seed: int, point: int, chunk: int):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(point, chunk))))


def _products(items_a, items_b):
    keys, probs = [], []
    for la, wa in items_a:
        for lb, wb in items_b:
            keys.append((la, lb))
            probs.append(float(wa * wb))
    probs = np.array(probs)
    return keys, probs / probs.sum()


def _sample_products(rng, m, items_a, items_b, tree_of) -> Counter:
    keys, probs = _products(items_a, items_b)
    tally: Counter = Counter()
    for (la, lb), c in zip(keys, rng.multinomial(m, probs)):
        if c:
            _descend(tree_of(la, lb), int(c), rng, tally)
    return tally


def _junction_of(pa, pb):
    (j,) = sorted(set(pa) & set(pb))
    return j


def _link_queue(rng, pair_tally: Counter, tally: Counter):
    """Link recycled pairs in random arrival order, always across different party pairs."""
    arrivals = [key for key in sorted(pair_tally, key=str) for _ in range(pair_tally[key])]
    order = rng.permutation(len(arrivals))
    waiting: list = []
    combos: Counter = Counter()
    for k in order:
        pa, la = arrivals[k]
        if waiting and waiting[0][0] != pa:
            pw, lw = waiting.pop(0)
            combos[(pw, lw, pa, la)] += 1
        else:
            waiting.append((pa, la))
    tally["leftover"] += len(waiting)
    for (pw, lw, pa, la), c in sorted(combos.items(), key=str):
        sub: Counter = Counter()
        _descend(link_tree(pw, lw, pa, la, (_junction_of(pw, pa),)), c, rng, sub)
        for (parties, final), cnt in sub.items():
            tally[("link", parties, final)] += cnt


def _chunk_tally(cfg: McConfig, chunk: int, m: int) -> Counter:
    rng = _rng(cfg.seed, cfg.point, chunk)
    p = cfg.pipeline
    if p in ("conventional", "recycling", "full-mepp"):
        e = cfg.input
        items = list(e.items())
        mode = "full" if p == "full-mepp" else p
        tally = _sample_products(rng, m, items, items,
                                 lambda la, lb: bitflip_tree(e.n, la, lb, mode))
        if p == "full-mepp":
            pairs = Counter({(k[0], k[1]): c for k, c in tally.items()
                             if isinstance(k[1], GhzLabel) and len(k[0]) == 2})
            _link_queue(rng, pairs, tally)
        return tally
    if p == "link":
        a, b = cfg.input
        js = _junctions(cfg)
        return _sample_products(rng, m, list(a.items()), list(b.items()),
                                lambda la, lb: link_tree(a.parties, la, b.parties, lb, js))
    ph: PhaseEnsemble = cfg.input
    items = [(s, w) for s, w in ((1, ph.p0), (-1, ph.p1)) if w]
    return _sample_products(rng, m, items, items, lambda sa, sb: phase_tree(cfg.n, sa, sb))


def _junctions(cfg: McConfig) -> tuple:
    j = cfg.junction
    if j is None:
        a, b = cfg.input
        return tuple(sorted(set(a.parties) & set(b.parties)))
    return (j,) if isinstance(j, str) else tuple(j)


def _validate(cfg: McConfig):
    p = cfg.pipeline
    if p in ("conventional", "recycling", "full-mepp"):
        e = cfg.input
        if not isinstance(e, GhzDiagonalEnsemble) or not e.normalized or e.total != 1:
            raise ValueError(f"{p} needs a normalized GHZ-diagonal ensemble")
        if not 2 <= e.n <= MAX_MC_PARTIES:
            raise ValueError(f"Monte Carlo supports 2..{MAX_MC_PARTIES} parties")
        if p == "recycling" and e.n < 3:
            raise ValueError("recycling needs at least three parties")
        if p == "full-mepp" and e.n != 3:
            raise ValueError("the full scheme is defined for three parties")
    elif p == "link":
        a, b = cfg.input
        link_weights(a, b, _junctions(cfg))  # raises on bad junctions or inputs
    else:
        if not isinstance(cfg.input, PhaseEnsemble):
            raise ValueError("phaseflip needs a PhaseEnsemble input")
        if not 2 <= cfg.n <= MAX_PHASE_MC_PARTIES:
            raise ValueError(f"phase-flip Monte Carlo supports 2..{MAX_PHASE_MC_PARTIES} parties")


def mc_tally(cfg: McConfig) -> Counter:
    _validate(cfg)
    sizes = [min(CHUNK, cfg.trials - k) for k in range(0, cfg.trials, CHUNK)]
    jobs = list(enumerate(sizes))
    workers = min(worker_count(), len(jobs))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda job: _chunk_tally(cfg, *job), jobs))
    else:
        parts = [_chunk_tally(cfg, *job) for job in jobs]
    total: Counter = Counter()
    for part in parts:
        total.update(part)
    return total


# -- estimates -----------------------------------------------------------------

def _ratio(k, m):
    """Binomial proportion and its standard error."""
    if m == 0:
        return 0.0, 0.0
    f = k / m
    return f, math.sqrt(max(f * (1 - f), 0.0) / m)


def _label_key(final: GhzLabel) -> str:
    if final.n == 2:
        return str(BellLabel.from_ghz(final))
    return str(final)


def mc_run(cfg: McConfig) -> McEstimate:
    tally = mc_tally(cfg)
    n = cfg.trials
    stats: dict[str, float] = {}
    se: dict[str, float] = {}

    def put(key, k, m):
        if m:  # a fidelity over an empty output is undefined
            stats[key], se[key] = _ratio(k, m)

    kept = {key: c for key, c in tally.items()
            if isinstance(key, tuple) and len(key) == 2 and isinstance(key[1], GhzLabel)}
    if cfg.pipeline == "full-mepp":
        _full_mepp_stats(tally, n, put, stats, se)
    elif cfg.pipeline == "recycling":
        by_parties: Counter = Counter()
        target: Counter = Counter()
        for (parties, final), c in kept.items():
            by_parties[parties] += c
            if not any(final.mask) and final.sign > 0:
                target[parties] += c
        put("yield", sum(by_parties.values()), n)
        for parties in sorted(by_parties):
            tag = "".join(parties)
            put(f"P:{tag}", by_parties[parties], n)
            put(f"F:{tag}", target[parties], by_parties[parties])
    else:
        total_kept = sum(kept.values())
        put("yield", total_kept, n)
        for (_, final), c in sorted(kept.items(), key=lambda kv: kv[0][1]):
            put(f"F:{_label_key(final)}", c, total_kept)
    counts = {"/".join(map(str, k)) if isinstance(k, tuple) else str(k): v for k, v in tally.items()}
    return McEstimate(stats, se, n, RNG_ID, counts)


def _full_mepp_stats(tally: Counter, n: int, put, stats, se):
    conv = conv_t = pairs = phi = linked = linked_t = 0
    for key, c in tally.items():
        if key == "leftover":
            continue
        if key[0] == "link":
            _, parties, final = key
            if isinstance(final, GhzLabel):
                linked += c
                linked_t += c if final == GhzLabel((0, 0, 0)) else 0
            continue
        parties, final = key
        if not isinstance(final, GhzLabel):
            continue
        if len(parties) == 3:
            conv += c
            conv_t += c if final == GhzLabel((0, 0, 0)) else 0
        else:
            pairs += c
            phi += c if final == GhzLabel((0, 0)) else 0
    put("Y_c", conv, n)
    put("P_3to2", pairs, n)
    # pairs still queued when the run ends would be linked in the next batch;
    # dropping them would bias the long-run link rate low by O(sqrt(n))
    carried = tally.get("leftover", 0) / 2
    stats["Y_2to3"] = (linked + carried) / n
    se["Y_2to3"] = se["P_3to2"] / 2
    y_e = (conv + linked + carried) / n
    stats["Y_e"] = y_e
    # per-trial value is 1 for a conventional output and 1/2 for a recycled pair
    second = (conv + pairs / 4) / n
    se["Y_e"] = math.sqrt(max(second - ((conv + pairs / 2) / n) ** 2, 0.0) / n)
    put("F_c", conv_t, conv)
    put("F_2", phi, pairs)
    put("F_2to3", linked_t, linked)
    put("F_e", conv_t + linked_t, conv + linked)


def exact_statistics(cfg: McConfig) -> dict[str, Fraction]:
    """Closed-form values for every statistic :func:`mc_run` reports."""
    p = cfg.pipeline
    out: dict[str, Fraction] = {}
    if p == "conventional":
        ens, y = conventional_round(cfg.input)
        out["yield"] = y
        for lab, w in ens.items():
            out[f"F:{_label_key(lab)}"] = w
    elif p == "recycling":
        subs = recycle_subsystems(cfg.input)
        out["yield"] = sum((s.total for s in subs.values()), Fraction(0))
        for parties, s in subs.items():
            tag = "".join(parties)
            out[f"P:{tag}"] = s.total
            out[f"F:{tag}"] = s.fidelity()
    elif p == "link":
        a, b = cfg.input
        w = link_weights(a, b, _junctions(cfg))
        out["yield"] = w.total
        for lab, x in w.normalize().items():
            out[f"F:{_label_key(lab)}"] = x
    elif p == "phaseflip":
        ph, y = phase_round(cfg.input)
        zero = (0,) * cfg.n
        out["yield"] = y
        for sign, x in ((1, ph.p0), (-1, ph.p1)):
            if x:
                out[f"F:{GhzLabel(zero, sign)}"] = x
    else:
        cp = mepp_figures(cfg.input)
        for key in ("Y_c", "P_3to2", "Y_2to3", "Y_e", "F_c", "F_2", "F_2to3", "F_e"):
            if getattr(cp, key) is not None:
                out[key] = getattr(cp, key)
    return out


@dataclass(frozen=True)
class Deviation:
    key: str
    estimate: float
    stderr: float
    exact: Fraction
    sigmas: float

    @property
    def ok(self) -> bool:
        return self.sigmas <= 3


def compare(est: McEstimate, exact: dict[str, Fraction]) -> list[Deviation]:
    """Distance of each estimate from its exact value in standard errors.

    A zero standard error demands an exact match (up to float rounding).
    """
    out = []
    for key in sorted(set(est.stats) | set(exact)):
        x = est.stats.get(key, 0.0)
        s = est.stderr.get(key, 0.0)
        v = exact.get(key, Fraction(0))
        diff = abs(x - float(v))
        if s > 0:
            z = diff / s
        else:
            z = 0.0 if diff <= FLOAT_MATCH else math.inf
        out.append(Deviation(key, x, s, v, z))
    return out


def sweep_config(pipeline: str, value, trials: int, seed: int, n: int = 3, point: int = 0) -> McConfig:
    """Config for one symmetric grid point.

    Bit-flip pipelines take the target fidelity F0, "phaseflip" takes p0 and
    "link" takes the pair fidelity shared by an AB and an AC pair.
    """
    if pipeline == "phaseflip":
        inp = PhaseEnsemble.from_p0(value)
    elif pipeline == "link":
        f = Fraction(value) if not isinstance(value, float) else Fraction(repr(value))
        pair = {BellLabel("phi"): f, BellLabel("psi"): 1 - f}
        inp = (BellDiagonalEnsemble.from_bell(pair, ("A", "B")),
               BellDiagonalEnsemble.from_bell(pair, ("A", "C")))
    else:
        inp = symmetric_ensemble(value, n)
    return McConfig(pipeline, trials, seed, inp, n=n, point=point)


def mc_sweep(grid: Sequence, pipeline: str, trials: int, seed: int, n: int = 3) -> list[tuple[object, McEstimate]]:
    grid = list(grid)
    if not grid:
        raise ValueError("empty grid")
    return [(v, mc_run(sweep_config(pipeline, v, trials, seed, n, point=i)))
            for i, v in enumerate(grid)]

