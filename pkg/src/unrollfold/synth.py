"""Synthetic hairpin-style structures for desk-scale training runs."""

from __future__ import annotations

import numpy as np

from .core import RnaSequence
from .ioformats import StructureRecord

_STEM_PAIRS = ["GC", "CG", "AU", "UA", "GU", "UG"]
_STEM_P = [0.3, 0.3, 0.15, 0.15, 0.05, 0.05]


def _stem(rng, n):
    return [_STEM_PAIRS[k] for k in rng.choice(len(_STEM_PAIRS), size=n, p=_STEM_P)]


def _place_hairpin(bases, pairs, start, stem, loop, rng):
    for k, (a, b) in enumerate(_stem(rng, stem)):
        i, j = start + k, start + 2 * stem + loop - 1 - k
        bases[i], bases[j] = a, b
        pairs.append((i, j))


def hairpin(rng: np.random.Generator, length=(20, 36), stem=(4, 7), loop=(4, 8)) -> StructureRecord:
    """One stem-loop at a random offset; flanks and loop are random bases."""
    L = int(rng.integers(length[0], length[1] + 1))
    s = int(rng.integers(stem[0], stem[1] + 1))
    lp = int(rng.integers(loop[0], loop[1] + 1))
    span = 2 * s + lp
    L = max(L, span)
    start = int(rng.integers(0, L - span + 1))
    bases = list(rng.choice(list("AUCG"), size=L))
    pairs: list = []
    _place_hairpin(bases, pairs, start, s, lp, rng)
    return StructureRecord(RnaSequence("".join(bases), family="hairpin"), frozenset(pairs))


def double_hairpin(rng: np.random.Generator, stem=(4, 6), loop=(4, 6)) -> StructureRecord:
    """Two stem-loops side by side with a short random linker."""
    parts = []
    for _ in range(2):
        s = int(rng.integers(stem[0], stem[1] + 1))
        parts.append((s, int(rng.integers(loop[0], loop[1] + 1))))
    linker = int(rng.integers(1, 5))
    lead = int(rng.integers(0, 4))
    L = lead + sum(2 * s + lp for s, lp in parts) + linker + int(rng.integers(0, 4))
    bases = list(rng.choice(list("AUCG"), size=L))
    pairs: list = []
    pos = lead
    for s, lp in parts:
        _place_hairpin(bases, pairs, pos, s, lp, rng)
        pos += 2 * s + lp + linker
    return StructureRecord(RnaSequence("".join(bases), family="double"), frozenset(pairs))


def hairpin_dataset(n: int, seed: int = 0, double_fraction: float = 0.2) -> list[StructureRecord]:
    """``n`` records mixing single hairpins with a smaller double-hairpin family."""
    rng = np.random.default_rng(seed)
    out = []
    for k in range(n):
        rec = double_hairpin(rng) if rng.random() < double_fraction else hairpin(rng)
        out.append(StructureRecord(RnaSequence(rec.seq.bases, f"syn{seed}_{k}", rec.seq.family),
                                   rec.pairs, "synthetic", ""))
    return out
