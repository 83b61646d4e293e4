"""Sequences, pair matrices, the constraint mask and structure checks.

Indices are 0-based everywhere in this module.  A structure is held either
densely as an ``L x L`` numpy array or sparsely as a frozenset of ``(i, j)``
tuples with ``i < j``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

CANONICAL = "AUCG"
CANONICAL_PAIRS = frozenset({"AU", "UA", "GC", "CG", "GU", "UG"})
MIN_LOOP = 4  # pairs need |i - j| >= MIN_LOOP

PairSet = frozenset  # frozenset[tuple[int, int]]


@dataclass(frozen=True)
class RnaSequence:
    """An RNA primary structure.

    Bases outside ``AUCG`` (``N``, ``R``, ``Y`` ...) are kept as given and
    reported by :attr:`ambiguous`; they never pair.
    """

    bases: str
    id: str = ""
    family: str | None = None

    def __post_init__(self):
        if len(self.bases) < 1:
            raise ValueError("RnaSequence needs at least one base")
        object.__setattr__(self, "bases", self.bases.upper())

    def __len__(self) -> int:
        return len(self.bases)

    def __str__(self) -> str:
        return self.bases

    @property
    def ambiguous(self) -> np.ndarray:
        return np.array([b not in CANONICAL for b in self.bases], dtype=bool)


@dataclass(frozen=True)
class Violation:
    constraint: str  # "i" (pair type), "ii" (sharp loop), "iii" (overlap), "sym"
    indices: tuple[int, ...]
    message: str = field(default="", compare=False)


def as_sequence(seq) -> RnaSequence:
    return seq if isinstance(seq, RnaSequence) else RnaSequence(str(seq))


def build_constraint_mask(seq) -> np.ndarray:
    """Binary mask of cells allowed to pair: canonical pair type and ``|i-j| >= 4``."""
    bases = as_sequence(seq).bases
    L = len(bases)
    arr = np.frombuffer(bases.encode("ascii"), dtype=np.uint8)
    mask = np.zeros((L, L), dtype=np.float64)
    for pair in CANONICAL_PAIRS:
        a, b = (ord(c) for c in pair)
        mask += np.outer(arr == a, arr == b)
    idx = np.arange(L)
    mask[np.abs(idx[:, None] - idx[None, :]) < MIN_LOOP] = 0.0
    return mask


def transform_T(Ahat: np.ndarray, M: np.ndarray) -> np.ndarray:
    """Square, symmetrise and mask a free matrix: ``0.5 (Ahat² + Ahat²ᵀ) ∘ M``."""
    Ahat = np.asarray(Ahat, dtype=np.float64)
    if Ahat.shape != np.shape(M):
        raise ValueError(f"shape mismatch: {Ahat.shape} vs {np.shape(M)}")
    sq = Ahat * Ahat
    return 0.5 * (sq + sq.T) * M


def pairs_to_matrix(pairs: Iterable[tuple[int, int]], L: int) -> np.ndarray:
    A = np.zeros((L, L))
    for i, j in pairs:
        A[i, j] = A[j, i] = 1.0
    return A


def matrix_to_pairs(A: np.ndarray) -> frozenset:
    """Upper-triangle nonzero cells of a binary matrix as a pair set."""
    i, j = np.nonzero(np.triu(np.asarray(A), k=1))
    return frozenset(zip(i.tolist(), j.tolist()))


def validate_structure(A: np.ndarray, seq) -> list[Violation]:
    """List every way a binary pair matrix breaks the structure constraints.

    An empty list means ``A`` is symmetric, pairs only canonical bases, has no
    sharp loops and is a matching.
    """
    seq = as_sequence(seq)
    A = np.asarray(A)
    L = len(seq)
    if A.shape != (L, L):
        raise ValueError(f"structure shape {A.shape} does not match sequence length {L}")
    out: list[Violation] = []
    asym = np.argwhere(np.triu(A != A.T, k=1))
    for i, j in asym:
        out.append(Violation("sym", (int(i), int(j)), "asymmetric entry"))
    bad = np.argwhere((A != 0) & (A != 1))
    for i, j in bad:
        out.append(Violation("binary", (int(i), int(j)), f"entry {A[i, j]!r} not in {{0,1}}"))
    for i, j in np.argwhere(np.triu(A != 0)):
        i, j = int(i), int(j)
        if j - i < MIN_LOOP:
            out.append(Violation("ii", (i, j), f"sharp loop |{i}-{j}| < {MIN_LOOP}"))
        pair = seq.bases[i] + seq.bases[j]
        if pair not in CANONICAL_PAIRS:
            out.append(Violation("i", (i, j), f"non-canonical pair {pair}"))
    rows = (A != 0).sum(axis=1)
    for i in np.nonzero(rows > 1)[0]:
        out.append(Violation("iii", (int(i),), f"base {int(i)} pairs {int(rows[i])} times"))
    return out


def is_pseudoknotted(pairs: Iterable[tuple[int, int]]) -> bool:
    """True iff two pairs cross (``i < k < j < l``)."""
    ps = sorted((min(p), max(p)) for p in pairs)
    for a, (i, j) in enumerate(ps):
        for k, l in ps[a + 1:]:
            if k >= j:
                break
            if j < l:
                return True
    return False


def round_structure(A: np.ndarray, M: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Round a relaxed pair matrix to a valid binary structure.

    Cells outside the mask or below ``threshold`` are dropped; the rest are
    accepted greedily by descending value (ties: smaller ``(i, j)`` first),
    skipping any cell whose row or column is already taken.
    """
    A = np.asarray(A, dtype=np.float64)
    L = A.shape[0]
    sym = 0.5 * (A + A.T) * M
    iu, ju = np.triu_indices(L, k=1)
    vals = sym[iu, ju]
    keep = vals >= threshold
    iu, ju, vals = iu[keep], ju[keep], vals[keep]
    # lexsort: last key is primary
    order = np.lexsort((ju, iu, -vals))
    used = np.zeros(L, dtype=bool)
    out = np.zeros((L, L))
    for o in order:
        i, j = iu[o], ju[o]
        if used[i] or used[j]:
            continue
        used[i] = used[j] = True
        out[i, j] = out[j, i] = 1.0
    return out
