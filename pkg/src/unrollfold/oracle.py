"""Exact decoders used to check the relaxed solver on small instances.

Both maximise ``sum over pairs (U[i, j] - s)`` over matchings on mask-allowed
cells, which equals ``0.5 <U - s, A>`` for the symmetric binary ``A``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import MIN_LOOP

MAX_EXACT_LEN = 16


@dataclass
class OracleResult:
    pairs: frozenset
    objective: float
    nodes_explored: int = 0


def _weights(U, s, M):
    U = np.asarray(U, dtype=np.float64)
    M = np.asarray(M)
    W = 0.5 * ((U - s) + (U - s).T)
    W[M == 0] = 0.0
    return W


def exact_decode(U, s: float, M) -> OracleResult:
    """Globally optimal matching by branch and bound (``L <= 16``).

    Bases are decided left to right: leave ``i`` unpaired, or pair it with a
    later free ``j`` of positive weight.  The bound adds half of each free
    base's best remaining positive weight.  Only strict improvements replace
    the incumbent, so among equal optima the first in enumeration order
    (unpaired before paired, smaller partner first) wins.
    """
    W = _weights(U, s, M)
    L = W.shape[0]
    if L > MAX_EXACT_LEN:
        raise ValueError(f"exact_decode enumerates matchings only up to L={MAX_EXACT_LEN}, got {L}")
    cand = [[j for j in range(i + 1, L) if W[i, j] > 0] for i in range(L)]
    Wpos = np.where(W > 0, W, 0.0)

    best_val = 0.0
    best_pairs: list = []
    nodes = 0
    free = np.ones(L, dtype=bool)
    chosen: list = []

    def bound(i):
        idx = np.nonzero(free)[0]
        idx = idx[idx >= i]
        if idx.size < 2:
            return 0.0
        sub = Wpos[np.ix_(idx, idx)]
        return 0.5 * float(sub.max(axis=1).sum())

    def search(i, val):
        nonlocal best_val, best_pairs, nodes
        nodes += 1
        while i < L and not free[i]:
            i += 1
        if i >= L:
            if val > best_val:
                best_val, best_pairs = val, list(chosen)
            return
        if val + bound(i) <= best_val:
            return
        free[i] = False
        search(i + 1, val)
        for j in cand[i]:
            if free[j]:
                free[j] = False
                chosen.append((i, j))
                search(i + 1, val + W[i, j])
                chosen.pop()
                free[j] = True
        free[i] = True

    search(0, 0.0)
    return OracleResult(frozenset(best_pairs), float(best_val), nodes)


def nested_decode(U, s: float, M) -> OracleResult:
    """Best pseudoknot-free matching by the O(L³) base-pair maximisation recursion.

    ``N[i][j] = max(N[i][j-1], max_k N[i][k-1] + w(k, j) + N[k+1][j-1])``;
    traceback prefers leaving ``j`` unpaired on ties, then the smallest ``k``.
    """
    W = _weights(U, s, M)
    L = W.shape[0]
    N = np.zeros((L + 1, L + 1))  # N[i, j+1] covers the closed span i..j

    def n(i, j):
        return 0.0 if j < i else N[i, j + 1]

    for span in range(MIN_LOOP + 1, L + 1):
        for i in range(0, L - span + 1):
            j = i + span - 1
            best = n(i, j - 1)
            for k in range(i, j - MIN_LOOP + 1):
                if W[k, j] > 0:
                    v = n(i, k - 1) + W[k, j] + n(k + 1, j - 1)
                    if v > best:
                        best = v
            N[i, j + 1] = best

    pairs = []
    stack = [(0, L - 1)]
    while stack:
        i, j = stack.pop()
        if j - i < MIN_LOOP:
            continue
        target = n(i, j)
        if target == n(i, j - 1):
            stack.append((i, j - 1))
            continue
        for k in range(i, j - MIN_LOOP + 1):
            if W[k, j] > 0 and n(i, k - 1) + W[k, j] + n(k + 1, j - 1) == target:
                pairs.append((k, j))
                stack.append((i, k - 1))
                stack.append((k + 1, j - 1))
                break
    return OracleResult(frozenset(pairs), float(n(0, L - 1)), 0)


def crossing_landscape(s: float = 0.0):
    """Scores that reward two crossing pairs ``(0, 7)`` and ``(4, 12)`` by 5 each.

    Overlapping alternatives ``(0, 12)`` and ``(0, 9)`` are worth 4.  Returns
    ``(sequence, U)``; the best matching takes both crossing pairs (10) while
    any nested structure holds at most one rewarded pair (5).
    """
    # positions 0,4 are G; 7,9,12 are C
    seq = "GAAAGAACACAAC"
    L = len(seq)
    U = np.full((L, L), s - 1.0)
    for (i, j), v in {(0, 7): 5.0, (4, 12): 5.0, (0, 12): 4.0, (0, 9): 4.0}.items():
        U[i, j] = U[j, i] = s + v
    return seq, U


def random_landscape(rng: np.random.Generator, L: int, s: float = float(np.log(9.0)),
                     density: float = 0.3):
    """A random sequence with a symmetric score matrix for solver-vs-oracle trials.

    A random fraction ``density`` of the allowed cells gets a score ``U - s``
    drawn uniformly from ``(0.5, 4)``; every other cell sits at ``U - s = -2``.
    """
    seq = "".join(rng.choice(list("AUCG"), size=L))
    U = np.full((L, L), s - 2.0)
    iu, ju = np.triu_indices(L, k=1)
    hot = rng.random(iu.size) < density
    vals = rng.uniform(0.5, 4.0, size=iu.size)
    U[iu[hot], ju[hot]] = s + vals[hot]
    U[ju[hot], iu[hot]] = s + vals[hot]
    return seq, U


@dataclass
class TrialSummary:
    ratios: np.ndarray
    target: float
    pass_rate: float

    def quantiles(self, qs=(0, 5, 10, 25, 50)) -> dict:
        return {q: float(np.percentile(self.ratios, q)) for q in qs}


def solver_trials(trials: int = 200, seed: int = 7, min_len: int = 6, max_len: int = 12,
                  density: float = 0.3, hyper=None, target: float = 0.95) -> TrialSummary:
    """Rounded convergent-solver objective over the exact optimum on random landscapes.

    ``hyper`` defaults to the standard post-processing parameters with the
    sparsity weight set to 0, so both sides maximise the same objective.  A
    trial with optimum 0 counts as ratio 1.
    """
    from .core import build_constraint_mask
    from .ppnet import PpParams, pp_solve_convergent

    if hyper is None:
        hyper = PpParams(rho=0.0)
    if not 1 <= min_len <= max_len <= MAX_EXACT_LEN:
        raise ValueError(f"need 1 <= min_len <= max_len <= {MAX_EXACT_LEN}")
    rng = np.random.default_rng(seed)
    ratios = np.empty(trials)
    for t in range(trials):
        L = int(rng.integers(min_len, max_len + 1))
        seq, U = random_landscape(rng, L, hyper.s, density)
        M = build_constraint_mask(seq)
        best = exact_decode(U, hyper.s, M).objective
        got = pp_solve_convergent(U, M, hyper).objective
        ratios[t] = 1.0 if best == 0 else got / best
    return TrialSummary(ratios, target, float(np.mean(ratios >= target)) if trials else float("nan"))
