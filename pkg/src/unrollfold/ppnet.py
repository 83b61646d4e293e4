"""Primal-dual post-processing of a pair score matrix.

Two entry points share the same cell:

* :func:`pp_unroll` runs a fixed number of cells with the smoothed sign and
  the ``min(Ahat, 1)`` clip.  Given autodiff nodes it is differentiable in the
  scores and in the learnable parameters.
* :func:`pp_solve_convergent` iterates hard-sign cells on plain arrays until
  the pair matrix stops moving, then rounds to a valid structure.

The cell body is written once against a tiny op namespace so the numpy and
autodiff paths cannot drift apart.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy.special import expit

from . import autodiff as ad
from .core import matrix_to_pairs, round_structure

log = logging.getLogger(__name__)

LEARNABLE = ("w", "s", "alpha", "beta", "gamma_alpha", "gamma_beta", "rho")


@dataclass(frozen=True)
class PpParams:
    w: float = 1.0
    s: float = math.log(9.0)
    alpha: float = 0.01
    beta: float = 0.1
    gamma_alpha: float = 0.99
    gamma_beta: float = 0.99
    rho: float = 1.0
    T: int = 20
    k: float = 10.0

    def __post_init__(self):
        if self.T < 1 or int(self.T) != self.T:
            raise ValueError("T must be a positive integer")
        if self.k <= 0:
            raise ValueError("softsign temperature k must be positive")

    def learnable(self) -> dict[str, float]:
        return {n: float(getattr(self, n)) for n in LEARNABLE}

    def to_nodes(self, requires_grad: bool = True) -> dict[str, ad.Node]:
        make = ad.leaf if requires_grad else ad.const
        return {n: make(v) for n, v in self.learnable().items()}

    def replace(self, **kw) -> "PpParams":
        d = asdict(self)
        d.update(kw)
        return PpParams(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PpParams":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class PpState:
    lam: object  # (L,) dual
    A: object
    Ahat: object
    t: int = 0


# ------------------------------------------------------------------ op namespaces

class _NumpyOps:
    @staticmethod
    def softsign(x, k):
        return expit(k * x)

    @staticmethod
    def sign(x):
        return (x > 0).astype(np.float64)

    sigmoid = staticmethod(expit)
    abs_ = staticmethod(np.abs)

    @staticmethod
    def relu(x):
        return np.maximum(x, 0.0)

    @staticmethod
    def clip_max1(x):
        return np.minimum(x, 1.0)

    @staticmethod
    def row_sum(x):
        return x.sum(axis=1)

    @staticmethod
    def outer_ones(v, n):
        return np.repeat(v[:, None], n, axis=1)

    @staticmethod
    def transpose(x):
        return x.T

    @staticmethod
    def powi(x, n):
        return x ** n


class _NodeOps:
    softsign = staticmethod(ad.softsign)
    sigmoid = staticmethod(ad.sigmoid)
    abs_ = staticmethod(ad.abs_)
    relu = staticmethod(ad.relu)
    clip_max1 = staticmethod(ad.clip_max1)
    row_sum = staticmethod(ad.row_sum)
    outer_ones = staticmethod(ad.outer_ones)
    transpose = staticmethod(ad.transpose)
    powi = staticmethod(ad.powi)

    @staticmethod
    def sign(x):
        # hard sign carries no gradient
        return ad.const((ad.const(x).value > 0).astype(np.float64))


def _ops_for(*xs):
    return _NodeOps if any(isinstance(x, ad.Node) for x in xs) else _NumpyOps


def _phi_values(phi):
    """Accept PpParams or a mapping of learnable values/nodes."""
    if isinstance(phi, PpParams):
        return phi.learnable()
    return phi


def _T(op, Ahat, M):
    sq = Ahat * Ahat
    return 0.5 * (sq + op.transpose(sq)) * M


# ------------------------------------------------------------------ cell

def pp_init(U, M, phi, k: float = 10.0):
    """Gate the scores and build the starting state.

    Returns ``(U_gated, state)`` with ``U_gated = softsign(U - s) * U``,
    ``Ahat_0 = softsign(U - s) * sigmoid(U)`` (both gates use the incoming
    ``U``), ``A_0 = T(Ahat_0)`` and ``lam_0 = w * relu(A_0 1 - 1)``.
    """
    p = _phi_values(phi)
    op = _ops_for(U, *p.values())
    if op is _NodeOps:
        U, M = ad.const(U), ad.const(M).value
    gate = op.softsign(U - p["s"], k)
    U_gated = gate * U
    Ahat = gate * op.sigmoid(U)
    A = _T(op, Ahat, M)
    lam = p["w"] * op.relu(op.row_sum(A) - 1.0)
    return U_gated, PpState(lam=lam, A=A, Ahat=Ahat, t=0)


def ppcell_step(U, M, state: PpState, phi, mode: str = "soft", k: float = 10.0,
                clip: bool = True) -> PpState:
    """One primal gradient step, soft threshold, clip and dual ascent.

    ``U`` is the score the primal gradient sees (``G = U/2 - (lam * sign(A1-1)) 1ᵀ``).
    ``mode="hard"`` uses the exact 0/1 sign, ``"soft"`` the smoothed one.
    """
    if mode not in ("soft", "hard"):
        raise ValueError(f"mode must be 'soft' or 'hard', not {mode!r}")
    p = _phi_values(phi)
    op = _ops_for(U, state.Ahat, state.lam, *p.values())
    if op is _NodeOps:
        U = ad.const(U)
        M = ad.const(M).value
    L = M.shape[0]
    t = state.t
    A, Ahat, lam = state.A, state.Ahat, state.lam

    excess = op.row_sum(A) - 1.0
    gate = op.softsign(excess, k) if mode == "soft" else op.sign(excess)
    G = 0.5 * U - op.outer_ones(lam * gate, L)
    step_a = p["alpha"] * op.powi(p["gamma_alpha"], t)
    Adot = Ahat + step_a * (Ahat * M * (G + op.transpose(G)))
    Ahat = op.relu(op.abs_(Adot) - p["rho"] * step_a)
    if clip:
        Ahat = op.clip_max1(Ahat)
    A = _T(op, Ahat, M)
    lam = lam + p["beta"] * op.powi(p["gamma_beta"], t) * op.relu(op.row_sum(A) - 1.0)
    return PpState(lam=lam, A=A, Ahat=Ahat, t=t + 1)


def pp_unroll(U, M, phi, T: int | None = None, k: float | None = None,
              return_states: bool = False):
    """Run ``T`` soft cells and return the trajectory ``[A_1, ..., A_T]``.

    ``phi`` is a :class:`PpParams` (plain forward pass) or a mapping of the
    learnable names to autodiff nodes; in the latter case ``T`` and ``k``
    must be given or default to 20 and 10.
    """
    if isinstance(phi, PpParams):
        T = phi.T if T is None else T
        k = phi.k if k is None else k
    T = 20 if T is None else T
    k = 10.0 if k is None else k
    Mv = M.value if isinstance(M, ad.Node) else np.asarray(M, dtype=np.float64)
    L = Mv.shape[0]
    if not Mv.any():
        zero = np.zeros((L, L))
        traj = [ad.const(zero) if _ops_for(U, *_phi_values(phi).values()) is _NodeOps
                else zero.copy() for _ in range(T)]
        return (traj, []) if return_states else traj
    U_gated, state = pp_init(U, Mv, phi, k)
    traj, states = [], [state]
    for _ in range(T):
        state = ppcell_step(U_gated, Mv, state, phi, mode="soft", k=k)
        traj.append(state.A)
        states.append(state)
    return (traj, states) if return_states else traj


# ------------------------------------------------------------------ objective & solver

def objective_value(U, s, A, rho=0.0, Ahat=None) -> float:
    """``0.5 <U - s, A> - rho * sum|Ahat|``."""
    U = np.asarray(U, dtype=np.float64)
    A = np.asarray(A, dtype=np.float64)
    val = 0.5 * float(((U - s) * A).sum())
    if rho and Ahat is not None:
        val -= rho * float(np.abs(Ahat).sum())
    return val


@dataclass
class SolveResult:
    A: np.ndarray  # binary, valid
    converged: bool
    iterations: int
    objective: float  # of the rounded structure, rho = 0

    @property
    def pairs(self) -> frozenset:
        return matrix_to_pairs(self.A)


def pp_solve_convergent(U, M, hyper: PpParams | None = None, max_iter: int = 1000,
                        tol: float = 1e-4, threshold: float = 0.5) -> SolveResult:
    """Hard-sign primal-dual iterations on ``0.5 (U - s)`` until ``A`` settles.

    Stops when ``max|A_{t+1} - A_t| < tol``.  Without convergence the iterate
    with the best relaxed objective is rounded and ``converged`` is False.
    """
    hyper = hyper or PpParams()
    U = np.asarray(U, dtype=np.float64)
    M = np.asarray(M, dtype=np.float64)
    L = U.shape[0]
    if not M.any():
        return SolveResult(np.zeros((L, L)), True, 0, 0.0)
    phi = hyper.learnable()
    _, state = pp_init(U, M, phi, hyper.k)
    score = U - hyper.s
    best_val, best_A = -np.inf, state.A
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        new = ppcell_step(score, M, state, phi, mode="hard")
        delta = float(np.abs(new.A - state.A).max())
        state = new
        val = objective_value(U, hyper.s, state.A, hyper.rho, state.Ahat)
        if val > best_val:
            best_val, best_A = val, state.A
        if delta < tol:
            converged = True
            break
    final = state.A if converged else best_A
    if not converged:
        log.warning("primal-dual solver did not converge in %d iterations", max_iter)
    B = round_structure(final, M, threshold)
    return SolveResult(B, converged, it, objective_value(U, hyper.s, B))
