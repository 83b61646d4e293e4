"""Training losses on autodiff nodes.

All functions accept arrays or :class:`~unrollfold.autodiff.Node` inputs and
return a scalar node; take ``.value`` for a plain number.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad


@dataclass(frozen=True)
class LossConfig:
    gamma: float = 1.0       # trajectory discount
    pos_weight: float = 300.0
    mix: float = 1.0         # weight of the BCE term during fine-tuning

    def __post_init__(self):
        if not all(np.isfinite([self.gamma, self.pos_weight, self.mix])):
            raise ValueError("LossConfig values must be finite")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if self.pos_weight <= 0 or self.mix < 0:
            raise ValueError("pos_weight must be > 0 and mix >= 0")


def f1_loss(A, Astar) -> ad.Node:
    """Negative soft F1: ``-2TP / (2TP + FP + FN)`` with inner-product counts.

    The denominator simplifies to ``sum(A) + sum(Astar)``.
    """
    Astar = np.asarray(Astar.value if isinstance(Astar, ad.Node) else Astar, dtype=np.float64)
    if not Astar.any():
        raise ValueError("f1_loss is undefined for a ground truth without pairs")
    A = ad.const(A)
    tp = ad.inner_product(A, Astar)
    fp = ad.inner_product(A, 1.0 - Astar)
    fn = ad.inner_product(1.0 - A, Astar)
    return -2.0 * tp / (2.0 * tp + fp + fn)


def trajectory_loss(traj, Astar, gamma: float = 1.0) -> ad.Node:
    """``(1/T) sum_t gamma^(T-t) f1_loss(A_t, Astar)`` over ``t = 1..T``."""
    T = len(traj)
    if T < 1:
        raise ValueError("trajectory must hold at least one step")
    total = None
    for t, A in enumerate(traj, start=1):
        term = (gamma ** (T - t)) * f1_loss(A, Astar)
        total = term if total is None else total + term
    return total / float(T)


def weighted_bce(U, Astar, pos_weight: float = 300.0) -> ad.Node:
    """Mean of ``-[pw * y log sig(U) + (1 - y) log(1 - sig(U))]`` over all cells."""
    Astar = np.asarray(Astar.value if isinstance(Astar, ad.Node) else Astar, dtype=np.float64)
    U = ad.const(U)
    pos = ad.log_sigmoid(U)
    neg = ad.log_sigmoid(-U)  # log(1 - sigmoid(U))
    per = -(pos_weight * Astar * pos + (1.0 - Astar) * neg)
    return ad.full_sum(per) / float(Astar.size)
