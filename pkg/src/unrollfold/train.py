"""Two-phase training: weighted-BCE pre-training of the score network, then
joint fine-tuning of network and post-processing parameters through the
unrolled solver.

Sequences are processed one at a time (no padding); gradients of a batch are
summed into the parameter leaves, averaged, and applied every
``accumulation_steps`` batches.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import scorenet
from .core import build_constraint_mask, matrix_to_pairs, pairs_to_matrix
from .evaluation import prf
from .ioformats import DatasetIndex
from .losses import LossConfig, trajectory_loss, weighted_bce
from .model import Model
from .ppnet import PpParams, pp_unroll

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs_pretrain: int = 30
    epochs_finetune: int = 5
    batch_size: int = 8
    accumulation_steps: int = 1
    learning_rate: float = 3e-3
    phi_learning_rate: float | None = None  # None -> learning_rate
    momentum: float = 0.9
    optimizer: str = "adam"  # or "sgd"
    seed: int = 0
    max_len: int = 160
    upsample: bool = True
    unroll: bool = True       # False: fine-tune with BCE only, phi untouched
    freeze_phi: bool = False
    loss: LossConfig = field(default_factory=LossConfig)
    pp: PpParams = field(default_factory=PpParams)
    net: scorenet.ScoreNetConfig = field(default_factory=scorenet.ScoreNetConfig)

    def __post_init__(self):
        for name in ("batch_size", "accumulation_steps", "max_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.epochs_pretrain < 0 or self.epochs_finetune < 0:
            raise ValueError("epoch counts must be nonnegative")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        nested = {"loss": LossConfig, "pp": PpParams, "net": scorenet.ScoreNetConfig}
        for key, typ in nested.items():
            if isinstance(d.get(key), dict):
                d[key] = typ(**d[key])
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


# ------------------------------------------------------------------ data handling

def stratified_split(records, fractions=(0.8, 0.1, 0.1), seed: int = 0):
    """Split per family in proportion to ``fractions``; rounding remainders go to train.

    A family with fewer records than there are nonzero fractions goes to
    train entirely (with a warning).
    """
    if isinstance(records, DatasetIndex):
        records = records.records
    fractions = tuple(float(f) for f in fractions)
    if not math.isclose(sum(fractions), 1.0, abs_tol=1e-9) or min(fractions) < 0:
        raise ValueError(f"fractions must be nonnegative and sum to 1, got {fractions}")
    rng = np.random.default_rng(seed)
    by_family: dict[str, list] = defaultdict(list)
    for r in records:
        by_family[r.seq.family or "unknown"].append(r)
    splits: list[list] = [[] for _ in fractions]
    n_active = sum(f > 0 for f in fractions)
    for fam in sorted(by_family):
        group = by_family[fam]
        order = rng.permutation(len(group))
        group = [group[k] for k in order]
        if len(group) < n_active:
            warnings.warn(f"family {fam!r} has {len(group)} records; all go to train")
            splits[0].extend(group)
            continue
        counts = [int(math.floor(f * len(group))) for f in fractions]
        counts[0] += len(group) - sum(counts)
        pos = 0
        for k, c in enumerate(counts):
            splits[k].extend(group[pos:pos + c])
            pos += c
    return tuple(splits)


def upsample_families(records) -> np.ndarray:
    """Per-record sampling weights ``1 / family size``, normalised to sum to 1.

    Every family then gets the same expected number of draws.
    """
    if not records:
        raise ValueError("cannot build a sampling schedule for no records")
    fam = [r.seq.family or "unknown" for r in records]
    counts = Counter(fam)
    w = np.array([1.0 / counts[f] for f in fam])
    return w / w.sum()


def _epoch_order(rng, records, upsample: bool) -> np.ndarray:
    n = len(records)
    if upsample:
        return rng.choice(n, size=n, replace=True, p=upsample_families(records))
    return rng.permutation(n)


def _prepare(records, max_len):
    """``(seq, Astar, mask, record)`` for every record no longer than ``max_len``."""
    if not records:
        return []
    return [(r.seq, pairs_to_matrix(r.pairs, len(r.seq)), build_constraint_mask(r.seq), r)
            for r in records if len(r.seq) <= max_len]


# ------------------------------------------------------------------ optimisation

class _Optimizer:
    """SGD with momentum, or Adam, over a dict of named arrays."""

    def __init__(self, kind: str, momentum: float = 0.9, betas=(0.9, 0.999), eps=1e-8):
        self.kind = kind
        self.momentum = momentum
        self.betas = betas
        self.eps = eps
        self.state: dict[str, list] = {}
        self.t = 0

    def step(self, params: dict, grads: dict, lrs: dict):
        self.t += 1
        for k, g in grads.items():
            lr = lrs[k]
            if lr == 0.0:
                continue
            if self.kind == "sgd":
                v = self.state.setdefault(k, [np.zeros_like(g)])
                v[0] = self.momentum * v[0] + g
                params[k] = params[k] - lr * v[0]
            else:
                m, s = self.state.setdefault(k, [np.zeros_like(g), np.zeros_like(g)])
                b1, b2 = self.betas
                m = b1 * m + (1 - b1) * g
                s = b2 * s + (1 - b2) * g * g
                self.state[k] = [m, s]
                mhat = m / (1 - b1 ** self.t)
                shat = s / (1 - b2 ** self.t)
                params[k] = params[k] - lr * mhat / (np.sqrt(shat) + self.eps)


def _project_phi(phi: dict) -> dict:
    """Keep post-processing parameters in their admissible ranges."""
    phi = dict(phi)
    phi["w"] = max(float(phi["w"]), 0.0)
    phi["rho"] = max(float(phi["rho"]), 0.0)
    phi["alpha"] = max(float(phi["alpha"]), 1e-6)
    phi["beta"] = max(float(phi["beta"]), 1e-6)
    for g in ("gamma_alpha", "gamma_beta"):
        phi[g] = min(max(float(phi[g]), 1e-3), 1.0)
    return phi


def _check_finite(value, phase, epoch, idx):
    if not np.isfinite(value):
        raise TrainingDiverged(f"{phase} loss became {value} at epoch {epoch}, sample {idx}")


def _run_phase(phase, model: Model, data, cfg: TrainConfig, epochs: int, rng, valid, history):
    weights = model.net.weights
    phi = model.pp.learnable()
    train_phi = phase == "finetune" and cfg.unroll and not cfg.freeze_phi
    lr_phi = cfg.learning_rate if cfg.phi_learning_rate is None else cfg.phi_learning_rate
    lrs = {k: cfg.learning_rate for k in weights}
    lrs.update({f"phi.{k}": (lr_phi if train_phi else 0.0) for k in phi})
    opt = _Optimizer(cfg.optimizer, cfg.momentum)
    records = [d[3] for d in data]
    pending = 0
    grads = {k: np.zeros_like(v) for k, v in weights.items()}
    grads.update({f"phi.{k}": 0.0 for k in phi})
    seen = 0

    for epoch in range(1, epochs + 1):
        order = _epoch_order(rng, records, cfg.upsample)
        total = 0.0
        for b0 in range(0, len(order), cfg.batch_size):
            batch = order[b0:b0 + cfg.batch_size]
            for idx in batch:
                seq, Astar, M, _ = data[idx]
                w = {k: ad.leaf(v) for k, v in weights.items()}
                phi_nodes = {k: ad.leaf(v) for k, v in phi.items()}
                U = scorenet.forward(seq, model.net, w)
                loss = weighted_bce(U, Astar, cfg.loss.pos_weight)
                if phase == "finetune" and cfg.unroll and Astar.any():
                    traj = pp_unroll(U, M, phi_nodes, cfg.pp.T, cfg.pp.k)
                    loss = trajectory_loss(traj, Astar, cfg.loss.gamma) + cfg.loss.mix * loss
                _check_finite(float(loss.value), phase, epoch, int(idx))
                ad.backward(loss)
                total += float(loss.value)
                for k, node in w.items():
                    if node.grad is not None:
                        grads[k] += node.grad
                for k, node in phi_nodes.items():
                    if node.grad is not None:
                        grads[f"phi.{k}"] += float(node.grad)
                seen += 1
            pending += 1
            if pending == cfg.accumulation_steps:
                _apply(opt, weights, phi, grads, lrs, seen)
                phi = _project_phi(phi)
                pending, seen = 0, 0
        if pending:
            _apply(opt, weights, phi, grads, lrs, seen)
            phi = _project_phi(phi)
            pending, seen = 0, 0
        model.pp = model.pp.replace(**phi)
        entry = {"phase": phase, "epoch": epoch, "loss": total / max(len(order), 1)}
        if valid:
            entry["valid_f1"] = validation_f1(model, valid)
        log.info("%s", entry)
        history.append(entry)
    model.pp = model.pp.replace(**phi)


def _apply(opt, weights, phi, grads, lrs, seen):
    params = dict(weights)
    params.update({f"phi.{k}": np.asarray(v, dtype=np.float64) for k, v in phi.items()})
    avg = {k: np.asarray(g, dtype=np.float64) / seen for k, g in grads.items()}
    opt.step(params, avg, lrs)
    for k in weights:
        weights[k] = params[k]
    for k in phi:
        phi[k] = float(params[f"phi.{k}"])
    for k in grads:
        grads[k] = np.zeros_like(grads[k]) if isinstance(grads[k], np.ndarray) else 0.0


def validation_f1(model: Model, valid) -> float:
    """Mean exact F1 of rounded unrolled predictions."""
    scores = []
    for seq, Astar, M, rec in valid:
        pred = model.predict(seq)
        scores.append(prf(matrix_to_pairs(pred), rec.pairs)[2])
    return float(np.mean(scores)) if scores else float("nan")


def pretrain(config: TrainConfig, records, model: Model | None = None, valid=None):
    """Fit the score network alone with weighted BCE.  Returns ``(model, history)``."""
    data = _prepare(records, config.max_len)
    if not data:
        raise ValueError("no training records within max_len")
    if model is None:
        net = scorenet.init_params(config.net, config.seed)
        model = Model(net, config.pp)
    vdata = _prepare(valid, config.max_len)
    rng = np.random.default_rng([config.seed, 1])
    history: list[dict] = []
    _run_phase("pretrain", model, data, config, config.epochs_pretrain, rng, vdata, history)
    model.meta = {"train_config": config.to_dict(), "history": history}
    return model, history


def finetune(config: TrainConfig, records, model: Model, valid=None):
    """Train network and post-processing jointly on the trajectory loss.

    ``config.freeze_phi`` keeps the post-processing parameters fixed;
    ``config.unroll=False`` drops the unrolled loss altogether (BCE only).
    Returns ``(model, history)``; ``model`` is updated in place.
    """
    data = _prepare(records, config.max_len)
    if not data:
        raise ValueError("no training records within max_len")
    vdata = _prepare(valid, config.max_len)
    rng = np.random.default_rng([config.seed, 2])
    history: list[dict] = []
    _run_phase("finetune", model, data, config, config.epochs_finetune, rng, vdata, history)
    meta = dict(model.meta)
    meta["train_config"] = config.to_dict()
    meta["history"] = list(meta.get("history", [])) + history
    model.meta = meta
    return model, history


def format_history(history) -> str:
    """Plain-text training log, one record per epoch."""
    lines = []
    for h in history:
        extra = f" valid_f1={h['valid_f1']:.6f}" if "valid_f1" in h else ""
        lines.append(f"{h['phase']} epoch={h['epoch']} loss={h['loss']:.8f}{extra}")
    return "\n".join(lines) + ("\n" if lines else "")
