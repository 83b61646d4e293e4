"""Score network + post-processing parameters bundled as one model, with
prediction and a deterministic checkpoint file."""

from __future__ import annotations

import base64
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import scorenet
from .core import CANONICAL, as_sequence, build_constraint_mask, round_structure
from .ppnet import PpParams, pp_solve_convergent, pp_unroll

CHECKPOINT_FORMAT = "unrollfold-checkpoint/1"


@dataclass
class Model:
    net: scorenet.ScoreNetParams
    pp: PpParams = field(default_factory=PpParams)
    meta: dict = field(default_factory=dict)

    def scores(self, seq) -> np.ndarray:
        return scorenet.forward(seq, self.net).value

    def predict(self, seq, classic: bool = False, threshold: float = 0.5) -> np.ndarray:
        """Binary pair matrix for ``seq``; always satisfies the structure constraints."""
        seq = as_sequence(seq)
        M = build_constraint_mask(seq)
        U = self.scores(seq)
        if classic:
            return pp_solve_convergent(U, M, self.pp, threshold=threshold).A
        traj = pp_unroll(U, M, self.pp)
        return round_structure(traj[-1], M, threshold)


def _encode_array(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "dtype": "<f8",
            "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _decode_array(d: dict) -> np.ndarray:
    raw = base64.b64decode(d["data"])
    return np.frombuffer(raw, dtype=d["dtype"]).reshape(d["shape"]).astype(np.float64)


def dumps(model: Model) -> str:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "base_order": CANONICAL,
        "psi_family": scorenet.PSI_FAMILY,
        "scorenet": {"config": asdict(model.net.config), "seed": model.net.seed},
        "weights": {k: _encode_array(v) for k, v in sorted(model.net.weights.items())},
        "pp": model.pp.to_dict(),
        "meta": model.meta,
    }
    return json.dumps(doc, sort_keys=True, indent=1)


def loads(text: str) -> Model:
    doc = json.loads(text)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"not a model checkpoint (format={doc.get('format')!r})")
    if doc["base_order"] != CANONICAL:
        raise ValueError(f"checkpoint base order {doc['base_order']} != {CANONICAL}")
    if doc["psi_family"] != scorenet.PSI_FAMILY:
        raise ValueError(f"checkpoint position features {doc['psi_family']!r} are not supported")
    cfg = scorenet.ScoreNetConfig(**doc["scorenet"]["config"])
    weights = {k: _decode_array(v) for k, v in doc["weights"].items()}
    net = scorenet.ScoreNetParams(cfg, weights, doc["scorenet"]["seed"])
    return Model(net, PpParams.from_dict(doc["pp"]), doc.get("meta", {}))


def save(model: Model, path) -> None:
    Path(path).write_text(dumps(model))


def load(path) -> Model:
    return loads(Path(path).read_text())
