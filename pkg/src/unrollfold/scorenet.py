"""Pair score network: position features -> MLP, self-attention encoder,
pairwise 1x1 scoring head.

The forward pass runs on :mod:`unrollfold.autodiff` nodes.  Weights live in
``ScoreNetParams.weights`` (name -> float64 array).  Pass ``w=params.as_nodes()``
to get leaves whose ``.grad`` fills in after :func:`~unrollfold.autodiff.backward`;
without ``w`` the weights enter as constants.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .ioformats import one_hot

PSI_FAMILY = "sin24abs+sin24rel+poly5+sigmoid5/v1"
PSI_COUNT = 58


@dataclass(frozen=True)
class ScoreNetConfig:
    d: int = 10
    n_layers: int = 2
    n_heads: int = 2
    ff_width: int = 64

    def __post_init__(self):
        if self.d % self.n_heads:
            raise ValueError(f"d={self.d} must be divisible by n_heads={self.n_heads}")

    @property
    def pos_hidden(self) -> int:
        return 5 * self.d


@dataclass
class ScoreNetParams:
    config: ScoreNetConfig
    weights: dict[str, np.ndarray] = field(default_factory=dict)
    seed: int | None = None

    def as_nodes(self) -> dict[str, ad.Node]:
        return {k: ad.leaf(v) for k, v in self.weights.items()}

    def copy(self) -> "ScoreNetParams":
        return ScoreNetParams(self.config, {k: v.copy() for k, v in self.weights.items()}, self.seed)

    def to_dict(self) -> dict:
        return {"config": asdict(self.config), "seed": self.seed}


def _layout(cfg: ScoreNetConfig) -> dict[str, tuple[tuple[int, ...], int]]:
    """Tensor name -> (shape, fan_in of the layer it belongs to)."""
    d, h, ff = cfg.d, cfg.pos_hidden, cfg.ff_width
    dh = d // cfg.n_heads
    out = {
        "pos.W1": ((PSI_COUNT, h), PSI_COUNT), "pos.b1": ((h,), PSI_COUNT),
        "pos.W2": ((h, h), h), "pos.b2": ((h,), h),
        "pos.W3": ((h, d), h), "pos.b3": ((d,), h),
        "emb.W": ((4, d), 4), "emb.b": ((d,), 4),
    }
    for l in range(cfg.n_layers):
        for hd in range(cfg.n_heads):
            for m in "qkv":
                out[f"enc{l}.h{hd}.W{m}"] = ((d, dh), d)
        out[f"enc{l}.Wo"] = ((d, d), d)
        out[f"enc{l}.ff.W1"] = ((d, ff), d)
        out[f"enc{l}.ff.b1"] = ((ff,), d)
        out[f"enc{l}.ff.W2"] = ((ff, d), ff)
        out[f"enc{l}.ff.b2"] = ((d,), ff)
    out.update({
        # the first head layer reads the 6d-wide pair feature [X_i, X_j]
        "head.W1a": ((3 * d, d), 6 * d), "head.W1b": ((3 * d, d), 6 * d),
        "head.b1": ((d,), 6 * d),
        "head.W2": ((d, 1), d), "head.b2": ((1,), d),
    })
    return out


def init_params(config: ScoreNetConfig | None = None, seed: int = 0) -> ScoreNetParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every tensor, biases included."""
    config = config or ScoreNetConfig()
    rng = np.random.default_rng(seed)
    weights = {}
    for name, (shape, fan) in _layout(config).items():
        bound = 1.0 / np.sqrt(fan)
        weights[name] = rng.uniform(-bound, bound, size=shape)
    return ScoreNetParams(config, weights, seed)


# ------------------------------------------------------------------ position

def position_features(L: int) -> np.ndarray:
    """``L x 58`` feature maps of absolute index ``i`` and relative index ``i/L``.

    Columns: 24 sinusoids ``sin(i / 10000^(2m/24))``, the same 24 on ``i/L``,
    polynomials ``1, r, r², r³`` plus ``log(1+i)``, and ``sigmoid(10 (r - c))``
    for ``c`` in 0.1..0.9.
    """
    if L < 1:
        raise ValueError("L must be positive")
    i = np.arange(L, dtype=np.float64)[:, None]
    r = i / L
    freq = 10000.0 ** (-2.0 * np.arange(24) / 24.0)
    centers = np.array([0.1, 0.3, 0.5, 0.7, 0.9])
    return np.hstack([
        np.sin(i * freq),
        np.sin(r * freq),
        np.ones_like(r), r, r ** 2, r ** 3, np.log1p(i),
        1.0 / (1.0 + np.exp(-10.0 * (r - centers))),
    ])


def _weights(params: ScoreNetParams, w: Mapping | None):
    return w if w is not None else {k: ad.const(v) for k, v in params.weights.items()}


def _linear(x, W, b):
    return x @ W + ad.tile_rows(b, x.shape[0])


def position_embedding(L: int, params: ScoreNetParams, w: Mapping | None = None) -> ad.Node:
    w = _weights(params, w)
    h = ad.relu(_linear(ad.const(position_features(L)), w["pos.W1"], w["pos.b1"]))
    h = ad.relu(_linear(h, w["pos.W2"], w["pos.b2"]))
    return _linear(h, w["pos.W3"], w["pos.b3"])


# ------------------------------------------------------------------ encoder

def _attention(H, w, layer: int, cfg: ScoreNetConfig):
    dh = cfg.d // cfg.n_heads
    heads = []
    for hd in range(cfg.n_heads):
        pre = f"enc{layer}.h{hd}."
        Q, K, V = H @ w[pre + "Wq"], H @ w[pre + "Wk"], H @ w[pre + "Wv"]
        att = ad.softmax_rows((Q @ K.T) * (1.0 / np.sqrt(dh)))
        heads.append(att @ V)
    return ad.concat_cols(heads) @ w[f"enc{layer}.Wo"]


def encode(onehot, P, params: ScoreNetParams, w: Mapping | None = None) -> ad.Node:
    """``[E, enc(E + P), P]`` with ``E`` the learned base embedding; ``L x 3d``.

    Each encoder layer adds multi-head self-attention and a ReLU feed-forward
    block through residual connections (no normalisation layers).
    """
    w = _weights(params, w)
    cfg = params.config
    onehot = ad.const(onehot)
    P = ad.const(P)
    E = _linear(onehot, w["emb.W"], w["emb.b"])
    H = E + P
    for l in range(cfg.n_layers):
        H = H + _attention(H, w, l, cfg)
        ff = ad.relu(_linear(H, w[f"enc{l}.ff.W1"], w[f"enc{l}.ff.b1"]))
        H = H + _linear(ff, w[f"enc{l}.ff.W2"], w[f"enc{l}.ff.b2"])
    return ad.concat_cols([E, H, P])


def score(X, params: ScoreNetParams, w: Mapping | None = None) -> ad.Node:
    """Symmetric ``L x L`` scores from the pairwise concatenation ``[X_i, X_j]``."""
    w = _weights(params, w)
    X = ad.const(X)
    L = X.shape[0]
    hidden = ad.pairwise_sum(X @ w["head.W1a"], X @ w["head.W1b"])
    hidden = ad.relu(hidden + ad.tile_rows(w["head.b1"], L * L))
    raw = ad.reshape(hidden @ w["head.W2"] + ad.tile_rows(w["head.b2"], L * L), (L, L))
    return 0.5 * (raw + raw.T)


def forward(seq, params: ScoreNetParams, w: Mapping | None = None) -> ad.Node:
    w = _weights(params, w)
    oh = one_hot(seq)
    P = position_embedding(oh.shape[0], params, w)
    return score(encode(oh, P, params, w), params, w)
