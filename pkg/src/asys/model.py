"""Shared backbone, sigmoid-headed MLP learners and a softmax gate, with manual backprop.

Parameters live in a flat ``dict[str, ndarray]``:

* ``backbone.W``, ``backbone.b``: one rectified linear layer, d_in -> d_emb
* ``learner{k}.W{j}``, ``learner{k}.b{j}``: hidden rectified layers then a linear
  scalar head (the last ``j``), passed through a sigmoid
* ``gate.W``, ``gate.b``: linear d_emb -> m followed by a softmax

Keeping the keys flat lets the optimizer skip a frozen learner's entries
entirely, so its moments and step counter are never touched.
"""

from __future__ import annotations

import enum
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

Params = Dict[str, np.ndarray]

LOSS_CLIP = 1e-7
CKPT_MAGIC = b"ASYS-CKPT-1"


class Strategy(str, enum.Enum):
    INCCTR = "IncCTR"
    MOE = "MoE"
    ADAMOE = "AdaMoE"

    @classmethod
    def parse(cls, value) -> "Strategy":
        if isinstance(value, cls):
            return value
        for s in cls:
            if s.value.lower() == str(value).lower():
                return s
        raise ValueError(f"unknown strategy {value!r}; expected one of {[s.value for s in cls]}")

    @property
    def uses_gate(self) -> bool:
        return self is not Strategy.INCCTR


@dataclass(frozen=True)
class ModelConfig:
    d_in: int
    m: int = 3
    d_emb: int = 32
    hidden: Tuple[int, ...] = (32, 16)

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.d_in < 1 or self.d_emb < 1 or self.m < 1 or any(h < 1 for h in self.hidden):
            raise ValueError(f"invalid model dimensions: {self}")

    @property
    def n_layers(self) -> int:
        return len(self.hidden) + 1


def learner_keys(k: int, cfg: ModelConfig) -> List[str]:
    keys = []
    for j in range(1, cfg.n_layers + 1):
        keys += [f"learner{k}.W{j}", f"learner{k}.b{j}"]
    return keys


BACKBONE_KEYS = ("backbone.W", "backbone.b")
GATE_KEYS = ("gate.W", "gate.b")


def _glorot(rng, fan_in, fan_out):
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=(fan_in, fan_out))


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> Params:
    p: Params = {
        "backbone.W": _glorot(rng, cfg.d_in, cfg.d_emb),
        "backbone.b": np.zeros(cfg.d_emb),
    }
    sizes = (cfg.d_emb, *cfg.hidden, 1)
    for k in range(cfg.m):
        for j in range(1, len(sizes)):
            p[f"learner{k}.W{j}"] = _glorot(rng, sizes[j - 1], sizes[j])
            p[f"learner{k}.b{j}"] = np.zeros(sizes[j])
    p["gate.W"] = _glorot(rng, cfg.d_emb, cfg.m)
    p["gate.b"] = np.zeros(cfg.m)
    return p


def zero_params(cfg: ModelConfig) -> Params:
    return {k: np.zeros_like(v) for k, v in init_params(cfg, np.random.default_rng(0)).items()}


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


@dataclass
class ForwardCache:
    x: np.ndarray
    backbone_pre: np.ndarray
    embedding: np.ndarray
    # per learner: inputs to each layer (post-activation), then pre-activations of hidden layers
    layer_inputs: List[List[np.ndarray]]
    hidden_pre: List[List[np.ndarray]]
    pctr: np.ndarray
    gate: np.ndarray


def forward(params: Params, cfg: ModelConfig, x) -> ForwardCache:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError("features must be a non-empty 2-D array")
    if x.shape[1] != cfg.d_in:
        raise ValueError(f"feature dimension {x.shape[1]} != backbone input {cfg.d_in}")
    pre = x @ params["backbone.W"] + params["backbone.b"]
    e = np.maximum(pre, 0.0)
    n = x.shape[0]
    pctr = np.empty((n, cfg.m))
    inputs, pres = [], []
    for k in range(cfg.m):
        h = e
        ins, hp = [], []
        for j in range(1, cfg.n_layers + 1):
            ins.append(h)
            z = h @ params[f"learner{k}.W{j}"] + params[f"learner{k}.b{j}"]
            if j < cfg.n_layers:
                hp.append(z)
                h = np.maximum(z, 0.0)
        pctr[:, k] = sigmoid(z[:, 0])
        inputs.append(ins)
        pres.append(hp)
    gate = softmax(e @ params["gate.W"] + params["gate.b"])
    return ForwardCache(x, pre, e, inputs, pres, pctr, gate)


# --- aggregation arithmetic shared with the ensemble ---------------------------------


def chunk_weights(strategy: Strategy, gate: Optional[np.ndarray], m: int) -> np.ndarray:
    if strategy is Strategy.INCCTR:
        return np.full(m, 1.0 / m)
    if gate is None:
        raise ValueError(f"{strategy.value} needs gate outputs")
    return gate.mean(axis=0)


def masked_coefficients(w: np.ndarray, indicators: np.ndarray) -> np.ndarray:
    mask = np.asarray(indicators, dtype=bool)
    if not mask.any():
        raise ValueError("at least one learner must be unfrozen")
    masked = np.where(mask, w, 0.0)
    return masked / masked.sum()


def bce(yhat: np.ndarray, y: np.ndarray) -> float:
    p = np.clip(yhat, LOSS_CLIP, 1.0 - LOSS_CLIP)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log1p(-p)))


def _bce_grad(yhat: np.ndarray, y: np.ndarray) -> np.ndarray:
    inside = (yhat > LOSS_CLIP) & (yhat < 1.0 - LOSS_CLIP)
    g = (yhat - y) / (yhat * (1.0 - yhat)) / yhat.size
    return np.where(inside, g, 0.0)


def train_loss(params, cfg, x, y, indicators, strategy, fixed_weights=None) -> float:
    """Loss on the masked, renormalised aggregate; used as a finite-difference target."""
    cache = forward(params, cfg, x)
    w = fixed_weights if fixed_weights is not None else chunk_weights(strategy, cache.gate, cfg.m)
    return bce(cache.pctr @ masked_coefficients(w, indicators), np.asarray(y, dtype=np.float64))


def gate_loss(params, cfg, x, y, fixed_pctr=None) -> float:
    """Loss on the unmasked gate-weighted aggregate (the decoupled gate objective)."""
    cache = forward(params, cfg, x)
    pctr = cache.pctr if fixed_pctr is None else fixed_pctr
    return bce(pctr @ cache.gate.mean(axis=0), np.asarray(y, dtype=np.float64))


# --- backward ----------------------------------------------------------------------


def _learners_backward(params, cfg, cache, d_pctr, update: np.ndarray, grads) -> np.ndarray:
    """Backprop d loss / d pctr through learners flagged in ``update``; return d loss / d embedding."""
    d_e = np.zeros_like(cache.embedding)
    L = cfg.n_layers
    for k in range(cfg.m):
        if not update[k]:
            continue
        p = cache.pctr[:, k]
        dz = (d_pctr[:, k] * p * (1.0 - p))[:, None]
        for j in range(L, 0, -1):
            h_in = cache.layer_inputs[k][j - 1]
            grads[f"learner{k}.W{j}"] = h_in.T @ dz
            grads[f"learner{k}.b{j}"] = dz.sum(axis=0)
            dh = dz @ params[f"learner{k}.W{j}"].T
            if j > 1:
                dz = dh * (cache.hidden_pre[k][j - 2] > 0)
            else:
                d_e += dh
    return d_e


def _gate_backward(params, cache, d_w: np.ndarray, grads) -> np.ndarray:
    """Backprop d loss / d w, with w the row mean of the softmax gate; return d loss / d embedding."""
    g = cache.gate
    n = g.shape[0]
    d_g = np.broadcast_to(d_w / n, g.shape)
    d_logits = g * (d_g - (g * d_g).sum(axis=1, keepdims=True))
    grads["gate.W"] = cache.embedding.T @ d_logits
    grads["gate.b"] = d_logits.sum(axis=0)
    return d_logits @ params["gate.W"].T


def _backbone_backward(cache, d_e, grads):
    d_pre = d_e * (cache.backbone_pre > 0)
    grads["backbone.W"] = cache.x.T @ d_pre
    grads["backbone.b"] = d_pre.sum(axis=0)


def backward(
    params: Params,
    cfg: ModelConfig,
    cache: ForwardCache,
    labels,
    indicators,
    strategy: Strategy,
) -> Tuple[float, Params, List[str]]:
    """Gradients of the training objective.

    Returns ``(loss, grads, trainable)``. ``grads`` has an entry for every
    parameter; entries of frozen learners are exactly zero. ``trainable`` lists the
    keys the optimizer should touch this step.

    * IncCTR: uniform weights, the gate is idle.
    * MoE: gradients reach the gate through the chunk-mean weights and the
      masked renormalisation; ``indicators`` is a constant mask.
    * AdaMoE: learners and backbone follow the masked loss with the gate
      weights held constant; the gate follows the unmasked loss with learner
      outputs held constant (and does not push into the backbone).
    """
    strategy = Strategy.parse(strategy)
    mask = np.asarray(indicators, dtype=bool)
    if mask.shape != (cfg.m,):
        raise ValueError(f"indicator vector must have {cfg.m} entries")
    if not mask.any():
        raise ValueError("all learners frozen")
    y = np.asarray(labels, dtype=np.float64)
    if y.shape != (cache.pctr.shape[0],):
        raise ValueError("labels do not match the forward cache")

    grads = {k: np.zeros_like(v) for k, v in params.items()}
    w = chunk_weights(strategy, cache.gate, cfg.m)
    coef = masked_coefficients(w, mask)
    yhat = cache.pctr @ coef
    loss = bce(yhat, y)
    d_yhat = _bce_grad(yhat, y)

    d_pctr = d_yhat[:, None] * coef[None, :]
    d_e = _learners_backward(params, cfg, cache, d_pctr, mask, grads)

    trainable = list(BACKBONE_KEYS)
    for k in np.flatnonzero(mask):
        trainable += learner_keys(int(k), cfg)

    if strategy is Strategy.MOE:
        d_coef = cache.pctr.T @ d_yhat
        s = np.where(mask, w, 0.0).sum()
        d_w = np.where(mask, (d_coef - coef @ d_coef) / s, 0.0)
        d_e = d_e + _gate_backward(params, cache, d_w, grads)
        trainable += list(GATE_KEYS)
    elif strategy is Strategy.ADAMOE:
        y_inf = cache.pctr @ w
        d_w = cache.pctr.T @ _bce_grad(y_inf, y)
        _gate_backward(params, cache, d_w, grads)
        trainable += list(GATE_KEYS)

    _backbone_backward(cache, d_e, grads)
    return loss, grads, trainable


# --- Adam --------------------------------------------------------------------------


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    # per-parameter step counts, so skipped entries keep their bias correction
    t: Dict[str, int] = field(default_factory=dict)

    def copy(self) -> "AdamState":
        return AdamState(
            self.lr,
            self.beta1,
            self.beta2,
            self.eps,
            {k: a.copy() for k, a in self.m.items()},
            {k: a.copy() for k, a in self.v.items()},
            dict(self.t),
        )


def adam_step(params: Params, grads: Params, state: AdamState, keys: Optional[Iterable[str]] = None) -> None:
    """In-place Adam update of ``params[key]`` for each key (default: all of ``grads``)."""
    for key in grads if keys is None else keys:
        p, g = params[key], grads[key]
        if p.shape != g.shape:
            raise ValueError(f"{key}: gradient shape {g.shape} != parameter shape {p.shape}")
        m = state.m.get(key)
        if m is None:
            m = np.zeros_like(p)
            state.v[key] = np.zeros_like(p)
            state.t[key] = 0
        t = state.t[key] + 1
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * state.v[key] + (1.0 - state.beta2) * g * g
        m_hat = m / (1.0 - state.beta1**t)
        v_hat = v / (1.0 - state.beta2**t)
        params[key] = p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        state.m[key], state.v[key], state.t[key] = m, v, t


# --- checkpoints -------------------------------------------------------------------


def save_checkpoint(path, params: Params, adam: Optional[AdamState] = None, meta: Optional[dict] = None) -> None:
    """Write parameters (and optionally Adam moments) in the ASYS-CKPT-1 layout.

    Layout: the magic line ``ASYS-CKPT-1``, one line of JSON header, then the raw
    little-endian float64 payload. The header maps every tensor name to its
    shape and byte offset into the payload.
    """
    tensors: Dict[str, np.ndarray] = {f"param/{k}": v for k, v in params.items()}
    extra = dict(meta or {})
    if adam is not None:
        tensors.update({f"adam.m/{k}": v for k, v in adam.m.items()})
        tensors.update({f"adam.v/{k}": v for k, v in adam.v.items()})
        extra["adam"] = {
            "lr": adam.lr,
            "beta1": adam.beta1,
            "beta2": adam.beta2,
            "eps": adam.eps,
            "t": adam.t,
        }
    entries, offset = [], 0
    payload = io.BytesIO()
    for name, arr in tensors.items():
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "dtype": "<f8", "offset": offset})
        payload.write(raw)
        offset += len(raw)
    header = json.dumps({"tensors": entries, "meta": extra}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC + b"\n" + header + b"\n" + payload.getvalue())


def load_checkpoint(path) -> Tuple[Params, Optional[AdamState], dict]:
    blob = Path(path).read_bytes()
    magic, _, rest = blob.partition(b"\n")
    if magic != CKPT_MAGIC:
        raise ValueError(f"{path}: not an {CKPT_MAGIC.decode()} checkpoint")
    header_raw, _, payload = rest.partition(b"\n")
    header = json.loads(header_raw)
    tensors = {}
    for e in header["tensors"]:
        count = int(np.prod(e["shape"], dtype=np.int64))
        arr = np.frombuffer(payload, dtype=e["dtype"], count=count, offset=e["offset"])
        tensors[e["name"]] = arr.reshape(e["shape"]).astype(np.float64)
    params = {k[len("param/"):]: v for k, v in tensors.items() if k.startswith("param/")}
    meta = header.get("meta", {})
    adam = None
    if "adam" in meta:
        a = meta.pop("adam")
        adam = AdamState(
            a["lr"],
            a["beta1"],
            a["beta2"],
            a["eps"],
            {k[len("adam.m/"):]: v for k, v in tensors.items() if k.startswith("adam.m/")},
            {k[len("adam.v/"):]: v for k, v in tensors.items() if k.startswith("adam.v/")},
            {k: int(t) for k, t in a["t"].items()},
        )
    return params, adam, meta
