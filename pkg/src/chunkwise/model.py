"""Trainable classifier over chunk samples: transformer chunk encoder ->
CLS context pooler (dense + exact GELU) -> LSTM over pooled vectors ->
length-feature concatenation -> dense + softmax.

Everything is plain numpy in float64 with handwritten backpropagation, so
gradients can be verified against central finite differences. The encoder is
a small standard pre-norm transformer behind this module's interface; a
heavier pretrained encoder could replace it without touching the chunking or
training code.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from scipy.special import erf

from .chunking import FEATURE_NAMES, ChunkSample, EncodedChunk
from .tokenizer import PAD_ID, Vocabulary

__all__ = [
    "ModelConfig",
    "ModelParams",
    "ForwardTrace",
    "init_params",
    "encoder_forward",
    "context_pool",
    "lstm_forward",
    "classify",
    "sample_loss",
    "loss_and_gradients",
    "finite_difference_gradients",
    "max_relative_error",
    "gradient_check",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_VERSION = "1"

_LN_EPS = 1e-5
_MASKED_SCORE = -1e30


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    n_classes: int
    embed_dim: int = 32
    encoder_layers: int = 1
    encoder_heads: int = 2
    encoder_ff_dim: int = 64
    lstm_hidden: int = 128
    feature_names: tuple[str, ...] = ()
    dropout: float = 0.5
    max_chunk_len: int = 128

    def __post_init__(self) -> None:
        if self.n_classes < 2:
            raise ValueError("n_classes must be >= 2")
        if self.embed_dim % self.encoder_heads != 0:
            raise ValueError("embed_dim must be divisible by encoder_heads")
        if self.lstm_hidden < 1:
            raise ValueError("lstm_hidden must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0,1)")
        unknown = set(self.feature_names) - set(FEATURE_NAMES)
        if unknown:
            raise ValueError(f"unknown features: {sorted(unknown)}")
        # keep canonical feature order regardless of how the tuple was given
        ordered = tuple(n for n in FEATURE_NAMES if n in self.feature_names)
        object.__setattr__(self, "feature_names", ordered)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)


class ModelParams:
    """Named float64 tensors plus the config that shaped them."""

    def __init__(self, config: ModelConfig, tensors: dict[str, np.ndarray]):
        self.config = config
        self.tensors = {k: np.asarray(v, dtype=np.float64) for k, v in tensors.items()}

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        self.tensors[name] = value

    def items(self) -> Iterator[tuple[str, np.ndarray]]:
        return iter(self.tensors.items())

    def names(self) -> list[str]:
        return list(self.tensors.keys())

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.tensors.items()}

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.tensors.values())


def _uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_params(config: ModelConfig, seed: int = 12) -> ModelParams:
    """Scaled-uniform (+-1/sqrt(fan_in)) weights, zero biases, unit layer-norm
    gains; the LSTM forget-gate bias starts at 1 so early recurrence does not
    forget everything."""
    rng = np.random.default_rng(seed)
    d, f, h = config.embed_dim, config.encoder_ff_dim, config.lstm_hidden
    t = {}
    t["tok_emb"] = _uniform(rng, (config.vocab_size, d), d)
    t["pos_emb"] = _uniform(rng, (config.max_chunk_len, d), d)
    for i in range(config.encoder_layers):
        p = f"enc{i}."
        t[p + "ln1.g"] = np.ones(d)
        t[p + "ln1.b"] = np.zeros(d)
        for name in ("wq", "wk", "wv", "wo"):
            t[p + name] = _uniform(rng, (d, d), d)
            t[p + "b" + name[1]] = np.zeros(d)
        t[p + "ln2.g"] = np.ones(d)
        t[p + "ln2.b"] = np.zeros(d)
        t[p + "ff1.w"] = _uniform(rng, (f, d), d)
        t[p + "ff1.b"] = np.zeros(f)
        t[p + "ff2.w"] = _uniform(rng, (d, f), f)
        t[p + "ff2.b"] = np.zeros(d)
    t["ln_f.g"] = np.ones(d)
    t["ln_f.b"] = np.zeros(d)
    t["pooler.w"] = _uniform(rng, (d, d), d)
    t["pooler.b"] = np.zeros(d)
    t["lstm.w"] = _uniform(rng, (4 * h, d), d)
    t["lstm.u"] = _uniform(rng, (4 * h, h), h)
    b = np.zeros(4 * h)
    b[h : 2 * h] = 1.0
    t["lstm.b"] = b
    in_dim = h + config.n_features
    t["head.w"] = _uniform(rng, (config.n_classes, in_dim), in_dim)
    t["head.b"] = np.zeros(config.n_classes)
    return ModelParams(config, t)


# ---------------------------------------------------------------------------
# Primitive forward/backward pieces

def gelu(x: np.ndarray) -> np.ndarray:
    """Exact Gaussian-CDF GELU: x * Phi(x)."""
    return x * 0.5 * (1.0 + erf(x / np.sqrt(2.0)))


def _gelu_grad(x: np.ndarray) -> np.ndarray:
    phi = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
    return 0.5 * (1.0 + erf(x / np.sqrt(2.0))) + x * phi


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def _layer_norm(x: np.ndarray, g: np.ndarray, b: np.ndarray):
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = (x - mean) * inv_std
    return g * xhat + b, (xhat, inv_std)


def _layer_norm_backward(dy: np.ndarray, cache, g: np.ndarray):
    xhat, inv_std = cache
    dg = np.sum(dy * xhat, axis=tuple(range(dy.ndim - 1)))
    db = np.sum(dy, axis=tuple(range(dy.ndim - 1)))
    dxhat = dy * g
    dx = inv_std * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dg, db


def _split_heads(x: np.ndarray, n_heads: int) -> np.ndarray:
    b, t, d = x.shape
    return x.reshape(b, t, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    b, h, t, hd = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, h * hd)


# ---------------------------------------------------------------------------
# Encoder over a batch of chunks

def _pack_chunks(
    chunks: Sequence[EncodedChunk], config: ModelConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Pad the sample's chunks to a common length; returns (ids, valid mask)."""
    max_len = max(len(c) for c in chunks)
    if max_len > config.max_chunk_len:
        raise ValueError(f"chunk length {max_len} exceeds max_chunk_len {config.max_chunk_len}")
    ids = np.full((len(chunks), max_len), PAD_ID, dtype=np.int64)
    mask = np.zeros((len(chunks), max_len), dtype=bool)
    for i, chunk in enumerate(chunks):
        arr = np.asarray(chunk.token_ids, dtype=np.int64)
        if (arr < 0).any() or (arr >= config.vocab_size).any():
            raise ValueError(f"token id out of range for vocab size {config.vocab_size}")
        ids[i, : len(arr)] = arr
        mask[i, : len(arr)] = True
    return ids, mask


def _encode_chunks(
    chunks: Sequence[EncodedChunk], params: ModelParams
) -> tuple[np.ndarray, dict]:
    """CLS vectors (one per chunk) of a pre-norm transformer stack."""
    cfg = params.config
    ids, mask = _pack_chunks(chunks, cfg)
    n_heads = cfg.encoder_heads
    scale = 1.0 / np.sqrt(cfg.embed_dim // n_heads)
    t_len = ids.shape[1]

    x = params["tok_emb"][ids] + params["pos_emb"][:t_len][None, :, :]
    attn_bias = np.where(mask, 0.0, _MASKED_SCORE)[:, None, None, :]

    layer_caches = []
    for i in range(cfg.encoder_layers):
        p = f"enc{i}."
        n1, ln1_cache = _layer_norm(x, params[p + "ln1.g"], params[p + "ln1.b"])
        q = _split_heads(n1 @ params[p + "wq"].T + params[p + "bq"], n_heads)
        k = _split_heads(n1 @ params[p + "wk"].T + params[p + "bk"], n_heads)
        v = _split_heads(n1 @ params[p + "wv"].T + params[p + "bv"], n_heads)
        scores = q @ k.transpose(0, 1, 3, 2) * scale + attn_bias
        probs = softmax(scores, axis=-1)
        ctx = _merge_heads(probs @ v)
        attn = ctx @ params[p + "wo"].T + params[p + "bo"]
        h = x + attn
        n2, ln2_cache = _layer_norm(h, params[p + "ln2.g"], params[p + "ln2.b"])
        u = n2 @ params[p + "ff1.w"].T + params[p + "ff1.b"]
        a = gelu(u)
        ff = a @ params[p + "ff2.w"].T + params[p + "ff2.b"]
        out = h + ff
        layer_caches.append(
            {"x": x, "n1": n1, "ln1": ln1_cache, "q": q, "k": k, "v": v,
             "probs": probs, "ctx": ctx, "h": h, "n2": n2, "ln2": ln2_cache,
             "u": u, "a": a}
        )
        x = out

    final, ln_f_cache = _layer_norm(x, params["ln_f.g"], params["ln_f.b"])
    cls = final[:, 0, :]
    cache = {"ids": ids, "t_len": t_len, "layers": layer_caches, "ln_f": ln_f_cache,
             "scale": scale, "n_heads": n_heads}
    return cls, cache


def _encoder_backward(
    d_cls: np.ndarray, cache: dict, params: ModelParams, grads: dict[str, np.ndarray]
) -> None:
    cfg = params.config
    n_heads = cache["n_heads"]
    scale = cache["scale"]
    ids = cache["ids"]

    b, t = ids.shape
    d = cfg.embed_dim
    dfinal = np.zeros((b, t, d))
    dfinal[:, 0, :] = d_cls
    dx, dg, db_ = _layer_norm_backward(dfinal, cache["ln_f"], params["ln_f.g"])
    grads["ln_f.g"] += dg
    grads["ln_f.b"] += db_

    for i in reversed(range(cfg.encoder_layers)):
        p = f"enc{i}."
        lc = cache["layers"][i]
        # feed-forward branch
        dh = dx.copy()
        dff = dx
        da = dff @ params[p + "ff2.w"]
        grads[p + "ff2.w"] += dff.reshape(-1, d).T @ lc["a"].reshape(-1, lc["a"].shape[-1])
        grads[p + "ff2.b"] += dff.sum(axis=(0, 1))
        du = da * _gelu_grad(lc["u"])
        grads[p + "ff1.w"] += du.reshape(-1, du.shape[-1]).T @ lc["n2"].reshape(-1, d)
        grads[p + "ff1.b"] += du.sum(axis=(0, 1))
        dn2 = du @ params[p + "ff1.w"]
        dh_ln, dg2, db2 = _layer_norm_backward(dn2, lc["ln2"], params[p + "ln2.g"])
        grads[p + "ln2.g"] += dg2
        grads[p + "ln2.b"] += db2
        dh += dh_ln
        # attention branch
        dx_res = dh.copy()
        dattn = dh
        dctx = dattn @ params[p + "wo"]
        grads[p + "wo"] += dattn.reshape(-1, d).T @ lc["ctx"].reshape(-1, d)
        grads[p + "bo"] += dattn.sum(axis=(0, 1))
        dctx_h = _split_heads(dctx, n_heads)
        dprobs = dctx_h @ lc["v"].transpose(0, 1, 3, 2)
        dv = lc["probs"].transpose(0, 1, 3, 2) @ dctx_h
        dscores = lc["probs"] * (dprobs - (dprobs * lc["probs"]).sum(axis=-1, keepdims=True))
        dq = dscores @ lc["k"] * scale
        dk = dscores.transpose(0, 1, 3, 2) @ lc["q"] * scale
        dq_m, dk_m, dv_m = (_merge_heads(z) for z in (dq, dk, dv))
        n1_flat = lc["n1"].reshape(-1, d)
        grads[p + "wq"] += dq_m.reshape(-1, d).T @ n1_flat
        grads[p + "bq"] += dq_m.sum(axis=(0, 1))
        grads[p + "wk"] += dk_m.reshape(-1, d).T @ n1_flat
        grads[p + "bk"] += dk_m.sum(axis=(0, 1))
        grads[p + "wv"] += dv_m.reshape(-1, d).T @ n1_flat
        grads[p + "bv"] += dv_m.sum(axis=(0, 1))
        dn1 = dq_m @ params[p + "wq"] + dk_m @ params[p + "wk"] + dv_m @ params[p + "wv"]
        dx_ln, dg1, db1 = _layer_norm_backward(dn1, lc["ln1"], params[p + "ln1.g"])
        grads[p + "ln1.g"] += dg1
        grads[p + "ln1.b"] += db1
        dx = dx_res + dx_ln

    np.add.at(grads["tok_emb"], ids.reshape(-1), dx.reshape(-1, d))
    grads["pos_emb"][: cache["t_len"]] += dx.sum(axis=0)


def encoder_forward(chunk: EncodedChunk, params: ModelParams, mode: str = "eval") -> np.ndarray:
    """Contextual embedding of the chunk's CLS token (length embed_dim)."""
    _check_mode(mode)
    cls, _ = _encode_chunks([chunk], params)
    return cls[0]


def context_pool(cls_vector: np.ndarray, params: ModelParams) -> np.ndarray:
    """Dense + exact GELU over a CLS vector (or batch of them)."""
    return gelu(cls_vector @ params["pooler.w"].T + params["pooler.b"])


# ---------------------------------------------------------------------------
# LSTM

def _lstm_forward(xs: np.ndarray, params: ModelParams) -> tuple[np.ndarray, dict]:
    """Run the recurrence over xs (seq_len, input_dim); h0 = c0 = 0."""
    w, u, b = params["lstm.w"], params["lstm.u"], params["lstm.b"]
    hidden = params.config.lstm_hidden
    h = np.zeros(hidden)
    c = np.zeros(hidden)
    steps = []
    for x in xs:
        z = w @ x + u @ h + b
        i = _sigmoid(z[:hidden])
        f = _sigmoid(z[hidden : 2 * hidden])
        g = np.tanh(z[2 * hidden : 3 * hidden])
        o = _sigmoid(z[3 * hidden :])
        c_prev, h_prev = c, h
        c = f * c_prev + i * g
        tanh_c = np.tanh(c)
        h = o * tanh_c
        steps.append({"x": x, "h_prev": h_prev, "c_prev": c_prev,
                      "i": i, "f": f, "g": g, "o": o, "tanh_c": tanh_c})
    return h, {"steps": steps}


def _lstm_backward(
    dh_final: np.ndarray, cache: dict, params: ModelParams, grads: dict[str, np.ndarray]
) -> np.ndarray:
    w, u = params["lstm.w"], params["lstm.u"]
    hidden = params.config.lstm_hidden
    dh = dh_final.copy()
    dc = np.zeros(hidden)
    dxs = []
    for step in reversed(cache["steps"]):
        i, f, g, o, tanh_c = step["i"], step["f"], step["g"], step["o"], step["tanh_c"]
        do = dh * tanh_c
        dc = dc + dh * o * (1.0 - tanh_c**2)
        di = dc * g
        dg = dc * i
        df = dc * step["c_prev"]
        dc = dc * f
        dz = np.concatenate([
            di * i * (1.0 - i),
            df * f * (1.0 - f),
            dg * (1.0 - g**2),
            do * o * (1.0 - o),
        ])
        grads["lstm.w"] += np.outer(dz, step["x"])
        grads["lstm.u"] += np.outer(dz, step["h_prev"])
        grads["lstm.b"] += dz
        dxs.append(w.T @ dz)
        dh = u.T @ dz
    dxs.reverse()
    return np.stack(dxs)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def lstm_forward(pooled_sequence: np.ndarray, params: ModelParams) -> np.ndarray:
    """Final hidden state over a (seq_len, input_dim) sequence."""
    xs = np.atleast_2d(np.asarray(pooled_sequence, dtype=np.float64))
    h, _ = _lstm_forward(xs, params)
    return h


# ---------------------------------------------------------------------------
# Full classifier

@dataclass
class ForwardTrace:
    """Intermediate activations kept for backpropagation."""

    pooled: np.ndarray
    final_hidden: np.ndarray
    logits: np.ndarray
    probabilities: np.ndarray
    caches: dict = field(repr=False, default_factory=dict)


def _check_mode(mode: str) -> None:
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")


def _feature_array(sample: ChunkSample, cfg: ModelConfig) -> np.ndarray:
    n_given = 0 if sample.features is None else len(sample.features)
    if n_given != cfg.n_features:
        raise ValueError(
            f"model expects {cfg.n_features} features, sample carries {n_given}"
        )
    if cfg.n_features == 0:
        return np.zeros(0)
    if sample.features.names != cfg.feature_names:
        raise ValueError(
            f"feature names {sample.features.names} do not match model "
            f"configuration {cfg.feature_names}"
        )
    return sample.features.as_array()


def classify(
    sample: ChunkSample,
    params: ModelParams,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, ForwardTrace]:
    """Class probabilities for one chunk sample.

    Dropout (after the pooler and on the LSTM final state) is active only in
    train mode, which then requires ``rng``; eval mode is deterministic.
    """
    _check_mode(mode)
    cfg = params.config
    if len(sample) == 0:
        raise ValueError("sample has no chunks")
    feats = _feature_array(sample, cfg)

    use_dropout = mode == "train" and cfg.dropout > 0.0
    if use_dropout and rng is None:
        raise ValueError("train-mode dropout requires an rng")

    cls, enc_cache = _encode_chunks(sample.chunks, params)
    pre_pool = cls @ params["pooler.w"].T + params["pooler.b"]
    pooled = gelu(pre_pool)

    if use_dropout:
        keep = 1.0 - cfg.dropout
        mask_pool = (rng.random(pooled.shape) < keep) / keep
    else:
        mask_pool = None
    lstm_in = pooled * mask_pool if mask_pool is not None else pooled

    h_final, lstm_cache = _lstm_forward(lstm_in, params)

    if use_dropout:
        keep = 1.0 - cfg.dropout
        mask_h = (rng.random(h_final.shape) < keep) / keep
    else:
        mask_h = None
    h_drop = h_final * mask_h if mask_h is not None else h_final

    z = np.concatenate([h_drop, feats]) if cfg.n_features else h_drop
    logits = params["head.w"] @ z + params["head.b"]
    probs = softmax(logits)

    trace = ForwardTrace(
        pooled=pooled,
        final_hidden=h_final,
        logits=logits,
        probabilities=probs,
        caches={
            "encoder": enc_cache,
            "pre_pool": pre_pool,
            "cls": cls,
            "lstm": lstm_cache,
            "mask_pool": mask_pool,
            "mask_h": mask_h,
            "z": z,
        },
    )
    return probs, trace


def sample_loss(
    sample: ChunkSample,
    label: int,
    params: ModelParams,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
) -> float:
    """Cross-entropy of one sample: -ln p[label], computed stably."""
    _, trace = classify(sample, params, mode=mode, rng=rng)
    logits = trace.logits
    lse = float(np.log(np.sum(np.exp(logits - logits.max()))) + logits.max())
    return lse - float(logits[label])


def loss_and_gradients(
    sample: ChunkSample,
    label: int,
    params: ModelParams,
    mode: str = "train",
    rng: np.random.Generator | None = None,
) -> tuple[float, dict[str, np.ndarray]]:
    """Cross-entropy loss and gradients for every parameter tensor."""
    cfg = params.config
    if not 0 <= label < cfg.n_classes:
        raise ValueError(f"label {label} out of range for {cfg.n_classes} classes")
    probs, trace = classify(sample, params, mode=mode, rng=rng)
    logits = trace.logits
    lse = float(np.log(np.sum(np.exp(logits - logits.max()))) + logits.max())
    loss = lse - float(logits[label])

    grads = params.zeros_like()
    dlogits = probs.copy()
    dlogits[label] -= 1.0

    z = trace.caches["z"]
    grads["head.w"] += np.outer(dlogits, z)
    grads["head.b"] += dlogits
    dz = params["head.w"].T @ dlogits
    hidden = cfg.lstm_hidden
    dh_drop = dz[:hidden]

    mask_h = trace.caches["mask_h"]
    dh_final = dh_drop * mask_h if mask_h is not None else dh_drop

    d_lstm_in = _lstm_backward(dh_final, trace.caches["lstm"], params, grads)

    mask_pool = trace.caches["mask_pool"]
    d_pooled = d_lstm_in * mask_pool if mask_pool is not None else d_lstm_in

    d_pre = d_pooled * _gelu_grad(trace.caches["pre_pool"])
    grads["pooler.w"] += d_pre.T @ trace.caches["cls"]
    grads["pooler.b"] += d_pre.sum(axis=0)
    d_cls = d_pre @ params["pooler.w"]

    _encoder_backward(d_cls, trace.caches["encoder"], params, grads)
    return loss, grads


# ---------------------------------------------------------------------------
# Gradient verification

def finite_difference_gradients(
    sample: ChunkSample, label: int, params: ModelParams, epsilon: float = 1e-5
) -> dict[str, np.ndarray]:
    """Central finite differences of the loss for every parameter entry."""
    numeric = params.zeros_like()
    for name, tensor in params.items():
        flat = tensor.reshape(-1)
        out = numeric[name].reshape(-1)
        for idx in range(flat.size):
            original = flat[idx]
            flat[idx] = original + epsilon
            plus = sample_loss(sample, label, params, mode="eval")
            flat[idx] = original - epsilon
            minus = sample_loss(sample, label, params, mode="eval")
            flat[idx] = original
            out[idx] = (plus - minus) / (2.0 * epsilon)
    return numeric


def max_relative_error(
    analytic: dict[str, np.ndarray], numeric: dict[str, np.ndarray]
) -> float:
    """Worst elementwise |a-n| / max(|a|+|n|, 1e-6) across all tensors."""
    worst = 0.0
    for name, a in analytic.items():
        n = numeric[name]
        rel = np.abs(a - n) / np.maximum(np.abs(a) + np.abs(n), 1e-6)
        worst = max(worst, float(rel.max()) if rel.size else 0.0)
    return worst


def gradient_check(
    config: ModelConfig,
    sample: ChunkSample,
    epsilon: float = 1e-5,
    seed: int = 0,
) -> float:
    """Compare analytic gradients to central finite differences on a tiny
    instance; returns the worst relative error.

    Requires ``config.dropout == 0`` so both gradient paths see the same
    deterministic function.
    """
    if config.dropout != 0.0:
        raise ValueError("gradient_check requires dropout = 0")
    if sample.label is None:
        raise ValueError("gradient_check needs a labeled sample")
    params = init_params(config, seed=seed)
    # move off the symmetric init point so no gradient is accidentally zero
    rng = np.random.default_rng(seed + 1)
    for _, tensor in params.items():
        tensor += rng.normal(scale=0.05, size=tensor.shape)
    _, analytic = loss_and_gradients(sample, sample.label, params, mode="train")
    numeric = finite_difference_gradients(sample, sample.label, params, epsilon)
    return max_relative_error(analytic, numeric)


# ---------------------------------------------------------------------------
# Checkpoints

def save_checkpoint(
    path: str | Path,
    params: ModelParams,
    vocab: Vocabulary,
    class_names: Sequence[str],
) -> None:
    """Self-contained .npz: config, tensors, vocabulary, class names."""
    meta = {
        "version": CHECKPOINT_VERSION,
        "config": asdict(params.config),
        "class_names": list(class_names),
        "vocab": vocab.to_json_dict(),
    }
    arrays = {f"tensor/{k}": v for k, v in params.items()}
    np.savez(path, __meta__=np.asarray(json.dumps(meta)), **arrays)


def load_checkpoint(path: str | Path) -> tuple[ModelParams, Vocabulary, list[str]]:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["__meta__"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')!r}")
        cfg_dict = dict(meta["config"])
        cfg_dict["feature_names"] = tuple(cfg_dict["feature_names"])
        config = ModelConfig(**cfg_dict)
        tensors = {
            key[len("tensor/") :]: data[key]
            for key in data.files
            if key.startswith("tensor/")
        }
    params = ModelParams(config, tensors)
    vocab = Vocabulary.from_json_dict(meta["vocab"])
    return params, vocab, list(meta["class_names"])
