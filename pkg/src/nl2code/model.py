"""Transformer encoder-decoder and the recurrent additive-attention baseline.

Both architectures live behind one ``Model`` holding a flat name -> Tensor
parameter map. Shapes come from ``param_shapes(config)`` so the parameter
count is a pure function of the configuration.
"""
from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import tensor as T
from .errors import ConfigurationError, LengthError, VocabularyError
from .tensor import Tensor

NEG_INF = -np.inf


@dataclass
class ModelConfig:
    arch: str = "transformer"
    d_model: int = 256
    n_heads: int = 8
    n_encoder_layers: int = 3
    n_decoder_layers: int = 3
    d_ff: int = 512
    dropout: float = 0.25
    max_len: int = 50
    activation: str = "relu"
    tie_encoder_decoder: bool = False
    src_vocab_size: int = 8000
    tgt_vocab_size: int = 8000
    init_std: float = 0.02
    learned_positions: bool = False
    tie_output_embedding: bool = True
    layer_norm_eps: float = 1e-5
    pad_id: int = 0
    bos_id: int = 1
    eos_id: int = 2

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.arch not in ("transformer", "recurrent"):
            raise ConfigurationError(f"unknown arch {self.arch!r}")
        if self.d_model <= 0 or self.n_heads <= 0:
            raise ConfigurationError("d_model and n_heads must be positive")
        if self.arch == "transformer" and self.d_model % self.n_heads:
            raise ConfigurationError(
                f"d_model {self.d_model} is not divisible by n_heads {self.n_heads}")
        if self.max_len < 2:
            raise ConfigurationError("max_len must be >= 2")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError("dropout must lie in [0, 1)")
        if self.activation not in ("relu", "gelu"):
            raise ConfigurationError(f"unknown activation {self.activation!r}")
        if self.n_encoder_layers < 0 or self.n_decoder_layers < 0:
            raise ConfigurationError("layer counts must be non-negative")
        if self.tie_encoder_decoder and self.n_encoder_layers != self.n_decoder_layers:
            raise ConfigurationError("tie_encoder_decoder needs equal encoder and decoder depth")
        if self.src_vocab_size <= 0 or self.tgt_vocab_size <= 0:
            raise ConfigurationError("vocabulary sizes must be positive")

    @property
    def d_head(self):
        return self.d_model // self.n_heads

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


# ------------------------------------------------------------------ parameters

def _attn_shapes(prefix, d):
    out = OrderedDict()
    for w in ("wq", "wk", "wv", "wo"):
        out[f"{prefix}.{w}"] = (d, d)
    for b in ("bq", "bk", "bv", "bo"):
        out[f"{prefix}.{b}"] = (d,)
    return out


def _ln_shapes(prefix, d):
    return OrderedDict([(f"{prefix}.g", (d,)), (f"{prefix}.b", (d,))])


def _ff_shapes(prefix, d, f):
    return OrderedDict([(f"{prefix}.w1", (d, f)), (f"{prefix}.b1", (f,)),
                        (f"{prefix}.w2", (f, d)), (f"{prefix}.b2", (d,))])


def _gru_shapes(prefix, d_in, h):
    return OrderedDict([(f"{prefix}.wx", (d_in, 3 * h)), (f"{prefix}.wh", (h, 3 * h)),
                        (f"{prefix}.b", (3 * h,))])


def param_shapes(config):
    """Ordered map of canonical (non-aliased) parameter names to shapes."""
    d, f = config.d_model, config.d_ff
    vs, vt = config.src_vocab_size, config.tgt_vocab_size
    shapes = OrderedDict()
    shapes["src_embed"] = (vs, d)
    shapes["tgt_embed"] = (vt, d)
    if config.arch == "recurrent":
        shapes.update(_gru_shapes("enc_f", d, d))
        shapes.update(_gru_shapes("enc_b", d, d))
        shapes["bridge.w"] = (2 * d, d)
        shapes["bridge.b"] = (d,)
        shapes.update(_gru_shapes("dec", d, d))
        shapes["att.wa"] = (d, d)
        shapes["att.ua"] = (2 * d, d)
        shapes["att.v"] = (d, 1)
        shapes["out.w"] = (4 * d, vt)
        shapes["out.b"] = (vt,)
        return shapes
    if config.learned_positions:
        shapes["src_pos"] = (config.max_len, d)
        shapes["tgt_pos"] = (config.max_len, d)
    for i in range(config.n_encoder_layers):
        p = f"enc.{i}"
        shapes.update(_attn_shapes(f"{p}.attn", d))
        shapes.update(_ln_shapes(f"{p}.ln1", d))
        shapes.update(_ff_shapes(f"{p}.ff", d, f))
        shapes.update(_ln_shapes(f"{p}.ln2", d))
    for i in range(config.n_decoder_layers):
        p = f"dec.{i}"
        if not config.tie_encoder_decoder:
            shapes.update(_attn_shapes(f"{p}.attn", d))
            shapes.update(_ln_shapes(f"{p}.ln1", d))
        shapes.update(_attn_shapes(f"{p}.cross", d))
        shapes.update(_ln_shapes(f"{p}.ln2", d))
        if not config.tie_encoder_decoder:
            shapes.update(_ff_shapes(f"{p}.ff", d, f))
            shapes.update(_ln_shapes(f"{p}.ln3", d))
    if not config.tie_output_embedding:
        shapes["out_proj"] = (d, vt)
    shapes["out_bias"] = (vt,)
    shapes["mlm_bias"] = (vs,)
    return shapes


def param_aliases(config):
    """Decoder names that share storage with encoder parameters when layers are tied."""
    if config.arch != "transformer" or not config.tie_encoder_decoder:
        return {}
    d = config.d_model
    out = {}
    for i in range(config.n_decoder_layers):
        for dec, enc in (("attn", "attn"), ("ln1", "ln1"), ("ff", "ff"), ("ln3", "ln2")):
            names = {"attn": _attn_shapes, "ln1": _ln_shapes, "ln3": _ln_shapes}
            if dec == "ff":
                sub = _ff_shapes(f"dec.{i}.ff", d, config.d_ff)
            else:
                sub = names[dec](f"dec.{i}.{dec}", d)
            for name in sub:
                out[name] = name.replace(f"dec.{i}.{dec}", f"enc.{i}.{enc}", 1)
    return out


def parameter_count(config):
    return int(sum(np.prod(s) for s in param_shapes(config).values()))


def _is_weight(name):
    leaf = name.rsplit(".", 1)[-1]
    return not (leaf == "g" or leaf.startswith("b") or name.endswith("_bias"))


class Model:
    def __init__(self, config, params):
        self.config = config
        self.params = params
        self.training = False
        self.rng = np.random.default_rng(0)

    def __getitem__(self, name):
        return self.params[name]

    def parameters(self):
        """Unique tensors in canonical order (aliases skipped)."""
        aliases = param_aliases(self.config)
        return OrderedDict((n, t) for n, t in self.params.items() if n not in aliases)

    def num_parameters(self):
        return int(sum(t.data.size for t in self.parameters().values()))

    def train(self, rng=None):
        self.training = True
        if rng is not None:
            self.rng = rng
        return self

    def eval(self):
        self.training = False
        return self

    def state_dict(self):
        return OrderedDict((n, t.data.copy()) for n, t in self.parameters().items())

    def load_state_dict(self, state):
        expected = param_shapes(self.config)
        if set(state) != set(expected):
            raise ConfigurationError("parameter names do not match the model configuration")
        for name, shape in expected.items():
            arr = np.asarray(state[name])
            if arr.shape != tuple(shape):
                raise ConfigurationError(f"{name}: shape {arr.shape} != expected {shape}")
            self.params[name].data[...] = arr

    def zero_grad(self):
        for t in self.parameters().values():
            t.grad = None


def build(config, seed=0, dtype=np.float64):
    """Fresh model: weights ~ N(0, init_std^2), biases 0, layer-norm gains 1."""
    config.validate()
    rng = np.random.default_rng(seed)
    params = OrderedDict()
    for name, shape in param_shapes(config).items():
        if name.endswith(".g"):
            data = np.ones(shape, dtype=dtype)
        elif _is_weight(name):
            data = rng.normal(0.0, config.init_std, size=shape).astype(dtype)
        else:
            data = np.zeros(shape, dtype=dtype)
        params[name] = Tensor(data, requires_grad=True)
    for alias, canon in param_aliases(config).items():
        params[alias] = params[canon]
    return Model(config, params)


# ------------------------------------------------------------------- attention

def scaled_dot_attention(q, k, v, mask=None, dropout_p=0.0, rng=None, training=False):
    """softmax(Q K^T / sqrt(d_k)) V with ``mask`` True at positions set to -inf."""
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise T.DimensionError(
            f"scaled_dot_attention: Q {q.shape}, K {k.shape}, V {v.shape} are incompatible")
    scores = T.scale(T.matmul(q, T.swap_last(k)), 1.0 / math.sqrt(q.shape[-1]))
    if mask is not None:
        scores = T.masked_fill(scores, mask, NEG_INF)
    weights = T.softmax(scores, axis=-1)
    attn = T.dropout(weights, dropout_p, rng, training) if dropout_p else weights
    return T.matmul(attn, v), weights


def _linear(x, w, b=None):
    y = T.matmul(x, w)
    return y if b is None else T.add(y, b)


def _split_heads(x, h):
    b, n, d = x.shape
    return T.transpose(T.reshape(x, (b, n, h, d // h)), (0, 2, 1, 3))


def _merge_heads(x):
    b, h, n, dh = x.shape
    return T.reshape(T.transpose(x, (0, 2, 1, 3)), (b, n, h * dh))


def multi_head_attention(p, queries, keys, values, mask, n_heads, return_weights=False):
    """Concat(head_1..head_h) W^O over projected subspaces.

    ``p`` maps wq/wk/wv/wo and bq/bk/bv/bo to tensors; inputs are (B, L, d_model).
    """
    q = _split_heads(_linear(queries, p["wq"], p["bq"]), n_heads)
    k = _split_heads(_linear(keys, p["wk"], p["bk"]), n_heads)
    v = _split_heads(_linear(values, p["wv"], p["bv"]), n_heads)
    heads, weights = scaled_dot_attention(q, k, v, mask)
    out = _linear(_merge_heads(heads), p["wo"], p["bo"])
    return (out, weights) if return_weights else out


def _sub(model, prefix):
    n = len(prefix) + 1
    return {k[n:]: t for k, t in model.params.items() if k.startswith(prefix + ".")}


# --------------------------------------------------------------------- helpers

_PE_CACHE = {}


def sinusoidal_table(max_len, d):
    key = (max_len, d)
    if key not in _PE_CACHE:
        pos = np.arange(max_len)[:, None]
        i = np.arange(d)[None, :]
        angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
        pe = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
        _PE_CACHE[key] = pe
    return _PE_CACHE[key]


def _as_batch(ids):
    arr = np.asarray(ids, dtype=np.int64)
    if arr.ndim == 1:
        return arr[None, :], True
    if arr.ndim != 2:
        raise T.DimensionError(f"id array must be 1-D or 2-D, got shape {arr.shape}")
    return arr, False


def _check_ids(ids, vocab_size, max_len, what):
    if ids.shape[1] > max_len:
        raise LengthError(f"{what} length {ids.shape[1]} exceeds max_len {max_len}")
    if ids.size and (ids.min() < 0 or ids.max() >= vocab_size):
        raise VocabularyError(f"{what} contains an id outside [0, {vocab_size})")


def _embed(model, ids, table, pos):
    cfg = model.config
    x = T.scale(T.embedding_lookup(model.params[table], ids), math.sqrt(cfg.d_model))
    n = ids.shape[1]
    if cfg.learned_positions:
        x = T.add(x, T.index(model.params[pos], slice(0, n)))
    else:
        x = T.add(x, Tensor(sinusoidal_table(cfg.max_len, cfg.d_model)[:n].astype(x.dtype)))
    return _drop(model, x)


def _drop(model, x):
    return T.dropout(x, model.config.dropout, model.rng, model.training)


def _ffn(model, p, x):
    h = _linear(x, p["w1"], p["b1"])
    h = T.gelu(h) if model.config.activation == "gelu" else T.relu(h)
    return _linear(h, p["w2"], p["b2"])


def _norm(model, p, x):
    return T.layer_norm(x, p["g"], p["b"], model.config.layer_norm_eps)


def causal_mask(n):
    """True above the diagonal: position q may not see keys k > q."""
    return np.triu(np.ones((n, n), dtype=bool), k=1)


# ------------------------------------------------------------------ transformer

def encode(model, src_ids, src_pad_mask=None):
    """Encoder memory of shape (B, S, d_model) (or (S, d_model) for 1-D input)."""
    cfg = model.config
    src, single = _as_batch(src_ids)
    _check_ids(src, cfg.src_vocab_size, cfg.max_len, "source")
    pad = (src == cfg.pad_id) if src_pad_mask is None else np.asarray(src_pad_mask, bool).reshape(src.shape)
    if cfg.arch == "recurrent":
        mem = _recurrent_encode(model, src, pad)
    else:
        mem = _transformer_encode(model, src, pad)
    return T.index(mem, 0) if single else mem


def _transformer_encode(model, src, pad):
    cfg = model.config
    x = _embed(model, src, "src_embed", "src_pos")
    mask = pad[:, None, None, :]
    for i in range(cfg.n_encoder_layers):
        p = f"enc.{i}"
        a = multi_head_attention(_sub(model, f"{p}.attn"), x, x, x, mask, cfg.n_heads)
        x = _norm(model, _sub(model, f"{p}.ln1"), T.add(x, _drop(model, a)))
        f = _ffn(model, _sub(model, f"{p}.ff"), x)
        x = _norm(model, _sub(model, f"{p}.ln2"), T.add(x, _drop(model, f)))
    return x


def _transformer_decode(model, memory, tgt, src_pad):
    cfg = model.config
    y = _embed(model, tgt, "tgt_embed", "tgt_pos")
    self_mask = causal_mask(tgt.shape[1])[None, None]
    cross_mask = src_pad[:, None, None, :]
    for i in range(cfg.n_decoder_layers):
        p = f"dec.{i}"
        a = multi_head_attention(_sub(model, f"{p}.attn"), y, y, y, self_mask, cfg.n_heads)
        y = _norm(model, _sub(model, f"{p}.ln1"), T.add(y, _drop(model, a)))
        c = multi_head_attention(_sub(model, f"{p}.cross"), y, memory, memory, cross_mask, cfg.n_heads)
        y = _norm(model, _sub(model, f"{p}.ln2"), T.add(y, _drop(model, c)))
        f = _ffn(model, _sub(model, f"{p}.ff"), y)
        y = _norm(model, _sub(model, f"{p}.ln3"), T.add(y, _drop(model, f)))
    if cfg.tie_output_embedding:
        logits = T.matmul(y, T.transpose(model.params["tgt_embed"], (1, 0)))
    else:
        logits = T.matmul(y, model.params["out_proj"])
    return T.add(logits, model.params["out_bias"])


def _decode(model, memory, tgt, src_pad):
    if model.config.arch == "recurrent":
        return _recurrent_decode(model, memory, tgt, src_pad)[0]
    return _transformer_decode(model, memory, tgt, src_pad)


def forward_teacher_forced(model, src_ids, tgt_ids):
    """Logits (B, T, V) for every decoder input position; ``tgt_ids`` starts with bos."""
    cfg = model.config
    src, single = _as_batch(src_ids)
    tgt, _ = _as_batch(tgt_ids)
    _check_ids(tgt, cfg.tgt_vocab_size, cfg.max_len, "target")
    pad = src == cfg.pad_id
    memory = encode(model, src, pad)
    logits = _decode(model, memory, tgt, pad)
    return T.index(logits, 0) if single else logits


def decode_step(model, memory, tgt_prefix_ids, src_pad_mask=None):
    """Next-token logits after ``tgt_prefix_ids`` given encoder ``memory``."""
    cfg = model.config
    prefix, single = _as_batch(tgt_prefix_ids)
    _check_ids(prefix, cfg.tgt_vocab_size, cfg.max_len, "target prefix")
    mem = memory if memory.ndim == 3 else T.reshape(memory, (1,) + memory.shape)
    if mem.shape[0] != prefix.shape[0]:
        if mem.shape[0] != 1:
            raise T.DimensionError(
                f"decode_step: memory batch {mem.shape[0]} vs prefix batch {prefix.shape[0]}")
        mem = Tensor(np.repeat(mem.data, prefix.shape[0], axis=0))
    if src_pad_mask is None:
        pad = np.zeros(mem.shape[:2], dtype=bool)
    else:
        pad = np.asarray(src_pad_mask, dtype=bool).reshape(-1, mem.shape[1])
        if pad.shape[0] != mem.shape[0]:
            pad = np.repeat(pad, mem.shape[0], axis=0)
    logits = _decode(model, mem, prefix, pad)
    last = T.index(logits, (slice(None), -1))
    return T.index(last, 0) if single else last


def mlm_logits(model, ids):
    """Masked-LM head: encoder states projected onto the tied source embedding."""
    cfg = model.config
    if cfg.arch != "transformer":
        raise ConfigurationError("masked-LM head needs the transformer architecture")
    src, single = _as_batch(ids)
    _check_ids(src, cfg.src_vocab_size, cfg.max_len, "input")
    mem = _transformer_encode(model, src, src == cfg.pad_id)
    logits = T.add(T.matmul(mem, T.transpose(model.params["src_embed"], (1, 0))),
                   model.params["mlm_bias"])
    return T.index(logits, 0) if single else logits


# -------------------------------------------------------------------- recurrent

def _gru(p, x, h, hidden):
    gx = _linear(x, p["wx"], p["b"])
    gh = T.matmul(h, p["wh"])
    z = T.sigmoid(T.add(gx[..., :hidden], gh[..., :hidden]))
    r = T.sigmoid(T.add(gx[..., hidden:2 * hidden], gh[..., hidden:2 * hidden]))
    n = T.tanh(T.add(gx[..., 2 * hidden:], T.mul(r, gh[..., 2 * hidden:])))
    # h' = (1 - z) * n + z * h
    return T.add(n, T.mul(z, T.add(h, T.neg(n))))


def _masked_update(new, old, keep):
    k = Tensor(keep[:, None].astype(new.dtype))
    return T.add(old, T.mul(k, T.add(new, T.neg(old))))


def _recurrent_encode(model, src, pad):
    d = model.config.d_model
    b, s = src.shape
    x = _drop(model, T.embedding_lookup(model.params["src_embed"], src))
    pf, pb = _sub(model, "enc_f"), _sub(model, "enc_b")
    zero = Tensor(np.zeros((b, d), dtype=x.dtype))
    fwd, bwd = [None] * s, [None] * s
    h = zero
    for t in range(s):
        h = _masked_update(_gru(pf, x[:, t], h, d), h, ~pad[:, t])
        fwd[t] = h
    h = zero
    for t in range(s - 1, -1, -1):
        h = _masked_update(_gru(pb, x[:, t], h, d), h, ~pad[:, t])
        bwd[t] = h
    return T.concat([T.stack(fwd, axis=1), T.stack(bwd, axis=1)], axis=-1)


def _recurrent_decode(model, memory, tgt, src_pad):
    d = model.config.d_model
    b, s = src_pad.shape
    lengths = np.maximum((~src_pad).sum(axis=1), 1)
    fwd_last = T.index(memory, (np.arange(b), lengths - 1, slice(0, d)))
    bwd_first = T.index(memory, (slice(None), 0, slice(d, 2 * d)))
    h = T.tanh(_linear(T.concat([fwd_last, bwd_first], axis=-1),
                       model.params["bridge.w"], model.params["bridge.b"]))
    keys = T.matmul(memory, model.params["att.ua"])  # (B, S, A)
    pdec = _sub(model, "dec")
    emb = _drop(model, T.embedding_lookup(model.params["tgt_embed"], tgt))
    outs, attn = [], []
    for t in range(tgt.shape[1]):
        e = emb[:, t]
        h = _gru(pdec, e, h, d)
        q = T.matmul(h, model.params["att.wa"])  # (B, A)
        energy = T.tanh(T.add(keys, T.reshape(q, (b, 1, q.shape[-1]))))
        scores = T.reshape(T.matmul(energy, model.params["att.v"]), (b, s))
        weights = T.softmax(T.masked_fill(scores, src_pad, NEG_INF), axis=-1)
        context = T.reshape(T.matmul(T.reshape(weights, (b, 1, s)), memory), (b, 2 * d))
        feats = T.concat([h, context, e], axis=-1)
        outs.append(_linear(_drop(model, feats), model.params["out.w"], model.params["out.b"]))
        attn.append(weights)
    return T.stack(outs, axis=1), attn


def recurrent_forward(model, src_ids, tgt_ids, return_attention=False):
    """Bidirectional-GRU encoder, GRU decoder with additive attention; logits (B, T, V)."""
    cfg = model.config
    if cfg.arch != "recurrent":
        raise ConfigurationError("recurrent_forward needs arch='recurrent'")
    src, single = _as_batch(src_ids)
    tgt, _ = _as_batch(tgt_ids)
    _check_ids(tgt, cfg.tgt_vocab_size, cfg.max_len, "target")
    pad = src == cfg.pad_id
    memory = encode(model, src, pad)
    logits, attn = _recurrent_decode(model, memory, tgt, pad)
    if single:
        logits = T.index(logits, 0)
    return (logits, attn) if return_attention else logits


def forward(model, src_ids, tgt_ids):
    if model.config.arch == "recurrent":
        return recurrent_forward(model, src_ids, tgt_ids)
    return forward_teacher_forced(model, src_ids, tgt_ids)
