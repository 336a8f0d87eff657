"""Small pre-norm transformer encoder with cosine-similarity cluster logits.

Forward and backward are written out by hand in numpy. Arrays are batched as
``(batch, frames, dim)``; 2-D inputs are treated as a batch of one.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List, Optional

import numpy as np

Params = Dict[str, np.ndarray]

_GELU_C = math.sqrt(2.0 / math.pi)


@dataclass(frozen=True)
class EncoderConfig:
    input_dim: int = 40
    n_layers: int = 4
    d_model: int = 128
    n_heads: int = 4
    d_ffn: int = 512
    d_proj: int = 64
    n_clusters: int = 32
    mask_prob: float = 0.08
    mask_len: int = 10
    temperature: float = 0.1
    layer_tap: Optional[int] = None
    positional: bool = True
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        if not 0 < self.mask_prob <= 1:
            raise ValueError("mask_prob must be in (0, 1]")
        if self.mask_len < 1:
            raise ValueError("mask_len must be >= 1")
        if not self.temperature > 0:
            raise ValueError("temperature must be > 0")
        if self.n_clusters < 1:
            raise ValueError("n_clusters must be >= 1")
        if self.layer_tap is None:
            # layer 7 of 12, scaled to the configured depth
            object.__setattr__(self, "layer_tap", max(1, int(math.floor(7 * self.n_layers / 12 + 0.5))))
        if not 1 <= self.layer_tap <= self.n_layers:
            raise ValueError(f"layer_tap must be in [1, {self.n_layers}]")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        return cls(**d)

    def replace(self, **kw) -> "EncoderConfig":
        return replace(self, **kw)


@dataclass
class EncoderState:
    config: EncoderConfig
    params: Params

    @property
    def dtype(self):
        return self.params["input_proj.w"].dtype

    def copy(self) -> "EncoderState":
        return EncoderState(self.config, {k: v.copy() for k, v in self.params.items()})

    def astype(self, dtype) -> "EncoderState":
        return EncoderState(self.config, {k: v.astype(dtype) for k, v in self.params.items()})


LAYER_PARAMS = ("ln1.g", "ln1.b", "attn.wq", "attn.bq", "attn.wk", "attn.wv", "attn.bv", "attn.wo", "attn.bo",
                "ln2.g", "ln2.b", "ffn.w1", "ffn.b1", "ffn.w2", "ffn.b2")


def param_group(name: str) -> str:
    """Coarse grouping used by gradient-check reports."""
    if name.startswith("layers."):
        sub = name.split(".", 2)[2]
        if sub.startswith("attn."):
            return "attention"
        if sub.startswith("ln"):
            return "layer_norm"
        return "ffn"
    return name.split(".")[0]


def init_state(config: EncoderConfig, seed: int = 0, dtype=np.float32, uniform_logits: bool = True) -> EncoderState:
    """Random initial parameters.

    With ``uniform_logits`` every codeword starts as the same unit vector, so
    all cluster logits are equal and the initial loss is exactly ``ln K``.
    """
    rng = np.random.default_rng(seed)
    d, f, L = config.d_model, config.d_ffn, config.n_layers

    def dense(n_in, n_out, scale=1.0):
        return rng.normal(0.0, scale / math.sqrt(n_in), size=(n_in, n_out))

    p: Params = {
        "input_proj.w": dense(config.input_dim, d),
        "input_proj.b": np.zeros(d),
        "mask_emb": rng.normal(0.0, 1.0, size=d),
    }
    resid = 1.0 / math.sqrt(2 * L)
    for i in range(L):
        pre = f"layers.{i}."
        p[pre + "ln1.g"] = np.ones(d)
        p[pre + "ln1.b"] = np.zeros(d)
        p[pre + "attn.wq"] = dense(d, d)
        p[pre + "attn.bq"] = np.zeros(d)
        p[pre + "attn.wk"] = dense(d, d)
        p[pre + "attn.wv"] = dense(d, d)
        p[pre + "attn.bv"] = np.zeros(d)
        p[pre + "attn.wo"] = dense(d, d, resid)
        p[pre + "attn.bo"] = np.zeros(d)
        p[pre + "ln2.g"] = np.ones(d)
        p[pre + "ln2.b"] = np.zeros(d)
        p[pre + "ffn.w1"] = dense(d, f)
        p[pre + "ffn.b1"] = np.zeros(f)
        p[pre + "ffn.w2"] = dense(f, d, resid)
        p[pre + "ffn.b2"] = np.zeros(d)
    p["output_proj.w"] = dense(d, config.d_proj)
    p["output_proj.b"] = np.zeros(config.d_proj)
    if uniform_logits:
        v = rng.normal(size=config.d_proj)
        p["codewords"] = np.tile(v / np.linalg.norm(v), (config.n_clusters, 1))
    else:
        p["codewords"] = rng.normal(size=(config.n_clusters, config.d_proj))
    return EncoderState(config, {k: np.asarray(v, dtype=dtype) for k, v in p.items()})


_POS_CACHE: Dict[tuple, np.ndarray] = {}


def positional_table(n_frames: int, d_model: int) -> np.ndarray:
    key = (n_frames, d_model)
    if key not in _POS_CACHE:
        pos = np.arange(n_frames)[:, None]
        i = np.arange(0, d_model, 2)[None]
        angle = pos / np.power(10000.0, i / d_model)
        table = np.zeros((n_frames, d_model))
        table[:, 0::2] = np.sin(angle)
        table[:, 1::2] = np.cos(angle)[:, : d_model // 2]
        _POS_CACHE[key] = table
    return _POS_CACHE[key]


# -- building blocks -------------------------------------------------------------


def _layer_norm(x, g, b, eps):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * rstd
    return xhat * g + b, (xhat, rstd)


def _layer_norm_back(dy, g, cache):
    xhat, rstd = cache
    dg = (dy * xhat).reshape(-1, xhat.shape[-1]).sum(axis=0)
    db = dy.reshape(-1, dy.shape[-1]).sum(axis=0)
    dxhat = dy * g
    dx = rstd * (dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    return dx, dg, db


def _gelu(u):
    t = np.tanh(_GELU_C * u * (1.0 + 0.044715 * u * u))
    return 0.5 * u * (1.0 + t), t


def _gelu_back(du_out, u, t):
    return du_out * (0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * u * u))


def _softmax(s, axis=-1):
    s = s - s.max(axis=axis, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=axis, keepdims=True)


def _split_heads(x, n_heads):
    B, T, d = x.shape
    return x.reshape(B, T, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    B, H, T, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, T, H * dh)


def _flat(x):
    return x.reshape(-1, x.shape[-1])


def _safe_normalize(x):
    """Row-normalize; zero rows stay zero (cosine with a zero vector is 0)."""
    norm = np.sqrt((x * x).sum(axis=-1, keepdims=True))
    ok = norm > 0
    inv = np.where(ok, 1.0 / np.where(ok, norm, 1.0), 0.0)
    return x * inv, inv


def _safe_normalize_back(dxn, xn, inv):
    return (dxn - xn * (dxn * xn).sum(axis=-1, keepdims=True)) * inv


# -- forward / backward -----------------------------------------------------------


@dataclass
class ForwardResult:
    activations: List[np.ndarray]
    logits: Optional[np.ndarray]
    cache: Optional[dict] = field(default=None, repr=False)


def forward(state: EncoderState, features, mask=None, *, keep_cache: bool = False,
            compute_logits: bool = True, upto_layer: Optional[int] = None) -> ForwardResult:
    """Run the encoder.

    ``features`` is ``(B, T, input_dim)`` or ``(T, input_dim)``; ``mask`` a
    boolean array of matching leading shape (True = masked). Returns the
    ``L + 1`` residual-stream activations (input embedding, then each block's
    output) and, unless disabled, the ``(B, T, K)`` cluster logits.
    """
    cfg, p = state.config, state.params
    dtype = state.dtype
    x = np.asarray(getattr(features, "data", features), dtype=dtype)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    B, T, D = x.shape
    if D != cfg.input_dim:
        raise ValueError(f"feature dim {D} does not match encoder input_dim {cfg.input_dim}")
    if mask is None:
        m = np.zeros((B, T), dtype=bool)
    else:
        m = np.asarray(getattr(mask, "mask", mask), dtype=bool).reshape(B, T)

    h = x @ p["input_proj.w"] + p["input_proj.b"]
    h = np.where(m[..., None], p["mask_emb"], h)
    if cfg.positional:
        h = h + positional_table(T, cfg.d_model).astype(dtype)
    acts = [h]
    caches = []
    n_layers = cfg.n_layers if upto_layer is None else upto_layer
    H = cfg.n_heads
    scale = 1.0 / math.sqrt(cfg.d_head)
    for i in range(n_layers):
        pre = f"layers.{i}."
        a, ln1 = _layer_norm(h, p[pre + "ln1.g"], p[pre + "ln1.b"], cfg.ln_eps)
        q = _split_heads(a @ p[pre + "attn.wq"] + p[pre + "attn.bq"], H)
        k = _split_heads(a @ p[pre + "attn.wk"], H)
        v = _split_heads(a @ p[pre + "attn.wv"] + p[pre + "attn.bv"], H)
        att = _softmax((q @ k.transpose(0, 1, 3, 2)) * scale)
        o = _merge_heads(att @ v)
        h1 = h + o @ p[pre + "attn.wo"] + p[pre + "attn.bo"]
        c, ln2 = _layer_norm(h1, p[pre + "ln2.g"], p[pre + "ln2.b"], cfg.ln_eps)
        u = c @ p[pre + "ffn.w1"] + p[pre + "ffn.b1"]
        g, t = _gelu(u)
        h = h1 + g @ p[pre + "ffn.w2"] + p[pre + "ffn.b2"]
        if not np.all(np.isfinite(h)):
            raise FloatingPointError(f"non-finite activations in encoder layer {i + 1}")
        acts.append(h)
        if keep_cache:
            caches.append(dict(a=a, ln1=ln1, q=q, k=k, v=v, att=att, o=o, c=c, ln2=ln2, u=u, g=g, t=t))

    logits = None
    out_cache = None
    if compute_logits and upto_layer is None:
        z = h @ p["output_proj.w"] + p["output_proj.b"]
        zn, zinv = _safe_normalize(z)
        en, einv = _safe_normalize(p["codewords"])
        logits = (zn @ en.T) / cfg.temperature
        out_cache = dict(zn=zn, zinv=zinv, en=en, einv=einv)

    cache = None
    if keep_cache:
        cache = dict(x=x, mask=m, layers=caches, acts=acts, out=out_cache)
    if squeeze:
        acts = [a_[0] for a_ in acts]
        logits = None if logits is None else logits[0]
    return ForwardResult(acts, logits, cache)


def backward(state: EncoderState, cache: dict, d_logits=None, d_final=None) -> Params:
    """Exact gradients of a scalar objective w.r.t. every parameter.

    ``d_logits`` is the gradient w.r.t. the cluster logits and ``d_final``
    w.r.t. the last layer's activations; either may be omitted. Shapes follow
    the forward call (batched or not).
    """
    cfg, p = state.config, state.params
    grads: Params = {k: np.zeros_like(v) for k, v in p.items()}
    acts = cache["acts"]
    B, T, d = acts[-1].shape

    def batched(g):
        g = np.asarray(g, dtype=state.dtype)
        return g[None] if g.ndim == 2 else g

    dh = np.zeros((B, T, d), dtype=state.dtype)
    if d_final is not None:
        dh = dh + batched(d_final)
    if d_logits is not None:
        dl = batched(d_logits) / cfg.temperature
        oc = cache["out"]
        dzn = dl @ oc["en"]
        den = _flat(dl).T @ _flat(oc["zn"])
        grads["codewords"] = _safe_normalize_back(den, oc["en"], oc["einv"])
        dz = _safe_normalize_back(dzn, oc["zn"], oc["zinv"])
        grads["output_proj.w"] = _flat(acts[-1]).T @ _flat(dz)
        grads["output_proj.b"] = _flat(dz).sum(axis=0)
        dh = dh + dz @ p["output_proj.w"].T

    H = cfg.n_heads
    scale = 1.0 / math.sqrt(cfg.d_head)
    for i in reversed(range(cfg.n_layers)):
        pre = f"layers.{i}."
        lc = cache["layers"][i]
        # FFN branch: h = h1 + gelu(LN2(h1) W1 + b1) W2 + b2
        grads[pre + "ffn.w2"] = _flat(lc["g"]).T @ _flat(dh)
        grads[pre + "ffn.b2"] = _flat(dh).sum(axis=0)
        du = _gelu_back(dh @ p[pre + "ffn.w2"].T, lc["u"], lc["t"])
        grads[pre + "ffn.w1"] = _flat(lc["c"]).T @ _flat(du)
        grads[pre + "ffn.b1"] = _flat(du).sum(axis=0)
        dc = du @ p[pre + "ffn.w1"].T
        dh1, grads[pre + "ln2.g"], grads[pre + "ln2.b"] = _layer_norm_back(dc, p[pre + "ln2.g"], lc["ln2"])
        dh1 = dh1 + dh
        # attention branch: h1 = h + MHA(LN1(h))
        grads[pre + "attn.wo"] = _flat(lc["o"]).T @ _flat(dh1)
        grads[pre + "attn.bo"] = _flat(dh1).sum(axis=0)
        do = _split_heads(dh1 @ p[pre + "attn.wo"].T, H)
        att, q, k, v = lc["att"], lc["q"], lc["k"], lc["v"]
        datt = do @ v.transpose(0, 1, 3, 2)
        dv = att.transpose(0, 1, 3, 2) @ do
        ds = att * (datt - (datt * att).sum(axis=-1, keepdims=True)) * scale
        dq = _merge_heads(ds @ k)
        dk = _merge_heads(ds.transpose(0, 1, 3, 2) @ q)
        dv = _merge_heads(dv)
        a = _flat(lc["a"])
        grads[pre + "attn.wq"] = a.T @ _flat(dq)
        grads[pre + "attn.bq"] = _flat(dq).sum(axis=0)
        grads[pre + "attn.wk"] = a.T @ _flat(dk)
        grads[pre + "attn.wv"] = a.T @ _flat(dv)
        grads[pre + "attn.bv"] = _flat(dv).sum(axis=0)
        da = dq @ p[pre + "attn.wq"].T + dk @ p[pre + "attn.wk"].T + dv @ p[pre + "attn.wv"].T
        dx, grads[pre + "ln1.g"], grads[pre + "ln1.b"] = _layer_norm_back(da, p[pre + "ln1.g"], lc["ln1"])
        dh = dh1 + dx

    m = cache["mask"][..., None]
    grads["mask_emb"] = (dh * m).reshape(-1, d).sum(axis=0)
    dproj = np.where(m, 0.0, dh).astype(state.dtype)
    grads["input_proj.w"] = _flat(cache["x"]).T @ _flat(dproj)
    grads["input_proj.b"] = _flat(dproj).sum(axis=0)
    return grads


def layer_features(state: EncoderState, features, layer: int) -> np.ndarray:
    """Unmasked activations after block ``layer`` (1-based)."""
    if not 1 <= layer <= state.config.n_layers:
        raise ValueError(f"layer must be in [1, {state.config.n_layers}], got {layer}")
    return forward(state, features, None, compute_logits=False, upto_layer=layer).activations[layer]


def logits_from_final(state: EncoderState, final: np.ndarray) -> np.ndarray:
    """Cluster logits computed from last-layer activations."""
    p = state.params
    zn, _ = _safe_normalize(final @ p["output_proj.w"] + p["output_proj.b"])
    en, _ = _safe_normalize(p["codewords"])
    return (zn @ en.T) / state.config.temperature


def save_encoder(path, state: EncoderState, meta: Optional[dict] = None,
                 extra: Optional[Dict[str, np.ndarray]] = None) -> None:
    """Checkpoint an encoder; ``extra`` tensors are stored under their own names."""
    from ..checkpoint import save_tensors

    tensors = {"encoder." + k: v for k, v in state.params.items()}
    tensors.update(extra or {})
    save_tensors(path, tensors, {"encoder_config": state.config.to_dict(), **(meta or {})})


def load_encoder(path):
    """Returns ``(state, meta, extra_tensors)``."""
    from ..checkpoint import load_tensors

    tensors, meta = load_tensors(path)
    params = {k[len("encoder."):]: v for k, v in tensors.items() if k.startswith("encoder.")}
    extra = {k: v for k, v in tensors.items() if not k.startswith("encoder.")}
    return EncoderState(EncoderConfig.from_dict(meta["encoder_config"]), params), meta, extra


def extract_layer_features(state: EncoderState, features, layer: Optional[int] = None,
                           window: Optional[int] = None, stride: Optional[int] = None):
    """Layer activations as a FrameMatrix (origin ``ENCODER_LAYER(k)``), never masked.

    ``layer`` defaults to the configured tap. Long recordings can be processed
    in overlapping windows whose outputs are averaged.
    """
    from ..features import FrameMatrix
    from ..windows import sliding_average

    k = state.config.layer_tap if layer is None else layer
    if not 1 <= k <= state.config.n_layers:
        raise ValueError(f"layer must be in [1, {state.config.n_layers}], got {k}")
    x = np.asarray(getattr(features, "data", features), dtype=state.dtype)
    if window is None:
        data = layer_features(state, x, k)
    else:
        data = sliding_average(
            lambda b: forward(state, b, None, compute_logits=False, upto_layer=k).activations[k],
            x, window, stride or window // 2)
    return FrameMatrix(np.asarray(data), origin=f"ENCODER_LAYER({k})")
