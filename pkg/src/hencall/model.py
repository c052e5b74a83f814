"""Multi-channel attention-RNN classifier and its checkpoint container.

Each feature channel gets its own trainable input projection, LSTM stack,
and attention pooling; the pooled contexts are concatenated and pushed
through a Boom block (expand, smooth nonlinearity, project down) to 8
output logits. Attention is single-head and query-only: the query is a
linear map of the last hidden state, keys and values are the raw hidden
states themselves.

Everything is plain numpy with an explicit reverse-mode backward pass;
training code checks the analytic gradients against finite differences.
Batched sequences are padded on the right and masked; hidden and cell
states carry forward through padded steps, so the state at the final
position always equals the state at each sequence's true last step.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import erf

CHECKPOINT_MAGIC = b"HVCK1"
CHECKPOINT_VERSION = 1

_NEG_INF = -1e30

ParamDict = dict[str, np.ndarray]


class ModelError(Exception):
    pass


class DimMismatch(ModelError):
    pass


class EmptyChannel(ModelError):
    pass


class CheckpointError(ModelError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    channel_input_dims: tuple[int, ...] = (5, 5, 80)
    hidden_size: int = 1024
    boom_dim: int = 512
    num_classes: int = 8
    dropout: float = 0.2
    depth: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "channel_input_dims", tuple(int(d) for d in self.channel_input_dims))
        if not self.channel_input_dims or any(d < 1 for d in self.channel_input_dims):
            raise ModelError("channel_input_dims must be positive")
        if self.hidden_size < 1 or self.boom_dim < 1 or self.depth < 1:
            raise ModelError("hidden_size, boom_dim and depth must be >= 1")
        if self.num_classes != 8:
            raise ModelError("the output head predicts exactly 8 call types")
        if not 0.0 <= self.dropout < 1.0:
            raise ModelError(f"dropout must be in [0, 1), got {self.dropout}")

    @property
    def num_channels(self) -> int:
        return len(self.channel_input_dims)

    @property
    def context_dim(self) -> int:
        return self.num_channels * self.hidden_size

    def to_text(self) -> str:
        dims = ",".join(str(d) for d in self.channel_input_dims)
        return (
            f"channel_input_dims={dims}\nhidden_size={self.hidden_size}\n"
            f"boom_dim={self.boom_dim}\nnum_classes={self.num_classes}\n"
            f"dropout={self.dropout!r}\ndepth={self.depth}\nseed={self.seed}\n"
        )

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        kv = dict(line.split("=", 1) for line in text.strip().splitlines() if line)
        return cls(
            channel_input_dims=tuple(int(d) for d in kv["channel_input_dims"].split(",")),
            hidden_size=int(kv["hidden_size"]),
            boom_dim=int(kv["boom_dim"]),
            num_classes=int(kv["num_classes"]),
            dropout=float(kv["dropout"]),
            depth=int(kv["depth"]),
            seed=int(kv["seed"]),
        )


@dataclass
class ForwardTrace:
    logits: np.ndarray                      # (8,)
    attention_weights: list[np.ndarray]     # per channel, (T_c,)
    cache: dict | None = None


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    cdf = 0.5 * (1.0 + erf(x / np.sqrt(2.0)))
    pdf = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
    return cdf + x * pdf


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def init_params(cfg: ModelConfig) -> ParamDict:
    """Seeded uniform(-k, k) weights with k = 1/sqrt(fan_in); zero biases
    except the LSTM forget gate, which starts at 1."""
    rng = np.random.default_rng(cfg.seed)
    h = cfg.hidden_size
    params: ParamDict = {}

    def uniform(shape: tuple[int, ...], fan_in: int) -> np.ndarray:
        k = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-k, k, size=shape)

    for c, d in enumerate(cfg.channel_input_dims):
        params[f"ch{c}.w_in"] = uniform((d, h), d)
        params[f"ch{c}.b_in"] = np.zeros(h)
        for l in range(cfg.depth):
            params[f"ch{c}.l{l}.w_x"] = uniform((h, 4 * h), h)
            params[f"ch{c}.l{l}.w_h"] = uniform((h, 4 * h), h)
            b = np.zeros(4 * h)
            b[h : 2 * h] = 1.0
            params[f"ch{c}.l{l}.b"] = b
        params[f"ch{c}.w_q"] = uniform((h, h), h)
    params["boom.w_up"] = uniform((cfg.context_dim, cfg.boom_dim), cfg.context_dim)
    params["boom.b_up"] = np.zeros(cfg.boom_dim)
    params["boom.w_down"] = uniform((cfg.boom_dim, cfg.num_classes), cfg.boom_dim)
    params["boom.b_down"] = np.zeros(cfg.num_classes)
    return params


def params_copy(params: ParamDict) -> ParamDict:
    return {k: v.copy() for k, v in params.items()}


def _lstm_layer_forward(
    x: np.ndarray, mask: np.ndarray, w_x: np.ndarray, w_h: np.ndarray, b: np.ndarray
) -> tuple[np.ndarray, dict]:
    """One LSTM layer over (B, T, H) inputs with carry-through masking."""
    bsz, t_len, h = x.shape
    i_all = np.zeros((bsz, t_len, h))
    f_all = np.zeros((bsz, t_len, h))
    g_all = np.zeros((bsz, t_len, h))
    o_all = np.zeros((bsz, t_len, h))
    chat_all = np.zeros((bsz, t_len, h))
    h_all = np.zeros((bsz, t_len, h))
    c_all = np.zeros((bsz, t_len, h))
    h_prev = np.zeros((bsz, h))
    c_prev = np.zeros((bsz, h))
    for t in range(t_len):
        pre = x[:, t, :] @ w_x + h_prev @ w_h + b
        i = _sigmoid(pre[:, :h])
        f = _sigmoid(pre[:, h : 2 * h])
        g = np.tanh(pre[:, 2 * h : 3 * h])
        o = _sigmoid(pre[:, 3 * h :])
        chat = f * c_prev + i * g
        hhat = o * np.tanh(chat)
        m = mask[:, t : t + 1]
        c_t = m * chat + (1.0 - m) * c_prev
        h_t = m * hhat + (1.0 - m) * h_prev
        i_all[:, t], f_all[:, t], g_all[:, t], o_all[:, t] = i, f, g, o
        chat_all[:, t], c_all[:, t], h_all[:, t] = chat, c_t, h_t
        h_prev, c_prev = h_t, c_t
    cache = dict(x=x, mask=mask, i=i_all, f=f_all, g=g_all, o=o_all, chat=chat_all, c=c_all, h=h_all, w_x=w_x, w_h=w_h)
    return h_all, cache


def _lstm_layer_backward(cache: dict, dh_out: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Backprop through time; dh_out is the gradient on every output state."""
    x, mask = cache["x"], cache["mask"]
    i_all, f_all, g_all, o_all = cache["i"], cache["f"], cache["g"], cache["o"]
    chat_all, c_all, h_all = cache["chat"], cache["c"], cache["h"]
    w_x, w_h = cache["w_x"], cache["w_h"]
    bsz, t_len, h = x.shape
    dx = np.zeros_like(x)
    dw_x = np.zeros_like(w_x)
    dw_h = np.zeros_like(w_h)
    db = np.zeros(4 * h)
    dh_next = np.zeros((bsz, h))
    dc_next = np.zeros((bsz, h))
    for t in range(t_len - 1, -1, -1):
        m = mask[:, t : t + 1]
        dh = dh_out[:, t, :] + dh_next
        dc = dc_next
        i, f, g, o, chat = i_all[:, t], f_all[:, t], g_all[:, t], o_all[:, t], chat_all[:, t]
        c_prev = c_all[:, t - 1] if t > 0 else np.zeros((bsz, h))
        h_prev = h_all[:, t - 1] if t > 0 else np.zeros((bsz, h))
        tanh_chat = np.tanh(chat)
        dhhat = m * dh
        dchat = m * dc + dhhat * o * (1.0 - tanh_chat**2)
        do_pre = dhhat * tanh_chat * o * (1.0 - o)
        di_pre = dchat * g * i * (1.0 - i)
        df_pre = dchat * c_prev * f * (1.0 - f)
        dg_pre = dchat * i * (1.0 - g**2)
        dpre = np.concatenate([di_pre, df_pre, dg_pre, do_pre], axis=1)
        dx[:, t, :] = dpre @ w_x.T
        dw_x += x[:, t, :].T @ dpre
        dw_h += h_prev.T @ dpre
        db += dpre.sum(axis=0)
        dh_next = (1.0 - m) * dh + dpre @ w_h.T
        dc_next = (1.0 - m) * dc + dchat * f
    return dx, dw_x, dw_h, db


def _attention_forward(h_states: np.ndarray, mask: np.ndarray, w_q: np.ndarray, hidden: int) -> tuple[np.ndarray, np.ndarray, dict]:
    """Query-only dot attention over (B, T, H) states."""
    h_last = h_states[:, -1, :]
    q = h_last @ w_q
    scores = np.einsum("bh,bth->bt", q, h_states) / np.sqrt(hidden)
    scores = np.where(mask > 0, scores, _NEG_INF)
    scores -= scores.max(axis=1, keepdims=True)
    expd = np.exp(scores)
    weights = expd / expd.sum(axis=1, keepdims=True)
    context = np.einsum("bt,bth->bh", weights, h_states)
    cache = dict(h=h_states, mask=mask, q=q, weights=weights, w_q=w_q, hidden=hidden)
    return context, weights, cache


def _attention_backward(cache: dict, dcontext: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    h_states, weights, q = cache["h"], cache["weights"], cache["q"]
    w_q, hidden = cache["w_q"], cache["hidden"]
    dweights = np.einsum("bh,bth->bt", dcontext, h_states)
    dh = weights[:, :, None] * dcontext[:, None, :]
    dscores = weights * (dweights - np.sum(weights * dweights, axis=1, keepdims=True))
    scale = 1.0 / np.sqrt(hidden)
    dq = np.einsum("bt,bth->bh", dscores, h_states) * scale
    dh += dscores[:, :, None] * q[:, None, :] * scale
    dw_q = h_states[:, -1, :].T @ dq
    dh[:, -1, :] += dq @ w_q.T
    return dh, dw_q


def _pad_channel(seqs: list[np.ndarray], dim: int) -> tuple[np.ndarray, np.ndarray]:
    lengths = [s.shape[0] for s in seqs]
    t_max = max(lengths)
    x = np.zeros((len(seqs), t_max, dim))
    mask = np.zeros((len(seqs), t_max))
    for b, s in enumerate(seqs):
        x[b, : s.shape[0], :] = s
        mask[b, : s.shape[0]] = 1.0
    return x, mask


def forward_batch(
    cfg: ModelConfig,
    params: ParamDict,
    samples: list[list[np.ndarray]],
    mode: str = "eval",
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, dict]:
    """Forward pass over a batch of per-channel sequences.

    samples[b][c] is the (T_bc, d_c) sequence of channel c for sample b.
    Returns (logits (B, 8), cache for backward).
    """
    if mode not in ("train", "eval"):
        raise ModelError(f"unknown mode {mode!r}")
    if mode == "train" and cfg.dropout > 0.0 and rng is None:
        raise ModelError("train mode with dropout needs an rng")
    n_ch = cfg.num_channels
    for b, chans in enumerate(samples):
        if len(chans) != n_ch:
            raise DimMismatch(f"sample {b}: expected {n_ch} channels, got {len(chans)}")
        for c, arr in enumerate(chans):
            if arr.ndim != 2 or arr.shape[1] != cfg.channel_input_dims[c]:
                raise DimMismatch(
                    f"sample {b} channel {c}: shape {arr.shape} vs input dim {cfg.channel_input_dims[c]}"
                )
            if arr.shape[0] == 0:
                raise EmptyChannel(f"sample {b} channel {c} has no timesteps")

    keep = 1.0 - cfg.dropout
    drop = mode == "train" and cfg.dropout > 0.0
    cache: dict = {"mode": mode, "channels": [], "drop": drop}
    contexts = []
    for c in range(n_ch):
        x, mask = _pad_channel([s[c] for s in samples], cfg.channel_input_dims[c])
        if f"norm.ch{c}.mean" in params:  # input standardization, fit on the training split
            x = (x - params[f"norm.ch{c}.mean"]) / params[f"norm.ch{c}.std"]
        xp = x @ params[f"ch{c}.w_in"] + params[f"ch{c}.b_in"]
        if drop:
            m1 = (rng.random(xp.shape) < keep) / keep
            xp_d = xp * m1
        else:
            m1 = None
            xp_d = xp
        layer_caches = []
        h_in = xp_d
        for l in range(cfg.depth):
            h_in, lc = _lstm_layer_forward(
                h_in, mask, params[f"ch{c}.l{l}.w_x"], params[f"ch{c}.l{l}.w_h"], params[f"ch{c}.l{l}.b"]
            )
            layer_caches.append(lc)
        context, weights, att_cache = _attention_forward(h_in, mask, params[f"ch{c}.w_q"], cfg.hidden_size)
        contexts.append(context)
        cache["channels"].append(
            dict(x=x, mask=mask, m1=m1, layers=layer_caches, att=att_cache, weights=weights)
        )
    v = np.concatenate(contexts, axis=1)
    if drop:
        m2 = (rng.random(v.shape) < keep) / keep
        v_d = v * m2
    else:
        m2 = None
        v_d = v
    u = v_d @ params["boom.w_up"] + params["boom.b_up"]
    act = gelu(u)
    logits = act @ params["boom.w_down"] + params["boom.b_down"]
    cache.update(v=v, m2=m2, v_d=v_d, u=u, act=act)
    return logits, cache


def backward_batch(cfg: ModelConfig, params: ParamDict, cache: dict, dlogits: np.ndarray) -> ParamDict:
    """Gradients of every trainable parameter given d(loss)/d(logits);
    stored constants (normalization, class weights) get no entry."""
    grads: ParamDict = {
        k: np.zeros_like(v)
        for k, v in params.items()
        if not k.startswith("norm.") and not k.startswith("alpha.")
    }
    act, u, v_d = cache["act"], cache["u"], cache["v_d"]
    grads["boom.w_down"] = act.T @ dlogits
    grads["boom.b_down"] = dlogits.sum(axis=0)
    dact = dlogits @ params["boom.w_down"].T
    du = dact * gelu_grad(u)
    grads["boom.w_up"] = v_d.T @ du
    grads["boom.b_up"] = du.sum(axis=0)
    dv = du @ params["boom.w_up"].T
    if cache["m2"] is not None:
        dv = dv * cache["m2"]
    h = cfg.hidden_size
    for c in range(cfg.num_channels):
        ch = cache["channels"][c]
        dcontext = dv[:, c * h : (c + 1) * h]
        dh_states, dw_q = _attention_backward(ch["att"], dcontext)
        grads[f"ch{c}.w_q"] = dw_q
        dh = dh_states
        for l in range(cfg.depth - 1, -1, -1):
            dh, dw_x, dw_h, db = _lstm_layer_backward(ch["layers"][l], dh)
            grads[f"ch{c}.l{l}.w_x"] = dw_x
            grads[f"ch{c}.l{l}.w_h"] = dw_h
            grads[f"ch{c}.l{l}.b"] = db
        dxp = dh if ch["m1"] is None else dh * ch["m1"]
        grads[f"ch{c}.w_in"] = np.einsum("btd,bth->dh", ch["x"], dxp)
        grads[f"ch{c}.b_in"] = dxp.sum(axis=(0, 1))
    return grads


def encode_channel(
    cfg: ModelConfig,
    params: ParamDict,
    sequence: np.ndarray,
    channel: int,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Feature layer plus LSTM stack for one channel, (T, hidden)."""
    sequence = np.asarray(sequence, dtype=np.float64)
    if sequence.ndim != 2 or sequence.shape[1] != cfg.channel_input_dims[channel]:
        raise DimMismatch(f"channel {channel}: shape {sequence.shape} vs dim {cfg.channel_input_dims[channel]}")
    if sequence.shape[0] == 0:
        raise EmptyChannel(f"channel {channel} has no timesteps")
    keep = 1.0 - cfg.dropout
    if f"norm.ch{channel}.mean" in params:
        sequence = (sequence - params[f"norm.ch{channel}.mean"]) / params[f"norm.ch{channel}.std"]
    xp = sequence @ params[f"ch{channel}.w_in"] + params[f"ch{channel}.b_in"]
    if mode == "train" and cfg.dropout > 0.0:
        if rng is None:
            raise ModelError("train mode with dropout needs an rng")
        xp = xp * ((rng.random(xp.shape) < keep) / keep)
    mask = np.ones((1, sequence.shape[0]))
    h = xp[None, :, :]
    for l in range(cfg.depth):
        h, _ = _lstm_layer_forward(
            h, mask, params[f"ch{channel}.l{l}.w_x"], params[f"ch{channel}.l{l}.w_h"], params[f"ch{channel}.l{l}.b"]
        )
    return h[0]


def sha_attention(hidden: np.ndarray, query_proj: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Single-head attention pooling of (T, H) states; returns (context,
    weights). Query is the projected last state; keys/values are raw."""
    hidden = np.asarray(hidden, dtype=np.float64)
    t_len, h = hidden.shape
    context, weights, _ = _attention_forward(hidden[None], np.ones((1, t_len)), query_proj, h)
    return context[0], weights[0]


def boom(params: ParamDict, v: np.ndarray) -> np.ndarray:
    """Expand, GELU, project down to the 8 output logits."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (params["boom.w_up"].shape[0],):
        raise DimMismatch(f"boom input shape {v.shape} vs {params['boom.w_up'].shape[0]}")
    u = v @ params["boom.w_up"] + params["boom.b_up"]
    return gelu(u) @ params["boom.w_down"] + params["boom.b_down"]


def forward(
    cfg: ModelConfig,
    params: ParamDict,
    channels: list[np.ndarray],
    mode: str = "eval",
    rng: np.random.Generator | None = None,
) -> ForwardTrace:
    """Single-sample forward pass; channels[c] is a (T_c, d_c) sequence."""
    logits, cache = forward_batch(cfg, params, [list(channels)], mode=mode, rng=rng)
    weights = [ch["weights"][0] for ch in cache["channels"]]
    return ForwardTrace(logits=logits[0], attention_weights=weights, cache=cache)


def save_checkpoint(path: str | Path, kind: str, config_text: str, arrays: ParamDict) -> None:
    """Write a model container: magic, version, model kind, a length-prefixed
    key=value config block, then named float64 arrays."""
    out: list[bytes] = [CHECKPOINT_MAGIC, bytes([CHECKPOINT_VERSION])]
    kind_b = kind.encode("utf-8")
    out.append(struct.pack("<I", len(kind_b)))
    out.append(kind_b)
    cfg_b = config_text.encode("utf-8")
    out.append(struct.pack("<I", len(cfg_b)))
    out.append(cfg_b)
    out.append(struct.pack("<I", len(arrays)))
    for name in sorted(arrays):
        arr = np.asarray(arrays[name], dtype=np.float64)
        name_b = name.encode("utf-8")
        out.append(struct.pack("<I", len(name_b)))
        out.append(name_b)
        out.append(struct.pack("<B", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(out))


def load_checkpoint(path: str | Path) -> tuple[str, str, ParamDict]:
    data = Path(path).read_bytes()
    if data[:5] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic")
    if data[5] != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {data[5]}")
    pos = 6
    (kind_len,) = struct.unpack_from("<I", data, pos)
    pos += 4
    kind = data[pos : pos + kind_len].decode("utf-8")
    pos += kind_len
    (cfg_len,) = struct.unpack_from("<I", data, pos)
    pos += 4
    config_text = data[pos : pos + cfg_len].decode("utf-8")
    pos += cfg_len
    (n_arrays,) = struct.unpack_from("<I", data, pos)
    pos += 4
    arrays: ParamDict = {}
    for _ in range(n_arrays):
        (name_len,) = struct.unpack_from("<I", data, pos)
        pos += 4
        name = data[pos : pos + name_len].decode("utf-8")
        pos += name_len
        rank = data[pos]
        pos += 1
        dims = struct.unpack_from(f"<{rank}I", data, pos)
        pos += 4 * rank
        n = int(np.prod(dims)) if rank else 1
        arrays[name] = np.frombuffer(data[pos : pos + 8 * n], dtype="<f8").reshape(dims).copy()
        pos += 8 * n
    return kind, config_text, arrays
