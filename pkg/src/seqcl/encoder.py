"""Frame-level temporal encoder: projection block, sine-cosine positional
encoding, a small pre-norm Transformer stack, an output head producing
frame-wise representations H, and a two-layer projection head producing the
latent embeddings Z used by the contrastive loss.

Everything is plain numpy with hand-derived reverse-mode gradients; the
backward pass is exact and is held to a finite-difference contract in the
tests. Normalization in the projection block is batch norm over the T frames
of a view (batch statistics while training, running statistics at eval).
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, SeqclError

CKPT_MAGIC = b"CKPT"
CKPT_VERSION = 1
BN_EPS = 1e-5
LN_EPS = 1e-5
BN_MOMENTUM = 0.1


@dataclass
class EncoderConfig:
    input_dim: int
    model_dim: int = 256
    num_layers: int = 3
    num_heads: int = 8
    ffn_dim: int = 1024
    out_dim: int = 128
    proj_hidden: int = 256
    proj_out: int = 128
    dropout: float = 0.0

    def __post_init__(self):
        dims = (
            self.input_dim, self.model_dim, self.num_layers, self.num_heads,
            self.ffn_dim, self.out_dim, self.proj_hidden, self.proj_out,
        )
        if any(d < 1 for d in dims):
            raise ConfigError(f"all encoder dimensions must be >= 1, got {self}")
        if self.model_dim % self.num_heads != 0:
            raise ConfigError(
                f"model_dim={self.model_dim} not divisible by num_heads={self.num_heads}"
            )
        if self.model_dim % 2 != 0:
            raise ConfigError(f"model_dim must be even for sin/cos encoding")
        if not 0 <= self.dropout < 1:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")


@dataclass
class EncoderParams:
    tensors: dict[str, np.ndarray]  # learnable
    buffers: dict[str, np.ndarray]  # batch-norm running statistics


@dataclass
class EmbeddingSequence:
    H: np.ndarray  # (T, out_dim) frame-wise representations
    Z: np.ndarray  # (T, proj_out) latent embeddings for the loss


def _affine_shapes(cfg: EncoderConfig) -> dict[str, tuple[int, int]]:
    m, f = cfg.model_dim, cfg.ffn_dim
    shapes = {
        "proj.fc1": (cfg.input_dim, m),
        "proj.fc2": (m, m),
        "out": (m, cfg.out_dim),
        "head.fc1": (cfg.out_dim, cfg.proj_hidden),
        "head.fc2": (cfg.proj_hidden, cfg.proj_out),
    }
    for i in range(cfg.num_layers):
        shapes[f"layer{i}.attn.q"] = (m, m)
        shapes[f"layer{i}.attn.k"] = (m, m)
        shapes[f"layer{i}.attn.v"] = (m, m)
        shapes[f"layer{i}.attn.o"] = (m, m)
        shapes[f"layer{i}.ffn.fc1"] = (m, f)
        shapes[f"layer{i}.ffn.fc2"] = (f, m)
    return shapes


def _norm_names(cfg: EncoderConfig) -> list[str]:
    names = ["proj.bn1", "proj.bn2"]
    for i in range(cfg.num_layers):
        names += [f"layer{i}.ln1", f"layer{i}.ln2"]
    return names


def init_params(cfg: EncoderConfig, seed: int) -> EncoderParams:
    """Uniform +-sqrt(1/fan_in) affine init; unit-scale zero-shift norms."""
    rng = np.random.default_rng(seed)
    tensors: dict[str, np.ndarray] = {}
    for name, (fan_in, fan_out) in _affine_shapes(cfg).items():
        bound = np.sqrt(1.0 / fan_in)
        tensors[f"{name}.W"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        tensors[f"{name}.b"] = rng.uniform(-bound, bound, size=fan_out)
    for name in _norm_names(cfg):
        width = cfg.model_dim
        tensors[f"{name}.gamma"] = np.ones(width)
        tensors[f"{name}.beta"] = np.zeros(width)
    buffers = {
        "proj.bn1.mean": np.zeros(cfg.model_dim),
        "proj.bn1.var": np.ones(cfg.model_dim),
        "proj.bn2.mean": np.zeros(cfg.model_dim),
        "proj.bn2.var": np.ones(cfg.model_dim),
    }
    return EncoderParams(tensors=tensors, buffers=buffers)


def positional_encoding(T: int, model_dim: int) -> np.ndarray:
    if model_dim % 2 != 0:
        raise ConfigError(f"model_dim must be even, got {model_dim}")
    pos = np.arange(T)[:, None]
    i = np.arange(model_dim // 2)[None, :]
    angle = pos / np.power(10000.0, 2.0 * i / model_dim)
    pe = np.empty((T, model_dim))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return pe


# --- layer primitives (forward returns cache for the exact backward) ---


def _bn_forward(x, gamma, beta, train, buffers, key):
    if train:
        mu = x.mean(axis=0)
        var = x.var(axis=0)
        buffers[f"{key}.mean"] = (1 - BN_MOMENTUM) * buffers[f"{key}.mean"] + BN_MOMENTUM * mu
        buffers[f"{key}.var"] = (1 - BN_MOMENTUM) * buffers[f"{key}.var"] + BN_MOMENTUM * var
    else:
        mu = buffers[f"{key}.mean"]
        var = buffers[f"{key}.var"]
    invstd = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - mu) * invstd
    return gamma * xhat + beta, {"xhat": xhat, "invstd": invstd, "train": train}


def _bn_backward(dy, cache, gamma):
    xhat, invstd = cache["xhat"], cache["invstd"]
    dgamma = (dy * xhat).sum(axis=0)
    dbeta = dy.sum(axis=0)
    dxhat = dy * gamma
    if cache["train"]:
        dx = invstd * (
            dxhat
            - dxhat.mean(axis=0)
            - xhat * (dxhat * xhat).mean(axis=0)
        )
    else:
        dx = dxhat * invstd
    return dx, dgamma, dbeta


def _ln_forward(x, gamma, beta):
    mu = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    invstd = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mu) * invstd
    return gamma * xhat + beta, {"xhat": xhat, "invstd": invstd}


def _ln_backward(dy, cache, gamma):
    xhat, invstd = cache["xhat"], cache["invstd"]
    dgamma = (dy * xhat).sum(axis=0)
    dbeta = dy.sum(axis=0)
    dxhat = dy * gamma
    dx = invstd * (
        dxhat
        - dxhat.mean(axis=1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
    )
    return dx, dgamma, dbeta


def _attn_forward(x, p, prefix, num_heads):
    T, m = x.shape
    hd = m // num_heads
    q = x @ p[f"{prefix}.q.W"] + p[f"{prefix}.q.b"]
    k = x @ p[f"{prefix}.k.W"] + p[f"{prefix}.k.b"]
    v = x @ p[f"{prefix}.v.W"] + p[f"{prefix}.v.b"]
    # (heads, T, head_dim)
    qh = q.reshape(T, num_heads, hd).transpose(1, 0, 2)
    kh = k.reshape(T, num_heads, hd).transpose(1, 0, 2)
    vh = v.reshape(T, num_heads, hd).transpose(1, 0, 2)
    scores = qh @ kh.transpose(0, 2, 1) / np.sqrt(hd)
    scores -= scores.max(axis=2, keepdims=True)
    e = np.exp(scores)
    attn = e / e.sum(axis=2, keepdims=True)
    ctx = (attn @ vh).transpose(1, 0, 2).reshape(T, m)
    out = ctx @ p[f"{prefix}.o.W"] + p[f"{prefix}.o.b"]
    cache = {"x": x, "qh": qh, "kh": kh, "vh": vh, "attn": attn, "ctx": ctx}
    return out, cache


def _attn_backward(dout, cache, p, prefix, num_heads, grads):
    x, qh, kh, vh, attn, ctx = (
        cache["x"], cache["qh"], cache["kh"], cache["vh"], cache["attn"], cache["ctx"]
    )
    T, m = x.shape
    hd = m // num_heads
    grads[f"{prefix}.o.W"] += ctx.T @ dout
    grads[f"{prefix}.o.b"] += dout.sum(axis=0)
    dctx = (dout @ p[f"{prefix}.o.W"].T).reshape(T, num_heads, hd).transpose(1, 0, 2)
    dattn = dctx @ vh.transpose(0, 2, 1)
    dvh = attn.transpose(0, 2, 1) @ dctx
    dscores = attn * (dattn - (dattn * attn).sum(axis=2, keepdims=True))
    dscores /= np.sqrt(hd)
    dqh = dscores @ kh
    dkh = dscores.transpose(0, 2, 1) @ qh
    dq = dqh.transpose(1, 0, 2).reshape(T, m)
    dk = dkh.transpose(1, 0, 2).reshape(T, m)
    dv = dvh.transpose(1, 0, 2).reshape(T, m)
    dx = np.zeros_like(x)
    for name, dmat in (("q", dq), ("k", dk), ("v", dv)):
        grads[f"{prefix}.{name}.W"] += x.T @ dmat
        grads[f"{prefix}.{name}.b"] += dmat.sum(axis=0)
        dx += dmat @ p[f"{prefix}.{name}.W"].T
    return dx


def _dropout_mask(shape, p, rng):
    if p <= 0:
        return None
    if rng is None:
        raise SeqclError("dropout > 0 requires an rng in training mode")
    return (rng.random(shape) >= p) / (1.0 - p)


def forward(
    params: EncoderParams,
    cfg: EncoderConfig,
    x: np.ndarray,
    *,
    train: bool = False,
    rng: np.random.Generator | None = None,
    pos_encoding: np.ndarray | None = None,
) -> tuple[EmbeddingSequence, dict]:
    """Encode one view (T x input_dim) into (H, Z); returns cache for backward."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != cfg.input_dim:
        raise ConfigError(f"expected (T, {cfg.input_dim}) input, got {x.shape}")
    T = x.shape[0]
    p = params.tensors
    cache: dict = {"x": x, "train": train, "layers": []}

    z1 = x @ p["proj.fc1.W"] + p["proj.fc1.b"]
    bn1, cache["bn1"] = _bn_forward(
        z1, p["proj.bn1.gamma"], p["proj.bn1.beta"], train, params.buffers, "proj.bn1"
    )
    a1 = np.maximum(bn1, 0.0)
    z2 = a1 @ p["proj.fc2.W"] + p["proj.fc2.b"]
    bn2, cache["bn2"] = _bn_forward(
        z2, p["proj.bn2.gamma"], p["proj.bn2.beta"], train, params.buffers, "proj.bn2"
    )
    a2 = np.maximum(bn2, 0.0)
    cache["a1"], cache["bn1_out"], cache["bn2_out"] = a1, bn1, bn2

    pe = positional_encoding(T, cfg.model_dim) if pos_encoding is None else pos_encoding
    h = a2 + pe

    drop = cfg.dropout if train else 0.0
    for i in range(cfg.num_layers):
        lc: dict = {"in": h}
        norm1, lc["ln1"] = _ln_forward(h, p[f"layer{i}.ln1.gamma"], p[f"layer{i}.ln1.beta"])
        lc["norm1"] = norm1
        attn, lc["attn"] = _attn_forward(norm1, p, f"layer{i}.attn", cfg.num_heads)
        lc["attn_mask"] = _dropout_mask(attn.shape, drop, rng)
        if lc["attn_mask"] is not None:
            attn = attn * lc["attn_mask"]
        h = h + attn

        lc["mid"] = h
        norm2, lc["ln2"] = _ln_forward(h, p[f"layer{i}.ln2.gamma"], p[f"layer{i}.ln2.beta"])
        lc["norm2"] = norm2
        f1 = norm2 @ p[f"layer{i}.ffn.fc1.W"] + p[f"layer{i}.ffn.fc1.b"]
        fa = np.maximum(f1, 0.0)
        ffn = fa @ p[f"layer{i}.ffn.fc2.W"] + p[f"layer{i}.ffn.fc2.b"]
        lc["f1"], lc["fa"] = f1, fa
        lc["ffn_mask"] = _dropout_mask(ffn.shape, drop, rng)
        if lc["ffn_mask"] is not None:
            ffn = ffn * lc["ffn_mask"]
        h = h + ffn
        cache["layers"].append(lc)

    cache["trunk"] = h
    H = h @ p["out.W"] + p["out.b"]
    g1 = H @ p["head.fc1.W"] + p["head.fc1.b"]
    ga = np.maximum(g1, 0.0)
    Z = ga @ p["head.fc2.W"] + p["head.fc2.b"]
    cache["H"], cache["g1"], cache["ga"] = H, g1, ga
    return EmbeddingSequence(H=H, Z=Z), cache


def backward(
    params: EncoderParams,
    cfg: EncoderConfig,
    cache: dict,
    grad_Z: np.ndarray,
    grad_H: np.ndarray | None = None,
) -> dict[str, np.ndarray]:
    """Exact gradients of the loss wrt every learnable tensor.

    grad_Z (and optionally grad_H) are the upstream gradients on the latent
    embeddings and representations produced by the matching forward call.
    """
    if "trunk" not in cache:
        raise SeqclError("backward needs the cache returned by forward")
    p = params.tensors
    grads = {name: np.zeros_like(t) for name, t in p.items()}

    grads["head.fc2.W"] += cache["ga"].T @ grad_Z
    grads["head.fc2.b"] += grad_Z.sum(axis=0)
    dga = grad_Z @ p["head.fc2.W"].T
    dg1 = dga * (cache["g1"] > 0)
    grads["head.fc1.W"] += cache["H"].T @ dg1
    grads["head.fc1.b"] += dg1.sum(axis=0)
    dH = dg1 @ p["head.fc1.W"].T
    if grad_H is not None:
        dH = dH + grad_H

    grads["out.W"] += cache["trunk"].T @ dH
    grads["out.b"] += dH.sum(axis=0)
    dh = dH @ p["out.W"].T

    for i in reversed(range(cfg.num_layers)):
        lc = cache["layers"][i]
        dffn = dh if lc["ffn_mask"] is None else dh * lc["ffn_mask"]
        grads[f"layer{i}.ffn.fc2.W"] += lc["fa"].T @ dffn
        grads[f"layer{i}.ffn.fc2.b"] += dffn.sum(axis=0)
        dfa = dffn @ p[f"layer{i}.ffn.fc2.W"].T
        df1 = dfa * (lc["f1"] > 0)
        grads[f"layer{i}.ffn.fc1.W"] += lc["norm2"].T @ df1
        grads[f"layer{i}.ffn.fc1.b"] += df1.sum(axis=0)
        dnorm2 = df1 @ p[f"layer{i}.ffn.fc1.W"].T
        dmid, dg, db = _ln_backward(dnorm2, lc["ln2"], p[f"layer{i}.ln2.gamma"])
        grads[f"layer{i}.ln2.gamma"] += dg
        grads[f"layer{i}.ln2.beta"] += db
        dh = dh + dmid

        dattn = dh if lc["attn_mask"] is None else dh * lc["attn_mask"]
        dnorm1 = _attn_backward(dattn, lc["attn"], p, f"layer{i}.attn", cfg.num_heads, grads)
        din, dg, db = _ln_backward(dnorm1, lc["ln1"], p[f"layer{i}.ln1.gamma"])
        grads[f"layer{i}.ln1.gamma"] += dg
        grads[f"layer{i}.ln1.beta"] += db
        dh = dh + din

    da2 = dh  # positional encoding is additive, constant
    dbn2 = da2 * (cache["bn2_out"] > 0)
    dz2, dg, db = _bn_backward(dbn2, cache["bn2"], p["proj.bn2.gamma"])
    grads["proj.bn2.gamma"] += dg
    grads["proj.bn2.beta"] += db
    grads["proj.fc2.W"] += cache["a1"].T @ dz2
    grads["proj.fc2.b"] += dz2.sum(axis=0)
    da1 = dz2 @ p["proj.fc2.W"].T
    dbn1 = da1 * (cache["bn1_out"] > 0)
    dz1, dg, db = _bn_backward(dbn1, cache["bn1"], p["proj.bn1.gamma"])
    grads["proj.bn1.gamma"] += dg
    grads["proj.bn1.beta"] += db
    grads["proj.fc1.W"] += cache["x"].T @ dz1
    grads["proj.fc1.b"] += dz1.sum(axis=0)
    return grads


# --- checkpoint container ---


def _write_tensor(f, name: str, arr: np.ndarray) -> None:
    encoded = name.encode("utf-8")
    arr = np.ascontiguousarray(arr, dtype="<f4")
    f.write(struct.pack("<I", len(encoded)))
    f.write(encoded)
    f.write(struct.pack("<I", arr.ndim))
    for dim in arr.shape:
        f.write(struct.pack("<I", dim))
    f.write(arr.tobytes())


def save_checkpoint(
    path: str | Path,
    cfg: EncoderConfig,
    params: EncoderParams,
    extra: dict[str, np.ndarray] | None = None,
) -> None:
    """Named-tensor container: params, running stats ("buffer.*"), extras."""
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<I", CKPT_VERSION))
        blob = json.dumps(asdict(cfg), sort_keys=True).encode("utf-8")
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for name in sorted(params.tensors):
            _write_tensor(f, name, params.tensors[name])
        for name in sorted(params.buffers):
            _write_tensor(f, f"buffer.{name}", params.buffers[name])
        for name in sorted(extra or {}):
            _write_tensor(f, f"extra.{name}", extra[name])


def load_checkpoint(
    path: str | Path,
) -> tuple[EncoderConfig, EncoderParams, dict[str, np.ndarray]]:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < 12 or blob[:4] != CKPT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint (bad magic)")
    (version,) = struct.unpack("<I", blob[4:8])
    if version != CKPT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    (cfg_len,) = struct.unpack("<I", blob[8:12])
    off = 12
    if off + cfg_len > len(blob):
        raise FormatError(f"{path}: truncated config blob")
    try:
        cfg = EncoderConfig(**json.loads(blob[off : off + cfg_len].decode("utf-8")))
    except (ValueError, TypeError) as exc:
        raise FormatError(f"{path}: invalid config blob: {exc}") from exc
    off += cfg_len

    tensors: dict[str, np.ndarray] = {}
    buffers: dict[str, np.ndarray] = {}
    extra: dict[str, np.ndarray] = {}
    while off < len(blob):
        if off + 4 > len(blob):
            raise FormatError(f"{path}: truncated tensor record at byte {off}")
        (name_len,) = struct.unpack("<I", blob[off : off + 4])
        off += 4
        name = blob[off : off + name_len].decode("utf-8")
        off += name_len
        (rank,) = struct.unpack("<I", blob[off : off + 4])
        off += 4
        dims = struct.unpack(f"<{rank}I", blob[off : off + 4 * rank])
        off += 4 * rank
        count = int(np.prod(dims)) if rank else 1
        end = off + 4 * count
        if end > len(blob):
            raise FormatError(f"{path}: tensor {name!r} payload truncated")
        arr = np.frombuffer(blob[off:end], dtype="<f4").reshape(dims).astype(np.float64)
        off = end
        if name.startswith("buffer."):
            buffers[name[len("buffer."):]] = arr
        elif name.startswith("extra."):
            extra[name[len("extra."):]] = arr
        else:
            tensors[name] = arr
    return cfg, EncoderParams(tensors=tensors, buffers=buffers), extra
