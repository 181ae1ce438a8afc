"""Small convolutional encoder with an explicit reverse pass.

Architecture: ``[conv3x3/stride2 -> ReLU] * blocks -> pool -> linear -> L2
normalise``.  Pooling is one of

* ``global``: mean over frequency and time, one value per channel;
* ``time_mean``: mean over time only, keeping the (channel, frequency) map;
* ``time_meanmax``: temporal mean plus temporal max, frequency kept.

Parameters live in a plain ordered dict of numpy arrays; their dtype decides the compute precision (float64 for gradient
checks, float32 for training).

The checkpoint container (little-endian)::

    b"FQCL" | u32 version=1 | u32 n_tensors |
    n_tensors * (u16 name_len | utf-8 name | u8 rank | u32 dims[rank] | f32 payload)
"""

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CheckpointFormatError, ShapeError

MAGIC = b"FQCL"
VERSION = 1
NORM_EPS = 1e-12
POOLINGS = ("global", "time_mean", "time_meanmax")


@dataclass(frozen=True)
class EncoderConfig:
    n_mels: int = 128
    n_frames: int = 313
    channels: tuple = (16, 32, 64)
    embed_dim: int = 64
    pooling: str = "time_meanmax"

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if self.pooling not in POOLINGS:
            raise ValueError(f"pooling must be one of {POOLINGS}, got {self.pooling!r}")
        if len(self.channels) < 1:
            raise ValueError("encoder needs at least one conv block")
        if self.embed_dim < 2:
            raise ValueError("embedding dimension must be >= 2")

    def param_shapes(self):
        shapes = {}
        c_in = 1
        for i, c_out in enumerate(self.channels):
            shapes[f"conv{i}.weight"] = (c_out, c_in, 3, 3)
            shapes[f"conv{i}.bias"] = (c_out,)
            c_in = c_out
        if self.pooling != "global":
            h = self.n_mels
            for _ in self.channels:
                h = _out_size(h)
            c_in *= h
        shapes["proj.weight"] = (self.embed_dim, c_in)
        shapes["proj.bias"] = (self.embed_dim,)
        return shapes


def glorot_bound(shape):
    """Uniform Glorot bound sqrt(6 / (fan_in + fan_out)) for a weight tensor."""
    if len(shape) == 4:
        fan_in = shape[1] * shape[2] * shape[3]
        fan_out = shape[0] * shape[2] * shape[3]
    else:
        fan_out, fan_in = shape
    return np.sqrt(6.0 / (fan_in + fan_out))


def init_params(cfg, seed=0, dtype=np.float32):
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in cfg.param_shapes().items():
        if name.endswith(".bias"):
            params[name] = np.zeros(shape, dtype=dtype)
        else:
            b = glorot_bound(shape)
            params[name] = rng.uniform(-b, b, size=shape).astype(dtype)
    return params


def config_from_params(params, n_mels=128, n_frames=313, pooling=None):
    """Rebuild the EncoderConfig a parameter set was made with.

    Global pooling is recognised from the projection width; the two temporal
    poolings have identical shapes, so pass ``pooling`` to pick between them
    (default ``time_meanmax``).
    """
    if "conv0.weight" not in params or "proj.weight" not in params:
        raise ShapeError("parameter set does not describe an encoder")
    channels = [params[f"conv{i}.weight"].shape[0] for i in range(_n_blocks(params))]
    d = params["proj.weight"].shape[0]
    cfg = EncoderConfig(n_mels, n_frames, tuple(channels), d,
                        pooling or infer_pooling(params))
    check_params(params, cfg)
    return cfg


def check_params(params, cfg):
    """Raise ShapeError naming the first tensor that does not fit ``cfg``."""
    expected = cfg.param_shapes()
    for name, shape in expected.items():
        if name not in params:
            raise ShapeError(f"tensor {name!r} missing (expected shape {shape})")
        if tuple(params[name].shape) != shape:
            raise ShapeError(
                f"tensor {name!r} has shape {tuple(params[name].shape)}, expected {shape}"
            )
    extra = [n for n in params if n not in expected]
    if extra:
        raise ShapeError(f"unexpected tensor {extra[0]!r}")


def copy_params(params):
    return {k: v.copy() for k, v in params.items()}


def zeros_like(params):
    return {k: np.zeros_like(v) for k, v in params.items()}


# -- layers -----------------------------------------------------------------

def _out_size(n):
    # 3x3 kernel, stride 2, padding 1
    return (n - 1) // 2 + 1


def _im2col(x):
    n, c, h, w = x.shape
    ho, wo = _out_size(h), _out_size(w)
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    cols = np.empty((n, c, 3, 3, ho, wo), dtype=x.dtype)
    for i in range(3):
        for j in range(3):
            cols[:, :, i, j] = xp[:, :, i:i + 2 * ho:2, j:j + 2 * wo:2]
    return cols.reshape(n, c * 9, ho * wo), (ho, wo)


def _col2im(dcols, x_shape, out_hw):
    n, c, h, w = x_shape
    ho, wo = out_hw
    dcols = dcols.reshape(n, c, 3, 3, ho, wo)
    dxp = np.zeros((n, c, h + 2, w + 2), dtype=dcols.dtype)
    for i in range(3):
        for j in range(3):
            dxp[:, :, i:i + 2 * ho:2, j:j + 2 * wo:2] += dcols[:, :, i, j]
    return dxp[:, :, 1:-1, 1:-1]


def infer_pooling(params):
    width = params["proj.weight"].shape[1]
    last = params[f"conv{_n_blocks(params) - 1}.weight"].shape[0]
    return "global" if width == last else "time_meanmax"


def _n_blocks(params):
    i = 0
    while f"conv{i}.weight" in params:
        i += 1
    return i


def _pool(a, kind, width):
    n, c, h, w = a.shape
    expected = c if kind == "global" else c * h
    if width != expected:
        raise ShapeError(f"projection expects {width} inputs, {kind} pooling of a "
                         f"{c}x{h}x{w} map gives {expected}")
    if kind == "global":
        return a.mean(axis=(2, 3)), None
    pooled = a.mean(axis=3)
    argmax = None
    if kind == "time_meanmax":
        argmax = a.argmax(axis=3)
        pooled = pooled + np.take_along_axis(a, argmax[..., None], axis=3)[..., 0]
    return pooled.reshape(n, c * h), argmax


def _unpool(dpooled, shape, argmax):
    n, c, h, w = shape
    if dpooled.shape[1] == c:
        return np.broadcast_to(dpooled[:, :, None, None] / (h * w), shape)
    d = dpooled.reshape(n, c, h, 1)
    da = np.broadcast_to(d / w, shape)
    if argmax is not None:
        da = da.copy()
        idx = argmax[..., None]
        np.put_along_axis(da, idx, np.take_along_axis(da, idx, axis=3) + d, axis=3)
    return da


def _as_batch(x, dtype):
    x = np.asarray(x, dtype=dtype)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3 or min(x.shape[1:]) < 1:
        raise ShapeError(f"expected (M, T) or (N, M, T) input, got shape {x.shape}")
    return x


def forward(params, x, cfg=None):
    """Batched forward pass.

    Returns ``(embeddings, cache)`` where embeddings is (N, D) and cache holds
    the intermediates needed by :func:`backward_cached`.
    """
    dtype = params["proj.weight"].dtype
    x = _as_batch(x, dtype)
    if cfg is not None and x.shape[1:] != (cfg.n_mels, cfg.n_frames):
        raise ShapeError(
            f"input is {x.shape[1:]}, encoder configured for {(cfg.n_mels, cfg.n_frames)}"
        )
    a = x[:, None]
    layers = []
    i = 0
    while f"conv{i}.weight" in params:
        w, b = params[f"conv{i}.weight"], params[f"conv{i}.bias"]
        cols, hw = _im2col(a)
        z = np.matmul(w.reshape(w.shape[0], -1), cols) + b[None, :, None]
        layers.append((a.shape, cols, hw, z))
        a = np.maximum(z, 0).reshape(z.shape[0], z.shape[1], *hw)
        i += 1
    kind = cfg.pooling if cfg is not None else infer_pooling(params)
    pooled, argmax = _pool(a, kind, params["proj.weight"].shape[1])
    z = pooled @ params["proj.weight"].T + params["proj.bias"]
    norm = np.sqrt(np.sum(z * z, axis=1, keepdims=True))
    degenerate = norm[:, 0] < NORM_EPS
    e = z / np.where(degenerate[:, None], 1, norm)
    # a vanishing projection has no direction; pin it to a fixed unit vector
    e[degenerate] = 1 / np.sqrt(z.shape[1])
    cache = dict(layers=layers, last_shape=a.shape, pooled=pooled, argmax=argmax,
                 norm=norm, e=e, degenerate=degenerate)
    return e, cache


def backward_cached(params, cache, grad_e):
    """Parameter gradients given dLoss/dEmbedding of shape (N, D)."""
    grads = {}
    e, norm = cache["e"], cache["norm"]
    grad_e = np.asarray(grad_e, dtype=e.dtype).reshape(e.shape)
    # Jacobian of z -> z/|z| is (I - e e^T) / |z|
    dz = (grad_e - e * np.sum(e * grad_e, axis=1, keepdims=True)) / np.where(norm < NORM_EPS, 1, norm)
    dz[cache["degenerate"]] = 0
    grads["proj.weight"] = dz.T @ cache["pooled"]
    grads["proj.bias"] = dz.sum(axis=0)

    da = _unpool(dz @ params["proj.weight"], cache["last_shape"], cache["argmax"])
    for i in reversed(range(len(cache["layers"]))):
        in_shape, cols, hw, z = cache["layers"][i]
        dzl = da.reshape(z.shape) * (z > 0)
        wt = params[f"conv{i}.weight"]
        grads[f"conv{i}.weight"] = np.tensordot(dzl, cols, axes=([0, 2], [0, 2])).reshape(wt.shape)
        grads[f"conv{i}.bias"] = dzl.sum(axis=(0, 2))
        if i > 0:
            dcols = np.matmul(wt.reshape(wt.shape[0], -1).T, dzl)
            da = _col2im(dcols, in_shape, hw)
    return {k: grads[k] for k in params}


def encode(params, x, cfg=None):
    """Unit-norm embedding of one (M, T) spectrogram."""
    e, _ = forward(params, x, cfg)
    return e[0]


def backward(params, x, grad_e, cfg=None):
    """Recompute the forward pass and return gradients w.r.t. every parameter."""
    _, cache = forward(params, x, cfg)
    return backward_cached(params, cache, grad_e)


# -- checkpoint container -----------------------------------------------------

def tensors_to_bytes(tensors):
    out = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        out.append(struct.pack("<H", len(raw)) + raw)
        out.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(out)


def tensors_from_bytes(data):
    def take(n, what):
        nonlocal pos
        if pos + n > len(data):
            raise CheckpointFormatError(f"truncated while reading {what}")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    pos = 0
    if take(4, "magic") != MAGIC:
        raise CheckpointFormatError("bad magic; not a freqcl tensor file")
    version, count = struct.unpack("<II", take(8, "header"))
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported version {version}")
    tensors = {}
    for k in range(count):
        (name_len,) = struct.unpack("<H", take(2, f"tensor {k} name length"))
        try:
            name = take(name_len, f"tensor {k} name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointFormatError(f"tensor {k} name is not UTF-8") from exc
        if name in tensors:
            raise CheckpointFormatError(f"duplicate tensor name {name!r}")
        (rank,) = struct.unpack("<B", take(1, f"{name} rank"))
        dims = struct.unpack(f"<{rank}I", take(4 * rank, f"{name} dims"))
        size = int(np.prod(dims, dtype=np.int64))
        payload = take(4 * size, f"{name} payload")
        tensors[name] = np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(dims)
    if pos != len(data):
        raise CheckpointFormatError(f"{len(data) - pos} trailing bytes after last tensor")
    return tensors


def save_checkpoint(params, path):
    Path(path).write_bytes(tensors_to_bytes(params))


def load_checkpoint(path, cfg=None):
    """Load an encoder; with ``cfg`` given the shapes are checked against it."""
    params = tensors_from_bytes(Path(path).read_bytes())
    if cfg is not None:
        check_params(params, cfg)
    return params
