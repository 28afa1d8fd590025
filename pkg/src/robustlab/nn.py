"""Model zoo: toy vision transformer with per-block patch-token taps, compact
CNN classifiers, analytic parameter/FLOP counters, benchmarking, and the
binary checkpoint format.

All models are built from the tensor-engine primitives and expose
``logits(x)``, ``loss(x, y)`` and ``parameters()`` with a fixed, documented
parameter order (attribute construction order, depth-first). Models are
read-only during inference; training mutates weights and needs exclusive
access.
"""

from __future__ import annotations

import statistics
import struct
import time
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import DTYPE, Tensor
from .util import new_rng

CHECKPOINT_MAGIC = b"SEDM"
CHECKPOINT_VERSION = 1


# ---------------------------------------------------------------------------
# module plumbing
# ---------------------------------------------------------------------------


class Module:
    """Base class tracking parameters in attribute construction order."""

    def parameters(self) -> list[Tensor]:
        out: list[Tensor] = []
        _collect_params(self, out)
        return out

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def num_params(self) -> int:
        return sum(p.size for p in self.parameters())


def parameter(data) -> Tensor:
    """A learnable tensor: tracked, and discoverable by Module.parameters."""
    t = Tensor(data, requires_grad=True)
    t.is_param = True
    return t


def _collect_params(obj, out: list[Tensor]) -> None:
    if isinstance(obj, Tensor):
        if obj.is_param or obj.requires_grad:
            out.append(obj)
        return
    if isinstance(obj, Module):
        for v in obj.__dict__.values():
            _collect_params(v, out)
        return
    if isinstance(obj, (list, tuple)):
        for v in obj:
            _collect_params(v, out)


@contextmanager
def frozen(module: Module):
    """Temporarily stop tracking the module's parameters.

    Backward passes inside the block skip every parameter-gradient kernel,
    which roughly halves the cost of input-only gradients (attack
    generation, robustness evaluation). Mutates shared state: the module
    must not be trained concurrently.
    """
    params = module.parameters()
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p in params:
            p.requires_grad = True


def _trunc_normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    w = rng.standard_normal(shape) * std
    return np.clip(w, -2 * std, 2 * std).astype(DTYPE)


def _he_normal(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(DTYPE)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, init: str = "trunc"):
        if init == "trunc":
            w = _trunc_normal(rng, (n_in, n_out), 0.02)
        else:
            w = _he_normal(rng, (n_in, n_out), n_in)
        self.weight = parameter(w)
        self.bias = parameter(np.zeros(n_out, dtype=DTYPE))
        self.n_in, self.n_out = n_in, n_out

    def forward(self, x: Tensor) -> Tensor:
        return T.matmul(x, self.weight) + self.bias


class Conv2d(Module):
    def __init__(
        self,
        c_in: int,
        c_out: int,
        ksize: int,
        rng: np.random.Generator,
        stride: int = 1,
        padding: int = 0,
    ):
        fan_in = c_in * ksize * ksize
        self.weight = parameter(_he_normal(rng, (c_out, c_in, ksize, ksize), fan_in))
        self.bias = parameter(np.zeros(c_out, dtype=DTYPE))
        self.stride, self.padding = stride, padding
        self.c_in, self.c_out, self.ksize = c_in, c_out, ksize

    def forward(self, x: Tensor) -> Tensor:
        out = T.conv2d(x, self.weight, stride=self.stride, padding=self.padding)
        return out + T.reshape(self.bias, (1, self.c_out, 1, 1))


class LayerNorm(Module):
    def __init__(self, dim: int):
        self.gain = parameter(np.ones(dim, dtype=DTYPE))
        self.bias = parameter(np.zeros(dim, dtype=DTYPE))

    def forward(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gain, self.bias)


# ---------------------------------------------------------------------------
# vision transformer
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ViTConfig:
    image_size: int = 32
    patch_size: int = 4
    channels: int = 3
    embed_dim: int = 64
    depth: int = 6
    heads: int = 4
    mlp_dim: int = 128
    num_classes: int = 2

    def __post_init__(self):
        if self.image_size % self.patch_size:
            raise ValueError("image_size must be divisible by patch_size")
        if self.embed_dim % self.heads:
            raise ValueError("embed_dim must be divisible by heads")
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")

    @property
    def num_patches(self) -> int:
        return (self.image_size // self.patch_size) ** 2


TOY_VIT = ViTConfig(32, 4, 3, 64, 6, 4, 128, 2)
VIT_B16 = ViTConfig(224, 16, 3, 768, 12, 12, 3072, 2)


class TransformerBlock(Module):
    """Pre-norm block: multi-head self-attention then a GELU MLP, both residual."""

    def __init__(self, dim: int, heads: int, mlp_dim: int, rng: np.random.Generator):
        self.ln1 = LayerNorm(dim)
        self.qkv = Linear(dim, 3 * dim, rng)
        self.proj = Linear(dim, dim, rng)
        self.ln2 = LayerNorm(dim)
        self.fc1 = Linear(dim, mlp_dim, rng)
        self.fc2 = Linear(mlp_dim, dim, rng)
        self.heads = heads
        self.dim = dim

    def forward(self, x: Tensor) -> Tensor:
        B, n_tok, D = x.shape
        h = self.heads
        dh = D // h
        qkv = self.qkv.forward(self.ln1.forward(x))
        q = T.transpose(T.reshape(qkv[:, :, 0:D], (B, n_tok, h, dh)), (0, 2, 1, 3))
        k = T.transpose(T.reshape(qkv[:, :, D : 2 * D], (B, n_tok, h, dh)), (0, 2, 1, 3))
        v = T.transpose(T.reshape(qkv[:, :, 2 * D : 3 * D], (B, n_tok, h, dh)), (0, 2, 1, 3))
        scores = T.matmul(q, T.transpose(k, (0, 1, 3, 2))) * float(1.0 / np.sqrt(dh))
        attn = T.softmax(scores)
        ctx = T.matmul(attn, v)  # B, h, n_tok, dh
        ctx = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (B, n_tok, D))
        x = x + self.proj.forward(ctx)
        y = self.fc2.forward(T.gelu(self.fc1.forward(self.ln2.forward(x))))
        return x + y


class ViTModel(Module):
    """Patch embedding + class token + transformer blocks + affine head.

    ``forward`` exposes every block's patch tokens (class token excluded) so
    intermediate classifiers can tap them, plus the final normalized class
    token and the head logits.
    """

    def __init__(self, config: ViTConfig, seed: int = 0):
        rng = new_rng(seed, "vit-init")
        c = config
        patch_dim = c.channels * c.patch_size * c.patch_size
        self.patch_embed = Linear(patch_dim, c.embed_dim, rng)
        self.cls_token = parameter(_trunc_normal(rng, (1, 1, c.embed_dim), 0.02))
        self.pos_embed = parameter(
            _trunc_normal(rng, (1, c.num_patches + 1, c.embed_dim), 0.02)
        )
        self.blocks = [TransformerBlock(c.embed_dim, c.heads, c.mlp_dim, rng) for _ in range(c.depth)]
        self.final_norm = LayerNorm(c.embed_dim)
        self.head = Linear(c.embed_dim, c.num_classes, rng)
        self.config = c

    def _to_patches(self, images: Tensor) -> Tensor:
        c = self.config
        B = images.shape[0]
        p = c.patch_size
        g = c.image_size // p
        x = T.reshape(images, (B, c.channels, g, p, g, p))
        x = T.transpose(x, (0, 2, 4, 1, 3, 5))
        return T.reshape(x, (B, g * g, c.channels * p * p))

    def forward(self, images) -> tuple[list[Tensor], Tensor, Tensor]:
        images = images if isinstance(images, Tensor) else Tensor(images)
        c = self.config
        if images.shape[1:] != (c.channels, c.image_size, c.image_size):
            raise T.ShapeError(
                f"expected images B x {c.channels} x {c.image_size} x {c.image_size}, "
                f"got {images.shape}"
            )
        B = images.shape[0]
        x = self.patch_embed.forward(self._to_patches(images))
        # broadcast the class token across the batch; adding to zeros keeps it
        # a tracked parameter so its gradient accumulates
        zeros = Tensor(np.zeros((B, 1, c.embed_dim), dtype=DTYPE))
        cls = zeros + self.cls_token
        x = T.concat([cls, x], axis=1)
        x = x + self.pos_embed
        patch_tokens: list[Tensor] = []
        for block in self.blocks:
            x = block.forward(x)
            patch_tokens.append(x[:, 1:, :])
        normed = self.final_norm.forward(x)
        ct = normed[:, 0, :]
        logits = self.head.forward(ct)
        return patch_tokens, ct, logits

    def logits(self, images) -> Tensor:
        return self.forward(images)[2]

    def loss(self, images, labels) -> Tensor:
        return T.cross_entropy(self.logits(images), labels)


# ---------------------------------------------------------------------------
# compact CNN classifiers
# ---------------------------------------------------------------------------


class CnnHead(Module):
    """Two-conv classifier over one block's patch tokens laid out as a grid."""

    WIDTHS = (32, 64)

    def __init__(self, embed_dim: int, num_classes: int, seed: int = 0):
        rng = new_rng(seed, "cnn-head-init")
        w1, w2 = self.WIDTHS
        self.conv1 = Conv2d(embed_dim, w1, 3, rng, padding=1)
        self.conv2 = Conv2d(w1, w2, 3, rng, padding=1)
        self.fc = Linear(w2, num_classes, rng, init="he")
        self.embed_dim = embed_dim
        self.num_classes = num_classes

    def forward(self, tokens: Tensor) -> Tensor:
        tokens = tokens if isinstance(tokens, Tensor) else Tensor(tokens)
        B, N, D = tokens.shape
        g = int(round(np.sqrt(N)))
        if g * g != N:
            raise T.ShapeError(f"token count {N} is not a perfect square")
        if D != self.embed_dim:
            raise T.ShapeError(f"token dim {D} != head embed_dim {self.embed_dim}")
        x = T.transpose(T.reshape(tokens, (B, g, g, D)), (0, 3, 1, 2))
        x = T.relu(self.conv1.forward(x))
        x = T.relu(self.conv2.forward(x))
        x = T.tmean(x, axis=(2, 3))
        return self.fc.forward(x)


class _ImageCnn(Module):
    """Shared scaffolding for the image-domain CNN classifiers."""

    def __init__(self, channels: list[int], pool_after: set[int], in_channels: int,
                 num_classes: int, seed: int, purpose: str):
        rng = new_rng(seed, purpose)
        self.convs = []
        prev = in_channels
        for w in channels:
            self.convs.append(Conv2d(prev, w, 3, rng, padding=1))
            prev = w
        self.fc = Linear(prev, num_classes, rng, init="he")
        self.pool_after = pool_after
        self.in_channels = in_channels
        self.num_classes = num_classes

    def forward(self, images) -> Tensor:
        x = images if isinstance(images, Tensor) else Tensor(images)
        for i, conv in enumerate(self.convs, start=1):
            x = T.relu(conv.forward(x))
            if i in self.pool_after:
                x = T.max_pool2d(x, 2)
        x = T.tmean(x, axis=(2, 3))
        return self.fc.forward(x)

    def logits(self, images) -> Tensor:
        return self.forward(images)

    def loss(self, images, labels) -> Tensor:
        return T.cross_entropy(self.forward(images), labels)


class DistilledCnn(_ImageCnn):
    """Five-conv student trained on softened ensemble predictions."""

    CHANNELS = [16, 32, 32, 64, 64]

    def __init__(self, in_channels: int = 3, num_classes: int = 2, seed: int = 0):
        super().__init__(self.CHANNELS, {2, 4}, in_channels, num_classes, seed, "distilled-init")


class ExtractionCnn(_ImageCnn):
    """Three-conv replica an extraction attacker trains from query responses."""

    CHANNELS = [16, 32, 64]

    def __init__(self, in_channels: int = 3, num_classes: int = 2, seed: int = 0):
        super().__init__(self.CHANNELS, {1, 2, 3}, in_channels, num_classes, seed, "extraction-init")


class LinearClassifier(Module):
    """Affine probe over flattened inputs; handy for closed-form attack checks."""

    def __init__(self, n_features: int, num_classes: int = 2, seed: int = 0):
        rng = new_rng(seed, "linear-init")
        self.fc = Linear(n_features, num_classes, rng, init="he")
        self.n_features = n_features
        self.num_classes = num_classes

    def forward(self, x) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(x)
        flat = T.reshape(x, (x.shape[0], self.n_features))
        return self.fc.forward(flat)

    def logits(self, x) -> Tensor:
        return self.forward(x)

    def loss(self, x, labels) -> Tensor:
        return T.cross_entropy(self.forward(x), labels)


# ---------------------------------------------------------------------------
# analytic counters
# ---------------------------------------------------------------------------


def vit_param_count(c: ViTConfig) -> int:
    """Exact learnable-scalar count from the configuration alone."""
    d, mlp = c.embed_dim, c.mlp_dim
    patch_dim = c.channels * c.patch_size * c.patch_size
    n = c.num_patches
    embed = patch_dim * d + d
    block = 2 * d + 3 * (d * d + d) + (d * d + d) + 2 * d + (d * mlp + mlp) + (mlp * d + d)
    return embed + d + (n + 1) * d + c.depth * block + 2 * d + (d * c.num_classes + c.num_classes)


def count_params(obj) -> int:
    """Learnable scalar count for a model instance or a ViTConfig."""
    if isinstance(obj, ViTConfig):
        return vit_param_count(obj)
    if isinstance(obj, Module):
        return obj.num_params()
    raise TypeError(f"cannot count parameters of {type(obj).__name__}")


def linear_flops(n_in: int, n_out: int, tokens: int = 1) -> int:
    """Affine layer cost: one multiply-accumulate per weight, one add per bias."""
    return tokens * (n_in * n_out + n_out)

def conv2d_flops(c_in: int, c_out: int, ksize: int, out_h: int, out_w: int) -> int:
    return out_h * out_w * c_out * (c_in * ksize * ksize + 1)


_LN_OPS = 7      # per element: mean, center, square, variance, rsqrt-scale, gain, shift
_SOFTMAX_OPS = 4
_GELU_OPS = 10
_POOL_OPS = 3    # comparisons per pooled output


def vit_flops(c: ViTConfig) -> int:
    """Forward-pass cost of one image. Multiply-accumulates count as one FLOP
    (the convention under which published transformer figures are quoted);
    elementwise ops count one each."""
    d, mlp, h = c.embed_dim, c.mlp_dim, c.heads
    n = c.num_patches
    t = n + 1
    patch_dim = c.channels * c.patch_size * c.patch_size
    total = linear_flops(patch_dim, d, n)  # patch embedding
    total += t * d  # position add
    per_block = (
        2 * _LN_OPS * t * d
        + linear_flops(d, 3 * d, t)
        + t * t * d  # attention scores
        + h * t * t  # scale
        + _SOFTMAX_OPS * h * t * t
        + t * t * d  # attention-weighted values
        + linear_flops(d, d, t)
        + 2 * t * d  # residual adds
        + linear_flops(d, mlp, t)
        + _GELU_OPS * t * mlp
        + linear_flops(mlp, d, t)
    )
    total += c.depth * per_block
    total += _LN_OPS * t * d  # final norm
    total += linear_flops(d, c.num_classes)
    return total


def _image_cnn_flops(model: _ImageCnn, hw: tuple[int, int]) -> int:
    h, w = hw
    total = 0
    for i, conv in enumerate(model.convs, start=1):
        total += conv2d_flops(conv.c_in, conv.c_out, conv.ksize, h, w)
        total += h * w * conv.c_out  # relu
        if i in model.pool_after:
            h, w = h // 2, w // 2
            total += _POOL_OPS * h * w * conv.c_out
    total += h * w * model.convs[-1].c_out  # global average pool
    total += linear_flops(model.fc.n_in, model.fc.n_out)
    return total


def cnn_head_flops(head: CnnHead, grid: int) -> int:
    total = conv2d_flops(head.embed_dim, head.WIDTHS[0], 3, grid, grid)
    total += grid * grid * head.WIDTHS[0]
    total += conv2d_flops(head.WIDTHS[0], head.WIDTHS[1], 3, grid, grid)
    total += grid * grid * head.WIDTHS[1]
    total += grid * grid * head.WIDTHS[1]  # global average pool
    total += linear_flops(head.fc.n_in, head.fc.n_out)
    return total


def estimate_flops(obj, input_shape: tuple[int, ...] | None = None) -> int:
    """Estimated forward FLOPs for one input (multiply-accumulate = 1 FLOP).

    ``input_shape`` is (C, H, W) for image CNNs (defaults to the model's channel
    count at 32 x 32), the token-grid side for a CnnHead, and ignored for ViT
    configurations, which carry their own geometry.
    """
    if isinstance(obj, ViTConfig):
        return vit_flops(obj)
    if isinstance(obj, ViTModel):
        return vit_flops(obj.config)
    from .ensemble import EnsembleModel  # local import to avoid a cycle

    if isinstance(obj, EnsembleModel):
        c = obj.backbone.config
        grid = c.image_size // c.patch_size
        return vit_flops(c) + sum(cnn_head_flops(h, grid) for h in obj.heads)
    if isinstance(obj, CnnHead):
        grid = int(input_shape[0]) if input_shape else 8
        return cnn_head_flops(obj, grid)
    if isinstance(obj, _ImageCnn):
        if input_shape is None:
            input_shape = (obj.in_channels, 32, 32)
        return _image_cnn_flops(obj, (input_shape[1], input_shape[2]))
    if isinstance(obj, LinearClassifier):
        return linear_flops(obj.n_features, obj.num_classes)
    raise TypeError(f"cannot estimate FLOPs of {type(obj).__name__}")


# ---------------------------------------------------------------------------
# checkpoint format: magic "SEDM", version u16, kind u8, cfg u32 LE fields,
# tensor count u32, then tensor records in parameters() order
# ---------------------------------------------------------------------------

MODEL_KIND_VIT = 1
MODEL_KIND_CNN_HEAD = 2
MODEL_KIND_DISTILLED = 3
MODEL_KIND_EXTRACTION = 4
MODEL_KIND_ENSEMBLE = 5
MODEL_KIND_LINEAR = 6

_FUSION_TAGS = {"majority": 0, "mean": 1}
_FUSION_NAMES = {v: k for k, v in _FUSION_TAGS.items()}


def _vit_cfg_fields(c: ViTConfig) -> list[int]:
    return [c.image_size, c.patch_size, c.channels, c.embed_dim, c.depth, c.heads,
            c.mlp_dim, c.num_classes]


def _model_header(kind: int, cfg: list[int], n_tensors: int) -> bytes:
    out = CHECKPOINT_MAGIC + struct.pack("<HBH", CHECKPOINT_VERSION, kind, len(cfg))
    out += struct.pack(f"<{len(cfg)}I", *cfg)
    out += struct.pack("<I", n_tensors)
    return out


def model_to_bytes(model: Module) -> bytes:
    from .ensemble import EnsembleModel

    if isinstance(model, ViTModel):
        kind, cfg = MODEL_KIND_VIT, _vit_cfg_fields(model.config)
    elif isinstance(model, CnnHead):
        kind, cfg = MODEL_KIND_CNN_HEAD, [model.embed_dim, model.num_classes]
    elif isinstance(model, DistilledCnn):
        kind, cfg = MODEL_KIND_DISTILLED, [model.in_channels, model.num_classes]
    elif isinstance(model, ExtractionCnn):
        kind, cfg = MODEL_KIND_EXTRACTION, [model.in_channels, model.num_classes]
    elif isinstance(model, EnsembleModel):
        kind = MODEL_KIND_ENSEMBLE
        cfg = _vit_cfg_fields(model.backbone.config)
        cfg += [_FUSION_TAGS[model.fusion], len(model.heads)]
        cfg += list(model.block_indices)
    elif isinstance(model, LinearClassifier):
        kind, cfg = MODEL_KIND_LINEAR, [model.n_features, model.num_classes]
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")
    params = model.parameters()
    out = _model_header(kind, cfg, len(params))
    for p in params:
        out += T.tensor_to_bytes(p)
    return out


def model_from_bytes(buf: bytes) -> Module:
    from .ensemble import EnsembleModel

    if buf[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"bad checkpoint magic {buf[:4]!r}")
    version, kind, n_cfg = struct.unpack_from("<HBH", buf, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    pos = 9
    cfg = list(struct.unpack_from(f"<{n_cfg}I", buf, pos))
    pos += 4 * n_cfg
    (n_tensors,) = struct.unpack_from("<I", buf, pos)
    pos += 4

    if kind == MODEL_KIND_VIT:
        model: Module = ViTModel(ViTConfig(*cfg))
    elif kind == MODEL_KIND_CNN_HEAD:
        model = CnnHead(cfg[0], cfg[1])
    elif kind == MODEL_KIND_DISTILLED:
        model = DistilledCnn(cfg[0], cfg[1])
    elif kind == MODEL_KIND_EXTRACTION:
        model = ExtractionCnn(cfg[0], cfg[1])
    elif kind == MODEL_KIND_LINEAR:
        model = LinearClassifier(cfg[0], cfg[1])
    elif kind == MODEL_KIND_ENSEMBLE:
        vit_cfg = ViTConfig(*cfg[:8])
        fusion = _FUSION_NAMES[cfg[8]]
        m = cfg[9]
        block_indices = cfg[10 : 10 + m]
        backbone = ViTModel(vit_cfg)
        heads = [CnnHead(vit_cfg.embed_dim, vit_cfg.num_classes) for _ in range(m)]
        model = EnsembleModel(backbone, heads, fusion=fusion, block_indices=block_indices)
    else:
        raise ValueError(f"unknown model kind {kind}")

    params = model.parameters()
    if len(params) != n_tensors:
        raise ValueError(f"checkpoint holds {n_tensors} tensors, model needs {len(params)}")
    for p in params:
        arr, pos = T.tensor_from_bytes(buf, pos)
        if arr.shape != p.data.shape:
            raise ValueError(f"tensor shape {arr.shape} != parameter shape {p.data.shape}")
        p.data = arr
    if pos != len(buf):
        raise ValueError(f"{len(buf) - pos} trailing bytes in checkpoint")
    return model


def save_model(model: Module, path) -> None:
    with open(path, "wb") as fh:
        fh.write(model_to_bytes(model))


def load_model(path) -> Module:
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read())


# ---------------------------------------------------------------------------
# benchmarking
# ---------------------------------------------------------------------------


def benchmark_model(model: Module, batch, repeats: int = 5) -> tuple[float, float, int]:
    """Median forward latency (s), throughput (images/s) and checkpoint bytes.

    One warm-up run precedes timing. Runs are forward-only (no graph).
    """
    if repeats < 3:
        raise ValueError(f"repeats must be >= 3, got {repeats}")
    x = batch if isinstance(batch, Tensor) else Tensor(batch)
    fwd = _forward_fn(model)
    with T.no_grad():
        fwd(x)
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            fwd(x)
            times.append(time.perf_counter() - t0)
    latency = statistics.median(times)
    throughput = x.shape[0] / latency
    weight_bytes = len(model_to_bytes(model))
    return latency, throughput, weight_bytes


def _forward_fn(model: Module):
    from .ensemble import EnsembleModel

    if isinstance(model, EnsembleModel):
        return lambda x: model.predict(x.data)
    if isinstance(model, ViTModel):
        return model.logits
    return model.forward
