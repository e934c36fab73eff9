"""Frozen ViT-style visual encoder with adapter hook points."""
from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field

import numpy as np

from . import blobio
from . import tensor as tn
from .errors import ConfigMismatch, IndivisibleSize


@dataclass(frozen=True)
class BackboneConfig:
    depth: int = 4
    width: int = 64
    patch_size: int = 30
    image_size: int = 240
    tapped_layers: tuple = (1, 2, 3, 4)
    heads: int = 4
    mlp_ratio: int = 4

    def __post_init__(self):
        object.__setattr__(self, "tapped_layers", tuple(int(l) for l in self.tapped_layers))
        L = self.tapped_layers
        if not L or list(L) != sorted(set(L)) or L[0] < 1 or L[-1] > self.depth:
            raise ConfigMismatch(f"tapped layers {L} must be ascending within 1..{self.depth}")
        if self.image_size % self.patch_size:
            raise IndivisibleSize(f"image size {self.image_size} not divisible by patch {self.patch_size}")
        if self.width % self.heads:
            raise ConfigMismatch(f"width {self.width} not divisible by {self.heads} heads")

    @property
    def grid(self):
        return self.image_size // self.patch_size

    @property
    def tokens(self):
        return 1 + self.grid**2

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def to_dict(self):
        d = asdict(self)
        d["tapped_layers"] = list(self.tapped_layers)
        return d


# The ViT-L/14 geometry of the original method, at 336 px input.
VIT_L14_336 = dict(depth=24, width=1024, patch_size=14, image_size=336,
                   tapped_layers=(6, 12, 18, 24), heads=16)


def patchify(image, patch_size):
    """S x (3 * p * p) matrix: row-major patches, channels interleaved per pixel."""
    img = np.asarray(image, dtype=np.float64)
    h, w, c = img.shape
    if h % patch_size or w % patch_size:
        raise IndivisibleSize(f"{h}x{w} image not divisible by patch {patch_size}")
    gh, gw = h // patch_size, w // patch_size
    return (
        img.reshape(gh, patch_size, gw, patch_size, c)
        .transpose(0, 2, 1, 3, 4)
        .reshape(gh * gw, patch_size * patch_size * c)
    )


@dataclass
class Backbone:
    config: BackboneConfig
    seed: int
    weights: dict = field(repr=False)

    def weight_hash(self):
        h = hashlib.sha256()
        for name in sorted(self.weights):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.weights[name]).tobytes())
        return h.hexdigest()

    def embed(self, image):
        """Token matrix entering the first block: [cls; patches W + b] + pos."""
        cfg = self.config
        img = np.asarray(image)
        if img.shape != (cfg.image_size, cfg.image_size, 3):
            raise ConfigMismatch(f"image shape {img.shape} does not match {cfg.image_size}px config")
        w = self.weights
        patches = patchify(img, cfg.patch_size) @ w["patch.W"] + w["patch.b"]
        return np.vstack([w["cls"][None, :], patches]) + w["pos"]

    def block(self, i, x):
        """Pre-norm transformer block ``i`` (1-based) on a Tensor stream."""
        w = self.weights
        pre = f"block{i}."
        h = tn.layer_norm(x, w[pre + "ln1.g"], w[pre + "ln1.b"])
        att = tn.attention(tn.matmul(h, w[pre + "Wq"]), tn.matmul(h, w[pre + "Wk"]),
                           tn.matmul(h, w[pre + "Wv"]), self.config.heads)
        x = tn.add(x, tn.matmul(att, w[pre + "Wo"]))
        h = tn.layer_norm(x, w[pre + "ln2.g"], w[pre + "ln2.b"])
        h = tn.gelu(tn.add(tn.matmul(h, w[pre + "W1"]), w[pre + "b1"]))
        return tn.add(x, tn.add(tn.matmul(h, w[pre + "W2"]), w[pre + "b2"]))

    def to_bytes(self):
        return blobio.pack(
            {"format": "hwclfa-backbone", "version": 1, "seed": self.seed, "config": self.config.to_dict()},
            {k: self.weights[k] for k in sorted(self.weights)},
        )

    @classmethod
    def from_bytes(cls, data):
        doc, tensors = blobio.unpack(data)
        if doc.get("format") != "hwclfa-backbone":
            raise ConfigMismatch("not a backbone weight file")
        return _frozen(BackboneConfig.from_dict(doc["config"]), doc["seed"],
                       {k: v.astype(np.float64) for k, v in tensors.items()})


def _frozen(config, seed, weights):
    for arr in weights.values():
        arr.flags.writeable = False
    return Backbone(config, seed, weights)


def init_frozen(seed, config=None):
    """Seeded random weights scaled by 1/sqrt(fan_in), all read-only."""
    cfg = config or BackboneConfig()
    rng = np.random.default_rng([int(seed), 0x5EED])
    C, hidden = cfg.width, cfg.width * cfg.mlp_ratio
    patch_dim = 3 * cfg.patch_size**2

    def dense(fan_in, fan_out):
        return rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in)

    w = {
        "patch.W": dense(patch_dim, C),
        "patch.b": 0.02 * rng.standard_normal(C),
        "cls": rng.standard_normal(C) / np.sqrt(C),
        "pos": 0.1 * rng.standard_normal((cfg.tokens, C)),
    }
    for i in range(1, cfg.depth + 1):
        pre = f"block{i}."
        w[pre + "ln1.g"] = 1.0 + 0.05 * rng.standard_normal(C)
        w[pre + "ln1.b"] = 0.05 * rng.standard_normal(C)
        for name in ("Wq", "Wk", "Wv", "Wo"):
            w[pre + name] = dense(C, C)
        w[pre + "ln2.g"] = 1.0 + 0.05 * rng.standard_normal(C)
        w[pre + "ln2.b"] = 0.05 * rng.standard_normal(C)
        w[pre + "W1"] = dense(C, hidden)
        w[pre + "b1"] = 0.02 * rng.standard_normal(hidden)
        w[pre + "W2"] = dense(hidden, C)
        w[pre + "b2"] = 0.02 * rng.standard_normal(C)
    return _frozen(cfg, int(seed), w)


@dataclass
class HookState:
    """Stream state entering block ``next_block`` (1-based).

    With ``block_done`` set the stream is already that block's output and
    only its adapter remains to be applied.
    """

    stream: tn.Tensor
    z_prev: tn.Tensor | None
    next_block: int
    block_done: bool = False


def run_from(backbone, state, adapters=None):
    """Continue a forward pass from ``state``; returns {layer: (X, M)}.

    ``X`` is the stream right after the block (before any adapter), ``M``
    the fused descriptor (None without adapters).
    """
    from .adapter import adapter_forward

    cfg = backbone.config
    x, z = state.stream, state.z_prev
    records = {}
    for i in range(state.next_block, cfg.depth + 1):
        if not (state.block_done and i == state.next_block):
            x = backbone.block(i, x)
        if i not in cfg.tapped_layers:
            continue
        if adapters is None:
            records[i] = (x, None)
            continue
        out = adapter_forward(x, z, adapters.params[i], adapters.alpha, adapters.slope)
        records[i] = (x, out.M)
        x, z = out.X_out, out.Z
        if i == cfg.tapped_layers[-1]:
            break
    return records


def frozen_prefix(backbone, image=None, *, tokens=None):
    """Stream right after the first tapped block, before its adapter.

    Adapters cannot influence it, so it can be computed once per image and
    reused across training steps and checkpoints.
    """
    if tokens is None:
        tokens = backbone.embed(image)
    x = tn.as_tensor(tokens)
    for i in range(1, backbone.config.tapped_layers[0] + 1):
        x = backbone.block(i, x)
    return x.data


def forward_with_hooks(backbone, image=None, adapters=None, *, tokens=None, prefix=None):
    """Run the frozen encoder, injecting adapters after each tapped layer.

    Pass an image (H x W x 3), pre-embedded ``tokens`` (N x C), or a
    ``prefix`` from :func:`frozen_prefix`.
    """
    if adapters is not None and tuple(adapters.layers) != backbone.config.tapped_layers:
        raise ConfigMismatch(
            f"adapter layers {tuple(adapters.layers)} != tapped layers {backbone.config.tapped_layers}"
        )
    shape = (backbone.config.tokens, backbone.config.width)
    if prefix is not None:
        if np.shape(prefix) != shape:
            raise ConfigMismatch(f"prefix {np.shape(prefix)} does not match config")
        first = backbone.config.tapped_layers[0]
        return run_from(backbone, HookState(tn.as_tensor(prefix), None, first, True), adapters)
    if tokens is None:
        tokens = backbone.embed(image)
    elif np.shape(tokens) != shape:
        raise ConfigMismatch(f"token matrix {np.shape(tokens)} does not match config")
    return run_from(backbone, HookState(tn.as_tensor(tokens), None, 1), adapters)
