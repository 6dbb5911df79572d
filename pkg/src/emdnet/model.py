"""Style encoder, content encoder, bilinear mixer and skip-connected decoder.

Both encoders are stacks of Conv-BatchNorm-LeakyReLU(0.2) blocks: one 5x5
stride-1 conv followed by 3x3 stride-2 convs until the map is 1x1.  Channel
multipliers of ``base_channels`` go 1, 2, 4, 8 and then stay at 8.

The decoder mirrors the encoder with Deconv-BatchNorm-ReLU blocks.  Each
block (and the final 5x5 deconv) sees its input concatenated with the
content-encoder map of the same resolution, starting with the 1x1 content
latent next to the mixed feature.  The last layer is a bare deconv followed
by a sigmoid.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError
from .ops import (
    BatchNormState,
    batchnorm2d,
    bilinear_mix,
    concat_channels,
    conv2d,
    conv_transpose2d,
    leaky_relu,
    relu,
    sigmoid,
)
from .tensor import DEFAULT_DTYPE, Tensor, as_tensor

LEAK = 0.2
INIT_STD = 0.02
MIN_STRIDED_STAGES = 3


def _halvings(size: int) -> list[int]:
    sizes = [size]
    while sizes[-1] > 1:
        sizes.append((sizes[-1] + 1) // 2)
    return sizes


@dataclass(frozen=True)
class ArchConfig:
    """Architecture hyperparameters; everything else is derived."""

    image_size: int = 80
    base_channels: int = 64
    r: int = 10
    skip_connections: bool = True

    def __post_init__(self):
        if self.image_size < 1 or self.base_channels < 1 or self.r < 1:
            raise ShapeError(f"image_size, base_channels and r must be positive: {self}")
        if len(self.stage_sizes) - 1 < MIN_STRIDED_STAGES:
            raise ShapeError(
                f"image_size {self.image_size} collapses to 1x1 after only "
                f"{len(self.stage_sizes) - 1} stride-2 stages; need >= {MIN_STRIDED_STAGES}"
            )

    @property
    def stage_sizes(self) -> tuple:
        """Spatial size after each encoder conv, e.g. 80, 40, 20, 10, 5, 3, 2, 1."""
        return tuple(_halvings(self.image_size))

    @property
    def depth(self) -> int:
        """Number of stride-2 encoder stages."""
        return len(self.stage_sizes) - 1

    @property
    def channel_schedule(self) -> tuple:
        return tuple(min(2 ** i, 8) for i in range(len(self.stage_sizes)))

    @property
    def encoder_channels(self) -> tuple:
        return tuple(self.base_channels * m for m in self.channel_schedule)

    @property
    def latent_dim(self) -> int:
        """R = K = B."""
        return self.encoder_channels[-1]

    @property
    def decoder_channels(self) -> tuple:
        """Output channels of the stride-2 deconvs (the final deconv has 1)."""
        return tuple(reversed(self.encoder_channels[:-1]))

    @property
    def decoder_sizes(self) -> tuple:
        return tuple(reversed(self.stage_sizes[:-1]))

    @property
    def output_paddings(self) -> tuple:
        """Per-block output_padding so 3x3/stride-2/pad-1 deconvs replay the encoder sizes."""
        ins = tuple(reversed(self.stage_sizes[1:]))
        return tuple(t - (2 * s - 1) for s, t in zip(ins, self.decoder_sizes))

    def decoder_in_channels(self) -> tuple:
        """Input channels of every decoder layer, final 5x5 deconv last."""
        enc = self.encoder_channels
        carry = (self.latent_dim,) + self.decoder_channels
        if not self.skip_connections:
            return carry
        skips = tuple(reversed(enc))
        return tuple(c + s for c, s in zip(carry, skips))

    def parameter_count(self) -> int:
        """Closed-form parameter count (biases included everywhere)."""
        enc = self.encoder_channels
        total = 0
        cin = self.r
        for i, cout in enumerate(enc):
            k = 5 if i == 0 else 3
            total += cout * cin * k * k + cout + 2 * cout
            cin = cout
        total *= 2
        total += self.latent_dim ** 3
        ins = self.decoder_in_channels()
        for cin, cout in zip(ins, self.decoder_channels):
            total += cin * cout * 9 + cout + 2 * cout
        total += ins[-1] * 25 + 1
        return total


@dataclass
class LatentPair:
    style: Tensor
    content: Tensor
    skips: list = field(default_factory=list)  # deepest first


class EMDModel:
    """Parameter container and forward pass.

    ``params`` is an ordered mapping of names to tensors and ``bn`` holds the
    running batch-norm statistics keyed by block name.  ``training`` selects
    batch statistics (and running-stat updates) versus running statistics.
    """

    def __init__(self, arch: ArchConfig, params: dict, bn: dict):
        self.arch = arch
        self.params = params
        self.bn = bn
        self.training = False

    # mode / bookkeeping ------------------------------------------------------
    def train(self) -> "EMDModel":
        self.training = True
        return self

    def eval(self) -> "EMDModel":
        self.training = False
        return self

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def astype(self, dtype) -> "EMDModel":
        """Deep copy with every parameter and statistic cast to ``dtype``."""
        params = {k: Tensor(p.data.astype(dtype), requires_grad=p.requires_grad, name=k)
                  for k, p in self.params.items()}
        bn = {k: BatchNormState(s.mean.astype(dtype), s.var.astype(dtype), s.momentum)
              for k, s in self.bn.items()}
        m = EMDModel(self.arch, params, bn)
        m.training = self.training
        return m

    def copy(self) -> "EMDModel":
        return self.astype(self.dtype)

    # network pieces ------------------------------------------------------------
    def _encode(self, prefix: str, refs) -> list:
        refs = as_tensor(refs, dtype=self.dtype)
        if refs.ndim != 4 or refs.shape[1] != self.arch.r:
            raise ShapeError(
                f"{prefix} encoder was built for r={self.arch.r} reference images "
                f"of size {self.arch.image_size}; got input {refs.shape}"
            )
        if refs.shape[2:] != (self.arch.image_size,) * 2:
            raise ShapeError(f"expected {self.arch.image_size}x{self.arch.image_size} images, got {refs.shape}")
        p = self.params
        x = refs
        feats = []
        for i in range(len(self.arch.encoder_channels)):
            name = f"{prefix}.{i}"
            stride, pad = (1, 2) if i == 0 else (2, 1)
            x = conv2d(x, p[name + ".weight"], p[name + ".bias"], stride, pad)
            x = batchnorm2d(x, p[name + ".gamma"], p[name + ".beta"], self.bn[name], self.training)
            x = leaky_relu(x, LEAK)
            feats.append(x)
        return feats

    def encode_style(self, refs) -> Tensor:
        feats = self._encode("style", refs)
        n = feats[-1].shape[0]
        return feats[-1].reshape(n, self.arch.latent_dim)

    def encode_content(self, refs) -> tuple[Tensor, list]:
        """Content latent plus every stage's feature map, deepest first."""
        feats = self._encode("content", refs)
        n = feats[-1].shape[0]
        return feats[-1].reshape(n, self.arch.latent_dim), feats[::-1]

    def encode(self, style_refs, content_refs) -> LatentPair:
        content, skips = self.encode_content(content_refs)
        return LatentPair(self.encode_style(style_refs), content, skips)

    def mix(self, style, content) -> Tensor:
        return bilinear_mix(as_tensor(style), self.params["mixer.W"], as_tensor(content))

    def decode(self, feature, skips=None) -> Tensor:
        arch = self.arch
        p = self.params
        feature = as_tensor(feature)
        n = feature.shape[0]
        if arch.skip_connections:
            if skips is None or len(skips) != len(arch.stage_sizes):
                got = None if skips is None else len(skips)
                raise ShapeError(f"decoder expects {len(arch.stage_sizes)} skip maps, got {got}")
            for s, size, ch in zip(skips, reversed(arch.stage_sizes), reversed(arch.encoder_channels)):
                if tuple(s.shape) != (n, ch, size, size):
                    raise ShapeError(f"skip map {tuple(s.shape)} does not match decoder stage ({n}, {ch}, {size}, {size})")
        x = feature.reshape(n, arch.latent_dim, 1, 1)
        for i, opad in enumerate(arch.output_paddings):
            if arch.skip_connections:
                x = concat_channels([x, skips[i]])
            name = f"decoder.{i}"
            x = conv_transpose2d(x, p[name + ".weight"], p[name + ".bias"], 2, 1, opad)
            x = batchnorm2d(x, p[name + ".gamma"], p[name + ".beta"], self.bn[name], self.training)
            x = relu(x)
        if arch.skip_connections:
            x = concat_channels([x, skips[-1]])
        x = conv_transpose2d(x, p["decoder.final.weight"], p["decoder.final.bias"], 1, 2, 0)
        return sigmoid(x)

    def forward(self, style_refs, content_refs) -> Tensor:
        content, skips = self.encode_content(content_refs)
        style = self.encode_style(style_refs)
        return self.decode(self.mix(style, content), skips)

    __call__ = forward


def build_model(arch: ArchConfig, seed: int = 0, dtype=DEFAULT_DTYPE) -> EMDModel:
    """Fresh model: N(0, 0.02) conv/deconv/mixer weights, zero biases, unit gammas."""
    rng = np.random.default_rng(seed)
    params: dict = {}
    bn: dict = {}

    def normal(shape):
        w = rng.standard_normal(shape, dtype=dtype)
        w *= INIT_STD
        return w

    def block(name, wshape, cout):
        params[name + ".weight"] = Tensor(normal(wshape), requires_grad=True, name=name + ".weight")
        params[name + ".bias"] = Tensor(np.zeros(cout, dtype), requires_grad=True, name=name + ".bias")
        params[name + ".gamma"] = Tensor(np.ones(cout, dtype), requires_grad=True, name=name + ".gamma")
        params[name + ".beta"] = Tensor(np.zeros(cout, dtype), requires_grad=True, name=name + ".beta")
        bn[name] = BatchNormState.fresh(cout, dtype)

    for prefix in ("style", "content"):
        cin = arch.r
        for i, cout in enumerate(arch.encoder_channels):
            k = 5 if i == 0 else 3
            block(f"{prefix}.{i}", (cout, cin, k, k), cout)
            cin = cout

    d = arch.latent_dim
    params["mixer.W"] = Tensor(normal((d, d, d)), requires_grad=True, name="mixer.W")

    ins = arch.decoder_in_channels()
    for i, (cin, cout) in enumerate(zip(ins, arch.decoder_channels)):
        block(f"decoder.{i}", (cin, cout, 3, 3), cout)
    params["decoder.final.weight"] = Tensor(normal((ins[-1], 1, 5, 5)), requires_grad=True,
                                            name="decoder.final.weight")
    params["decoder.final.bias"] = Tensor(np.zeros(1, dtype), requires_grad=True, name="decoder.final.bias")
    return EMDModel(arch, params, bn)
