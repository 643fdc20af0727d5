"""The classification network: stride-2 conv blocks, C2f blocks, pooled head.

Stage stack for 3-channel input (spatial size a multiple of 16):

    conv1 3->16 /2   conv2 16->32 /2   c2f1 32->32  (n=1, no shortcut)
    conv3 32->64 /2  c2f2 64->64 (n=2, shortcut)    conv4 64->128 /2
    c2f3 128->128 (n=2, shortcut)  conv5 128->256 /2
    c2f4 256->256 (n=1, shortcut)  classify: global-avg-pool + linear

Each conv block is convolution -> batch norm -> SiLU. A C2f block halves the
channels of a 1x1 projection into two branches, chains n residual bottlenecks
on the newest branch, and fuses all 2+n branches with a second 1x1 projection.

A Network exposes a flat, insertion-ordered registry of named parameters that
optimizers update in place and checkpoints serialize; ``backward`` produces a
gradient registry under the same keys.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .ops import (
    DTYPE,
    BatchNormParams,
    ConvParams,
    batchnorm_backward,
    batchnorm_forward,
    concat_channels,
    conv2d_backward,
    conv2d_forward,
    global_avg_pool,
    global_avg_pool_backward,
    linear_backward,
    linear_forward,
    silu,
    silu_backward,
    split_channels,
)


def _uniform_fanin(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(DTYPE)


class ConvBlock:
    """conv -> batch norm -> SiLU."""

    def __init__(self, conv: ConvParams, bn: BatchNormParams):
        if bn.gamma.shape[0] != conv.out_channels:
            raise ValueError("batch norm channel count must equal conv out_channels")
        self.conv = conv
        self.bn = bn
        self._cache = None
        self.grad_weight = None
        self.grad_bias = None
        self.grad_gamma = None
        self.grad_beta = None

    @classmethod
    def create(cls, rng: np.random.Generator, c_in: int, c_out: int, kernel: int = 3, stride: int = 1) -> "ConvBlock":
        k = (kernel, kernel)
        conv = ConvParams(
            in_channels=c_in,
            out_channels=c_out,
            kernel=k,
            stride=stride,
            padding=kernel // 2,
            weight=_uniform_fanin(rng, (c_out, c_in, kernel, kernel), c_in * kernel * kernel),
            bias=np.zeros(c_out, dtype=DTYPE),
        )
        bn = BatchNormParams(
            gamma=np.ones(c_out, dtype=DTYPE),
            beta=np.zeros(c_out, dtype=DTYPE),
            running_mean=np.zeros(c_out, dtype=DTYPE),
            running_var=np.ones(c_out, dtype=DTYPE),
        )
        return cls(conv, bn)

    def forward(self, x: np.ndarray, training: bool) -> np.ndarray:
        pre = conv2d_forward(x, self.conv)
        normed, bn_cache = batchnorm_forward(pre, self.bn, training)
        if training:
            self._cache = (x, pre, normed, bn_cache)
        return silu(normed)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise RuntimeError("ConvBlock.backward called before a training-mode forward")
        x, pre, normed, bn_cache = self._cache
        g = silu_backward(normed, grad_out)
        g, self.grad_gamma, self.grad_beta = batchnorm_backward(pre, self.bn, g, bn_cache)
        g, self.grad_weight, self.grad_bias = conv2d_backward(x, self.conv, g)
        return g

    def named_params(self, prefix: str):
        yield f"{prefix}.conv.weight", self.conv.weight
        yield f"{prefix}.conv.bias", self.conv.bias
        yield f"{prefix}.bn.gamma", self.bn.gamma
        yield f"{prefix}.bn.beta", self.bn.beta

    def named_buffers(self, prefix: str):
        yield f"{prefix}.bn.running_mean", self.bn.running_mean
        yield f"{prefix}.bn.running_var", self.bn.running_var

    def named_grads(self, prefix: str):
        if self.grad_weight is None:
            raise RuntimeError(f"no gradients at {prefix}; run backward first")
        yield f"{prefix}.conv.weight", self.grad_weight
        yield f"{prefix}.conv.bias", self.grad_bias
        yield f"{prefix}.bn.gamma", self.grad_gamma
        yield f"{prefix}.bn.beta", self.grad_beta


class Bottleneck:
    """Two 3x3 conv blocks with an optional additive residual connection."""

    def __init__(self, cv1: ConvBlock, cv2: ConvBlock, shortcut: bool):
        if shortcut and cv1.conv.in_channels != cv2.conv.out_channels:
            raise ValueError("residual bottleneck needs equal input and output channels")
        self.cv1 = cv1
        self.cv2 = cv2
        self.shortcut = shortcut

    @classmethod
    def create(cls, rng: np.random.Generator, channels: int, shortcut: bool) -> "Bottleneck":
        return cls(
            ConvBlock.create(rng, channels, channels, kernel=3, stride=1),
            ConvBlock.create(rng, channels, channels, kernel=3, stride=1),
            shortcut,
        )

    def forward(self, x: np.ndarray, training: bool) -> np.ndarray:
        y = self.cv2.forward(self.cv1.forward(x, training), training)
        return y + x if self.shortcut else y

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        g = self.cv1.backward(self.cv2.backward(grad_out))
        return g + grad_out if self.shortcut else g

    def named_params(self, prefix: str):
        yield from self.cv1.named_params(f"{prefix}.cv1")
        yield from self.cv2.named_params(f"{prefix}.cv2")

    def named_buffers(self, prefix: str):
        yield from self.cv1.named_buffers(f"{prefix}.cv1")
        yield from self.cv2.named_buffers(f"{prefix}.cv2")

    def named_grads(self, prefix: str):
        yield from self.cv1.named_grads(f"{prefix}.cv1")
        yield from self.cv2.named_grads(f"{prefix}.cv2")


class C2fBlock:
    """Split/bottleneck-chain/concat block with 1x1 in and out projections."""

    def __init__(self, cv_in: ConvBlock, cv_out: ConvBlock, bottlenecks: list, hidden: int):
        self.cv_in = cv_in
        self.cv_out = cv_out
        self.m = bottlenecks
        self.hidden = hidden

    @classmethod
    def create(cls, rng: np.random.Generator, c_in: int, c_out: int, n: int, shortcut: bool) -> "C2fBlock":
        if n < 1:
            raise ValueError(f"C2f repeat count must be >= 1, got {n}")
        hidden = c_out // 2
        cv_in = ConvBlock.create(rng, c_in, 2 * hidden, kernel=1, stride=1)
        bottlenecks = [Bottleneck.create(rng, hidden, shortcut) for _ in range(n)]
        cv_out = ConvBlock.create(rng, (2 + n) * hidden, c_out, kernel=1, stride=1)
        return cls(cv_in, cv_out, bottlenecks, hidden)

    def forward(self, x: np.ndarray, training: bool) -> np.ndarray:
        y = split_channels(self.cv_in.forward(x, training), [self.hidden, self.hidden])
        for b in self.m:
            y.append(b.forward(y[-1], training))
        return self.cv_out.forward(concat_channels(*y), training)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        g = self.cv_out.backward(grad_out)
        slices = split_channels(g, [self.hidden] * (2 + len(self.m)))
        carry = slices[-1]
        for i in reversed(range(len(self.m))):
            carry = self.m[i].backward(carry) + slices[1 + i]
        return self.cv_in.backward(concat_channels(slices[0], carry))

    def named_params(self, prefix: str):
        yield from self.cv_in.named_params(f"{prefix}.cv_in")
        for i, b in enumerate(self.m):
            yield from b.named_params(f"{prefix}.m{i}")
        yield from self.cv_out.named_params(f"{prefix}.cv_out")

    def named_buffers(self, prefix: str):
        yield from self.cv_in.named_buffers(f"{prefix}.cv_in")
        for i, b in enumerate(self.m):
            yield from b.named_buffers(f"{prefix}.m{i}")
        yield from self.cv_out.named_buffers(f"{prefix}.cv_out")

    def named_grads(self, prefix: str):
        yield from self.cv_in.named_grads(f"{prefix}.cv_in")
        for i, b in enumerate(self.m):
            yield from b.named_grads(f"{prefix}.m{i}")
        yield from self.cv_out.named_grads(f"{prefix}.cv_out")


class ClassifyHead:
    """Global average pool followed by a linear projection to class logits."""

    def __init__(self, weight: np.ndarray, bias: np.ndarray):
        self.weight = weight
        self.bias = bias
        self._cache = None
        self.grad_weight = None
        self.grad_bias = None

    @classmethod
    def create(cls, rng: np.random.Generator, c_in: int, num_classes: int) -> "ClassifyHead":
        return cls(
            _uniform_fanin(rng, (num_classes, c_in), c_in),
            np.zeros(num_classes, dtype=DTYPE),
        )

    def features(self, x: np.ndarray) -> np.ndarray:
        return global_avg_pool(x)

    def forward(self, x: np.ndarray, training: bool) -> np.ndarray:
        pooled = global_avg_pool(x)
        if training:
            self._cache = (x.shape, pooled)
        return linear_forward(pooled, self.weight, self.bias)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise RuntimeError("ClassifyHead.backward called before a training-mode forward")
        x_shape, pooled = self._cache
        g, self.grad_weight, self.grad_bias = linear_backward(pooled, self.weight, grad_out)
        return global_avg_pool_backward(x_shape, g)

    def named_params(self, prefix: str):
        yield f"{prefix}.fc.weight", self.weight
        yield f"{prefix}.fc.bias", self.bias

    def named_buffers(self, prefix: str):
        return iter(())

    def named_grads(self, prefix: str):
        if self.grad_weight is None:
            raise RuntimeError(f"no gradients at {prefix}; run backward first")
        yield f"{prefix}.fc.weight", self.grad_weight
        yield f"{prefix}.fc.bias", self.grad_bias


# ---------------------------------------------------------------------------
# network assembly
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StageSpec:
    kind: str          # "conv" | "c2f" | "classify"
    c_in: int
    c_out: int
    stride: int = 1
    n: int = 0
    shortcut: bool = False

    def describe(self) -> str:
        if self.kind == "conv":
            return f"conv:{self.c_in}:{self.c_out}:s{self.stride}"
        if self.kind == "c2f":
            return f"c2f:{self.c_in}:{self.c_out}:n{self.n}:sc{int(self.shortcut)}"
        return f"classify:{self.c_in}:{self.c_out}"


def _stage_plan(num_classes: int) -> tuple[StageSpec, ...]:
    return (
        StageSpec("conv", 3, 16, stride=2),
        StageSpec("conv", 16, 32, stride=2),
        StageSpec("c2f", 32, 32, n=1, shortcut=False),
        StageSpec("conv", 32, 64, stride=2),
        StageSpec("c2f", 64, 64, n=2, shortcut=True),
        StageSpec("conv", 64, 128, stride=2),
        StageSpec("c2f", 128, 128, n=2, shortcut=True),
        StageSpec("conv", 128, 256, stride=2),
        StageSpec("c2f", 256, 256, n=1, shortcut=True),
        StageSpec("classify", 256, num_classes),
    )


@dataclass(frozen=True)
class NetworkSpec:
    num_classes: int = 2
    img_size: int = 128
    stages: tuple[StageSpec, ...] = field(default_factory=lambda: _stage_plan(2))

    def describe(self) -> str:
        return "|".join(s.describe() for s in self.stages)


class Network:
    """Instantiated stage stack plus the flat parameter registry."""

    def __init__(self, spec: NetworkSpec, stages: list):
        self.spec = spec
        self.stages = stages  # list[(name, block)]
        self._params = dict(self._named("named_params"))
        self._buffers = dict(self._named("named_buffers"))
        self._ready_for_backward = False

    def _named(self, method: str):
        for name, block in self.stages:
            yield from getattr(block, method)(name)

    def parameters(self) -> dict[str, np.ndarray]:
        """Name -> array registry. Arrays are the live weights: update in place."""
        return self._params

    def buffers(self) -> dict[str, np.ndarray]:
        return self._buffers

    def _validate_input(self, images: np.ndarray) -> None:
        if images.ndim != 4:
            raise ValueError(f"expected [N,3,H,W] input, got shape {tuple(images.shape)}")
        n, c, h, w = images.shape
        if c != 3:
            raise ValueError(f"expected 3 input channels, got {c}")
        if h < 16 or w < 16 or h % 16 or w % 16:
            raise ValueError(f"input spatial dims must be multiples of 16, got {h}x{w}")

    def forward(self, images: np.ndarray, training: bool = False) -> np.ndarray:
        self._validate_input(images)
        x = images
        for _, block in self.stages:
            x = block.forward(x, training)
        self._ready_for_backward = bool(training)
        return x

    def backward(self, grad_logits: np.ndarray) -> dict[str, np.ndarray]:
        """Gradient registry for every parameter, keyed like parameters()."""
        if not self._ready_for_backward:
            raise RuntimeError("backward requires a prior forward with training=True")
        g = grad_logits
        for _, block in reversed(self.stages):
            g = block.backward(g)
        return dict(self._named("named_grads"))

    def features(self, images: np.ndarray) -> np.ndarray:
        """Pooled pre-logit features [N, C_last], inference mode."""
        self._validate_input(images)
        x = images
        for _, block in self.stages:
            if isinstance(block, ClassifyHead):
                return block.features(x)
            x = block.forward(x, training=False)
        raise RuntimeError("network has no classify head")


def build_network(num_classes: int = 2, seed: int = 0, img_size: int = 128) -> Network:
    """Instantiate the full stage stack with seeded fan-in-uniform weights."""
    if num_classes < 2:
        raise ValueError(f"num_classes must be >= 2, got {num_classes}")
    if img_size < 16 or img_size % 16:
        raise ValueError(f"img_size must be a multiple of 16, got {img_size}")
    rng = np.random.Generator(np.random.PCG64(seed))
    spec = NetworkSpec(num_classes=num_classes, img_size=img_size, stages=_stage_plan(num_classes))
    stages = []
    conv_i = 0
    c2f_i = 0
    for s in spec.stages:
        if s.kind == "conv":
            conv_i += 1
            stages.append((f"conv{conv_i}", ConvBlock.create(rng, s.c_in, s.c_out, kernel=3, stride=s.stride)))
        elif s.kind == "c2f":
            c2f_i += 1
            stages.append((f"c2f{c2f_i}", C2fBlock.create(rng, s.c_in, s.c_out, s.n, s.shortcut)))
        else:
            stages.append(("classify", ClassifyHead.create(rng, s.c_in, s.c_out)))
    return Network(spec, stages)
