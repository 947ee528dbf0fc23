"""Architecture descriptors: full-size and mini variants, freeze plans, counting.

The full-size builders reproduce the node sequences of the published
MobileNet / DenseNet-121 / Xception layouts layer for layer, so that layer
counts (86 / 427 / 132) and parameter totals match the reference tables
exactly, including the split between trainable parameters and batch-norm
moving statistics at every freeze ratio.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

from .layers import LayerNode, layer_param_count, node_output_shape

FULL_SIZE = ("mobilenet", "densenet121", "xception")
MINI = ("mini_mobilenet", "mini_densenet", "mini_xception")
ARCH_NAMES = FULL_SIZE + MINI
HEADS = ("gap", "flatten")

DESCRIPTOR_FORMAT = "floranet-arch/1"


class ArchError(ValueError):
    """Unknown architecture, incompatible input shape, or bad freeze ratio."""


@dataclass
class ArchDescriptor:
    """Ordered layer-node list for one architecture plus its classifier head.

    nodes[:base_len] is the convolutional base the freeze machinery operates
    on; the final two nodes are always the head vectorizer (gap or flatten)
    and a softmax dense layer of num_classes outputs.
    """

    name: str
    input_shape: tuple[int, int, int]
    nodes: list[LayerNode]
    head: str
    num_classes: int
    base_len: int

    @property
    def base_nodes(self) -> list[LayerNode]:
        return self.nodes[:self.base_len]

    def output_shapes(self) -> list[tuple[int, ...]]:
        """Per-node output shape (batch dim omitted) from the shape rules."""
        shapes: list[tuple[int, ...]] = []
        for node in self.nodes:
            ins = [shapes[i] for i in node.inputs] or [self.input_shape]
            shapes.append(node_output_shape(node, ins))
        return shapes

    def to_dict(self) -> dict:
        return {
            "format": DESCRIPTOR_FORMAT,
            "name": self.name,
            "input_shape": list(self.input_shape),
            "head": self.head,
            "num_classes": self.num_classes,
            "base_len": self.base_len,
            "nodes": [n.to_dict() for n in self.nodes],
        }

    @staticmethod
    def from_dict(d: dict) -> "ArchDescriptor":
        if d.get("format") != DESCRIPTOR_FORMAT:
            raise ArchError(f"unknown descriptor format {d.get('format')!r}")
        return ArchDescriptor(
            name=d["name"],
            input_shape=tuple(d["input_shape"]),
            nodes=[LayerNode.from_dict(n) for n in d["nodes"]],
            head=d["head"],
            num_classes=int(d["num_classes"]),
            base_len=int(d["base_len"]),
        )

    def to_text(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @staticmethod
    def from_text(text: str) -> "ArchDescriptor":
        return ArchDescriptor.from_dict(json.loads(text))


@dataclass(frozen=True)
class FreezePlan:
    """A contiguous prefix of base nodes excluded from gradient updates."""

    ratio: float
    frozen_node_indices: frozenset


class _Builder:
    """Appends nodes while tracking output shapes, so channel counts are
    derived rather than hand-entered."""

    def __init__(self, input_shape):
        self.nodes: list[LayerNode] = [LayerNode("Input", "input", inputs=[])]
        self.shapes: list[tuple[int, ...]] = [tuple(input_shape)]

    def add(self, kind, name, src=None, **hp) -> int:
        if src is None:
            src = [len(self.nodes) - 1]
        elif isinstance(src, int):
            src = [src]
        in_shapes = [self.shapes[i] for i in src]
        if len(in_shapes[0]) == 3:
            hp.setdefault("in_channels", in_shapes[0][2])
        elif len(in_shapes[0]) == 1:
            hp.setdefault("in_channels", in_shapes[0][0])
        node = LayerNode(kind, name, inputs=list(src), **hp)
        if kind == "Concat":
            node.in_channels = sum(s[2] for s in in_shapes)
        self.nodes.append(node)
        self.shapes.append(node_output_shape(node, in_shapes))
        return len(self.nodes) - 1

    def conv(self, name, filters, kernel, stride=1, padding="same", src=None,
             use_bias=False):
        return self.add("Conv2D", name, src, filters=filters, kernel=kernel,
                        stride=stride, padding=padding, use_bias=use_bias)

    def dwconv(self, name, kernel=3, stride=1, padding="same", src=None):
        return self.add("DepthwiseConv2D", name, src, kernel=kernel,
                        stride=stride, padding=padding)

    def sepconv(self, name, filters, kernel=3, stride=1, padding="same", src=None):
        return self.add("SeparableConv2D", name, src, filters=filters,
                        kernel=kernel, stride=stride, padding=padding)

    def bn(self, name, src=None, epsilon=1e-3, momentum=0.99):
        return self.add("BatchNorm", name, src, bn_epsilon=epsilon,
                        bn_momentum=momentum)

    def act(self, name, fn="relu", src=None):
        return self.add("Activation", name, src, activation=fn)

    def zeropad(self, name, pad, src=None):
        return self.add("ZeroPad", name, src, pad=pad)

    def maxpool(self, name, kernel, stride, padding="valid", src=None):
        return self.add("MaxPool", name, src, kernel=kernel, stride=stride,
                        padding=padding)

    def avgpool(self, name, kernel, stride, padding="valid", src=None):
        return self.add("AvgPool", name, src, kernel=kernel, stride=stride,
                        padding=padding)

    def channels(self, idx=None) -> int:
        shape = self.shapes[idx if idx is not None else -1]
        return shape[2] if len(shape) == 3 else shape[0]


def _mobilenet_base(b: _Builder):
    b.conv("conv1", 32, 3, stride=2, padding="same")
    b.bn("conv1_bn")
    b.act("conv1_relu", "relu6")
    blocks = [(64, 1), (128, 2), (128, 1), (256, 2), (256, 1), (512, 2),
              (512, 1), (512, 1), (512, 1), (512, 1), (512, 1), (1024, 2),
              (1024, 1)]
    for bid, (filters, stride) in enumerate(blocks, start=1):
        if stride == 2:
            b.zeropad(f"conv_pad_{bid}", ((0, 1), (0, 1)))
        b.dwconv(f"conv_dw_{bid}", 3, stride,
                 padding="same" if stride == 1 else "valid")
        b.bn(f"conv_dw_{bid}_bn")
        b.act(f"conv_dw_{bid}_relu", "relu6")
        b.conv(f"conv_pw_{bid}", filters, 1, stride=1, padding="same")
        b.bn(f"conv_pw_{bid}_bn")
        b.act(f"conv_pw_{bid}_relu", "relu6")


_DENSENET_EPS = 1.001e-5


def _dense_block(b: _Builder, x: int, blocks: int, growth: int, prefix: str) -> int:
    for i in range(1, blocks + 1):
        name = f"{prefix}_block{i}"
        y = b.bn(f"{name}_0_bn", src=x, epsilon=_DENSENET_EPS)
        y = b.act(f"{name}_0_relu", src=y)
        y = b.conv(f"{name}_1_conv", 4 * growth, 1, src=y)
        y = b.bn(f"{name}_1_bn", src=y, epsilon=_DENSENET_EPS)
        y = b.act(f"{name}_1_relu", src=y)
        y = b.conv(f"{name}_2_conv", growth, 3, src=y)
        x = b.add("Concat", f"{name}_concat", src=[x, y])
    return x


def _transition(b: _Builder, x: int, prefix: str) -> int:
    x = b.bn(f"{prefix}_bn", src=x, epsilon=_DENSENET_EPS)
    x = b.act(f"{prefix}_relu", src=x)
    x = b.conv(f"{prefix}_conv", b.channels(x) // 2, 1, src=x)
    return b.avgpool(f"{prefix}_pool", 2, 2, src=x)


def _densenet121_base(b: _Builder):
    b.zeropad("conv1_pad", ((3, 3), (3, 3)))
    b.conv("conv1_conv", 64, 7, stride=2, padding="valid")
    b.bn("conv1_bn", epsilon=_DENSENET_EPS)
    b.act("conv1_relu")
    b.zeropad("pool1_pad", ((1, 1), (1, 1)))
    x = b.maxpool("pool1", 3, 2)
    for stage, blocks in enumerate([6, 12, 24, 16], start=2):
        x = _dense_block(b, x, blocks, 32, f"conv{stage}")
        if stage < 5:
            x = _transition(b, x, f"pool{stage}")
    b.bn("bn", src=x, epsilon=_DENSENET_EPS)
    b.act("relu")


def _xception_residual_block(b: _Builder, x: int, filters: int, prefix: str,
                             pre_act: bool) -> int:
    """One downsampling module: separable main path, 1x1 strided shortcut.

    Node order matters for freeze boundaries: main path first, then the
    shortcut conv, the pool, the shortcut bn, and the merge.
    """
    block_in = x
    if pre_act:
        x = b.act(f"{prefix}_sepconv1_act", src=x)
    x = b.sepconv(f"{prefix}_sepconv1", filters, src=x)
    x = b.bn(f"{prefix}_sepconv1_bn", src=x)
    x = b.act(f"{prefix}_sepconv2_act", src=x)
    x = b.sepconv(f"{prefix}_sepconv2", filters, src=x)
    x = b.bn(f"{prefix}_sepconv2_bn", src=x)
    res = b.conv(f"{prefix}_residual_conv", filters, 1, stride=2, src=block_in)
    pool = b.maxpool(f"{prefix}_pool", 3, 2, padding="same", src=x)
    res = b.bn(f"{prefix}_residual_bn", src=res)
    return b.add("Add", f"{prefix}_add", src=[pool, res])


def _xception_middle_block(b: _Builder, x: int, prefix: str) -> int:
    block_in = x
    for i in (1, 2, 3):
        x = b.act(f"{prefix}_sepconv{i}_act", src=x)
        x = b.sepconv(f"{prefix}_sepconv{i}", 728, src=x)
        x = b.bn(f"{prefix}_sepconv{i}_bn", src=x)
    return b.add("Add", f"{prefix}_add", src=[block_in, x])


def _xception_base(b: _Builder):
    b.conv("block1_conv1", 32, 3, stride=2, padding="valid")
    b.bn("block1_conv1_bn")
    b.act("block1_conv1_act")
    b.conv("block1_conv2", 64, 3, padding="valid")
    b.bn("block1_conv2_bn")
    x = b.act("block1_conv2_act")
    x = _xception_residual_block(b, x, 128, "block2", pre_act=False)
    x = _xception_residual_block(b, x, 256, "block3", pre_act=True)
    x = _xception_residual_block(b, x, 728, "block4", pre_act=True)
    for bid in range(5, 13):
        x = _xception_middle_block(b, x, f"block{bid}")
    # exit module: 728 then 1024 on the main path
    block_in = x
    x = b.act("block13_sepconv1_act", src=x)
    x = b.sepconv("block13_sepconv1", 728, src=x)
    x = b.bn("block13_sepconv1_bn", src=x)
    x = b.act("block13_sepconv2_act", src=x)
    x = b.sepconv("block13_sepconv2", 1024, src=x)
    x = b.bn("block13_sepconv2_bn", src=x)
    res = b.conv("block13_residual_conv", 1024, 1, stride=2, src=block_in)
    pool = b.maxpool("block13_pool", 3, 2, padding="same", src=x)
    res = b.bn("block13_residual_bn", src=res)
    x = b.add("Add", "block13_add", src=[pool, res])
    b.sepconv("block14_sepconv1", 1536, src=x)
    b.bn("block14_sepconv1_bn")
    b.act("block14_sepconv1_act")
    b.sepconv("block14_sepconv2", 2048)
    b.bn("block14_sepconv2_bn")
    b.act("block14_sepconv2_act")


def _mini_mobilenet_base(b: _Builder):
    b.conv("conv1", 8, 3, stride=2, padding="same")
    b.bn("conv1_bn")
    b.act("conv1_relu", "relu6")
    for bid, (filters, stride) in enumerate([(16, 1), (32, 2), (64, 1)], start=1):
        if stride == 2:
            b.zeropad(f"conv_pad_{bid}", ((0, 1), (0, 1)))
        b.dwconv(f"conv_dw_{bid}", 3, stride,
                 padding="same" if stride == 1 else "valid")
        b.bn(f"conv_dw_{bid}_bn")
        b.act(f"conv_dw_{bid}_relu", "relu6")
        b.conv(f"conv_pw_{bid}", filters, 1)
        b.bn(f"conv_pw_{bid}_bn")
        b.act(f"conv_pw_{bid}_relu", "relu6")


def _mini_densenet_base(b: _Builder):
    b.conv("conv1_conv", 16, 3, stride=2, padding="same")
    b.bn("conv1_bn", epsilon=_DENSENET_EPS)
    x = b.act("conv1_relu")
    x = _dense_block(b, x, 4, 12, "conv2")
    x = _transition(b, x, "pool2")
    x = _dense_block(b, x, 4, 12, "conv3")
    b.bn("bn", src=x, epsilon=_DENSENET_EPS)
    b.act("relu")


def _mini_xception_base(b: _Builder):
    b.conv("block1_conv1", 16, 3, stride=2, padding="same")
    b.bn("block1_conv1_bn")
    b.act("block1_conv1_act")
    b.conv("block1_conv2", 32, 3, padding="same")
    b.bn("block1_conv2_bn")
    x = b.act("block1_conv2_act")
    x = _xception_residual_block(b, x, 64, "block2", pre_act=False)
    _xception_residual_block(b, x, 128, "block3", pre_act=True)


_BASES = {
    "mobilenet": _mobilenet_base,
    "densenet121": _densenet121_base,
    "xception": _xception_base,
    "mini_mobilenet": _mini_mobilenet_base,
    "mini_densenet": _mini_densenet_base,
    "mini_xception": _mini_xception_base,
}

_FULL_INPUTS = {
    "mobilenet": (224,),
    "densenet121": (224,),
    # 299 is canonical; 224 is accepted to reproduce the published
    # flatten-head parameter total, which implies a 7x7 final map.
    "xception": (299, 224),
}


def build_architecture(name: str, input_shape=None, num_classes: int = 16,
                       head: str = "gap") -> ArchDescriptor:
    """Construct a descriptor by name with the requested head appended."""
    if name not in _BASES:
        raise ArchError(f"unknown architecture {name!r}; expected one of {ARCH_NAMES}")
    if head not in HEADS:
        raise ArchError(f"unknown head {head!r}; expected one of {HEADS}")
    if num_classes < 2:
        raise ArchError(f"num_classes must be >= 2, got {num_classes}")

    if input_shape is None:
        side = 299 if name == "xception" else (224 if name in FULL_SIZE else 32)
        input_shape = (side, side, 3)
    input_shape = tuple(int(v) for v in input_shape)
    if len(input_shape) != 3 or input_shape[2] != 3:
        raise ArchError(f"input shape must be H x W x 3, got {input_shape}")
    h, w = input_shape[0], input_shape[1]
    if h != w:
        raise ArchError(f"input must be square, got {h}x{w}")
    if name in FULL_SIZE:
        if h not in _FULL_INPUTS[name]:
            raise ArchError(
                f"{name} accepts input sides {_FULL_INPUTS[name]}, got {h}")
    elif h < 32:
        raise ArchError(f"mini variants need input side >= 32, got {h}")

    b = _Builder(input_shape)
    _BASES[name](b)
    base_len = len(b.nodes)

    if head == "gap":
        b.add("GlobalAvgPool", "head_pool")
    else:
        b.add("Flatten", "head_flatten")
    b.add("Dense", "predictions", units=num_classes, activation="softmax")

    return ArchDescriptor(name=name, input_shape=input_shape, nodes=b.nodes,
                          head=head, num_classes=num_classes, base_len=base_len)


def count_layers(desc: ArchDescriptor) -> int:
    """Base node count, excluding the appended head vectorizer and dense."""
    return desc.base_len


def apply_freeze(desc: ArchDescriptor, ratio: float) -> FreezePlan:
    """Freeze the first floor(ratio * base node count) nodes from the input.

    The reference freeze-layer counts (21/43/64 for the 86-node base, and
    106/213/320 for the 427-node base) all truncate the fractional part, so
    truncation is the rule here.
    """
    if not (0.0 <= ratio < 1.0):
        raise ArchError(f"freeze ratio must be in [0, 1), got {ratio}")
    n = int(math.floor(ratio * desc.base_len))
    return FreezePlan(ratio=ratio, frozen_node_indices=frozenset(range(n)))


def count_parameters(desc: ArchDescriptor, plan: FreezePlan | None = None) -> dict:
    """Total / trainable / non-trainable parameters, optionally under a plan.

    Freezing a node moves all of its parameters to non-trainable; batch-norm
    moving statistics are non-trainable at any ratio.
    """
    frozen = plan.frozen_node_indices if plan is not None else frozenset()
    total = trainable = non_trainable = 0
    for idx, node in enumerate(desc.nodes):
        c = layer_param_count(node)
        total += c["total"]
        if idx in frozen:
            non_trainable += c["total"]
        else:
            trainable += c["trainable"]
            non_trainable += c["non_trainable"]
    return {"total": total, "trainable": trainable, "non_trainable": non_trainable}
