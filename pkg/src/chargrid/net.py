"""Encoder-decoder network over one-hot chargrids.

Encoder: five blocks of three 3x3 conv+BN+ReLU layers, spatial dropout after
each block; blocks 1-3 open with a stride-2 convolution. Two decoders
(segmentation, boxes) of three up-blocks each: concatenate the encoder
feature of the same resolution, 1x1 conv, 3x3 stride-2 transposed conv, two
3x3 convs. Heads are plain convolutions with bias and return logits.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import container
from .engine import (Parameter, Tensor, batch_norm, concat, conv2d, conv2d_transpose, relu,
                     spatial_dropout)

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
HEAD_INIT = 1e-3


@dataclass
class NetworkConfig:
    base_channels: int = 64
    n_vocab: int = 54
    n_seg_classes: int = 9
    n_anchors: int = 4
    input_h: int = 336
    input_w: int = 256
    dropout_p: float = 0.1
    encoder_channels: tuple[int, ...] | None = None
    dilations: tuple[int, ...] = (1, 1, 2, 4, 8)
    bn_eps: float = 1e-5
    bn_momentum: float = 0.9

    def __post_init__(self):
        if self.encoder_channels is None:
            c = self.base_channels
            self.encoder_channels = (c, 2 * c, 4 * c, 8 * c, 8 * c)
        self.encoder_channels = tuple(int(c) for c in self.encoder_channels)
        self.dilations = tuple(int(d) for d in self.dilations)
        if len(self.encoder_channels) != 5 or len(self.dilations) != 5:
            raise ValueError("encoder_channels and dilations need one entry per encoder block (5)")
        if self.input_h % 8 or self.input_w % 8:
            raise ValueError(f"input size {self.input_h}x{self.input_w} must be divisible by 8")
        if not 0 <= self.dropout_p < 1:
            raise ValueError("dropout_p must be in [0, 1)")

    @property
    def decoder_channels(self) -> tuple[int, int, int]:
        return self.encoder_channels[2], self.encoder_channels[1], self.encoder_channels[0]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder_channels"] = list(self.encoder_channels)
        d["dilations"] = list(self.dilations)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        d = dict(d)
        for key in ("encoder_channels", "dilations"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        return cls(**d)


class ConvBNReLU:
    def __init__(self, net: "ChargridNet", name: str, cin: int, cout: int, k: int = 3,
                 stride: int = 1, dilation: int = 1, transpose: bool = False):
        self.stride, self.dilation, self.transpose = stride, dilation, transpose
        self.kernel = net.add_param(f"{name}.kernel", (k, k, cin, cout), decay=True)
        self.gamma = net.add_param(f"{name}.gamma", (cout,))
        self.beta = net.add_param(f"{name}.beta", (cout,))
        self.running_mean = net.add_buffer(f"{name}.running_mean", (cout,))
        self.running_var = net.add_buffer(f"{name}.running_var", (cout,))
        self.name = name
        self.net = net

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        if self.transpose:
            y = conv2d_transpose(x, self.kernel, stride=self.stride)
        else:
            y = conv2d(x, self.kernel, stride=self.stride, dilation=self.dilation)
        if not training and not self.net.bn_updated:
            self.net.warn_uninitialized_bn()
        cfg = self.net.cfg
        y = batch_norm(y, self.gamma, self.beta, self.running_mean, self.running_var,
                       training, eps=cfg.bn_eps, momentum=cfg.bn_momentum)
        return relu(y)


class HeadConv:
    def __init__(self, net: "ChargridNet", name: str, cin: int, cout: int, k: int = 3):
        self.kernel = net.add_param(f"{name}.kernel", (k, k, cin, cout), decay=True, head=True)
        self.bias = net.add_param(f"{name}.bias", (cout,), head=True)

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.kernel, self.bias)


class ChargridNet:
    """Parameters, running statistics and the forward pass."""

    def __init__(self, cfg: NetworkConfig, dtype=np.float32, seed: int | None = 0):
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Parameter] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self._head_params: set[str] = set()
        self.bn_updated = False
        self._warned = False
        self.rng = np.random.default_rng(0)
        self._build()
        self._check_lateral_shapes()
        if seed is not None:
            self.initialize(seed)

    # -- construction --------------------------------------------------------
    def add_param(self, name, shape, decay=False, head=False) -> Parameter:
        p = Parameter(np.zeros(shape, self.dtype), name=name, decay=decay)
        self.params[name] = p
        if head:
            self._head_params.add(name)
        return p

    def add_buffer(self, name, shape) -> np.ndarray:
        buf = np.zeros(shape, self.dtype) if name.endswith("mean") else np.ones(shape, self.dtype)
        self.buffers[name] = buf
        return buf

    def _build(self):
        cfg = self.cfg
        enc = cfg.encoder_channels
        self.encoder = []
        cin = cfg.n_vocab
        for b in range(5):
            stride = 2 if b < 3 else 1
            d = cfg.dilations[b]
            layers = [ConvBNReLU(self, f"enc{b + 1}.conv1", cin, enc[b], stride=stride, dilation=d),
                      ConvBNReLU(self, f"enc{b + 1}.conv2", enc[b], enc[b], dilation=d),
                      ConvBNReLU(self, f"enc{b + 1}.conv3", enc[b], enc[b], dilation=d)]
            self.encoder.append(layers)
            cin = enc[b]
        self.decoders = {}
        for branch in ("seg", "box"):
            blocks = []
            cin = enc[4]
            for u, (lateral, cout) in enumerate(zip((2, 1, 0), cfg.decoder_channels)):
                p = f"{branch}.up{u + 1}"
                blocks.append((lateral, [
                    ConvBNReLU(self, f"{p}.fuse", cin + enc[lateral], cout, k=1),
                    ConvBNReLU(self, f"{p}.upconv", cout, cout, stride=2, transpose=True),
                    ConvBNReLU(self, f"{p}.conv1", cout, cout),
                    ConvBNReLU(self, f"{p}.conv2", cout, cout),
                ]))
                cin = cout
            self.decoders[branch] = blocks
        c_out = cfg.decoder_channels[-1]
        self.seg_head = HeadConv(self, "seg.head", c_out, cfg.n_seg_classes)
        self.boxmask_head = HeadConv(self, "box.mask_head", c_out, 2 * cfg.n_anchors)
        self.boxcoord_head = HeadConv(self, "box.coord_head", c_out, 4 * cfg.n_anchors)

    def encoder_resolutions(self) -> list[tuple[int, int]]:
        h, w = self.cfg.input_h, self.cfg.input_w
        out = []
        for b in range(5):
            if b < 3:
                h, w = -(-h // 2), -(-w // 2)
            out.append((h, w))
        return out

    def _check_lateral_shapes(self):
        res = self.encoder_resolutions()
        cur = res[4]
        for lateral, _ in self.decoders["seg"]:
            if res[lateral] != cur:
                raise ValueError(f"lateral from block {lateral + 1} has size {res[lateral]}, "
                                 f"decoder expects {cur}")
            cur = (2 * cur[0], 2 * cur[1])
        if cur != (self.cfg.input_h, self.cfg.input_w):
            raise ValueError("decoder output does not restore the input resolution")

    def initialize(self, seed: int) -> None:
        """He-normal kernels, constant 1e-3 output heads, BN gamma=1 beta=0."""
        rng = np.random.default_rng(seed)
        for name, p in self.params.items():
            if name in self._head_params:
                p.data[...] = HEAD_INIT
            elif name.endswith(".kernel"):
                kh, kw, cin, _ = p.shape
                std = np.sqrt(2.0 / (kh * kw * cin))
                p.data[...] = rng.standard_normal(p.shape) * std
            elif name.endswith(".gamma"):
                p.data[...] = 1
            else:
                p.data[...] = 0
            p.momentum[...] = 0
        for name, buf in self.buffers.items():
            buf[...] = 0 if name.endswith("mean") else 1
        self.bn_updated = False
        self.rng = np.random.default_rng([seed, 1])

    def warn_uninitialized_bn(self):
        if not self._warned:
            logger.warning("eval-mode forward before any batch-norm statistics update; "
                           "using initial running stats (mean 0, var 1)")
            self._warned = True

    # -- forward -------------------------------------------------------------
    def _as_input(self, x) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=self.dtype))
        expected = (self.cfg.input_h, self.cfg.input_w, self.cfg.n_vocab)
        if x.ndim != 4 or x.shape[1:] != expected:
            raise ValueError(f"input shape {x.shape} does not match (N,) + {expected}")
        return x

    def encode(self, x, training: bool = False) -> list[Tensor]:
        x = self._as_input(x)
        feats = []
        for layers in self.encoder:
            for layer in layers:
                x = layer(x, training)
            x = spatial_dropout(x, self.cfg.dropout_p, training, self.rng)
            feats.append(x)
        return feats

    def _decode(self, branch: str, feats: list[Tensor], training: bool) -> Tensor:
        x = feats[4]
        for lateral, layers in self.decoders[branch]:
            x = concat([x, feats[lateral]], axis=-1)
            for layer in layers:
                x = layer(x, training)
        return x

    def forward(self, x, training: bool = False) -> tuple[Tensor, Tensor, Tensor]:
        """(segmentation logits, box-mask logits, box deltas), all at input resolution."""
        feats = self.encode(x, training)
        if training:
            self.bn_updated = True
        seg = self.seg_head(self._decode("seg", feats, training))
        box = self._decode("box", feats, training)
        return seg, self.boxmask_head(box), self.boxcoord_head(box)

    __call__ = forward

    # -- state ---------------------------------------------------------------
    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def n_parameters(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def state_dict(self, with_momentum: bool = False) -> dict[str, np.ndarray]:
        out = {f"param/{k}": p.data for k, p in self.params.items()}
        out.update({f"buffer/{k}": v for k, v in self.buffers.items()})
        if with_momentum:
            out.update({f"momentum/{k}": p.momentum for k, p in self.params.items()})
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for k, p in self.params.items():
            arr = state[f"param/{k}"]
            if arr.shape != p.shape:
                raise ValueError(f"{k}: checkpoint shape {arr.shape} != {p.shape}")
            p.data[...] = arr
            if f"momentum/{k}" in state:
                p.momentum[...] = state[f"momentum/{k}"]
        for k, buf in self.buffers.items():
            buf[...] = state[f"buffer/{k}"]
        self.bn_updated = any(f"buffer/{k}" in state for k in self.buffers)


def save_network(net: ChargridNet, directory, extra: dict | None = None,
                 with_momentum: bool = False) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    container.save(d / "params.cgt", net.state_dict(with_momentum))
    meta = {"version": CHECKPOINT_VERSION, "network": net.cfg.to_dict(), "extra": extra or {}}
    (d / "network.json").write_text(json.dumps(meta, indent=2, sort_keys=True))


def load_network(directory, dtype=np.float32) -> tuple[ChargridNet, dict]:
    d = Path(directory)
    meta = json.loads((d / "network.json").read_text())
    if meta.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
    net = ChargridNet(NetworkConfig.from_dict(meta["network"]), dtype=dtype, seed=None)
    net.load_state_dict(container.load(d / "params.cgt"))
    return net, meta.get("extra", {})
