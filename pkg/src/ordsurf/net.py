"""Fully convolutional ordinal height network and its checkpoint format.

Layout (output stride 8)::

    stem     3x3 conv, stride 2 -> instance standardization -> ReLU
    stage1   residual blocks, first block stride 2
    stage2   residual blocks, first block stride 2
    stage3   residual blocks, dilation 2
    stage4   residual blocks, dilation 2
    aspp     four parallel 3x3 convs (dilation 1 and each ASPP rate), concatenated
    compress 1x1 conv -> ReLU
    out      1x1 conv to 2K (ordinal), K (mcc) or 1 (mse) channels
    bilinear upsample x8 back to input resolution

Parameter names start with ``backbone.`` or ``head.``; the trainer uses that
prefix to assign learning-rate groups.
"""

from __future__ import annotations

import enum
import io
import math
import struct
import warnings
from dataclasses import dataclass, fields

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .discretize import DiscretizationScheme
from .prng import SplitMix64

OUTPUT_STRIDE = 8
STAGE_STRIDES = (2, 2, 1, 1)
STAGE_DILATIONS = (1, 1, 2, 2)

CKPT_MAGIC = b"ORDN"
CKPT_VERSION = 1


class Head(str, enum.Enum):
    ORDINAL = "ordinal"
    MCC = "mcc"
    MSE = "mse"


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class NetConfig:
    stem_channels: int = 16
    stage_channels: tuple[int, int, int, int] = (16, 32, 64, 64)
    blocks_per_stage: tuple[int, int, int, int] = (2, 2, 2, 2)
    aspp_rates: tuple[int, int, int] = (6, 12, 18)
    aspp_channels: int = 32
    K: int = 16
    head: Head = Head.ORDINAL
    patch_size: int = 64

    def __post_init__(self):
        object.__setattr__(self, "head", Head(self.head))
        for name in ("stage_channels", "blocks_per_stage", "aspp_rates"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        if len(self.stage_channels) != 4 or len(self.blocks_per_stage) != 4:
            raise ValueError("need exactly four stages")
        if len(self.aspp_rates) != 3:
            raise ValueError("need exactly three ASPP rates")
        if any(r < 1 for r in self.aspp_rates) or list(self.aspp_rates) != sorted(set(self.aspp_rates)):
            raise ValueError(f"ASPP rates must be strictly increasing and >= 1, got {self.aspp_rates}")
        if min(self.stage_channels) < 1 or self.stem_channels < 1 or self.aspp_channels < 1:
            raise ValueError("channel counts must be positive")
        if min(self.blocks_per_stage) < 1:
            raise ValueError("every stage needs at least one block")
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.patch_size < OUTPUT_STRIDE or self.patch_size % OUTPUT_STRIDE:
            raise ValueError(f"patch size must be a positive multiple of {OUTPUT_STRIDE}")
        extent = self.patch_size // OUTPUT_STRIDE
        too_wide = [r for r in self.aspp_rates if 2 * r >= extent]
        if too_wide:
            warnings.warn(f"ASPP rates {too_wide} reach past the {extent}x{extent} feature map "
                          f"of a {self.patch_size}px patch; those taps only see padding",
                          stacklevel=3)

    @property
    def out_channels(self) -> int:
        return {Head.ORDINAL: 2 * self.K, Head.MCC: self.K, Head.MSE: 1}[self.head]

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            elif isinstance(v, enum.Enum):
                v = v.value
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


def _conv_shapes(cfg: NetConfig):
    """Ordered (name, shape, conv options) for every weight in the network."""
    specs = []

    def conv(name, cin, cout, k, stride=1, dilation=1):
        specs.append((name, (cout, cin, k, k), dict(stride=stride, dilation=dilation, padding=dilation * (k // 2))))

    conv("backbone.stem", 3, cfg.stem_channels, 3, stride=2)
    cin = cfg.stem_channels
    for s, (cout, nblocks) in enumerate(zip(cfg.stage_channels, cfg.blocks_per_stage)):
        for bidx in range(nblocks):
            stride = STAGE_STRIDES[s] if bidx == 0 else 1
            d = STAGE_DILATIONS[s]
            prefix = f"backbone.stage{s + 1}.block{bidx}"
            conv(f"{prefix}.conv1", cin, cout, 3, stride=stride, dilation=d)
            conv(f"{prefix}.conv2", cout, cout, 3, dilation=d)
            if stride != 1 or cin != cout:
                conv(f"{prefix}.proj", cin, cout, 1, stride=stride)
            cin = cout
    for i, rate in enumerate((1,) + cfg.aspp_rates):
        conv(f"head.aspp.branch{i}", cin, cfg.aspp_channels, 3, dilation=rate)
    conv("head.compress", 4 * cfg.aspp_channels, cfg.aspp_channels, 1)
    conv("head.out", cfg.aspp_channels, cfg.out_channels, 1)
    return specs


class OrdinalNet:
    """Parameters plus forward pass. ``params`` maps name -> leaf Tensor."""

    def __init__(self, config: NetConfig, seed: int = 0, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        self.convs = {name: opts for name, _, opts in _conv_shapes(config)}
        self.params: dict[str, Tensor] = {}
        rng = SplitMix64(seed)
        for name, shape, _ in _conv_shapes(config):
            if name == "head.out":
                w = np.zeros(shape)
            else:
                fan_in = shape[1] * shape[2] * shape[3]
                bound = math.sqrt(6.0 / fan_in)
                w = (2.0 * rng.uniforms(int(np.prod(shape))) - 1.0).reshape(shape) * bound
            self.params[f"{name}.weight"] = Tensor(w.astype(self.dtype), requires_grad=True, name=f"{name}.weight")
            self.params[f"{name}.bias"] = Tensor(np.zeros(shape[0], dtype=self.dtype), requires_grad=True,
                                                 name=f"{name}.bias")

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def astype(self, dtype) -> "OrdinalNet":
        clone = OrdinalNet.__new__(OrdinalNet)
        clone.config, clone.dtype, clone.convs = self.config, np.dtype(dtype), self.convs
        clone.params = {k: Tensor(v.data.astype(dtype), requires_grad=True, name=k) for k, v in self.params.items()}
        return clone

    def _conv(self, name, x):
        return ag.conv2d(x, self.params[f"{name}.weight"], self.params[f"{name}.bias"], **self.convs[name])

    def features(self, x: Tensor) -> Tensor:
        """Backbone + ASPP + head convs, at 1/8 input resolution."""
        cfg = self.config
        h = ag.relu(ag.instance_standardize(self._conv("backbone.stem", x)))
        for s, nblocks in enumerate(cfg.blocks_per_stage):
            for bidx in range(nblocks):
                prefix = f"backbone.stage{s + 1}.block{bidx}"
                y = ag.relu(self._conv(f"{prefix}.conv1", h))
                y = self._conv(f"{prefix}.conv2", y)
                shortcut = self._conv(f"{prefix}.proj", h) if f"{prefix}.proj" in self.convs else h
                h = ag.relu(ag.add(y, shortcut))
        branches = [ag.relu(self._conv(f"head.aspp.branch{i}", h)) for i in range(4)]
        h = ag.concat(branches, axis=1)
        h = ag.relu(self._conv("head.compress", h))
        return self._conv("head.out", h)

    def forward(self, images) -> Tensor:
        """(N, 3, H, W) images in [0, 1] -> (N, out_channels, H, W) head outputs."""
        x = images if isinstance(images, Tensor) else Tensor(np.asarray(images, dtype=self.dtype))
        if x.data.ndim != 4 or x.shape[1] != 3:
            raise ValueError(f"expected (N, 3, H, W) input, got {x.shape}")
        if x.shape[2] % OUTPUT_STRIDE or x.shape[3] % OUTPUT_STRIDE:
            raise ValueError(f"input height and width must be divisible by {OUTPUT_STRIDE}, got {x.shape[2:]}")
        return ag.upsample_bilinear(self.features(x), OUTPUT_STRIDE)

    __call__ = forward

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        missing = set(self.params) - set(state)
        extra = set(state) - set(self.params)
        if missing or extra:
            raise CheckpointError(f"parameter mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for k, p in self.params.items():
            if state[k].shape != p.shape:
                raise CheckpointError(f"shape mismatch for {k}: {state[k].shape} vs {p.shape}")
            p.data = np.asarray(state[k], dtype=self.dtype).copy()


def parse_value(raw: str, template):
    """Parse a config-file string against the type of ``template`` (the field default)."""
    raw = raw.strip()
    if isinstance(template, enum.Enum):
        return type(template)(raw.lower())
    if isinstance(template, bool):
        return raw.lower() in ("1", "true", "yes", "on")
    if isinstance(template, tuple):
        parts = [p for p in raw.replace(" ", "").strip("()").split(",") if p]
        return tuple(type(template[0])(p) for p in parts)
    if isinstance(template, int):
        return int(raw)
    if isinstance(template, float):
        return float(raw)
    return raw


def config_from_mapping(cls, values: dict[str, str], base=None):
    base = base or cls()
    known = {f.name for f in fields(cls)}
    kwargs = {f.name: getattr(base, f.name) for f in fields(cls)}
    for key, raw in values.items():
        if key in known:
            kwargs[key] = parse_value(raw, getattr(base, key)) if isinstance(raw, str) else raw
    return cls(**kwargs)


# -- checkpoint ---------------------------------------------------------------

@dataclass
class Checkpoint:
    config: NetConfig
    scheme: DiscretizationScheme
    tensors: dict[str, np.ndarray]

    @classmethod
    def from_model(cls, model: OrdinalNet, scheme: DiscretizationScheme) -> "Checkpoint":
        return cls(model.config, scheme, {k: v.astype(np.float32) for k, v in model.state_dict().items()})

    def build_model(self, dtype=np.float32) -> OrdinalNet:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            model = OrdinalNet(self.config, dtype=dtype)
        model.load_state_dict(self.tensors)
        return model

    def to_bytes(self) -> bytes:
        """ORDN layout, little-endian::

            b"ORDN" | u32 version
            u32 n | n bytes UTF-8 config text (``key = value`` lines)
            scheme block: u8 kind (0 sid, 1 ud) | f64 a | f64 b | u32 K
            u32 tensor count
            per tensor: u16 name length | name | u8 rank | rank x u32 dims | f32 payload
        """
        buf = io.BytesIO()
        buf.write(CKPT_MAGIC)
        buf.write(struct.pack("<I", CKPT_VERSION))
        text = self.config.to_text().encode("utf-8")
        buf.write(struct.pack("<I", len(text)))
        buf.write(text)
        buf.write(self.scheme.to_bytes())
        buf.write(struct.pack("<I", len(self.tensors)))
        for name in sorted(self.tensors):
            arr = np.ascontiguousarray(self.tensors[name], dtype="<f4")
            raw = name.encode("utf-8")
            buf.write(struct.pack("<H", len(raw)))
            buf.write(raw)
            buf.write(struct.pack("<B", arr.ndim))
            buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            buf.write(arr.tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "Checkpoint":
        view = memoryview(data)
        pos = 0

        def take(n):
            nonlocal pos
            if pos + n > len(view):
                raise CheckpointError("truncated checkpoint")
            out = bytes(view[pos:pos + n])
            pos += n
            return out

        if take(4) != CKPT_MAGIC:
            raise CheckpointError("not an ORDN checkpoint")
        (version,) = struct.unpack("<I", take(4))
        if version != CKPT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        (n,) = struct.unpack("<I", take(4))
        config = config_from_text(take(n).decode("utf-8"))
        scheme = DiscretizationScheme.from_bytes(take(DiscretizationScheme.SIZE))
        (count,) = struct.unpack("<I", take(4))
        tensors = {}
        for _ in range(count):
            (ln,) = struct.unpack("<H", take(2))
            name = take(ln).decode("utf-8")
            (rank,) = struct.unpack("<B", take(1))
            dims = struct.unpack(f"<{rank}I", take(4 * rank))
            size = int(np.prod(dims)) if rank else 1
            tensors[name] = np.frombuffer(take(4 * size), dtype="<f4").reshape(dims).astype(np.float32)
        if pos != len(view):
            raise CheckpointError("trailing bytes after checkpoint")
        return cls(config, scheme, tensors)

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def parse_kv_text(text: str) -> dict[str, str]:
    """``key = value`` lines; blank lines and ``#`` comments are ignored."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def config_from_text(text: str) -> NetConfig:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        values = parse_kv_text(text)
        unknown = set(values) - {f.name for f in fields(NetConfig)}
        if unknown:
            raise ValueError(f"unknown network config keys: {sorted(unknown)}")
        return config_from_mapping(NetConfig, values)
