"""Height discretization: continuous heights <-> ordinal class indices.

SID thresholds live in log space, ``t_i = ln(a+1) + ln((b+1)/(a+1)) * i / K``;
UD thresholds live in meters, ``t_i = a + (b - a) * i / K``.
"""

from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .raster import RasterGrid

_SCHEME = struct.Struct("<BddI")


class Kind(str, enum.Enum):
    SID = "sid"
    UD = "ud"


_KIND_CODES = {Kind.SID: 0, Kind.UD: 1}


class Midpoint(str, enum.Enum):
    GEOMETRIC = "geometric"
    LINEAR = "linear"


@dataclass(frozen=True)
class DiscretizationScheme:
    kind: Kind
    a: float
    b: float
    K: int
    thresholds: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        a, b, K = float(self.a), float(self.b), self.K
        if not (math.isfinite(a) and math.isfinite(b)):
            raise ValueError("scheme bounds must be finite")
        if a < 0 or b <= a:
            raise ValueError(f"need b > a >= 0, got a={a}, b={b}")
        if int(K) != K or K < 1:
            raise ValueError(f"K must be a positive integer, got {K}")
        object.__setattr__(self, "K", int(K))
        i = np.arange(K + 1, dtype=np.float64)
        if self.kind is Kind.SID:
            lo, hi = math.log(a + 1.0), math.log(b + 1.0)
            t = lo + math.log((b + 1.0) / (a + 1.0)) * i / K
        else:
            lo, hi = a, b
            t = a + (b - a) * i / K
        t[0], t[-1] = lo, hi
        t.setflags(write=False)
        object.__setattr__(self, "thresholds", t)

    def transform(self, heights):
        """Map meters into threshold space; heights below ``a`` are clamped to ``a``."""
        h = np.maximum(np.asarray(heights, dtype=np.float64), self.a)
        return np.log(h + 1.0) if self.kind is Kind.SID else h

    def inverse(self, values):
        v = np.asarray(values, dtype=np.float64)
        return np.exp(v) - 1.0 if self.kind is Kind.SID else v

    def bin_edges_m(self) -> np.ndarray:
        return self.inverse(self.thresholds)

    def to_bytes(self) -> bytes:
        return _SCHEME.pack(_KIND_CODES[self.kind], self.a, self.b, self.K)

    @classmethod
    def from_bytes(cls, buf: bytes) -> "DiscretizationScheme":
        code, a, b, K = _SCHEME.unpack(buf[:_SCHEME.size])
        kinds = {v: k for k, v in _KIND_CODES.items()}
        if code not in kinds:
            raise ValueError(f"unknown scheme kind byte {code}")
        return cls(kinds[code], a, b, K)

    SIZE = _SCHEME.size


def make_scheme(kind, a: float, b: float, K: int) -> DiscretizationScheme:
    return DiscretizationScheme(Kind(kind), a, b, K)


def encode(height, scheme: DiscretizationScheme):
    """Class index of each height: largest i with t_i <= transform(h), clamped to [0, K-1]."""
    h = np.asarray(height, dtype=np.float64)
    if np.isnan(h).any():
        raise ValueError("cannot encode NaN heights")
    v = scheme.transform(h)
    idx = np.searchsorted(scheme.thresholds, v, side="right") - 1
    idx = np.clip(idx, 0, scheme.K - 1)
    return int(idx) if idx.ndim == 0 else idx.astype(np.int64)


def decode(d, scheme: DiscretizationScheme, midpoint: Midpoint | str = Midpoint.GEOMETRIC):
    """Height in meters for class index ``d``: midpoint of its bin.

    The geometric mode averages thresholds in threshold space and maps back, so
    for SID it yields the geometric bin centre of (h + 1). The linear mode
    averages the bin edges in meters. Both agree for UD.
    """
    d = np.asarray(d)
    if (d < 0).any() or (d >= scheme.K).any():
        raise ValueError(f"class index out of range [0, {scheme.K - 1}]")
    t = scheme.thresholds
    if Midpoint(midpoint) is Midpoint.GEOMETRIC:
        out = scheme.inverse((t[d] + t[d + 1]) / 2.0)
    else:
        edges = scheme.bin_edges_m()
        out = (edges[d] + edges[d + 1]) / 2.0
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class ClassMap:
    classes: np.ndarray
    scheme: DiscretizationScheme

    def __post_init__(self):
        c = np.ascontiguousarray(self.classes, dtype=np.uint16)
        if c.ndim != 2:
            raise ValueError("class map must be 2-D")
        if c.size and c.max() >= self.scheme.K:
            raise ValueError("class index >= K")
        c.setflags(write=False)
        object.__setattr__(self, "classes", c)

    @property
    def width(self) -> int:
        return self.classes.shape[1]

    @property
    def height(self) -> int:
        return self.classes.shape[0]


def encode_map(grid: RasterGrid, scheme: DiscretizationScheme) -> ClassMap:
    return ClassMap(encode(grid.data, scheme), scheme)


def decode_map(cmap: ClassMap, midpoint: Midpoint | str = Midpoint.GEOMETRIC) -> RasterGrid:
    return RasterGrid(decode(cmap.classes.astype(np.int64), cmap.scheme, midpoint))
