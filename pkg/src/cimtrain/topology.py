"""Layer descriptors and network topologies.

Tensors are NCHW. Convolution weights are stored ``(K, K, D, N)``: kernel
row, kernel column, input channels, output channels, so that ``w[ky, kx]`` is
the ``D x N`` submatrix for one kernel position.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

from .errors import TopologyError


@dataclass(frozen=True)
class Conv2d:
    in_channels: int
    out_channels: int
    kernel: int = 3
    stride: int = 1
    padding: int = 1
    kind: str = field(default="conv", init=False)

    @property
    def weight_shape(self):
        return (self.kernel, self.kernel, self.in_channels, self.out_channels)

    @property
    def fan_in(self):
        return self.kernel * self.kernel * self.in_channels

    def output_shape(self, in_shape):
        c, h, w = in_shape
        if c != self.in_channels:
            raise TopologyError(f"conv expects {self.in_channels} channels, got {c}")
        ho = (h + 2 * self.padding - self.kernel) // self.stride + 1
        wo = (w + 2 * self.padding - self.kernel) // self.stride + 1
        if ho < 1 or wo < 1:
            raise TopologyError(f"conv output collapses for input {in_shape}")
        return (self.out_channels, ho, wo)


@dataclass(frozen=True)
class Linear:
    in_features: int
    out_features: int
    kind: str = field(default="fc", init=False)

    @property
    def weight_shape(self):
        return (self.in_features, self.out_features)

    @property
    def fan_in(self):
        return self.in_features

    def output_shape(self, in_shape):
        if len(in_shape) != 1 or in_shape[0] != self.in_features:
            raise TopologyError(f"fc expects ({self.in_features},), got {tuple(in_shape)}")
        return (self.out_features,)


@dataclass(frozen=True)
class MaxPool:
    size: int = 2
    kind: str = field(default="pool", init=False)

    def output_shape(self, in_shape):
        if len(in_shape) != 3:
            raise TopologyError("pooling expects a CHW input")
        c, h, w = in_shape
        if h % self.size or w % self.size:
            raise TopologyError(f"pool size {self.size} does not divide {h}x{w}")
        return (c, h // self.size, w // self.size)


@dataclass(frozen=True)
class ReLU:
    kind: str = field(default="relu", init=False)

    def output_shape(self, in_shape):
        return tuple(in_shape)


@dataclass(frozen=True)
class Flatten:
    kind: str = field(default="flatten", init=False)

    def output_shape(self, in_shape):
        n = 1
        for d in in_shape:
            n *= d
        return (n,)


LAYER_TYPES = {"conv": Conv2d, "fc": Linear, "pool": MaxPool, "relu": ReLU, "flatten": Flatten}


def is_weighted(layer) -> bool:
    return layer.kind in ("conv", "fc")


@dataclass
class NetworkTopology:
    layers: list
    input_shape: tuple
    weight_bits: int = 8
    activation_bits: int = 8
    error_bits: int = 8
    gradient_bits: int = 8
    name: str = "custom"

    def __post_init__(self):
        self.input_shape = tuple(self.input_shape)
        for key in ("weight_bits", "activation_bits", "error_bits", "gradient_bits"):
            if getattr(self, key) < 1:
                raise TopologyError(f"{key} must be >= 1")
        self.shapes()

    def shapes(self):
        """``[(in_shape, out_shape), ...]`` per layer; raises on mismatches."""
        out = []
        shape = self.input_shape
        for i, layer in enumerate(self.layers):
            try:
                nxt = layer.output_shape(shape)
            except TopologyError as exc:
                raise TopologyError(f"layer {i} ({layer.kind}): {exc}") from None
            out.append((shape, nxt))
            shape = nxt
        return out

    @property
    def output_shape(self):
        return self.shapes()[-1][1] if self.layers else self.input_shape

    def weighted(self):
        """``[(layer_index, layer, in_shape, out_shape)]`` for conv/fc layers."""
        return [(i, layer, s_in, s_out)
                for i, (layer, (s_in, s_out)) in enumerate(zip(self.layers, self.shapes()))
                if is_weighted(layer)]

    def to_dict(self) -> dict:
        layers = []
        for layer in self.layers:
            d = asdict(layer)
            layers.append({"type": d.pop("kind"), **d})
        return {
            "name": self.name, "input_shape": list(self.input_shape), "layers": layers,
            "weight_bits": self.weight_bits, "activation_bits": self.activation_bits,
            "error_bits": self.error_bits, "gradient_bits": self.gradient_bits,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkTopology":
        layers = []
        for i, rec in enumerate(d["layers"]):
            rec = dict(rec)
            kind = rec.pop("type", None)
            if kind not in LAYER_TYPES:
                raise TopologyError(f"layer {i}: unknown type {kind!r}")
            try:
                layers.append(LAYER_TYPES[kind](**rec))
            except TypeError as exc:
                raise TopologyError(f"layer {i}: {exc}") from None
        bits = {k: d[k] for k in ("weight_bits", "activation_bits", "error_bits", "gradient_bits") if k in d}
        return cls(layers=layers, input_shape=tuple(d["input_shape"]), name=d.get("name", "custom"), **bits)


def desk_cnn(input_shape=(1, 8, 8), num_classes=10, width=8, bits=8) -> NetworkTopology:
    """Six weighted layers (4 conv + 2 fc) sized for 8x8 images."""
    c, h, w = input_shape
    flat = 2 * width * (h // 4) * (w // 4)
    layers = [
        Conv2d(c, width), ReLU(),
        Conv2d(width, width), ReLU(), MaxPool(2),
        Conv2d(width, 2 * width), ReLU(),
        Conv2d(2 * width, 2 * width), ReLU(), MaxPool(2),
        Flatten(),
        Linear(flat, 32), ReLU(),
        Linear(32, num_classes),
    ]
    return NetworkTopology(layers, input_shape, bits, bits, bits, bits, name="desk_cnn")


def vgg8(num_classes=10, bits=8) -> NetworkTopology:
    """VGG-8 for 32x32x3 inputs (6 conv + 2 fc)."""
    layers = [
        Conv2d(3, 128), ReLU(), Conv2d(128, 128), ReLU(), MaxPool(2),
        Conv2d(128, 256), ReLU(), Conv2d(256, 256), ReLU(), MaxPool(2),
        Conv2d(256, 512), ReLU(), Conv2d(512, 512), ReLU(), MaxPool(2),
        Flatten(),
        Linear(8192, 1024), ReLU(),
        Linear(1024, num_classes),
    ]
    return NetworkTopology(layers, (3, 32, 32), bits, bits, bits, bits, name="vgg8")


BUILTIN_TOPOLOGIES = {"default": desk_cnn, "desk_cnn": desk_cnn, "vgg8": vgg8}
