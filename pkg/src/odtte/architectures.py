"""VGG, ResNet and squeeze-and-excitation blocks, the model builder and checkpoints.

A model maps a (B, 12, 1) feature tensor to a (B, 1) duration estimate:

    blocks (per depth summary) -> flatten -> dense head (ReLU) -> dense(1)

VGG blocks pool after the indices chosen by ``pool_placement``; ResNet blocks
never pool. With SE enabled every block carries one SE unit: before pooling
for VGG, before the skip aggregation for ResNet.
"""

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple, Union

import numpy as np

from .autograd import Parameter, Tensor, no_grad
from .errors import CheckpointError, ConfigurationError, ContractError, ShapeError
from .featurization import FEATURE_ORDER
from .layers import (
    Conv1dParams,
    DenseParams,
    channel_scale,
    conv1d,
    dense,
    flatten,
    global_avg_pool,
    maxpool1d,
    relu,
    sigmoid,
)
from .schema import FAMILIES, ModelSpec

# Channel widths per block for depths 3-10
DEPTH_SUMMARIES: Dict[int, Tuple[int, ...]] = {
    3: (64, 128, 256),
    4: (64, 128, 256, 512),
    5: (64, 128, 256, 512, 1024),
    6: (64, 128, 256, 256, 512, 1024),
    7: (64, 128, 256, 256, 512, 512, 1024),
    8: (64, 128, 128, 256, 256, 512, 512, 1024),
    9: (64, 64, 128, 128, 256, 256, 512, 512, 1024),
    10: (64, 64, 128, 128, 256, 256, 512, 512, 1024, 1024),
}

MLP_PRESETS: Dict[str, Tuple[int, ...]] = {
    "mlp-1": (50, 50),
    "mlp-2": (50, 50, 50, 50, 50),
}


def depth_summary(depth: int) -> Tuple[int, ...]:
    """Standard channel widths for a network with ``depth`` blocks (3-10)."""
    if depth not in DEPTH_SUMMARIES:
        raise ConfigurationError(f"no depth summary for depth {depth}; supported 3-10")
    return DEPTH_SUMMARIES[depth]


def preset_spec(
    name: str,
    head_widths: Sequence[int] = (50,),
    se_ratio: int = 16,
    se_bias: bool = True,
) -> ModelSpec:
    """Spec for a named preset: vgg-N, resnet-N, se-vgg-N, se-resnet-N, mlp-1, mlp-2."""
    key = name.lower()
    if key in MLP_PRESETS:
        return ModelSpec(family="mlp", widths=MLP_PRESETS[key])
    se = key.startswith("se-")
    body = key[3:] if se else key
    family, _, depth = body.partition("-")
    if family not in ("vgg", "resnet") or not depth.isdigit():
        raise ConfigurationError(f"unknown model preset: {name}")
    return ModelSpec(
        family=family,
        widths=depth_summary(int(depth)),
        se=se,
        se_ratio=se_ratio,
        se_bias=se_bias,
        head_widths=tuple(head_widths),
    )


def max_pools(length: int) -> int:
    """How many window-2 stride-2 pools fit before the length reaches 1."""
    count = 0
    while length >= 2:
        length //= 2
        count += 1
    return count


def pool_placement(num_blocks: int, num_pools: int) -> FrozenSet[int]:
    """1-based block indices followed by a pool, spread evenly, earliest first."""
    if num_pools < 1 or num_blocks < 1:
        raise ContractError("pool_placement needs num_blocks >= 1 and num_pools >= 1")
    if num_pools > num_blocks:
        raise ContractError(f"cannot place {num_pools} pools after {num_blocks} blocks")
    B, P = num_blocks, num_pools
    # ceil(a/b) == -(-a // b)
    return frozenset(i for i in range(1, B + 1) if -(-i * P // B) > -(-(i - 1) * P // B))


def validate_spec(spec: ModelSpec) -> None:
    """Raise ConfigurationError naming the first violated structural invariant."""
    if spec.family not in FAMILIES:
        raise ConfigurationError(f"family must be one of {FAMILIES}, got {spec.family!r}")
    if not spec.widths:
        raise ConfigurationError("widths must not be empty")
    if any(w < 1 for w in spec.widths):
        raise ConfigurationError(f"widths must be positive, got {spec.widths}")
    if spec.input_length < 1 or spec.input_channels < 1:
        raise ConfigurationError("input_length and input_channels must be >= 1")
    if spec.family == "mlp":
        if spec.se:
            raise ConfigurationError("SE units apply to convolutional families only")
        return
    if any(b < a for a, b in zip(spec.widths, spec.widths[1:])):
        raise ConfigurationError(f"depth summary must be non-decreasing, got {spec.widths}")
    if any(w < 1 for w in spec.head_widths):
        raise ConfigurationError(f"head widths must be positive, got {spec.head_widths}")
    if spec.se and spec.se_ratio < 1:
        raise ConfigurationError(f"se_ratio must be >= 1, got {spec.se_ratio}")
    if spec.family == "vgg" and max_pools(spec.input_length) < 1:
        raise ConfigurationError("VGG needs input_length >= 2 to pool")


def is_standard_summary(widths: Sequence[int]) -> bool:
    """3-10 non-decreasing powers of two within [64, 1024]."""
    return (
        3 <= len(widths) <= 10
        and all(64 <= w <= 1024 and w & (w - 1) == 0 for w in widths)
        and all(b >= a for a, b in zip(widths, widths[1:]))
    )


# ---------------------------------------------------------------------------
# Squeeze-and-excitation
# ---------------------------------------------------------------------------

@dataclass
class SEParams:
    """Bottleneck C -> max(1, C // r) -> C."""
    squeeze: DenseParams
    excite: DenseParams

    def __post_init__(self):
        if self.squeeze.n_out != self.excite.n_in or self.squeeze.n_in != self.excite.n_out:
            raise ShapeError("SE squeeze/excite weights do not form a bottleneck")

    @property
    def channels(self) -> int:
        return self.squeeze.n_in

    @classmethod
    def init(cls, channels: int, ratio: int, rng: np.random.Generator,
             bias: bool = True, name: str = "se") -> "SEParams":
        hidden = max(1, channels // ratio)
        return cls(
            DenseParams.init(channels, hidden, rng, bias=bias, name=f"{name}.squeeze"),
            DenseParams.init(hidden, channels, rng, bias=bias, name=f"{name}.excite"),
        )

    def parameters(self) -> List[Parameter]:
        return self.squeeze.parameters() + self.excite.parameters()


def se_unit(u: Tensor, p: SEParams) -> Tensor:
    """Rescale each channel of ``u`` by sigmoid(W2 relu(W1 mean_L(u)))."""
    if u.ndim != 3 or u.shape[2] != p.channels:
        raise ShapeError(f"SE unit for {p.channels} channels got input {u.shape}")
    s = global_avg_pool(u)
    e = sigmoid(dense(relu(dense(s, p.squeeze)), p.excite))
    return channel_scale(u, e)


# ---------------------------------------------------------------------------
# Blocks
# ---------------------------------------------------------------------------

@dataclass
class VGGBlockParams:
    conv1: Conv1dParams
    conv2: Conv1dParams
    pool: bool = False
    se: Optional[SEParams] = None

    @property
    def width(self) -> int:
        return self.conv2.out_channels

    def parameters(self) -> List[Parameter]:
        params = self.conv1.parameters() + self.conv2.parameters()
        if self.se is not None:
            params += self.se.parameters()
        return params


@dataclass
class ResNetBlockParams:
    """``projection`` is a 1x1 convolution, present only when channels change."""
    conv1: Conv1dParams
    conv2: Conv1dParams
    projection: Optional[Conv1dParams] = None
    se: Optional[SEParams] = None

    @property
    def width(self) -> int:
        return self.conv2.out_channels

    def parameters(self) -> List[Parameter]:
        params = self.conv1.parameters() + self.conv2.parameters()
        if self.projection is not None:
            params += self.projection.parameters()
        if self.se is not None:
            params += self.se.parameters()
        return params


BlockParams = Union[VGGBlockParams, ResNetBlockParams]


def vgg_block(x: Tensor, p: VGGBlockParams) -> Tensor:
    """conv -> ReLU -> conv -> ReLU -> [SE] -> [maxpool]."""
    h = relu(conv1d(relu(conv1d(x, p.conv1)), p.conv2))
    if p.se is not None:
        h = se_unit(h, p.se)
    if p.pool:
        h = maxpool1d(h)
    return h


def resnet_block(x: Tensor, p: ResNetBlockParams) -> Tensor:
    """ReLU([SE](conv(ReLU(conv(x)))) + skip(x))."""
    h = conv1d(relu(conv1d(x, p.conv1)), p.conv2)
    if p.se is not None:
        h = se_unit(h, p.se)
    if p.projection is not None:
        skip = conv1d(x, p.projection)
    elif x.shape[2] == p.width:
        skip = x
    else:
        raise ShapeError(f"identity skip needs {p.width} channels, input has {x.shape[2]}")
    return relu(h + skip)


def _build_blocks(spec: ModelSpec, rng: np.random.Generator) -> List[BlockParams]:
    blocks: List[BlockParams] = []
    pools = frozenset()
    if spec.family == "vgg":
        n_pools = min(max_pools(spec.input_length), len(spec.widths))
        pools = pool_placement(len(spec.widths), n_pools)

    c_in = spec.input_channels
    for i, width in enumerate(spec.widths, start=1):
        name = f"block{i}"
        conv1 = Conv1dParams.init(c_in, width, rng, name=f"{name}.conv1")
        conv2 = Conv1dParams.init(width, width, rng, name=f"{name}.conv2")
        se = (SEParams.init(width, spec.se_ratio, rng, bias=spec.se_bias, name=f"{name}.se")
              if spec.se else None)
        if spec.family == "vgg":
            blocks.append(VGGBlockParams(conv1, conv2, pool=i in pools, se=se))
        else:
            projection = (Conv1dParams.init(c_in, width, rng, kernel_size=1, name=f"{name}.projection")
                          if c_in != width else None)
            blocks.append(ResNetBlockParams(conv1, conv2, projection=projection, se=se))
        c_in = width
    return blocks


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------

class Model:
    """A built network: blocks, dense head and output layer."""

    def __init__(self, spec: ModelSpec, blocks: List[BlockParams], head: List[DenseParams]):
        self.spec = spec
        self.blocks = blocks
        self.head = head

    # -- structure -----------------------------------------------------------

    @property
    def pool_indices(self) -> FrozenSet[int]:
        return frozenset(i for i, b in enumerate(self.blocks, start=1)
                         if isinstance(b, VGGBlockParams) and b.pool)

    @property
    def trunk_shape(self) -> Tuple[int, int]:
        """(length, channels) of the last block output for one sample."""
        if self.spec.family == "mlp":
            return (1, self.spec.widths[-1])
        length = self.spec.input_length
        for _ in self.pool_indices:
            length //= 2
        return (length, self.spec.widths[-1])

    @property
    def flatten_dim(self) -> int:
        length, channels = self.trunk_shape
        return length * channels

    def parameters(self) -> List[Parameter]:
        """All trainable parameters in declaration order."""
        params: List[Parameter] = []
        for block in self.blocks:
            params += block.parameters()
        for layer in self.head:
            params += layer.parameters()
        return params

    def named_parameters(self) -> List[Tuple[str, Parameter]]:
        return [(p.name, p) for p in self.parameters()]

    def count_params(self) -> int:
        return count_params(self)

    # -- evaluation ----------------------------------------------------------

    def _as_input(self, x) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(x)
        expected = (self.spec.input_length, self.spec.input_channels)
        if x.ndim == 2 and x.shape[1] == expected[0] * expected[1]:
            x = x.reshape((x.shape[0],) + expected)
        if x.ndim != 3 or x.shape[1:] != expected:
            raise ShapeError(f"model expects input (B, {expected[0]}, {expected[1]}), got {x.shape}")
        return x

    def trunk(self, x) -> Tensor:
        """Flattened representation fed to the head; hidden stack output for MLPs."""
        x = self._as_input(x)
        if self.spec.family == "mlp":
            h = flatten(x)
            for layer in self.head[:-1]:
                h = relu(dense(h, layer))
            return h
        block_fn = vgg_block if self.spec.family == "vgg" else resnet_block
        for block in self.blocks:
            x = block_fn(x, block)
        return flatten(x)

    def forward(self, x) -> Tensor:
        """(B, 12) or (B, 12, 1) input -> (B, 1) estimate."""
        h = self.trunk(x)
        if self.spec.family != "mlp":
            for layer in self.head[:-1]:
                h = relu(dense(h, layer))
        return dense(h, self.head[-1])

    __call__ = forward

    def predict(self, features: np.ndarray, batch_size: int = 1024) -> np.ndarray:
        """Estimates for an (N, 12) feature matrix, evaluated without recording."""
        features = np.asarray(features, dtype=np.float64)
        out = np.empty(features.shape[0])
        with no_grad():
            for start in range(0, features.shape[0], batch_size):
                batch = features[start:start + batch_size]
                out[start:start + batch.shape[0]] = self.forward(batch).value.reshape(-1)
        return out

    def trunk_features(self, features: np.ndarray, batch_size: int = 1024) -> np.ndarray:
        """Flattened trunk outputs (N, F), evaluated without recording."""
        features = np.asarray(features, dtype=np.float64)
        chunks = []
        with no_grad():
            for start in range(0, features.shape[0], batch_size):
                chunks.append(self.trunk(features[start:start + batch_size]).value)
        if not chunks:
            return np.zeros((0, self.flatten_dim))
        return np.concatenate(chunks, axis=0)

    # -- state ---------------------------------------------------------------

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.value.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        for p in self.parameters():
            if p.name not in state:
                raise CheckpointError(f"missing parameter {p.name}")
            value = np.asarray(state[p.name], dtype=np.float64)
            if value.shape != p.value.shape:
                raise CheckpointError(f"parameter {p.name} has shape {value.shape}, expected {p.value.shape}")
            p.value = value.copy()

    def __repr__(self) -> str:
        return f"Model({self.spec.name}, params={count_params(self)})"


def build_model(spec: ModelSpec, seed: Union[int, np.random.Generator] = 0) -> Model:
    """Build and Glorot-initialize a model for ``spec``."""
    validate_spec(spec)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    n_in = spec.input_length * spec.input_channels

    if spec.family == "mlp":
        head = []
        for i, width in enumerate(spec.widths, start=1):
            head.append(DenseParams.init(n_in, width, rng, name=f"hidden{i}"))
            n_in = width
        head.append(DenseParams.init(n_in, 1, rng, name="output"))
        return Model(spec, [], head)

    blocks = _build_blocks(spec, rng)
    model = Model(spec, blocks, [])
    n_in = model.flatten_dim
    for i, width in enumerate(spec.head_widths, start=1):
        model.head.append(DenseParams.init(n_in, width, rng, name=f"head{i}"))
        n_in = width
    model.head.append(DenseParams.init(n_in, 1, rng, name="output"))
    return model


def count_params(model: Model) -> int:
    """Exact number of trainable weights and biases."""
    return int(sum(p.size for p in model.parameters()))


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"ODTTECKP"
CHECKPOINT_VERSION = 1
_U32 = struct.Struct("<I")


def save_checkpoint(model: Model, path: Path, feature_order: Sequence[str] = FEATURE_ORDER) -> None:
    """Magic, version, JSON header (spec, feature order, layout), then '<f8' arrays."""
    params = model.parameters()
    header = {
        "spec": model.spec.to_dict(),
        "feature_order": list(feature_order),
        "parameters": [{"name": p.name, "shape": list(p.shape)} for p in params],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(_U32.pack(CHECKPOINT_VERSION))
        f.write(_U32.pack(len(header_bytes)))
        f.write(header_bytes)
        for p in params:
            f.write(np.ascontiguousarray(p.value, dtype="<f8").tobytes())


def load_checkpoint(path: Path, feature_order: Sequence[str] = FEATURE_ORDER) -> Model:
    """Rebuild a model from a checkpoint written by ``save_checkpoint``."""
    try:
        blob = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from None

    prefix = len(CHECKPOINT_MAGIC)
    if len(blob) < prefix + 8 or blob[:prefix] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path} is not an odtte checkpoint")
    (version,) = _U32.unpack_from(blob, prefix)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (header_len,) = _U32.unpack_from(blob, prefix + 4)
    offset = prefix + 8
    try:
        header = json.loads(blob[offset:offset + header_len].decode("utf-8"))
        spec = ModelSpec.from_dict(header["spec"])
        layout = [(entry["name"], tuple(entry["shape"])) for entry in header["parameters"]]
    except (ValueError, KeyError, TypeError) as e:
        raise CheckpointError(f"corrupt checkpoint header: {e}") from None
    offset += header_len

    if list(header.get("feature_order", [])) != list(feature_order):
        raise CheckpointError("checkpoint was trained on a different feature order")

    expected = sum(math.prod(shape) for _, shape in layout) * 8
    if len(blob) - offset != expected:
        raise CheckpointError(f"checkpoint payload is {len(blob) - offset} bytes, expected {expected}")

    state: Dict[str, np.ndarray] = {}
    for name, shape in layout:
        count = math.prod(shape)
        state[name] = np.frombuffer(blob, dtype="<f8", count=count, offset=offset).reshape(shape).astype(np.float64)
        offset += count * 8

    try:
        model = build_model(spec, seed=0)
    except ConfigurationError as e:
        raise CheckpointError(f"checkpoint holds an invalid spec: {e}") from None
    model.load_state_dict(state)
    return model
