"""Learned scale-map network: a small U-Net producing values in (0,1).

The network multiplies the candidate restoration inside the demotion loss,
so everything here is expressed in autodiff ops — including the input
normalization — and the parameters are plain named float arrays kept
exactly float32-representable so the binary weight file round-trips
bit-for-bit.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .autodiff import (
    Tensor,
    as_tensor,
    clip,
    concat,
    conv2d,
    div,
    instance_norm2d,
    leaky_relu,
    max_all,
    reshape,
    sigmoid,
    upsample2_nearest,
)
from .errors import ConfigMismatchError, ContractViolationError, WeightFormatError

_MAGIC = b"DMPRIORW"
_FORMAT_VERSION = 1

# sigmoid saturates to exactly 0.0/1.0 in float64 past |x| ~ 36.7; the logit
# is clamped just inside so the map stays strictly inside (0, 1)
_LOGIT_LIMIT = 36.0

_NORM_FLOOR = 1e-12  # input peak guard: an all-zero image maps to zeros, not NaN


@dataclass(frozen=True)
class PriorNetConfig:
    """Architecture knobs; the parameter list is a pure function of these."""

    depth: int = 2
    base_channels: int = 16
    kernel_size: int = 3
    negative_slope: float = 0.01

    def __post_init__(self):
        if not isinstance(self.depth, int) or self.depth < 1:
            raise ContractViolationError(f"depth must be a positive int, got {self.depth}")
        if not isinstance(self.base_channels, int) or self.base_channels < 1:
            raise ContractViolationError(
                f"base_channels must be a positive int, got {self.base_channels}")
        if self.kernel_size % 2 != 1 or self.kernel_size < 1:
            raise ContractViolationError(
                f"kernel_size must be odd and positive, got {self.kernel_size}")
        if not 0.0 <= self.negative_slope < 1.0:
            raise ContractViolationError(
                f"negative_slope must be in [0, 1), got {self.negative_slope}")


def parameter_shapes(cfg: PriorNetConfig) -> dict:
    """Ordered name -> shape map for every tensor the network owns.

    Layout: stem block, ``depth`` stride-2 encoder blocks, then for each
    level back up a nearest-upsample + conv block and a skip-fusion block,
    and finally the 1-channel head.  Every block is conv + instance norm
    (affine) + leaky-ReLU.
    """
    k = cfg.kernel_size
    chans = [cfg.base_channels * (1 << i) for i in range(cfg.depth + 1)]

    def block(name, c_in, c_out):
        return {
            f"{name}.conv.w": (c_out, c_in, k, k),
            f"{name}.conv.b": (c_out,),
            f"{name}.norm.g": (c_out,),
            f"{name}.norm.b": (c_out,),
        }

    shapes = {}
    shapes.update(block("stem", 1, chans[0]))
    for i in range(cfg.depth):
        shapes.update(block(f"down{i}", chans[i], chans[i + 1]))
    for i in reversed(range(cfg.depth)):
        shapes.update(block(f"up{i}", chans[i + 1], chans[i]))
        shapes.update(block(f"fuse{i}", 2 * chans[i], chans[i]))
    shapes["head.w"] = (1, chans[0], k, k)
    shapes["head.b"] = (1,)
    return shapes


def parameter_count(cfg: PriorNetConfig) -> int:
    return sum(int(np.prod(s)) for s in parameter_shapes(cfg).values())


def _f32_exact(arr: np.ndarray) -> np.ndarray:
    # weights live in float64 compute but must survive the f32 weight file
    return arr.astype(np.float32).astype(np.float64)


def init_params(cfg: PriorNetConfig, seed: int = 0) -> dict:
    """Kaiming-uniform (fan-in, leaky-ReLU gain) kernels, zero biases.

    Norm gains start at 1 and shifts at 0.  Identical seeds give identical
    parameter sets; values are float32-representable from the start.
    """
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in parameter_shapes(cfg).items():
        if name.endswith("conv.w") or name == "head.w":
            fan_in = int(np.prod(shape[1:]))
            bound = np.sqrt(6.0 / ((1.0 + cfg.negative_slope ** 2) * fan_in))
            params[name] = _f32_exact(rng.uniform(-bound, bound, shape))
        elif name.endswith("norm.g"):
            params[name] = np.ones(shape)
        else:  # conv/head biases and norm shifts
            params[name] = np.zeros(shape)
    return params


def neutral_head(params: dict) -> dict:
    """Zero the output layer so the scale map starts at a constant 0.5.

    A freshly drawn head emits a high-variance random map that actively
    misleads the trajectory search until training flattens it, which small
    runs never finish doing.  With the head at zero the map is exactly
    sigmoid(0) everywhere and carries zero input gradient, so a prior-guided
    search starts out step-for-step equivalent to the plain one and training
    can only bend the map in directions the unrolled loss rewards.  Returns
    the same dict for chaining; hidden layers keep their Kaiming draws.
    """
    params["head.w"] = np.zeros_like(params["head.w"])
    params["head.b"] = np.zeros_like(params["head.b"])
    return params


def apply_net(cfg: PriorNetConfig, params, x) -> Tensor:
    """Run the network on a (B, 1, H, W) tensor; output has the same shape.

    ``params`` maps names to Tensors (or arrays); pass leaves with
    ``requires_grad`` to obtain weight gradients through the caller's loss.
    """
    x = as_tensor(x)
    if x.data.ndim != 4 or x.data.shape[1] != 1:
        raise ContractViolationError(
            f"expected input shape (B, 1, H, W), got {x.data.shape}")
    height, width = x.data.shape[2:]
    stride_total = 1 << cfg.depth
    if height % stride_total or width % stride_total:
        raise ContractViolationError(
            f"spatial size {height}x{width} not divisible by 2^depth = {stride_total}")

    pad = cfg.kernel_size // 2

    def block(t, name, stride=1):
        t = conv2d(t, params[f"{name}.conv.w"], params[f"{name}.conv.b"],
                   stride=stride, pad=pad)
        t = instance_norm2d(t, params[f"{name}.norm.g"], params[f"{name}.norm.b"])
        return leaky_relu(t, cfg.negative_slope)

    t = block(x, "stem")
    skips = []
    for i in range(cfg.depth):
        skips.append(t)
        t = block(t, f"down{i}", stride=2)
    for i in reversed(range(cfg.depth)):
        t = block(upsample2_nearest(t), f"up{i}")
        t = block(concat([t, skips[i]], axis=1), f"fuse{i}")
    logits = conv2d(t, params["head.w"], params["head.b"], pad=pad)
    return sigmoid(clip(logits, -_LOGIT_LIMIT, _LOGIT_LIMIT))


def scale_map_graph(cfg: PriorNetConfig, params, mag: Tensor) -> Tensor:
    """(H, W) magnitude -> (H, W) scale map in (0,1), all in graph ops.

    The peak normalization stays inside the graph so its derivative chains;
    an all-zero image maps to zeros instead of NaN via the peak floor.
    """
    height, width = mag.data.shape
    peak = clip(max_all(mag), _NORM_FLOOR, None)
    xin = reshape(div(mag, peak), (1, 1, height, width))
    return reshape(apply_net(cfg, params, xin), (height, width))


class PriorNet:
    """Named-parameter container plus the forward pass and prior interface."""

    def __init__(self, config: PriorNetConfig, params: dict):
        expected = parameter_shapes(config)
        if list(params) != list(expected):
            raise ContractViolationError("parameter names do not match the config layout")
        for name, arr in params.items():
            if arr.shape != expected[name]:
                raise ContractViolationError(
                    f"parameter {name} has shape {arr.shape}, expected {expected[name]}")
            if not np.all(np.isfinite(arr)):
                raise ContractViolationError(f"parameter {name} has non-finite values")
        self.config = config
        self.params = {name: np.asarray(arr, dtype=np.float64) for name, arr in params.items()}

    @classmethod
    def init(cls, config: PriorNetConfig = PriorNetConfig(), seed: int = 0) -> "PriorNet":
        return cls(config, init_params(config, seed))

    @property
    def n_parameters(self) -> int:
        return parameter_count(self.config)

    def param_tensors(self, requires_grad: bool = False) -> dict:
        return {name: Tensor(arr, requires_grad=requires_grad)
                for name, arr in self.params.items()}

    def forward(self, x) -> Tensor:
        return apply_net(self.config, self.param_tensors(), x)

    def scale_map(self, mag: Tensor) -> Tensor:
        """Prior interface used by the demotion loop (weights as constants)."""
        return scale_map_graph(self.config, self.param_tensors(), mag)


# ---------------------------------------------------------------------------
# Weight file: little-endian binary, magic + version + config + named tensors
# ---------------------------------------------------------------------------

def save_weights(net: PriorNet, path) -> None:
    cfg = net.config
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", _FORMAT_VERSION))
        f.write(struct.pack("<III", cfg.depth, cfg.base_channels, cfg.kernel_size))
        f.write(struct.pack("<d", cfg.negative_slope))
        f.write(struct.pack("<I", len(net.params)))
        for name, arr in net.params.items():
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_exact(f, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise WeightFormatError(f"truncated weight file: expected {n} bytes for {what}")
    return buf


def load_weights(path, expected_config: PriorNetConfig = None) -> PriorNet:
    """Read a weight file; verify layout, optionally enforce a config."""
    with open(path, "rb") as f:
        if _read_exact(f, len(_MAGIC), "magic") != _MAGIC:
            raise WeightFormatError("not a prior weight file (bad magic)")
        (version,) = struct.unpack("<I", _read_exact(f, 4, "format version"))
        if version != _FORMAT_VERSION:
            raise WeightFormatError(
                f"unsupported weight format version {version} (expected {_FORMAT_VERSION})")
        depth, base_channels, kernel_size = struct.unpack(
            "<III", _read_exact(f, 12, "config block"))
        (negative_slope,) = struct.unpack("<d", _read_exact(f, 8, "config block"))
        try:
            cfg = PriorNetConfig(depth, base_channels, kernel_size, negative_slope)
        except ContractViolationError as exc:
            raise WeightFormatError(f"invalid config in weight file: {exc}") from exc
        if expected_config is not None and cfg != expected_config:
            raise ConfigMismatchError(
                f"weight file config {cfg} does not match expected {expected_config}")

        (n_tensors,) = struct.unpack("<I", _read_exact(f, 4, "tensor count"))
        params = {}
        for _ in range(n_tensors):
            (name_len,) = struct.unpack("<I", _read_exact(f, 4, "name length"))
            name = _read_exact(f, name_len, "tensor name").decode("utf-8")
            if name in params:
                raise WeightFormatError(f"duplicate tensor {name} in weight file")
            (rank,) = struct.unpack("<I", _read_exact(f, 4, "tensor rank"))
            dims = struct.unpack(f"<{rank}I", _read_exact(f, 4 * rank, "tensor dims"))
            count = int(np.prod(dims)) if rank else 1
            raw = _read_exact(f, 4 * count, f"tensor {name} data")
            params[name] = np.frombuffer(raw, dtype="<f4").reshape(dims).astype(np.float64)
        if f.read(1):
            raise WeightFormatError("trailing bytes after last tensor")

    try:
        return PriorNet(cfg, params)
    except ContractViolationError as exc:
        raise WeightFormatError(f"weight file layout mismatch: {exc}") from exc
