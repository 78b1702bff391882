"""Type-conditioned recognition network.

Column pipeline: conv stack (3x3, ReLU, pools) -> per-column feature vector
(channels x remaining height, channel-major) -> optional one-hot content
type concatenated to every column -> bidirectional LSTM layer(s) -> affine
projection to per-column class scores. The CTC blank is the last class.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..ctc import LogitSequence, ctc_loss
from ..errors import ConfigurationError
from ..formset import Batch, INPUT_HEIGHT
from ..imaging import GrayImage
from ..rng import SeedStream
from ..typedgen import ContentType
from . import nn

VALID_POOLS = ((2, 2), (2, 1))


@dataclass(frozen=True)
class ArchConfig:
    """Network shape. conv_layers entries are (out_channels, use_batchnorm)."""

    conv_layers: tuple[tuple[int, bool], ...] = ((8, False), (16, False))
    pool_schedule: tuple[tuple[int, int], ...] = ((2, 2), (2, 1))
    pool_positions: tuple[int, ...] | None = None
    recurrent_hidden: int = 32
    recurrent_layers: int = 1
    num_types: int = 10
    num_classes: int = 70
    type_input_enabled: bool = True

    def __post_init__(self):
        if not self.conv_layers:
            raise ConfigurationError("need at least one conv layer")
        for pool in self.pool_schedule:
            if tuple(pool) not in VALID_POOLS:
                raise ConfigurationError(f"pool {pool} must be 2x2 or 2x1")
        if len(self.pool_schedule) > 2 and not any(
            tuple(p) == (2, 1) for p in self.pool_schedule
        ):
            raise ConfigurationError(
                "more than two pools requires at least one 2x1 (vertical-only) pool"
            )
        positions = self.pool_positions
        if positions is None:
            positions = tuple(range(len(self.pool_schedule)))
            object.__setattr__(self, "pool_positions", positions)
        if len(positions) != len(self.pool_schedule):
            raise ConfigurationError("pool_positions must match pool_schedule length")
        if list(positions) != sorted(set(positions)) or any(
            p >= len(self.conv_layers) or p < 0 for p in positions
        ):
            raise ConfigurationError(f"invalid pool positions {positions}")
        if INPUT_HEIGHT % self.vertical_factor or INPUT_HEIGHT // self.vertical_factor < 1:
            raise ConfigurationError(
                f"vertical pool factor {self.vertical_factor} does not divide height {INPUT_HEIGHT}"
            )
        if self.recurrent_hidden < 1 or self.recurrent_layers < 1:
            raise ConfigurationError("recurrent_hidden and recurrent_layers must be >= 1")
        if self.num_classes < 2:
            raise ConfigurationError("num_classes must be >= 2 (one symbol plus blank)")

    @property
    def vertical_factor(self) -> int:
        return math.prod(p[0] for p in self.pool_schedule)

    @property
    def horizontal_factor(self) -> int:
        return math.prod(p[1] for p in self.pool_schedule)

    @property
    def feature_height(self) -> int:
        return INPUT_HEIGHT // self.vertical_factor

    @property
    def column_feature_dim(self) -> int:
        base = self.conv_layers[-1][0] * self.feature_height
        return base + (self.num_types if self.type_input_enabled else 0)

    def to_json_dict(self) -> dict:
        return {
            "conv_layers": [[c, bn] for c, bn in self.conv_layers],
            "pool_schedule": [list(p) for p in self.pool_schedule],
            "pool_positions": list(self.pool_positions),
            "recurrent_hidden": self.recurrent_hidden,
            "recurrent_layers": self.recurrent_layers,
            "num_types": self.num_types,
            "num_classes": self.num_classes,
            "type_input_enabled": self.type_input_enabled,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "ArchConfig":
        try:
            return cls(
                conv_layers=tuple((int(c), bool(bn)) for c, bn in data["conv_layers"]),
                pool_schedule=tuple((int(a), int(b)) for a, b in data["pool_schedule"]),
                pool_positions=tuple(int(p) for p in data["pool_positions"]),
                recurrent_hidden=int(data["recurrent_hidden"]),
                recurrent_layers=int(data["recurrent_layers"]),
                num_types=int(data["num_types"]),
                num_classes=int(data["num_classes"]),
                type_input_enabled=bool(data["type_input_enabled"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigurationError(f"malformed arch config: {exc}") from exc

    @classmethod
    def desk_default(cls, num_classes: int = 70, type_input_enabled: bool = True) -> "ArchConfig":
        return cls(num_classes=num_classes, type_input_enabled=type_input_enabled)

    @classmethod
    def paper_scale(cls, num_classes: int = 70, type_input_enabled: bool = True) -> "ArchConfig":
        """Full-size variant: 7 convs, 3 BN layers, 4 pools, 2 bi-LSTM x 256."""
        return cls(
            conv_layers=(
                (64, False),
                (64, True),
                (128, False),
                (128, True),
                (256, False),
                (256, True),
                (512, False),
            ),
            pool_schedule=((2, 2), (2, 2), (2, 1), (2, 1)),
            pool_positions=(0, 1, 3, 5),
            recurrent_hidden=256,
            recurrent_layers=2,
            num_classes=num_classes,
            type_input_enabled=type_input_enabled,
        )


_BUFFER_SUFFIXES = ("_mean", "_var")


class ModelParams:
    """Named tensor collection; batchnorm running stats are buffers, the
    rest are trainable."""

    def __init__(self, tensors: dict[str, np.ndarray]):
        self.tensors = tensors

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        self.tensors[name] = value

    def trainable_names(self) -> list[str]:
        return [n for n in self.tensors if not n.endswith(_BUFFER_SUFFIXES)]

    def copy(self) -> "ModelParams":
        return ModelParams({n: t.copy() for n, t in self.tensors.items()})

    def all_finite(self) -> bool:
        return all(np.isfinite(t).all() for t in self.tensors.values())


def _uniform(rng, shape, limit: float) -> np.ndarray:
    n = int(np.prod(shape))
    return (2.0 * rng.random_array(n) - 1.0).reshape(shape) * limit


def init_params(arch: ArchConfig, seed: int) -> ModelParams:
    """Deterministic initialization.

    Conv kernels and the projection use uniform(+-sqrt(6/fan_in)); LSTM
    matrices use uniform(+-sqrt(1/fan_in)); biases start at zero except LSTM
    forget gates at one. Tensors are drawn in construction order from a
    single stream, so a seed pins every value.
    """
    rng = SeedStream(seed).rng()
    tensors: dict[str, np.ndarray] = {}
    in_ch = 1
    for i, (out_ch, use_bn) in enumerate(arch.conv_layers, start=1):
        fan_in = in_ch * 9
        tensors[f"conv{i}_w"] = _uniform(rng, (out_ch, in_ch, 3, 3), math.sqrt(6.0 / fan_in))
        tensors[f"conv{i}_b"] = np.zeros(out_ch)
        if use_bn:
            tensors[f"bn{i}_gamma"] = np.ones(out_ch)
            tensors[f"bn{i}_beta"] = np.zeros(out_ch)
            tensors[f"bn{i}_mean"] = np.zeros(out_ch)
            tensors[f"bn{i}_var"] = np.ones(out_ch)
        in_ch = out_ch

    input_dim = arch.column_feature_dim
    hidden = arch.recurrent_hidden
    for layer in range(1, arch.recurrent_layers + 1):
        for direction in ("fw", "bw"):
            prefix = f"lstm{layer}_{direction}"
            tensors[f"{prefix}_wx"] = _uniform(
                rng, (4 * hidden, input_dim), math.sqrt(1.0 / input_dim)
            )
            tensors[f"{prefix}_wh"] = _uniform(rng, (4 * hidden, hidden), math.sqrt(1.0 / hidden))
            bias = np.zeros(4 * hidden)
            bias[hidden : 2 * hidden] = 1.0
            tensors[f"{prefix}_b"] = bias
        input_dim = 2 * hidden

    tensors["proj_w"] = _uniform(
        rng, (arch.num_classes, 2 * hidden), math.sqrt(6.0 / (2 * hidden))
    )
    tensors["proj_b"] = np.zeros(arch.num_classes)
    return ModelParams(tensors)


def type_onehot(ctype: ContentType, num_types: int = 10) -> np.ndarray:
    vec = np.zeros(num_types)
    vec[int(ctype)] = 1.0
    return vec


def images_to_tensor(images: list[GrayImage]) -> np.ndarray:
    """Stack equal-size images into (N, H, W) with ink=1.0, background=0.0."""
    return np.stack([(255.0 - img.pixels.astype(np.float64)) / 255.0 for img in images])


# ---------------------------------------------------------------------------
# Forward / backward through the whole stack
# ---------------------------------------------------------------------------


def forward_batch(
    params: ModelParams,
    arch: ArchConfig,
    images: np.ndarray,
    types: np.ndarray | None,
    train: bool = False,
):
    """Run the network on (N, 32, W) normalized images.

    `types` is an (N, num_types) one-hot matrix; it is required when the
    architecture has the type input enabled and ignored (never read) when
    disabled. In training mode batchnorm uses batch statistics and updates
    the running buffers in place. Returns (logits (N, T, S), cache).
    """
    n, h, w = images.shape
    if h != INPUT_HEIGHT:
        raise ConfigurationError(f"input height must be {INPUT_HEIGHT}, got {h}")
    if w % arch.horizontal_factor:
        raise ConfigurationError(
            f"input width {w} not divisible by horizontal pool factor {arch.horizontal_factor}"
        )
    if arch.type_input_enabled:
        if types is None:
            raise ConfigurationError("this architecture requires a content-type input")
        types = np.asarray(types, dtype=np.float64)
        if types.shape != (n, arch.num_types):
            raise ConfigurationError(
                f"type input shape {types.shape} != {(n, arch.num_types)}"
            )

    x = images[:, None, :, :]
    pool_at = {pos: tuple(p) for pos, p in zip(arch.pool_positions, arch.pool_schedule)}
    conv_caches = []
    for i, (out_ch, use_bn) in enumerate(arch.conv_layers):
        x, conv_cache = nn.conv2d_forward(x, params[f"conv{i + 1}_w"], params[f"conv{i + 1}_b"])
        bn_cache = None
        if use_bn:
            x, bn_cache, new_mean, new_var = nn.batchnorm_forward(
                x,
                params[f"bn{i + 1}_gamma"],
                params[f"bn{i + 1}_beta"],
                params[f"bn{i + 1}_mean"],
                params[f"bn{i + 1}_var"],
                train,
            )
            if train:
                params[f"bn{i + 1}_mean"] = new_mean
                params[f"bn{i + 1}_var"] = new_var
        x, relu_mask = nn.relu_forward(x)
        pool_cache = None
        if i in pool_at:
            x, pool_cache = nn.maxpool_forward(x, pool_at[i])
        conv_caches.append((conv_cache, bn_cache, relu_mask, pool_cache))

    n_, c_f, h_f, w_f = x.shape
    columns = x.transpose(0, 3, 1, 2).reshape(n_, w_f, c_f * h_f)
    if arch.type_input_enabled:
        tiled = np.repeat(types[:, None, :], w_f, axis=1)
        rnn_in = np.concatenate([columns, tiled], axis=2)
    else:
        rnn_in = columns

    rnn_caches = []
    seq = rnn_in
    for layer in range(1, arch.recurrent_layers + 1):
        fw, fw_cache = nn.lstm_forward(
            seq, params[f"lstm{layer}_fw_wx"], params[f"lstm{layer}_fw_wh"], params[f"lstm{layer}_fw_b"]
        )
        bw_rev, bw_cache = nn.lstm_forward(
            seq[:, ::-1],
            params[f"lstm{layer}_bw_wx"],
            params[f"lstm{layer}_bw_wh"],
            params[f"lstm{layer}_bw_b"],
        )
        seq = np.concatenate([fw, bw_rev[:, ::-1]], axis=2)
        rnn_caches.append((fw_cache, bw_cache))

    logits, proj_cache = nn.linear_forward(seq, params["proj_w"], params["proj_b"])
    cache = {
        "arch": arch,
        "conv_caches": conv_caches,
        "feature_shape": (n_, c_f, h_f, w_f),
        "rnn_caches": rnn_caches,
        "rnn_out": seq,
        "proj_cache": proj_cache,
    }
    return logits, cache


def backward_batch(params: ModelParams, cache: dict, dlogits: np.ndarray) -> dict[str, np.ndarray]:
    """Exact reverse-mode gradients for every trainable tensor."""
    arch: ArchConfig = cache["arch"]
    grads: dict[str, np.ndarray] = {}

    dseq, grads["proj_w"], grads["proj_b"] = nn.linear_backward(dlogits, cache["proj_cache"])

    for layer in range(arch.recurrent_layers, 0, -1):
        fw_cache, bw_cache = cache["rnn_caches"][layer - 1]
        hidden = arch.recurrent_hidden
        dfw = dseq[:, :, :hidden]
        dbw = dseq[:, :, hidden:]
        dx_fw, dwx, dwh, db = nn.lstm_backward(dfw, fw_cache)
        grads[f"lstm{layer}_fw_wx"] = dwx
        grads[f"lstm{layer}_fw_wh"] = dwh
        grads[f"lstm{layer}_fw_b"] = db
        dx_bw_rev, dwx, dwh, db = nn.lstm_backward(np.ascontiguousarray(dbw[:, ::-1]), bw_cache)
        grads[f"lstm{layer}_bw_wx"] = dwx
        grads[f"lstm{layer}_bw_wh"] = dwh
        grads[f"lstm{layer}_bw_b"] = db
        dseq = dx_fw + dx_bw_rev[:, ::-1]

    n, c_f, h_f, w_f = cache["feature_shape"]
    dcolumns = dseq[:, :, : c_f * h_f]  # type one-hot receives no gradient
    dx = dcolumns.reshape(n, w_f, c_f, h_f).transpose(0, 2, 3, 1)
    dx = np.ascontiguousarray(dx)

    for i in range(len(arch.conv_layers) - 1, -1, -1):
        conv_cache, bn_cache, relu_mask, pool_cache = cache["conv_caches"][i]
        if pool_cache is not None:
            dx = nn.maxpool_backward(dx, pool_cache)
        dx = nn.relu_backward(dx, relu_mask)
        if bn_cache is not None:
            dx, dgamma, dbeta = nn.batchnorm_backward(dx, bn_cache)
            grads[f"bn{i + 1}_gamma"] = dgamma
            grads[f"bn{i + 1}_beta"] = dbeta
        dx, dw, db = nn.conv2d_backward(dx, conv_cache)
        grads[f"conv{i + 1}_w"] = dw
        grads[f"conv{i + 1}_b"] = db
    return grads


def forward(
    params: ModelParams,
    arch: ArchConfig,
    img: GrayImage,
    ctype: "ContentType | np.ndarray | None" = None,
) -> LogitSequence:
    """Single-sample inference returning the T x S logit matrix.

    A supplied ctype is ignored when the architecture's type input is
    disabled (the ablation contract: the value is never read).
    """
    types = None
    if arch.type_input_enabled:
        if ctype is None:
            raise ConfigurationError("typed architecture needs a content type for inference")
        vec = type_onehot(ctype, arch.num_types) if isinstance(ctype, ContentType) else np.asarray(ctype, dtype=np.float64)
        types = vec[None, :]
    logits, _ = forward_batch(params, arch, images_to_tensor([img]), types, train=False)
    return LogitSequence(logits[0])


def valid_columns(width: int, arch: ArchConfig, total_columns: int) -> int:
    """Columns carrying signal for an image of pre-padding width `width`."""
    return min(total_columns, -(-width // arch.horizontal_factor))


def loss_and_grads(
    params: ModelParams, arch: ArchConfig, batch: Batch
) -> tuple[float, dict[str, np.ndarray], list[float]]:
    """Mean CTC loss over the batch and gradients for all trainable tensors.

    Columns beyond each sample's valid width are masked: they contribute
    neither to the loss nor to any gradient.
    """
    images = images_to_tensor(batch.images)
    types = None
    if arch.type_input_enabled:
        types = np.stack([type_onehot(t, arch.num_types) for t in batch.types])
    logits, cache = forward_batch(params, arch, images, types, train=True)
    n, t_cols, _ = logits.shape

    dlogits = np.zeros_like(logits)
    losses = []
    for k in range(n):
        v = valid_columns(batch.widths[k], arch, t_cols)
        loss_k, grad_k = ctc_loss(logits[k, :v], batch.labels[k])
        losses.append(loss_k)
        dlogits[k, :v] = grad_k / n
    grads = backward_batch(params, cache, dlogits)
    return float(np.mean(losses)), grads, losses
