"""The classification network over polar layer stacks.

Pipeline: a spatial extension stem maps the 3-layer stack to a thicker
volume (per-pixel linear map to ``extended_depth`` slices, then a 3-D
conv + ReLU); multi-view stages alternate residual 3-D conv blocks with
a sequencer block (bidirectional LSTM sweeps along radius, angle and
depth, fused pointwise, inside pre-norm residual sums); region readout
averages the final volume into 24 layer-sector nodes; the region graph
module turns those into logits.

Conventions fixed here: feature volumes are [B, C, D, H, W] with H the
angle axis and W the radius axis; convolutions pad the angle axis
cyclically (polar topology) and everything else with zeros; "norm"
inside blocks is layer normalization over the channel axis; the depth
axis is split into 3 near-equal contiguous groups which the readout
treats as the SVC/DVC/CC-aligned layer groups.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from . import etdrs, graph
from . import tensor as T
from .errors import ConfigError, DomainError, ShapeError
from .tensor import LstmWeights, Tensor

AXES = ("radius", "angle", "depth")


@dataclass(frozen=True)
class ModelConfig:
    preset: str = "tiny"
    in_layers: int = 3
    extended_depth: int = 8
    stem_channels: int = 4
    stage_channels: tuple = (8, 16)
    res3d_repeats: int = 2  # t1
    lstm_hidden: tuple = (4, 4, 4)  # per sweep axis (radius, angle, depth)
    mlp_ratio: int = 2
    n_classes: int = 2
    input_hw: tuple = (64, 64)  # (H_p angle, W_p radius)
    clusters: int = 6
    knn: int = 8
    tau: float = 0.5

    @property
    def multiview_repeats(self) -> int:  # t2
        return len(self.stage_channels)

    @property
    def node_feature_dim(self) -> int:
        return self.stage_channels[-1]

    @property
    def feature_hw(self) -> tuple:
        h, w = self.input_hw
        s = 2 ** self.multiview_repeats
        return (h // s, w // s)

    def validate(self) -> None:
        if self.extended_depth < self.in_layers:
            raise ConfigError("extended_depth must be >= the number of input layers")
        if self.extended_depth < 3:
            raise ConfigError("depth must allow 3 contiguous layer groups")
        if self.res3d_repeats < 1 or self.multiview_repeats < 1:
            raise ConfigError("t1 and t2 must be positive")
        h, w = self.input_hw
        s = 2 ** self.multiview_repeats
        if h % s or w % s:
            raise ConfigError(f"input {self.input_hw} not divisible by the {s}x downsampling")

    def to_flat(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f"config.{f.name}"] = ",".join(str(x) for x in v) if isinstance(v, tuple) else str(v)
        return out

    @staticmethod
    def from_flat(kv: dict) -> "ModelConfig":
        def parse(f, raw):
            if f.type == "tuple" or isinstance(f.default, tuple):
                return tuple(int(x) for x in raw.split(","))
            return type(f.default)(raw)

        kwargs = {}
        for f in fields(ModelConfig):
            key = f"config.{f.name}"
            if key in kv:
                kwargs[f.name] = parse(f, kv[key])
        return ModelConfig(**kwargs)


PRESETS = {
    "micro": ModelConfig(
        preset="micro",
        extended_depth=4,
        stem_channels=2,
        stage_channels=(2,),
        res3d_repeats=1,
        lstm_hidden=(2, 2, 2),
        mlp_ratio=1,
        input_hw=(8, 8),
        clusters=2,
        knn=23,  # complete graph: 2-D node features can disconnect a kNN graph
    ),
    "tiny": ModelConfig(preset="tiny"),
    "paper": ModelConfig(
        preset="paper",
        stem_channels=36,
        stage_channels=(72, 144),
        lstm_hidden=(36, 36, 36),
        mlp_ratio=3,
        input_hw=(448, 224),
    ),
}


def preset_config(name: str) -> ModelConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown model preset '{name}'") from None


@dataclass
class ImageStack:
    """Three polar layers (SVC, DVC, CC) sharing one transform geometry."""

    volume: np.ndarray  # [3, H_p, W_p]
    spec: object = None  # the polar TransformSpec, when known

    def __post_init__(self):
        if self.volume.ndim != 3 or self.volume.shape[0] != 3:
            raise ShapeError(f"image stack must be [3, H, W], got {self.volume.shape}")


@dataclass
class VolumeFeatures:
    tensor: Tensor  # [B, C, D, H, W]
    stage: str


@dataclass
class ForwardResult:
    logits: Tensor  # [B, n_classes]
    nodes: Tensor  # [B, 24, F]
    adjacency: list  # per-sample pre-pooling 24x24 Tensors
    cut_loss: Tensor  # [B]
    ortho_loss: Tensor  # [B]
    gap_loss: Tensor  # [B]
    activations: dict  # stage name -> Tensor, gradient-capturable


# ---------------------------------------------------------------------------
# parameter initialisation helpers
# ---------------------------------------------------------------------------


def _he(rng, shape, fan_in, dtype):
    return Tensor(
        (rng.normal(size=shape) * np.sqrt(2.0 / fan_in)).astype(dtype), requires_grad=True
    )


def _glorot(rng, nin, nout, dtype):
    bound = np.sqrt(6.0 / (nin + nout))
    return Tensor(rng.uniform(-bound, bound, size=(nin, nout)).astype(dtype), requires_grad=True)


def _zeros(shape, dtype):
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


def _ones(shape, dtype):
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=True)


def _lstm_weights(rng, d, h, dtype):
    bound = 1.0 / np.sqrt(h)
    w = LstmWeights(
        Tensor(rng.uniform(-bound, bound, size=(4 * h, d)).astype(dtype), requires_grad=True),
        Tensor(rng.uniform(-bound, bound, size=(4 * h, h)).astype(dtype), requires_grad=True),
        Tensor(rng.uniform(-bound, bound, size=(4 * h,)).astype(dtype), requires_grad=True),
    )
    w.b.data[h : 2 * h] = 1.0  # open forget gate at init
    return w


class Linear:
    def __init__(self, rng, nin, nout, dtype):
        self.w = _glorot(rng, nin, nout, dtype)
        self.b = _zeros((nout,), dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return T.linear(x, self.w, self.b)

    def named(self, prefix):
        return {f"{prefix}.w": self.w, f"{prefix}.b": self.b}


class Conv3d:
    """3^3 (or 1^3) convolution with cyclic padding on the angle axis."""

    def __init__(self, rng, cin, cout, dtype, kernel=3, stride=(1, 1, 1)):
        self.kernel = kernel
        self.stride = stride
        self.k = _he(rng, (cout, cin, kernel, kernel, kernel), cin * kernel**3, dtype)
        self.b = _zeros((cout,), dtype)

    def __call__(self, x: Tensor) -> Tensor:
        if self.kernel == 1:
            out = T.conv3d(x, self.k, stride=self.stride, pad=(0, 0, 0))
        else:
            wrapped = T.concat([x[:, :, :, -1:, :], x, x[:, :, :, :1, :]], axis=3)
            out = T.conv3d(wrapped, self.k, stride=self.stride, pad=(1, 0, 1))
        return out + T.reshape(self.b, (1, self.b.shape[0], 1, 1, 1))

    def named(self, prefix):
        return {f"{prefix}.k": self.k, f"{prefix}.b": self.b}


class VolumeNorm:
    """Normalize each channel over its (D, H, W) positions, then apply a
    per-channel learned scale and shift.

    Normalizing across positions keeps the statistics well conditioned
    at any channel count (a 2-entry channel-axis norm degenerates into a
    sign function).
    """

    def __init__(self, channels, dtype):
        self.channels = channels
        self.dtype = dtype
        self.gain = _ones((channels,), dtype)
        self.bias = _zeros((channels,), dtype)
        self._units: dict[int, tuple[Tensor, Tensor]] = {}

    def _constants(self, n):
        got = self._units.get(n)
        if got is None:
            got = (Tensor(np.ones(n, dtype=self.dtype)), Tensor(np.zeros(n, dtype=self.dtype)))
            self._units[n] = got
        return got

    def __call__(self, x: Tensor) -> Tensor:
        b, c, d, h, w = x.shape
        ones, zeros = self._constants(d * h * w)
        flat = T.reshape(x, (b, c, d * h * w))
        normed = T.reshape(T.layer_norm(flat, ones, zeros), (b, c, d, h, w))
        gain = T.reshape(self.gain, (1, c, 1, 1, 1))
        bias = T.reshape(self.bias, (1, c, 1, 1, 1))
        return normed * gain + bias

    def named(self, prefix):
        return {f"{prefix}.gain": self.gain, f"{prefix}.bias": self.bias}


class Res3dBlock:
    """conv-norm-relu-conv-norm plus a (projected) shortcut, then relu.

    The first conv carries the stage's spatial stride; depth is never
    strided.
    """

    def __init__(self, rng, cin, cout, dtype, downsample=False):
        s = (1, 2, 2) if downsample else (1, 1, 1)
        self.conv1 = Conv3d(rng, cin, cout, dtype, stride=s)
        self.norm1 = VolumeNorm(cout, dtype)
        self.conv2 = Conv3d(rng, cout, cout, dtype)
        self.norm2 = VolumeNorm(cout, dtype)
        self.shortcut = (
            Conv3d(rng, cin, cout, dtype, kernel=1, stride=s) if (downsample or cin != cout) else None
        )

    def __call__(self, x: Tensor) -> Tensor:
        y = self.conv2(T.relu(self.norm1(self.conv1(x))))
        y = self.norm2(y)
        skip = self.shortcut(x) if self.shortcut is not None else x
        return T.relu(y + skip)

    def named(self, prefix):
        out = {}
        out.update(self.conv1.named(f"{prefix}.conv1"))
        out.update(self.norm1.named(f"{prefix}.norm1"))
        out.update(self.conv2.named(f"{prefix}.conv2"))
        out.update(self.norm2.named(f"{prefix}.norm2"))
        if self.shortcut is not None:
            out.update(self.shortcut.named(f"{prefix}.shortcut"))
        return out


class BiLstm3d:
    """Bidirectional sweeps along radius (W), angle (H) and depth (D).

    Each sweep treats the remaining axes as batch; the three outputs are
    concatenated on the channel axis and fused back to C channels by a
    pointwise linear map.
    """

    def __init__(self, rng, channels, hidden, dtype):
        self.hidden = tuple(hidden)
        self.cells = {}
        for axis, h in zip(AXES, self.hidden):
            self.cells[axis] = (
                _lstm_weights(rng, channels, h, dtype),
                _lstm_weights(rng, channels, h, dtype),
            )
        self.fuse = Linear(rng, 2 * sum(self.hidden), channels, dtype)

    @staticmethod
    def _sweep_layout(axis):
        # forward: [B, C, D, H, W] -> [seq, batch axes..., C]
        # inverse: [seq, batch axes..., 2h] -> [B, 2h, D, H, W]
        return {
            "radius": ((4, 0, 2, 3, 1), (1, 4, 2, 3, 0)),
            "angle": ((3, 0, 2, 4, 1), (1, 4, 2, 0, 3)),
            "depth": ((2, 0, 3, 4, 1), (1, 4, 0, 2, 3)),
        }[axis]

    def __call__(self, x: Tensor) -> Tensor:
        b, c, d, h, w = x.shape
        outs = []
        for axis, hid in zip(AXES, self.hidden):
            fwd, bwd = self.cells[axis]
            to_seq, from_seq = self._sweep_layout(axis)
            seq = T.transpose(x, to_seq)
            seq_shape = seq.shape  # [T, b1, b2, b3, C]
            t = seq_shape[0]
            flat = T.reshape(seq, (t, int(np.prod(seq_shape[1:4])), c))
            swept = T.bilstm(flat, fwd, bwd)  # [T, batch, 2*hid]
            unflat = T.reshape(swept, seq_shape[:4] + (2 * hid,))
            outs.append(T.transpose(unflat, from_seq))
        fused = T.concat(outs, axis=1)  # [B, 2*sum(hidden), D, H, W]
        moved = T.transpose(fused, (0, 2, 3, 4, 1))
        mixed = self.fuse(T.reshape(moved, (b * d * h * w, 2 * sum(self.hidden))))
        back = T.reshape(mixed, (b, d, h, w, c))
        return T.transpose(back, (0, 4, 1, 2, 3))

    def named(self, prefix):
        out = {}
        for axis in AXES:
            for tag, cell in zip(("fwd", "bwd"), self.cells[axis]):
                out[f"{prefix}.{axis}.{tag}.w_x"] = cell.w_x
                out[f"{prefix}.{axis}.{tag}.w_h"] = cell.w_h
                out[f"{prefix}.{axis}.{tag}.b"] = cell.b
        out.update(self.fuse.named(f"{prefix}.fuse"))
        return out


class Sequencer3d:
    """Pre-norm residual BiLSTM3D followed by a pre-norm residual channel MLP."""

    def __init__(self, rng, channels, hidden, mlp_ratio, dtype):
        self.norm1 = VolumeNorm(channels, dtype)
        self.mixer = BiLstm3d(rng, channels, hidden, dtype)
        self.norm2 = VolumeNorm(channels, dtype)
        self.mlp_in = Linear(rng, channels, mlp_ratio * channels, dtype)
        self.mlp_out = Linear(rng, mlp_ratio * channels, channels, dtype)
        self.channels = channels

    def _mlp(self, x: Tensor) -> Tensor:
        b, c, d, h, w = x.shape
        moved = T.reshape(T.transpose(x, (0, 2, 3, 4, 1)), (b * d * h * w, c))
        out = self.mlp_out(T.relu(self.mlp_in(moved)))
        return T.transpose(T.reshape(out, (b, d, h, w, c)), (0, 4, 1, 2, 3))

    def __call__(self, x: Tensor, residual: bool = True) -> Tensor:
        mixed = self.mixer(self.norm1(x))
        s1 = mixed + x if residual else mixed
        mlp = self._mlp(self.norm2(s1))
        return mlp + s1 if residual else mlp

    def named(self, prefix):
        out = {}
        out.update(self.norm1.named(f"{prefix}.norm1"))
        out.update(self.mixer.named(f"{prefix}.mixer"))
        out.update(self.norm2.named(f"{prefix}.norm2"))
        out.update(self.mlp_in.named(f"{prefix}.mlp_in"))
        out.update(self.mlp_out.named(f"{prefix}.mlp_out"))
        return out


class MultiViewStage:
    """t1 residual conv blocks, one sequencer block, then conv + relu."""

    def __init__(self, rng, cin, cout, t1, hidden, mlp_ratio, dtype):
        self.res_blocks = [Res3dBlock(rng, cin, cout, dtype, downsample=True)]
        for _ in range(t1 - 1):
            self.res_blocks.append(Res3dBlock(rng, cout, cout, dtype))
        self.sequencer = Sequencer3d(rng, cout, hidden, mlp_ratio, dtype)
        self.out_conv = Conv3d(rng, cout, cout, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        for block in self.res_blocks:
            x = block(x)
        x = self.sequencer(x)
        return T.relu(self.out_conv(x))

    def named(self, prefix):
        out = {}
        for i, block in enumerate(self.res_blocks):
            out.update(block.named(f"{prefix}.res{i}"))
        out.update(self.sequencer.named(f"{prefix}.seq"))
        out.update(self.out_conv.named(f"{prefix}.out_conv"))
        return out


class SpatialExtension:
    """Per-pixel linear map of the 3 input layers to ``extended_depth``
    slices, then a 3-D conv + ReLU on the resulting single-channel volume."""

    def __init__(self, rng, config: ModelConfig, dtype):
        self.depth = config.extended_depth
        self.mlp = Linear(rng, config.in_layers, config.extended_depth, dtype)
        self.conv = Conv3d(rng, 1, config.stem_channels, dtype)

    def __call__(self, stack: Tensor) -> Tensor:
        b, layers, h, w = stack.shape
        moved = T.reshape(T.transpose(stack, (0, 2, 3, 1)), (b * h * w, layers))
        extended = self.mlp(moved)  # [BHW, depth]
        vol = T.transpose(T.reshape(extended, (b, h, w, self.depth)), (0, 3, 1, 2))
        vol = T.reshape(vol, (b, 1, self.depth, h, w))
        return T.relu(self.conv(vol))

    def named(self, prefix):
        out = self.mlp.named(f"{prefix}.mlp")
        out.update(self.conv.named(f"{prefix}.conv"))
        return out


def depth_groups(depth: int) -> list[tuple[int, int]]:
    """Three near-equal contiguous (start, stop) depth spans."""
    parts = np.array_split(np.arange(depth), 3)
    return [(int(p[0]), int(p[-1]) + 1) for p in parts]


def readout_bins(config: ModelConfig) -> dict:
    """Sector bins at feature resolution; every bin must be non-empty."""
    bins = etdrs.polar_region_bins(etdrs.EtdrsSpec(), config.feature_hw)
    for sector in etdrs.SECTORS:
        rows, (clo, chi) = bins[sector]
        count = sum(rhi - rlo for rlo, rhi in rows) * (chi - clo)
        if count <= 0:
            raise DomainError(
                f"sector {sector} empty at feature resolution {config.feature_hw}"
            )
    return bins


def region_node_readout(volume: Tensor, bins: dict, depth: int) -> Tensor:
    """Mean-pool a [B, C, D, H', W'] volume into [B, 24, C] region nodes.

    Node order is layer-major: depth group 0 (SVC-aligned) over the 8
    sectors TI..IE, then groups 1 and 2.
    """
    b, c = volume.shape[0], volume.shape[1]
    groups = depth_groups(depth)
    nodes = []
    for dlo, dhi in groups:
        for sector in etdrs.SECTORS:
            rows, (clo, chi) = bins[sector]
            total = None
            count = 0
            for rlo, rhi in rows:
                part = T.tsum(volume[:, :, dlo:dhi, rlo:rhi, clo:chi], axis=(2, 3, 4))
                total = part if total is None else total + part
                count += (dhi - dlo) * (rhi - rlo) * (chi - clo)
            nodes.append(total / Tensor(np.asarray(count, dtype=volume.dtype)))
    stacked = T.concat([T.reshape(n, (b, 1, c)) for n in nodes], axis=1)
    return stacked  # [B, 24, C]


class PolarNetModel:
    """End-to-end network; parameters live in a flat named dictionary."""

    TARGET_STAGE = "final_conv"

    def __init__(self, config: ModelConfig, seed: int = 0, dtype=np.float32):
        config.validate()
        self.config = config
        self.dtype = dtype
        self.seed = seed
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x70D31]))
        self.sem = SpatialExtension(rng, config, dtype)
        self.stages = []
        cin = config.stem_channels
        for cout in config.stage_channels:
            self.stages.append(
                MultiViewStage(
                    rng, cin, cout, config.res3d_repeats, config.lstm_hidden, config.mlp_ratio, dtype
                )
            )
            cin = cout
        self.rrm = graph.init_rrm_params(
            rng,
            feature_dim=config.node_feature_dim,
            n_classes=config.n_classes,
            clusters=config.clusters,
            tau=config.tau,
            knn=config.knn,
            dtype=dtype,
        )
        self.bins = readout_bins(config)

    # -- parameters ---------------------------------------------------------
    def named_params(self) -> dict:
        out = self.sem.named("sem")
        for i, stage in enumerate(self.stages):
            out.update(stage.named(f"mv{i}"))
        out.update(self.rrm.named("rrm"))
        return out

    def param_count(self) -> int:
        return sum(t.size for t in self.named_params().values())

    # -- forward ------------------------------------------------------------
    def forward(self, stacks, capture: bool = False) -> ForwardResult:
        """Run a [B, 3, H_p, W_p] batch (numpy or Tensor) to logits.

        ``capture`` keeps the target-stage activations in the result so
        a later backward pass can read their gradient.
        """
        if not isinstance(stacks, Tensor):
            stacks = Tensor(np.asarray(stacks, dtype=self.dtype))
        if stacks.ndim == 3:
            stacks = T.reshape(stacks, (1,) + stacks.shape)
        if stacks.ndim != 4 or stacks.shape[1] != self.config.in_layers:
            raise ShapeError(f"expected [B, 3, H, W] stacks, got {stacks.shape}")
        h, w = self.config.input_hw
        if stacks.shape[2] != h or stacks.shape[3] != w:
            raise ShapeError(
                f"stack spatial dims {stacks.shape[2:]} do not match config {self.config.input_hw}"
            )
        x = self.sem(stacks)
        for stage in self.stages:
            x = stage(x)
        activations = {self.TARGET_STAGE: x} if capture else {}
        nodes = region_node_readout(x, self.bins, self.config.extended_depth)
        b = nodes.shape[0]
        logits, adjacency, cuts, orthos, gaps = [], [], [], [], []
        for i in range(b):
            out = graph.rrm_forward(nodes[i], self.rrm)
            logits.append(T.reshape(out.logits, (1, self.config.n_classes)))
            adjacency.append(out.adjacency)
            cuts.append(T.reshape(out.cut_loss, (1,)))
            orthos.append(T.reshape(out.ortho_loss, (1,)))
            gaps.append(T.reshape(out.gap_loss, (1,)))
        return ForwardResult(
            logits=T.concat(logits, axis=0),
            nodes=nodes,
            adjacency=adjacency,
            cut_loss=T.concat(cuts, axis=0),
            ortho_loss=T.concat(orthos, axis=0),
            gap_loss=T.concat(gaps, axis=0),
            activations=activations,
        )


def param_count(config: ModelConfig) -> int:
    """Exact count of trainable scalars for a configuration."""
    return PolarNetModel(config, seed=0).param_count()


def batch_loss(result: ForwardResult, labels: np.ndarray, aux_weights=(1.0, 1.0, 0.1)) -> Tensor:
    """Mean cross-entropy plus weighted cut/ortho/gap auxiliary losses."""
    b, n_classes = result.logits.shape
    logp = T.log_softmax(result.logits, axis=1)
    onehot = np.zeros((b, n_classes), dtype=result.logits.dtype)
    onehot[np.arange(b), labels] = 1.0
    ce = -T.tsum(logp * Tensor(onehot)) / Tensor(np.asarray(b, dtype=result.logits.dtype))
    w_cut, w_ortho, w_gap = (
        Tensor(np.asarray(v, dtype=result.logits.dtype)) for v in aux_weights
    )
    return (
        ce
        + w_cut * T.tmean(result.cut_loss)
        + w_ortho * T.tmean(result.ortho_loss)
        + w_gap * T.tmean(result.gap_loss)
    )


def micro_model_fd_case(rng: np.random.Generator, dtype=np.float64):
    """(f, inputs) pair for the end-to-end finite-difference gate.

    Parameters are jittered to a random non-degenerate point (zero-init
    biases sit exactly on relu/gate kinks) and the loss carries a small
    quadratic anchor so no coordinate's gradient falls below the
    finite-difference noise floor; being exactly quadratic, the anchor
    itself adds no central-difference error.
    """
    model = PolarNetModel(PRESETS["micro"], seed=11, dtype=dtype)
    h, w = model.config.input_hw
    stack = rng.random((1, 3, h, w)).astype(dtype)
    labels = np.array([1])
    params = [t for _, t in sorted(model.named_params().items())]
    for t in params:
        t.data = t.data + rng.uniform(0.02, 0.08, size=t.shape).astype(dtype) * np.where(
            rng.random(t.shape) < 0.5, -1.0, 1.0
        ).astype(dtype)
    anchor = Tensor(np.asarray(5e-3, dtype=dtype))

    def f(*_):
        result = model.forward(stack)
        loss = batch_loss(result, labels)
        for t in params:
            loss = loss + anchor * T.tsum(t * t)
        return loss

    return f, params
