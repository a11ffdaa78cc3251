"""Stream and fusion network builders.

The unimodal stream is the classic 8-layer topology: five conv layers with
max pools after conv1/conv2/conv5 and cross-channel normalization after
conv1/conv2, then three fully connected layers; ReLU follows every conv
and fc except the final class-score layer. Softmax is applied by the loss
or by decision-level fusion, never inside the stream.

Fusion variants wire one or two streams together:

    early-concat    (net1)       width-axis concat of the two inputs, one stream
    mid-concat      (net2)       per-modality conv stacks, pool5 concat, shared fc head
    late-sum        (net3-sum)   elementwise sum of the two class-score vectors
    late-mul        (net3-mul)   elementwise product of the class-score vectors
    late-fc7-concat (fc7-concat) concat of fc7 features into one extra fc classifier
    late-score-avg  (score-avg)  mean of the two softmax distributions
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from . import tensor as T
from .tensor import LrnParams, Parameters, Tensor


class TopologyError(ValueError):
    """A layer's spatial dimensions collapse below its kernel."""


class FusionStrategy(Enum):
    EARLY_CONCAT = "early-concat"
    MID_CONCAT = "mid-concat"
    LATE_SUM = "late-sum"
    LATE_MUL = "late-mul"
    LATE_FC7_CONCAT = "late-fc7-concat"
    LATE_SCORE_AVG = "late-score-avg"


# report/CLI aliases for the strategies
STRATEGY_ALIASES = {
    "net1": FusionStrategy.EARLY_CONCAT,
    "net2": FusionStrategy.MID_CONCAT,
    "net3-sum": FusionStrategy.LATE_SUM,
    "net3-mul": FusionStrategy.LATE_MUL,
    "fc7-concat": FusionStrategy.LATE_FC7_CONCAT,
    "score-avg": FusionStrategy.LATE_SCORE_AVG,
}
STRATEGY_REPORT_NAMES = {v: k for k, v in STRATEGY_ALIASES.items()}


def parse_strategy(name: str) -> FusionStrategy:
    name = name.strip().lower()
    if name in STRATEGY_ALIASES:
        return STRATEGY_ALIASES[name]
    for s in FusionStrategy:
        if s.value == name:
            return s
    raise ValueError(f"unknown fusion strategy {name!r}")


@dataclass(frozen=True)
class StreamConfig:
    input_hw: int
    conv_channels: tuple
    conv_kernels: tuple
    conv_strides: tuple
    conv_pads: tuple
    pool_size: int
    pool_stride: int
    fc_widths: tuple
    class_count: int
    scale_profile: str
    lrn: LrnParams = field(default_factory=LrnParams)

    def __post_init__(self):
        for name, t in (("conv_channels", self.conv_channels),
                        ("conv_kernels", self.conv_kernels),
                        ("conv_strides", self.conv_strides),
                        ("conv_pads", self.conv_pads)):
            if len(t) != 5:
                raise ValueError(f"{name} needs exactly 5 entries, got {len(t)}")
        if len(self.fc_widths) != 3:
            raise ValueError(f"fc_widths needs exactly 3 entries, got {len(self.fc_widths)}")
        if self.fc_widths[2] != self.class_count:
            raise ValueError("last fc width must equal class_count")

    @classmethod
    def paper_227(cls, class_count: int) -> "StreamConfig":
        return cls(input_hw=227, conv_channels=(96, 256, 384, 384, 256),
                   conv_kernels=(11, 5, 3, 3, 3), conv_strides=(4, 1, 1, 1, 1),
                   conv_pads=(0, 2, 1, 1, 1), pool_size=3, pool_stride=2,
                   fc_widths=(4096, 4096, class_count), class_count=class_count,
                   scale_profile="paper-227")

    @classmethod
    def desk_32(cls, class_count: int) -> "StreamConfig":
        return cls(input_hw=32, conv_channels=(8, 16, 24, 24, 16),
                   conv_kernels=(3, 3, 3, 3, 3), conv_strides=(1, 1, 1, 1, 1),
                   conv_pads=(1, 1, 1, 1, 1), pool_size=2, pool_stride=2,
                   fc_widths=(64, 64, class_count), class_count=class_count,
                   scale_profile="desk-32")

    @classmethod
    def for_profile(cls, profile: str, class_count: int) -> "StreamConfig":
        if profile == "paper-227":
            return cls.paper_227(class_count)
        if profile == "desk-32":
            return cls.desk_32(class_count)
        raise ValueError(f"unknown scale profile {profile!r} (use paper-227 or desk-32)")

    def to_kv(self) -> dict:
        return {
            "profile": self.scale_profile,
            "input_hw": str(self.input_hw),
            "conv_channels": ",".join(map(str, self.conv_channels)),
            "conv_kernels": ",".join(map(str, self.conv_kernels)),
            "conv_strides": ",".join(map(str, self.conv_strides)),
            "conv_pads": ",".join(map(str, self.conv_pads)),
            "pool_size": str(self.pool_size),
            "pool_stride": str(self.pool_stride),
            "fc_widths": ",".join(map(str, self.fc_widths)),
            "class_count": str(self.class_count),
        }


def _int_tuple(s: str) -> tuple:
    return tuple(int(x) for x in s.split(","))


def stream_config_from_kv(kv: dict) -> StreamConfig:
    return StreamConfig(
        input_hw=int(kv["input_hw"]),
        conv_channels=_int_tuple(kv["conv_channels"]),
        conv_kernels=_int_tuple(kv["conv_kernels"]),
        conv_strides=_int_tuple(kv["conv_strides"]),
        conv_pads=_int_tuple(kv["conv_pads"]),
        pool_size=int(kv["pool_size"]),
        pool_stride=int(kv["pool_stride"]),
        fc_widths=_int_tuple(kv["fc_widths"]),
        class_count=int(kv["class_count"]),
        scale_profile=kv.get("profile", "custom"),
    )


_POOL_AFTER = (1, 2, 5)
_LRN_AFTER = (1, 2)


def layer_plan(cfg: StreamConfig) -> list:
    """Symbolic layer sequence of a full stream, independent of shapes."""
    plan = []
    for i in range(1, 6):
        plan.append(("conv", f"conv{i}"))
        plan.append(("relu", f"relu{i}"))
        if i in _LRN_AFTER:
            plan.append(("lrn", f"norm{i}"))
        if i in _POOL_AFTER:
            plan.append(("pool", f"pool{i}"))
    plan.append(("flatten", "flatten"))
    for j in (6, 7):
        plan.append(("fc", f"fc{j}"))
        plan.append(("relu", f"relu_fc{j}"))
    plan.append(("fc", "fc8"))
    return plan


def _plan_shapes(cfg: StreamConfig, input_hw: tuple) -> tuple:
    """Propagate (C,H,W) through the conv stack; raise on any collapse."""
    c, h, w = 3, input_hw[0], input_hw[1]
    for i in range(5):
        layer = f"conv{i + 1}"
        k, s, p = cfg.conv_kernels[i], cfg.conv_strides[i], cfg.conv_pads[i]
        if k > h + 2 * p or k > w + 2 * p:
            raise TopologyError(f"{layer}: kernel {k} exceeds padded input {h}x{w} (pad {p})")
        h = (h + 2 * p - k) // s + 1
        w = (w + 2 * p - k) // s + 1
        c = cfg.conv_channels[i]
        if (i + 1) in _POOL_AFTER:
            if cfg.pool_size > h or cfg.pool_size > w:
                raise TopologyError(f"pool{i + 1}: window {cfg.pool_size} exceeds input {h}x{w}")
            h = (h - cfg.pool_size) // cfg.pool_stride + 1
            w = (w - cfg.pool_size) // cfg.pool_stride + 1
    return c, h, w


def conv_stack_parameter_count(cfg: StreamConfig) -> int:
    total = 0
    c_in = 3
    for i in range(5):
        k = cfg.conv_kernels[i]
        c_out = cfg.conv_channels[i]
        total += c_out * c_in * k * k + c_out
        c_in = c_out
    return total


def fc_head_parameter_count(cfg: StreamConfig, fc6_input: int) -> int:
    w6, w7, w8 = cfg.fc_widths
    return (w6 * fc6_input + w6) + (w7 * w6 + w7) + (w8 * w7 + w8)


def stream_parameter_count(cfg: StreamConfig, input_hw: tuple = None) -> int:
    """Closed-form parameter count for a full stream on the given input."""
    hw = input_hw or (cfg.input_hw, cfg.input_hw)
    c, h, w = _plan_shapes(cfg, hw)
    return conv_stack_parameter_count(cfg) + fc_head_parameter_count(cfg, c * h * w)


class Stream:
    """One modality's pipeline, built over a shared parameter registry.

    ``head`` controls how far the stack goes: "conv" stops at pool5,
    "fc7" adds fc6/fc7, "full" adds the class-score layer fc8.
    """

    def __init__(self, cfg: StreamConfig, params: Parameters,
                 rng: np.random.Generator, prefix: str = "",
                 head: str = "full", input_hw: tuple = None,
                 dtype=np.float32):
        if head not in ("conv", "fc7", "full"):
            raise ValueError(f"unknown head {head!r}")
        self.cfg = cfg
        self.params = params
        self.prefix = prefix
        self.head = head
        self.dtype = dtype
        self.input_hw = input_hw or (cfg.input_hw, cfg.input_hw)
        self.pool5_shape = _plan_shapes(cfg, self.input_hw)
        self.names: list[str] = []

        c_in = 3
        for i in range(5):
            k = cfg.conv_kernels[i]
            c_out = cfg.conv_channels[i]
            self._add(f"conv{i + 1}.w",
                      T.he_uniform((c_out, c_in, k, k), c_in * k * k, rng, dtype))
            self._add(f"conv{i + 1}.b", np.zeros(c_out, dtype=dtype))
            c_in = c_out
        if head != "conv":
            fc_in = int(np.prod(self.pool5_shape))
            widths = cfg.fc_widths[:2] if head == "fc7" else cfg.fc_widths
            for j, width in enumerate(widths):
                self._add(f"fc{6 + j}.w", T.he_uniform((width, fc_in), fc_in, rng, dtype))
                self._add(f"fc{6 + j}.b", np.zeros(width, dtype=dtype))
                fc_in = width

    def _add(self, name: str, data: np.ndarray) -> None:
        full = self.prefix + name
        self.params.add(full, Tensor(data))
        self.names.append(full)

    def _p(self, name: str) -> Tensor:
        return self.params[self.prefix + name]

    def forward(self, x: Tensor, upto: str = "scores") -> Tensor:
        """Run the stack; ``upto`` is one of pool5, fc7, scores."""
        cfg = self.cfg
        out = x
        for i in range(5):
            out = T.conv2d(out, self._p(f"conv{i + 1}.w"), self._p(f"conv{i + 1}.b"),
                           stride=cfg.conv_strides[i], pad=cfg.conv_pads[i])
            out = T.relu(out)
            if (i + 1) in _LRN_AFTER:
                out = T.lrn(out, cfg.lrn)
            if (i + 1) in _POOL_AFTER:
                out = T.maxpool2d(out, cfg.pool_size, cfg.pool_stride)
        out = T.flatten(out)
        if upto == "pool5":
            return out
        out = T.relu(T.fully_connected(out, self._p("fc6.w"), self._p("fc6.b")))
        out = T.relu(T.fully_connected(out, self._p("fc7.w"), self._p("fc7.b")))
        if upto == "fc7":
            return out
        if self.head != "full":
            raise ValueError("stream has no class-score layer")
        return T.fully_connected(out, self._p("fc8.w"), self._p("fc8.b"))


def build_stream(cfg: StreamConfig, seed: int = 0, dtype=np.float32) -> Stream:
    """Standalone unimodal stream with its own parameter registry."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    return Stream(cfg, Parameters(), rng, head="full", dtype=dtype)


@dataclass(frozen=True)
class ParamSets:
    """Disjoint name sets partitioning a net's parameters."""
    image: frozenset
    audio: frozenset
    fusion: frozenset

    def all_names(self) -> frozenset:
        return self.image | self.audio | self.fusion


def _expect_shape(name: str, x: Tensor, hw: tuple) -> None:
    want = (3, hw[0], hw[1])
    if x.ndim != 4 or x.shape[1:] != want:
        raise T.ShapeError(f"{name} input: expected (N, {want[0]}, {want[1]}, {want[2]}), "
                           f"got {x.shape}")


class MultimodalNet:
    """A fusion network over one or two streams plus an optional fusion head."""

    def __init__(self, strategy: FusionStrategy, cfg: StreamConfig,
                 seed: int = 0, dtype=np.float32):
        self.strategy = strategy
        self.cfg = cfg
        self.dtype = dtype
        self.params = Parameters()
        self._streams: dict[str, Stream] = {}
        rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
        hw = (cfg.input_hw, cfg.input_hw)

        if strategy is FusionStrategy.EARLY_CONCAT:
            merged = Stream(cfg, self.params, rng, prefix="merged.", head="full",
                            input_hw=(hw[0], 2 * hw[1]), dtype=dtype)
            self._streams["merged"] = merged
            self.param_sets = ParamSets(frozenset(merged.names), frozenset(), frozenset())
            return

        head = {FusionStrategy.MID_CONCAT: "conv",
                FusionStrategy.LATE_FC7_CONCAT: "fc7"}.get(strategy, "full")
        image = Stream(cfg, self.params, rng, prefix="image.", head=head, dtype=dtype)
        audio = Stream(cfg, self.params, rng, prefix="audio.", head=head, dtype=dtype)
        self._streams["image"] = image
        self._streams["audio"] = audio

        fusion_names: list[str] = []
        if strategy is FusionStrategy.MID_CONCAT:
            fc_in = 2 * int(np.prod(image.pool5_shape))
            for j, width in enumerate(cfg.fc_widths):
                w = T.he_uniform((width, fc_in), fc_in, rng, dtype)
                self.params.add(f"fusion.fc{6 + j}.w", Tensor(w))
                self.params.add(f"fusion.fc{6 + j}.b", Tensor(np.zeros(width, dtype=dtype)))
                fusion_names += [f"fusion.fc{6 + j}.w", f"fusion.fc{6 + j}.b"]
                fc_in = width
        elif strategy is FusionStrategy.LATE_FC7_CONCAT:
            fc_in = 2 * cfg.fc_widths[1]
            w = T.he_uniform((cfg.class_count, fc_in), fc_in, rng, dtype)
            self.params.add("fusion.fc.w", Tensor(w))
            self.params.add("fusion.fc.b", Tensor(np.zeros(cfg.class_count, dtype=dtype)))
            fusion_names += ["fusion.fc.w", "fusion.fc.b"]

        self.param_sets = ParamSets(frozenset(image.names), frozenset(audio.names),
                                    frozenset(fusion_names))

    @property
    def returns_probabilities(self) -> bool:
        return self.strategy is FusionStrategy.LATE_SCORE_AVG

    def stream(self, which: str) -> Stream:
        return self._streams[which]

    def forward_t(self, image: Tensor, spectrogram: Tensor) -> Tensor:
        """Class scores [N, class_count]; score-avg returns the mean distribution."""
        hw = (self.cfg.input_hw, self.cfg.input_hw)
        _expect_shape("image", image, hw)
        _expect_shape("spectrogram", spectrogram, hw)
        s = self.strategy
        if s is FusionStrategy.EARLY_CONCAT:
            return self._streams["merged"].forward(T.concat(image, spectrogram, axis=3))
        img, aud = self._streams["image"], self._streams["audio"]
        if s is FusionStrategy.MID_CONCAT:
            joined = T.concat(img.forward(image, upto="pool5"),
                              aud.forward(spectrogram, upto="pool5"), axis=1)
            out = T.relu(T.fully_connected(joined, self.params["fusion.fc6.w"],
                                           self.params["fusion.fc6.b"]))
            out = T.relu(T.fully_connected(out, self.params["fusion.fc7.w"],
                                           self.params["fusion.fc7.b"]))
            return T.fully_connected(out, self.params["fusion.fc8.w"],
                                     self.params["fusion.fc8.b"])
        if s is FusionStrategy.LATE_FC7_CONCAT:
            joined = T.concat(img.forward(image, upto="fc7"),
                              aud.forward(spectrogram, upto="fc7"), axis=1)
            return T.fully_connected(joined, self.params["fusion.fc.w"],
                                     self.params["fusion.fc.b"])
        si = img.forward(image)
        sa = aud.forward(spectrogram)
        if s is FusionStrategy.LATE_SUM:
            return T.add(si, sa)
        if s is FusionStrategy.LATE_MUL:
            return T.mul(si, sa)
        return T.scale(T.add(T.softmax(si), T.softmax(sa)), 0.5)

    def loss_t(self, image: Tensor, spectrogram: Tensor, labels: np.ndarray) -> Tensor:
        out = self.forward_t(image, spectrogram)
        if self.returns_probabilities:
            return T.nll_from_probs(out, labels)
        return T.cross_entropy(out, labels)

    def scores(self, images: np.ndarray, spectrograms: np.ndarray) -> np.ndarray:
        with T.no_grad():
            return self.forward_t(Tensor(images.astype(self.dtype, copy=False)),
                                  Tensor(spectrograms.astype(self.dtype, copy=False))).data

    def fc8_names(self) -> frozenset:
        return frozenset(n for n in self.params.names()
                         if n.endswith("fc8.w") or n.endswith("fc8.b"))


class UnimodalNet:
    """Single-modality wrapper with the same training-facing interface."""

    def __init__(self, cfg: StreamConfig, modality: str, seed: int = 0,
                 dtype=np.float32):
        if modality not in ("image", "audio"):
            raise ValueError(f"modality must be image or audio, got {modality!r}")
        self.cfg = cfg
        self.modality = modality
        self.dtype = dtype
        self.params = Parameters()
        rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
        self.stream = Stream(cfg, self.params, rng, head="full", dtype=dtype)
        names = frozenset(self.stream.names)
        self.param_sets = ParamSets(names if modality == "image" else frozenset(),
                                    names if modality == "audio" else frozenset(),
                                    frozenset())
        self.strategy = None

    @property
    def returns_probabilities(self) -> bool:
        return False

    def forward_t(self, image: Tensor, spectrogram: Tensor) -> Tensor:
        x = image if self.modality == "image" else spectrogram
        hw = (self.cfg.input_hw, self.cfg.input_hw)
        _expect_shape(self.modality, x, hw)
        return self.stream.forward(x)

    def loss_t(self, image: Tensor, spectrogram: Tensor, labels: np.ndarray) -> Tensor:
        return T.cross_entropy(self.forward_t(image, spectrogram), labels)

    def scores(self, images: np.ndarray, spectrograms: np.ndarray) -> np.ndarray:
        with T.no_grad():
            return self.forward_t(Tensor(images.astype(self.dtype, copy=False)),
                                  Tensor(spectrograms.astype(self.dtype, copy=False))).data


def build_net1(cfg: StreamConfig, seed: int = 0, dtype=np.float32) -> MultimodalNet:
    return MultimodalNet(FusionStrategy.EARLY_CONCAT, cfg, seed, dtype)


def build_net2(cfg: StreamConfig, seed: int = 0, dtype=np.float32) -> MultimodalNet:
    return MultimodalNet(FusionStrategy.MID_CONCAT, cfg, seed, dtype)


def build_net3(cfg: StreamConfig, mode: str = "sum", seed: int = 0,
               dtype=np.float32) -> MultimodalNet:
    if mode not in ("sum", "mul"):
        raise ValueError(f"net3 mode must be sum or mul, got {mode!r}")
    strategy = FusionStrategy.LATE_SUM if mode == "sum" else FusionStrategy.LATE_MUL
    return MultimodalNet(strategy, cfg, seed, dtype)


def build_fc7_concat(cfg: StreamConfig, seed: int = 0, dtype=np.float32) -> MultimodalNet:
    return MultimodalNet(FusionStrategy.LATE_FC7_CONCAT, cfg, seed, dtype)


def build_score_avg(cfg: StreamConfig, seed: int = 0, dtype=np.float32) -> MultimodalNet:
    return MultimodalNet(FusionStrategy.LATE_SCORE_AVG, cfg, seed, dtype)


def build_multimodal(strategy: FusionStrategy, cfg: StreamConfig, seed: int = 0,
                     dtype=np.float32) -> MultimodalNet:
    return MultimodalNet(strategy, cfg, seed, dtype)


def net_parameter_count(net) -> int:
    return net.params.count()
