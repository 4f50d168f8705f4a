"""Pooling-centric salient-object detection networks.

A five-stage convolutional backbone feeds a top-down fusion path.  Three
optional pieces, toggled independently from :class:`~poolnet.config.ModelConfig`,
sharpen the result:

- a pyramid pooling block that replaces the deepest lateral projection and
  summarizes the whole scene at several grid sizes,
- guidance flows that re-inject that deepest summary at every fusion level,
- aggregation modules that re-pool each fused map at several rates to mend
  upsampling artifacts.

An optional edge branch taps the three shallow fusion levels, supervises
boundary maps, and widens the saliency head with its features.  All outputs
are logits at the input resolution; inputs must be RGB with height and width
divisible by 16.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .checkpoint import STATE_PREFIX, apply_records, load_checkpoint, save_model
from .config import ModelConfig
from .errors import CheckpointError, ShapeError
from .nn import Conv2d, Module, ModuleList
from .tensor import (Tensor, add, adaptive_avg_pool2d, avg_pool2d, concat_channels,
                     crop2d, global_avg_pool, max_pool2d, pad_replicate2d, relu,
                     resize_bilinear, upsample_bilinear)

EDGE_TRANSITION_CHANNELS = 16


@dataclass
class PyramidFeatures:
    """Backbone taps c2..c5 at strides 2, 4, 8, 16."""

    c2: Tensor
    c3: Tensor
    c4: Tensor
    c5: Tensor


@dataclass
class ModelOutput:
    """Saliency logits at input resolution, plus edge logits when enabled."""

    saliency: Tensor
    edges: Optional[tuple[Tensor, ...]] = None


class ConvReLU(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 rng: np.random.Generator):
        super().__init__()
        self.conv = Conv2d(in_channels, out_channels, kernel_size, rng)

    def forward(self, x: Tensor) -> Tensor:
        return relu(self.conv(x))


class BackboneStage(Module):
    """Two 3x3 conv+relu layers at a fixed width."""

    def __init__(self, in_channels: int, width: int, rng: np.random.Generator):
        super().__init__()
        self.conv1 = ConvReLU(in_channels, width, 3, rng)
        self.conv2 = ConvReLU(width, width, 3, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.conv2(self.conv1(x))


class Backbone(Module):
    """Five stages with 2x max pooling in between; taps the last four."""

    def __init__(self, widths: tuple[int, ...], rng: np.random.Generator):
        super().__init__()
        stages = []
        in_channels = 3
        for width in widths:
            stages.append(BackboneStage(in_channels, width, rng))
            in_channels = width
        self.stages = ModuleList(stages)

    def forward(self, x: Tensor) -> PyramidFeatures:
        h = self.stages[0](x)
        c2 = self.stages[1](max_pool2d(h, 2))
        c3 = self.stages[2](max_pool2d(c2, 2))
        c4 = self.stages[3](max_pool2d(c3, 2))
        c5 = self.stages[4](max_pool2d(c4, 2))
        return PyramidFeatures(c2, c3, c4, c5)


class PyramidPooling(Module):
    """Scene summary over several grid sizes, fused back to one map.

    Branches: the input itself, an adaptive average pool at each size in
    ``sizes`` (1x1 conv + relu, resized back), and a global-average branch.
    The concatenation is fused by a 3x3 conv + relu.
    """

    def __init__(self, in_channels: int, out_channels: int, sizes: tuple[int, ...],
                 rng: np.random.Generator):
        super().__init__()
        self.sizes = tuple(sizes)
        branch_channels = max(in_channels // 4, 1)
        self.branches = ModuleList(
            [Conv2d(in_channels, branch_channels, 1, rng) for _ in self.sizes])
        self.global_branch = Conv2d(in_channels, branch_channels, 1, rng)
        total = in_channels + (len(self.sizes) + 1) * branch_channels
        self.fuse = Conv2d(total, out_channels, 3, rng)

    def forward(self, x: Tensor) -> Tensor:
        _, _, h, w = x.shape
        maps = [x]
        for size, conv in zip(self.sizes, self.branches):
            pooled = adaptive_avg_pool2d(x, size, size)
            maps.append(resize_bilinear(relu(conv(pooled)), h, w))
        pooled = global_avg_pool(x)
        maps.append(resize_bilinear(relu(self.global_branch(pooled)), h, w))
        return relu(self.fuse(concat_channels(maps)))


class GuidanceFlow(Module):
    """Project the deepest fused map and upsample it to one fusion level."""

    def __init__(self, in_channels: int, out_channels: int, factor: int,
                 rng: np.random.Generator):
        super().__init__()
        self.factor = factor
        self.project = Conv2d(in_channels, out_channels, 1, rng)

    def forward(self, x: Tensor) -> Tensor:
        return upsample_bilinear(self.project(x), self.factor)


class FeatureAggregation(Module):
    """Re-pool a fused map at several rates and merge with the identity.

    Each rate branch is avg-pool -> 3x3 conv + relu -> upsample; branches and
    the identity are summed and fused by a final 3x3 conv + relu.  Inputs not
    divisible by a rate are edge-padded for that branch and cropped back.
    """

    def __init__(self, channels: int, rates: tuple[int, ...], rng: np.random.Generator):
        super().__init__()
        self.rates = tuple(rates)
        self.branch_convs = ModuleList(
            [Conv2d(channels, channels, 3, rng) for _ in self.rates])
        self.fuse = Conv2d(channels, channels, 3, rng)

    def forward(self, x: Tensor) -> Tensor:
        _, _, h, w = x.shape
        acc = x
        for rate, conv in zip(self.rates, self.branch_convs):
            padded = pad_replicate2d(x, (-h) % rate, (-w) % rate)
            branch = upsample_bilinear(relu(conv(avg_pool2d(padded, rate))), rate)
            acc = add(acc, crop2d(branch, h, w))
        return relu(self.fuse(acc))


class ResidualBlock(Module):
    """x + conv(relu(conv(x))); zero weights make it an exact identity."""

    def __init__(self, channels: int, rng: np.random.Generator):
        super().__init__()
        self.conv1 = Conv2d(channels, channels, 3, rng)
        self.conv2 = Conv2d(channels, channels, 3, rng)

    def forward(self, x: Tensor) -> Tensor:
        return add(x, self.conv2(relu(self.conv1(x))))


class EdgeBranch(Module):
    """Boundary features from the three shallow fusion levels.

    Per level: a residual block at the level width, a 3x3 transition to 16
    channels, and a 1x1 side head whose logits are upsampled to the input
    resolution.  The 16-channel maps are aligned to the shallowest level and
    concatenated (48 channels), then refined by three 3x3 conv + relu layers.
    """

    def __init__(self, level_channels: tuple[int, int, int], rng: np.random.Generator):
        super().__init__()
        t = EDGE_TRANSITION_CHANNELS
        self.blocks = ModuleList([ResidualBlock(c, rng) for c in level_channels])
        self.transitions = ModuleList([Conv2d(c, t, 3, rng) for c in level_channels])
        self.side_heads = ModuleList([Conv2d(t, 1, 1, rng) for _ in level_channels])
        fused = t * len(level_channels)
        self.refine = ModuleList([Conv2d(fused, fused, 3, rng) for _ in range(3)])

    def forward(self, features: list[Tensor],
                strides: tuple[int, ...]) -> tuple[Tensor, tuple[Tensor, ...]]:
        transitions = []
        sides = []
        for feat, stride, block, trans, head in zip(
                features, strides, self.blocks, self.transitions, self.side_heads):
            t = relu(trans(block(feat)))
            sides.append(upsample_bilinear(head(t), stride))
            transitions.append(upsample_bilinear(t, stride // strides[0]))
        fused = concat_channels(transitions)
        for conv in self.refine:
            fused = relu(conv(fused))
        return fused, tuple(sides)


class SaliencyNet(Module):
    """The full detector; see the module docstring for the wiring."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        super().__init__()
        config.validate()
        self.config = config
        widths = config.backbone_widths
        pyr = config.pyramid_channels  # widths for fusion levels 2..5

        self.backbone = Backbone(widths, rng)
        if config.enable_ppm:
            self.pyramid_pool = PyramidPooling(widths[4], pyr[3], config.ppm_sizes, rng)
        else:
            self.lateral5 = Conv2d(widths[4], pyr[3], 1, rng)
        if config.enable_ggf:
            # guidance targets levels 5, 4, 3, 2 at strides 16, 8, 4, 2
            self.guidance = ModuleList(
                [GuidanceFlow(pyr[3], pyr[level - 2], 2 ** (5 - level), rng)
                 for level in (5, 4, 3, 2)])
        # fusion widths may differ per level, so each top-down hop carries a
        # 1x1 adapter from the deeper level's width
        self.lateral4 = Conv2d(widths[3], pyr[2], 1, rng)
        self.topdown4 = Conv2d(pyr[3], pyr[2], 1, rng)
        self.merge4 = self._merge_module(pyr[2], config, rng)
        self.lateral3 = Conv2d(widths[2], pyr[1], 1, rng)
        self.topdown3 = Conv2d(pyr[2], pyr[1], 1, rng)
        self.merge3 = self._merge_module(pyr[1], config, rng)
        self.lateral2 = Conv2d(widths[1], pyr[0], 1, rng)
        self.topdown2 = Conv2d(pyr[1], pyr[0], 1, rng)
        self.merge2 = self._merge_module(pyr[0], config, rng)
        if config.enable_edge:
            self.edge = EdgeBranch((pyr[0], pyr[1], pyr[2]), rng)
        head_channels = pyr[0] + (3 * EDGE_TRANSITION_CHANNELS if config.enable_edge else 0)
        self.head = Conv2d(head_channels, 1, 1, rng)

    @staticmethod
    def _merge_module(channels: int, config: ModelConfig, rng) -> Module:
        if config.enable_fam:
            return FeatureAggregation(channels, config.fam_rates, rng)
        return ConvReLU(channels, channels, 3, rng)

    def forward(self, x: Tensor) -> ModelOutput:
        if x.data.ndim != 4 or x.shape[1] != 3:
            raise ShapeError(f"model input must be (batch, 3, height, width), got {x.shape}")
        _, _, h, w = x.shape
        if h % 16 or w % 16:
            raise ShapeError(f"model input size {h}x{w} must be divisible by 16")

        feats = self.backbone(x)
        if self.config.enable_ppm:
            top = self.pyramid_pool(feats.c5)
        else:
            top = self.lateral5(feats.c5)

        def guided(merged: Tensor, index: int) -> Tensor:
            # guidance index 0..3 targets levels 5, 4, 3, 2
            if self.config.enable_ggf:
                return add(merged, self.guidance[index](top))
            return merged

        out5 = guided(top, 0)
        out4 = self.merge4(guided(
            add(self.lateral4(feats.c4), upsample_bilinear(self.topdown4(out5), 2)), 1))
        out3 = self.merge3(guided(
            add(self.lateral3(feats.c3), upsample_bilinear(self.topdown3(out4), 2)), 2))
        out2 = self.merge2(guided(
            add(self.lateral2(feats.c2), upsample_bilinear(self.topdown2(out3), 2)), 3))

        if self.config.enable_edge:
            edge_feats, edge_sides = self.edge([out2, out3, out4], (2, 4, 8))
            head_in = concat_channels([out2, edge_feats])
        else:
            edge_sides = None
            head_in = out2
        logits = upsample_bilinear(self.head(head_in), 2)
        return ModelOutput(saliency=logits, edges=edge_sides)


def build_model(config: ModelConfig, seed: int = 0) -> SaliencyNet:
    """Construct a seeded model; identical arguments give identical weights."""
    rng = np.random.default_rng([seed, 0])
    model = SaliencyNet(config, rng)
    model.finalize_names()
    return model


# Architecture hyperparameters travel inside checkpoints as state records so
# a saved model can be rebuilt from the file alone.  Widths and switches are
# small integers, which float32 represents exactly.

_CONFIG_KEYS = ("config/backbone_widths", "config/pyramid_channels",
                "config/fam_rates", "config/ppm_sizes", "config/switches")


def config_to_state(config: ModelConfig) -> dict[str, np.ndarray]:
    switches = [config.enable_ppm, config.enable_ggf, config.enable_fam, config.enable_edge]
    return {
        "config/backbone_widths": np.asarray(config.backbone_widths, dtype=np.float32),
        "config/pyramid_channels": np.asarray(config.pyramid_channels, dtype=np.float32),
        "config/fam_rates": np.asarray(config.fam_rates, dtype=np.float32),
        "config/ppm_sizes": np.asarray(config.ppm_sizes, dtype=np.float32),
        "config/switches": np.asarray(switches, dtype=np.float32),
    }


def config_from_state(state: dict[str, np.ndarray]) -> ModelConfig:
    missing = [key for key in _CONFIG_KEYS if key not in state]
    if missing:
        raise CheckpointError(f"checkpoint lacks architecture records: {', '.join(missing)}")

    def ints(key: str) -> tuple[int, ...]:
        return tuple(int(v) for v in state[key])

    ppm, ggf, fam, edge = (bool(v) for v in state["config/switches"])
    return ModelConfig(backbone_widths=ints("config/backbone_widths"),
                       pyramid_channels=ints("config/pyramid_channels"),
                       enable_ppm=ppm, enable_ggf=ggf, enable_fam=fam, enable_edge=edge,
                       fam_rates=ints("config/fam_rates"),
                       ppm_sizes=ints("config/ppm_sizes"))


def save_model_with_config(path, model: SaliencyNet,
                           extra_state: Optional[dict[str, np.ndarray]] = None) -> None:
    state = config_to_state(model.config)
    if extra_state:
        state.update(extra_state)
    save_model(path, model, state)


def model_from_checkpoint(path) -> tuple[SaliencyNet, dict[str, np.ndarray]]:
    """Rebuild the architecture recorded in a checkpoint and load its weights.

    The architecture records are consumed here; the returned state holds only
    what the trainer stashed (optimizer moments, progress counters).
    """
    records = load_checkpoint(path)
    state = {name[len(STATE_PREFIX):]: arr for name, arr in records.items()
             if name.startswith(STATE_PREFIX)}
    model = build_model(config_from_state(state))
    state = apply_records(model, records)
    for key in _CONFIG_KEYS:
        state.pop(key, None)
    return model, state
