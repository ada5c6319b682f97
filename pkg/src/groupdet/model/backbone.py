"""
Backbone - Residual feature extractor plus feature pyramid.

Two presets share one stage/stride layout (stem at stride 4, stages at
4/8/16/32, pooled level at 64):
- full: torchvision ResNet-50
- tiny: a GroupNorm residual net with nine convs for desk-scale runs

The stem is exposed separately so text fusion can be added to its output
before the residual stages.
"""

from collections import OrderedDict
from pathlib import Path

import torch
from torch import Tensor, nn
from torchvision.models import ResNet50_Weights, resnet50
from torchvision.ops import FeaturePyramidNetwork
from torchvision.ops.feature_pyramid_network import LastLevelMaxPool
from torchvision.ops.misc import FrozenBatchNorm2d

from groupdet.core.config import DetectorConfig, get_logger
from groupdet.core.errors import WeightMismatch

logger = get_logger("model.backbone")

TINY_CHANNELS = (16, 32, 64, 128)


def _norm(channels: int) -> nn.GroupNorm:
    return nn.GroupNorm(max(channels // 4, 1) if channels < 32 else 8, channels)


class _TinyBlock(nn.Module):
    """Two 3x3 convs; the shortcut subsamples and zero-pads channels."""

    def __init__(self, in_channels: int, out_channels: int, stride: int):
        super().__init__()
        self.conv1 = nn.Conv2d(in_channels, out_channels, 3, stride=stride, padding=1, bias=False)
        self.norm1 = _norm(out_channels)
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, padding=1, bias=False)
        self.norm2 = _norm(out_channels)
        self.shortcut = nn.AvgPool2d(stride) if stride > 1 else nn.Identity()
        self.extra_channels = out_channels - in_channels

    def forward(self, x: Tensor) -> Tensor:
        out = torch.relu(self.norm1(self.conv1(x)))
        out = self.norm2(self.conv2(out))
        identity = self.shortcut(x)
        if self.extra_channels:
            identity = nn.functional.pad(identity, (0, 0, 0, 0, 0, self.extra_channels))
        return torch.relu(out + identity)


class Backbone(nn.Module):
    """Stem plus four residual stages."""

    def __init__(self, stem: nn.Module, stages: list[nn.Module], stem_channels: int, stage_channels: list[int]):
        super().__init__()
        self.stem = stem
        self.stages = nn.ModuleList(stages)
        self.stem_channels = stem_channels
        self.stage_channels = stage_channels

    def forward_stages(self, x: Tensor) -> list[Tensor]:
        outputs: list[Tensor] = []
        for stage in self.stages:
            x = stage(x)
            outputs.append(x)
        return outputs

    def forward(self, images: Tensor) -> list[Tensor]:
        return self.forward_stages(self.stem(images))


def build_tiny_backbone() -> Backbone:
    c1, c2, c3, c4 = TINY_CHANNELS
    stem = nn.Sequential(
        nn.Conv2d(3, c1, kernel_size=7, stride=2, padding=3, bias=False),
        _norm(c1),
        nn.ReLU(inplace=True),
        nn.MaxPool2d(kernel_size=3, stride=2, padding=1),
    )
    stages: list[nn.Module] = [
        _TinyBlock(c1, c1, stride=1),
        _TinyBlock(c1, c2, stride=2),
        _TinyBlock(c2, c3, stride=2),
        _TinyBlock(c3, c4, stride=2),
    ]
    return Backbone(stem, stages, stem_channels=c1, stage_channels=list(TINY_CHANNELS))


def build_full_backbone(pretrained: bool = False) -> Backbone:
    if pretrained:
        net = resnet50(weights=ResNet50_Weights.IMAGENET1K_V1, norm_layer=FrozenBatchNorm2d)
    else:
        net = resnet50(weights=None)
    stem = nn.Sequential(net.conv1, net.bn1, net.relu, net.maxpool)
    stages: list[nn.Module] = [net.layer1, net.layer2, net.layer3, net.layer4]
    return Backbone(stem, stages, stem_channels=64, stage_channels=[256, 512, 1024, 2048])


def build_backbone(config: DetectorConfig) -> Backbone:
    """Backbone for the configured preset, with optional weight loading."""
    if config.backbone_preset == "tiny":
        backbone = build_tiny_backbone()
    else:
        backbone = build_full_backbone(pretrained=config.pretrained)

    if config.pretrained_path is not None:
        load_backbone_weights(backbone, config.pretrained_path)
    return backbone


def load_backbone_weights(backbone: Backbone, path: Path) -> None:
    try:
        state = torch.load(path, map_location="cpu", weights_only=True)
        backbone.load_state_dict(state)
    except (OSError, RuntimeError) as e:
        raise WeightMismatch(f"cannot load backbone weights from {path}: {e}") from e
    logger.info(f"Loaded backbone weights from {path}")


class Pyramid(nn.Module):
    """FPN over the four stages plus a max-pooled fifth level."""

    def __init__(self, in_channels: list[int], out_channels: int):
        super().__init__()
        self.fpn = FeaturePyramidNetwork(in_channels, out_channels, extra_blocks=LastLevelMaxPool())

    def forward(self, stages: list[Tensor]) -> list[Tensor]:
        inputs = OrderedDict((f"c{i + 2}", x) for i, x in enumerate(stages))
        return list(self.fpn(inputs).values())
