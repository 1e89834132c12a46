"""Convolutional building blocks shared by the segmentation network."""

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import require


@dataclass(frozen=True)
class BlockConfig:
    """Shape of one inverted residual unit."""

    in_channels: int
    out_channels: int
    expansion: int = 4
    dw_kernel: int = 3
    dw_stack: int = 3
    drop_prob: float = 0.0
    gamma_init: float = 1e-6

    def __post_init__(self):
        require(self.in_channels >= 1 and self.out_channels >= 1,
                f"channel counts must be positive, got "
                f"{self.in_channels}/{self.out_channels}")
        require(self.expansion >= 1, f"expansion must be >= 1, got {self.expansion}")
        require(self.dw_kernel % 2 == 1, f"dw_kernel must be odd, got {self.dw_kernel}")
        require(self.dw_stack >= 1, f"dw_stack must be >= 1, got {self.dw_stack}")
        require(0.0 <= self.drop_prob < 1.0,
                f"drop_prob must be in [0, 1), got {self.drop_prob}")
        require(self.gamma_init > 0, f"gamma_init must be positive, got {self.gamma_init}")


class LayerNorm2d(nn.Module):
    """LayerNorm over the channel dimension of (B, C, H, W) maps."""

    def __init__(self, channels, eps=1e-6):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))
        self.eps = eps

    def forward(self, x):
        mu = x.mean(dim=1, keepdim=True)
        var = (x - mu).pow(2).mean(dim=1, keepdim=True)
        x = (x - mu) / torch.sqrt(var + self.eps)
        return x * self.weight[:, None, None] + self.bias[:, None, None]


class DropPath(nn.Module):
    """Drops the whole residual branch per sample, rescaling survivors so the
    expected output equals the input.  Identity at evaluation time."""

    def __init__(self, drop_prob=0.0):
        super().__init__()
        self.drop_prob = drop_prob

    def forward(self, x):
        if self.drop_prob == 0.0 or not self.training:
            return x
        keep = 1.0 - self.drop_prob
        shape = (x.shape[0],) + (1,) * (x.dim() - 1)
        mask = torch.bernoulli(torch.full(shape, keep, dtype=x.dtype, device=x.device))
        return x * mask / keep


class InvertedResidualUnit(nn.Module):
    """Depthwise stack -> LayerNorm -> 1x1 expand -> GELU -> 1x1 project,
    scaled by a learnable per-channel gamma and added back to the input."""

    def __init__(self, cfg: BlockConfig):
        super().__init__()
        require(cfg.in_channels == cfg.out_channels,
                f"identity skip needs in_channels == out_channels, got "
                f"{cfg.in_channels} != {cfg.out_channels}")
        c = cfg.in_channels
        pad = cfg.dw_kernel // 2
        self.dwconvs = nn.ModuleList(
            nn.Conv2d(c, c, cfg.dw_kernel, padding=pad, groups=c)
            for _ in range(cfg.dw_stack))
        self.norm = LayerNorm2d(c)
        self.expand = nn.Conv2d(c, cfg.expansion * c, 1)
        self.act = nn.GELU()
        self.project = nn.Conv2d(cfg.expansion * c, c, 1)
        self.gamma = nn.Parameter(cfg.gamma_init * torch.ones(c, 1, 1))
        self.drop_path = DropPath(cfg.drop_prob)

    def forward(self, x):
        y = x
        for conv in self.dwconvs:
            y = conv(y)
        y = self.project(self.act(self.expand(self.norm(y))))
        return x + self.drop_path(self.gamma * y)


def unit_stack(channels, drop_probs, expansion=4, dw_kernel=3, dw_stack=3):
    """One inverted residual unit per entry of ``drop_probs``."""
    return nn.ModuleList(
        InvertedResidualUnit(BlockConfig(
            in_channels=channels, out_channels=channels, expansion=expansion,
            dw_kernel=dw_kernel, dw_stack=dw_stack, drop_prob=p))
        for p in drop_probs)


def run_units(x, units):
    """Applies a unit stack with a ReLU between consecutive units."""
    for i, unit in enumerate(units):
        if i > 0:
            x = F.relu(x)
        x = unit(x)
    return x


class DoubleConv(nn.Module):
    """Two plain conv3x3 + BatchNorm + ReLU stages."""

    def __init__(self, in_channels, out_channels):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(in_channels, out_channels, 3, padding=1),
            nn.BatchNorm2d(out_channels),
            nn.ReLU(inplace=True),
            nn.Conv2d(out_channels, out_channels, 3, padding=1),
            nn.BatchNorm2d(out_channels),
            nn.ReLU(inplace=True),
        )

    def forward(self, x):
        return self.body(x)


class DownConvBlock(nn.Module):
    """Strided 2x2 entry conv halving resolution, then a stack of inverted
    residual units (or one plain double conv when ``modern`` is off)."""

    def __init__(self, in_channels, out_channels, depth, expansion=4,
                 dw_kernel=3, dw_stack=3, drop_probs=None, modern=True):
        super().__init__()
        if drop_probs is None:
            drop_probs = [0.0] * depth
        require(len(drop_probs) == depth,
                f"need one drop rate per unit: {len(drop_probs)} != {depth}")
        self.entry = nn.Conv2d(in_channels, out_channels, 2, stride=2)
        self.entry_norm = LayerNorm2d(out_channels)
        if modern:
            self.units = unit_stack(out_channels, drop_probs,
                                    expansion=expansion, dw_kernel=dw_kernel,
                                    dw_stack=dw_stack)
        else:
            self.units = nn.ModuleList([DoubleConv(out_channels, out_channels)])

    def forward(self, x):
        h, w = x.shape[-2:]
        require(h % 2 == 0 and w % 2 == 0,
                f"down block needs even spatial dims, got {(h, w)}")
        x = self.entry_norm(self.entry(x))
        return run_units(x, self.units)


class SpatialAttention(nn.Module):
    """Gates features by a sigmoid map computed from channelwise mean and max
    statistics through a single 7x7 convolution (99 parameters)."""

    def __init__(self):
        super().__init__()
        self.conv = nn.Conv2d(2, 1, 7, padding=3)

    def forward(self, x):
        stats = torch.cat([x.mean(dim=1, keepdim=True),
                           x.amax(dim=1, keepdim=True)], dim=1)
        return x * torch.sigmoid(self.conv(stats))


class ResidualBlock(nn.Module):
    """Two conv3x3 + BatchNorm + ReLU stages wrapped by an identity skip."""

    def __init__(self, channels):
        super().__init__()
        self.body = DoubleConv(channels, channels)

    def forward(self, x):
        return x + self.body(x)


class UpConv(nn.Module):
    """Bilinear 2x upsample followed by a 1x1 channel projection."""

    def __init__(self, in_channels, out_channels):
        super().__init__()
        self.proj = nn.Conv2d(in_channels, out_channels, 1)

    def forward(self, x):
        x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
        return self.proj(x)
