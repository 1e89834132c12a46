"""Full-scale guided segmentation network.

A four-stage encoder of inverted residual units feeds a full-scale feature
merging decoder; the merged decoder maps are refined by a chain of guided
residual modules whose attention maps steer an edge-preserving guided filter.
Sigmoid heads emit vessel probability maps at full, half, and quarter
resolution for deep supervision.
"""

from dataclasses import dataclass, field, asdict

import torch
import torch.nn as nn
import torch.nn.functional as F

from .blocks import (DoubleConv, DownConvBlock, LayerNorm2d, ResidualBlock,
                     SpatialAttention, UpConv, run_units, unit_stack)
from .errors import ValidationError, require
from .guided_filter import WindowSpec, attention_guided_filter


@dataclass(frozen=True)
class Toggles:
    """Ablation switches; everything on reproduces the full model."""

    modern_blocks: bool = True       # inverted residual units vs plain double conv
    guided_modules: bool = True      # GRM chain vs plain concat+conv decoding
    spatial_attention: bool = True   # bottleneck spatial attention gate
    decomposed_kernels: bool = True  # three stacked 3x3 depthwise vs one 7x7
    deep_supervision: bool = True    # multi-resolution heads vs full-resolution only


@dataclass(frozen=True)
class ModelConfig:
    base_channels: int = 64
    depths: tuple = (3, 3, 9, 3)
    in_channels: int = 3
    num_heads: int = 3
    drop_prob: float = 0.1           # peak stochastic-depth rate, scaled with depth
    grm_window: WindowSpec = field(default_factory=WindowSpec)
    toggles: Toggles = field(default_factory=Toggles)

    def __post_init__(self):
        require(self.base_channels >= 4 and self.base_channels % 4 == 0,
                f"base_channels must be a positive multiple of 4, got {self.base_channels}")
        require(len(self.depths) == 4 and all(d >= 1 for d in self.depths),
                f"depths must be four positive ints, got {self.depths!r}")
        require(self.in_channels >= 1, "in_channels must be positive")
        require(1 <= self.num_heads <= 3,
                f"num_heads must be 1, 2, or 3, got {self.num_heads}")
        require(0.0 <= self.drop_prob < 1.0,
                f"drop_prob must be in [0, 1), got {self.drop_prob}")
        object.__setattr__(self, "depths", tuple(int(d) for d in self.depths))

    def stage_channels(self):
        return tuple(self.base_channels * (1 << s) for s in range(4))

    def head_count(self):
        return self.num_heads if self.toggles.deep_supervision else 1

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if isinstance(d.get("grm_window"), dict):
            d["grm_window"] = WindowSpec(**d["grm_window"])
        if isinstance(d.get("toggles"), dict):
            d["toggles"] = Toggles(**d["toggles"])
        if "depths" in d:
            d["depths"] = tuple(d["depths"])
        return cls(**d)


VARIANTS = {
    "L": (64, (3, 3, 9, 3)),
    "B": (64, (2, 2, 6, 2)),
    "S": (48, (3, 3, 9, 3)),
    "T": (32, (3, 3, 9, 3)),
    "N": (16, (3, 3, 9, 3)),
}

# Published parameter totals the named variants are expected to land near.
REFERENCE_PARAMS = {
    "L": 18_320_000,
    "B": 14_460_000,
    "S": 10_330_000,
    "T": 4_610_000,
    "N": 1_170_000,
}


def build_variant(name, **overrides):
    if name not in VARIANTS:
        raise ValidationError(
            f"unknown variant {name!r}; valid variants: {', '.join(sorted(VARIANTS))}")
    base, depths = VARIANTS[name]
    return ModelConfig(base_channels=base, depths=depths, **overrides)


@dataclass
class PredictionSet:
    """Sigmoid probability maps, finest first (full, 1/2, 1/4 resolution)."""

    heads: list

    def __post_init__(self):
        require(len(self.heads) >= 1, "prediction set must hold at least one head")

    def __iter__(self):
        return iter(self.heads)

    def __len__(self):
        return len(self.heads)

    def __getitem__(self, i):
        return self.heads[i]

    @property
    def full(self):
        return self.heads[0]


def _dw_geometry(toggles):
    if toggles.decomposed_kernels:
        return 3, 3
    return 7, 1


def _body(channels, cfg: ModelConfig, drop_probs, expansion=4):
    if not cfg.toggles.modern_blocks:
        return nn.ModuleList([DoubleConv(channels, channels)])
    dw_kernel, dw_stack = _dw_geometry(cfg.toggles)
    return unit_stack(channels, drop_probs, expansion=expansion,
                      dw_kernel=dw_kernel, dw_stack=dw_stack)


class _FusionBlock(nn.Module):
    """Merges concatenated multi-scale maps back to the stage width."""

    def __init__(self, in_channels, out_channels, cfg):
        super().__init__()
        self.reduce = nn.Conv2d(in_channels, out_channels, 1)
        self.norm = LayerNorm2d(out_channels)
        self.body = _body(out_channels, cfg, [0.0], expansion=2)

    def forward(self, parts):
        x = self.norm(self.reduce(torch.cat(parts, dim=1)))
        return run_units(x, self.body)


class FeatureRepresentationNet(nn.Module):
    """Encoder plus full-scale merging decoder; returns one map per stage."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        c1, c2, c3, c4 = cfg.stage_channels()

        # Stochastic depth deepens linearly across the encoder units.
        total_units = sum(cfg.depths)
        ramp = torch.linspace(0, cfg.drop_prob, total_units).tolist()
        rates = [ramp[sum(cfg.depths[:s]):sum(cfg.depths[:s + 1])] for s in range(4)]
        dw_kernel, dw_stack = _dw_geometry(cfg.toggles)

        self.stem = nn.Conv2d(cfg.in_channels, c1, 3, padding=1)
        self.stem_norm = LayerNorm2d(c1)
        self.stage1 = _body(c1, cfg, rates[0])
        self.aux = nn.ModuleList(nn.Conv2d(c, c, 3, padding=1) for c in (c1, c2, c3))

        def down(cin, cout, stage):
            return DownConvBlock(cin, cout, cfg.depths[stage],
                                 dw_kernel=dw_kernel, dw_stack=dw_stack,
                                 drop_probs=rates[stage],
                                 modern=cfg.toggles.modern_blocks)

        self.down2 = down(2 * c1, c2, 1)
        self.down3 = down(2 * c2, c3, 2)
        self.down4 = down(2 * c3, c4, 3)
        self.bottleneck_attention = SpatialAttention() if cfg.toggles.spatial_attention else None

        # Resampling paths into the full-scale fusion blocks: deeper decoder
        # maps come up through bilinear+1x1, finer skips come down through a
        # strided 2x2 conv squeezed to a quarter of the stage width.
        self.up4 = UpConv(c4, c3)
        self.up3 = UpConv(c3, c2)
        self.up2 = UpConv(c2, c1)
        self.skip_down4 = nn.Conv2d(2 * c3, c4 // 4, 2, stride=2)
        self.skip_down3 = nn.Conv2d(2 * c2, c3 // 4, 2, stride=2)
        self.skip_down2 = nn.Conv2d(2 * c1, c2 // 4, 2, stride=2)
        self.fuse4 = _FusionBlock(c4 + c4 // 4, c4, cfg)
        self.fuse3 = _FusionBlock(2 * c3 + c3 + c3 // 4, c3, cfg)
        self.fuse2 = _FusionBlock(2 * c2 + c2 + c2 // 4, c2, cfg)
        self.fuse1 = _FusionBlock(2 * c1 + c1, c1, cfg)

    def forward(self, x):
        require(torch.is_tensor(x) and x.dim() == 4,
                "network input must be a 4D (B, C, H, W) tensor")
        require(x.shape[1] == self.cfg.in_channels,
                f"expected {self.cfg.in_channels} input channels, got {x.shape[1]}")
        h, w = x.shape[-2:]
        require(h % 8 == 0 and w % 8 == 0,
                f"input spatial dims must be multiples of 8, got {(h, w)}")

        e1 = run_units(self.stem_norm(self.stem(x)), self.stage1)
        s1 = torch.cat([e1, self.aux[0](e1)], dim=1)
        e2 = self.down2(s1)
        s2 = torch.cat([e2, self.aux[1](e2)], dim=1)
        e3 = self.down3(s2)
        s3 = torch.cat([e3, self.aux[2](e3)], dim=1)
        e4 = self.down4(s3)
        if self.bottleneck_attention is not None:
            e4 = self.bottleneck_attention(e4)

        d4 = self.fuse4([e4, self.skip_down4(s3)])
        d3 = self.fuse3([s3, self.up4(d4), self.skip_down3(s2)])
        d2 = self.fuse2([s2, self.up3(d3), self.skip_down2(s1)])
        d1 = self.fuse1([s1, self.up2(d2)])
        return [d1, d2, d3, d4]


class GuidedResidualModule(nn.Module):
    """Attention gate, attention-guided filtering, and residual refinement.

    ``current`` is the guide at this stage's resolution; ``up`` is the deeper
    refined map at half resolution (or the same resolution for the deepest
    stage, where the module guides itself).
    """

    def __init__(self, cur_channels, up_channels, window: WindowSpec):
        super().__init__()
        mid = max(1, cur_channels // 2)
        self.gate_cur = nn.Conv2d(cur_channels, mid, 1)
        self.gate_up = nn.Conv2d(up_channels, mid, 1)
        self.gate_out = nn.Conv2d(mid, 1, 1)
        self.project_up = nn.Conv2d(up_channels, cur_channels, 1)
        self.refine = ResidualBlock(cur_channels)
        self.out_conv = nn.Conv2d(cur_channels, cur_channels, 1)
        self.window = window

    def attention_map(self, current, up):
        u = self.gate_up(up)
        if u.shape[-2:] != current.shape[-2:]:
            u = F.interpolate(u, size=current.shape[-2:], mode="bilinear",
                              align_corners=False)
        return torch.sigmoid(self.gate_out(F.relu(self.gate_cur(current) + u)))

    def forward(self, current, up):
        require(torch.is_tensor(current) and current.dim() == 4 and
                torch.is_tensor(up) and up.dim() == 4,
                "GRM inputs must be 4D (B, C, H, W) tensors")
        hc, wc = current.shape[-2:]
        hu, wu = up.shape[-2:]
        require((hu, wu) == (hc, wc) or (hu * 2 == hc and wu * 2 == wc),
                f"up map {(hu, wu)} must match the current resolution {(hc, wc)} "
                "or be exactly half of it")
        m = self.attention_map(current, up)
        low = self.project_up(up)
        filtered = attention_guided_filter(current, low, m, self.window)
        gated = filtered * (m * current)
        return self.out_conv(self.refine(gated))


class _PlainMerge(nn.Module):
    """Concat+conv fallback used when guided modules are toggled off."""

    def __init__(self, cur_channels, up_channels):
        super().__init__()
        self.conv = nn.Sequential(
            nn.Conv2d(cur_channels + up_channels, cur_channels, 3, padding=1),
            nn.BatchNorm2d(cur_channels),
            nn.ReLU(inplace=True),
        )

    def forward(self, current, up):
        if up.shape[-2:] != current.shape[-2:]:
            up = F.interpolate(up, size=current.shape[-2:], mode="bilinear",
                               align_corners=False)
        return self.conv(torch.cat([current, up], dim=1))


class GuidedConvBlock(nn.Module):
    """Compresses decoder maps and runs the deep-to-shallow refinement chain."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        channels = cfg.stage_channels()
        keep = tuple(max(1, c // 2) for c in channels)
        self.keep = keep
        self.compress = nn.ModuleList(
            nn.Conv2d(c, k, 1) for c, k in zip(channels, keep))
        if cfg.toggles.guided_modules:
            module = lambda cur, up: GuidedResidualModule(cur, up, cfg.grm_window)
        else:
            module = _PlainMerge
        self.grm4 = module(keep[3], keep[3])
        self.grm3 = module(keep[2], keep[3])
        self.grm2 = module(keep[1], keep[2])
        self.grm1 = module(keep[0], keep[1])
        self.heads = nn.ModuleList(
            nn.Conv2d(keep[d], 1, 1) for d in range(cfg.head_count()))

    def forward(self, decoder_maps):
        f1, f2, f3, f4 = (conv(d) for conv, d in zip(self.compress, decoder_maps))
        g4 = self.grm4(f4, f4)
        g3 = self.grm3(f3, g4)
        g2 = self.grm2(f2, g3)
        g1 = self.grm1(f1, g2)
        refined = [g1, g2, g3]
        return [torch.sigmoid(head(refined[d])) for d, head in enumerate(self.heads)]


class FSGNet(nn.Module):
    """Full model: representation network plus guided refinement and heads."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.representation = FeatureRepresentationNet(cfg)
        self.guided_block = GuidedConvBlock(cfg)

    def forward(self, x):
        return PredictionSet(self.guided_block(self.representation(x)))


def build_model(cfg: ModelConfig):
    return FSGNet(cfg)


def count_parameters(model_or_cfg):
    model = model_or_cfg
    if isinstance(model_or_cfg, ModelConfig):
        model = FSGNet(model_or_cfg)
    return sum(p.numel() for p in model.parameters())
