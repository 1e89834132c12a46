"""Edge-preserving guided filtering, classical and attention-weighted.

Both filters fit a local linear model ``q = a * I + b`` inside every square
window and blend the per-window coefficients back into full maps.  Windows are
clipped at image borders and every statistic is normalized by the true
in-bounds sample count, so border pixels carry no zero-padding bias.
"""

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import ValidationError, require

_DEGENERATE_WEIGHT = 1e-8


@dataclass(frozen=True)
class WindowSpec:
    """Square filtering window of side ``2 * radius + 1`` plus regularizer."""

    radius: int = 2
    regularizer_eps: float = 1e-2

    def __post_init__(self):
        require(isinstance(self.radius, int) and self.radius >= 1,
                f"window radius must be a positive integer, got {self.radius!r}")
        require(self.regularizer_eps >= 0,
                f"regularizer_eps must be non-negative, got {self.regularizer_eps!r}")


@dataclass
class CoefficientField:
    """Per-window linear coefficients and their window-averaged versions."""

    a: torch.Tensor
    b: torch.Tensor
    a_bar: torch.Tensor
    b_bar: torch.Tensor


def _check_map(x, name):
    require(torch.is_tensor(x), f"{name} must be a tensor")
    require(x.dim() >= 2, f"{name} must have at least 2 dims (H, W), got shape {tuple(x.shape)}")
    require(bool(torch.isfinite(x).all()), f"{name} contains non-finite values")


def _box_sum(x, radius):
    # Separable sum over clipped windows; zero padding is correct for sums
    # because out-of-bounds samples simply contribute nothing.
    k = 2 * radius + 1
    shape = x.shape
    flat = x.reshape(-1, 1, shape[-2], shape[-1])
    kh = x.new_ones(1, 1, k, 1)
    kw = x.new_ones(1, 1, 1, k)
    s = F.conv2d(flat, kh, padding=(radius, 0))
    s = F.conv2d(s, kw, padding=(0, radius))
    return s.reshape(shape)


def _window_counts(x, radius):
    ones = torch.ones(1, 1, x.shape[-2], x.shape[-1], dtype=x.dtype, device=x.device)
    return _box_sum(ones, radius).reshape(x.shape[-2], x.shape[-1])


def box_mean(x, radius):
    """Mean over the clipped window at every pixel (exact at borders)."""
    _check_map(x, "input")
    require(isinstance(radius, int) and radius >= 1,
            f"radius must be a positive integer, got {radius!r}")
    return _box_sum(x, radius) / _window_counts(x, radius)


def _safe_div(num, den, threshold=1e-12):
    bad = den.abs() < threshold
    den_safe = torch.where(bad, torch.ones_like(den), den)
    return torch.where(bad, torch.zeros_like(num), num / den_safe)


def guided_filter_coefficients(guide, inp, spec, eps=None):
    """Solve the ridge-regularized local linear fit of ``inp`` on ``guide``.

    Per window: a = cov(I, p) / (var(I) + eps), b = mean(p) - a * mean(I).
    ``eps`` may override ``spec.regularizer_eps`` with a broadcastable map.
    """
    _check_map(guide, "guide")
    _check_map(inp, "input")
    require(guide.shape == inp.shape,
            f"guide and input shapes differ: {tuple(guide.shape)} vs {tuple(inp.shape)}")
    if eps is None:
        eps = spec.regularizer_eps
    r = spec.radius
    n = _window_counts(guide, r)
    mean_i = _box_sum(guide, r) / n
    mean_p = _box_sum(inp, r) / n
    corr_ip = _box_sum(guide * inp, r) / n
    corr_ii = _box_sum(guide * guide, r) / n
    cov_ip = corr_ip - mean_i * mean_p
    var_i = corr_ii - mean_i * mean_i
    a = _safe_div(cov_ip, var_i + eps)
    b = mean_p - a * mean_i
    return CoefficientField(a=a, b=b, a_bar=box_mean(a, r), b_bar=box_mean(b, r))


def guided_filter(guide, inp, spec):
    """Classical guided filter: ``a_bar * guide + b_bar``."""
    coef = guided_filter_coefficients(guide, inp, spec)
    return coef.a_bar * guide + coef.b_bar


def attention_guided_coefficients(guide_lo, inp, attention, spec):
    """Attention-weighted local linear fit, one regularizer term per window.

    Minimizes sum_w M^2 (a * I + b - g)^2 + eps * a^2 over each window:
        W   = sum M^2
        mu  = sum M^2 I / W,  gh = sum M^2 g / W
        a   = (sum M^2 I g - W mu gh) / (sum M^2 I^2 - W mu^2 + eps)
        b   = gh - a mu
    Windows whose total weight W falls below 1e-8 yield (a, b) = (0, 0).
    """
    _check_map(guide_lo, "guide")
    _check_map(inp, "input")
    _check_map(attention, "attention")
    require(guide_lo.shape == inp.shape,
            f"guide and input shapes differ: {tuple(guide_lo.shape)} vs {tuple(inp.shape)}")
    require(attention.shape[-2:] == guide_lo.shape[-2:],
            f"attention spatial shape {tuple(attention.shape[-2:])} does not match "
            f"maps {tuple(guide_lo.shape[-2:])}")
    require(bool((attention >= 0).all()) and bool((attention <= 1).all()),
            "attention map must lie in [0, 1]")
    r = spec.radius
    eps = spec.regularizer_eps
    m2 = attention * attention
    w = _box_sum(m2.expand_as(guide_lo) if m2.shape != guide_lo.shape else m2, r)
    s_i = _box_sum(m2 * guide_lo, r)
    s_g = _box_sum(m2 * inp, r)
    s_ig = _box_sum(m2 * guide_lo * inp, r)
    s_ii = _box_sum(m2 * guide_lo * guide_lo, r)

    degenerate = w < _DEGENERATE_WEIGHT
    w_safe = torch.where(degenerate, torch.ones_like(w), w)
    mu = torch.where(degenerate, torch.zeros_like(s_i), s_i / w_safe)
    gh = torch.where(degenerate, torch.zeros_like(s_g), s_g / w_safe)
    a = _safe_div(s_ig - w * mu * gh, s_ii - w * mu * mu + eps)
    a = torch.where(degenerate, torch.zeros_like(a), a)
    b = torch.where(degenerate, torch.zeros_like(gh), gh - a * mu)
    return CoefficientField(a=a, b=b, a_bar=box_mean(a, r), b_bar=box_mean(b, r))


def _resample(x, size):
    return F.interpolate(x, size=size, mode="bilinear", align_corners=False)


def attention_guided_filter(guide_hi, input_lo, attention, spec):
    """Filter a low-resolution map under a high-resolution guide.

    Coefficients are solved at the resolution of ``input_lo`` (the guide and
    attention map are bilinearly downsampled to it when it is exactly half the
    guide resolution), then the averaged coefficients are bilinearly upsampled
    and applied to the full-resolution guide.
    """
    for name, x in (("guide", guide_hi), ("input", input_lo), ("attention", attention)):
        require(torch.is_tensor(x) and x.dim() == 4,
                f"{name} must be a 4D (B, C, H, W) tensor")
    require(guide_hi.shape[1] == input_lo.shape[1],
            f"guide has {guide_hi.shape[1]} channels but input has {input_lo.shape[1]}")
    hg, wg = guide_hi.shape[-2:]
    hl, wl = input_lo.shape[-2:]
    if (hl, wl) == (hg, wg):
        guide_lo = guide_hi
    else:
        require(hl * 2 == hg and wl * 2 == wg,
                f"input resolution {(hl, wl)} must equal the guide resolution "
                f"{(hg, wg)} or be exactly half of it")
        guide_lo = _resample(guide_hi, (hl, wl))
    att_lo = attention if attention.shape[-2:] == (hl, wl) else _resample(attention, (hl, wl))
    att_lo = att_lo.clamp(0.0, 1.0)

    coef = attention_guided_coefficients(guide_lo, input_lo, att_lo, spec)
    if (hl, wl) == (hg, wg):
        a_up, b_up = coef.a_bar, coef.b_bar
    else:
        a_up = _resample(coef.a_bar, (hg, wg))
        b_up = _resample(coef.b_bar, (hg, wg))
    return a_up * guide_hi + b_up


def unsharp_mask(x, alpha=1.0, sigma=1.0):
    """Gaussian high-boost sharpening: ``x + alpha * (x - blur(x))``.

    The Gaussian window is truncated at 3 sigma and renormalized over the
    in-bounds taps, so borders are blurred without darkening.
    """
    _check_map(x, "input")
    require(sigma > 0, f"sigma must be positive, got {sigma!r}")
    radius = max(1, int(3.0 * sigma))
    offsets = torch.arange(-radius, radius + 1, dtype=x.dtype, device=x.device)
    taps = torch.exp(-(offsets ** 2) / (2.0 * sigma * sigma))

    def blur1d(t, kernel, dim_is_h):
        shape = t.shape
        flat = t.reshape(-1, 1, shape[-2], shape[-1])
        if dim_is_h:
            k = kernel.view(1, 1, -1, 1)
            pad = (radius, 0)
        else:
            k = kernel.view(1, 1, 1, -1)
            pad = (0, radius)
        return F.conv2d(flat, k, padding=pad).reshape(shape)

    num = blur1d(blur1d(x, taps, True), taps, False)
    ones = torch.ones(x.shape[-2], x.shape[-1], dtype=x.dtype, device=x.device)
    den = blur1d(blur1d(ones, taps, True), taps, False)
    blurred = num / den
    return x + alpha * (x - blurred)
