"""Run configuration: a flat key-value recipe, one key per training
hyper-parameter row, plus run-identity extras (variant, dataset, seed...).

Compound values are compact strings like "k=3,5,7,9,11, prob=0.8": fields
are separated by ", ", each field is either a bare flag ("gaussian") or a
"name=value" pair, and a value containing commas is a numeric list.
"""

from pathlib import Path

import yaml

from .data import AugmentationConfig, DatasetName
from .errors import ValidationError, require
from .network import Toggles, VARIANTS
from .pipeline import TrainConfig

# The 21 recipe keys, in table order.
RECIPE_KEYS = (
    "base_lr",
    "lr_scheduler",
    "lr_scheduler_warmup_epochs",
    "lr_scheduler_cycle_epochs",
    "lr_scheduler_eta_min",
    "early_stop_epochs",
    "early_stop_metric",
    "optimizer",
    "optimizer_momentum",
    "weight_decay",
    "criterion",
    "binary_threshold",
    "batch_size",
    "center_padded_shape",
    "random_crop",
    "random_blur",
    "random_jitter",
    "random_horizontal_flip",
    "random_perspective",
    "random_resize",
    "cutmix",
)

# Run-identity keys that select what to train rather than how.
RUN_KEYS = (
    "variant",
    "dataset",
    "seed",
    "data_root",
    "max_epochs",
    "modern_blocks",
    "guided_modules",
    "spatial_attention",
    "decomposed_kernels",
    "deep_supervision",
)

DEFAULT_RECIPE = {
    "base_lr": 1e-3,
    "lr_scheduler": "linear warm-up, cosine annealing",
    "lr_scheduler_warmup_epochs": 20,
    "lr_scheduler_cycle_epochs": 100,
    "lr_scheduler_eta_min": 1e-5,
    "early_stop_epochs": 400,
    "early_stop_metric": "f1",
    "optimizer": "adamw",
    "optimizer_momentum": "0.9, 0.999",
    "weight_decay": 0.05,
    "criterion": "dice + bce",
    "binary_threshold": 0.5,
    "batch_size": 4,
    "center_padded_shape": "D=608, S=704, C=1024, H=1344",
    "random_crop": 288,
    "random_blur": "gaussian, k=3,5,7,9,11, prob=0.8",
    "random_jitter": "b=0.2, c=0.2, s=0.2, h=0.1, prob=0.8",
    "random_horizontal_flip": "prob=0.5",
    "random_perspective": "s=0.3, prob=0.3",
    "random_resize": "s=0.5,2.0, prob=0.8",
    "cutmix": "n=1, prob=0.8",
    "variant": "L",
    "dataset": None,
    "seed": 42,
    "data_root": None,
    "max_epochs": None,
    "modern_blocks": True,
    "guided_modules": True,
    "spatial_attention": True,
    "decomposed_kernels": True,
    "deep_supervision": True,
}

# These rows name the single supported implementation; any other value is a
# request for something this package does not provide.
_FIXED = {
    "lr_scheduler": "linear warm-up, cosine annealing",
    "early_stop_metric": "f1",
    "optimizer": "adamw",
    "criterion": "dice + bce",
}


def _parse_number(token):
    try:
        return int(token)
    except ValueError:
        return float(token)


def _parse_value(token):
    if "," in token:
        return [_parse_number(t) for t in token.split(",") if t]
    try:
        return _parse_number(token)
    except ValueError:
        return token


def parse_compact(value, key="value"):
    """Splits a compact recipe string into (flags, named-fields)."""
    require(isinstance(value, str) and value.strip(),
            f"{key} must be a non-empty compact string, got {value!r}")
    flags, fields = [], {}
    for part in value.split(", "):
        part = part.strip()
        if not part:
            continue
        if "=" in part:
            name, _, raw = part.partition("=")
            name, raw = name.strip(), raw.strip()
            require(name and raw, f"malformed field {part!r} in {key}")
            require(name not in fields, f"duplicate field {name!r} in {key}")
            fields[name] = _parse_value(raw)
        else:
            flags.append(part)
    return flags, fields


def _field(fields, name, key, default=None):
    if name not in fields:
        require(default is not None, f"{key} is missing required field {name!r}")
        return default
    return fields[name]


def load_run_config(path=None, overrides=None):
    """Merge defaults <- optional YAML file <- overrides; reject unknown keys
    and values for fixed rows other than the supported one."""
    recipe = dict(DEFAULT_RECIPE)
    known = set(RECIPE_KEYS) | set(RUN_KEYS)
    if path is not None:
        path = Path(path)
        require(path.is_file(), f"config file {path} does not exist")
        loaded = yaml.safe_load(path.read_text())
        require(isinstance(loaded, dict), f"config file {path} must be a mapping")
        unknown = sorted(set(loaded) - known)
        require(not unknown, f"unknown config keys: {', '.join(unknown)}")
        recipe.update(loaded)
    if overrides:
        unknown = sorted(set(overrides) - known)
        require(not unknown, f"unknown config overrides: {', '.join(unknown)}")
        recipe.update({k: v for k, v in overrides.items() if v is not None})
    validate_recipe(recipe)
    return recipe


def validate_recipe(recipe):
    for key, supported in _FIXED.items():
        got = str(recipe[key]).strip().lower()
        if got != supported:
            raise ValidationError(
                f"{key}={recipe[key]!r} is not supported; only {supported!r} is")
    require(recipe["variant"] in VARIANTS,
            f"unknown variant {recipe['variant']!r}; valid: {', '.join(sorted(VARIANTS))}")
    if recipe["dataset"] is not None:
        DatasetName(recipe["dataset"])
    pads = pad_targets_from(recipe)
    require(set(pads) == set(DatasetName),
            "center_padded_shape must give one entry per dataset initial "
            f"({', '.join(d.value[0] for d in DatasetName)}), "
            f"got {recipe['center_padded_shape']!r}")


def pad_targets_from(recipe):
    """center_padded_shape string -> {DatasetName: square side}."""
    by_initial = {d.value[0]: d for d in DatasetName}
    _, fields = parse_compact(recipe["center_padded_shape"], "center_padded_shape")
    out = {}
    for name, value in fields.items():
        require(name.upper() in by_initial,
                f"unknown dataset initial {name!r} in center_padded_shape")
        require(isinstance(value, int) and value > 0 and value % 32 == 0,
                f"pad target {name}={value!r} must be a positive multiple of 32")
        out[by_initial[name.upper()]] = value
    return out


def train_config_from(recipe):
    momentum = recipe["optimizer_momentum"]
    if not isinstance(momentum, (list, tuple)):
        momentum = _parse_value(str(momentum).replace(" ", ""))
    require(isinstance(momentum, (list, tuple)) and len(momentum) == 2,
            f"optimizer_momentum must hold two betas, got {recipe['optimizer_momentum']!r}")
    return TrainConfig(
        base_lr=float(recipe["base_lr"]),
        warmup_epochs=int(recipe["lr_scheduler_warmup_epochs"]),
        cycle_epochs=int(recipe["lr_scheduler_cycle_epochs"]),
        eta_min=float(recipe["lr_scheduler_eta_min"]),
        betas=(float(momentum[0]), float(momentum[1])),
        weight_decay=float(recipe["weight_decay"]),
        batch_size=int(recipe["batch_size"]),
        threshold=float(recipe["binary_threshold"]),
        early_stop_epochs=int(recipe["early_stop_epochs"]),
        seed=int(recipe["seed"]),
    )


def augmentation_from(recipe):
    blur_flags, blur = parse_compact(str(recipe["random_blur"]), "random_blur")
    require("gaussian" in [f.lower() for f in blur_flags],
            f"random_blur must be gaussian, got {recipe['random_blur']!r}")
    kernels = _field(blur, "k", "random_blur")
    if not isinstance(kernels, list):
        kernels = [kernels]
    _, jitter = parse_compact(str(recipe["random_jitter"]), "random_jitter")
    _, hflip = parse_compact(str(recipe["random_horizontal_flip"]),
                             "random_horizontal_flip")
    _, persp = parse_compact(str(recipe["random_perspective"]), "random_perspective")
    _, resize = parse_compact(str(recipe["random_resize"]), "random_resize")
    scale = _field(resize, "s", "random_resize")
    require(isinstance(scale, list) and len(scale) == 2,
            f"random_resize scale must be a two-value range, got {recipe['random_resize']!r}")
    _, cut = parse_compact(str(recipe["cutmix"]), "cutmix")
    return AugmentationConfig(
        resize_prob=float(_field(resize, "prob", "random_resize")),
        resize_range=(float(scale[0]), float(scale[1])),
        crop_size=int(recipe["random_crop"]),
        hflip_prob=float(_field(hflip, "prob", "random_horizontal_flip")),
        perspective_prob=float(_field(persp, "prob", "random_perspective")),
        perspective_scale=float(_field(persp, "s", "random_perspective")),
        blur_prob=float(_field(blur, "prob", "random_blur")),
        blur_kernels=tuple(int(k) for k in kernels),
        jitter_prob=float(_field(jitter, "prob", "random_jitter")),
        jitter_brightness=float(_field(jitter, "b", "random_jitter")),
        jitter_contrast=float(_field(jitter, "c", "random_jitter")),
        jitter_saturation=float(_field(jitter, "s", "random_jitter")),
        jitter_hue=float(_field(jitter, "h", "random_jitter")),
        cutmix_prob=float(_field(cut, "prob", "cutmix")),
        cutmix_regions=int(_field(cut, "n", "cutmix")),
    )


def toggles_from(recipe):
    return Toggles(
        modern_blocks=bool(recipe["modern_blocks"]),
        guided_modules=bool(recipe["guided_modules"]),
        spatial_attention=bool(recipe["spatial_attention"]),
        decomposed_kernels=bool(recipe["decomposed_kernels"]),
        deep_supervision=bool(recipe["deep_supervision"]),
    )
