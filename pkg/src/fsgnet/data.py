"""Dataset ingestion, center padding, and training-time augmentation for the
four public fundus vessel benchmarks."""

import gzip
import io
import math
import os
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import cv2
import numpy as np
from PIL import Image

from .errors import ValidationError, require

DATA_ROOT_ENV = "FSGNET_DATA_ROOT"


class DatasetName(str, Enum):
    DRIVE = "DRIVE"
    STARE = "STARE"
    CHASE_DB1 = "CHASE_DB1"
    HRF = "HRF"


# Square padded evaluation shapes, one per dataset.
PAD_TARGETS = {
    DatasetName.DRIVE: 608,
    DatasetName.STARE: 704,
    DatasetName.CHASE_DB1: 1024,
    DatasetName.HRF: 1344,
}

# HRF originals are far larger than the padded square; their longer side is
# resized down to this before padding.
HRF_LONGER_SIDE = 1344

PAD_MULTIPLE = 32


@dataclass
class SamplePair:
    """One fundus image with its binary vessel annotation."""

    image: np.ndarray  # uint8, (H, W, 3)
    mask: np.ndarray   # uint8 in {0, 1}, (H, W)
    id: str
    dataset: str

    def __post_init__(self):
        require(self.image.ndim == 3 and self.image.shape[2] == 3,
                f"{self.id}: image must be (H, W, 3), got {self.image.shape}")
        require(self.mask.ndim == 2, f"{self.id}: mask must be 2D, got {self.mask.shape}")
        require(self.image.shape[:2] == self.mask.shape,
                f"{self.id}: image {self.image.shape[:2]} and mask "
                f"{self.mask.shape} dimensions differ")
        bad = set(np.unique(self.mask)) - {0, 1}
        require(not bad, f"{self.id}: mask values outside {{0, 1}}: {sorted(bad)}")


@dataclass(frozen=True)
class PaddingRecord:
    """Placement of the original raster inside the zero-padded canvas."""

    orig_h: int
    orig_w: int
    pad_h: int
    pad_w: int
    top: int
    left: int


@dataclass(frozen=True)
class AugmentationConfig:
    resize_prob: float = 0.8
    resize_range: tuple = (0.5, 2.0)
    crop_size: int = 288
    crop_prob: float = 1.0          # at 0, the crop is deterministic (centered)
    hflip_prob: float = 0.5
    perspective_prob: float = 0.3
    perspective_scale: float = 0.3
    blur_prob: float = 0.8
    blur_kernels: tuple = (3, 5, 7, 9, 11)
    jitter_prob: float = 0.8
    jitter_brightness: float = 0.2
    jitter_contrast: float = 0.2
    jitter_saturation: float = 0.2
    jitter_hue: float = 0.1
    cutmix_prob: float = 0.8
    cutmix_regions: int = 1
    cutmix_area: tuple = (0.1, 0.5)

    def __post_init__(self):
        for name in ("resize_prob", "crop_prob", "hflip_prob", "perspective_prob",
                     "blur_prob", "jitter_prob", "cutmix_prob"):
            v = getattr(self, name)
            require(0.0 <= v <= 1.0, f"{name} must be in [0, 1], got {v}")
        require(self.resize_range[0] > 0 and self.resize_range[0] <= self.resize_range[1],
                f"bad resize_range {self.resize_range}")
        require(self.crop_size >= 1, "crop_size must be positive")
        require(all(k % 2 == 1 and k >= 1 for k in self.blur_kernels),
                f"blur kernels must be odd, got {self.blur_kernels}")
        require(0.0 < self.cutmix_area[0] <= self.cutmix_area[1] <= 1.0,
                f"bad cutmix_area {self.cutmix_area}")
        require(0.0 <= self.jitter_hue <= 0.5, "jitter_hue must be in [0, 0.5]")

    def deterministic(self):
        """Copy with every probability forced to zero (center crop only)."""
        return AugmentationConfig(
            resize_prob=0.0, resize_range=self.resize_range,
            crop_size=self.crop_size, crop_prob=0.0, hflip_prob=0.0,
            perspective_prob=0.0, perspective_scale=self.perspective_scale,
            blur_prob=0.0, blur_kernels=self.blur_kernels, jitter_prob=0.0,
            jitter_brightness=self.jitter_brightness,
            jitter_contrast=self.jitter_contrast,
            jitter_saturation=self.jitter_saturation,
            jitter_hue=self.jitter_hue, cutmix_prob=0.0,
            cutmix_regions=self.cutmix_regions, cutmix_area=self.cutmix_area)


def resolve_data_root(root, dataset):
    """Dataset directory: explicit root wins, else the env var override."""
    if root is not None:
        return Path(root)
    env = os.environ.get(DATA_ROOT_ENV)
    require(env is not None,
            f"no dataset root given and {DATA_ROOT_ENV} is not set")
    return Path(env) / DatasetName(dataset).value


def _open_raster(path):
    p = Path(path)
    if p.suffix == ".gz":
        with gzip.open(p, "rb") as fh:
            return Image.open(io.BytesIO(fh.read())).copy()
    return Image.open(p)


def _load_image(path):
    return np.asarray(_open_raster(path).convert("RGB"), dtype=np.uint8)


def _load_mask(path):
    img = _open_raster(path)
    if img.mode in ("L", "1", "P", "I", "I;16"):
        arr = np.asarray(img.convert("L"))
        return (arr > 127).astype(np.uint8)
    # Color sources must be strictly two-valued after the luminance collapse;
    # anything else means the file is not an annotation mask.
    rgb = np.asarray(img.convert("RGB"), dtype=np.float64)
    lum = np.rint(0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2])
    values = set(np.unique(lum).astype(int).tolist())
    require(values.issubset({0, 255}),
            f"color mask {path} has luminance values {sorted(values)[:8]}; "
            "expected only 0 and 255")
    return (lum > 127).astype(np.uint8)


def _require_dir(root, rel):
    p = Path(root) / rel
    require(p.is_dir(), f"expected directory {p} (dataset layout: .../{rel})")
    return p


def _glob_sorted(directory, patterns):
    out = []
    for pat in patterns:
        out.extend(directory.glob(pat))
    return sorted(set(out))


def _pair_files(images, masks, key, what):
    mask_by_key = {key(m): m for m in masks}
    pairs = []
    for img in images:
        k = key(img)
        require(k in mask_by_key, f"no {what} annotation found for {img.name}")
        pairs.append((img, mask_by_key[k]))
    return pairs


def _drive_pairs(root):
    pairs = []
    for part in ("training", "test"):
        images = _glob_sorted(_require_dir(root, f"{part}/images"), ("*.tif", "*.png"))
        masks = _glob_sorted(_require_dir(root, f"{part}/1st_manual"),
                             ("*.gif", "*.png", "*.tif"))
        require(images, f"no images under {root}/{part}/images")
        key = lambda p: p.name.split("_")[0]
        pairs += [(i, m, f"{part}_{key(i)}") for i, m in _pair_files(images, masks, key, part)]
    return pairs


def _stare_pairs(root):
    images = _glob_sorted(_require_dir(root, "stare-images"), ("*.ppm", "*.ppm.gz"))
    masks = _glob_sorted(_require_dir(root, "labels-ah"), ("*.ppm", "*.ppm.gz"))
    require(images, f"no images under {root}/stare-images")
    key = lambda p: p.name.split(".")[0]
    return [(i, m, key(i)) for i, m in _pair_files(images, masks, key, "labels-ah")]


def _chase_pairs(root):
    root = Path(root)
    require(root.is_dir(), f"expected directory {root}")
    images = _glob_sorted(root, ("Image_*.jpg", "Image_*.png"))
    images = [p for p in images if "1stHO" not in p.name and "2ndHO" not in p.name]
    masks = _glob_sorted(root, ("Image_*_1stHO.png", "Image_*_1stHO.gif"))
    require(images, f"no Image_*.jpg files under {root}")
    key = lambda p: p.name.split("_")[1].split(".")[0]
    return [(i, m, key(i)) for i, m in _pair_files(images, masks, key, "1stHO")]


def _hrf_pairs(root):
    images = _glob_sorted(_require_dir(root, "images"), ("*.jpg", "*.JPG", "*.png"))
    masks = _glob_sorted(_require_dir(root, "manual1"), ("*.tif", "*.png"))
    require(images, f"no images under {root}/images")
    key = lambda p: p.name.rsplit(".", 1)[0]
    return [(i, m, key(i)) for i, m in _pair_files(images, masks, key, "manual1")]


_LAYOUTS = {
    DatasetName.DRIVE: _drive_pairs,
    DatasetName.STARE: _stare_pairs,
    DatasetName.CHASE_DB1: _chase_pairs,
    DatasetName.HRF: _hrf_pairs,
}


def load_dataset(dataset, root=None):
    """Load every (image, mask) pair of a benchmark in its published layout."""
    name = DatasetName(dataset)
    root = resolve_data_root(root, name)
    require(Path(root).is_dir(), f"dataset root {root} does not exist")
    pairs = []
    for img_path, mask_path, sample_id in _LAYOUTS[name](root):
        pairs.append(SamplePair(image=_load_image(img_path),
                                mask=_load_mask(mask_path),
                                id=sample_id, dataset=name.value))
    require(pairs, f"no samples found for {name.value} under {root}")
    return pairs


def split_dataset(pairs, dataset):
    """DRIVE uses its official directory split; the other benchmarks take the
    first half (rounded up) of the filename-sorted list for training."""
    name = DatasetName(dataset)
    if name is DatasetName.DRIVE:
        train = [p for p in pairs if p.id.startswith("training")]
        test = [p for p in pairs if p.id.startswith("test")]
        require(train and test, "DRIVE split needs both training/ and test/ samples")
        return train, test
    ordered = sorted(pairs, key=lambda p: p.id)
    cut = math.ceil(len(ordered) / 2)
    require(0 < cut < len(ordered), f"cannot split {len(ordered)} samples 1:1")
    return ordered[:cut], ordered[cut:]


def pad_target_for(arr_h, arr_w, dataset=None):
    if dataset is not None:
        side = PAD_TARGETS[DatasetName(dataset)]
        return side, side
    up = lambda v: ((v + PAD_MULTIPLE - 1) // PAD_MULTIPLE) * PAD_MULTIPLE
    return up(arr_h), up(arr_w)


def center_pad(arr, target_h=None, target_w=None):
    """Zero-pad ``arr`` to the target, centering the original raster.

    With no target, each dimension is rounded up to the next multiple of 32.
    Returns the padded array and the PaddingRecord needed to undo it.
    """
    require(arr.ndim in (2, 3), f"can only pad 2D or 3D arrays, got {arr.ndim}D")
    h, w = arr.shape[:2]
    if target_h is None and target_w is None:
        target_h, target_w = pad_target_for(h, w)
    require(target_h >= h and target_w >= w,
            f"pad target {(target_h, target_w)} smaller than input {(h, w)}")
    top = (target_h - h) // 2
    left = (target_w - w) // 2
    shape = (target_h, target_w) + arr.shape[2:]
    out = np.zeros(shape, dtype=arr.dtype)
    out[top:top + h, left:left + w] = arr
    rec = PaddingRecord(orig_h=h, orig_w=w, pad_h=target_h, pad_w=target_w,
                        top=top, left=left)
    return out, rec


def unpad(arr, rec: PaddingRecord):
    require(arr.shape[:2] == (rec.pad_h, rec.pad_w),
            f"array shape {arr.shape[:2]} does not match padding record "
            f"{(rec.pad_h, rec.pad_w)}")
    return arr[rec.top:rec.top + rec.orig_h, rec.left:rec.left + rec.orig_w]


def valid_region(rec: PaddingRecord):
    """Boolean map of the unpadded region inside the padded canvas."""
    mask = np.zeros((rec.pad_h, rec.pad_w), dtype=bool)
    mask[rec.top:rec.top + rec.orig_h, rec.left:rec.left + rec.orig_w] = True
    return mask


def resize_longer_side(pair: SamplePair, longer):
    """Downscale so the longer side equals ``longer`` (mask re-binarized)."""
    h, w = pair.mask.shape
    scale = longer / max(h, w)
    if scale >= 1.0:
        return pair
    nh, nw = round(h * scale), round(w * scale)
    image = cv2.resize(pair.image, (nw, nh), interpolation=cv2.INTER_LINEAR)
    soft = cv2.resize(pair.mask.astype(np.float32), (nw, nh),
                      interpolation=cv2.INTER_LINEAR)
    return SamplePair(image=image, mask=(soft >= 0.5).astype(np.uint8),
                      id=pair.id, dataset=pair.dataset)


def prepare_for_padding(pair: SamplePair):
    """Dataset-specific pre-resize applied before center padding."""
    if pair.dataset == DatasetName.HRF.value:
        return resize_longer_side(pair, HRF_LONGER_SIDE)
    return pair


def _resize_pair(image, mask, nh, nw):
    image = cv2.resize(image, (nw, nh), interpolation=cv2.INTER_LINEAR)
    soft = cv2.resize(mask.astype(np.float32), (nw, nh),
                      interpolation=cv2.INTER_LINEAR)
    return image, (soft >= 0.5).astype(np.uint8)


def _random_resize(image, mask, cfg, rng):
    h, w = mask.shape
    scale = 1.0
    if rng.random() < cfg.resize_prob:
        scale = rng.uniform(*cfg.resize_range)
    # The crop must always fit, so the scale is floored accordingly.
    floor = cfg.crop_size / min(h, w)
    scale = max(scale, floor)
    if scale == 1.0:
        return image, mask
    nh = max(cfg.crop_size, round(h * scale))
    nw = max(cfg.crop_size, round(w * scale))
    return _resize_pair(image, mask, nh, nw)


def _crop(image, mask, cfg, rng):
    h, w = mask.shape
    c = cfg.crop_size
    require(h >= c and w >= c, f"crop {c} larger than image {(h, w)}")
    if rng.random() < cfg.crop_prob:
        top = int(rng.integers(0, h - c + 1))
        left = int(rng.integers(0, w - c + 1))
    else:
        top, left = (h - c) // 2, (w - c) // 2
    return image[top:top + c, left:left + c], mask[top:top + c, left:left + c]


def _perspective(image, mask, cfg, rng):
    h, w = mask.shape
    dx = cfg.perspective_scale * w / 2.0
    dy = cfg.perspective_scale * h / 2.0
    src = np.float32([[0, 0], [w - 1, 0], [w - 1, h - 1], [0, h - 1]])
    jitter = np.float32([[rng.uniform(0, dx), rng.uniform(0, dy)],
                         [-rng.uniform(0, dx), rng.uniform(0, dy)],
                         [-rng.uniform(0, dx), -rng.uniform(0, dy)],
                         [rng.uniform(0, dx), -rng.uniform(0, dy)]])
    dst = src + jitter
    mat = cv2.getPerspectiveTransform(src, dst)
    image = cv2.warpPerspective(image, mat, (w, h), flags=cv2.INTER_LINEAR)
    soft = cv2.warpPerspective(mask.astype(np.float32), mat, (w, h),
                               flags=cv2.INTER_LINEAR)
    return image, (soft >= 0.5).astype(np.uint8)


def _luminance(image_f):
    return (0.299 * image_f[..., 0] + 0.587 * image_f[..., 1]
            + 0.114 * image_f[..., 2])


def _color_jitter(image, cfg, rng):
    img = image.astype(np.float32)
    # Factor order is fixed (brightness, contrast, saturation, hue) so a seeded
    # stream reproduces exactly.
    fb = rng.uniform(max(0.0, 1 - cfg.jitter_brightness), 1 + cfg.jitter_brightness)
    fc = rng.uniform(max(0.0, 1 - cfg.jitter_contrast), 1 + cfg.jitter_contrast)
    fs = rng.uniform(max(0.0, 1 - cfg.jitter_saturation), 1 + cfg.jitter_saturation)
    fh = rng.uniform(-cfg.jitter_hue, cfg.jitter_hue)
    img = img * fb
    gray_mean = _luminance(img).mean()
    img = gray_mean + (img - gray_mean) * fc
    gray = _luminance(img)[..., None]
    img = gray + (img - gray) * fs
    img = np.clip(img, 0, 255).astype(np.uint8)
    if cfg.jitter_hue > 0:
        hsv = cv2.cvtColor(img, cv2.COLOR_RGB2HSV)
        shift = int(round(fh * 180.0))
        hsv[..., 0] = (hsv[..., 0].astype(np.int32) + shift) % 180
        img = cv2.cvtColor(hsv.astype(np.uint8), cv2.COLOR_HSV2RGB)
    return img


def augment(pair: SamplePair, cfg: AugmentationConfig, rng):
    """Sample one augmented crop.  Geometric transforms touch image and mask
    together (mask re-binarized); photometric transforms touch the image only.
    Order: resize, crop, flip, perspective, blur, jitter."""
    image, mask = pair.image, pair.mask
    image, mask = _random_resize(image, mask, cfg, rng)
    image, mask = _crop(image, mask, cfg, rng)
    if rng.random() < cfg.hflip_prob:
        image, mask = image[:, ::-1].copy(), mask[:, ::-1].copy()
    if rng.random() < cfg.perspective_prob:
        image, mask = _perspective(image, mask, cfg, rng)
    if rng.random() < cfg.blur_prob:
        k = int(rng.choice(np.asarray(cfg.blur_kernels)))
        image = cv2.GaussianBlur(image, (k, k), 0)
    if rng.random() < cfg.jitter_prob:
        image = _color_jitter(image, cfg, rng)
    return SamplePair(image=np.ascontiguousarray(image),
                      mask=np.ascontiguousarray(mask),
                      id=pair.id, dataset=pair.dataset)


def cutmix(target: SamplePair, source: SamplePair, cfg: AugmentationConfig, rng):
    """Paste rectangular patches of ``source`` into ``target`` (image and mask
    move together, so every pixel keeps exactly one provenance)."""
    require(target.mask.shape == source.mask.shape,
            f"cutmix needs equal shapes, got {target.mask.shape} vs {source.mask.shape}")
    image = target.image.copy()
    mask = target.mask.copy()
    h, w = mask.shape
    for _ in range(cfg.cutmix_regions):
        area = rng.uniform(*cfg.cutmix_area)
        side = math.sqrt(area)
        rh = max(1, round(h * side))
        rw = max(1, round(w * side))
        cy = int(rng.integers(0, h))
        cx = int(rng.integers(0, w))
        y0, y1 = max(0, cy - rh // 2), min(h, cy - rh // 2 + rh)
        x0, x1 = max(0, cx - rw // 2), min(w, cx - rw // 2 + rw)
        image[y0:y1, x0:x1] = source.image[y0:y1, x0:x1]
        mask[y0:y1, x0:x1] = source.mask[y0:y1, x0:x1]
    return SamplePair(image=image, mask=mask,
                      id=f"{target.id}+{source.id}", dataset=target.dataset)
