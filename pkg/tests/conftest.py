"""Shared fixtures: synthetic fundus-like samples, tiny on-disk dataset
trees, and a finite-difference gradient checker."""

import numpy as np
import cv2
import pytest
import torch
from PIL import Image

from fsgnet.data import SamplePair


def make_vessel_pair(shape=(96, 96), seed=0, dataset="DRIVE", n_vessels=6,
                     thickness=(2, 4)):
    """Fundus-like sample: warm smooth background, dark curvilinear vessels."""
    rng = np.random.default_rng(seed)
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    base = 150 + 30 * np.sin(2 * np.pi * xx / w + rng.uniform(0, 6)) \
               * np.cos(2 * np.pi * yy / h + rng.uniform(0, 6))
    image = np.stack([base * 1.1, base * 0.75, base * 0.55], axis=-1)
    mask = np.zeros((h, w), np.uint8)
    for _ in range(n_vessels):
        pts = rng.integers(0, [w, h], size=(4, 2)).astype(np.int32)
        cv2.polylines(mask, [pts.reshape(-1, 1, 2)], False, 1,
                      thickness=int(rng.integers(*thickness)))
    image[mask == 1] *= 0.45
    image = np.clip(image + rng.normal(0, 4, image.shape), 0, 255).astype(np.uint8)
    return SamplePair(image=image, mask=mask, id=f"synth{seed}", dataset=dataset)


@pytest.fixture
def vessel_pairs():
    return [make_vessel_pair(seed=s) for s in (1, 2)]


def _save(path, arr, mode=None):
    path.parent.mkdir(parents=True, exist_ok=True)
    img = Image.fromarray(arr) if mode is None else Image.fromarray(arr, mode)
    img.save(path)


def _mask_raster(shape, seed):
    rng = np.random.default_rng(seed)
    m = np.zeros(shape, np.uint8)
    for _ in range(4):
        pts = rng.integers(0, [shape[1], shape[0]], size=(3, 2)).astype(np.int32)
        cv2.polylines(m, [pts.reshape(-1, 1, 2)], False, 255, thickness=2)
    return m


def _image_raster(shape, seed):
    rng = np.random.default_rng(seed)
    return rng.integers(0, 256, size=shape + (3,), dtype=np.uint8).astype(np.uint8)


def make_drive_tree(root, size=(64, 64), n_train=2, n_test=2):
    """Miniature copy of the public DRIVE directory layout."""
    for part, count, start in (("training", n_train, 21), ("test", n_test, 1)):
        for i in range(count):
            num = start + i
            _save(root / part / "images" / f"{num:02d}_{part}.tif",
                  _image_raster(size, num))
            _save(root / part / "1st_manual" / f"{num:02d}_manual1.gif",
                  _mask_raster(size, num))
    return root


def make_stare_tree(root, size=(64, 64), n=4):
    for i in range(n):
        _save(root / "stare-images" / f"im{i + 1:04d}.ppm", _image_raster(size, i))
        _save(root / "labels-ah" / f"im{i + 1:04d}.ah.ppm", _mask_raster(size, i))
    return root


def make_chase_tree(root, size=(64, 64), n=4):
    names = ["01L", "01R", "02L", "02R", "03L", "03R"][:n]
    for i, stem in enumerate(names):
        _save(root / f"Image_{stem}.jpg", _image_raster(size, i))
        _save(root / f"Image_{stem}_1stHO.png", _mask_raster(size, i))
    return root


def make_hrf_tree(root, size=(64, 64), n=4):
    kinds = ["h", "dr", "g"]
    for i in range(n):
        stem = f"{i // 3 + 1:02d}_{kinds[i % 3]}"
        _save(root / "images" / f"{stem}.jpg", _image_raster(size, i))
        _save(root / "manual1" / f"{stem}.tif", _mask_raster(size, i))
    return root


def record_criterion(config, line):
    """Collects acceptance-criterion result lines for the terminal summary."""
    store = getattr(config, "_acceptance_lines", None)
    if store is None:
        store = []
        config._acceptance_lines = store
    store.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", None)
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


def fd_gradient_check(fn, inputs, step=1e-4, rtol=1e-4, seed=0):
    """Central finite differences along a random direction vs autograd.

    ``fn`` maps the (double-precision, leaf) inputs to a scalar.  Returns the
    relative error between the directional derivative and <grad, direction>.
    """
    gen = torch.Generator().manual_seed(seed)
    leaves = [x.detach().clone().double().requires_grad_(True) for x in inputs]
    out = fn(*leaves)
    assert out.dim() == 0, "fd check needs a scalar objective"
    grads = torch.autograd.grad(out, leaves, allow_unused=False)
    dirs = [torch.randn(x.shape, generator=gen, dtype=torch.float64)
            for x in leaves]
    norm = torch.sqrt(sum((d * d).sum() for d in dirs))
    dirs = [d / norm for d in dirs]
    analytic = float(sum((g * d).sum() for g, d in zip(grads, dirs)))
    with torch.no_grad():
        plus = fn(*[(x + step * d) for x, d in zip(leaves, dirs)])
        minus = fn(*[(x - step * d) for x, d in zip(leaves, dirs)])
    numeric = float((plus - minus) / (2.0 * step))
    scale = max(abs(analytic), abs(numeric), 1e-8)
    rel = abs(analytic - numeric) / scale
    assert rel < rtol, f"gradient mismatch: analytic {analytic:.3e} vs " \
                       f"numeric {numeric:.3e} (rel {rel:.2e})"
    return rel
