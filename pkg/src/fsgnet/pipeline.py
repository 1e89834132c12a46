"""Training, evaluation, and prediction drivers."""

import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch

from .data import (AugmentationConfig, PaddingRecord, SamplePair, augment,
                   center_pad, cutmix, pad_target_for, prepare_for_padding,
                   unpad, valid_region)
from .errors import DivergenceError, ValidationError, require
from .metrics import (MetricReport, ConfusionCounts, auc_score, confusion,
                      f1_score, report_from_counts)
from .network import FSGNet, ModelConfig, count_parameters
from .objective import SupervisionWeights, deep_supervision_loss

# Any weight beyond this magnitude marks a diverged run; converging models
# stay orders of magnitude below it.
_WEIGHT_BLOWUP = 1e8


@dataclass(frozen=True)
class TrainConfig:
    base_lr: float = 1e-3
    warmup_epochs: int = 20
    cycle_epochs: int = 100
    eta_min: float = 1e-5
    betas: tuple = (0.9, 0.999)
    weight_decay: float = 0.05
    batch_size: int = 4
    threshold: float = 0.5
    early_stop_epochs: int = 400
    seed: int = 42

    def __post_init__(self):
        require(self.base_lr > 0, "base_lr must be positive")
        require(self.warmup_epochs >= 0, "warmup_epochs must be non-negative")
        require(self.cycle_epochs >= 1, "cycle_epochs must be positive")
        require(0 <= self.eta_min <= self.base_lr,
                "eta_min must lie in [0, base_lr]")
        require(len(self.betas) == 2 and 0 <= self.betas[0] < 1 and 0 <= self.betas[1] < 1,
                f"betas must be two values in [0, 1), got {self.betas!r}")
        require(self.batch_size >= 1, "batch_size must be positive")
        require(0 < self.threshold < 1, "threshold must be in (0, 1)")
        require(self.early_stop_epochs >= 1, "early_stop_epochs must be positive")
        object.__setattr__(self, "betas", tuple(self.betas))

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "betas" in d:
            d["betas"] = tuple(d["betas"])
        return cls(**d)


def lr_at(epoch, cfg: TrainConfig):
    """Linear warmup from base_lr / warmup_epochs, then cosine cycles that
    restart at base_lr every cycle_epochs."""
    require(epoch >= 0, f"epoch must be non-negative, got {epoch}")
    w = cfg.warmup_epochs
    if w > 0 and epoch < w:
        frac = epoch / w
        return cfg.base_lr * (1.0 / w + (1.0 - 1.0 / w) * frac)
    t = (epoch - w) % cfg.cycle_epochs
    cos = math.cos(math.pi * t / cfg.cycle_epochs)
    return cfg.eta_min + 0.5 * (cfg.base_lr - cfg.eta_min) * (1.0 + cos)


class EarlyStopping:
    """Stops when the tracked score has not strictly improved for
    ``patience`` consecutive updates."""

    def __init__(self, patience):
        require(patience >= 1, "patience must be positive")
        self.patience = patience
        self.best = None
        self.stale = 0

    def update(self, score):
        if self.best is None or score > self.best:
            self.best = score
            self.stale = 0
            return True
        self.stale += 1
        return False

    @property
    def should_stop(self):
        return self.stale >= self.patience


@dataclass
class Checkpoint:
    model_config: ModelConfig
    train_config: TrainConfig
    state_dict: dict
    epoch: int
    best_val_f1: float
    history: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)
    rng_state: torch.Tensor = None  # torch CPU RNG state at save time


def sidecar_path(path):
    return Path(str(path) + ".json")


def save_checkpoint(ckpt: Checkpoint, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "model_config": ckpt.model_config.to_dict(),
        "train_config": ckpt.train_config.to_dict(),
        "state_dict": ckpt.state_dict,
        "epoch": ckpt.epoch,
        "best_val_f1": ckpt.best_val_f1,
        "history": ckpt.history,
        "metadata": ckpt.metadata,
        "rng_state": ckpt.rng_state,
    }
    torch.save(payload, path)
    doc = {
        "model_config": ckpt.model_config.to_dict(),
        "train_config": ckpt.train_config.to_dict(),
        "seed": ckpt.train_config.seed,
        "epoch": ckpt.epoch,
        "best_val_f1": ckpt.best_val_f1,
        "parameter_count": count_parameters(ckpt.model_config),
        "metadata": ckpt.metadata,
    }
    sidecar_path(path).write_text(json.dumps(doc, indent=2, default=str) + "\n")
    return path


def load_checkpoint(path, expect_model_config: ModelConfig = None):
    """Load a checkpoint; the sidecar document must agree with the stored
    weights' config (and with ``expect_model_config`` when given) before any
    weight is accepted."""
    path = Path(path)
    require(path.is_file(), f"checkpoint {path} does not exist")
    side = sidecar_path(path)
    require(side.is_file(), f"checkpoint sidecar {side} is missing")
    doc = json.loads(side.read_text())
    payload = torch.load(path, map_location="cpu", weights_only=False)
    cfg_side = ModelConfig.from_dict(doc["model_config"])
    cfg_payload = ModelConfig.from_dict(payload["model_config"])
    require(cfg_side == cfg_payload,
            "sidecar model config disagrees with the stored weights")
    if expect_model_config is not None:
        require(cfg_payload == expect_model_config,
                "checkpoint model config does not match the requested config; "
                "refusing to assign weights")
    return Checkpoint(model_config=cfg_payload,
                      train_config=TrainConfig.from_dict(payload["train_config"]),
                      state_dict=payload["state_dict"],
                      epoch=payload["epoch"],
                      best_val_f1=payload["best_val_f1"],
                      history=payload.get("history", []),
                      metadata=payload.get("metadata", {}),
                      rng_state=payload.get("rng_state"))


def model_from_checkpoint(ckpt: Checkpoint):
    model = FSGNet(ckpt.model_config)
    model.load_state_dict(ckpt.state_dict, strict=True)
    model.eval()
    return model


def _to_batch(samples, device):
    images = np.stack([s.image for s in samples]).astype(np.float32) / 255.0
    masks = np.stack([s.mask for s in samples]).astype(np.float32)
    x = torch.from_numpy(images).permute(0, 3, 1, 2).contiguous().to(device)
    y = torch.from_numpy(masks)[:, None].to(device)
    return x, y


def _epoch_sample_list(n, batch_size):
    # The sample list repeats so every epoch sees at least two full batches.
    target = max(n, 2 * batch_size)
    reps = math.ceil(target / n)
    return [i % n for i in range(n * reps)]


def _draw_sample(pairs, epoch_list, position, aug, rng):
    pair = pairs[epoch_list[position]]
    out = augment(pair, aug, rng)
    if rng.random() < aug.cutmix_prob:
        j = int(rng.integers(0, len(epoch_list)))
        partner = augment(pairs[epoch_list[j]], aug, rng)
        out = cutmix(out, partner, aug, rng)
    return out


def predict_probabilities(model, pair: SamplePair, dataset=None, device="cpu"):
    """Full-resolution padded forward pass; returns (all head probabilities at
    padded scale, padding record, prepared ground-truth mask)."""
    prepared = prepare_for_padding(pair)
    th, tw = pad_target_for(*prepared.mask.shape, dataset=dataset)
    image, rec = center_pad(prepared.image, th, tw)
    x = torch.from_numpy(image.astype(np.float32) / 255.0)
    x = x.permute(2, 0, 1)[None].to(device)
    was_training = model.training
    model.eval()
    with torch.no_grad():
        preds = model(x)
    if was_training:
        model.train()
    heads = [h[0, 0].cpu().numpy() for h in preds]
    return heads, rec, prepared.mask


def evaluate(model, pairs, dataset=None, threshold=0.5, device="cpu"):
    """Dataset-level metrics over the unpadded regions of every sample.

    Counts are micro-aggregated; AUC pools every valid pixel's score.
    Returns (MetricReport, list of (sample id, per-image MetricReport)).
    """
    require(len(pairs) > 0, "evaluate needs at least one sample")
    total = ConfusionCounts()
    pooled_scores = []
    pooled_labels = []
    per_image = []
    for pair in pairs:
        heads, rec, mask = predict_probabilities(model, pair, dataset, device)
        prob = unpad(heads[0], rec)
        counts = confusion(prob, mask, threshold=threshold)
        auc = auc_score(prob, mask)
        per_image.append((pair.id, report_from_counts(counts, auc)))
        total = total + counts
        pooled_scores.append(prob.astype(np.float32).ravel())
        pooled_labels.append(mask.astype(bool).ravel())
    pooled_auc = auc_score(np.concatenate(pooled_scores),
                           np.concatenate(pooled_labels))
    return report_from_counts(total, pooled_auc), per_image


def train(model_cfg: ModelConfig, train_cfg: TrainConfig, train_pairs,
          val_pairs, aug: AugmentationConfig = None, dataset=None,
          max_epochs=None, device="cpu", log_fn=None):
    """Full training run; returns the best-F1 checkpoint.

    Every random draw derives from train_cfg.seed, so two runs with equal
    inputs produce identical trajectories.
    """
    require(len(train_pairs) > 0, "no training samples")
    require(len(val_pairs) > 0, "no validation samples")
    if aug is None:
        aug = AugmentationConfig()
    torch.manual_seed(train_cfg.seed)
    model = FSGNet(model_cfg).to(device)
    optimizer = torch.optim.AdamW(model.parameters(), lr=train_cfg.base_lr,
                                  betas=train_cfg.betas,
                                  weight_decay=train_cfg.weight_decay)
    weights = SupervisionWeights(alpha=(1.0,) * model_cfg.head_count())
    stopper = EarlyStopping(train_cfg.early_stop_epochs)
    epoch_list = _epoch_sample_list(len(train_pairs), train_cfg.batch_size)
    n_batches = len(epoch_list) // train_cfg.batch_size

    best_state = None
    best_epoch = -1
    history = []
    epoch = 0
    while max_epochs is None or epoch < max_epochs:
        lr = lr_at(epoch, train_cfg)
        for group in optimizer.param_groups:
            group["lr"] = lr
        order_rng = np.random.default_rng([train_cfg.seed, epoch])
        order = order_rng.permutation(len(epoch_list))

        model.train()
        losses = []
        for b in range(n_batches):
            positions = order[b * train_cfg.batch_size:(b + 1) * train_cfg.batch_size]
            samples = [
                _draw_sample(train_pairs, epoch_list, int(pos), aug,
                             np.random.default_rng([train_cfg.seed, epoch, int(pos)]))
                for pos in positions
            ]
            x, y = _to_batch(samples, device)
            optimizer.zero_grad()
            preds = model(x)
            if not all(bool(torch.isfinite(h).all()) for h in preds):
                raise DivergenceError(
                    f"non-finite predictions at epoch {epoch}, batch {b} "
                    f"(lr={lr:.6g}); the run has diverged")
            loss = deep_supervision_loss(preds, y, weights)
            value = float(loss.detach())
            if not math.isfinite(value):
                raise DivergenceError(
                    f"non-finite training loss at epoch {epoch}, batch {b} "
                    f"(lr={lr:.6g})")
            loss.backward()
            optimizer.step()
            with torch.no_grad():
                for p in model.parameters():
                    if not torch.isfinite(p).all() or p.abs().max() > _WEIGHT_BLOWUP:
                        raise DivergenceError(
                            f"model weights exploded at epoch {epoch}, batch {b} "
                            f"(lr={lr:.6g}); the run has diverged")
            losses.append(value)

        report, _ = evaluate(model, val_pairs, dataset=dataset,
                             threshold=train_cfg.threshold, device=device)
        val_f1 = report.f1
        improved = stopper.update(val_f1)
        if improved:
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
            best_epoch = epoch
        history.append({"epoch": epoch, "lr": lr,
                        "loss": float(np.mean(losses)), "val_f1": val_f1})
        if log_fn is not None:
            log_fn(f"epoch {epoch}: lr={lr:.6f} loss={np.mean(losses):.4f} "
                   f"val_f1={val_f1:.3f} best={stopper.best:.3f} (epoch {best_epoch})")
        epoch += 1
        if stopper.should_stop:
            break

    return Checkpoint(model_config=model_cfg, train_config=train_cfg,
                      state_dict=best_state, epoch=best_epoch,
                      best_val_f1=stopper.best, history=history,
                      metadata={"dataset": str(dataset) if dataset else None,
                                "epochs_run": epoch},
                      rng_state=torch.get_rng_state())


def predict_to_files(model, pair: SamplePair, out_dir, threshold=0.5,
                     dataset=None, device="cpu"):
    """Write the binary mask and one probability raster per head, all at the
    original (unpadded) resolution.  Returns the written paths."""
    import cv2

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    heads, rec, _ = predict_probabilities(model, pair, dataset, device)
    full = unpad(heads[0], rec)
    paths = []
    mask_path = out_dir / f"{pair.id}_mask.png"
    cv2.imwrite(str(mask_path), ((full > threshold) * 255).astype(np.uint8))
    paths.append(mask_path)
    for d, head in enumerate(heads, start=1):
        if head.shape != (rec.pad_h, rec.pad_w):
            head = cv2.resize(head, (rec.pad_w, rec.pad_h),
                              interpolation=cv2.INTER_LINEAR)
        prob = unpad(head, rec)
        head_path = out_dir / f"{pair.id}_head{d}.png"
        cv2.imwrite(str(head_path), np.clip(prob * 255.0, 0, 255).astype(np.uint8))
        paths.append(head_path)
    return paths


def cross_evaluate(model, pairs_b, dataset_b, baseline: MetricReport,
                   threshold=0.5, device="cpu"):
    """Evaluate on a foreign dataset and report deltas against the in-domain
    baseline report (positive delta = better than baseline)."""
    report, per_image = evaluate(model, pairs_b, dataset=dataset_b,
                                 threshold=threshold, device=device)
    deltas = {name: getattr(report, name) - getattr(baseline, name)
              for name in report.as_dict()}
    return report, deltas, per_image


def format_cross_row(model_name, transfer, report, deltas, delimiter="\t"):
    """Row of 'value (signed delta)' cells, deltas at two decimals."""
    cells = [str(model_name), str(transfer)]
    for name, value in report.as_dict().items():
        cells.append(f"{value:.3f} ({deltas[name]:+.2f})")
    return delimiter.join(cells)
