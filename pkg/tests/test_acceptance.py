"""Acceptance suite: twelve gate criteria, one verdict line per criterion.

Each test prints a single "criterion NN: PASS/FAIL - ..." line (echoed again
in the terminal summary) and asserts the stated tolerance.  Criterion 12 is
informational: it checks the shipped long-run recipe but does not execute the
multi-hour training it describes.
"""

import math
import time
from pathlib import Path

import numpy as np
import torch

from fsgnet.blocks import (BlockConfig, DoubleConv, DownConvBlock,
                           InvertedResidualUnit, LayerNorm2d, ResidualBlock,
                           SpatialAttention, UpConv)
from fsgnet.config import DEFAULT_RECIPE, RECIPE_KEYS, load_run_config
from fsgnet.data import AugmentationConfig, center_pad, valid_region
from fsgnet.guided_filter import (WindowSpec, attention_guided_coefficients,
                                  attention_guided_filter,
                                  guided_filter_coefficients, guided_filter)
from fsgnet.metrics import auc_score, confusion, rank_average, scalar_metrics
from fsgnet.network import (FSGNet, GuidedResidualModule, ModelConfig,
                            VARIANTS, build_variant, count_parameters)
from fsgnet.objective import (SupervisionWeights, bce_loss,
                              deep_supervision_loss, dice_loss)
from fsgnet.pipeline import (TrainConfig, evaluate, load_checkpoint,
                             model_from_checkpoint, predict_probabilities,
                             save_checkpoint, train, unpad)
from conftest import fd_gradient_check, make_vessel_pair, record_criterion
from test_metrics import brute_counts, trapezoid_auc


def check(request, num, ok, detail):
    line = f"criterion {num:02d}: {'PASS' if ok else 'FAIL'} - {detail}"
    record_criterion(request.config, line)
    assert ok, line


def test_criterion_01_closed_form_vs_normal_equations(request):
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    eps_cycle = (0.0, 0.01, 1.0)
    worst = 0.0
    for t in range(500):
        side = int(rng.choice([3, 5, 7]))
        eps = eps_cycle[t % 3]
        guide = rng.normal(size=(side, side))
        inp = rng.normal(size=(side, side))
        att = rng.uniform(0.05, 1.0, size=(side, side))
        spec = WindowSpec(radius=side // 2, regularizer_eps=eps)
        coef = attention_guided_coefficients(torch.from_numpy(guide),
                                             torch.from_numpy(inp),
                                             torch.from_numpy(att), spec)
        # the window at the center pixel covers the whole image, so the
        # independent solve can use plain full-array sums
        m2 = att * att
        sw = m2.sum()
        si = (m2 * guide).sum()
        sg = (m2 * inp).sum()
        sii = (m2 * guide * guide).sum()
        sig = (m2 * guide * inp).sum()
        a_ref, b_ref = np.linalg.solve(np.array([[sii + eps, si], [si, sw]]),
                                       np.array([sig, sg]))
        c = side // 2
        for got, ref in ((float(coef.a[c, c]), a_ref),
                         (float(coef.b[c, c]), b_ref)):
            worst = max(worst, abs(got - ref) / max(1.0, abs(ref)))
    elapsed = time.perf_counter() - start
    check(request, 1, worst < 1e-6 and elapsed < 10.0,
          f"closed form matches the weighted normal equations on 500 windows "
          f"(max rel err {worst:.2e} < 1e-6, {elapsed:.1f}s < 10s)")


def test_criterion_02_unit_attention_reduction(request):
    rng = np.random.default_rng(7)
    worst = 0.0
    for t in range(50):
        radius = (1, 2, 3)[t % 3]
        eps = (1e-4, 1e-2, 1.0)[(t // 3) % 3]
        guide = torch.from_numpy(rng.normal(size=(32, 32)))
        inp = torch.from_numpy(rng.normal(size=(32, 32)))
        spec = WindowSpec(radius=radius, regularizer_eps=eps)
        att = attention_guided_coefficients(guide, inp,
                                            torch.ones_like(guide), spec)
        # per-pixel clipped-window sample counts, computed directly
        idx = np.arange(32)
        span = (np.minimum(idx + radius, 31) - np.maximum(idx - radius, 0) + 1)
        counts = torch.from_numpy(np.outer(span, span).astype(np.float64))
        classical = guided_filter_coefficients(guide, inp, spec,
                                               eps=eps / counts)
        out_att = att.a_bar * guide + att.b_bar
        out_cls = classical.a_bar * guide + classical.b_bar
        worst = max(worst, float((out_att - out_cls).abs().max()),
                    float((att.a - classical.a).abs().max()),
                    float((att.b - classical.b).abs().max()))
    check(request, 2, worst < 1e-6,
          f"unit attention reduces to the classical filter with eps/|w| "
          f"regularizer on 50 random 32x32 images (max abs diff {worst:.2e} "
          f"< 1e-6)")


def test_criterion_03_gradient_suite(request):
    start = time.perf_counter()
    torch.manual_seed(0)
    spec = WindowSpec(radius=2, regularizer_eps=1e-2)
    results = []

    def weighted(module, *shapes):
        def objective(*inputs):
            out = module(*inputs)
            wts = torch.randn(out.shape,
                              generator=torch.Generator().manual_seed(9),
                              dtype=torch.float64)
            return (out * wts).sum()
        return objective, [torch.rand(*s, dtype=torch.float64) for s in shapes]

    fn, xs = weighted(lambda g, p: guided_filter(g, p, spec),
                      (1, 2, 12, 12), (1, 2, 12, 12))
    results.append(("guided_filter", fd_gradient_check(fn, xs)))

    att = torch.rand(1, 1, 12, 12, dtype=torch.float64) * 0.8 + 0.1
    fn, xs = weighted(
        lambda g, p, m: attention_guided_filter(g, p, m.clamp(0.01, 0.99), spec),
        (1, 2, 12, 12), (1, 2, 6, 6), (1, 1, 12, 12))
    xs[2] = att
    results.append(("attention_guided_filter", fd_gradient_check(fn, xs)))

    grm = GuidedResidualModule(3, 3, WindowSpec(radius=1)).double().eval()
    fn, xs = weighted(grm, (1, 3, 8, 8), (1, 3, 4, 4))
    results.append(("guided_residual_module", fd_gradient_check(fn, xs)))

    blocks = [
        ("inverted_residual_3x3",
         InvertedResidualUnit(BlockConfig(in_channels=8, out_channels=8))),
        ("inverted_residual_7x7",
         InvertedResidualUnit(BlockConfig(in_channels=8, out_channels=8,
                                          dw_kernel=7, dw_stack=1))),
        ("down_conv_modern", DownConvBlock(8, 8, depth=1)),
        ("down_conv_classic", DownConvBlock(8, 8, depth=1, modern=False)),
        ("double_conv", DoubleConv(8, 8)),
        ("residual_block", ResidualBlock(8)),
        ("spatial_attention", SpatialAttention()),
        ("up_conv", UpConv(8, 4)),
        ("layer_norm_2d", LayerNorm2d(8)),
    ]
    for name, module in blocks:
        fn, xs = weighted(module.double().eval(), (1, 8, 16, 16))
        results.append((name, fd_gradient_check(fn, xs)))

    heads = [torch.rand(1, 1, s, s, dtype=torch.float64) * 0.9 + 0.05
             for s in (16, 8, 4)]
    mask = (torch.rand(1, 1, 16, 16) > 0.5).double()
    fn = lambda *hs: deep_supervision_loss(list(hs), mask,
                                           SupervisionWeights(alpha=(1, 1, 1)))
    results.append(("deep_supervision_loss", fd_gradient_check(fn, heads)))

    elapsed = time.perf_counter() - start
    worst = max(rel for _, rel in results)
    check(request, 3, worst < 1e-4 and elapsed < 120.0,
          f"finite differences confirm gradients for {len(results)} targets "
          f"(filters, GRM, every block, supervision loss; max rel err "
          f"{worst:.2e} < 1e-4, {elapsed:.1f}s < 2min)")


def test_criterion_04_loss_closed_forms(request):
    half = torch.full((1, 1, 9, 9), 0.5, dtype=torch.float64)
    target = (torch.rand(1, 1, 9, 9) > 0.5).double()
    bce_err = abs(float(bce_loss(half, target)) - math.log(2.0))

    dice_exact = True
    for n in (1, 7, 64, 4096):
        side = int(math.isqrt(n))
        shape = (1, 1, side, n // side) if side * (n // side) == n else (1, 1, 1, n)
        pred = torch.ones(shape, dtype=torch.float64)
        tgt = torch.zeros(shape, dtype=torch.float64)
        n_px = pred.numel()
        dice_exact &= float(dice_loss(pred, tgt)) == 1.0 - 1.0 / (n_px + 1)
    check(request, 4, bce_err < 1e-9 and dice_exact,
          f"BCE(0.5 constant) = ln 2 (err {bce_err:.1e} < 1e-9) and "
          f"Dice(disjoint) = 1 - 1/(N+1) exactly for N in {{1,7,64,4096}}")


def test_criterion_05_metric_oracle(request):
    rng = np.random.default_rng(99)
    counts_exact = True
    metric_worst = 0.0
    auc_worst = 0.0
    for t in range(1000):
        scores = rng.uniform(size=(16, 16))
        if t % 3 == 0:
            scores = np.round(scores, 1)  # force ties, including exact 0.5
        mask = rng.integers(0, 2, size=(16, 16))
        if mask.all() or not mask.any():
            mask[0, 0] = 1 - mask[0, 0]
        got = confusion(scores, mask)
        ref = brute_counts(scores, mask)
        counts_exact &= got == ref
        tp, fp, tn, fn = ref.tp, ref.fp, ref.tn, ref.fn
        expected = (
            0.5 * (tp / (tp + fp + fn) + tn / (tn + fp + fn)) * 100.0,
            2 * tp / (2 * tp + fp + fn) * 100.0,
            (tp + tn) / (tp + fp + tn + fn) * 100.0,
            tp / (tp + fn) * 100.0,
            ((tp * tn - fp * fn)
             / math.sqrt((tp + fp) * (tp + fn) * (tn + fp) * (tn + fn))) * 100.0,
        )
        for got_m, ref_m in zip(scalar_metrics(got), expected):
            metric_worst = max(metric_worst, abs(got_m - ref_m))
        auc_worst = max(auc_worst, abs(auc_score(scores, mask)
                                       - trapezoid_auc(scores, mask)))
    ok = counts_exact and metric_worst < 1e-9 and auc_worst < 1e-9
    check(request, 5, ok,
          f"six metrics match brute force on 1000 random 16x16 pairs "
          f"(counts exact, metric err {metric_worst:.1e}, AUC vs trapezoid "
          f"sweep {auc_worst:.1e} < 1e-9)")


# Reference DRIVE benchmark block: (model, mIoU, F1, Acc, AUC, Sen, MCC,
# expected rank average).  The HRNet F1 cell reads 82.85 here; with the
# commonly transcribed 83.829 only 6 of the 14 expected rank averages can be
# reproduced, with 82.85 all 14 can.
DRIVE_BENCHMARK = [
    ("U-Net",      83.857, 82.956, 97.013, 97.853, 83.449, 81.456, 5.7),
    ("U-Net++",    81.228, 79.564, 96.524, 96.271, 77.802, 77.830, 14.0),
    ("U-Net3+",    83.909, 83.030, 97.017, 98.082, 83.721, 81.520, 3.5),
    ("ResU-Net",   83.862, 82.953, 97.021, 97.766, 83.226, 81.453, 6.5),
    ("ResU-Net++", 83.729, 82.783, 97.001, 97.708, 82.791, 81.263, 10.2),
    ("SAU-Net",    83.368, 82.334, 96.925, 97.616, 82.311, 80.782, 12.2),
    ("DCASU-Net",  83.743, 82.808, 96.996, 97.838, 83.080, 81.290, 8.7),
    ("AG-Net",     83.176, 82.111, 96.882, 97.628, 82.155, 80.540, 12.8),
    ("AttU-Net",   83.958, 83.080, 97.039, 97.844, 83.422, 81.584, 3.5),
    ("R2U-Net",    83.555, 82.580, 96.952, 97.879, 82.961, 81.038, 9.7),
    ("ConvU-NeXt", 83.800, 82.882, 97.012, 97.835, 83.019, 81.367, 7.8),
    ("FR-UNet",    83.884, 82.995, 97.007, 98.158, 83.869, 81.485, 4.3),
    ("HRNet",      83.938, 82.850, 97.325, 97.860, 82.963, 81.506, 5.0),
    ("FSG-Net",    84.068, 83.229, 97.042, 98.235, 84.207, 81.731, 1.2),
]


def test_criterion_06_rank_average_reproduction(request):
    table = [row[1:7] for row in DRIVE_BENCHMARK]
    avgs = rank_average(table)
    mismatches = [row[0] for row, avg in zip(DRIVE_BENCHMARK, avgs)
                  if round(avg, 1) != row[7]]
    fsg = avgs[[row[0] for row in DRIVE_BENCHMARK].index("FSG-Net")]
    ok = not mismatches and round(fsg, 1) == 1.2
    check(request, 6, ok,
          f"rank_average reproduces all 14 benchmark rank averages and gives "
          f"FSG-Net {round(fsg, 1)} (expected 1.2)"
          + (f"; mismatches: {mismatches}" if mismatches else ""))


def test_criterion_07_full_resolution_shapes(request):
    results = []
    with torch.no_grad():
        for name in VARIANTS:
            torch.manual_seed(0)
            model = FSGNet(build_variant(name)).eval()
            preds = model(torch.rand(1, 3, 608, 608))
            shapes = tuple(tuple(h.shape) for h in preds)
            in_range = all(float(h.min()) >= 0.0 and float(h.max()) <= 1.0
                           for h in preds)
            results.append(shapes == ((1, 1, 608, 608), (1, 1, 304, 304),
                                      (1, 1, 152, 152)) and in_range)
            del model, preds
    check(request, 7, all(results),
          "all five variants map 1x3x608x608 to sigmoid heads at "
          "608/304/152 with values in [0, 1]")


def test_criterion_08_capacity_targets(request):
    targets = {"L": 18.32e6, "B": 14.46e6, "S": 10.33e6, "T": 4.61e6,
               "N": 1.17e6}
    counts = {name: count_parameters(build_variant(name)) for name in targets}
    ordered = (counts["L"] > counts["B"] > counts["S"] > counts["T"]
               > counts["N"])
    margins = {name: abs(counts[name] - ref) / ref
               for name, ref in targets.items()}
    within = all(m <= 0.15 for m in margins.values())
    worst = max(margins.values())
    check(request, 8, ordered and within,
          f"parameter counts are strictly ordered L>B>S>T>N and within 15% "
          f"of the published targets (worst deviation {worst * 100:.2f}%)")


def test_criterion_09_padding_protocol(request):
    padded, rec = center_pad(np.ones((584, 565), dtype=np.uint8), 608, 608)
    record_ok = (padded.shape == (608, 608) and (rec.top, rec.left) == (12, 21))

    torch.manual_seed(0)
    model = FSGNet(ModelConfig(base_channels=8, depths=(1, 1, 1, 1),
                               drop_prob=0.0)).eval()
    pair = make_vessel_pair(shape=(50, 70), seed=3)
    heads, prec, mask = predict_probabilities(model, pair)
    clean = unpad(heads[0], prec)
    poisoned = heads[0].copy()
    poisoned[~valid_region(prec)] = 1.0
    invariant = confusion(clean, mask) == confusion(unpad(poisoned, prec), mask)
    check(request, 9, record_ok and invariant,
          "DRIVE pads 565x584 to 608x608 at offsets (12, 21) and confusion "
          "counts ignore poisoned padding")


def test_criterion_10_overfit_sanity(request):
    start = time.perf_counter()
    cfg = build_variant("N", drop_prob=0.0)
    pairs = [make_vessel_pair(shape=(96, 96), seed=s) for s in (1, 2)]
    aug = AugmentationConfig(crop_size=96).deterministic()
    ckpt = train(cfg, TrainConfig(seed=0), pairs, pairs, aug=aug,
                 max_epochs=60)
    steps = ckpt.metadata["epochs_run"] * 2  # 2 optimizer steps per epoch
    elapsed = time.perf_counter() - start
    ok = ckpt.best_val_f1 > 95.0 and steps <= 200 and elapsed < 600.0
    check(request, 10, ok,
          f"variant N overfits 2 synthetic pairs to F1 "
          f"{ckpt.best_val_f1:.2f} > 95 in {steps} steps <= 200 "
          f"({elapsed:.0f}s < 10min)")


def test_criterion_11_determinism(request, tmp_path):
    cfg = build_variant("N", drop_prob=0.0)
    train_pairs = [make_vessel_pair(shape=(64, 64), seed=s) for s in (4, 5)]
    val_pairs = [make_vessel_pair(shape=(64, 64), seed=6)]
    aug = AugmentationConfig(crop_size=32)
    runs = [train(cfg, TrainConfig(seed=11, batch_size=2), train_pairs,
                  val_pairs, aug=aug, max_epochs=3) for _ in range(2)]
    a, b = runs
    traj = max(max(abs(x["loss"] - y["loss"]), abs(x["val_f1"] - y["val_f1"]))
               for x, y in zip(a.history, b.history))

    path = save_checkpoint(a, tmp_path / "model.pt")
    restored = model_from_checkpoint(load_checkpoint(path))
    report, _ = evaluate(restored, val_pairs)
    round_trip = abs(report.f1 - a.best_val_f1)
    ok = traj < 1e-6 and round_trip < 1e-6
    check(request, 11, ok,
          f"two seeded 3-epoch runs match (max trajectory diff {traj:.1e} "
          f"< 1e-6) and the checkpoint round-trip re-evaluates to the same "
          f"F1 (diff {round_trip:.1e})")


def test_criterion_12_long_run_recipe(request):
    shipped = Path(__file__).resolve().parents[1] / "configs" / "recipe.yaml"
    recipe = load_run_config(shipped)
    matches = all(recipe[k] == DEFAULT_RECIPE[k] for k in RECIPE_KEYS)
    check(request, 12, shipped.is_file() and matches,
          "shipped long-run recipe parses and matches all 21 default rows "
          "(informational: the multi-hour full DRIVE run it configures, "
          "target F1 in [81.5, 84.5], is not executed by this suite)")
