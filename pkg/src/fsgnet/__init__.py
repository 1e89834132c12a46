"""Retinal vessel segmentation with attention-guided filtering."""

from .errors import DivergenceError, ValidationError
from .guided_filter import (CoefficientField, WindowSpec,
                            attention_guided_coefficients,
                            attention_guided_filter, box_mean, guided_filter,
                            guided_filter_coefficients, unsharp_mask)
from .blocks import (BlockConfig, DoubleConv, DownConvBlock, DropPath,
                     InvertedResidualUnit, LayerNorm2d, ResidualBlock,
                     SpatialAttention, UpConv, run_units, unit_stack)
from .network import (FSGNet, GuidedConvBlock, GuidedResidualModule,
                      ModelConfig, PredictionSet, REFERENCE_PARAMS, Toggles,
                      VARIANTS, build_model, build_variant, count_parameters)
from .objective import (SupervisionWeights, bce_loss, build_label_pyramid,
                        deep_supervision_loss, dice_loss, downsample_labels)
from .metrics import (ConfusionCounts, MetricReport, METRIC_NAMES, auc_score,
                      confusion, f1_score, format_report_row, mean_iou,
                      mean_report, mcc, parse_report_row, rank_average,
                      report_from_counts, scalar_metrics, sensitivity,
                      specificity)
from .data import (AugmentationConfig, DatasetName, PAD_TARGETS, PaddingRecord,
                   SamplePair, augment, center_pad, cutmix, load_dataset,
                   pad_target_for, prepare_for_padding, resize_longer_side,
                   split_dataset, unpad, valid_region)
from .pipeline import (Checkpoint, EarlyStopping, TrainConfig, cross_evaluate,
                       evaluate, format_cross_row, load_checkpoint, lr_at,
                       model_from_checkpoint, predict_probabilities,
                       predict_to_files, save_checkpoint, train)
from .config import (DEFAULT_RECIPE, RECIPE_KEYS, augmentation_from,
                     load_run_config, pad_targets_from, parse_compact,
                     toggles_from, train_config_from)

__version__ = "0.1.0"
