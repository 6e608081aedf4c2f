"""Tongue contour tracking in ultrasound frames with U-Net / Dense U-Net."""
from .contour import Contour, MaskConfig, contour_to_mask, px_to_mm, resample_contour
from .data import (AugmentationConfig, Dataset, SyntheticConfig, augment_pair, generate_synthetic,
                   split_dataset, subsample_training)
from .losses import (LossConfig, class_weights_from_dataset, compound_loss, crossentropy_loss,
                     dice_loss, weighted_crossentropy_loss)
from .metrics import EvalReport, agreement_matrix, msd, summarize
from .models import (Checkpoint, ModelSpec, build_dense_unet, build_model, build_unet,
                     load_checkpoint, predict_heatmap, save_checkpoint)
from .postprocess import (NoContourError, PostprocessConfig, binarize, extract_contour, fit_contour,
                          order_skeleton, skeletonize)
from .training import TrainConfig, TrainingLog, evaluate_loss, train
from .config import ExperimentConfig

__version__ = "0.1.0"
