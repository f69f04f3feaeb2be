"""Training losses and evaluation metrics."""

from .losses import (IGNORE_LABEL, LAMBDA_DEPTH, LAMBDA_RECON, LossReport, SemanticOccupancy,
                     combine_losses, cross_entropy_loss, cross_entropy_loss_vjp, depth_loss,
                     depth_loss_vjp, scal_losses, scal_losses_vjp, total_loss)
from .metrics import MetricReport, confusion_matrix, iou_miou
