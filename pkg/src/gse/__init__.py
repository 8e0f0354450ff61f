"""Group-wise sparse adversarial attacks (GSE) with a 1/2-quasinorm prox."""

__version__ = "0.1.0"

from .data import LabeledDataset, TargetPlan, load_dataset, make_targets, synth_dataset
from .metrics import MetricReport, acp, aggregate_targeted, anc, asm, d20, is_score
from .models import ToyModel, train_toy
from .oracle import Objective, loss_and_grad
from .prox import prox_half, prox_half_scalar
from .solver import (AttackConfig, AttackResult, fbs_attack, gse_attack, nesterov_alpha,
                     project_support, section_search, support_set)
