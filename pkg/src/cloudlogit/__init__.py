"""Gaussian clouded logit training for long-tailed classification, in numpy."""

from .data import Dataset, LongTailSpec, load_csv, longtail_counts, save_csv, synth_blobs
from .gcl import CloudSizeTable, GclConfig, ce_loss, clouded_logits, compute_cloud_sizes, gcl_loss
from .model import Checkpoint, Model, build_model
from .sampler import ClassProbTable, SamplerSpec, class_probs, draw_batch
from .trainer import (BlobSpec, EvalReport, TrainConfig, baseline_config, evaluate, run_experiment,
                      train_stage1, train_stage2_crt)

__version__ = "0.1.0"
