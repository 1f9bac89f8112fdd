# SPDX-License-Identifier: Apache-2.0
"""Adversarial pre-training and fine-tuning of toy transformer encoders."""

from ._alum import (
    AlumError,
    Vocab,
    checkpoint_info,
    corrupt_mlm,
    file_hash,
    lr_at,
    make_synthetic,
    mask_rate,
    project_linf,
    run_cli,
    train_bpe,
    vat_divergence,
)

__all__ = [
    "AlumError",
    "Vocab",
    "checkpoint_info",
    "corrupt_mlm",
    "file_hash",
    "lr_at",
    "make_synthetic",
    "mask_rate",
    "project_linf",
    "run_cli",
    "train_bpe",
    "vat_divergence",
]
