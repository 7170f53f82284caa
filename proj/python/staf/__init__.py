"""Video-to-mesh recovery core: synthesis, inference, training, metrics."""

from ._staf import (
    Model,
    Sequence,
    Template,
    accel,
    bilinear_sample,
    deconv,
    evaluate,
    generate,
    grid_points,
    infer,
    init_model,
    joints_mm,
    make_template,
    mpjpe,
    pa_mpjpe,
    procrustes,
    pve,
    rodrigues,
    train_overfit,
)

__all__ = [
    "Model",
    "Sequence",
    "Template",
    "accel",
    "bilinear_sample",
    "deconv",
    "evaluate",
    "generate",
    "grid_points",
    "infer",
    "init_model",
    "joints_mm",
    "make_template",
    "mpjpe",
    "pa_mpjpe",
    "procrustes",
    "pve",
    "rodrigues",
    "train_overfit",
]
