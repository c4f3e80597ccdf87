"""Python bindings for the motorfm fault-diagnosis backbone."""

from ._motorfm import (
    Model,
    add_noise,
    backbone_parameter_count,
    build_backbone,
    conv1d,
    default_config,
    gen_record,
    gradcheck,
    load_checkpoint,
    prepare_finetune,
    render_results,
    windows,
)

__all__ = [
    "Model",
    "add_noise",
    "backbone_parameter_count",
    "build_backbone",
    "conv1d",
    "default_config",
    "gen_record",
    "gradcheck",
    "load_checkpoint",
    "prepare_finetune",
    "render_results",
    "windows",
]
