"""Disentangled expression GAN: Python access to the C++ core."""

from ._core import (
    ConfigError,
    ContractError,
    DeganError,
    DegenerateDataError,
    DimensionError,
    IoError,
    LabelError,
    Model,
    StateError,
    augment,
    conv2d,
    conv2d_transpose,
    discriminator_loss,
    evaluate_predictions,
    expression_accuracy,
    generator_loss,
    gradcheck,
    hflip,
    identity_probe,
    load_image,
    rotate,
    save_image,
    softmax_cross_entropy,
    synth_dataset,
    train,
    write_synth_dataset,
)

__all__ = [name for name in dir() if not name.startswith("_")]
