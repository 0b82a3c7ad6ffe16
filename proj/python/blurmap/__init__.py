"""Blur mapping with fully convolutional networks (C++ core)."""

from ._core import (
    BlurmapError,
    ConfigError,
    ContractError,
    DataError,
    Network,
    NumericError,
    ShapeError,
    WeightFormatError,
    blur_degree,
    build,
    cross_entropy,
    evaluate,
    grad_check,
    gradient_stat_map,
    load_weights,
    magnify_blur,
    make_synthetic,
    patch_spectral_slope,
    poly_lr,
    preprocess,
    set_deterministic,
    set_num_threads,
    spectral_slope_map,
    to_luma,
    train,
    trimap,
)

__all__ = [name for name in dir() if not name.startswith("_")]
