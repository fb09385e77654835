"""Hybrid pixel-unshuffled super-resolution: python facade over the C++ core."""

from ._hpun import (
    DataError,
    Model,
    NumericError,
    ShapeError,
    bicubic_resize,
    bilinear_up2,
    conv2d,
    count_costs,
    maxpool_s1,
    nearest_up2,
    nme,
    pixel_shuffle,
    pixel_unshuffle,
    psnr,
    read_png,
    relu,
    rgb_to_y,
    ssim,
    write_png,
)

__all__ = [
    "DataError",
    "Model",
    "NumericError",
    "ShapeError",
    "bicubic_resize",
    "bilinear_up2",
    "conv2d",
    "count_costs",
    "maxpool_s1",
    "nearest_up2",
    "nme",
    "pixel_shuffle",
    "pixel_unshuffle",
    "psnr",
    "read_png",
    "relu",
    "rgb_to_y",
    "ssim",
    "write_png",
]
