# Copyright (c) the ralhe authors
# SPDX-License-Identifier: Apache-2.0
"""Rate-distortion optimized attribute codec for voxelized Gaussian splats."""

from ralhe._core import (
    NUM_ATTRIBUTES,
    OPACITY_ATTR_ID,
    Error,
    GaussianModel,
    decode,
    encode,
    evaluate,
    inspect,
    load_ply,
    morton_decode,
    morton_encode,
    save_ply,
)

__all__ = [
    "NUM_ATTRIBUTES",
    "OPACITY_ATTR_ID",
    "Error",
    "GaussianModel",
    "decode",
    "encode",
    "evaluate",
    "inspect",
    "load_ply",
    "morton_decode",
    "morton_encode",
    "save_ply",
]
