from pyrpix.network.config import ConfigError, ModelConfig, PixelCNNConfig, UpscalerConfig, make_config
from pyrpix.network.layers import ParamStore, causal_mask
from pyrpix.network.model import (
    NO_COND,
    Conditioning,
    FactorBlock,
    MultiscaleModel,
    base_logits,
    init_params,
    normalize_levels,
    resize_bilinear,
    upscaler_logits,
)

__all__ = [
    "NO_COND",
    "ConfigError",
    "Conditioning",
    "FactorBlock",
    "ModelConfig",
    "MultiscaleModel",
    "ParamStore",
    "PixelCNNConfig",
    "UpscalerConfig",
    "base_logits",
    "causal_mask",
    "init_params",
    "make_config",
    "normalize_levels",
    "resize_bilinear",
    "upscaler_logits",
]
