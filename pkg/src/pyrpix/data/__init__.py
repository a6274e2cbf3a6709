from pyrpix.data.dataset import SPLITS, Dataset, DatasetError, load_directory, save_directory
from pyrpix.data.netpbm import NetpbmError, read_image, write_image
from pyrpix.data.synthetic import FAMILIES, SyntheticError, SyntheticSpec, generate, patterns, pixel_entropy

__all__ = [
    "FAMILIES",
    "SPLITS",
    "Dataset",
    "DatasetError",
    "NetpbmError",
    "SyntheticError",
    "SyntheticSpec",
    "generate",
    "load_directory",
    "patterns",
    "pixel_entropy",
    "read_image",
    "save_directory",
    "write_image",
]
