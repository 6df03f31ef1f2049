"""Scene-text super-resolution toolkit.

Submodules:

- ``dataset``: region-pair manifests, text-line annotations, statistics
- ``edge``: Canny edge maps
- ``metrics``: PSNR, SSIM, LPIPS, edit-distance metrics and reports
- ``losses``: L1 and edge-aware pixel / feature losses (torch)
- ``protocol``: model and recognizer adapters, line cropping, evaluation
- ``datapipe``: registration, central cropping, synthetic degradation
- ``trainer``: a small SR network and its training loop
- ``cli``: the ``textsr`` command
"""

from .dataset import DatasetManifest, RegionPair, TextLine, load_manifest, save_manifest
from .edge import CannyParams, canny
from .metrics import MetricReport, lpips, ned, psnr, ssim
from .protocol import ProtocolConfig, evaluate

__version__ = "0.1.0"

__all__ = [
    "CannyParams",
    "DatasetManifest",
    "MetricReport",
    "ProtocolConfig",
    "RegionPair",
    "TextLine",
    "canny",
    "evaluate",
    "load_manifest",
    "lpips",
    "ned",
    "psnr",
    "save_manifest",
    "ssim",
]
