"""Offline EfficientNet-b4 stage-feature exporter.

Emits UFM1 feature files, UMS1 masks, and a manifest that the consumer-side
anomaly-detection package reads byte-for-byte.
"""

from .backbone import STAGE_TAPS, BackboneError, expected_channels, load_backbone
from .export import ExportConfig, export_features
from .ufm import ExportFormatError, write_features, write_manifest, write_mask

__version__ = "0.1.0"
