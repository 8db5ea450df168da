"""Right-to-left handwritten text-line OCR toolkit: detection post-processing,
CTC line recognition with a curriculum, synthetic data, and scoring."""

__version__ = "0.1.0"
