"""Time-series classification through a text-classification lens.

Multivariate sensor series are encoded, discretized into symbols, cut into
tokens and classified as TF-IDF documents with a linear SVM.
"""

__version__ = "0.1.0"

from .dataset import LabeledDataset, TimeSeries, generate_duffing_dataset, load_cmapss
from .pipeline import TtcConfig, TtcModel, fit, predict

__all__ = [
    "LabeledDataset",
    "TimeSeries",
    "TtcConfig",
    "TtcModel",
    "fit",
    "generate_duffing_dataset",
    "load_cmapss",
    "predict",
    "__version__",
]
