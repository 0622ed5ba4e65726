"""pehl: benign/malicious classification of executables from the
328-byte PE header region (MS-DOS + COFF + Optional headers).

Five model families over the same byte window: parsed header fields with
random-forest / extra-trees ensembles, byte n-grams with elastic-net
logistic regression, a fully connected embedding network, and an
attention LSTM; plus feature-importance reporting and probability
re-calibration.
"""

from .header import HeaderRegion, RawBinary, extract_header_region
from .features import SCHEMA, FeatureVector115, parse_features

__all__ = [
    "HeaderRegion",
    "RawBinary",
    "extract_header_region",
    "SCHEMA",
    "FeatureVector115",
    "parse_features",
]

__version__ = "0.1.0"
