"""Deep grading of brain structures on synthetic MRI cohorts.

Patch-specialist U-Nets grade every voxel between healthy (-1) and diseased
(+1); their accuracy-weighted fusion is averaged per structure and fed, with
structure volumes and age, to a graph convolutional classifier.
"""
from .errors import (ConfigurationError, ContractError, DataError, DegenerateWeightsWarning,
                     GradekitError)

__version__ = "0.1.0"

__all__ = ["GradekitError", "ConfigurationError", "DataError", "ContractError",
           "DegenerateWeightsWarning", "__version__"]
