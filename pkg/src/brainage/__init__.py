"""Brain-age regression from T1-weighted MRI volumes, in plain numpy.

Subpackages: :mod:`brainage.nifti` (I/O), :mod:`brainage.preprocess`,
:mod:`brainage.augment`, :mod:`brainage.engine` (autodiff and Adam),
:mod:`brainage.models`, :mod:`brainage.pipeline` and :mod:`brainage.cli`.
"""

from .errors import BrainAgeError, DataError, NumericError, UsageError

__version__ = "0.1.0"

__all__ = ["BrainAgeError", "DataError", "NumericError", "UsageError", "__version__"]
