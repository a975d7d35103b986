"""FMCW MIMO radar processing, radar/camera calibration and depth-supervision tooling."""

from .core import AdcCube, DerivedResolutions, Domain, RadarConfig, derive_resolutions
from .errors import (ContractError, DegenerateGeometryError, InputError, LowSnrCalibrationError,
                     NumericalError, ParseError, RadarFuseError, TargetOutOfRangeError)

__version__ = "0.1.0"

__all__ = [
    "AdcCube", "DerivedResolutions", "Domain", "RadarConfig", "derive_resolutions",
    "ContractError", "DegenerateGeometryError", "InputError", "LowSnrCalibrationError",
    "NumericalError", "ParseError", "RadarFuseError", "TargetOutOfRangeError",
]
