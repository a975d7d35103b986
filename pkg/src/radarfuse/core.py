"""Radar configuration, derived resolutions and the ADC data cube."""

from __future__ import annotations

import dataclasses
import enum
import math

import numpy as np

from .errors import ConfigurationError, ContractError

SPEED_OF_LIGHT = 299_792_458.0


class Domain(enum.IntEnum):
    """Processing stage a cube's samples belong to. Values are the on-disk codes."""

    ADC = 0
    RANGE = 1
    RANGE_DOPPLER = 2
    SPECTRUM = 3


@dataclasses.dataclass(frozen=True)
class RadarConfig:
    """FMCW TDM-MIMO waveform and array parameters.

    Defaults reproduce a 12TX/16RX cascade with 86 azimuth virtual channels,
    128 samples per chirp and 64 chirp loops. ``chirp_period`` is the
    repetition interval of one loop over all transmitters, which is what sets
    the Doppler resolution.
    """

    num_tx: int = 12
    num_rx: int = 16
    num_virtual: int = 86
    num_samples: int = 128
    num_chirps: int = 64
    carrier_freq: float = 77e9
    chirp_slope: float = 80.125e12
    adc_sample_rate: float = 8e6
    chirp_period: float = 4.8e-4
    frame_rate: float = 5.0
    element_spacing: float = 0.5

    def __post_init__(self):
        for name in ("num_tx", "num_rx", "num_virtual", "num_samples", "num_chirps"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 1:
                raise ConfigurationError(f"{name} must be an integer >= 1, got {value!r}")
        for name in ("carrier_freq", "chirp_slope", "adc_sample_rate", "chirp_period",
                     "frame_rate", "element_spacing"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float, np.floating)) and math.isfinite(value) and value > 0):
                raise ConfigurationError(f"{name} must be finite and > 0, got {value!r}")
        if self.num_virtual > self.num_tx * self.num_rx:
            raise ConfigurationError(
                f"num_virtual={self.num_virtual} exceeds num_tx*num_rx={self.num_tx * self.num_rx}")

    @property
    def bandwidth(self) -> float:
        return self.chirp_slope * self.num_samples / self.adc_sample_rate

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_freq

    @property
    def cube_shape(self) -> tuple[int, int, int]:
        return (self.num_samples, self.num_virtual, self.num_chirps)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> RadarConfig:
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown radar config keys: {sorted(unknown)}")
        return cls(**data)


@dataclasses.dataclass(frozen=True)
class DerivedResolutions:
    range_res: float
    max_range: float
    velocity_res: float
    max_velocity: float
    azimuth_res: float  # degrees


def derive_resolutions(config: RadarConfig) -> DerivedResolutions:
    range_res = SPEED_OF_LIGHT / (2.0 * config.bandwidth)
    velocity_res = config.wavelength / (2.0 * config.num_chirps * config.chirp_period)
    # Rayleigh limit of an N-element half-wavelength ULA at boresight, scaled for other spacings.
    azimuth_res = math.degrees(1.0 / (config.num_virtual * config.element_spacing))
    out = DerivedResolutions(
        range_res=range_res,
        max_range=config.num_samples * range_res,
        velocity_res=velocity_res,
        max_velocity=config.num_chirps / 2 * velocity_res,
        azimuth_res=azimuth_res,
    )
    for name, value in dataclasses.asdict(out).items():
        if not (math.isfinite(value) and value > 0):
            raise ConfigurationError(f"derived {name} is not finite and positive: {value}")
    return out


class AdcCube:
    """Complex radar cube indexed (fast-time/range, virtual channel, chirp/Doppler).

    The sample array is copied on construction and made read-only, so a cube
    can be shared freely between threads.
    """

    __slots__ = ("_data", "_domain")

    def __init__(self, data, domain: Domain | str | int = Domain.ADC, dims: tuple[int, int, int] | None = None):
        arr = np.asarray(data)
        if dims is not None:
            dims = tuple(int(d) for d in dims)
            if len(dims) != 3 or any(d < 1 for d in dims):
                raise ContractError(f"cube dims must be three positive integers, got {dims}")
            expected = dims[0] * dims[1] * dims[2]
            if arr.size != expected:
                raise ContractError(f"cube data has {arr.size} samples, dims {dims} require {expected}")
            arr = arr.reshape(dims)
        if arr.ndim != 3 or 0 in arr.shape:
            raise ContractError(f"cube data must be a non-empty 3-D array, got shape {arr.shape}")
        arr = np.array(arr, dtype=np.complex128, copy=True)
        if not np.all(np.isfinite(arr)):
            raise ContractError("cube contains non-finite samples")
        arr.flags.writeable = False
        self._data = arr
        self._domain = _as_domain(domain)

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def domain(self) -> Domain:
        return self._domain

    @property
    def dims(self) -> tuple[int, int, int]:
        return self._data.shape

    def require(self, domain: Domain, stage: str) -> None:
        if self._domain != domain:
            raise ContractError(
                f"{stage} expects a {domain.name.lower()} cube, got {self._domain.name.lower()}")

    def with_data(self, data: np.ndarray, domain: Domain | None = None) -> AdcCube:
        return AdcCube(data, self._domain if domain is None else domain)

    def __eq__(self, other):
        if not isinstance(other, AdcCube):
            return NotImplemented
        return self._domain == other._domain and np.array_equal(self._data, other._data)

    __hash__ = None

    def __repr__(self):
        return f"AdcCube(dims={self.dims}, domain={self._domain.name.lower()})"


def _as_domain(value) -> Domain:
    if isinstance(value, Domain):
        return value
    if isinstance(value, str):
        try:
            return Domain[value.upper()]
        except KeyError:
            raise ContractError(f"unknown domain tag {value!r}") from None
    try:
        return Domain(int(value))
    except (ValueError, TypeError):
        raise ContractError(f"unknown domain tag {value!r}") from None
