"""Per-channel frequency and phase calibration of the cascaded virtual array.

A corner reflector scene is range-transformed per channel. The offset of
each channel's interpolated range peak from the reference channel (channel
0) gives a linear phase-vs-sample correction, and the ratio of the
reference peak to each channel's peak gives a complex phase correction.
"""

from __future__ import annotations

import dataclasses
import json
import math
from pathlib import Path

import numpy as np

from .core import AdcCube, Domain, RadarConfig
from .errors import ConfigurationError, ContractError, LowSnrCalibrationError, NumericalError, ParseError

MIN_PEAK_TO_MEDIAN_DB = 10.0


@dataclasses.dataclass(frozen=True)
class ChannelCalibParams:
    calib_sample_rate: float
    chirp_sample_rate: float
    original_slope: float
    calib_slope: float
    num_samples: int
    interp_factor: float = 4.0

    def __post_init__(self):
        for name in ("calib_sample_rate", "chirp_sample_rate", "original_slope", "calib_slope"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ConfigurationError(f"{name} must be finite and > 0, got {value!r}")
        if int(self.num_samples) != self.num_samples or self.num_samples < 1:
            raise ConfigurationError(f"num_samples must be a positive integer, got {self.num_samples!r}")
        if not (math.isfinite(self.interp_factor) and self.interp_factor >= 1):
            raise ConfigurationError(f"interp_factor must be >= 1, got {self.interp_factor!r}")

    @classmethod
    def for_config(cls, config: RadarConfig, interp_factor: float = 4.0) -> ChannelCalibParams:
        """Parameters for calibrating with the same waveform that is being corrected."""
        return cls(config.adc_sample_rate, config.adc_sample_rate, config.chirp_slope,
                   config.chirp_slope, config.num_samples, interp_factor)

    @property
    def n_fft(self) -> int:
        return int(round(self.num_samples * self.interp_factor))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> ChannelCalibParams:
        known = {f.name for f in dataclasses.fields(cls)}
        if set(data) - known:
            raise ConfigurationError(f"unknown calibration params keys: {sorted(set(data) - known)}")
        return cls(**data)


@dataclasses.dataclass(frozen=True)
class ChannelCalibration:
    params: ChannelCalibParams
    peak_index_deltas: np.ndarray
    phase_comp: np.ndarray

    def __post_init__(self):
        delta = np.array(self.peak_index_deltas, dtype=float)
        comp = np.array(self.phase_comp, dtype=complex)
        if delta.ndim != 1 or comp.shape != delta.shape or delta.size < 1:
            raise ContractError("delta_p and phase_comp must be equal-length 1-D vectors")
        if delta[0] != 0.0 or comp[0] != 1.0:
            raise ContractError("reference channel must have delta_p 0 and phase_comp 1")
        if not (np.all(np.isfinite(delta)) and np.all(np.isfinite(comp))):
            raise ContractError("calibration entries must be finite")
        delta.flags.writeable = False
        comp.flags.writeable = False
        object.__setattr__(self, "peak_index_deltas", delta)
        object.__setattr__(self, "phase_comp", comp)

    @classmethod
    def identity(cls, params: ChannelCalibParams, num_channels: int) -> ChannelCalibration:
        return cls(params, np.zeros(num_channels), np.ones(num_channels, dtype=complex))

    @property
    def freq_comp(self) -> np.ndarray:
        """(num_channels, N) phase vectors, one per channel."""
        return np.stack([freq_comp_vector(self.params, d) for d in self.peak_index_deltas])

    def to_json(self) -> str:
        doc = {
            "delta_p": [float(x) for x in self.peak_index_deltas],
            "phase_comp": [[float(c.real), float(c.imag)] for c in self.phase_comp],
            "params": self.params.to_dict(),
        }
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> ChannelCalibration:
        try:
            doc = json.loads(text)
            params = ChannelCalibParams.from_dict(doc["params"])
            comp = [complex(float(re), float(im)) for re, im in doc["phase_comp"]]
            return cls(params, [float(x) for x in doc["delta_p"]], comp)
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"invalid channel calibration document: {exc}") from None

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path) -> ChannelCalibration:
        try:
            return cls.from_json(Path(path).read_text())
        except ParseError as exc:
            raise ParseError(str(exc), path=path) from None


def _integrated_range_profile(cube: AdcCube, n_fft: int) -> np.ndarray:
    # stationary corner: coherent sum over chirps equals the zero-Doppler bin
    slow_sum = cube.data.sum(axis=2)
    return np.fft.fft(slow_sum, n_fft, axis=0)


def measure_channel_offsets(corner_cube: AdcCube, params: ChannelCalibParams) -> tuple[np.ndarray, np.ndarray]:
    """Fractional range-peak offsets relative to channel 0, and each channel's complex peak.

    Offsets are in interpolated-FFT bins (``num_samples * interp_factor`` points).
    """
    corner_cube.require(Domain.ADC, "measure_channel_offsets")
    if corner_cube.dims[0] != params.num_samples:
        raise ContractError(
            f"cube has {corner_cube.dims[0]} fast-time samples, params expect {params.num_samples}")
    spectrum = _integrated_range_profile(corner_cube, params.n_fft)
    mag = np.abs(spectrum)
    n_fft, n_chan = mag.shape
    peak_idx = np.empty(n_chan)
    peaks = np.empty(n_chan, dtype=complex)
    for ch in range(n_chan):
        col = mag[:, ch]
        k = int(np.argmax(col))
        median = float(np.median(col))
        if col[k] == 0.0 or (median > 0 and 20.0 * math.log10(col[k] / median) < MIN_PEAK_TO_MEDIAN_DB):
            raise LowSnrCalibrationError(
                f"channel {ch}: no range peak {MIN_PEAK_TO_MEDIAN_DB:g} dB above the median spectrum")
        a, b, c = col[(k - 1) % n_fft], col[k], col[(k + 1) % n_fft]
        denom = a - 2.0 * b + c
        peak_idx[ch] = k + (0.5 * (a - c) / denom if denom != 0 else 0.0)
        peaks[ch] = spectrum[int(round(peak_idx[ch])) % n_fft, ch]
    return peak_idx - peak_idx[0], peaks


def freq_comp_vector(params: ChannelCalibParams, delta_p: float) -> np.ndarray:
    n = np.arange(params.num_samples)
    rate = (params.calib_sample_rate / params.chirp_sample_rate) * (params.original_slope / params.calib_slope)
    return 2.0 * np.pi * delta_p * rate / (params.num_samples * params.interp_factor) * n


def phase_comp_factors(peaks) -> np.ndarray:
    peaks = np.asarray(peaks, dtype=complex)
    zero = np.flatnonzero(np.abs(peaks) == 0)
    if zero.size:
        raise NumericalError(f"zero-magnitude peak on channel {int(zero[0])}")
    out = peaks[0] / peaks
    out[0] = 1.0
    return out


def calibrate_channels(corner_cube: AdcCube, params: ChannelCalibParams) -> ChannelCalibration:
    """Measure frequency offsets, remove them, then measure phase factors.

    Peak phases are read after frequency compensation, at the reference
    channel's peak bin, so the phase factors are not biased by the
    range-dependent phase a residual frequency offset imposes on the peak.
    """
    delta_p, _ = measure_channel_offsets(corner_cube, params)
    partial = ChannelCalibration(params, delta_p, np.ones(delta_p.size, dtype=complex))
    compensated = apply_channel_calibration(corner_cube, partial)
    spectrum = _integrated_range_profile(compensated, params.n_fft)
    ref_bin = int(np.argmax(np.abs(spectrum[:, 0])))
    return ChannelCalibration(params, delta_p, phase_comp_factors(spectrum[ref_bin]))


def apply_channel_calibration(cube: AdcCube, calib: ChannelCalibration) -> AdcCube:
    cube.require(Domain.ADC, "apply_channel_calibration")
    n_s, n_v, _ = cube.dims
    if n_v != calib.peak_index_deltas.size or n_s != calib.params.num_samples:
        raise ContractError(
            f"calibration for {calib.peak_index_deltas.size} channels x {calib.params.num_samples} samples "
            f"does not match cube dims {cube.dims}")
    correction = np.exp(-1j * calib.freq_comp.T) * calib.phase_comp[None, :]
    # the reference channel is copied untouched so identity calibrations are exact
    correction[:, 0] = 1.0
    if np.all(calib.peak_index_deltas == 0) and np.all(calib.phase_comp == 1):
        return cube
    return AdcCube(cube.data * correction[:, :, None], Domain.ADC)


def peak_phase_spread(cube: AdcCube, n_fft: int | None = None) -> float:
    """Std (rad) across channels of the phase relative to channel 0 at channel 0's range peak."""
    cube.require(Domain.ADC, "peak_phase_spread")
    spectrum = _integrated_range_profile(cube, n_fft or cube.dims[0])
    ref_bin = int(np.argmax(np.abs(spectrum[:, 0])))
    row = spectrum[ref_bin]
    return float(np.std(np.angle(row * np.conj(row[0]))))
