"""Synthetic ADC cubes from point targets with known ground truth."""

from __future__ import annotations

import csv
import dataclasses
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import AdcCube, Domain, RadarConfig, SPEED_OF_LIGHT, derive_resolutions
from .errors import ContractError, ParseError, TargetOutOfRangeError

TARGET_CSV_HEADER = ("range_m", "velocity_mps", "azimuth_deg", "amplitude")


@dataclasses.dataclass(frozen=True)
class PointTarget:
    range: float
    radial_velocity: float = 0.0
    azimuth: float = 0.0  # degrees, positive towards +x
    amplitude: float = 1.0


@dataclasses.dataclass(frozen=True)
class ChannelErrorProfile:
    """Per-virtual-channel hardware errors.

    ``delay_offset`` is expressed in range bins: a delay of one bin moves the
    channel's beat tone by one FFT bin, the way a path-length skew between
    cascaded chips does.
    """

    phase_offset: np.ndarray
    delay_offset: np.ndarray

    def __post_init__(self):
        phase = np.asarray(self.phase_offset, dtype=float).copy()
        delay = np.asarray(self.delay_offset, dtype=float).copy()
        if phase.ndim != 1 or phase.shape != delay.shape:
            raise ContractError("phase and delay offsets must be 1-D vectors of equal length")
        if not (np.all(np.isfinite(phase)) and np.all(np.isfinite(delay))):
            raise ContractError("channel error entries must be finite")
        phase.flags.writeable = False
        delay.flags.writeable = False
        object.__setattr__(self, "phase_offset", phase)
        object.__setattr__(self, "delay_offset", delay)

    @classmethod
    def zeros(cls, num_virtual: int) -> ChannelErrorProfile:
        return cls(np.zeros(num_virtual), np.zeros(num_virtual))

    @classmethod
    def random(cls, num_virtual: int, seed: int, max_delay: float = 0.0) -> ChannelErrorProfile:
        """Uniform phases in (-pi, pi) and uniform delays in [-max_delay, max_delay]; channel 0 is error-free."""
        rng = np.random.default_rng(seed)
        phase = rng.uniform(-np.pi, np.pi, num_virtual)
        delay = rng.uniform(-max_delay, max_delay, num_virtual)
        phase[0] = 0.0
        delay[0] = 0.0
        return cls(phase, delay)


def noise_std_for_snr(config: RadarConfig, snr_db: float, amplitude: float = 1.0) -> float:
    """Per-sample noise std giving ``snr_db`` in one channel's range-Doppler cell.

    The SNR is measured after both FFTs for an on-grid target, i.e. it already
    includes the ``num_samples * num_chirps`` coherent processing gain.
    """
    gain = config.num_samples * config.num_chirps
    return amplitude * math.sqrt(gain) * 10.0 ** (-snr_db / 20.0)


def validate_targets(config: RadarConfig, targets: Sequence[PointTarget]) -> None:
    res = derive_resolutions(config)
    for i, t in enumerate(targets):
        values = (t.range, t.radial_velocity, t.azimuth, t.amplitude)
        if not all(math.isfinite(v) for v in values):
            raise TargetOutOfRangeError(i, "non-finite parameter")
        if not 0.0 < t.range < res.max_range:
            raise TargetOutOfRangeError(
                i, f"range {t.range} m outside unambiguous interval (0, {res.max_range:.4f}) m")
        if not abs(t.radial_velocity) < res.max_velocity:
            raise TargetOutOfRangeError(
                i, f"velocity {t.radial_velocity} m/s outside unambiguous interval "
                   f"(-{res.max_velocity:.4f}, {res.max_velocity:.4f}) m/s")
        if not abs(t.azimuth) < 90.0:
            raise TargetOutOfRangeError(i, f"azimuth {t.azimuth} deg outside (-90, 90)")
        if not t.amplitude > 0.0:
            raise TargetOutOfRangeError(i, f"amplitude {t.amplitude} must be > 0")


def synthesize_adc_cube(
    config: RadarConfig,
    targets: Sequence[PointTarget],
    noise_std: float = 0.0,
    errors: ChannelErrorProfile | None = None,
    seed: int = 0,
) -> AdcCube:
    validate_targets(config, targets)
    if not (math.isfinite(noise_std) and noise_std >= 0):
        raise ContractError(f"noise_std must be finite and >= 0, got {noise_std}")
    n_s, n_v, n_k = config.cube_shape
    if errors is not None and errors.phase_offset.shape != (n_v,):
        raise ContractError(
            f"channel error profile has {errors.phase_offset.shape[0]} channels, config has {n_v}")

    n = np.arange(n_s)[:, None]
    v = np.arange(n_v)
    k = np.arange(n_k)
    delay = np.zeros(n_v) if errors is None else errors.delay_offset
    cube = np.zeros(config.cube_shape, dtype=np.complex128)
    for t in targets:
        beat = 2.0 * config.chirp_slope * t.range / SPEED_OF_LIGHT
        doppler = 2.0 * t.radial_velocity / config.wavelength
        # cycles per fast-time sample, per channel
        fast_rate = beat / config.adc_sample_rate + delay[None, :] / n_s
        fast = np.exp(2j * np.pi * fast_rate * n)
        spatial = np.exp(2j * np.pi * config.element_spacing * v * math.sin(math.radians(t.azimuth)))
        slow = np.exp(2j * np.pi * doppler * config.chirp_period * k)
        cube += t.amplitude * (fast * spatial[None, :])[:, :, None] * slow[None, None, :]
    if errors is not None:
        cube *= np.exp(1j * errors.phase_offset)[None, :, None]
    if noise_std > 0:
        rng = np.random.default_rng(seed)
        noise = rng.standard_normal((2,) + config.cube_shape)
        cube += (noise_std / math.sqrt(2.0)) * (noise[0] + 1j * noise[1])
    return AdcCube(cube, Domain.ADC)


def make_corner_reflector_scene(
    config: RadarConfig,
    range: float = 5.0,
    errors: ChannelErrorProfile | None = None,
    seed: int = 0,
    noise_std: float = 0.0,
) -> AdcCube:
    """A single stationary boresight reflector of unit amplitude."""
    return synthesize_adc_cube(config, [PointTarget(range, 0.0, 0.0, 1.0)], noise_std, errors, seed)


def read_targets(path) -> list[PointTarget]:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty targets file", path=path, line=1) from None
        if tuple(h.strip() for h in header) != TARGET_CSV_HEADER:
            raise ParseError(f"expected header {','.join(TARGET_CSV_HEADER)}", path=path, line=1)
        targets = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 4:
                raise ParseError(f"expected 4 columns, got {len(row)}", path=path, line=lineno)
            try:
                values = [float(c) for c in row]
            except ValueError as exc:
                raise ParseError(str(exc), path=path, line=lineno) from None
            targets.append(PointTarget(*values))
    return targets


def write_targets(path, targets: Iterable[PointTarget]) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TARGET_CSV_HEADER)
        for t in targets:
            writer.writerow([repr(float(t.range)), repr(float(t.radial_velocity)),
                             repr(float(t.azimuth)), repr(float(t.amplitude))])
