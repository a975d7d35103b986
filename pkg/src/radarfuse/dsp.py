"""Range/Doppler FFTs, CA-CFAR, angle FFT and point-cloud extraction."""

from __future__ import annotations

import csv
import dataclasses
import math
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage, stats

from .core import AdcCube, Domain, RadarConfig, derive_resolutions
from .errors import ConfigurationError, ContractError, InvalidAngleError, ParseError

ANGLE_FFT_SIZE = 256
POINTCLOUD_HEADER = ("x_m", "y_m", "z_m", "range_m", "velocity_mps", "azimuth_deg", "snr_db")


@dataclasses.dataclass(frozen=True)
class RangeDopplerMap:
    power: np.ndarray  # (n_range, n_chirp), linear

    def __post_init__(self):
        power = np.array(self.power, dtype=float, copy=True)
        if power.ndim != 2:
            raise ContractError(f"range-Doppler map must be 2-D, got shape {power.shape}")
        if not np.all(np.isfinite(power)) or np.any(power < 0):
            raise ContractError("range-Doppler power must be finite and non-negative")
        power.flags.writeable = False
        object.__setattr__(self, "power", power)

    @property
    def dims(self) -> tuple[int, int]:
        return self.power.shape


@dataclasses.dataclass(frozen=True)
class CfarParams:
    """2-D cell-averaging CFAR settings.

    ``num_looks`` is the number of independent square-law maps summed into
    each cell. With the default of 1 the threshold factor is the classic
    ``N * (pfa**(-1/N) - 1)``; larger values use the exact F-distribution
    quantile for gamma-distributed noise.
    """

    guard_cells: int = 2
    training_cells: int = 4
    probability_false_alarm: float = 1e-4
    num_looks: int = 1

    def __post_init__(self):
        if self.guard_cells < 0:
            raise ConfigurationError("guard_cells must be >= 0")
        if self.training_cells < 1:
            raise ConfigurationError("training_cells must be >= 1")
        if not 0.0 < self.probability_false_alarm < 1.0:
            raise ConfigurationError("probability_false_alarm must lie in (0, 1)")
        if self.num_looks < 1:
            raise ConfigurationError("num_looks must be >= 1")


@dataclasses.dataclass(frozen=True)
class RadarDetection:
    range_bin: int
    doppler_bin: int
    range: float
    velocity: float
    azimuth: float  # degrees
    snr: float  # dB above the CFAR training mean

    @property
    def point(self) -> tuple[float, float, float]:
        az = math.radians(self.azimuth)
        return (self.range * math.sin(az), self.range * math.cos(az), 0.0)


PointCloud = list  # list[RadarDetection]


def _hann(n: int) -> np.ndarray:
    return np.hanning(n + 2)[1:-1] if n > 1 else np.ones(n)


def range_fft(cube: AdcCube, window: str | None = None) -> AdcCube:
    cube.require(Domain.ADC, "range_fft")
    data = cube.data
    if window == "hann":
        data = data * _hann(data.shape[0])[:, None, None]
    elif window is not None:
        raise ConfigurationError(f"unknown window {window!r}")
    return AdcCube(np.fft.fft(data, axis=0), Domain.RANGE)


def doppler_fft(cube: AdcCube, window: str | None = None) -> AdcCube:
    """Slow-time FFT with zero velocity moved to bin ``n_chirp // 2``."""
    cube.require(Domain.RANGE, "doppler_fft")
    data = cube.data
    if window == "hann":
        data = data * _hann(data.shape[2])[None, None, :]
    elif window is not None:
        raise ConfigurationError(f"unknown window {window!r}")
    return AdcCube(np.fft.fftshift(np.fft.fft(data, axis=2), axes=2), Domain.RANGE_DOPPLER)


def rd_map(cube: AdcCube) -> RangeDopplerMap:
    cube.require(Domain.RANGE_DOPPLER, "rd_map")
    d = cube.data
    return RangeDopplerMap((d.real ** 2 + d.imag ** 2).sum(axis=1))


def cfar_threshold_factor(n_train, pfa: float, num_looks: int = 1):
    n_train = np.asarray(n_train, dtype=float)
    if num_looks == 1:
        return n_train * (pfa ** (-1.0 / n_train) - 1.0)
    return stats.f.isf(pfa, 2 * num_looks, 2 * num_looks * n_train)


def cfar_detect(rdmap: RangeDopplerMap, params: CfarParams = CfarParams()) -> list[tuple[int, int, float]]:
    """2-D CA-CFAR over a square training ring.

    Border cells use whatever part of the ring lies inside the map, and the
    threshold factor is computed from that cell's own training count.
    Returns ``(range_bin, doppler_bin, snr_db)`` in row-major order.
    """
    power = rdmap.power
    g, t = params.guard_cells, params.training_cells
    outer = 2 * (g + t) + 1
    if power.shape[0] <= outer or power.shape[1] <= outer:
        raise ConfigurationError(
            f"map dims {power.shape} must exceed 2*(guard+training)+1 = {outer} in each dimension")

    ring = np.ones((outer, outer))
    ring[t:t + 2 * g + 1, t:t + 2 * g + 1] = 0.0
    sums = ndimage.correlate(power, ring, mode="constant", cval=0.0)
    counts = ndimage.correlate(np.ones_like(power), ring, mode="constant", cval=0.0)
    mean = sums / counts
    alpha = cfar_threshold_factor(counts, params.probability_false_alarm, params.num_looks)
    hits = power > alpha * mean
    out = []
    for r, k in zip(*np.nonzero(hits)):
        ratio = power[r, k] / mean[r, k] if mean[r, k] > 0 else math.inf
        out.append((int(r), int(k), 10.0 * math.log10(ratio)))
    return out


def group_peaks(rdmap: RangeDopplerMap, cells: Sequence[tuple[int, int, float]],
                dynamic_range_db: float | None = 150.0) -> list[tuple[int, int, float]]:
    """Keep detections that are local maxima of their 3x3 neighborhood.

    Neighborhoods wrap around both axes, since both FFT axes are circular.
    Equal neighbors are resolved in favour of the lower flat index. Cells more
    than ``dynamic_range_db`` below the map maximum are float round-off and
    are dropped.
    """
    power = rdmap.power
    n_r, n_k = power.shape
    floor = 0.0
    if dynamic_range_db is not None and power.size:
        floor = power.max() * 10.0 ** (-dynamic_range_db / 10.0)
    kept = []
    for r, k, snr in cells:
        p = power[r, k]
        if p <= floor:
            continue
        is_peak = True
        for dr in (-1, 0, 1):
            for dk in (-1, 0, 1):
                if dr == 0 and dk == 0:
                    continue
                rr, kk = (r + dr) % n_r, (k + dk) % n_k
                if (rr, kk) == (r, k):
                    continue
                q = power[rr, kk]
                if q > p or (q == p and (rr, kk) < (r, k)):
                    is_peak = False
                    break
            if not is_peak:
                break
        if is_peak:
            kept.append((r, k, snr))
    return kept


def _parabolic_offset(left: float, centre: float, right: float) -> float:
    denom = left - 2.0 * centre + right
    if denom == 0.0:
        return 0.0
    return 0.5 * (left - right) / denom


def angle_spectrum(snapshot: np.ndarray, n_fft: int = ANGLE_FFT_SIZE) -> np.ndarray:
    """Magnitude of the zero-padded channel DFT with zero angle at index ``n_fft // 2``."""
    return np.abs(np.fft.fftshift(np.fft.fft(snapshot, n_fft)))


def doa_from_snapshot(snapshot: np.ndarray, element_spacing: float,
                      n_fft: int = ANGLE_FFT_SIZE) -> tuple[float, np.ndarray]:
    spectrum = angle_spectrum(snapshot, n_fft)
    peak = int(np.argmax(spectrum))
    offset = 0.0
    if 0 < peak < n_fft - 1:
        offset = _parabolic_offset(spectrum[peak - 1], spectrum[peak], spectrum[peak + 1])
    u = peak - n_fft // 2 + offset
    s = u / (element_spacing * n_fft)
    if abs(s) > 1.0:
        raise InvalidAngleError(f"angle bin {u:.3f} maps to sin(theta)={s:.4f} outside [-1, 1]")
    return math.degrees(math.asin(s)), spectrum


def doa_estimate(cube: AdcCube, cell: tuple[int, int], config: RadarConfig) -> tuple[float, np.ndarray]:
    cube.require(Domain.RANGE_DOPPLER, "doa_estimate")
    r, k = cell
    n_r, _, n_k = cube.dims
    if not (0 <= r < n_r and 0 <= k < n_k):
        raise ContractError(f"cell {cell} outside cube dims {cube.dims}")
    return doa_from_snapshot(cube.data[r, :, k], config.element_spacing)


def cube_to_pointcloud(cube: AdcCube, config: RadarConfig, cfar: CfarParams = CfarParams(),
                       window: str | None = None, return_map: bool = False):
    """Full chain from an ADC cube to a list of detections.

    CFAR hits are reduced to local maxima before angle estimation so each
    target yields one point.
    """
    cube.require(Domain.ADC, "cube_to_pointcloud")
    if cube.dims != config.cube_shape:
        raise ContractError(f"cube dims {cube.dims} do not match config {config.cube_shape}")
    res = derive_resolutions(config)
    rd = doppler_fft(range_fft(cube, window), window)
    rdm = rd_map(rd)
    cells = group_peaks(rdm, cfar_detect(rdm, cfar))
    center = config.num_chirps // 2
    cloud = []
    for r, k, snr in cells:
        az, _ = doa_estimate(rd, (r, k), config)
        cloud.append(RadarDetection(
            range_bin=r,
            doppler_bin=k,
            range=r * res.range_res,
            velocity=(k - center) * res.velocity_res,
            azimuth=az,
            snr=snr,
        ))
    if return_map:
        return cloud, rdm
    return cloud


def write_pointcloud(path, cloud: Sequence[RadarDetection]) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(POINTCLOUD_HEADER)
        for d in cloud:
            x, y, z = d.point
            writer.writerow([repr(float(v)) for v in (x, y, z, d.range, d.velocity, d.azimuth, d.snr)])


def read_pointcloud(path) -> list[dict]:
    """Rows of a point-cloud CSV as dicts of floats keyed by header name."""
    path = Path(path)
    rows = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != POINTCLOUD_HEADER:
            raise ParseError(f"expected header {','.join(POINTCLOUD_HEADER)}", path=path, line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(POINTCLOUD_HEADER):
                raise ParseError(f"expected {len(POINTCLOUD_HEADER)} columns, got {len(row)}",
                                 path=path, line=lineno)
            try:
                rows.append(dict(zip(POINTCLOUD_HEADER, (float(c) for c in row))))
            except ValueError as exc:
                raise ParseError(str(exc), path=path, line=lineno) from None
    return rows


def write_rdmap_pgm(path, rdmap: RangeDopplerMap) -> None:
    """8-bit binary PGM of log power, min-max scaled; rows are range bins."""
    power = rdmap.power
    positive = power[power > 0]
    floor = positive.min() if positive.size else 1.0
    logp = 10.0 * np.log10(np.maximum(power, floor))
    lo, hi = logp.min(), logp.max()
    if hi > lo:
        img = np.rint((logp - lo) / (hi - lo) * 255.0).astype(np.uint8)
    else:
        img = np.zeros(power.shape, dtype=np.uint8)
    h, w = img.shape
    with Path(path).open("wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())
