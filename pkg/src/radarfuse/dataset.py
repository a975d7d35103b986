"""On-disk dataset layout and its file formats.

Cube files are a 16-byte header (8-byte magic ``RRGBDCUB``, u8 version,
u8 domain code, 6 reserved zero bytes), three little-endian u32 dims
(n_range, n_chan, n_chirp) and then little-endian float32 (re, im) pairs in
C order. Depth rasters are 16-bit grayscale PNGs in millimetres with 0 for
invalid pixels.
"""

from __future__ import annotations

import dataclasses
import math
import os
import re
import struct
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .core import AdcCube, Domain
from .depth import DepthImage
from .dsp import read_pointcloud, write_pointcloud
from .errors import DatasetError, FrameNotFoundError, InputError, ParseError

CUBE_MAGIC = b"RRGBDCUB"
CUBE_VERSION = 1
CUBE_HEADER = struct.Struct("<8sBB6x")
CUBE_DIMS = struct.Struct("<III")
CUBE_PREFIX_SIZE = CUBE_HEADER.size + CUBE_DIMS.size

MAX_DEPTH_M = 65.535

SENSORS = ("radar", "rgb", "depth", "ir", "pointcloud")
MODALITY_DIRS = {"radar": "radar_cube", "rgb": "rgb", "depth": "depth", "ir": "ir", "pointcloud": "pointcloud"}
MODALITY_EXTS = {"radar": (".cube",), "rgb": (".png", ".jpg"), "depth": (".png",), "ir": (".png",),
                 "pointcloud": (".csv",)}
CALIBRATION_DIR = "calibration"
TIMESTAMPS_FILE = "timestamps.txt"
TIMESTAMPS_HEADER = "# frame_id " + " ".join(SENSORS)

_DECIMAL = re.compile(r"[+-]?\d+(\.\d+)?")
_INTEGER = re.compile(r"\d+")


# -- radar cubes -------------------------------------------------------------

def write_cube(cube: AdcCube, path) -> None:
    n_r, n_c, n_k = cube.dims
    payload = np.empty(cube.data.shape + (2,), dtype="<f4")
    payload[..., 0] = cube.data.real
    payload[..., 1] = cube.data.imag
    with open(path, "wb") as fh:
        fh.write(CUBE_HEADER.pack(CUBE_MAGIC, CUBE_VERSION, int(cube.domain)))
        fh.write(CUBE_DIMS.pack(n_r, n_c, n_k))
        fh.write(payload.tobytes())


def cube_file_size(dims: Sequence[int]) -> int:
    n_r, n_c, n_k = dims
    return CUBE_PREFIX_SIZE + n_r * n_c * n_k * 8


def read_cube(path) -> AdcCube:
    path = Path(path)
    size = os.stat(path).st_size
    with path.open("rb") as fh:
        head = fh.read(CUBE_PREFIX_SIZE)
        if len(head) < CUBE_HEADER.size:
            raise ParseError(f"file is {len(head)} bytes, shorter than the {CUBE_HEADER.size}-byte header",
                             path=path, offset=len(head))
        magic, version, domain = CUBE_HEADER.unpack_from(head)
        if magic != CUBE_MAGIC:
            raise ParseError(f"bad magic {magic!r}", path=path, offset=0)
        if version != CUBE_VERSION:
            raise ParseError(f"unsupported version {version}", path=path, offset=8)
        try:
            domain = Domain(domain)
        except ValueError:
            raise ParseError(f"unknown domain code {domain}", path=path, offset=9) from None
        if len(head) < CUBE_PREFIX_SIZE:
            raise ParseError("file ends inside the dims block", path=path, offset=len(head))
        dims = CUBE_DIMS.unpack_from(head, CUBE_HEADER.size)
        for i, d in enumerate(dims):
            if d == 0:
                raise ParseError(f"dimension {i} is zero", path=path, offset=CUBE_HEADER.size + 4 * i)
        expected = cube_file_size(dims)
        # checked against the real file size before anything of the declared size is allocated
        if size != expected:
            raise ParseError(f"length mismatch: dims {dims} need {expected} bytes, file has {size}",
                             path=path, offset=min(size, expected))
        raw = np.frombuffer(fh.read(expected - CUBE_PREFIX_SIZE), dtype="<f4")
    if raw.size * 4 != expected - CUBE_PREFIX_SIZE:
        raise ParseError("file changed while reading", path=path, offset=CUBE_PREFIX_SIZE + raw.size * 4)
    pairs = raw.reshape(dims + (2,))
    if not np.all(np.isfinite(pairs)):
        bad = int(np.flatnonzero(~np.isfinite(pairs.ravel()))[0])
        raise ParseError("non-finite sample", path=path, offset=CUBE_PREFIX_SIZE + 4 * bad)
    data = pairs[..., 0].astype(np.float64) + 1j * pairs[..., 1].astype(np.float64)
    return AdcCube(data, domain)


# -- depth rasters ------------------------------------------------------------

def write_depth(img: DepthImage, path) -> None:
    if np.any(img.values > MAX_DEPTH_M):
        raise InputError(f"depth above {MAX_DEPTH_M} m cannot be stored as 16-bit millimetres")
    mm = np.rint(img.values * 1000.0).astype(np.uint16)
    if np.any(mm[img.valid] == 0):
        raise InputError("valid depth rounds to 0 mm")
    Image.fromarray(mm).save(path, format="PNG")


def read_depth(path) -> DepthImage:
    path = Path(path)
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode not in ("I;16", "I;16B", "I;16L", "I", "L"):
                raise ParseError(f"expected a 16-bit grayscale PNG, got mode {im.mode}", path=path)
            mm = np.array(im)
    except ParseError:
        raise
    except (OSError, SyntaxError, ValueError) as exc:
        raise ParseError(f"cannot decode depth PNG: {exc}", path=path) from None
    if mm.ndim != 2 or np.any(mm < 0) or np.any(mm > 65535):
        raise ParseError("depth raster must be single-channel 16-bit", path=path)
    mm = mm.astype(np.uint16)
    return DepthImage(mm / 1000.0, mm > 0)


# -- timestamps ----------------------------------------------------------------

def parse_timestamps(path) -> list[tuple[int, list[float]]]:
    """Frames as ``(frame_id, [stamp per sensor])``; lines are ``frame_id t0 t1 ...``."""
    path = Path(path)
    frames = []
    last: list[float] | None = None
    seen = set()
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            fields = text.split()
            if not _INTEGER.fullmatch(fields[0]):
                raise ParseError(f"bad frame id {fields[0]!r}", path=path, line=lineno)
            if len(fields) < 2:
                raise ParseError("frame has no timestamps", path=path, line=lineno)
            stamps = []
            for f in fields[1:]:
                if not _DECIMAL.fullmatch(f):
                    raise ParseError(f"bad timestamp {f!r}", path=path, line=lineno)
                stamps.append(float(f))
            frame_id = int(fields[0])
            if frame_id in seen:
                raise ParseError(f"duplicate frame id {frame_id}", path=path, line=lineno)
            if last is not None:
                if len(stamps) != len(last):
                    raise ParseError(f"expected {len(last)} timestamps, got {len(stamps)}", path=path, line=lineno)
                if any(a < b for a, b in zip(stamps, last)):
                    raise ParseError("timestamps decrease relative to the previous frame", path=path, line=lineno)
            seen.add(frame_id)
            last = stamps
            frames.append((frame_id, stamps))
    return frames


def format_timestamp(value: float) -> str:
    if not math.isfinite(value):
        raise InputError(f"timestamp must be finite, got {value}")
    return np.format_float_positional(float(value), unique=True, trim="0")


def write_timestamps(path, frames: Sequence[tuple[int, Sequence[float]]], header: str = TIMESTAMPS_HEADER) -> None:
    lines = [header] if header else []
    for frame_id, stamps in frames:
        lines.append(" ".join([str(int(frame_id))] + [format_timestamp(s) for s in stamps]))
    Path(path).write_text("\n".join(lines) + "\n")


# -- dataset root ----------------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class DatasetFrame:
    frame_id: int
    paths: dict  # sensor -> relative Path, only for files present
    timestamps: dict  # sensor -> seconds


@dataclasses.dataclass
class LoadedFrame:
    frame: DatasetFrame
    cube: AdcCube | None = None
    depth: DepthImage | None = None
    pointcloud: list | None = None
    rgb_path: Path | None = None
    ir_path: Path | None = None

    def absent(self) -> list[str]:
        return [s for s in SENSORS if s not in self.frame.paths]


class DatasetRoot:
    """Root folder with five modality folders, a calibration folder and ``timestamps.txt``."""

    def __init__(self, path):
        self.path = Path(path)

    @classmethod
    def create(cls, path) -> DatasetRoot:
        root = cls(path)
        for sub in (*MODALITY_DIRS.values(), CALIBRATION_DIR):
            (root.path / sub).mkdir(parents=True, exist_ok=True)
        return root

    @property
    def calibration_dir(self) -> Path:
        return self.path / CALIBRATION_DIR

    def validate(self) -> None:
        missing = [d for d in (*MODALITY_DIRS.values(), CALIBRATION_DIR) if not (self.path / d).is_dir()]
        if missing:
            raise DatasetError(f"{self.path}: missing subfolders {missing}")

    @staticmethod
    def frame_stem(frame_id: int) -> str:
        return f"{int(frame_id):06d}"

    def modality_path(self, sensor: str, frame_id: int) -> Path | None:
        """Relative path of an existing file for ``sensor``, or None."""
        for ext in MODALITY_EXTS[sensor]:
            rel = Path(MODALITY_DIRS[sensor]) / (self.frame_stem(frame_id) + ext)
            if (self.path / rel).is_file():
                return rel
        return None

    def timestamps(self) -> list[tuple[int, list[float]]]:
        path = self.path / TIMESTAMPS_FILE
        if not path.is_file():
            raise DatasetError(f"{self.path}: mandatory {TIMESTAMPS_FILE} is missing")
        return parse_timestamps(path)

    def write_frame(self, frame_id: int, *, cube: AdcCube | None = None, depth: DepthImage | None = None,
                    pointcloud=None) -> None:
        stem = self.frame_stem(frame_id)
        if cube is not None:
            write_cube(cube, self.path / MODALITY_DIRS["radar"] / (stem + ".cube"))
        if depth is not None:
            write_depth(depth, self.path / MODALITY_DIRS["depth"] / (stem + ".png"))
        if pointcloud is not None:
            write_pointcloud(self.path / MODALITY_DIRS["pointcloud"] / (stem + ".csv"), pointcloud)

    def load_frame(self, frame_id: int) -> LoadedFrame:
        self.validate()
        table = dict(self.timestamps())
        if frame_id not in table:
            raise FrameNotFoundError(f"frame {frame_id} is not listed in {TIMESTAMPS_FILE}")
        stamps = table[frame_id]
        if len(stamps) > len(SENSORS):
            raise DatasetError(f"frame {frame_id} has {len(stamps)} timestamps for {len(SENSORS)} sensors")
        paths = {}
        for sensor in SENSORS:
            rel = self.modality_path(sensor, frame_id)
            if rel is not None:
                paths[sensor] = rel
        frame = DatasetFrame(frame_id, paths, dict(zip(SENSORS, stamps)))
        loaded = LoadedFrame(frame)
        if "radar" in paths:
            loaded.cube = read_cube(self.path / paths["radar"])
        if "depth" in paths:
            loaded.depth = read_depth(self.path / paths["depth"])
        if "pointcloud" in paths:
            loaded.pointcloud = read_pointcloud(self.path / paths["pointcloud"])
        if "rgb" in paths:
            loaded.rgb_path = self.path / paths["rgb"]
        if "ir" in paths:
            loaded.ir_path = self.path / paths["ir"]
        return loaded

