"""Depth-map tooling: morphological denoising, supervision losses and metrics.

The combined loss has five unweighted terms by default:

* SiLog on log-depth differences against ground truth,
* SSI: L1 between the prediction and pseudo-relative labels after a
  least-squares scale/shift fit on the ground-truth-valid pixels, applied to
  the pixels where ground truth is missing,
* smooth L1 against ground truth,
* gradient matching on the fourth power of the aligned residual,
* gradient regression between Sobel edge maps.

Gradients treat the fitted scale and shift as constants unless asked
otherwise.
"""

from __future__ import annotations

import dataclasses
import functools
import math

import numpy as np
from scipy import ndimage, sparse

from .errors import ContractError, EvaluationError, InputError, SingularFitError

MIN_DEPTH = 1e-3
SOBEL_X = np.array([[-1.0, 0.0, 1.0],
                    [-2.0, 0.0, 2.0],
                    [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T


@dataclasses.dataclass(frozen=True)
class DepthImage:
    """Metric depth raster; invalid pixels hold 0."""

    values: np.ndarray
    valid: np.ndarray | None = None

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 2:
            raise ContractError(f"depth raster must be 2-D, got shape {values.shape}")
        valid = (values > 0) if self.valid is None else np.array(self.valid, dtype=bool)
        if valid.shape != values.shape:
            raise ContractError("valid mask shape does not match the depth raster")
        if np.any(values[~valid] != 0):
            raise ContractError("invalid pixels must carry depth 0")
        v = values[valid]
        if not (np.all(np.isfinite(v)) and np.all(v > 0)):
            raise ContractError("valid pixels must have finite depth > 0")
        values.flags.writeable = False
        valid.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "valid", valid)

    @classmethod
    def from_masked(cls, values, valid) -> DepthImage:
        """Build from any raster, zeroing pixels outside ``valid``."""
        valid = np.asarray(valid, dtype=bool)
        return cls(np.where(valid, values, 0.0), valid)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def __eq__(self, other):
        if not isinstance(other, DepthImage):
            return NotImplemented
        return np.array_equal(self.values, other.values) and np.array_equal(self.valid, other.valid)

    __hash__ = None


@dataclasses.dataclass(frozen=True)
class LossBreakdown:
    silog: float
    ssi: float
    smooth_l1: float
    gm: float
    gr: float
    total: float
    scale: float
    shift: float

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclasses.dataclass(frozen=True)
class DepthMetrics:
    rmse: float
    mae: float
    irmse: float
    imae: float
    valid_count: int

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _raster(x) -> np.ndarray:
    return np.asarray(x.values if isinstance(x, DepthImage) else x, dtype=float)


def _mask(mask, shape) -> np.ndarray:
    if mask is None:
        return np.ones(shape, dtype=bool)
    m = np.asarray(mask, dtype=bool)
    if m.shape != shape:
        raise ContractError(f"mask shape {m.shape} does not match raster {shape}")
    return m


def _check_kernel(k: int, name: str) -> int:
    if int(k) != k or k < 1 or k % 2 == 0:
        raise InputError(f"{name} must be an odd integer >= 1, got {k!r}")
    return int(k)


# -- morphology --------------------------------------------------------------

def _square(k: int) -> np.ndarray:
    return np.ones((k, k), dtype=bool)


def binary_opening(mask, k: int) -> np.ndarray:
    """Opening by a k x k square; everything outside the raster counts as background."""
    mask = np.asarray(mask, dtype=bool)
    k = _check_kernel(k, "kernel")
    if k == 1:
        return mask.copy()
    pad = k
    padded = np.pad(mask, pad, constant_values=False)
    out = ndimage.binary_dilation(ndimage.binary_erosion(padded, _square(k)), _square(k))
    return out[pad:-pad, pad:-pad]


def binary_closing(mask, k: int) -> np.ndarray:
    """Closing by a k x k square computed on the zero-extended plane, then cropped."""
    mask = np.asarray(mask, dtype=bool)
    k = _check_kernel(k, "kernel")
    if k == 1:
        return mask.copy()
    pad = k
    padded = np.pad(mask, pad, constant_values=False)
    out = ndimage.binary_erosion(ndimage.binary_dilation(padded, _square(k)), _square(k))
    return out[pad:-pad, pad:-pad]


def denoise_depth(img: DepthImage, close_kernel: int = 3, open_kernel: int = 3) -> DepthImage:
    """Close the valid mask, then open it.

    Pixels gained by closing take the median of the original valid depths in
    the closing window around them.
    """
    close_kernel = _check_kernel(close_kernel, "close_kernel")
    open_kernel = _check_kernel(open_kernel, "open_kernel")
    closed = binary_closing(img.valid, close_kernel)
    final = binary_opening(closed, open_kernel)
    values = np.where(final, img.values, 0.0)
    rows, cols = np.nonzero(final & ~img.valid)
    if rows.size:
        r = close_kernel // 2
        padded = np.pad(np.where(img.valid, img.values, np.nan), r, constant_values=np.nan)
        windows = np.lib.stride_tricks.sliding_window_view(padded, (close_kernel, close_kernel))[rows, cols]
        values[rows, cols] = np.nanmedian(windows.reshape(rows.size, -1), axis=1)
    return DepthImage(values, final)


def sigmoid_to_depth(raw, max_depth: float) -> DepthImage:
    """Map activations in [0, 1] linearly to (0, max_depth], clamping at 1 mm."""
    raw = np.asarray(raw, dtype=float)
    if not max_depth > 0:
        raise InputError("max_depth must be positive")
    if not (np.all(np.isfinite(raw)) and np.all(raw >= 0) and np.all(raw <= 1)):
        raise InputError("raw activations must lie in [0, 1]")
    depth = np.maximum(raw * max_depth, MIN_DEPTH)
    return DepthImage(depth, np.ones(raw.shape, dtype=bool))


# -- losses ------------------------------------------------------------------

def fit_scale_shift(pred, ref, mask) -> tuple[float, float]:
    """Least-squares ``(s, t)`` minimising ``sum((s * ref + t - pred)**2)`` over ``mask``."""
    z = _raster(pred)
    d = _raster(ref)
    m = _mask(mask, z.shape)
    zm, dm = z[m], d[m]
    if zm.size < 2:
        raise SingularFitError(f"scale/shift fit needs >= 2 pixels, got {zm.size}")
    d_mean = dm.mean()
    dc = dm - d_mean
    var = float(dc @ dc)
    scale_ref = max(float(np.max(np.abs(dm))), 1e-300)
    if var <= zm.size * (1e-12 * scale_ref) ** 2:
        raise SingularFitError("reference is constant on the fit mask")
    s = float(dc @ (zm - zm.mean())) / var
    t = float(zm.mean() - s * d_mean)
    return s, t


def _masked_mean(x: np.ndarray, m: np.ndarray) -> float:
    n = int(m.sum())
    return float(x[m].sum() / n) if n else 0.0


def ssi_loss(pred, pseudo, fit_mask, apply_mask) -> tuple[float, float, float]:
    z = _raster(pred)
    s, t = fit_scale_shift(z, pseudo, fit_mask)
    aligned = s * _raster(pseudo) + t
    loss = _masked_mean(np.abs(z - aligned), _mask(apply_mask, z.shape))
    return loss, s, t


def silog_loss(pred, gt, mask, lam: float = 0.5) -> float:
    z = _raster(pred)
    y = _raster(gt)
    m = _mask(mask, z.shape)
    if not 0.0 <= lam <= 1.0:
        raise InputError(f"lambda must lie in [0, 1], got {lam}")
    if not m.any():
        return 0.0
    if np.any(z[m] <= 0) or np.any(y[m] <= 0):
        raise InputError("silog needs strictly positive depths on the mask")
    g = np.log(z[m]) - np.log(y[m])
    var = float(np.mean(g * g) - lam * np.mean(g) ** 2)
    return math.sqrt(max(var, 0.0))


def smooth_l1_loss(pred, gt, mask, beta: float = 1.0) -> float:
    if not beta > 0:
        raise InputError("beta must be positive")
    z = _raster(pred)
    e = z - _raster(gt)
    a = np.abs(e)
    per_pixel = np.where(a < beta, 0.5 * e * e / beta, a - 0.5 * beta)
    return _masked_mean(per_pixel, _mask(mask, z.shape))


def _forward_diffs(r: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    gx = np.zeros_like(r)
    gy = np.zeros_like(r)
    gx[:, :-1] = r[:, 1:] - r[:, :-1]
    gy[:-1, :] = r[1:, :] - r[:-1, :]
    return gx, gy


def gm_loss_map(pred, aligned_pseudo) -> np.ndarray:
    """Per-pixel ``|dR/dx| + |dR/dy|`` with ``R = (pred - aligned)**4`` and forward differences."""
    e = _raster(pred) - _raster(aligned_pseudo)
    gx, gy = _forward_diffs(e ** 4)
    return np.abs(gx) + np.abs(gy)


def gm_loss(pred, aligned_pseudo, mask=None) -> float:
    per_pixel = gm_loss_map(pred, aligned_pseudo)
    return _masked_mean(per_pixel, _mask(mask, per_pixel.shape))


@functools.lru_cache(maxsize=16)
def _sobel_operators(shape: tuple[int, int]) -> tuple[sparse.csr_matrix, sparse.csr_matrix]:
    """Sparse matrices applying 3x3 Sobel filters with replicate padding to a flattened raster."""
    h, w = shape
    rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    out_idx = (rows * w + cols).ravel()
    mats = []
    for kernel in (SOBEL_X, SOBEL_Y):
        data, ii, jj = [], [], []
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                weight = kernel[di + 1, dj + 1]
                if weight == 0:
                    continue
                src = (np.clip(rows + di, 0, h - 1) * w + np.clip(cols + dj, 0, w - 1)).ravel()
                ii.append(out_idx)
                jj.append(src)
                data.append(np.full(out_idx.size, weight))
        mats.append(sparse.csr_matrix((np.concatenate(data), (np.concatenate(ii), np.concatenate(jj))),
                                      shape=(h * w, h * w)))
    return mats[0], mats[1]


def sobel(raster) -> tuple[np.ndarray, np.ndarray]:
    r = _raster(raster)
    sx, sy = _sobel_operators(r.shape)
    flat = r.ravel()
    return (sx @ flat).reshape(r.shape), (sy @ flat).reshape(r.shape)


def gr_loss(pred, aligned_pseudo, mask=None) -> float:
    z = _raster(pred)
    m = _mask(mask, z.shape)
    ex, ey = sobel(z - _raster(aligned_pseudo))
    return _masked_mean(ex * ex, m) + _masked_mean(ey * ey, m)


def _weights(weights) -> tuple[float, float, float, float, float]:
    if weights is None:
        return (1.0, 1.0, 1.0, 1.0, 1.0)
    w = tuple(float(x) for x in weights)
    if len(w) != 5:
        raise InputError("weights must have five entries (silog, ssi, smooth_l1, gm, gr)")
    return w


def _loss_masks(pred: np.ndarray, gt: DepthImage):
    fit_mask = gt.valid
    apply_mask = ~gt.valid
    metric_mask = gt.valid & (pred > 0)
    return fit_mask, apply_mask, metric_mask


def total_loss(pred, gt: DepthImage, pseudo, lam: float = 0.5, beta: float = 1.0,
               weights=None, scale_shift: tuple[float, float] | None = None) -> LossBreakdown:
    """Sum of the five terms.

    ``gt.valid`` selects the pixels for the scale/shift fit, SiLog and smooth
    L1; SSI is applied to the remaining pixels; gradient terms cover the whole
    raster. Pass ``scale_shift`` to skip the fit and use fixed values.
    """
    z = _raster(pred)
    d = _raster(pseudo)
    if z.shape != gt.values.shape or d.shape != z.shape:
        raise ContractError("pred, gt and pseudo must share one shape")
    w = _weights(weights)
    fit_mask, apply_mask, metric_mask = _loss_masks(z, gt)
    s, t = fit_scale_shift(z, d, fit_mask) if scale_shift is None else scale_shift
    aligned = s * d + t
    terms = (
        silog_loss(z, gt.values, metric_mask, lam),
        _masked_mean(np.abs(z - aligned), apply_mask),
        smooth_l1_loss(z, gt.values, metric_mask, beta),
        gm_loss(z, aligned),
        gr_loss(z, aligned),
    )
    total = float(sum(wi * ti for wi, ti in zip(w, terms)))
    return LossBreakdown(*terms, total=total, scale=float(s), shift=float(t))


def _silog_grad(z, y, m, lam):
    grad = np.zeros_like(z)
    n = int(m.sum())
    if n == 0:
        return grad
    g = np.log(z[m]) - np.log(y[m])
    value = math.sqrt(max(float(np.mean(g * g) - lam * np.mean(g) ** 2), 0.0))
    if value == 0.0:
        return grad
    grad[m] = (g - lam * g.mean()) / (n * value * z[m])
    return grad


def _smooth_l1_grad(z, y, m, beta):
    grad = np.zeros_like(z)
    n = int(m.sum())
    if n == 0:
        return grad
    e = z[m] - y[m]
    grad[m] = np.where(np.abs(e) < beta, e / beta, np.sign(e)) / n
    return grad


def _l1_grad(residual, m):
    grad = np.zeros_like(residual)
    n = int(m.sum())
    if n:
        grad[m] = np.sign(residual[m]) / n
    return grad


def _gm_grad(e):
    """Gradient of the full-raster gradient-matching loss with respect to the residual ``e``."""
    r = e ** 4
    gx, gy = _forward_diffs(r)
    sx = np.sign(gx)
    sy = np.sign(gy)
    d_r = np.zeros_like(r)
    d_r[:, 1:] += sx[:, :-1]
    d_r[:, :-1] -= sx[:, :-1]
    d_r[1:, :] += sy[:-1, :]
    d_r[:-1, :] -= sy[:-1, :]
    return d_r * 4.0 * e ** 3 / e.size


def _gr_grad(e):
    sx, sy = _sobel_operators(e.shape)
    flat = e.ravel()
    g = sx.T @ (sx @ flat) + sy.T @ (sy @ flat)
    return (2.0 / e.size) * g.reshape(e.shape)


def total_loss_gradient(pred, gt: DepthImage, pseudo, lam: float = 0.5, beta: float = 1.0,
                        weights=None, stop_gradient: bool = True) -> np.ndarray:
    """Per-pixel derivative of :func:`total_loss` with respect to the prediction.

    With ``stop_gradient`` (the default) the fitted scale and shift are held
    constant. Otherwise their dependence on the prediction through the
    least-squares fit is differentiated as well.
    """
    z = _raster(pred)
    d = _raster(pseudo)
    if z.shape != gt.values.shape or d.shape != z.shape:
        raise ContractError("pred, gt and pseudo must share one shape")
    w = _weights(weights)
    fit_mask, apply_mask, metric_mask = _loss_masks(z, gt)
    s, t = fit_scale_shift(z, d, fit_mask)
    e = z - (s * d + t)
    # terms that depend on pred only through the aligned residual
    residual_grad = (w[1] * _l1_grad(e, apply_mask) + w[3] * _gm_grad(e) + w[4] * _gr_grad(e))
    grad = (w[0] * _silog_grad(z, gt.values, metric_mask, lam)
            + w[2] * _smooth_l1_grad(z, gt.values, metric_mask, beta)
            + residual_grad)
    if not stop_gradient:
        d_aligned = -residual_grad
        d_s = float(np.sum(d_aligned * d))
        d_t = float(np.sum(d_aligned))
        df = d[fit_mask]
        normal = np.array([[df @ df, df.sum()], [df.sum(), float(df.size)]])
        coeff = np.linalg.solve(normal, np.array([d_s, d_t]))
        grad[fit_mask] += coeff[0] * df + coeff[1]
    return grad


def top_loss_mask(loss_map, fraction: float) -> np.ndarray:
    """Mask that drops the ``ceil(fraction * N)`` highest-loss pixels.

    Among equal losses the lower flat index is kept.
    """
    loss = np.asarray(loss_map, dtype=float)
    if not 0.0 <= fraction < 1.0:
        raise InputError(f"fraction must lie in [0, 1), got {fraction}")
    n = loss.size
    # rounding guards against 0.1 * 30 == 3.0000000000000004
    n_drop = math.ceil(round(fraction * n, 9))
    flat = loss.ravel()
    idx = np.arange(n)
    order = np.lexsort((-idx, -flat))
    keep = np.ones(n, dtype=bool)
    keep[order[:n_drop]] = False
    return keep.reshape(loss.shape)


def depth_metrics(pred: DepthImage, gt: DepthImage) -> DepthMetrics:
    joint = pred.valid & gt.valid
    n = int(joint.sum())
    if n == 0:
        raise EvaluationError("prediction and ground truth share no valid pixels")
    z, y = pred.values[joint], gt.values[joint]
    e = z - y
    inv = (z > MIN_DEPTH) & (y > MIN_DEPTH)
    if not inv.any():
        raise EvaluationError(f"no jointly valid pixel deeper than {MIN_DEPTH} m")
    ie = 1.0 / z[inv] - 1.0 / y[inv]
    return DepthMetrics(
        rmse=float(np.sqrt(np.mean(e * e))),
        mae=float(np.mean(np.abs(e))),
        irmse=float(np.sqrt(np.mean(ie * ie))),
        imae=float(np.mean(np.abs(ie))),
        valid_count=n,
    )
