"""Random loss instances and finite-difference checks shared by the depth tests."""

import numpy as np

from radarfuse.depth import DepthImage, fit_scale_shift, total_loss, total_loss_gradient

FD_STEP = 1e-5
FD_FLOOR = 1e-6


def random_instance(seed, shape=(8, 8), valid_fraction=0.6):
    rng = np.random.default_rng(seed)
    pred = rng.uniform(0.5, 5.0, shape)
    valid = rng.random(shape) < valid_fraction
    valid.flat[:2] = True  # the scale/shift fit needs two pixels
    gt = DepthImage.from_masked(rng.uniform(0.5, 5.0, shape), valid)
    # pseudo labels roughly affine in the prediction, so residuals stay moderate
    pseudo = (pred - 0.2) / 1.7 + rng.normal(0, 0.3, shape)
    return pred, gt, pseudo


def near_kink(pred, gt, pseudo, beta=1.0, margin=10 * FD_STEP):
    """Pixels whose +-step perturbation could cross a non-differentiable point."""
    s, t = fit_scale_shift(pred, pseudo, gt.valid)
    e = pred - (s * pseudo + t)
    bad = np.zeros(pred.shape, dtype=bool)
    bad |= ~gt.valid & (np.abs(e) < margin)
    bad |= gt.valid & (np.abs(np.abs(pred - gt.values) - beta) < margin)
    r = e ** 4
    # how far R can move when one pixel moves by the margin
    slack = 4.0 * (np.abs(e) + margin) ** 3 * margin
    gx = r[:, 1:] - r[:, :-1]
    gy = r[1:, :] - r[:-1, :]
    cx = np.abs(gx) < slack[:, 1:] + slack[:, :-1]
    cy = np.abs(gy) < slack[1:, :] + slack[:-1, :]
    bad[:, 1:] |= cx
    bad[:, :-1] |= cx
    bad[1:, :] |= cy
    bad[:-1, :] |= cy
    return bad


def fd_gradient(pred, gt, pseudo, stop_gradient=True, step=FD_STEP):
    fixed = fit_scale_shift(pred, pseudo, gt.valid) if stop_gradient else None
    out = np.zeros_like(pred)
    for idx in np.ndindex(pred.shape):
        up = pred.copy()
        dn = pred.copy()
        up[idx] += step
        dn[idx] -= step
        lu = total_loss(up, gt, pseudo, scale_shift=fixed).total
        ld = total_loss(dn, gt, pseudo, scale_shift=fixed).total
        out[idx] = (lu - ld) / (2 * step)
    return out


def gradient_relative_error(pred, gt, pseudo, stop_gradient=True):
    """Max per-pixel relative error away from kinks, and the number of pixels skipped."""
    analytic = total_loss_gradient(pred, gt, pseudo, stop_gradient=stop_gradient)
    numeric = fd_gradient(pred, gt, pseudo, stop_gradient)
    skip = near_kink(pred, gt, pseudo)
    if not stop_gradient:
        # a kink anywhere moves the refit (s, t) and so every pixel
        skip = np.full(pred.shape, skip.any())
    rel = np.abs(analytic - numeric) / np.maximum(np.abs(numeric), FD_FLOOR)
    rel[skip] = 0.0
    return float(rel.max()), int(skip.sum())
