"""Pure numpy implementations of the hot kernels.

Used when the compiled ``_kernels`` extension is unavailable, and as the
reference the compiled versions are tested against.
"""
import numpy as np


def stamp_discs(canvas, xs, ys, radii, colors):
    """Max-composite filled discs into ``canvas`` (H x W x 3) in place.

    Pixel (r, c) is covered by disc i when (c - xs[i])**2 + (r - ys[i])**2
    <= radii[i]**2.
    """
    if len(xs) == 0:
        return canvas
    h, w, _ = canvas.shape
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    radii = np.asarray(radii, dtype=np.float64)
    colors = np.asarray(colors, dtype=np.float64)
    rmax = int(np.ceil(radii.max()))
    cx = np.rint(xs).astype(np.int64)
    cy = np.rint(ys).astype(np.int64)
    flat = canvas.reshape(-1, 3)
    for dy in range(-rmax - 1, rmax + 2):
        for dx in range(-rmax - 1, rmax + 2):
            c = cx + dx
            r = cy + dy
            hit = (c - xs) ** 2 + (r - ys) ** 2 <= radii**2
            hit &= (c >= 0) & (c < w) & (r >= 0) & (r < h)
            if not hit.any():
                continue
            idx = r[hit] * w + c[hit]
            for ch in range(3):
                np.maximum.at(flat[:, ch], idx, colors[hit, ch])
    return canvas


def dwconv1d_forward(x, kernels):
    """out[n, c] = sum_j kernels[c, j] * x[n + j - h, c], zero padded, h = k // 2."""
    n, _ = x.shape
    k = kernels.shape[1]
    h = k // 2
    xp = np.zeros((n + 2 * h, x.shape[1]))
    xp[h : h + n] = x
    out = np.zeros_like(x, dtype=np.float64)
    for j in range(k):
        out += kernels[:, j] * xp[j : j + n]
    return out


def dwconv1d_backward(x, kernels, grad_out):
    n, _ = x.shape
    k = kernels.shape[1]
    h = k // 2
    xp = np.zeros((n + 2 * h, x.shape[1]))
    xp[h : h + n] = x
    gp = np.zeros_like(xp)
    dk = np.empty_like(kernels, dtype=np.float64)
    for j in range(k):
        dk[:, j] = np.einsum("nc,nc->c", grad_out, xp[j : j + n])
        gp[j : j + n] += kernels[:, j] * grad_out
    return gp[h : h + n].copy(), dk
