"""Independent oracles used across the test-suite.

Nothing here imports the implementation paths it is used to check, apart
from calling the function under test as a black box.
"""

import numpy as np

FD_STEP = 1e-5
REL_FLOOR = 1e-6


def numeric_grad(f, x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Central finite differences of the scalar function ``f`` at ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f(x.copy())
        flat[i] = old - h
        fm = f(x.copy())
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return g


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = REL_FLOOR) -> float:
    """max |a - n| / max(|a|, |n|, floor) over all entries."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def naive_conv2d(x, k, b):
    """Direct nested-loop "same" cross-correlation with zero padding."""
    n, c, h, w = x.shape
    o, _, kh, kw = k.shape
    ph, pw = kh // 2, kw // 2
    out = np.zeros((n, o, h, w))
    for bi in range(n):
        for oc in range(o):
            for y in range(h):
                for xx in range(w):
                    acc = b[oc]
                    for ic in range(c):
                        for dy in range(kh):
                            for dx in range(kw):
                                yy, xs = y + dy - ph, xx + dx - pw
                                if 0 <= yy < h and 0 <= xs < w:
                                    acc += x[bi, ic, yy, xs] * k[oc, ic, dy, dx]
                    out[bi, oc, y, xx] = acc
    return out


def dcgi_oracle(patterns, s, r):
    """Straight-line evaluation of the differential ghost imaging estimate.

    ``patterns`` is a list of 2-D lists/arrays, ``s`` and ``r`` lists of
    floats. Everything is done with Python floats in explicit loops.
    """
    n = len(patterns)
    h, w = len(patterns[0]), len(patterns[0][0])
    mean_s = sum(s) / n
    mean_r = sum(r) / n
    out = [[0.0] * w for _ in range(h)]
    for y in range(h):
        for x in range(w):
            mean_i = sum(float(p[y][x]) for p in patterns) / n
            acc = 0.0
            for i in range(n):
                acc += (s[i] / r[i] - mean_s / mean_r) * (float(patterns[i][y][x]) - mean_i)
            out[y][x] = acc / n
    return np.array(out)


def tgi_oracle(patterns, s):
    n = len(patterns)
    h, w = len(patterns[0]), len(patterns[0][0])
    mean_s = sum(s) / n
    out = [[0.0] * w for _ in range(h)]
    for y in range(h):
        for x in range(w):
            mean_i = sum(float(p[y][x]) for p in patterns) / n
            out[y][x] = sum((s[i] - mean_s) * (float(patterns[i][y][x]) - mean_i) for i in range(n)) / n
    return np.array(out)


def bucket_oracle(obj, pattern):
    s = 0.0
    r = 0.0
    for y in range(len(obj)):
        for x in range(len(obj[0])):
            s += float(pattern[y][x]) * float(obj[y][x])
            r += float(pattern[y][x])
    return s, r


def gaussian_window(size=11, sigma=1.5):
    ax = [i - (size - 1) / 2 for i in range(size)]
    g = np.array([[np.exp(-(a * a + b * b) / (2 * sigma * sigma)) for b in ax] for a in ax])
    return g / g.sum()


def ssim_oracle(a, b, size=11, sigma=1.5, peak=1.0):
    """Window-by-window SSIM, averaged over windows fully inside the image."""
    c1, c2 = (0.01 * peak) ** 2, (0.03 * peak) ** 2
    win = gaussian_window(size, sigma)
    h, w = a.shape
    vals = []
    for y in range(h - size + 1):
        for x in range(w - size + 1):
            pa = a[y:y + size, x:x + size]
            pb = b[y:y + size, x:x + size]
            ma = float((win * pa).sum())
            mb = float((win * pb).sum())
            va = float((win * (pa - ma) ** 2).sum())
            vb = float((win * (pb - mb) ** 2).sum())
            cov = float((win * (pa - ma) * (pb - mb)).sum())
            vals.append((2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2)))
    return sum(vals) / len(vals)


def gaussian_blur_oracle(img, radius, sigma):
    """Normalised truncated Gaussian blur with clamp-to-edge borders."""
    h, w = img.shape
    out = np.zeros_like(img, dtype=np.float64)
    for y in range(h):
        for x in range(w):
            num = den = 0.0
            for dy in range(-radius, radius + 1):
                for dx in range(-radius, radius + 1):
                    wgt = np.exp(-(dy * dy + dx * dx) / (2 * sigma * sigma))
                    yy = min(max(y + dy, 0), h - 1)
                    xx = min(max(x + dx, 0), w - 1)
                    num += wgt * img[yy, xx]
                    den += wgt
            out[y, x] = num / den
    return out


def scalar_adam(theta, grads, lr, b1, b2, eps):
    """Scalar Adam with bias correction, one step per gradient in ``grads``."""
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        theta = theta - lr * mhat / (vhat ** 0.5 + eps)
    return theta
