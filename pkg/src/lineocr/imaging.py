"""Raster primitives.

Gray images are 2-D float64 arrays ``[height, width]`` in [0, 1] with ink
high (1.0 = ink, 0.0 = background).  Binary images are 2-D uint8 arrays of
0/1.  Scanned dark-on-light files are inverted at load time so every raster
in the package shares the ink-high polarity.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

N_BINS = 256


def as_gray(img) -> np.ndarray:
    a = np.asarray(img, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {a.shape}")
    if a.size and (a.min() < 0.0 or a.max() > 1.0):
        raise ValueError("gray values must lie in [0, 1]")
    return a


def _bins(a):
    # bin k holds values that round to k/255, so the binarize cut is (k - 0.5)/255
    return np.clip(np.floor(a * (N_BINS - 1) + 0.5), 0, N_BINS - 1).astype(np.int64)


def threshold_for_bin(k) -> float:
    """Cut value whose ``>=`` test puts bins ``>= k`` in the ink class."""
    return (k - 0.5) / (N_BINS - 1)


def between_class_variance(hist):
    """Between-class variance for every split ``k`` (classes ``< k`` / ``>= k``).

    Index 0 is the degenerate everything-in-one-class split.
    """
    hist = np.asarray(hist, dtype=np.float64)
    total = hist.sum()
    p = hist / total
    levels = np.arange(len(hist))
    w0 = np.concatenate(([0.0], np.cumsum(p)[:-1]))
    m0 = np.concatenate(([0.0], np.cumsum(p * levels)[:-1]))
    mu = (p * levels).sum()
    w1 = 1.0 - w0
    with np.errstate(divide="ignore", invalid="ignore"):
        var = (mu * w0 - m0) ** 2 / (w0 * w1)
    var[(w0 <= 0) | (w1 <= 0)] = 0.0
    return var


def otsu_threshold(img) -> float:
    """Otsu threshold over 256 uniform bins; ties go to the lowest bin."""
    a = as_gray(img)
    if a.size == 0:
        raise ValueError("empty input")
    hist = np.bincount(_bins(a).ravel(), minlength=N_BINS)
    var = between_class_variance(hist)
    var[0] = -1.0
    best = var.max()
    k = int(np.flatnonzero(var >= best - 1e-12 * max(best, 1.0))[0])
    return threshold_for_bin(k)


def binarize(img, threshold) -> np.ndarray:
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    return (as_gray(img) >= threshold).astype(np.uint8)


def dilate(mask, radius) -> np.ndarray:
    """Binary dilation with a (2r+1) x (2r+1) square element."""
    if radius < 0:
        raise ValueError("radius must be >= 0")
    m = np.asarray(mask).astype(np.uint8)
    if radius == 0 or m.size == 0:
        return m.copy()
    r = int(radius)
    out = m
    for axis in (0, 1):
        pad = [(0, 0), (0, 0)]
        pad[axis] = (r, r)
        p = np.pad(out, pad)
        n = out.shape[axis]
        acc = np.zeros_like(out)
        for s in range(2 * r + 1):
            acc = np.maximum(acc, np.take(p, np.arange(s, s + n), axis=axis))
        out = acc
    return out


def bolden(img, radius=1) -> np.ndarray:
    """Thicken strokes: binarize at 0.5, dilate, return as gray."""
    return dilate(binarize(img, 0.5), radius).astype(np.float64)


def salt_pepper(img, density, seed) -> np.ndarray:
    """Set ``round(density * N)`` distinct seeded pixels to 0.0 or 1.0."""
    if not 0.0 <= density <= 1.0:
        raise ValueError("density must lie in [0, 1]")
    a = as_gray(img).copy()
    n = a.size
    k = int(math.floor(density * n + 0.5))
    rng = np.random.default_rng(seed)
    idx = rng.choice(n, size=k, replace=False)
    vals = (rng.random(k) < 0.5).astype(np.float64)
    a.ravel()[idx] = vals
    return a


def rotate(img, angle, fill=0.0) -> np.ndarray:
    """Rotate about the image center by ``angle`` degrees, same output size.

    Inverse-mapped bilinear sampling; neighbours outside the image read
    ``fill``.  Positive angles turn the content counterclockwise as displayed.
    """
    a = as_gray(img)
    ang = math.fmod(angle, 360.0)
    if ang > 180.0:
        ang -= 360.0
    elif ang <= -180.0:
        ang += 360.0
    if abs(ang) > 45.0:
        raise ValueError("rotation angle must satisfy |angle| <= 45 degrees")
    if ang == 0.0:
        return a.copy()
    H, W = a.shape
    cy, cx = (H - 1) / 2.0, (W - 1) / 2.0
    th = math.radians(ang)
    c, s = math.cos(th), math.sin(th)
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    dx, dy = xx - cx, yy - cy
    # y axis points down, so a visual CCW turn maps output back through +th
    sx = cx + c * dx - s * dy
    sy = cy + s * dx + c * dy
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    fx, fy = sx - x0, sy - y0
    padded = np.pad(a, 1, constant_values=fill)

    def tap(yi, xi):
        inside = (yi >= -1) & (yi <= H) & (xi >= -1) & (xi <= W)
        v = padded[np.clip(yi + 1, 0, H + 1), np.clip(xi + 1, 0, W + 1)]
        return np.where(inside, v, fill)

    out = (tap(y0, x0) * (1 - fx) * (1 - fy) + tap(y0, x0 + 1) * fx * (1 - fy)
           + tap(y0 + 1, x0) * (1 - fx) * fy + tap(y0 + 1, x0 + 1) * fx * fy)
    return np.clip(out, 0.0, 1.0)


def hconcat_rtl(images, spacing=0, fill=0.0) -> np.ndarray:
    """Join images right-to-left: ``images[0]`` ends up rightmost."""
    if not images:
        raise ValueError("nothing to concatenate")
    imgs = [as_gray(im) for im in images]
    h = imgs[0].shape[0]
    if any(im.shape[0] != h for im in imgs):
        raise ValueError("height mismatch")
    parts = []
    gap = np.full((h, spacing), fill, dtype=np.float64)
    for i, im in enumerate(reversed(imgs)):
        if i:
            parts.append(gap)
        parts.append(im)
    return np.concatenate(parts, axis=1)


@dataclass
class ComponentSet:
    labels: np.ndarray
    count: int
    boxes: list  # (min_x, min_y, max_x, max_y), inclusive
    areas: list


def connected_components(mask, connectivity=8) -> ComponentSet:
    """Label ink components, numbered 1..count in raster-scan first-encounter order."""
    if connectivity not in (4, 8):
        raise ValueError("connectivity must be 4 or 8")
    m = np.asarray(mask).astype(bool)
    structure = ndimage.generate_binary_structure(2, 1 if connectivity == 4 else 2)
    raw, count = ndimage.label(m, structure=structure)
    if count == 0:
        return ComponentSet(np.zeros(m.shape, dtype=np.int64), 0, [], [])
    # renumber by first raster-scan occurrence
    flat = raw.ravel()
    first = np.full(count + 1, flat.size, dtype=np.int64)
    nz = np.flatnonzero(flat)
    np.minimum.at(first, flat[nz], nz)
    order = np.argsort(first[1:], kind="stable") + 1
    remap = np.zeros(count + 1, dtype=np.int64)
    remap[order] = np.arange(1, count + 1)
    labels = remap[raw]
    areas = np.bincount(labels.ravel(), minlength=count + 1)[1:]
    boxes = []
    for sl in ndimage.find_objects(labels):
        ys, xs = sl
        boxes.append((xs.start, ys.start, xs.stop - 1, ys.stop - 1))
    return ComponentSet(labels, count, boxes, [int(a) for a in areas])


# -- PGM (P5) I/O --------------------------------------------------------

def to_bytes(img) -> np.ndarray:
    """Ink-high gray -> dark-on-light 8-bit samples."""
    a = as_gray(img)
    return (255 - np.floor(a * 255 + 0.5)).astype(np.uint8)


def from_bytes(b) -> np.ndarray:
    return (255 - np.asarray(b, dtype=np.float64)) / 255.0


def write_pgm(path, img):
    a = to_bytes(img)
    h, w = a.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(a.tobytes())


def _tokens(buf):
    """Yield (token, end offset) for the PGM header, skipping comments."""
    i, n = 0, len(buf)
    while i < n:
        ch = buf[i:i + 1]
        if ch == b"#":
            while i < n and buf[i:i + 1] not in (b"\n", b"\r"):
                i += 1
        elif ch.isspace():
            i += 1
        else:
            j = i
            while j < n and not buf[j:j + 1].isspace() and buf[j:j + 1] != b"#":
                j += 1
            yield buf[i:j], j
            i = j


def read_pgm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    toks = _tokens(buf)
    try:
        magic, _ = next(toks)
        w, _ = next(toks)
        h, _ = next(toks)
        maxval, end = next(toks)
    except StopIteration:
        raise ValueError(f"{path}: truncated PGM header") from None
    if magic != b"P5":
        raise ValueError(f"{path}: not a binary PGM (P5) file")
    w, h, maxval = int(w), int(h), int(maxval)
    if maxval != 255:
        raise ValueError(f"{path}: only maxval 255 is supported")
    data = buf[end + 1:end + 1 + w * h]
    if len(data) != w * h:
        raise ValueError(f"{path}: truncated pixel data")
    return from_bytes(np.frombuffer(data, dtype=np.uint8).reshape(h, w))
