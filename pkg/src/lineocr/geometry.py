"""Polygon helpers in pixel coordinates.

Pixel ``(row i, col j)`` covers the unit square ``[j, j+1) x [i, i+1)``;
its center is ``(j + 0.5, i + 0.5)``.  Polygons are ``[n, 2]`` arrays of
``(x, y)`` vertices with positive shoelace area.
"""
from __future__ import annotations

import numpy as np


class DegenerateOffset(ValueError):
    pass


def signed_area(pts) -> float:
    p = np.asarray(pts, dtype=np.float64)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def perimeter(pts) -> float:
    p = np.asarray(pts, dtype=np.float64)
    return float(np.linalg.norm(np.roll(p, -1, axis=0) - p, axis=1).sum())


def orient_positive(pts) -> np.ndarray:
    p = np.asarray(pts, dtype=np.float64)
    return p[::-1].copy() if signed_area(p) < 0 else p.copy()


def rasterize(pts, width, height) -> np.ndarray:
    """0/1 mask of pixels whose centers fall inside the polygon (even-odd rule)."""
    p = np.asarray(pts, dtype=np.float64)
    out = np.zeros((height, width), dtype=np.uint8)
    if len(p) < 3 or width <= 0 or height <= 0:
        return out
    x0 = max(int(np.floor(p[:, 0].min())), 0)
    x1 = min(int(np.ceil(p[:, 0].max())), width)
    y0 = max(int(np.floor(p[:, 1].min())), 0)
    y1 = min(int(np.ceil(p[:, 1].max())), height)
    if x0 >= x1 or y0 >= y1:
        return out
    ys = np.arange(y0, y1) + 0.5
    xs = np.arange(x0, x1) + 0.5
    inside = np.zeros((len(ys), len(xs)), dtype=bool)
    q = np.roll(p, -1, axis=0)
    for (ax, ay), (bx, by) in zip(p, q):
        if ay == by:
            continue
        crosses = (ay > ys) != (by > ys)
        if not crosses.any():
            continue
        xcross = ax + (ys - ay) * (bx - ax) / (by - ay)
        hit = crosses[:, None] & (xs[None, :] < xcross[:, None])
        inside ^= hit
    out[y0:y1, x0:x1] = inside
    return out


def segment_distance(px, py, pts) -> np.ndarray:
    """Distance from points ``(px, py)`` to the polygon boundary."""
    p = np.asarray(pts, dtype=np.float64)
    q = np.roll(p, -1, axis=0)
    best = np.full(np.shape(px), np.inf)
    for (ax, ay), (bx, by) in zip(p, q):
        dx, dy = bx - ax, by - ay
        l2 = dx * dx + dy * dy
        if l2 == 0:
            d = np.hypot(px - ax, py - ay)
        else:
            t = np.clip(((px - ax) * dx + (py - ay) * dy) / l2, 0.0, 1.0)
            d = np.hypot(px - (ax + t * dx), py - (ay + t * dy))
        best = np.minimum(best, d)
    return best


def _drop_collinear(p, tol=1e-12):
    keep = []
    n = len(p)
    for i in range(n):
        a, b, c = p[i - 1], p[i], p[(i + 1) % n]
        cross = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0])
        if abs(cross) > tol * max(1.0, np.abs(p).max()) or np.allclose(a, c):
            keep.append(b)
    return np.array(keep) if len(keep) >= 3 else p


def offset_polygon(pts, delta) -> np.ndarray:
    """Move every edge ``delta`` along its outward normal and re-join (miter).

    Miters longer than ``2|delta|`` are cut square at that distance, adding a
    vertex.  Raises :class:`DegenerateOffset` when an inward offset collapses
    the polygon.
    """
    p = orient_positive(pts)
    if len(p) < 3 or signed_area(p) <= 0:
        raise ValueError("polygon needs >= 3 vertices and nonzero area")
    if delta == 0:
        return p
    p = _drop_collinear(p)
    n = len(p)
    d = np.roll(p, -1, axis=0) - p
    lengths = np.linalg.norm(d, axis=1)
    if np.any(lengths == 0):
        raise ValueError("polygon has repeated vertices")
    u = d / lengths[:, None]
    normal = np.stack([u[:, 1], -u[:, 0]], axis=1)
    cap = 2.0 * abs(delta)
    out = []
    for i in range(n):
        # vertex i joins edge i-1 (incoming) and edge i (outgoing)
        u0, u1 = u[i - 1], u[i]
        n0, n1 = normal[i - 1], normal[i]
        v = p[i]
        a0 = v + delta * n0
        a1 = v + delta * n1
        cross = u0[0] * u1[1] - u0[1] * u1[0]
        if abs(cross) < 1e-12:
            out.append(a1)
            continue
        # intersect a0 + s*u0 with a1 + t*u1
        w = a1 - a0
        s = (w[0] * u1[1] - w[1] * u1[0]) / cross
        m = a0 + s * u0
        miter = m - v
        mlen = float(np.hypot(*miter))
        if mlen <= cap:
            out.append(m)
            continue
        # square cut perpendicular to the miter at distance `cap` from v
        md = miter / mlen
        c = v + cap * md
        for a, uu in ((a0, u0), (a1, u1)):
            denom = uu @ md
            t = ((c - a) @ md) / denom
            out.append(a + t * uu)
    res = np.array(out)
    if delta < 0:
        # an edge that vanished or reversed direction means the offset overran
        if signed_area(res) <= 0:
            raise DegenerateOffset("degenerate offset")
        if len(res) == n:
            nd = np.roll(res, -1, axis=0) - res
            if np.any((nd * u).sum(axis=1) <= 1e-12):
                raise DegenerateOffset("degenerate offset")
    return res


def convex_hull(points) -> np.ndarray:
    """Andrew's monotone chain; positive orientation, no collinear vertices."""
    pts = sorted(set(map(tuple, np.asarray(points, dtype=np.float64).tolist())))
    if len(pts) <= 2:
        return np.array(pts)

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower, upper = [], []
    for q in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], q) <= 0:
            lower.pop()
        lower.append(q)
    for q in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], q) <= 0:
            upper.pop()
        upper.append(q)
    return np.array(lower[:-1] + upper[:-1])


def min_area_rect(hull) -> np.ndarray:
    """Smallest-area enclosing rectangle via rotating calipers over hull edges.

    Returns 4 vertices with positive orientation.
    """
    h = np.asarray(hull, dtype=np.float64)
    if len(h) < 3:
        raise ValueError("hull needs >= 3 vertices")
    best = None
    for i in range(len(h)):
        e = h[(i + 1) % len(h)] - h[i]
        ln = np.hypot(*e)
        if ln == 0:
            continue
        ux = e / ln
        uy = np.array([-ux[1], ux[0]])
        a, b = h @ ux, h @ uy
        area = (a.max() - a.min()) * (b.max() - b.min())
        if best is None or area < best[0] - 1e-9:
            best = (area, ux, uy, a.min(), a.max(), b.min(), b.max())
    _, ux, uy, a0, a1, b0, b1 = best
    rect = np.array([a0 * ux + b0 * uy, a1 * ux + b0 * uy, a1 * ux + b1 * uy, a0 * ux + b1 * uy])
    return orient_positive(rect)


# Moore neighbourhood, clockwise on screen starting west: (dy, dx)
_MOORE = [(0, -1), (-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1)]


def trace_contour(mask) -> list:
    """Moore boundary following of the component containing the first ink pixel.

    Starts at the top-most, then left-most ink pixel and returns boundary
    pixels as ``(row, col)`` in visiting order (Jacob's stopping criterion).
    """
    m = np.asarray(mask).astype(bool)
    ys, xs = np.nonzero(m)
    if len(ys) == 0:
        return []
    start = (int(ys[0]), int(xs[0]))
    H, W = m.shape

    def ink(r, c):
        return 0 <= r < H and 0 <= c < W and m[r, c]

    contour = [start]
    cur = start
    # entered from the west (the pixel to the left is background by choice of start)
    back = 0
    first_move = None
    for _ in range(4 * m.size + 8):
        found = None
        for k in range(1, 9):
            d = (back + k) % 8
            r, c = cur[0] + _MOORE[d][0], cur[1] + _MOORE[d][1]
            if ink(r, c):
                found = (d, (r, c))
                break
        if found is None:
            return contour  # isolated pixel
        d, nxt = found
        if cur == start and first_move is not None and (d, nxt) == first_move:
            contour.pop()
            return contour
        if cur == start and first_move is None:
            first_move = (d, nxt)
        # next search starts from the background cell preceding `nxt`
        prev_bg = (d + 7) % 8
        pr, pc = cur[0] + _MOORE[prev_bg][0], cur[1] + _MOORE[prev_bg][1]
        back = _MOORE.index((pr - nxt[0], pc - nxt[1]))
        cur = nxt
        contour.append(cur)
    return contour


def pixel_corners(pixels) -> np.ndarray:
    """All four corners of each ``(row, col)`` pixel as ``(x, y)`` points."""
    rc = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    x, y = rc[:, 1], rc[:, 0]
    return np.concatenate([
        np.stack([x, y], 1), np.stack([x + 1, y], 1),
        np.stack([x + 1, y + 1], 1), np.stack([x, y + 1], 1),
    ])
