"""Differentiable binarization: soft binary map, training targets, loss, boxes.

Maps are 2-D float arrays ``[height, width]`` in [0, 1].  Polygons are
:class:`TextPolygon` instances in map pixel coordinates (see
:mod:`lineocr.geometry` for the pixel convention).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import geometry
from .geometry import DegenerateOffset, offset_polygon
from .imaging import binarize, connected_components

K = 50.0
ALPHA = 1.0
BETA = 10.0
NEG_RATIO = 3.0
SHRINK_RATIO = 0.4
T_MIN, T_MAX = 0.3, 0.7
BIN_THRESH = 0.3
BOX_SCORE_THRESH = 0.5
UNCLIP_RATIO = 1.5
BCE_EPS = 1e-6

__all__ = [
    "TextPolygon", "SupervisionTargets", "approx_binary_map", "approx_binary_map_grad",
    "make_targets", "db_loss", "box_formation", "offset_polygon", "DegenerateOffset",
    "read_polygons", "write_polygons",
]


@dataclass
class TextPolygon:
    points: np.ndarray
    score: float = 1.0

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        if len(pts) < 3:
            raise ValueError("a text polygon needs at least 3 vertices")
        pts = geometry.orient_positive(pts)
        if geometry.signed_area(pts) <= 0:
            raise ValueError("polygon has zero area")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError("score must lie in [0, 1]")
        self.points = pts
        self.score = float(self.score)

    @property
    def area(self):
        return geometry.signed_area(self.points)

    @property
    def perimeter(self):
        return geometry.perimeter(self.points)

    def rasterize(self, width, height):
        return geometry.rasterize(self.points, width, height)

    def to_json(self):
        return json.dumps({"points": [[round(float(x), 6), round(float(y), 6)] for x, y in self.points],
                           "score": round(self.score, 6)})


def write_polygons(path, polygons):
    with open(path, "w", encoding="utf-8") as fh:
        for p in polygons:
            fh.write(p.to_json() + "\n")


def read_polygons(path):
    """Parse polygon JSON lines; errors name the offending line."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                out.append(TextPolygon(obj["points"], obj.get("score", 1.0)))
            except (ValueError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed polygon row ({exc})") from None
    return out


# -- approximate binary map ----------------------------------------------

def _logistic(x):
    # exp(-|x|) never overflows
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def approx_binary_map(P, T, k=K):
    """Soft binarization ``1 / (1 + exp(-k (P - T)))``."""
    P = np.asarray(P, dtype=np.float64)
    T = np.asarray(T, dtype=np.float64)
    if P.shape != T.shape:
        raise ValueError(f"probability map {P.shape} and threshold map {T.shape} differ in size")
    if k <= 0:
        raise ValueError("k must be positive")
    return _logistic(k * (P - T))


def approx_binary_map_grad(P, T, k=K):
    """Elementwise ``(dB/dP, dB/dT)``."""
    B = approx_binary_map(P, T, k)
    g = k * B * (1.0 - B)
    return g, -g


# -- supervision ---------------------------------------------------------

@dataclass
class SupervisionTargets:
    prob_target: np.ndarray
    thresh_target: np.ndarray
    thresh_mask: np.ndarray
    shrink_ratio: float
    t_min: float
    t_max: float
    skipped: list = field(default_factory=list)


def shrink_distance(poly, r):
    return poly.area * (1.0 - r * r) / poly.perimeter


def make_targets(gt, width, height, r=SHRINK_RATIO, t_min=T_MIN, t_max=T_MAX):
    """Rasterized probability/threshold targets for ground-truth polygons.

    Polygons whose inward offset collapses are left out and their indices
    listed in ``skipped``.
    """
    if not 0.0 < r < 1.0:
        raise ValueError("shrink ratio must lie in (0, 1)")
    if not t_min < t_max:
        raise ValueError("t_min must be below t_max")
    prob = np.zeros((height, width), dtype=np.uint8)
    band = np.zeros((height, width), dtype=np.uint8)
    closeness = np.zeros((height, width))
    skipped = []
    ys, xs = np.mgrid[0:height, 0:width]
    cx, cy = xs + 0.5, ys + 0.5
    for idx, poly in enumerate(gt):
        D = shrink_distance(poly, r)
        if D <= 0:
            prob |= poly.rasterize(width, height)
            continue
        try:
            shrunk = offset_polygon(poly.points, -D)
        except DegenerateOffset:
            skipped.append(idx)
            continue
        prob |= geometry.rasterize(shrunk, width, height)
        grown = geometry.rasterize(offset_polygon(poly.points, D), width, height)
        band |= grown
        sel = grown.astype(bool)
        d = geometry.segment_distance(cx[sel], cy[sel], poly.points)
        closeness[sel] = np.maximum(closeness[sel], np.clip(1.0 - d / D, 0.0, 1.0))
    mask = band & (1 - prob)
    thresh = t_min + (t_max - t_min) * closeness * mask
    return SupervisionTargets(prob, thresh, mask.astype(np.uint8), r, t_min, t_max, skipped)


# -- loss ----------------------------------------------------------------

def _bce_map(pred, target):
    p = np.clip(pred, BCE_EPS, 1.0 - BCE_EPS)
    return -(target * np.log(p) + (1 - target) * np.log(1 - p))


def balanced_bce(pred, target, neg_ratio=NEG_RATIO):
    """BCE over all positives and the hardest ``neg_ratio * #pos`` negatives.

    Returns ``(loss, kept_negative_flat_indices)``.
    """
    target = np.asarray(target, dtype=np.float64)
    loss = _bce_map(np.asarray(pred, dtype=np.float64), target)
    pos = target.ravel() > 0.5
    n_pos = int(pos.sum())
    neg_idx = np.flatnonzero(~pos)
    n_keep = min(len(neg_idx), int(neg_ratio * n_pos))
    flat = loss.ravel()
    if n_keep > 0:
        # stable sort on (-loss, index): equal losses keep raster order
        order = np.argsort(-flat[neg_idx], kind="stable")
        kept = np.sort(neg_idx[order[:n_keep]])
    else:
        kept = np.array([], dtype=np.int64)
    denom = n_pos + n_keep
    if denom == 0:
        return 0.0, kept
    return float((flat[pos].sum() + flat[kept].sum()) / denom), kept


@dataclass
class DBLoss:
    total: float
    Ls: float
    Lb: float
    Lt: float
    degenerate: bool = False
    # the exact raster handed to the probability and binary terms
    shared_targets: tuple = ()


def db_loss(P, T, B, targets: SupervisionTargets, alpha=ALPHA, beta=BETA, neg_ratio=NEG_RATIO):
    """``Ls + alpha * Lb + beta * Lt``.

    The probability and approximate-binary terms consume one and the same
    target raster; the threshold term is an L1 inside the threshold mask.
    """
    P, T, B = (np.asarray(a, dtype=np.float64) for a in (P, T, B))
    if not (P.shape == T.shape == B.shape == targets.prob_target.shape):
        raise ValueError("all maps and targets must share one size")
    shared = targets.prob_target
    n_pos = int(shared.sum())
    mask = targets.thresh_mask.astype(bool)
    if n_pos == 0 and not mask.any():
        return DBLoss(0.0, 0.0, 0.0, 0.0, degenerate=True, shared_targets=(shared, shared))
    Ls, _ = balanced_bce(P, shared, neg_ratio)
    Lb, _ = balanced_bce(B, shared, neg_ratio)
    Lt = float(np.abs(T - targets.thresh_target)[mask].mean()) if mask.any() else 0.0
    total = Ls + alpha * Lb + beta * Lt
    return DBLoss(total, Ls, Lb, Lt, shared_targets=(shared, shared))


# -- box formation -------------------------------------------------------

def box_formation(prob_map, bin_thresh=BIN_THRESH, box_score_thresh=BOX_SCORE_THRESH,
                  unclip_ratio=UNCLIP_RATIO, min_area=1.0):
    """Turn a probability (or approximate binary) map into scored rectangles.

    threshold -> 8-connected components -> Moore contour -> hull -> min-area
    rectangle -> score filter -> outward offset by ``A * unclip_ratio / L``.
    Output is sorted by descending score.
    """
    if not (0.0 <= bin_thresh <= 1.0 and 0.0 <= box_score_thresh <= 1.0):
        raise ValueError("thresholds must lie in [0, 1]")
    if unclip_ratio <= 0:
        raise ValueError("unclip_ratio must be positive")
    m = np.asarray(prob_map, dtype=np.float64)
    comps = connected_components(binarize(m, bin_thresh), connectivity=8)
    found = []
    for c in range(1, comps.count + 1):
        x0, y0, x1, y1 = comps.boxes[c - 1]
        sub = comps.labels[y0:y1 + 1, x0:x1 + 1] == c
        score = float(m[y0:y1 + 1, x0:x1 + 1][sub].mean())
        if score < box_score_thresh:
            continue
        contour = geometry.trace_contour(sub)
        corners = geometry.pixel_corners(contour) + np.array([x0, y0])
        rect = geometry.min_area_rect(geometry.convex_hull(corners))
        area, perim = geometry.signed_area(rect), geometry.perimeter(rect)
        if area < min_area:
            continue
        grown = offset_polygon(rect, area * unclip_ratio / perim)
        found.append((score, c, TextPolygon(grown, min(score, 1.0))))
    found.sort(key=lambda t: (-t[0], t[1]))
    return [p for _, _, p in found]
