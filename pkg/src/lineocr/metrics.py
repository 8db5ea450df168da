"""Recognition and detection scores.

CRR = 100 * (1 - total character edit distance / total reference characters),
floored at 0.  WRR = exact reference words recovered after a word-level
edit-distance alignment.  Detection precision/recall/F use rasterized IoU and
greedy one-to-one matching.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import geometry

WORD_ALIGNMENT = "minimal word-level edit distance; ties resolved toward more exact matches"


def levenshtein(a, b) -> int:
    """Unit-cost insert/delete/substitute distance between two sequences."""
    a, b = list(a), list(b)
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def _check_pairs(refs, hyps):
    if len(refs) != len(hyps):
        raise ValueError(f"{len(refs)} references but {len(hyps)} hypotheses")


def crr(refs, hyps) -> float:
    _check_pairs(refs, hyps)
    total = sum(len(r) for r in refs)
    if total == 0:
        raise ValueError("references contain no characters")
    dist = sum(levenshtein(r, h) for r, h in zip(refs, hyps))
    return max(0.0, (1.0 - dist / total) * 100.0)


def word_matches(ref_words, hyp_words) -> int:
    """Exact matches in a minimal-cost word alignment (max matches among ties)."""
    n, m = len(ref_words), len(hyp_words)
    # cell = (cost, -matches); tuples compare lexicographically
    prev = [(j, 0) for j in range(m + 1)]
    for i in range(1, n + 1):
        cur = [(i, 0)]
        for j in range(1, m + 1):
            same = ref_words[i - 1] == hyp_words[j - 1]
            diag = prev[j - 1]
            cur.append(min(
                (diag[0] + (not same), diag[1] - same),
                (prev[j][0] + 1, prev[j][1]),
                (cur[j - 1][0] + 1, cur[j - 1][1]),
            ))
        prev = cur
    return -prev[m][1]


def wrr(refs, hyps) -> float:
    _check_pairs(refs, hyps)
    total = matched = 0
    for r, h in zip(refs, hyps):
        rw, hw = r.split(), h.split()
        total += len(rw)
        matched += word_matches(rw, hw)
    if total == 0:
        raise ValueError("references contain no words")
    return matched / total * 100.0


# -- detection -----------------------------------------------------------

def _grid_for(polys):
    if not polys:
        return 1, 1
    pts = np.concatenate([np.asarray(p.points) for p in polys])
    return int(np.ceil(pts[:, 0].max())) + 1, int(np.ceil(pts[:, 1].max())) + 1


def raster_iou(a, b, width, height) -> float:
    ma = geometry.rasterize(a, width, height).astype(bool)
    mb = geometry.rasterize(b, width, height).astype(bool)
    union = np.logical_or(ma, mb).sum()
    return float(np.logical_and(ma, mb).sum() / union) if union else 0.0


@dataclass
class DetectionScore:
    precision: float
    recall: float
    f_measure: float
    tp: int
    n_gt: int
    n_pred: int
    notes: list = field(default_factory=list)


def detection_prf(gt, pred, iou_thresh=0.5, grid=None) -> DetectionScore:
    """Precision/recall/F-measure (percent) for polygon sets.

    Empty prediction or ground-truth sets give 0 for the undefined ratio;
    the convention is recorded in ``notes``.
    """
    if not 0.0 < iou_thresh < 1.0:
        raise ValueError("iou_thresh must lie in (0, 1)")
    width, height = grid if grid is not None else _grid_for(list(gt) + list(pred))
    gmasks = [geometry.rasterize(g.points, width, height).astype(bool) for g in gt]
    pmasks = [geometry.rasterize(p.points, width, height).astype(bool) for p in pred]
    pairs = []
    for i, gm in enumerate(gmasks):
        for j, pm in enumerate(pmasks):
            union = np.logical_or(gm, pm).sum()
            iou = np.logical_and(gm, pm).sum() / union if union else 0.0
            if iou >= iou_thresh:
                pairs.append((float(iou), i, j))
    # descending IoU; equal IoUs fall back to geometry so input order never matters
    def key(t):
        iou, i, j = t
        return (-iou, np.asarray(gt[i].points).round(9).tobytes(),
                np.asarray(pred[j].points).round(9).tobytes())

    pairs.sort(key=key)
    used_g, used_p = set(), set()
    tp = 0
    for iou, i, j in pairs:
        if i in used_g or j in used_p:
            continue
        used_g.add(i)
        used_p.add(j)
        tp += 1
    notes = []
    if not pred:
        notes.append("no predictions: precision reported as 0")
    if not gt:
        notes.append("no ground truth: recall reported as 0")
    p = tp / len(pred) * 100.0 if pred else 0.0
    r = tp / len(gt) * 100.0 if gt else 0.0
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return DetectionScore(p, r, f, tp, len(gt), len(pred), notes)


# -- reports -------------------------------------------------------------

MODE_COLUMNS = (("none", "Solid"), ("salt", "Salted"), ("bold", "Bolded"))


@dataclass
class BucketScore:
    words: int
    augment: str
    samples: int
    crr: float
    wrr: float


@dataclass
class EvalReport:
    crr: float
    wrr: float
    buckets: list
    decoder: str = "greedy"
    metadata: dict = field(default_factory=dict)
    detection: dict | None = None

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True, ensure_ascii=False)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        d["buckets"] = [BucketScore(**b) for b in d["buckets"]]
        return cls(**d)

    def bucket(self, words, augment):
        for b in self.buckets:
            if b.words == words and b.augment == augment:
                return b
        return None

    def to_csv(self):
        """Rows per word count; (CRR, WRR) column pairs per augmentation mode."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        header = ["#", "Num of Words"]
        for _, label in MODE_COLUMNS:
            header += [f"{label} CRR", f"{label} WRR"]
        w.writerow(header)
        counts = sorted({b.words for b in self.buckets})
        for row, k in enumerate(counts, 1):
            line = [row, k]
            for mode, _ in MODE_COLUMNS:
                b = self.bucket(k, mode)
                line += [f"{b.crr:.2f}", f"{b.wrr:.2f}"] if b else ["-", "-"]
            w.writerow(line)
        return buf.getvalue()


def evaluate_transcripts(records, decoder="greedy", metadata=None) -> EvalReport:
    """``records``: iterable of ``(words, augment, ref, hyp)``."""
    records = list(records)
    if not records:
        raise ValueError("nothing to evaluate")
    groups: dict[tuple, list] = {}
    for words, aug, ref, hyp in records:
        groups.setdefault((int(words), aug), []).append((ref, hyp))
    buckets = []
    for (k, aug) in sorted(groups):
        refs, hyps = zip(*groups[(k, aug)])
        buckets.append(BucketScore(k, aug, len(refs), crr(refs, hyps), wrr(refs, hyps)))
    refs = [r[2] for r in records]
    hyps = [r[3] for r in records]
    meta = {"word_alignment": WORD_ALIGNMENT, **(metadata or {})}
    return EvalReport(crr(refs, hyps), wrr(refs, hyps), buckets, decoder, meta)


def detection_csv(score: DetectionScore):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["Model", "Precision", "Recall", "F-Measure"])
    w.writerow(["Ours", f"{score.precision:.2f}", f"{score.recall:.2f}", f"{score.f_measure:.2f}"])
    return buf.getvalue()
