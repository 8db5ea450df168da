"""Slow, obviously-correct reference implementations used only by the tests."""
import itertools
from collections import deque
from functools import lru_cache

import numpy as np


def numgrad(f, x, h=1e-6):
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b):
    s = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if s == 0 else np.linalg.norm(a - b) / s


def collapse(path, blank):
    out, prev = [], None
    for c in path:
        if c != prev and c != blank:
            out.append(c)
        prev = c
    return tuple(out)


def class_masses(lp):
    """Log mass of every collapse class, by enumerating all C**T paths."""
    T, C = lp.shape
    blank = C - 1
    acc = {}
    for path in itertools.product(range(C), repeat=T):
        key = collapse(path, blank)
        acc.setdefault(key, []).append(sum(lp[t, c] for t, c in enumerate(path)))
    return {k: float(np.logaddexp.reduce(v)) for k, v in acc.items()}


def brute_ctc_nll(lp, labels):
    return -class_masses(lp).get(tuple(labels), -np.inf)


def random_log_probs(rng, T, C, scale=1.0):
    z = rng.standard_normal((T, C)) * scale
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def edit_distance(a, b):
    @lru_cache(maxsize=None)
    def d(i, j):
        if i == 0:
            return j
        if j == 0:
            return i
        return min(d(i - 1, j) + 1, d(i, j - 1) + 1, d(i - 1, j - 1) + (a[i - 1] != b[j - 1]))
    return d(len(a), len(b))


def flood_components(mask, connectivity=8):
    """Labels in raster-scan first-encounter order via BFS."""
    h, w = mask.shape
    lab = np.zeros((h, w), dtype=np.int64)
    if connectivity == 8:
        nb = [(di, dj) for di in (-1, 0, 1) for dj in (-1, 0, 1) if (di, dj) != (0, 0)]
    else:
        nb = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    n = 0
    for i in range(h):
        for j in range(w):
            if mask[i, j] and not lab[i, j]:
                n += 1
                lab[i, j] = n
                q = deque([(i, j)])
                while q:
                    a, b = q.popleft()
                    for di, dj in nb:
                        y, x = a + di, b + dj
                        if 0 <= y < h and 0 <= x < w and mask[y, x] and not lab[y, x]:
                            lab[y, x] = n
                            q.append((y, x))
    return lab, n


def otsu_bruteforce(img):
    """Lowest bin k maximizing between-class variance, computed from raw pixel lists."""
    b = np.floor(np.asarray(img, dtype=np.float64).ravel() * 255 + 0.5).astype(int)
    best, best_k = -1.0, None
    for k in range(1, 256):
        lo, hi = b[b < k], b[b >= k]
        if len(lo) == 0 or len(hi) == 0:
            continue
        w0, w1 = len(lo) / len(b), len(hi) / len(b)
        v = w0 * w1 * (lo.mean() - hi.mean()) ** 2
        if v > best * (1 + 1e-12) + 1e-300:
            best, best_k = v, k
    return best_k


def winding_inside(px, py, pts):
    """Nonzero winding test of one point against a closed polygon."""
    wn = 0
    n = len(pts)
    for i in range(n):
        x0, y0 = pts[i]
        x1, y1 = pts[(i + 1) % n]
        cross = (x1 - x0) * (py - y0) - (px - x0) * (y1 - y0)
        if y0 <= py < y1 and cross > 0:
            wn += 1
        elif y1 <= py < y0 and cross < 0:
            wn -= 1
    return wn != 0


def edge_distance(px, py, pts):
    """Distance from points to the nearest polygon edge, by projection per segment."""
    best = np.full(np.shape(px), np.inf)
    n = len(pts)
    for i in range(n):
        a, b = np.asarray(pts[i], float), np.asarray(pts[(i + 1) % n], float)
        ab = b - a
        t = np.clip(((px - a[0]) * ab[0] + (py - a[1]) * ab[1]) / (ab @ ab), 0, 1)
        best = np.minimum(best, np.hypot(px - a[0] - t * ab[0], py - a[1] - t * ab[1]))
    return best


def rasterize_oracle(pts, width, height):
    out = np.zeros((height, width), dtype=np.uint8)
    for i in range(height):
        for j in range(width):
            out[i, j] = winding_inside(j + 0.5, i + 0.5, pts)
    return out


def conv3x3_naive(x, W, b, relu=True):
    """x [N, H, W, C]; W [9*C, F] rows ordered (dy, dx, c); same padding."""
    N, H, Wd, C = x.shape
    F = W.shape[1]
    K = W.reshape(3, 3, C, F)
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    out = np.zeros((N, H, Wd, F))
    for n in range(N):
        for i in range(H):
            for j in range(Wd):
                patch = xp[n, i:i + 3, j:j + 3, :]
                out[n, i, j] = np.tensordot(patch, K, axes=([0, 1, 2], [0, 1, 2])) + b
    return np.maximum(out, 0) if relu else out


def lstm_naive(x, Wx, Wh, b, reverse=False, mask=None):
    """Step-by-step LSTM over [N, T, D]; gates ordered i, f, g, o."""
    N, T, _ = x.shape
    Hd = Wh.shape[0]
    h = np.zeros((N, Hd))
    c = np.zeros((N, Hd))
    out = np.zeros((N, T, Hd))
    sig = lambda v: 1 / (1 + np.exp(-v))  # noqa: E731
    order = range(T - 1, -1, -1) if reverse else range(T)
    for t in order:
        z = x[:, t] @ Wx + h @ Wh + b
        i, f, g, o = np.split(z, 4, axis=1)
        c_new = sig(f) * c + sig(i) * np.tanh(g)
        h_new = sig(o) * np.tanh(c_new)
        if mask is not None:
            m = mask[:, t]
            c_new = m * c_new + (1 - m) * c
            h_new = m * h_new + (1 - m) * h
        c, h = c_new, h_new
        out[:, t] = h
    return out


def crnn_naive(p, x, eps=1e-5):
    """Eval-mode recognizer forward for one image [H, W], written out loop by loop.

    ``p`` maps ``layer.param`` names (plus ``bnK.running_mean/var``) to arrays.
    """
    def bn(v, name):
        return (v - p[name + ".running_mean"]) / np.sqrt(p[name + ".running_var"] + eps) \
            * p[name + ".gamma"] + p[name + ".beta"]

    def pool(v):
        H, W, C = v.shape
        out = np.empty((H // 2, W // 2, C))
        for i in range(H // 2):
            for j in range(W // 2):
                for c in range(C):
                    out[i, j, c] = max(v[2 * i, 2 * j, c], v[2 * i, 2 * j + 1, c],
                                       v[2 * i + 1, 2 * j, c], v[2 * i + 1, 2 * j + 1, c])
        return out

    h = x[None, :, :, None]
    h = bn(pool(conv3x3_naive(h, p["conv1.W"], p["conv1.b"])[0]), "bn1")
    h = bn(pool(conv3x3_naive(h[None], p["conv2.W"], p["conv2.b"])[0]), "bn2")
    h = bn(conv3x3_naive(h[None], p["conv3.W"], p["conv3.b"])[0], "bn3")
    H4, W4, _ = h.shape
    # time step t reads column W4-1-t; features row by row, channels innermost
    seq = np.stack([h[:, W4 - 1 - t, :].ravel() for t in range(W4)])
    s = bn(np.maximum(seq @ p["dense1.W"] + p["dense1.b"], 0), "bn4")
    for name in ("bilstm1", "bilstm2"):
        f = lstm_naive(s[None], p[name + ".fwd.Wx"], p[name + ".fwd.Wh"], p[name + ".fwd.b"])[0]
        b = lstm_naive(s[None], p[name + ".bwd.Wx"], p[name + ".bwd.Wh"], p[name + ".bwd.b"],
                       reverse=True)[0]
        s = np.concatenate([f, b], axis=1)
    z = s @ p["out.W"] + p["out.b"]
    out = np.empty_like(z)
    for t in range(len(z)):
        m = z[t].max()
        out[t] = z[t] - m - np.log(np.sum(np.exp(z[t] - m)))
    return out
