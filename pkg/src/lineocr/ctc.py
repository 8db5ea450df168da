"""Connectionist temporal classification: loss, gradient and decoders.

Log-probability matrices are ``[T, C]`` with the blank as the last class.
"""
from __future__ import annotations

import numpy as np

# stands in for log(0); far below any reachable log mass
NEG_INF = -1e300


def _lse(*xs):
    out = xs[0]
    for x in xs[1:]:
        out = np.logaddexp(out, x)
    return np.maximum(out, NEG_INF)


def min_frames(labels):
    """Fewest frames that can emit ``labels`` (repeats need a blank between)."""
    labels = list(labels)
    repeats = sum(1 for a, b in zip(labels, labels[1:]) if a == b)
    return len(labels) + repeats


def ctc_loss(lp, labels, blank=None):
    """Negative log likelihood of ``labels`` and its gradient wrt ``lp``.

    Returns ``(nll, grad)`` where ``grad[t, c] = d nll / d lp[t, c]``.
    """
    lp = np.asarray(lp, dtype=np.float64)
    T, C = lp.shape
    blank = C - 1 if blank is None else blank
    labels = [int(c) for c in labels]
    if any(c == blank or c < 0 or c >= C for c in labels):
        raise ValueError("labels must be non-blank class indices")
    if T < min_frames(labels):
        raise ValueError("sequence too short for labels")

    ext = np.full(2 * len(labels) + 1, blank)
    ext[1::2] = labels
    S = len(ext)
    skip = np.zeros(S, dtype=bool)
    skip[3::2] = ext[3::2] != ext[1:-2:2]
    emit = lp[:, ext]

    alpha = np.full((T, S), NEG_INF)
    alpha[0, 0] = emit[0, 0]
    if S > 1:
        alpha[0, 1] = emit[0, 1]
    for t in range(1, T):
        prev = alpha[t - 1]
        a1 = np.full(S, NEG_INF)
        a1[1:] = prev[:-1]
        a2 = np.full(S, NEG_INF)
        a2[2:] = np.where(skip[2:], prev[:-2], NEG_INF)
        alpha[t] = _lse(prev, a1, a2) + emit[t]

    beta = np.full((T, S), NEG_INF)
    beta[T - 1, S - 1] = emit[T - 1, S - 1]
    if S > 1:
        beta[T - 1, S - 2] = emit[T - 1, S - 2]
    for t in range(T - 2, -1, -1):
        nxt = beta[t + 1]
        b1 = np.full(S, NEG_INF)
        b1[:-1] = nxt[1:]
        b2 = np.full(S, NEG_INF)
        b2[:-2] = np.where(skip[2:], nxt[2:], NEG_INF)
        beta[t] = _lse(nxt, b1, b2) + emit[t]

    log_p = alpha[T - 1, S - 1] if S == 1 else _lse(alpha[T - 1, S - 1], alpha[T - 1, S - 2])
    # occupancy of every (t, s) cell, merged per class
    occ = alpha + beta - emit
    grad = np.zeros((T, C))
    for c in np.unique(ext):
        sel = occ[:, ext == c]
        m = sel.max(axis=1, keepdims=True)
        grad[:, c] = -np.exp((m[:, 0] + np.log(np.exp(sel - m).sum(axis=1))) - log_p)
    return float(-log_p), grad


def ctc_batch_loss(log_probs, lengths, label_seqs):
    """Mean CTC loss over a padded batch and its gradient ``[N, T, C]``."""
    N = len(label_seqs)
    grad = np.zeros_like(log_probs)
    total = 0.0
    for n in range(N):
        nll, g = ctc_loss(log_probs[n, :lengths[n]], label_seqs[n])
        total += nll
        grad[n, :lengths[n]] = g
    return total / N, grad / N


def collapse(path, blank):
    out = []
    prev = None
    for c in path:
        if c != prev and c != blank:
            out.append(int(c))
        prev = c
    return out


def greedy_decode(lp, blank=None):
    """Best-path decoding: per-frame argmax, merge repeats, drop blanks."""
    lp = np.asarray(lp)
    blank = lp.shape[1] - 1 if blank is None else blank
    return collapse(lp.argmax(axis=1), blank)


def beam_decode(lp, beam_width=10, blank=None):
    """Prefix beam search scoring each prefix by its total alignment mass.

    Returns ``(labels, log_mass)`` of the best surviving prefix.  Ties are
    broken toward the lexicographically smaller prefix, both when pruning
    and when choosing the result.
    """
    if beam_width < 1:
        raise ValueError("beam_width must be >= 1")
    lp = np.asarray(lp, dtype=np.float64)
    T, C = lp.shape
    blank = C - 1 if blank is None else blank
    symbols = [c for c in range(C) if c != blank]
    # prefix -> [log mass ending in blank, log mass ending in a symbol]
    beams = {(): [0.0, NEG_INF]}
    for t in range(T):
        row = lp[t]
        nxt: dict[tuple, list] = {}

        def add(prefix, idx, val):
            cur = nxt.get(prefix)
            if cur is None:
                cur = nxt[prefix] = [NEG_INF, NEG_INF]
            cur[idx] = float(np.logaddexp(cur[idx], val))

        for prefix, (pb, pnb) in beams.items():
            total = np.logaddexp(pb, pnb)
            add(prefix, 0, total + row[blank])
            last = prefix[-1] if prefix else None
            for c in symbols:
                if c == last:
                    add(prefix, 1, pnb + row[c])
                    add(prefix + (c,), 1, pb + row[c])
                else:
                    add(prefix + (c,), 1, total + row[c])
        ranked = sorted(nxt.items(), key=lambda kv: (-np.logaddexp(*kv[1]), kv[0]))
        beams = dict(ranked[:beam_width])
    best, (pb, pnb) = min(beams.items(), key=lambda kv: (-np.logaddexp(*kv[1]), kv[0]))
    return list(best), float(np.logaddexp(pb, pnb))
