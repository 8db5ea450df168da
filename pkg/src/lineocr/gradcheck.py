"""Finite-difference verification of every hand-written backward pass.

Each check builds a small random instance, reduces the op output to a scalar
with a fixed random projection, and compares analytic gradients (inputs and
parameters) with central differences.  The error for one tensor is
``||analytic - numeric|| / max(||analytic||, ||numeric||)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ctc, dbpost
from .nn import layers as L
from .nn.asf import ASFBlock
from .nn.model import CRNN, ModelSpec

H_STEP = 1e-5
TOLERANCE = 1e-5


def rel_error(a, n):
    a, n = np.ravel(a), np.ravel(n)
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    return 0.0 if scale == 0 else float(np.linalg.norm(a - n) / scale)


def numeric_grad(f, x, h=H_STEP):
    """Central differences of scalar ``f()`` wrt array ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return g


@dataclass
class CheckResult:
    name: str
    seed: int
    worst: float
    per_tensor: dict

    @property
    def passed(self):
        return self.worst < TOLERANCE


def compare(name, seed, analytic: dict, numeric: dict) -> CheckResult:
    errs = {k: rel_error(analytic[k], numeric[k]) for k in numeric}
    return CheckResult(name, seed, max(errs.values()), errs)


def _layer_check(name, seed, layer, inputs, call, project_shape_of=None):
    """Generic check: ``call(layer, inputs) -> output``; ``inputs`` is a dict of arrays.

    ``layer.backward(dout)`` must return the gradient of the first input.
    """
    rng = np.random.default_rng(seed + 1000)
    out = call(layer, inputs)
    proj = rng.standard_normal(out.shape)

    def f():
        return float((call(layer, inputs) * proj).sum())

    for t in layer.params.values():
        t.zero_grad()
    call(layer, inputs)
    first = next(iter(inputs))
    d_in = layer.backward(proj)
    analytic = {first: d_in}
    analytic.update({k: t.grad for k, t in layer.params.items()})
    numeric = {first: numeric_grad(f, inputs[first])}
    numeric.update({k: numeric_grad(f, t.data) for k, t in layer.params.items()})
    return compare(name, seed, analytic, numeric)


def check_conv(seed):
    rng = np.random.default_rng(seed)
    layer = L.Conv2D("conv", 3, 4, rng)
    layer.params["b"].data[:] = rng.standard_normal(4) * 0.1
    x = rng.standard_normal((2, 4, 5, 3))
    return _layer_check("conv", seed, layer, {"x": x}, lambda ly, d: ly.forward(d["x"]))


def check_pool(seed):
    rng = np.random.default_rng(seed)
    layer = L.MaxPool2D("pool")
    x = rng.standard_normal((2, 4, 6, 3))
    return _layer_check("pool", seed, layer, {"x": x}, lambda ly, d: ly.forward(d["x"]))


def check_batchnorm(seed):
    rng = np.random.default_rng(seed)
    layer = L.BatchNorm("bn", 3)
    layer.params["gamma"].data[:] = rng.uniform(0.5, 1.5, 3)
    layer.params["beta"].data[:] = rng.standard_normal(3)
    x = rng.standard_normal((2, 3, 4, 3)) * 2 + 1
    return _layer_check("batchnorm", seed, layer, {"x": x}, lambda ly, d: ly.forward(d["x"]))


def check_batchnorm_masked(seed):
    rng = np.random.default_rng(seed)
    layer = L.BatchNorm("bn", 4)
    layer.params["gamma"].data[:] = rng.uniform(0.5, 1.5, 4)
    x = rng.standard_normal((3, 5, 4))
    mask = (np.arange(5)[None, :] < np.array([5, 3, 2])[:, None]).astype(float)[..., None]
    return _layer_check("batchnorm_masked", seed, layer, {"x": x},
                        lambda ly, d: ly.forward(d["x"], mask))


def check_dense(seed):
    rng = np.random.default_rng(seed)
    layer = L.Dense("dense", 5, 4, rng, relu=True)
    layer.params["b"].data[:] = rng.standard_normal(4) * 0.1
    x = rng.standard_normal((2, 3, 5))
    return _layer_check("dense", seed, layer, {"x": x}, lambda ly, d: ly.forward(d["x"]))


def check_lstm(seed):
    rng = np.random.default_rng(seed)
    layer = L.LSTM("lstm", 3, 4, rng, reverse=bool(seed % 2))
    x = rng.standard_normal((2, 5, 3))
    mask = (np.arange(5)[None, :] < np.array([5, 3])[:, None]).astype(float)[..., None]
    return _layer_check("lstm_cell", seed, layer, {"x": x}, lambda ly, d: ly.forward(d["x"], mask))


def check_bilstm(seed):
    rng = np.random.default_rng(seed)
    layer = L.BiLSTM("bilstm", 3, 3, rng)
    x = rng.standard_normal((2, 4, 3))
    return _layer_check("bilstm", seed, layer, {"x": x}, lambda ly, d: ly.forward(d["x"]))


def check_logsoftmax(seed):
    rng = np.random.default_rng(seed)
    layer = L.LogSoftmax("logsoftmax")
    x = rng.standard_normal((2, 3, 5)) * 3
    return _layer_check("logsoftmax", seed, layer, {"x": x}, lambda ly, d: ly.forward(d["x"]))


def check_asf(seed):
    rng = np.random.default_rng(seed)
    block = ASFBlock("asf", 3, 2, rng)
    block.params["b"].data[:] = rng.standard_normal(3)
    feats = [rng.standard_normal((2, 2, 3, 4)) for _ in range(3)]
    proj = np.random.default_rng(seed + 1000).standard_normal((2, 2, 3, 4))

    def f():
        return float((block.forward(feats) * proj).sum())

    for t in block.params.values():
        t.zero_grad()
    block.forward(feats)
    d_in = block.backward(proj)
    analytic = {f"feature{s}": d_in[s] for s in range(3)}
    analytic.update({k: t.grad for k, t in block.params.items()})
    numeric = {f"feature{s}": numeric_grad(f, feats[s]) for s in range(3)}
    numeric.update({k: numeric_grad(f, t.data) for k, t in block.params.items()})
    return compare("asf", seed, analytic, numeric)


def check_approx_binary(seed):
    rng = np.random.default_rng(seed)
    P = rng.uniform(0, 1, (4, 5))
    T = rng.uniform(0, 1, (4, 5))
    k = 50.0
    proj = np.random.default_rng(seed + 1000).standard_normal((4, 5))
    dP, dT = dbpost.approx_binary_map_grad(P, T, k)

    def f():
        return float((dbpost.approx_binary_map(P, T, k) * proj).sum())

    analytic = {"P": dP * proj, "T": dT * proj}
    numeric = {"P": numeric_grad(f, P), "T": numeric_grad(f, T)}
    return compare("approx_binary_map", seed, analytic, numeric)


def check_ctc(seed):
    rng = np.random.default_rng(seed)
    T, C = 6, 4
    z = rng.standard_normal((T, C))
    lp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    labels = list(rng.integers(0, C - 1, size=3))
    while ctc.min_frames(labels) > T:
        labels = labels[:-1]
    _, g = ctc.ctc_loss(lp, labels)
    num = numeric_grad(lambda: ctc.ctc_loss(lp, labels)[0], lp)
    return compare("ctc", seed, {"log_probs": g}, {"log_probs": num})


def check_model(seed):
    """End-to-end: a tiny padded batch through the whole recognizer."""
    spec = ModelSpec(num_classes=4, height=8, width_div=8)
    model = CRNN(spec, seed=seed)
    rng = np.random.default_rng(seed)
    for _, t in model.named_params():
        if t.data.ndim == 1 and not np.any(t.data):
            t.data[:] = rng.standard_normal(t.data.shape) * 0.1
    x = rng.uniform(0, 1, (2, 1, 8, 16))
    widths = np.array([16, 12])
    x[1, :, :, :4] = 0.0
    proj = np.random.default_rng(seed + 1000).standard_normal((2, 4, 4))
    proj[1, 3:] = 0.0

    def f():
        out, _ = model.forward(x, widths)
        return float((out * proj).sum())

    model.zero_grad()
    model.forward(x, widths)
    model.backward(proj)
    params = dict(model.named_params())
    analytic, numeric = {}, {}
    # a fixed sample of coordinates per tensor keeps the check fast; the larger
    # step keeps roundoff below the tolerance for tiny recurrent gradients
    h = 1e-4
    for name, t in params.items():
        flat = t.data.reshape(-1)
        idx = rng.choice(flat.size, size=min(6, flat.size), replace=False)
        num = np.empty(len(idx))
        for k, i in enumerate(idx):
            old = flat[i]
            flat[i] = old + h
            fp = f()
            flat[i] = old - h
            fm = f()
            flat[i] = old
            num[k] = (fp - fm) / (2 * h)
        analytic[name] = t.grad.reshape(-1)[idx]
        numeric[name] = num
    return compare("model", seed, analytic, numeric)


CHECKS = {
    "conv": check_conv,
    "pool": check_pool,
    "batchnorm": check_batchnorm,
    "batchnorm_masked": check_batchnorm_masked,
    "dense": check_dense,
    "lstm_cell": check_lstm,
    "bilstm": check_bilstm,
    "logsoftmax": check_logsoftmax,
    "asf": check_asf,
    "approx_binary_map": check_approx_binary,
    "ctc": check_ctc,
    "model": check_model,
}


def run_checks(scope="all", seeds=(1, 2, 3, 4, 5)):
    """Return ``{name: [CheckResult per seed]}`` for ``scope`` (a name or ``"all"``)."""
    if scope == "all":
        names = list(CHECKS)
    elif scope in CHECKS:
        names = [scope]
    else:
        raise KeyError(f"unknown check {scope!r}; choose from {sorted(CHECKS)} or 'all'")
    return {n: [CHECKS[n](s) for s in seeds] for n in names}


def format_table(results):
    lines = [f"{'operation':<20} {'worst rel. error':>18}  status"]
    for name, rs in results.items():
        worst = max(r.worst for r in rs)
        lines.append(f"{name:<20} {worst:>18.3e}  {'pass' if worst < TOLERANCE else 'FAIL'}")
    return "\n".join(lines)
