"""Layers with hand-written backward passes.

Every layer caches what its backward pass needs during ``forward`` and
consumes it in ``backward``.  Activations are float64 throughout.  Spatial
layers work channels-last (``[N, H, W, C]``); sequence layers work on
``[N, T, D]``.

Masks mark valid positions of right-padded-in-time / left-padded-in-space
batches.  They broadcast against the activation (``[N, H, W, 1]`` or
``[N, T, 1]``) and hold 0/1 values.
"""
from __future__ import annotations

import numpy as np


class Tensor:
    """Parameter array with an optional gradient buffer of the same shape."""

    __slots__ = ("data", "grad")

    def __init__(self, data):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    def accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad += g

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"


class Layer:
    """Base class: named parameters, frozen flag, train/eval mode."""

    kind = "layer"

    def __init__(self, name):
        self.name = name
        self.params: dict[str, Tensor] = {}
        self.frozen = False
        self.training = True
        self._cache = None

    def state(self) -> dict[str, np.ndarray]:
        """Non-trainable persistent arrays (e.g. running statistics)."""
        return {}

    def load_state(self, state):
        pass

    def _need_cache(self):
        if self._cache is None:
            raise RuntimeError(f"{self.name}: backward called without a preceding forward")
        return self._cache

    def _grad(self, key, g):
        if not self.frozen:
            self.params[key].accumulate(g)


def he_uniform(rng, fan_in, shape):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


def xavier_uniform(rng, fan_in, fan_out, shape):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def orthogonal(rng, rows, cols):
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    return q if rows >= cols else q.T


class Conv2D(Layer):
    """3x3 same-padded convolution, stride 1, optional fused ReLU."""

    kind = "conv"

    def __init__(self, name, in_ch, out_ch, rng, relu=True, ksize=3):
        super().__init__(name)
        self.in_ch, self.out_ch, self.k, self.relu = in_ch, out_ch, ksize, relu
        fan_in = in_ch * ksize * ksize
        self.params["W"] = Tensor(he_uniform(rng, fan_in, (fan_in, out_ch)))
        self.params["b"] = Tensor(np.zeros(out_ch))

    def _cols(self, xp, H, W):
        k = self.k
        return np.concatenate(
            [xp[:, i:i + H, j:j + W, :] for i in range(k) for j in range(k)], axis=-1
        )

    def forward(self, x):
        N, H, W, C = x.shape
        p = self.k // 2
        xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
        cols = self._cols(xp, H, W)
        out = cols @ self.params["W"].data + self.params["b"].data
        if self.relu:
            out = np.maximum(out, 0.0)
        self._cache = (cols, out, x.shape)
        return out

    def backward(self, dout):
        cols, out, xshape = self._need_cache()
        N, H, W, C = xshape
        if self.relu:
            dout = dout * (out > 0)
        F = self.out_ch
        if not self.frozen:
            self._grad("W", cols.reshape(-1, cols.shape[-1]).T @ dout.reshape(-1, F))
            self._grad("b", dout.sum(axis=(0, 1, 2)))
        dcols = dout @ self.params["W"].data.T
        k, p = self.k, self.k // 2
        dxp = np.zeros((N, H + 2 * p, W + 2 * p, C))
        idx = 0
        for i in range(k):
            for j in range(k):
                dxp[:, i:i + H, j:j + W, :] += dcols[..., idx * C:(idx + 1) * C]
                idx += 1
        return dxp[:, p:p + H, p:p + W, :]


class MaxPool2D(Layer):
    """2x2 max pooling, stride 2.  Ties route the gradient to the first max."""

    kind = "pool"

    def forward(self, x):
        N, H, W, C = x.shape
        if H % 2 or W % 2:
            raise ValueError(f"{self.name}: spatial size {H}x{W} not divisible by 2")
        win = x.reshape(N, H // 2, 2, W // 2, 2, C).transpose(0, 1, 3, 5, 2, 4)
        win = win.reshape(N, H // 2, W // 2, C, 4)
        arg = win.argmax(axis=-1)
        out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
        self._cache = (arg, x.shape)
        return out

    def backward(self, dout):
        arg, (N, H, W, C) = self._need_cache()
        dwin = np.zeros(dout.shape + (4,))
        np.put_along_axis(dwin, arg[..., None], dout[..., None], axis=-1)
        dwin = dwin.reshape(N, H // 2, W // 2, C, 2, 2).transpose(0, 1, 4, 2, 5, 3)
        return dwin.reshape(N, H, W, C)


class BatchNorm(Layer):
    """Batch normalization over the last axis.

    Statistics are taken over every other axis, restricted to positions where
    ``mask`` is 1.  A frozen layer always normalizes with its running
    statistics and never updates them.
    """

    kind = "batchnorm"

    def __init__(self, name, features, momentum=0.9, eps=1e-5):
        super().__init__(name)
        self.momentum, self.eps = momentum, eps
        self.params["gamma"] = Tensor(np.ones(features))
        self.params["beta"] = Tensor(np.zeros(features))
        self.running_mean = np.zeros(features)
        self.running_var = np.ones(features)

    def state(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def load_state(self, state):
        self.running_mean = np.array(state["running_mean"], dtype=np.float64)
        self.running_var = np.array(state["running_var"], dtype=np.float64)

    def forward(self, x, mask=None):
        gamma, beta = self.params["gamma"].data, self.params["beta"].data
        axes = tuple(range(x.ndim - 1))
        use_batch = self.training and not self.frozen
        if use_batch:
            if mask is None:
                m = None
                count = x.size // x.shape[-1]
                mean = x.mean(axis=axes)
                xc = x - mean
                var = (xc * xc).mean(axis=axes)
            else:
                m = np.broadcast_to(mask, x.shape[:-1] + (1,))
                count = float(m.sum())
                if count == 0:
                    raise ValueError(f"{self.name}: mask selects no positions")
                mean = (x * m).sum(axis=axes) / count
                xc = x - mean
                var = (xc * xc * m).sum(axis=axes) / count
            mom = self.momentum
            self.running_mean = mom * self.running_mean + (1 - mom) * mean
            self.running_var = mom * self.running_var + (1 - mom) * var
        else:
            m, count = None, None
            xc = x - self.running_mean
            var = self.running_var
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = xc * inv_std
        self._cache = (use_batch, xc, xhat, inv_std, m, count, axes)
        return gamma * xhat + beta

    def backward(self, dout):
        use_batch, xc, xhat, inv_std, m, count, axes = self._need_cache()
        gamma = self.params["gamma"].data
        if not self.frozen:
            self._grad("gamma", (dout * xhat).sum(axis=axes))
            self._grad("beta", dout.sum(axis=axes))
        dxhat = dout * gamma
        if not use_batch:
            return dxhat * inv_std
        # stats depend only on masked inputs, but every output depends on the stats
        dvar = (dxhat * xc).sum(axis=axes) * -0.5 * inv_std ** 3
        dmean = -dxhat.sum(axis=axes) * inv_std
        if m is None:
            dmean = dmean - dvar * 2.0 * xc.mean(axis=axes)
            return dxhat * inv_std + (dvar * 2.0 * xc + dmean) / count
        dmean = dmean - dvar * 2.0 * (xc * m).sum(axis=axes) / count
        return dxhat * inv_std + m * (dvar * 2.0 * xc + dmean) / count


class Dense(Layer):
    """Affine map over the last axis with optional ReLU."""

    kind = "dense"

    def __init__(self, name, in_dim, out_dim, rng, relu=False):
        super().__init__(name)
        self.relu = relu
        self.params["W"] = Tensor(he_uniform(rng, in_dim, (in_dim, out_dim)))
        self.params["b"] = Tensor(np.zeros(out_dim))

    def forward(self, x):
        out = x @ self.params["W"].data + self.params["b"].data
        if self.relu:
            out = np.maximum(out, 0.0)
        self._cache = (x, out)
        return out

    def backward(self, dout):
        x, out = self._need_cache()
        if self.relu:
            dout = dout * (out > 0)
        d_in = x.shape[-1]
        if not self.frozen:
            self._grad("W", x.reshape(-1, d_in).T @ dout.reshape(-1, dout.shape[-1]))
            self._grad("b", dout.reshape(-1, dout.shape[-1]).sum(axis=0))
        return dout @ self.params["W"].data.T


class LSTM(Layer):
    """Single-direction LSTM returning the full hidden sequence.

    Gate order in the fused weights is input, forget, cell, output.  With
    ``reverse=True`` the sequence is consumed from the last step to the first
    and outputs stay aligned with their input positions.  Masked steps carry
    the previous state through unchanged.
    """

    kind = "lstm"

    def __init__(self, name, in_dim, hidden, rng, reverse=False):
        super().__init__(name)
        self.hidden, self.reverse = hidden, reverse
        self.params["Wx"] = Tensor(xavier_uniform(rng, in_dim, 4 * hidden, (in_dim, 4 * hidden)))
        self.params["Wh"] = Tensor(np.concatenate([orthogonal(rng, hidden, hidden) for _ in range(4)], axis=1))
        b = np.zeros(4 * hidden)
        b[hidden:2 * hidden] = 1.0
        self.params["b"] = Tensor(b)

    def forward(self, x, mask=None):
        N, T, _ = x.shape
        Hd = self.hidden
        Wh = self.params["Wh"].data
        xw = x @ self.params["Wx"].data + self.params["b"].data
        hs = np.zeros((N, T, Hd))
        cs = np.zeros((N, T, Hd))
        gates = np.zeros((N, T, 4 * Hd))
        h_prev_all = np.zeros((N, T, Hd))
        c_prev_all = np.zeros((N, T, Hd))
        h = np.zeros((N, Hd))
        c = np.zeros((N, Hd))
        # sigmoid(z) = 0.5 tanh(z/2) + 0.5 on the i, f, o blocks; plain tanh on g
        scale = np.full(4 * Hd, 0.5)
        scale[2 * Hd:3 * Hd] = 1.0
        sig = np.ones(4 * Hd, dtype=bool)
        sig[2 * Hd:3 * Hd] = False
        order = range(T - 1, -1, -1) if self.reverse else range(T)
        for t in order:
            h_prev_all[:, t], c_prev_all[:, t] = h, c
            z = xw[:, t] + h @ Wh
            a = np.tanh(z * scale)
            a[:, sig] = 0.5 * a[:, sig] + 0.5
            gates[:, t] = a
            i, f, g, o = a[:, :Hd], a[:, Hd:2 * Hd], a[:, 2 * Hd:3 * Hd], a[:, 3 * Hd:]
            c_new = f * c + i * g
            h_new = o * np.tanh(c_new)
            if mask is not None:
                mt = mask[:, t]
                c_new = mt * c_new + (1 - mt) * c
                h_new = mt * h_new + (1 - mt) * h
            h, c = h_new, c_new
            hs[:, t], cs[:, t] = h, c
        self._cache = (x, gates, cs, h_prev_all, c_prev_all, mask)
        return hs

    def backward(self, dout):
        x, gates, cs, h_prev_all, c_prev_all, mask = self._need_cache()
        N, T, D = x.shape
        Hd = self.hidden
        Wh = self.params["Wh"].data
        dz_all = np.zeros((N, T, 4 * Hd))
        dh = np.zeros((N, Hd))
        dc = np.zeros((N, Hd))
        order = range(T) if self.reverse else range(T - 1, -1, -1)
        for t in order:
            dh = dh + dout[:, t]
            i, f, g, o = (gates[:, t, k * Hd:(k + 1) * Hd] for k in range(4))
            c_prev = c_prev_all[:, t]
            c_raw = f * c_prev + i * g
            tc = np.tanh(c_raw)
            if mask is not None:
                mt = mask[:, t]
                dh_cell, dc_cell = dh * mt, dc * mt
                dh_pass, dc_pass = dh * (1 - mt), dc * (1 - mt)
            else:
                dh_cell, dc_cell = dh, dc
                dh_pass = dc_pass = 0.0
            dc_tot = dc_cell + dh_cell * o * (1 - tc * tc)
            dz = np.concatenate([
                dc_tot * g * i * (1 - i),
                dc_tot * c_prev * f * (1 - f),
                dc_tot * i * (1 - g * g),
                dh_cell * tc * o * (1 - o),
            ], axis=1)
            dz_all[:, t] = dz
            dh = dz @ Wh.T + dh_pass
            dc = dc_tot * f + dc_pass
        if not self.frozen:
            dz2 = dz_all.reshape(-1, 4 * Hd)
            self._grad("Wx", x.reshape(-1, D).T @ dz2)
            self._grad("Wh", h_prev_all.reshape(-1, Hd).T @ dz2)
            self._grad("b", dz2.sum(axis=0))
        return dz_all @ self.params["Wx"].data.T


class BiLSTM(Layer):
    """Forward and backward LSTMs with concatenated outputs (2 * hidden wide)."""

    kind = "bilstm"

    def __init__(self, name, in_dim, hidden, rng):
        super().__init__(name)
        self.hidden = hidden
        self.fwd = LSTM(name + ".fwd", in_dim, hidden, rng)
        self.bwd = LSTM(name + ".bwd", in_dim, hidden, rng, reverse=True)
        self.params = {
            **{"fwd." + k: v for k, v in self.fwd.params.items()},
            **{"bwd." + k: v for k, v in self.bwd.params.items()},
        }

    @property
    def frozen(self):
        return self._frozen

    @frozen.setter
    def frozen(self, value):
        self._frozen = value
        for sub in ("fwd", "bwd"):
            if hasattr(self, sub):
                getattr(self, sub).frozen = value

    def forward(self, x, mask=None):
        self._cache = True
        return np.concatenate([self.fwd.forward(x, mask), self.bwd.forward(x, mask)], axis=-1)

    def backward(self, dout):
        self._need_cache()
        Hd = self.hidden
        return self.fwd.backward(dout[..., :Hd]) + self.bwd.backward(dout[..., Hd:])


class LogSoftmax(Layer):
    kind = "logsoftmax"

    def forward(self, x):
        shift = x - x.max(axis=-1, keepdims=True)
        out = shift - np.log(np.exp(shift).sum(axis=-1, keepdims=True))
        self._cache = out
        return out

    def backward(self, dout):
        out = self._need_cache()
        return dout - np.exp(out) * dout.sum(axis=-1, keepdims=True)
